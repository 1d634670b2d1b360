#include "carrnn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace carrnn {

namespace {

void check_same(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    std::ostringstream os;
    os << op << ": dimension mismatch (" << a << " vs " << b << ")";
    throw DimensionError(os.str());
  }
}

void check_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream os;
    os << op << ": shape mismatch (" << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
       << b.cols() << ")";
    throw DimensionError(os.str());
  }
}

}  // namespace

void Vector::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Vector::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Vector& Vector::operator+=(const Vector& other) {
  check_same(size(), other.size(), "vector add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Vector& Vector::operator-=(const Vector& other) {
  check_same(size(), other.size(), "vector subtract");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Vector& Vector::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

Vector operator+(Vector a, const Vector& b) { return a += b; }
Vector operator-(Vector a, const Vector& b) { return a -= b; }
Vector operator*(double s, Vector v) { return v *= s; }

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> row_major)
    : rows_(rows), cols_(cols), data_(std::move(row_major)) {
  check_same(data_.size(), rows * cols, "matrix construction");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    check_same(r.size(), cols_, "matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(const Vector& diag) {
  Matrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

Vector Matrix::row_vector(std::size_t r) const {
  auto s = row(r);
  return Vector(std::vector<double>(s.begin(), s.end()));
}

void Matrix::set_row(std::size_t r, std::span<const double> values) {
  check_same(values.size(), cols_, "set_row");
  std::copy(values.begin(), values.end(), data_.begin() + static_cast<std::ptrdiff_t>(r * cols_));
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix& Matrix::operator+=(const Matrix& other) {
  check_shape(*this, other, "matrix add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  check_shape(*this, other, "matrix subtract");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(double s, Matrix m) { return m *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_same(a.cols(), b.rows(), "matmul");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

double frobenius_norm(const Matrix& m) { return norm2(m.span()); }

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

Vector matvec(const Matrix& a, const Vector& v) {
  Vector out(a.rows());
  matvec_accumulate(a, v, out);
  return out;
}

Vector matvec_transposed(const Matrix& a, const Vector& v) {
  Vector out(a.cols());
  matvec_transposed_accumulate(a, v, out);
  return out;
}

void matvec_accumulate(const Matrix& a, const Vector& v, Vector& out) {
  check_same(a.cols(), v.size(), "matvec");
  check_same(a.rows(), out.size(), "matvec output");
  const double* x = v.data();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* ar = a.data() + r * a.cols();
    double s = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) s += ar[c] * x[c];
    out[r] += s;
  }
}

void matvec_transposed_accumulate(const Matrix& a, const Vector& v, Vector& out) {
  check_same(a.rows(), v.size(), "matvec_transposed");
  check_same(a.cols(), out.size(), "matvec_transposed output");
  double* o = out.data();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double vr = v[r];
    if (vr == 0.0) continue;
    const double* ar = a.data() + r * a.cols();
    for (std::size_t c = 0; c < a.cols(); ++c) o[c] += ar[c] * vr;
  }
}

void add_outer(Matrix& a, const Vector& u, const Vector& v, double scale) {
  check_same(a.rows(), u.size(), "add_outer rows");
  check_same(a.cols(), v.size(), "add_outer cols");
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double ur = scale * u[r];
    if (ur == 0.0) continue;
    double* ar = a.data() + r * a.cols();
    for (std::size_t c = 0; c < a.cols(); ++c) ar[c] += ur * v[c];
  }
}

Vector hadamard(const Vector& u, const Vector& v) {
  check_same(u.size(), v.size(), "hadamard");
  Vector out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = u[i] * v[i];
  return out;
}

double activate(Activation kind, double x) {
  switch (kind) {
    case Activation::Identity:
      return x;
    case Activation::Tanh:
      return std::tanh(x);
    case Activation::Sigmoid:
      // split by sign so exp never overflows
      if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
      {
        const double e = std::exp(x);
        return e / (1.0 + e);
      }
  }
  return x;
}

double activate_deriv(Activation kind, double x) {
  switch (kind) {
    case Activation::Identity:
      return 1.0;
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::Sigmoid: {
      const double s = activate(Activation::Sigmoid, x);
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

Vector activate(Activation kind, const Vector& v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = activate(kind, v[i]);
  return out;
}

Vector activate_deriv(Activation kind, const Vector& pre_activation) {
  Vector out(pre_activation.size());
  for (std::size_t i = 0; i < pre_activation.size(); ++i)
    out[i] = activate_deriv(kind, pre_activation[i]);
  return out;
}

std::string_view to_string(Activation kind) {
  switch (kind) {
    case Activation::Identity:
      return "identity";
    case Activation::Tanh:
      return "tanh";
    case Activation::Sigmoid:
      return "sigmoid";
  }
  return "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::Identity;
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

void require_finite(const Vector& v, std::string_view what) {
  if (!v.all_finite()) throw NumericError(std::string(what) + ": non-finite value");
}

void require_finite(const Matrix& m, std::string_view what) {
  if (!m.all_finite()) throw NumericError(std::string(what) + ": non-finite value");
}

}  // namespace carrnn
