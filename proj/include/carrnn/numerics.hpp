#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace carrnn {

/// Raised when operand shapes disagree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t len, double fill = 0.0) : data_(len, fill) {}
  Vector(std::initializer_list<double> values) : data_(values) {}
  explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void fill(double v);
  bool all_finite() const;

  Vector& operator+=(const Vector& other);
  Vector& operator-=(const Vector& other);
  Vector& operator*=(double s);

  friend bool operator==(const Vector&, const Vector&) = default;

 private:
  std::vector<double> data_;
};

Vector operator+(Vector a, const Vector& b);
Vector operator-(Vector a, const Vector& b);
Vector operator*(double s, Vector v);

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> row_major);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(const Vector& diag);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  Vector row_vector(std::size_t r) const;
  void set_row(std::size_t r, std::span<const double> values);

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void fill(double v);
  bool all_finite() const;
  Matrix transposed() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix m);
Matrix matmul(const Matrix& a, const Matrix& b);

double frobenius_norm(const Matrix& m);
double norm2(std::span<const double> v);

Vector matvec(const Matrix& a, const Vector& v);
/// Aᵀ·v without materializing the transpose.
Vector matvec_transposed(const Matrix& a, const Vector& v);
/// out += A·v
void matvec_accumulate(const Matrix& a, const Vector& v, Vector& out);
/// out += Aᵀ·v
void matvec_transposed_accumulate(const Matrix& a, const Vector& v, Vector& out);
/// a += scale · u·vᵀ
void add_outer(Matrix& a, const Vector& u, const Vector& v, double scale = 1.0);

Vector hadamard(const Vector& u, const Vector& v);

enum class Activation { Identity, Tanh, Sigmoid };

Vector activate(Activation kind, const Vector& v);
/// Derivative evaluated at the pre-activation argument.
Vector activate_deriv(Activation kind, const Vector& pre_activation);
double activate(Activation kind, double x);
double activate_deriv(Activation kind, double x);

std::string_view to_string(Activation kind);
Activation parse_activation(std::string_view name);

void require_finite(const Vector& v, std::string_view what);
void require_finite(const Matrix& m, std::string_view what);

}  // namespace carrnn
