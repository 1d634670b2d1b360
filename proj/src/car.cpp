#include "carrnn/car.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace carrnn {

namespace {

void check_layer(const CarLayer& layer, std::size_t m) {
  if (layer.phi.rows() != layer.phi.cols())
    throw DimensionError("CAR layer: drift matrix must be square");
  if (layer.phi.rows() != layer.sigma.size() || layer.sigma.size() != m) {
    std::ostringstream os;
    os << "CAR layer: size " << layer.sigma.size() << " does not match state size " << m;
    throw DimensionError(os.str());
  }
}

}  // namespace

CarLayer CarLayer::zeros(std::size_t m, double tau) { return {Matrix(m, m), Vector(m), tau}; }

Vector car_correct(const CarLayer& layer, const Vector& v_tilde, double delta_t) {
  check_layer(layer, v_tilde.size());
  if (!(delta_t > 0.0)) throw std::invalid_argument("car_correct: delta_t must be positive");
  const double d = delta_t - layer.tau;
  Vector out = v_tilde;
  if (d != 0.0) {
    Vector drift = matvec(layer.phi, v_tilde);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += d * (drift[i] + layer.sigma[i]);
  }
  require_finite(out, "car_correct");
  return out;
}

CarGradients car_correct_backward(const CarLayer& layer, const Vector& v_tilde, double delta_t,
                                  const Vector& d_out) {
  check_layer(layer, v_tilde.size());
  if (d_out.size() != v_tilde.size()) throw DimensionError("car_correct_backward: d_out size");
  const double d = delta_t - layer.tau;
  CarGradients g{d_out, Matrix(layer.phi.rows(), layer.phi.cols()), Vector(layer.sigma.size())};
  if (d != 0.0) {
    Vector back = matvec_transposed(layer.phi, d_out);
    for (std::size_t i = 0; i < back.size(); ++i) g.d_v_tilde[i] += d * back[i];
    add_outer(g.d_phi, d_out, v_tilde, d);
    for (std::size_t i = 0; i < d_out.size(); ++i) g.d_sigma[i] = d * d_out[i];
  }
  return g;
}

Matrix transition_matrix(const Matrix& phi, double delta_t, unsigned order) {
  if (phi.rows() != phi.cols()) throw DimensionError("transition_matrix: square matrix required");
  if (order < 1) throw std::invalid_argument("transition_matrix: order must be >= 1");
  const Matrix step = delta_t * phi;
  Matrix term = Matrix::identity(phi.rows());
  Matrix sum = term;
  for (unsigned p = 1; p <= order; ++p) {
    term = matmul(term, step);
    term *= 1.0 / static_cast<double>(p);
    sum += term;
  }
  return sum;
}

bool tau_within_gaps(double tau, std::span<const double> gaps) {
  if (gaps.empty()) return true;
  const auto [lo, hi] = std::minmax_element(gaps.begin(), gaps.end());
  return tau >= *lo && tau <= *hi;
}

UnivariateImputer UnivariateImputer::zeros(std::size_t n) { return {Vector(n), Vector(n)}; }

double impute_univariate(const UnivariateImputer& imp, std::size_t feature, double value_at_tj,
                         double t_j, double t_k) {
  if (feature >= imp.size()) throw DimensionError("impute_univariate: feature index out of range");
  const double gap = t_k - t_j;
  return (1.0 + gap * imp.phi_diag[feature]) * value_at_tj + gap * imp.zeta[feature];
}

}  // namespace carrnn
