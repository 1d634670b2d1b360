#pragma once

#include <cstddef>
#include <span>

#include "carrnn/numerics.hpp"

namespace carrnn {

/// Time-gap correction  v = [I + (Δt−τ)Φ]·ṽ + (Δt−τ)ς  applied to a regularized state.
struct CarLayer {
  Matrix phi;
  Vector sigma;
  double tau = 1.0;

  static CarLayer zeros(std::size_t m, double tau);
  std::size_t size() const { return sigma.size(); }
};

Vector car_correct(const CarLayer& layer, const Vector& v_tilde, double delta_t);

struct CarGradients {
  Vector d_v_tilde;
  Matrix d_phi;
  Vector d_sigma;
};

CarGradients car_correct_backward(const CarLayer& layer, const Vector& v_tilde, double delta_t,
                                  const Vector& d_out);

/// Truncated power series Σ_{p=0..order} (ΦΔt)^p / p!.
Matrix transition_matrix(const Matrix& phi, double delta_t, unsigned order);

/// Whether τ lies within the observed gap range (the nominal step should).
bool tau_within_gaps(double tau, std::span<const double> gaps);

/// Per-feature CAR(1) used to carry observations across gaps.
struct UnivariateImputer {
  Vector phi_diag;
  Vector zeta;

  static UnivariateImputer zeros(std::size_t n);
  std::size_t size() const { return phi_diag.size(); }
};

/// Value of feature `feature` at t_k, carried from its observation at t_j.
/// A negative gap (t_k < t_j) extrapolates backwards from a later observation.
double impute_univariate(const UnivariateImputer& imp, std::size_t feature, double value_at_tj,
                         double t_j, double t_k);

}  // namespace carrnn
