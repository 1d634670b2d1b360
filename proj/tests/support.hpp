#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "carrnn/bptt.hpp"
#include "carrnn/train.hpp"

namespace carrnn::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 0.5) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Matrix m(r, c);
  for (double& x : m.span()) x = u(rng);
  return m;
}

inline Vector random_vector(std::size_t n, std::mt19937_64& rng, double scale = 0.5) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vector v(n);
  for (double& x : v.span()) x = u(rng);
  return v;
}

/// Every learnable entry drawn from U(±scale).
inline Network random_network(const CellShape& shape, double tau, std::mt19937_64& rng,
                              double scale = 0.5) {
  Network net{make_cell_params(shape, tau), UnivariateImputer::zeros(shape.outputs)};
  std::uniform_real_distribution<double> u(-scale, scale);
  for (TensorRef t : tensors(net))
    for (double& x : t.values) x = u(rng);
  return net;
}

/// T steps, irregular gaps, roughly `observed` of the cells available (at least one per row).
inline StepSequence random_sequence(std::size_t T, std::size_t N, std::mt19937_64& rng,
                                    double observed = 0.7) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0), gap(0.3, 1.7);
  StepSequence s;
  s.subject_id = "r";
  s.inputs = Matrix(T, N);
  s.input_mask = Matrix(T, N);
  s.targets = Matrix(T, N);
  s.target_mask = Matrix(T, N);
  double t = 0.0;
  for (std::size_t k = 0; k < T; ++k) {
    s.delta_t.push_back(gap(rng));
    t += s.delta_t.back();
    s.target_times.push_back(t);
    for (std::size_t n = 0; n < N; ++n) {
      s.inputs(k, n) = g(rng);
      s.targets(k, n) = g(rng);
      s.input_mask(k, n) = u(rng) < observed ? 1.0 : 0.0;
      s.target_mask(k, n) = u(rng) < observed ? 1.0 : 0.0;
    }
    s.input_mask(k, k % N) = 1.0;
    s.target_mask(k, (k + 1) % N) = 1.0;
  }
  return s;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace carrnn::testing
