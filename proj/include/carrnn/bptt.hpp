#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "carrnn/car.hpp"
#include "carrnn/cells.hpp"
#include "carrnn/dataset.hpp"

namespace carrnn {

/// Everything that is learned: the recurrent cell and the univariate imputer.
struct Network {
  CellParams cell;
  UnivariateImputer imputer;
};

/// A value-for-value mirror of Network holding partial derivatives.
using GradientSet = Network;

std::vector<TensorRef> tensors(Network& net);
std::vector<ConstTensorRef> tensors(const Network& net);

/// Same shapes, activations and τ as `net`, every learnable entry zero.
GradientSet zeros_like(const Network& net);

/// a += scale·b over every tensor.
void accumulate(GradientSet& a, const GradientSet& b, double scale = 1.0);

/// Missing entries → 0, available entries × (#available / N).
Vector scale_inputs(const Vector& x, const Vector& mask);
double input_scale(std::span<const double> mask);

struct LossGradient {
  double loss = 0.0;
  Matrix dY;      // ∂L/∂Y
  Matrix dY_bar;  // ∂L/∂Ȳ (through σ_y)
};

/// L = (1/T)·Σ_k (1/a_k)·Σ_{q available} (y−s)², a_k the available targets at step k.
/// Equals (1/TQ)‖Y−S‖² with a full mask; its gradient is (2/TQ)(y−s)·(Q/a_k) at available
/// cells and exactly zero at missing ones. Steps with a_k = 0 contribute nothing.
LossGradient loss_and_output_grad(const Matrix& Y, const Matrix& S, const Matrix& target_mask,
                                  const Matrix* Y_bar = nullptr,
                                  Activation act_y = Activation::Identity);

struct CellBackward {
  CellParams grads;
  Matrix d_inputs;  // ∂L/∂(scaled input), T×N_in
};

CellBackward backward_rnn(const RnnParams& p, const ForwardCache& cache, const Matrix& dY_bar);
CellBackward backward_lstm(const LstmParams& p, const ForwardCache& cache, const Matrix& dY_bar);
CellBackward backward_gru(const GruParams& p, const ForwardCache& cache, const Matrix& dY_bar);
CellBackward backward_cell(const CellParams& p, const ForwardCache& cache, const Matrix& dY_bar);

/// Unscaled model inputs with imputed cells recomputed from the current imputer.
Matrix assemble_inputs(const Network& net, const StepSequence& seq);
/// assemble_inputs followed by scale_inputs on every row.
Matrix scaled_inputs(const Network& net, const StepSequence& seq);

SequenceOutput network_forward(const Network& net, const StepSequence& seq);
double sequence_loss(const Network& net, const StepSequence& seq);

struct SequenceGradient {
  double loss = 0.0;
  GradientSet grads;
  Matrix d_inputs;  // ∂L/∂(unscaled input)
};

SequenceGradient sequence_gradient(const Network& net, const StepSequence& seq);

/// Adds the gradient of every sequence into `acc` and returns the summed loss.
double accumulate_batch_gradient(const Network& net, const std::vector<const StepSequence*>& batch,
                                 GradientSet& acc);

/// Central difference (L(θ+h) − L(θ−h)) / 2h of the full masked loss for one coordinate.
/// A non-positive `h` selects 1e-5·max(1, |θ|).
double finite_difference(const Network& net, const StepSequence& seq, std::string_view tensor,
                         std::size_t index, double h = 0.0);

struct GradcheckEntry {
  std::string variant;  // e.g. "car_lstm/peep/tanh"
  std::string tensor;
  double max_rel_error = 0.0;   // ‖analytic − fd‖ / max(‖fd‖, 1e-8), worst configuration
  double max_abs_error = 0.0;   // worst single coordinate
  double fd_norm = 0.0;         // ‖fd‖ of the worst configuration
  bool passed = true;
};

struct GradcheckOptions {
  std::vector<std::string> cells{"car_rnn", "car_lstm", "car_gru"};
  std::size_t configs = 5;
  std::uint64_t seed = 1;
  double tolerance = 1e-6;
  /// Applied to analytic gradients before comparison (fault injection in tests).
  std::function<void(GradientSet&)> corrupt;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  std::size_t configurations = 0;
  bool passed() const;
  double worst() const;
};

GradcheckReport gradcheck(const GradcheckOptions& opts);

}  // namespace carrnn
