#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "carrnn/bptt.hpp"

namespace carrnn {

/// car_rnn / car_lstm / car_gru, or the plain cell with the CAR layers frozen at zero.
struct ModelKind {
  CellType type = CellType::Gru;
  bool car = true;

  std::string name() const;
};

ModelKind parse_model_kind(std::string_view name);

struct TrainConfig {
  ModelKind model;
  double hidden_multiplier = 5.0;  // M = multiplier × N
  double tau = 1.0;                // normalized time units
  double learning_rate = 5e-3;
  double beta1 = 0.85;
  double beta2 = 0.95;
  double epsilon = 1e-8;
  double weight_decay = 5e-5;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double batch_fraction = 0.9;
  std::uint64_t seed = 0;
  bool peepholes = true;
  std::optional<double> clip_norm;
  Activation act_h = Activation::Identity;
  Activation act_c = Activation::Tanh;
  Activation act_g = Activation::Sigmoid;
  bool impute = true;  // univariate CAR imputer, CAR models only
  /// Tensor names excluded from updates, in addition to those implied by the model kind.
  std::set<std::string> frozen;

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
};

/// Tensors never updated for this configuration (CAR layers of plain cells, the imputer when
/// imputation is off, peepholes when disabled, plus `frozen`).
std::set<std::string> frozen_tensors(const TrainConfig& cfg);

/// Biases, Φ, ς and the imputer start at zero; W/U/V ~ U(±√(6/(fan_in+fan_out))).
Network init_params(const TrainConfig& cfg, std::size_t n_inputs, std::size_t n_outputs,
                    std::mt19937_64& rng);

struct AdamState {
  GradientSet m, v;
  std::size_t step = 0;

  static AdamState zeros_like(const Network& net);
};

/// Bias-corrected Adam with decoupled decay on W/U/V/Φ:
///   θ ← θ − lr·(m̂/(√v̂ + ε) + weight_decay·θ)
void adam_step(Network& params, const GradientSet& grads, AdamState& state, const TrainConfig& cfg,
               const std::set<std::string>& frozen = {});

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  Network best;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
};

/// Mini-batch Adam with per-epoch validation and early stopping on the validation loss.
/// An empty validation set falls back to the training loss.
TrainResult train(const Network& init, const std::vector<StepSequence>& train_set,
                  const std::vector<StepSequence>& val_set, const TrainConfig& cfg);

struct Metrics {
  double mae = 0.0;
  double mse = 0.0;
  std::size_t cells = 0;
};

/// MAE and MSE pooled over available target cells.
Metrics evaluate(const Network& net, const std::vector<StepSequence>& data);

struct TauTrial {
  double tau = 0.0;
  double val_mse = 0.0;
};

struct TauSearchResult {
  double best_tau = 0.0;
  std::size_t best_index = 0;
  std::vector<TauTrial> curve;
};

/// Runs `trial` for each candidate and keeps the lowest validation MSE; ties go to the
/// smaller τ.
TauSearchResult tau_search(const std::vector<double>& candidates,
                           const std::function<double(double tau)>& trial);

}  // namespace carrnn
