#pragma once

#include <string>
#include <vector>

#include "carrnn/checkpoint.hpp"
#include "carrnn/config.hpp"
#include "carrnn/dataset.hpp"
#include "carrnn/train.hpp"

namespace carrnn {

/// Subject indices per partition, each sorted ascending.
struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle of 0..n−1; test and val sizes are rounded fractions of n. Needs a
/// non-empty training partition.
Split split_subjects(std::size_t n, const SplitSpec& spec);

/// Mean and IQR of consecutive distinct-time gaps, deduplicated, ascending. IQR is dropped when 0.
std::vector<double> default_tau_grid(const std::vector<SporadicSeries>& series);

/// Standardize → bin at `tau_raw` → fill/impute/mask. Subjects whose binned sequence has fewer
/// than two steps are skipped and counted.
struct PreparedSet {
  std::vector<StepSequence> sequences;
  std::vector<std::string> skipped;
};

PreparedSet prepare_sequences(const std::vector<SporadicSeries>& series,
                              const Standardizer& standardizer, double tau_raw, FillMode fill,
                              bool impute);

std::vector<SporadicSeries> select(const std::vector<SporadicSeries>& all,
                                   const std::vector<std::size_t>& indices);

struct SplitMetrics {
  Metrics train, val, test;
};

struct TauCandidateResult {
  double tau_raw = 0.0;
  double val_mse = 0.0;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
};

struct TrainReport {
  Checkpoint checkpoint;
  std::vector<EpochRecord> history;  // of the chosen τ
  std::vector<TauCandidateResult> tau_curve;
  std::size_t chosen = 0;
  SplitMetrics metrics;
  std::size_t skipped = 0;
};

/// Full training pipeline on an already loaded dataset. Errors carry the stage name.
TrainReport run_training(const RunConfig& cfg, const CsvDataset& data);

/// Re-derives the stored split and evaluates the checkpoint on each partition.
SplitMetrics run_eval(const Checkpoint& ckpt, const CsvDataset& data);

struct PredictionRow {
  std::string subject_id;
  std::size_t step = 0;  // index of the predicted binned row
  double time = 0.0;     // dataset time units
  std::size_t horizon = 0;
  std::size_t feature = 0;
  double predicted = 0.0;  // dataset units
  bool observed = false;
  double actual = 0.0;
};

struct HorizonError {
  std::size_t horizon = 0;
  std::size_t cells = 0;
  double mae = 0.0;  // standardized units
  double mse = 0.0;
};

struct PredictReport {
  std::vector<PredictionRow> rows;
  std::vector<HorizonError> by_horizon;
};

/// Consumes the first `n_context` binned rows, then feeds predictions back as inputs. Input row
/// k < n_context is observed data; the prediction of row k+1 has horizon max(1, k − n_context + 2).
PredictReport rollout(const Network& net, const StepSequence& seq, std::size_t n_context);

PredictReport run_predict(const Checkpoint& ckpt, const CsvDataset& data, std::size_t n_context);

/// Report writers (human text and CSV).
std::string format_metrics_csv(const SplitMetrics& m);
std::string format_history_csv(const std::vector<EpochRecord>& history);
std::string format_tau_curve_csv(const std::vector<TauCandidateResult>& curve, std::size_t chosen);
std::string format_predictions_csv(const PredictReport& report,
                                   const std::vector<std::string>& feature_names);
std::string format_horizon_csv(const PredictReport& report);
std::string format_train_summary(const TrainReport& report);

/// Synthetic data plus a sidecar holding the true Φ, ς and Γ.
struct SynthOutput {
  CsvDataset data;
  std::string truth;
};

SynthOutput run_synth(const ProcessSpec& spec);

}  // namespace carrnn
