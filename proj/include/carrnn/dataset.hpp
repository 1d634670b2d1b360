#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "carrnn/numerics.hpp"

namespace carrnn {

/// Raised for malformed input files and invalid data records.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A subject with fewer than two usable time steps.
class SequenceTooShort : public DataError {
 public:
  using DataError::DataError;
};

struct Observation {
  double time = 0.0;
  std::size_t feature = 0;
  double value = 0.0;

  friend bool operator==(const Observation&, const Observation&) = default;
};

enum class Label { Stable, Converting };

/// One subject's raw, irregular and asynchronous observations.
struct SporadicSeries {
  std::string subject_id;
  std::vector<Observation> observations;
  std::optional<Label> label;

  std::vector<double> distinct_times() const;

  friend bool operator==(const SporadicSeries&, const SporadicSeries&) = default;
};

/// Throws DataError if the series breaks its invariants (negative times, fewer than two
/// distinct timestamps, duplicate (time, feature) pairs, feature index out of range).
void validate_series(const SporadicSeries& s, std::size_t n_features);

/// Observations aligned on a τ-wide grid. Empty bins are not emitted.
struct BinnedSequence {
  std::string subject_id;
  Matrix values;  // K×N, meaningful only where mask = 1
  Matrix mask;    // K×N, 1 = observed
  std::vector<double> rep_times;
  std::vector<double> delta_t;  // delta_t[0] = τ

  std::size_t steps() const { return rep_times.size(); }
  std::size_t features() const { return values.cols(); }
};

BinnedSequence bin_series(const SporadicSeries& s, std::size_t n_features, double tau);

/// Linear-interpolation (type 7) sample quantile of unsorted data.
double quantile(std::vector<double> data, double p);

struct Standardizer {
  Vector mean;
  Vector scale;  // population standard deviation
  double time_iqr = 1.0;

  std::size_t features() const { return mean.size(); }
  SporadicSeries transform(const SporadicSeries& s) const;
  double transform_time(double t) const { return t / time_iqr; }
  double standardize(std::size_t feature, double v) const;
  double destandardize(std::size_t feature, double z) const;
};

/// Fits on training observations only. `feature_names` is used for error messages.
Standardizer fit_standardizer(const std::vector<SporadicSeries>& train, std::size_t n_features,
                              const std::vector<std::string>& feature_names = {});

/// Parameters of a true CAR(1) process used to synthesize sporadic data.
struct ProcessSpec {
  std::size_t n_subjects = 100;
  Matrix drift;           // Φ, N×N, stable
  Vector bias;            // ς
  Matrix diffusion_chol;  // Γ, lower triangular
  Vector initial_mean;
  Matrix initial_cov;
  double arrival_rate = 1.0;  // mean inter-observation gap
  Vector missing_prob;        // per feature
  double horizon = 10.0;
  std::size_t min_visits = 2;
  std::uint64_t seed = 0;

  std::size_t features() const { return bias.size(); }
};

/// Shapes, stability of Φ and triangularity of Γ; throws DataError with an eigenvalue report.
void validate_process_spec(const ProcessSpec& spec);

/// Parses the flat `key = value` format. Matrices are rows separated by ';'.
ProcessSpec parse_process_spec(std::string_view text);
ProcessSpec load_process_spec(const std::filesystem::path& path);

/// Deterministic per (spec, subject index).
std::vector<SporadicSeries> generate_synthetic(const ProcessSpec& spec);

enum class FillMode { None, Mean, Forward, NearestConcat };

std::string_view to_string(FillMode mode);
FillMode parse_fill_mode(std::string_view name);

/// Baseline transforms: mask becomes all ones. Forward and NearestConcat carry the nearest earlier
/// observation (falling back to `fill_values`); NearestConcat also appends delta_t as a column.
/// `fill_values` holds the per-feature mean (zeros in standardized space).
BinnedSequence apply_baseline_fill(const BinnedSequence& seq, FillMode mode,
                                   const Vector& fill_values);

struct CsvDataset {
  std::vector<std::string> feature_names;
  std::vector<SporadicSeries> series;
};

/// Long format `subject_id,time,feature,value`. If `features` is given, names outside it are
/// rejected; otherwise features are indexed in order of first appearance.
CsvDataset read_csv(const std::filesystem::path& path,
                    const std::optional<std::vector<std::string>>& features = std::nullopt);
CsvDataset parse_csv(std::string_view text,
                     const std::optional<std::vector<std::string>>& features = std::nullopt);
void write_csv(const CsvDataset& data, const std::filesystem::path& path);
std::string format_csv(const CsvDataset& data);

/// 17 significant digits, enough for an exact double round trip.
std::string format_double(double v);

/// An input cell filled by the univariate CAR imputer from an earlier observation.
struct ImputedCell {
  std::size_t step = 0;
  std::size_t feature = 0;
  double source_value = 0.0;
  double gap = 0.0;  // t_k − t_j
};

/// Model-ready one-step-ahead sequence: input row k predicts the binned row k+1.
struct StepSequence {
  std::string subject_id;
  Matrix inputs;      // T×N_in, unscaled
  Matrix input_mask;  // T×N_in
  std::vector<double> delta_t;  // gap from input k to its target
  Matrix targets;               // T×Q
  Matrix target_mask;           // T×Q
  std::vector<double> target_times;
  std::vector<ImputedCell> imputed;

  std::size_t steps() const { return delta_t.size(); }
};

/// Builds inputs from rows 0..K−2 and targets from rows 1..K−1.
/// With `impute` (and FillMode::None), a missing input cell is carried from the feature's most
/// recent earlier observation; cells with no earlier observation stay masked.
StepSequence make_step_sequence(const BinnedSequence& seq, FillMode fill, bool impute,
                                const Vector& fill_values);

}  // namespace carrnn
