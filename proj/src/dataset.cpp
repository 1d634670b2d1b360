#include "carrnn/dataset.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "text.hpp"

namespace carrnn {

namespace {

// Guards floor((t − t0)/τ) against values like 2.9999999999999996 on exact grids.
constexpr double kBinEdgeSlack = 1e-9;

using text::parse_double;
using text::split;
using text::trim;

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  return e;
}

Eigen::VectorXd to_eigen(const Vector& v) {
  Eigen::VectorXd e(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) e(i) = v[i];
  return e;
}

std::string feature_label(std::size_t n, const std::vector<std::string>& names) {
  std::string s = "feature " + std::to_string(n);
  if (n < names.size()) s += " ('" + names[n] + "')";
  return s;
}

}  // namespace

std::vector<double> SporadicSeries::distinct_times() const {
  std::vector<double> t;
  t.reserve(observations.size());
  for (const auto& o : observations) t.push_back(o.time);
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

void validate_series(const SporadicSeries& s, std::size_t n_features) {
  const std::string who = "subject '" + s.subject_id + "'";
  std::set<std::pair<double, std::size_t>> seen;
  for (const auto& o : s.observations) {
    if (!(o.time >= 0.0) || !std::isfinite(o.time))
      throw DataError(who + ": negative or non-finite time");
    if (!std::isfinite(o.value)) throw DataError(who + ": non-finite value");
    if (o.feature >= n_features) throw DataError(who + ": feature index out of range");
    if (!seen.emplace(o.time, o.feature).second)
      throw DataError(who + ": duplicate observation of feature " + std::to_string(o.feature) +
                      " at time " + format_double(o.time));
  }
  if (s.distinct_times().size() < 2) throw DataError(who + ": fewer than two distinct timestamps");
}

BinnedSequence bin_series(const SporadicSeries& s, std::size_t n_features, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("bin_series: tau must be positive");
  if (s.observations.empty()) throw SequenceTooShort("subject '" + s.subject_id + "': sequence too short");

  double t0 = s.observations.front().time;
  for (const auto& o : s.observations) t0 = std::min(t0, o.time);

  struct Bin {
    std::vector<double> sum, count;
    double time_sum = 0.0;
    std::size_t time_count = 0;
  };
  std::map<long long, Bin> bins;
  for (const auto& o : s.observations) {
    if (o.feature >= n_features) throw DataError("bin_series: feature index out of range");
    const auto idx = static_cast<long long>(std::floor((o.time - t0) / tau + kBinEdgeSlack));
    auto [it, inserted] = bins.try_emplace(idx);
    Bin& b = it->second;
    if (inserted) {
      b.sum.assign(n_features, 0.0);
      b.count.assign(n_features, 0.0);
    }
    b.sum[o.feature] += o.value;
    b.count[o.feature] += 1.0;
    b.time_sum += o.time;
    ++b.time_count;
  }
  if (bins.size() < 2) throw SequenceTooShort("subject '" + s.subject_id + "': sequence too short");

  BinnedSequence out;
  out.subject_id = s.subject_id;
  out.values = Matrix(bins.size(), n_features);
  out.mask = Matrix(bins.size(), n_features);
  std::size_t k = 0;
  for (const auto& [idx, b] : bins) {
    for (std::size_t n = 0; n < n_features; ++n) {
      if (b.count[n] > 0.0) {
        out.values(k, n) = b.sum[n] / b.count[n];
        out.mask(k, n) = 1.0;
      }
    }
    out.rep_times.push_back(b.time_sum / static_cast<double>(b.time_count));
    out.delta_t.push_back(k == 0 ? tau : out.rep_times[k] - out.rep_times[k - 1]);
    ++k;
  }
  return out;
}

double quantile(std::vector<double> data, double p) {
  if (data.empty()) throw std::invalid_argument("quantile of empty data");
  std::sort(data.begin(), data.end());
  const double h = (static_cast<double>(data.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, data.size() - 1);
  return data[lo] + (h - static_cast<double>(lo)) * (data[hi] - data[lo]);
}

double Standardizer::standardize(std::size_t feature, double v) const {
  return (v - mean[feature]) / scale[feature];
}

double Standardizer::destandardize(std::size_t feature, double z) const {
  return z * scale[feature] + mean[feature];
}

SporadicSeries Standardizer::transform(const SporadicSeries& s) const {
  SporadicSeries out = s;
  for (auto& o : out.observations) {
    if (o.feature >= features()) throw DataError("standardizer: feature index out of range");
    o.value = standardize(o.feature, o.value);
    o.time = transform_time(o.time);
  }
  return out;
}

Standardizer fit_standardizer(const std::vector<SporadicSeries>& train, std::size_t n_features,
                              const std::vector<std::string>& feature_names) {
  std::vector<double> sum(n_features, 0.0), count(n_features, 0.0);
  std::vector<double> times;
  for (const auto& s : train) {
    for (const auto& o : s.observations) {
      if (o.feature >= n_features) throw DataError("fit_standardizer: feature index out of range");
      sum[o.feature] += o.value;
      count[o.feature] += 1.0;
    }
    for (double t : s.distinct_times()) times.push_back(t);
  }
  Standardizer st;
  st.mean = Vector(n_features);
  st.scale = Vector(n_features);
  for (std::size_t n = 0; n < n_features; ++n) {
    if (count[n] == 0.0)
      throw DataError("fit_standardizer: " + feature_label(n, feature_names) + " is never observed");
    st.mean[n] = sum[n] / count[n];
  }
  std::vector<double> sq(n_features, 0.0);
  for (const auto& s : train)
    for (const auto& o : s.observations) {
      const double d = o.value - st.mean[o.feature];
      sq[o.feature] += d * d;
    }
  for (std::size_t n = 0; n < n_features; ++n) {
    st.scale[n] = std::sqrt(sq[n] / count[n]);
    if (!(st.scale[n] > 0.0))
      throw DataError("fit_standardizer: " + feature_label(n, feature_names) + " is constant");
  }
  if (times.empty()) throw DataError("fit_standardizer: no training timestamps");
  st.time_iqr = quantile(times, 0.75) - quantile(times, 0.25);
  if (!(st.time_iqr > 0.0)) throw DataError("fit_standardizer: timestamp IQR is zero");
  return st;
}

void validate_process_spec(const ProcessSpec& spec) {
  const std::size_t n = spec.features();
  if (n == 0) throw DataError("process spec: bias must have at least one entry");
  auto need_square = [n](const Matrix& m, const char* name) {
    if (m.rows() != n || m.cols() != n)
      throw DataError(std::string("process spec: ") + name + " must be " + std::to_string(n) +
                      "x" + std::to_string(n));
  };
  need_square(spec.drift, "drift");
  need_square(spec.diffusion_chol, "diffusion_chol");
  need_square(spec.initial_cov, "initial_cov");
  if (spec.initial_mean.size() != n) throw DataError("process spec: initial_mean size");
  if (spec.missing_prob.size() != n) throw DataError("process spec: missing_prob size");
  for (std::size_t i = 0; i < n; ++i) {
    if (spec.missing_prob[i] < 0.0 || spec.missing_prob[i] >= 1.0)
      throw DataError("process spec: missing_prob must lie in [0, 1)");
    if (spec.diffusion_chol(i, i) < 0.0)
      throw DataError("process spec: diffusion_chol diagonal must be non-negative");
    for (std::size_t j = i + 1; j < n; ++j)
      if (spec.diffusion_chol(i, j) != 0.0)
        throw DataError("process spec: diffusion_chol must be lower triangular");
  }
  if (!(spec.arrival_rate > 0.0)) throw DataError("process spec: arrival_rate must be positive");
  if (!(spec.horizon >= 0.0)) throw DataError("process spec: horizon must be non-negative");
  if (spec.min_visits < 2) throw DataError("process spec: min_visits must be at least 2");
  if (spec.n_subjects == 0) throw DataError("process spec: n_subjects must be positive");

  const Eigen::VectorXcd eig = to_eigen(spec.drift).eigenvalues();
  bool stable = true;
  for (Eigen::Index i = 0; i < eig.size(); ++i) stable = stable && eig(i).real() < 0.0;
  if (!stable) {
    std::ostringstream os;
    os << "process spec: drift is not stable, eigenvalues:";
    for (Eigen::Index i = 0; i < eig.size(); ++i)
      os << ' ' << format_double(eig(i).real()) << (eig(i).imag() < 0 ? "-" : "+")
         << format_double(std::abs(eig(i).imag())) << 'i';
    throw DataError(os.str());
  }
}

namespace {

Matrix parse_matrix_value(const std::string& key, const std::string& value) {
  std::vector<std::vector<double>> rows;
  for (std::string row_text : split(value, ';')) {
    std::replace(row_text.begin(), row_text.end(), ',', ' ');
    std::istringstream is(row_text);
    std::vector<double> row;
    std::string tok;
    while (is >> tok) {
      double v = 0.0;
      if (!parse_double(tok, v)) throw DataError("process spec: bad number in '" + key + "'");
      row.push_back(v);
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("process spec: empty value for '" + key + "'");
  const std::size_t cols = rows.front().size();
  std::vector<double> flat;
  for (const auto& r : rows) {
    if (r.size() != cols) throw DataError("process spec: ragged matrix '" + key + "'");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Matrix(rows.size(), cols, std::move(flat));
}

Vector parse_vector_value(const std::string& key, const std::string& value) {
  Matrix m = parse_matrix_value(key, value);
  if (m.rows() != 1) throw DataError("process spec: '" + key + "' must be a single row");
  return Vector(std::vector<double>(m.span().begin(), m.span().end()));
}

double parse_scalar_value(const std::string& key, const std::string& value) {
  double v = 0.0;
  if (!parse_double(value, v)) throw DataError("process spec: bad number for '" + key + "'");
  return v;
}

std::size_t parse_count_value(const std::string& key, const std::string& value) {
  const double v = parse_scalar_value(key, value);
  if (v < 0.0 || v != std::floor(v)) throw DataError("process spec: '" + key + "' must be a count");
  return static_cast<std::size_t>(v);
}

}  // namespace

ProcessSpec parse_process_spec(std::string_view text) {
  ProcessSpec spec;
  std::optional<Matrix> diffusion, init_cov;
  std::optional<Vector> init_mean, missing;
  std::optional<double> missing_scalar;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("process spec line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key == "n_subjects") {
      spec.n_subjects = parse_count_value(key, value);
    } else if (key == "drift") {
      spec.drift = parse_matrix_value(key, value);
    } else if (key == "bias") {
      spec.bias = parse_vector_value(key, value);
    } else if (key == "diffusion_chol") {
      diffusion = parse_matrix_value(key, value);
    } else if (key == "initial_mean") {
      init_mean = parse_vector_value(key, value);
    } else if (key == "initial_cov") {
      init_cov = parse_matrix_value(key, value);
    } else if (key == "arrival_rate") {
      spec.arrival_rate = parse_scalar_value(key, value);
    } else if (key == "missing_prob") {
      Vector v = parse_vector_value(key, value);
      if (v.size() == 1)
        missing_scalar = v[0];
      else
        missing = std::move(v);
    } else if (key == "horizon") {
      spec.horizon = parse_scalar_value(key, value);
    } else if (key == "min_visits") {
      spec.min_visits = parse_count_value(key, value);
    } else if (key == "seed") {
      spec.seed = parse_count_value(key, value);
    } else {
      throw DataError("process spec line " + std::to_string(line_no) + ": unknown key '" + key +
                      "'");
    }
  }
  const std::size_t n = spec.drift.rows();
  if (n == 0) throw DataError("process spec: 'drift' is required");
  if (spec.bias.empty()) spec.bias = Vector(n);
  spec.diffusion_chol = diffusion.value_or(Matrix(n, n));
  spec.initial_mean = init_mean.value_or(Vector(n));
  spec.initial_cov = init_cov.value_or(Matrix::identity(n));
  spec.missing_prob = missing ? *missing : Vector(n, missing_scalar.value_or(0.0));
  validate_process_spec(spec);
  return spec;
}

ProcessSpec load_process_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open process spec '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_process_spec(ss.str());
}

std::vector<SporadicSeries> generate_synthetic(const ProcessSpec& spec) {
  validate_process_spec(spec);
  const auto n = static_cast<Eigen::Index>(spec.features());
  const Eigen::MatrixXd phi = to_eigen(spec.drift);
  const Eigen::VectorXd bias = to_eigen(spec.bias);
  const Eigen::MatrixXd gamma = to_eigen(spec.diffusion_chol);
  const Eigen::VectorXd mu0 = to_eigen(spec.initial_mean);
  const bool has_bias = bias.cwiseAbs().maxCoeff() > 0.0;

  Eigen::FullPivLU<Eigen::MatrixXd> phi_lu(phi);
  if (has_bias && !phi_lu.isInvertible())
    throw DataError("process spec: drift is singular but bias is non-zero");

  // Symmetric square root of the initial covariance (tolerates semi-definite input).
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> cov_eig(to_eigen(spec.initial_cov));
  const Eigen::MatrixXd init_root = cov_eig.eigenvectors() *
                                    cov_eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                                    cov_eig.eigenvectors().transpose();

  const std::size_t width = std::to_string(spec.n_subjects).size();
  std::vector<SporadicSeries> out;
  out.reserve(spec.n_subjects);
  for (std::size_t subject = 0; subject < spec.n_subjects; ++subject) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed & 0xffffffffu),
                      static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(subject)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::exponential_distribution<double> gap_dist(1.0 / spec.arrival_rate);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<double> times{0.0};
    for (double t = gap_dist(rng); t <= spec.horizon || times.size() < spec.min_visits;
         t += gap_dist(rng))
      times.push_back(t);

    Eigen::VectorXd eps(n);
    for (Eigen::Index i = 0; i < n; ++i) eps(i) = normal(rng);
    Eigen::VectorXd x = mu0 + init_root * eps;

    std::string id = std::to_string(subject + 1);
    SporadicSeries s;
    s.subject_id = "s" + std::string(width - id.size(), '0') + id;
    for (std::size_t k = 0; k < times.size(); ++k) {
      if (k > 0) {
        const double dt = times[k] - times[k - 1];
        const Eigen::MatrixXd transition = (phi * dt).exp();
        Eigen::VectorXd next = transition * x;
        if (has_bias)
          next += phi_lu.solve((transition - Eigen::MatrixXd::Identity(n, n)) * bias);
        for (Eigen::Index i = 0; i < n; ++i) eps(i) = normal(rng);
        next += std::sqrt(dt) * (gamma * eps);
        x = next;
      }
      std::vector<bool> keep(static_cast<std::size_t>(n));
      bool any = false;
      for (std::size_t f = 0; f < keep.size(); ++f) {
        keep[f] = unit(rng) >= spec.missing_prob[f];
        any = any || keep[f];
      }
      if (!any) {
        // every timestamp keeps at least one value so visits are never lost
        std::uniform_int_distribution<std::size_t> pick(0, keep.size() - 1);
        keep[pick(rng)] = true;
      }
      for (std::size_t f = 0; f < keep.size(); ++f)
        if (keep[f]) s.observations.push_back({times[k], f, x(static_cast<Eigen::Index>(f))});
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string_view to_string(FillMode mode) {
  switch (mode) {
    case FillMode::None:
      return "none";
    case FillMode::Mean:
      return "mean";
    case FillMode::Forward:
      return "forward";
    case FillMode::NearestConcat:
      return "nearest_concat";
  }
  return "none";
}

FillMode parse_fill_mode(std::string_view name) {
  if (name == "none") return FillMode::None;
  if (name == "mean") return FillMode::Mean;
  if (name == "forward") return FillMode::Forward;
  if (name == "nearest_concat" || name == "concat") return FillMode::NearestConcat;
  throw std::invalid_argument("unknown fill mode '" + std::string(name) + "'");
}

BinnedSequence apply_baseline_fill(const BinnedSequence& seq, FillMode mode,
                                   const Vector& fill_values) {
  const std::size_t K = seq.steps();
  const std::size_t N = seq.features();
  if (fill_values.size() != N) throw DimensionError("apply_baseline_fill: fill_values size");
  if (mode == FillMode::None) return seq;

  BinnedSequence out = seq;
  const std::size_t cols = mode == FillMode::NearestConcat ? N + 1 : N;
  out.values = Matrix(K, cols);
  out.mask = Matrix(K, cols, 1.0);
  for (std::size_t n = 0; n < N; ++n) {
    std::optional<std::size_t> last;
    for (std::size_t k = 0; k < K; ++k) {
      const bool observed = seq.mask(k, n) != 0.0;
      double v = fill_values[n];
      if (observed) {
        v = seq.values(k, n);
        last = k;
      } else if ((mode == FillMode::Forward || mode == FillMode::NearestConcat) && last) {
        // Only earlier rows: a later neighbor is the next step's target.
        v = seq.values(*last, n);
      }
      out.values(k, n) = v;
    }
  }
  if (mode == FillMode::NearestConcat)
    for (std::size_t k = 0; k < K; ++k) out.values(k, N) = seq.delta_t[k];
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CsvDataset parse_csv(std::string_view text, const std::optional<std::vector<std::string>>& features) {
  CsvDataset data;
  std::unordered_map<std::string, std::size_t> feature_index;
  if (features) {
    data.feature_names = *features;
    for (std::size_t i = 0; i < features->size(); ++i) feature_index[(*features)[i]] = i;
  }
  std::unordered_map<std::string, std::size_t> subject_index;

  std::size_t line_no = 0;
  bool header_seen = false;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (!header_seen) {
      if (fields.size() != 4 || trim(fields[0]) != "subject_id" || trim(fields[1]) != "time" ||
          trim(fields[2]) != "feature" || trim(fields[3]) != "value")
        throw DataError("line " + std::to_string(line_no) +
                        ": expected header 'subject_id,time,feature,value'");
      header_seen = true;
      continue;
    }
    const std::string where = "line " + std::to_string(line_no);
    if (fields.size() != 4) throw DataError(where + ": expected 4 fields");
    const std::string subject = trim(fields[0]);
    if (subject.empty()) throw DataError(where + ": empty subject_id");
    Observation obs;
    if (!parse_double(fields[1], obs.time)) throw DataError(where + ": malformed time");
    if (!parse_double(fields[3], obs.value)) throw DataError(where + ": malformed value");
    const std::string feature = trim(fields[2]);
    if (feature.empty()) throw DataError(where + ": empty feature");
    auto fit = feature_index.find(feature);
    if (fit == feature_index.end()) {
      if (features) throw DataError(where + ": unknown feature '" + feature + "'");
      fit = feature_index.emplace(feature, data.feature_names.size()).first;
      data.feature_names.push_back(feature);
    }
    obs.feature = fit->second;
    auto sit = subject_index.find(subject);
    if (sit == subject_index.end()) {
      sit = subject_index.emplace(subject, data.series.size()).first;
      data.series.push_back(SporadicSeries{subject, {}, std::nullopt});
    }
    data.series[sit->second].observations.push_back(obs);
  }
  if (!header_seen) throw DataError("empty CSV: missing header");
  for (const auto& s : data.series) validate_series(s, data.feature_names.size());
  return data;
}

CsvDataset read_csv(const std::filesystem::path& path,
                    const std::optional<std::vector<std::string>>& features) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_csv(ss.str(), features);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string format_csv(const CsvDataset& data) {
  std::string out = "subject_id,time,feature,value\n";
  for (const auto& s : data.series) {
    for (const auto& o : s.observations) {
      if (o.feature >= data.feature_names.size())
        throw DataError("write_csv: feature index out of range");
      out += s.subject_id;
      out += ',';
      out += format_double(o.time);
      out += ',';
      out += data.feature_names[o.feature];
      out += ',';
      out += format_double(o.value);
      out += '\n';
    }
  }
  return out;
}

void write_csv(const CsvDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << format_csv(data);
}

StepSequence make_step_sequence(const BinnedSequence& seq, FillMode fill, bool impute,
                                const Vector& fill_values) {
  const std::size_t K = seq.steps();
  if (K < 2) throw SequenceTooShort("subject '" + seq.subject_id + "': sequence too short");
  const std::size_t Q = seq.features();
  const BinnedSequence in = apply_baseline_fill(seq, fill, fill_values);
  const std::size_t N_in = in.features();
  const std::size_t T = K - 1;

  StepSequence out;
  out.subject_id = seq.subject_id;
  out.inputs = Matrix(T, N_in);
  out.input_mask = Matrix(T, N_in);
  out.targets = Matrix(T, Q);
  out.target_mask = Matrix(T, Q);
  for (std::size_t k = 0; k < T; ++k) {
    out.delta_t.push_back(seq.rep_times[k + 1] - seq.rep_times[k]);
    out.target_times.push_back(seq.rep_times[k + 1]);
    for (std::size_t n = 0; n < N_in; ++n) {
      if (in.mask(k, n) != 0.0) {
        out.inputs(k, n) = in.values(k, n);
        out.input_mask(k, n) = 1.0;
      }
    }
    for (std::size_t q = 0; q < Q; ++q) {
      if (seq.mask(k + 1, q) != 0.0) {
        out.targets(k, q) = seq.values(k + 1, q);
        out.target_mask(k, q) = 1.0;
      }
    }
  }
  if (impute && fill == FillMode::None) {
    for (std::size_t n = 0; n < Q; ++n) {
      std::optional<std::size_t> last;
      for (std::size_t k = 0; k < T; ++k) {
        if (seq.mask(k, n) != 0.0) {
          last = k;
          continue;
        }
        if (!last) continue;
        const double source = seq.values(*last, n);
        out.imputed.push_back({k, n, source, seq.rep_times[k] - seq.rep_times[*last]});
        out.inputs(k, n) = source;
        out.input_mask(k, n) = 1.0;
      }
    }
  }
  return out;
}

}  // namespace carrnn
