#include "carrnn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace carrnn {

namespace {

class StageError : public std::runtime_error {
 public:
  StageError(std::string_view stage, const std::string& what)
      : std::runtime_error(std::string(stage) + ": " + what) {}
};

template <class F>
auto stage(std::string_view name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

Metrics metrics_or_empty(const Network& net, const std::vector<StepSequence>& data) {
  if (data.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan, 0};
  }
  return evaluate(net, data);
}

std::size_t input_width(std::size_t n_features, FillMode fill) {
  return fill == FillMode::NearestConcat ? n_features + 1 : n_features;
}

bool effective_impute(const ModelKind& kind, FillMode fill, bool impute) {
  return impute && kind.car && fill == FillMode::None;
}

struct PreparedSplits {
  PreparedSet train, val, test;
};

PreparedSplits prepare_all(const std::vector<SporadicSeries>& series, const Split& split,
                           const Standardizer& st, double tau_raw, FillMode fill, bool impute) {
  return {prepare_sequences(select(series, split.train), st, tau_raw, fill, impute),
          prepare_sequences(select(series, split.val), st, tau_raw, fill, impute),
          prepare_sequences(select(series, split.test), st, tau_raw, fill, impute)};
}

}  // namespace

Split split_subjects(std::size_t n, const SplitSpec& spec) {
  if (spec.test_fraction < 0.0 || spec.val_fraction < 0.0 ||
      spec.test_fraction + spec.val_fraction >= 1.0)
    throw std::invalid_argument("split: fractions must be non-negative and sum below 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::lround(spec.test_fraction * double(n)));
  const auto n_val = static_cast<std::size_t>(std::lround(spec.val_fraction * double(n)));
  if (n_test + n_val >= n)
    throw DataError("split: " + std::to_string(n) + " subjects leave no training data");
  Split out;
  out.test.assign(order.begin(), order.begin() + n_test);
  out.val.assign(order.begin() + n_test, order.begin() + n_test + n_val);
  out.train.assign(order.begin() + n_test + n_val, order.end());
  for (auto* part : {&out.train, &out.val, &out.test}) std::sort(part->begin(), part->end());
  return out;
}

std::vector<double> default_tau_grid(const std::vector<SporadicSeries>& series) {
  std::vector<double> gaps;
  for (const auto& s : series) {
    const auto times = s.distinct_times();
    for (std::size_t i = 1; i < times.size(); ++i) gaps.push_back(times[i] - times[i - 1]);
  }
  if (gaps.empty()) throw DataError("tau grid: no observation gaps in the training data");
  const double mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / double(gaps.size());
  const double iqr = quantile(gaps, 0.75) - quantile(gaps, 0.25);
  std::vector<double> grid{mean};
  if (iqr > 0.0 && iqr != mean) grid.push_back(iqr);
  std::sort(grid.begin(), grid.end());
  return grid;
}

std::vector<SporadicSeries> select(const std::vector<SporadicSeries>& all,
                                   const std::vector<std::size_t>& indices) {
  std::vector<SporadicSeries> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(all.at(i));
  return out;
}

PreparedSet prepare_sequences(const std::vector<SporadicSeries>& series,
                              const Standardizer& standardizer, double tau_raw, FillMode fill,
                              bool impute) {
  const double tau = standardizer.transform_time(tau_raw);
  const Vector fill_values(standardizer.features(), 0.0);
  PreparedSet out;
  for (const auto& raw : series) {
    try {
      const BinnedSequence binned =
          bin_series(standardizer.transform(raw), standardizer.features(), tau);
      out.sequences.push_back(make_step_sequence(binned, fill, impute, fill_values));
    } catch (const SequenceTooShort&) {
      out.skipped.push_back(raw.subject_id);
    }
  }
  return out;
}

TrainReport run_training(const RunConfig& cfg, const CsvDataset& data) {
  const std::size_t N = data.feature_names.size();
  if (N == 0) throw StageError("load", "dataset has no features");
  const Split split = stage("split", [&] { return split_subjects(data.series.size(), cfg.split); });
  const Standardizer st = stage("standardize", [&] {
    return fit_standardizer(select(data.series, split.train), N, data.feature_names);
  });
  const std::vector<double> grid = cfg.tau_grid.empty()
                                       ? stage("tau grid", [&] {
                                           return default_tau_grid(select(data.series, split.train));
                                         })
                                       : cfg.tau_grid;
  TrainConfig tc = cfg.train;
  tc.impute = effective_impute(tc.model, cfg.fill, tc.impute);

  std::vector<TrainResult> results;
  std::vector<TauCandidateResult> curve;
  const TauSearchResult search = tau_search(grid, [&](double tau_raw) {
    const PreparedSplits prepared = stage("bin", [&] {
      return prepare_all(data.series, split, st, tau_raw, cfg.fill, tc.impute);
    });
    if (prepared.train.sequences.empty())
      throw StageError("bin", "no training subject has two or more bins at tau " +
                                  format_double(tau_raw));
    TrainConfig trial = tc;
    trial.tau = st.transform_time(tau_raw);
    std::mt19937_64 rng(trial.seed);
    const Network init = init_params(trial, input_width(N, cfg.fill), N, rng);
    TrainResult r = stage("train", [&] {
      return train(init, prepared.train.sequences, prepared.val.sequences, trial);
    });
    const double val_mse = stage("evaluate", [&] {
      return evaluate(r.best, prepared.val.sequences.empty() ? prepared.train.sequences
                                                             : prepared.val.sequences)
          .mse;
    });
    curve.push_back({tau_raw, val_mse, r.history.size(), r.best_epoch});
    results.push_back(std::move(r));
    return val_mse;
  });

  TrainReport report;
  report.tau_curve = std::move(curve);
  report.chosen = search.best_index;
  TrainResult& best = results[search.best_index];
  report.history = best.history;

  Checkpoint& ck = report.checkpoint;
  ck.kind = tc.model;
  ck.fill = cfg.fill;
  ck.impute = tc.impute;
  ck.features = data.feature_names;
  ck.standardizer = st;
  ck.tau_raw = search.best_tau;
  ck.split = cfg.split;
  ck.net = std::move(best.best);

  const PreparedSplits prepared = stage("bin", [&] {
    return prepare_all(data.series, split, st, ck.tau_raw, ck.fill, ck.impute);
  });
  report.skipped = prepared.train.skipped.size() + prepared.val.skipped.size() +
                   prepared.test.skipped.size();
  report.metrics = stage("evaluate", [&] {
    return SplitMetrics{metrics_or_empty(ck.net, prepared.train.sequences),
                        metrics_or_empty(ck.net, prepared.val.sequences),
                        metrics_or_empty(ck.net, prepared.test.sequences)};
  });
  return report;
}

SplitMetrics run_eval(const Checkpoint& ckpt, const CsvDataset& data) {
  const CellShape shape = cell_shape(ckpt.net.cell);
  if (data.feature_names.size() != shape.outputs ||
      input_width(data.feature_names.size(), ckpt.fill) != shape.inputs)
    throw DimensionError("eval: checkpoint expects " + std::to_string(shape.outputs) +
                         " features, data has " + std::to_string(data.feature_names.size()));
  const Split split = stage("split", [&] { return split_subjects(data.series.size(), ckpt.split); });
  const PreparedSplits prepared = stage("bin", [&] {
    return prepare_all(data.series, split, ckpt.standardizer, ckpt.tau_raw, ckpt.fill,
                       ckpt.impute);
  });
  return stage("evaluate", [&] {
    return SplitMetrics{metrics_or_empty(ckpt.net, prepared.train.sequences),
                        metrics_or_empty(ckpt.net, prepared.val.sequences),
                        metrics_or_empty(ckpt.net, prepared.test.sequences)};
  });
}

PredictReport rollout(const Network& net, const StepSequence& seq, std::size_t n_context) {
  if (n_context < 1) throw std::invalid_argument("rollout: n_context must be at least 1");
  const CellShape shape = cell_shape(net.cell);
  if (seq.inputs.cols() != shape.inputs || seq.targets.cols() != shape.outputs)
    throw DimensionError("rollout: sequence width does not match the model");
  const Matrix observed = scaled_inputs(net, seq);
  CellState state = CellState::zeros(net.cell);
  PredictReport out;
  Vector y;
  for (std::size_t k = 0; k < seq.steps(); ++k) {
    Vector x(shape.inputs);
    if (k < n_context) {
      x = observed.row_vector(k);
    } else {
      for (std::size_t q = 0; q < shape.outputs; ++q) x[q] = y[q];
      // Baseline concat inputs keep their gap column.
      for (std::size_t c = shape.outputs; c < shape.inputs; ++c) x[c] = seq.inputs(k, c);
    }
    y = advance(net.cell, state, x, seq.delta_t[k]);
    const std::size_t horizon = k + 1 < n_context ? 1 : k + 2 - n_context;
    for (std::size_t q = 0; q < shape.outputs; ++q) {
      PredictionRow row{seq.subject_id, k + 1, seq.target_times[k], horizon, q, y[q], false, 0.0};
      if (seq.target_mask(k, q) != 0.0) {
        row.observed = true;
        row.actual = seq.targets(k, q);
      }
      out.rows.push_back(std::move(row));
    }
  }
  std::map<std::size_t, HorizonError> acc;
  for (const auto& r : out.rows) {
    if (!r.observed) continue;
    HorizonError& h = acc[r.horizon];
    h.horizon = r.horizon;
    const double e = r.predicted - r.actual;
    h.mae += std::abs(e);
    h.mse += e * e;
    ++h.cells;
  }
  for (auto& [_, h] : acc) {
    h.mae /= double(h.cells);
    h.mse /= double(h.cells);
    out.by_horizon.push_back(h);
  }
  return out;
}

PredictReport run_predict(const Checkpoint& ckpt, const CsvDataset& data, std::size_t n_context) {
  const CellShape shape = cell_shape(ckpt.net.cell);
  if (data.feature_names.size() != shape.outputs)
    throw DimensionError("predict: checkpoint expects " + std::to_string(shape.outputs) +
                         " features, data has " + std::to_string(data.feature_names.size()));
  const PreparedSet prepared = stage("bin", [&] {
    return prepare_sequences(data.series, ckpt.standardizer, ckpt.tau_raw, ckpt.fill, ckpt.impute);
  });
  PredictReport report;
  std::map<std::size_t, HorizonError> acc;
  for (const auto& seq : prepared.sequences) {
    PredictReport one = stage("predict", [&] { return rollout(ckpt.net, seq, n_context); });
    for (const auto& h : one.by_horizon) {
      HorizonError& a = acc[h.horizon];
      a.horizon = h.horizon;
      a.mae += h.mae * double(h.cells);
      a.mse += h.mse * double(h.cells);
      a.cells += h.cells;
    }
    for (auto& r : one.rows) {
      r.time *= ckpt.standardizer.time_iqr;
      r.predicted = ckpt.standardizer.destandardize(r.feature, r.predicted);
      if (r.observed) r.actual = ckpt.standardizer.destandardize(r.feature, r.actual);
      report.rows.push_back(std::move(r));
    }
  }
  for (auto& [_, a] : acc) {
    a.mae /= double(a.cells);
    a.mse /= double(a.cells);
    report.by_horizon.push_back(a);
  }
  return report;
}

std::string format_metrics_csv(const SplitMetrics& m) {
  std::ostringstream os;
  os << "split,mae,mse,cells\n";
  const std::pair<const char*, const Metrics*> rows[] = {
      {"train", &m.train}, {"val", &m.val}, {"test", &m.test}};
  for (const auto& [name, x] : rows)
    os << name << ',' << format_double(x->mae) << ',' << format_double(x->mse) << ',' << x->cells
       << '\n';
  return os.str();
}

std::string format_history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss\n";
  for (const auto& r : history)
    os << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss) << '\n';
  return os.str();
}

std::string format_tau_curve_csv(const std::vector<TauCandidateResult>& curve, std::size_t chosen) {
  std::ostringstream os;
  os << "tau,val_mse,epochs,best_epoch,chosen\n";
  for (std::size_t i = 0; i < curve.size(); ++i)
    os << format_double(curve[i].tau_raw) << ',' << format_double(curve[i].val_mse) << ','
       << curve[i].epochs << ',' << curve[i].best_epoch << ',' << (i == chosen ? 1 : 0) << '\n';
  return os.str();
}

std::string format_predictions_csv(const PredictReport& report,
                                   const std::vector<std::string>& feature_names) {
  std::ostringstream os;
  os << "subject_id,step,time,horizon,feature,predicted,actual\n";
  for (const auto& r : report.rows)
    os << r.subject_id << ',' << r.step << ',' << format_double(r.time) << ',' << r.horizon << ','
       << feature_names.at(r.feature) << ',' << format_double(r.predicted) << ','
       << (r.observed ? format_double(r.actual) : "") << '\n';
  return os.str();
}

std::string format_horizon_csv(const PredictReport& report) {
  std::ostringstream os;
  os << "horizon,cells,mae,mse\n";
  for (const auto& h : report.by_horizon)
    os << h.horizon << ',' << h.cells << ',' << format_double(h.mae) << ',' << format_double(h.mse)
       << '\n';
  return os.str();
}

std::string format_train_summary(const TrainReport& report) {
  std::ostringstream os;
  const Checkpoint& ck = report.checkpoint;
  const CellShape shape = cell_shape(ck.net.cell);
  os << "model " << ck.kind.name() << " fill=" << to_string(ck.fill)
     << " impute=" << (ck.impute ? "on" : "off") << " N=" << shape.outputs
     << " M=" << shape.hidden << '\n';
  for (std::size_t i = 0; i < report.tau_curve.size(); ++i) {
    const auto& c = report.tau_curve[i];
    os << "tau " << format_double(c.tau_raw) << " val_mse " << format_double(c.val_mse)
       << " epochs " << c.epochs << (i == report.chosen ? " (chosen)" : "") << '\n';
  }
  os << "chosen tau " << format_double(ck.tau_raw) << '\n';
  if (report.skipped) os << "skipped subjects " << report.skipped << '\n';
  const std::pair<const char*, const Metrics*> rows[] = {
      {"train", &report.metrics.train}, {"val", &report.metrics.val}, {"test", &report.metrics.test}};
  for (const auto& [name, m] : rows)
    os << name << " mae " << format_double(m->mae) << " mse " << format_double(m->mse) << " cells "
       << m->cells << '\n';
  return os.str();
}

SynthOutput run_synth(const ProcessSpec& spec) {
  SynthOutput out;
  out.data.series = generate_synthetic(spec);
  for (std::size_t n = 0; n < spec.features(); ++n)
    out.data.feature_names.push_back("x" + std::to_string(n + 1));
  const std::size_t N = spec.features();
  std::ostringstream os;
  os << "carrnn-truth 1\n";
  os << "meta n_subjects=" << spec.n_subjects << " seed=" << spec.seed << '\n';
  os << serialize_tensors({{"Phi", spec.drift.span(), N, N},
                           {"sigma", spec.bias.span(), N, 1},
                           {"Gamma", spec.diffusion_chol.span(), N, N}});
  os << "end\n";
  out.truth = os.str();
  return out;
}

}  // namespace carrnn
