// Command-line front end: synth, train, eval, predict, gradcheck.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "carrnn/bptt.hpp"
#include "carrnn/checkpoint.hpp"
#include "carrnn/config.hpp"
#include "carrnn/pipeline.hpp"

namespace fs = std::filesystem;
using namespace carrnn;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

std::string metrics_lines(const SplitMetrics& m) {
  std::string out;
  const std::pair<const char*, const Metrics*> rows[] = {
      {"train", &m.train}, {"val", &m.val}, {"test", &m.test}};
  for (const auto& [name, x] : rows)
    out += std::string(name) + " mae " + format_double(x->mae) + " mse " + format_double(x->mse) +
           " cells " + std::to_string(x->cells) + "\n";
  return out;
}

struct Shared {
  std::optional<fs::path> data, config, model, out;
  std::optional<std::uint64_t> seed;
};

void add_shared(CLI::App* app, Shared& s) {
  app->add_option("--data", s.data, "Long-format CSV dataset");
  app->add_option("--config", s.config, "Flat key = value configuration file");
  app->add_option("--model", s.model, "Checkpoint path");
  app->add_option("--seed", s.seed, "Random seed");
  app->add_option("--out", s.out, "Output path");
}

template <class T>
T require(const std::optional<T>& v, const char* flag) {
  if (!v) throw CLI::RequiredError(flag);
  return *v;
}

int cmd_synth(const Shared& s) {
  ProcessSpec spec = load_process_spec(require(s.config, "--config"));
  if (s.seed) spec.seed = *s.seed;
  const fs::path out = require(s.out, "--out");
  const SynthOutput synth = run_synth(spec);
  write_file(out, format_csv(synth.data));
  write_file(fs::path(out.string() + ".truth"), synth.truth);
  std::cout << "wrote " << synth.data.series.size() << " subjects to " << out.string() << '\n';
  return 0;
}

int cmd_train(const Shared& s, const std::vector<Setting>& flags) {
  std::vector<Setting> overrides;
  if (s.data) overrides.emplace_back("data", s.data->string());
  if (s.out) overrides.emplace_back("out", s.out->string());
  if (s.seed) overrides.emplace_back("seed", std::to_string(*s.seed));
  overrides.insert(overrides.end(), flags.begin(), flags.end());
  const RunConfig cfg = load_run_config(s.config, overrides);
  if (!cfg.data) throw ConfigError("no dataset: pass --data or set 'data' in the config");
  const fs::path out = cfg.out.value_or("run");

  const CsvDataset data = read_csv(*cfg.data);
  const TrainReport report = run_training(cfg, data);
  const fs::path model = s.model.value_or(out / "model.ckpt");
  fs::create_directories(out);
  if (model.has_parent_path()) fs::create_directories(model.parent_path());
  save_checkpoint(report.checkpoint, model);
  const std::string summary = format_train_summary(report);
  write_file(out / "report.txt", summary);
  write_file(out / "metrics.csv", format_metrics_csv(report.metrics));
  write_file(out / "history.csv", format_history_csv(report.history));
  write_file(out / "tau_curve.csv", format_tau_curve_csv(report.tau_curve, report.chosen));
  std::cout << summary << "checkpoint " << model.string() << '\n';
  return 0;
}

int cmd_eval(const Shared& s) {
  const Checkpoint ckpt = load_checkpoint(require(s.model, "--model"));
  const CsvDataset data = read_csv(require(s.data, "--data"), ckpt.features);
  const SplitMetrics m = run_eval(ckpt, data);
  if (s.out) write_file(*s.out / "metrics.csv", format_metrics_csv(m));
  std::cout << metrics_lines(m);
  return 0;
}

int cmd_predict(const Shared& s, std::size_t n_context) {
  const Checkpoint ckpt = load_checkpoint(require(s.model, "--model"));
  const CsvDataset data = read_csv(require(s.data, "--data"), ckpt.features);
  const PredictReport report = run_predict(ckpt, data, n_context);
  const fs::path out = s.out.value_or("predict");
  write_file(out / "predictions.csv", format_predictions_csv(report, ckpt.features));
  write_file(out / "horizon.csv", format_horizon_csv(report));
  std::cout << format_horizon_csv(report);
  return 0;
}

int cmd_gradcheck(const Shared& s, const std::string& cell, std::size_t configs, double tolerance) {
  GradcheckOptions opts;
  if (cell != "all") opts.cells = {cell};
  for (const auto& c : opts.cells) {
    const ModelKind kind = parse_model_kind(c);
    if (!kind.car) throw std::invalid_argument("gradcheck expects a car_* cell or 'all'");
  }
  opts.configs = configs;
  opts.tolerance = tolerance;
  if (s.seed) opts.seed = *s.seed;
  const GradcheckReport report = gradcheck(opts);

  std::string csv = "variant,tensor,max_rel_error,max_abs_error,fd_norm,passed\n";
  for (const auto& e : report.entries) {
    char line[256];
    std::snprintf(line, sizeof line, "%-22s %-8s rel %.3e abs %.3e  %s\n", e.variant.c_str(),
                  e.tensor.c_str(), e.max_rel_error, e.max_abs_error, e.passed ? "ok" : "FAIL");
    std::cout << line;
    csv += e.variant + ',' + e.tensor + ',' + format_double(e.max_rel_error) + ',' +
           format_double(e.max_abs_error) + ',' + format_double(e.fd_norm) + ',' +
           (e.passed ? "1" : "0") + '\n';
  }
  if (s.out) write_file(*s.out, csv);
  char tail[128];
  std::snprintf(tail, sizeof tail, "%zu configurations, worst relative error %.3e\n",
                report.configurations, report.worst());
  std::cout << tail;
  if (!report.passed()) {
    for (const auto& e : report.entries)
      if (!e.passed) {
        std::cerr << "carrnn: error: gradcheck failed for " << e.variant << " " << e.tensor
                  << " (relative error " << format_double(e.max_rel_error) << ")\n";
        break;
      }
    return 1;
  }
  std::cout << "gradcheck passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time autoregressive recurrent networks for sporadic time series"};
  app.require_subcommand(1);
  Shared shared;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset from a CAR(1) process");
  add_shared(synth, shared);

  auto* train = app.add_subcommand("train", "Train a model and write checkpoint and reports");
  add_shared(train, shared);
  std::optional<std::string> cell, fill, tau, max_epochs;
  std::vector<std::string> sets;
  train->add_option("--cell", cell, "car_rnn, car_lstm, car_gru, rnn, lstm or gru");
  train->add_option("--fill", fill, "none, mean, forward or concat");
  train->add_option("--tau", tau, "Bin width(s), comma separated, or auto");
  train->add_option("--epochs", max_epochs, "Maximum epochs");
  train->add_option("--set", sets, "Extra key=value configuration override")->take_all();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on its stored split");
  add_shared(eval, shared);

  auto* predict = app.add_subcommand("predict", "Roll a checkpoint forward from a few visits");
  add_shared(predict, shared);
  std::size_t n_context = 1;
  predict->add_option("--context", n_context, "Number of observed input steps")->check(CLI::PositiveNumber);

  auto* grad = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  add_shared(grad, shared);
  std::string which = "all";
  std::size_t configs = 5;
  double tolerance = 1e-6;
  grad->add_option("cell", which, "car_rnn, car_lstm, car_gru or all");
  grad->add_option("--configs", configs, "Random configurations per variant");
  grad->add_option("--tolerance", tolerance, "Relative error tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return cmd_synth(shared);
    if (*train) {
      std::vector<Setting> flags;
      if (cell) flags.emplace_back("cell", *cell);
      if (fill) flags.emplace_back("fill", *fill);
      if (tau) flags.emplace_back("tau", *tau);
      if (max_epochs) flags.emplace_back("max_epochs", *max_epochs);
      for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        flags.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
      }
      return cmd_train(shared, flags);
    }
    if (*eval) return cmd_eval(shared);
    if (*predict) return cmd_predict(shared, n_context);
    if (*grad) return cmd_gradcheck(shared, which, configs, tolerance);
  } catch (const CLI::Error& e) {
    std::cerr << "carrnn: error: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "carrnn: error: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
