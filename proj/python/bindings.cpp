#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "carrnn/bptt.hpp"
#include "carrnn/checkpoint.hpp"
#include "carrnn/config.hpp"
#include "carrnn/pipeline.hpp"

namespace py = pybind11;
using namespace carrnn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a, const char* name) {
  if (a.ndim() != 2) throw DimensionError(std::string(name) + " must be 2-D");
  const auto r = std::size_t(a.shape(0)), c = std::size_t(a.shape(1));
  return Matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

Vector to_vector(const Array& a, const char* name) {
  if (a.ndim() != 1) throw DimensionError(std::string(name) + " must be 1-D");
  return Vector(std::vector<double>(a.data(), a.data() + a.shape(0)));
}

Array from_matrix(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.span().begin(), m.span().end(), out.mutable_data());
  return out;
}

Array from_vector(std::span<const double> v) {
  Array out(v.size());
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["mae"] = m.mae;
  d["mse"] = m.mse;
  d["cells"] = m.cells;
  return d;
}

py::dict split_dict(const SplitMetrics& m) {
  py::dict d;
  d["train"] = metrics_dict(m.train);
  d["val"] = metrics_dict(m.val);
  d["test"] = metrics_dict(m.test);
  return d;
}

std::vector<Setting> to_settings(const std::map<std::string, std::string>& settings) {
  return {settings.begin(), settings.end()};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core: CAR layers, CAR-RNN/LSTM/GRU training and evaluation";
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.attr("CELLS") = std::vector<std::string>{"car_rnn", "car_lstm", "car_gru", "rnn", "lstm", "gru"};

  m.def(
      "car_correct",
      [](const Array& phi, const Array& sigma, double tau, const Array& v_tilde, double delta_t) {
        CarLayer layer{to_matrix(phi, "phi"), to_vector(sigma, "sigma"), tau};
        const Vector v = car_correct(layer, to_vector(v_tilde, "v_tilde"), delta_t);
        return from_vector(v.span());
      },
      py::arg("phi"), py::arg("sigma"), py::arg("tau"), py::arg("v_tilde"), py::arg("delta_t"),
      "[I + (dt - tau) phi] v_tilde + (dt - tau) sigma");

  m.def(
      "transition_matrix",
      [](const Array& phi, double delta_t, unsigned order) {
        return from_matrix(transition_matrix(to_matrix(phi, "phi"), delta_t, order));
      },
      py::arg("phi"), py::arg("delta_t"), py::arg("order") = 12);

  m.def(
      "bin_series",
      [](const std::vector<double>& times, const std::vector<std::size_t>& features,
         const std::vector<double>& values, std::size_t n_features, double tau) {
        if (times.size() != features.size() || times.size() != values.size())
          throw DimensionError("times, features and values must have equal length");
        SporadicSeries s{"s", {}, std::nullopt};
        for (std::size_t i = 0; i < times.size(); ++i)
          s.observations.push_back({times[i], features[i], values[i]});
        const BinnedSequence b = bin_series(s, n_features, tau);
        py::dict d;
        d["values"] = from_matrix(b.values);
        d["mask"] = from_matrix(b.mask);
        d["times"] = from_vector(b.rep_times);
        d["delta_t"] = from_vector(b.delta_t);
        return d;
      },
      py::arg("times"), py::arg("features"), py::arg("values"), py::arg("n_features"),
      py::arg("tau"));

  m.def(
      "synth",
      [](const std::string& spec_text, std::optional<std::uint64_t> seed) {
        ProcessSpec spec = parse_process_spec(spec_text);
        if (seed) spec.seed = *seed;
        const SynthOutput out = run_synth(spec);
        return py::make_tuple(format_csv(out.data), out.truth);
      },
      py::arg("spec"), py::arg("seed") = py::none(),
      "Returns (csv_text, truth_text) for a CAR(1) process spec in key = value form.");

  m.def(
      "train",
      [](const std::string& csv_text, const std::map<std::string, std::string>& settings) {
        const RunConfig cfg = resolve_run_config(std::nullopt, to_settings(settings));
        TrainReport r;
        {
          py::gil_scoped_release release;
          r = run_training(cfg, parse_csv(csv_text));
        }
        py::dict d;
        d["checkpoint"] = serialize_checkpoint(r.checkpoint);
        d["metrics"] = split_dict(r.metrics);
        py::list history;
        for (const auto& e : r.history) history.append(py::make_tuple(e.epoch, e.train_loss, e.val_loss));
        d["history"] = history;
        py::list curve;
        for (const auto& c : r.tau_curve) curve.append(py::make_tuple(c.tau_raw, c.val_mse));
        d["tau_curve"] = curve;
        d["tau"] = r.checkpoint.tau_raw;
        d["skipped"] = r.skipped;
        return d;
      },
      py::arg("csv"), py::arg("settings") = std::map<std::string, std::string>{},
      "Train on long-format CSV text. `settings` takes the same keys as a config file.");

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& csv_text) {
        const Checkpoint ckpt = parse_checkpoint(checkpoint);
        return split_dict(run_eval(ckpt, parse_csv(csv_text, ckpt.features)));
      },
      py::arg("checkpoint"), py::arg("csv"));

  m.def(
      "predict",
      [](const std::string& checkpoint, const std::string& csv_text, std::size_t context) {
        const Checkpoint ckpt = parse_checkpoint(checkpoint);
        const PredictReport r = run_predict(ckpt, parse_csv(csv_text, ckpt.features), context);
        py::dict d;
        d["predictions"] = format_predictions_csv(r, ckpt.features);
        py::list h;
        for (const auto& e : r.by_horizon) h.append(py::make_tuple(e.horizon, e.cells, e.mae, e.mse));
        d["by_horizon"] = h;
        return d;
      },
      py::arg("checkpoint"), py::arg("csv"), py::arg("context") = 1);

  m.def(
      "forward",
      [](const std::string& checkpoint, const Array& inputs, const std::vector<double>& delta_t) {
        const Checkpoint ckpt = parse_checkpoint(checkpoint);
        return from_matrix(forward_sequence(ckpt.net.cell, to_matrix(inputs, "inputs"), delta_t).y);
      },
      py::arg("checkpoint"), py::arg("inputs"), py::arg("delta_t"),
      "Cell outputs for already scaled inputs (standardized units, normalized gaps).");

  m.def(
      "gradcheck",
      [](std::optional<std::vector<std::string>> cells, std::size_t configs, std::uint64_t seed,
         double tolerance) {
        GradcheckOptions opts;
        if (cells) opts.cells = *cells;
        opts.configs = configs;
        opts.seed = seed;
        opts.tolerance = tolerance;
        GradcheckReport r;
        {
          py::gil_scoped_release release;
          r = gradcheck(opts);
        }
        py::list entries;
        for (const auto& e : r.entries) {
          py::dict x;
          x["variant"] = e.variant;
          x["tensor"] = e.tensor;
          x["max_rel_error"] = e.max_rel_error;
          x["passed"] = e.passed;
          entries.append(x);
        }
        py::dict d;
        d["passed"] = r.passed();
        d["worst"] = r.worst();
        d["configurations"] = r.configurations;
        d["entries"] = entries;
        return d;
      },
      py::arg("cells") = py::none(), py::arg("configs") = 5, py::arg("seed") = 1,
      py::arg("tolerance") = 1e-6);
}
