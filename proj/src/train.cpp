#include "carrnn/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <type_traits>
#include <utility>
#include <sstream>

namespace carrnn {

std::string ModelKind::name() const {
  return (car ? "car_" : "") + std::string(to_string(type));
}

ModelKind parse_model_kind(std::string_view name) {
  ModelKind kind;
  kind.car = name.substr(0, 4) == "car_";
  const std::string_view base = kind.car ? name.substr(4) : name;
  if (base == "rnn")
    kind.type = CellType::Rnn;
  else if (base == "lstm")
    kind.type = CellType::Lstm;
  else if (base == "gru")
    kind.type = CellType::Gru;
  else
    throw std::invalid_argument("unknown cell '" + std::string(name) + "'");
  return kind;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (!(hidden_multiplier > 0.0)) fail("hidden_multiplier must be positive");
  if (!(tau > 0.0)) fail("tau must be positive");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) fail("epsilon must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(batch_fraction > 0.0 && batch_fraction <= 1.0)) fail("batch_fraction must lie in (0, 1]");
  if (patience < 1) fail("patience must be at least 1");
  if (max_epochs < 1) fail("max_epochs must be at least 1");
  if (clip_norm && !(*clip_norm > 0.0)) fail("clip_norm must be positive");
}

std::set<std::string> frozen_tensors(const TrainConfig& cfg) {
  std::set<std::string> out = cfg.frozen;
  if (!cfg.model.car) out.insert({"Phi_h", "sigma_h", "Phi_c", "sigma_c"});
  if (!cfg.model.car || !cfg.impute) out.insert({"varphi", "zeta"});
  if (cfg.model.type == CellType::Lstm && !cfg.peepholes) out.insert({"V_f", "V_i", "V_o"});
  return out;
}

Network init_params(const TrainConfig& cfg, std::size_t n_inputs, std::size_t n_outputs,
                    std::mt19937_64& rng) {
  if (n_inputs < 1 || n_outputs < 1) throw std::invalid_argument("init_params: N must be >= 1");
  const auto hidden =
      static_cast<std::size_t>(std::lround(cfg.hidden_multiplier * static_cast<double>(n_outputs)));
  const std::size_t M = std::max<std::size_t>(hidden, 1);
  Network net{make_cell_params({cfg.model.type, n_inputs, M, n_outputs}, cfg.tau),
              UnivariateImputer::zeros(n_outputs)};
  std::visit(
      [&](auto& c) {
        using P = std::decay_t<decltype(c)>;
        c.act_h = cfg.act_h;
        if constexpr (std::is_same_v<P, LstmParams>) {
          c.act_g = cfg.act_g;
          c.act_c = cfg.act_c;
          c.peepholes = cfg.peepholes;
        } else if constexpr (std::is_same_v<P, GruParams>) {
          c.act_g = cfg.act_g;
        }
      },
      net.cell);

  for (TensorRef t : tensors(net.cell)) {
    const bool weight = t.name[0] == 'W' || t.name[0] == 'U' || t.name[0] == 'V';
    if (!weight) continue;
    if (t.name[0] == 'V' && !cfg.peepholes) continue;
    // V holds a diagonal of an M×M matrix
    const double fan_in = static_cast<double>(t.name[0] == 'V' ? t.rows : t.cols);
    const double fan_out = static_cast<double>(t.rows);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& x : t.values) x = dist(rng);
  }
  return net;
}

AdamState AdamState::zeros_like(const Network& net) {
  return {carrnn::zeros_like(net), carrnn::zeros_like(net), 0};
}

void adam_step(Network& params, const GradientSet& grads, AdamState& state, const TrainConfig& cfg,
               const std::set<std::string>& frozen) {
  auto tp = tensors(params);
  const auto tg = tensors(grads);
  auto tm = tensors(state.m);
  auto tv = tensors(state.v);
  if (tp.size() != tg.size() || tp.size() != tm.size() || tp.size() != tv.size())
    throw DimensionError("adam_step: parameter/gradient/state sets differ");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (tp[i].values.size() != tg[i].values.size())
      throw DimensionError("adam_step: tensor '" + std::string(tp[i].name) + "' shape");
    if (frozen.count(std::string(tp[i].name))) continue;
    const double decay = tp[i].decays ? cfg.weight_decay : 0.0;
    for (std::size_t j = 0; j < tp[i].values.size(); ++j) {
      const double g = tg[i].values[j];
      double& m = tm[i].values[j];
      double& v = tv[i].values[j];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m / c1;
      const double v_hat = v / c2;
      double& theta = tp[i].values[j];
      theta -= cfg.learning_rate * (m_hat / (std::sqrt(v_hat) + cfg.epsilon) + decay * theta);
      if (!std::isfinite(theta))
        throw NumericError("adam_step: non-finite update of '" + std::string(tp[i].name) + "'");
    }
  }
}

namespace {

double mean_loss(const Network& net, const std::vector<StepSequence>& data) {
  double total = 0.0;
  for (const auto& s : data) total += sequence_loss(net, s);
  return total / static_cast<double>(data.size());
}

void clip_gradients(GradientSet& g, double max_norm) {
  double sq = 0.0;
  for (const auto& t : tensors(std::as_const(g)))
    for (double x : t.values) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double s = max_norm / norm;
  for (TensorRef t : tensors(g))
    for (double& x : t.values) x *= s;
}

}  // namespace

TrainResult train(const Network& init, const std::vector<StepSequence>& train_set,
                  const std::vector<StepSequence>& val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const std::set<std::string> frozen = frozen_tensors(cfg);

  Network params = init;
  AdamState adam = AdamState::zeros_like(params);
  std::mt19937_64 rng(cfg.seed);
  const std::size_t n = train_set.size();
  const std::size_t batch_size = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(cfg.batch_fraction * static_cast<double>(n))), 1, n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.best = params;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec{epoch, 0.0, 0.0};
    try {
      std::shuffle(order.begin(), order.end(), rng);
      double epoch_loss = 0.0;
      for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t stop = std::min(n, start + batch_size);
        std::vector<const StepSequence*> batch;
        for (std::size_t i = start; i < stop; ++i) batch.push_back(&train_set[order[i]]);
        GradientSet grads = zeros_like(params);
        epoch_loss += accumulate_batch_gradient(params, batch, grads);
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (TensorRef t : tensors(grads))
          for (double& x : t.values) x *= inv;
        if (cfg.clip_norm) clip_gradients(grads, *cfg.clip_norm);
        adam_step(params, grads, adam, cfg, frozen);
      }
      rec.train_loss = epoch_loss / static_cast<double>(n);
      rec.val_loss = val_set.empty() ? mean_loss(params, train_set) : mean_loss(params, val_set);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss))
      throw NumericError("epoch " + std::to_string(epoch) + ": loss diverged");
    result.history.push_back(rec);

    if (rec.val_loss < result.best_val_loss) {
      result.best_val_loss = rec.val_loss;
      result.best = params;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

Metrics evaluate(const Network& net, const std::vector<StepSequence>& data) {
  double abs_sum = 0.0, sq_sum = 0.0;
  std::size_t cells = 0;
  for (const auto& seq : data) {
    const SequenceOutput out = network_forward(net, seq);
    for (std::size_t k = 0; k < seq.steps(); ++k)
      for (std::size_t q = 0; q < seq.targets.cols(); ++q) {
        if (seq.target_mask(k, q) == 0.0) continue;
        const double e = out.y(k, q) - seq.targets(k, q);
        abs_sum += std::abs(e);
        sq_sum += e * e;
        ++cells;
      }
  }
  if (cells == 0) throw DataError("evaluate: no available target cells");
  const double c = static_cast<double>(cells);
  return {abs_sum / c, sq_sum / c, cells};
}

TauSearchResult tau_search(const std::vector<double>& candidates,
                           const std::function<double(double tau)>& trial) {
  if (candidates.empty()) throw std::invalid_argument("tau_search: no candidates");
  TauSearchResult out;
  for (double tau : candidates) out.curve.push_back({tau, trial(tau)});
  for (std::size_t i = 1; i < out.curve.size(); ++i) {
    const auto& c = out.curve[i];
    const auto& b = out.curve[out.best_index];
    if (c.val_mse < b.val_mse || (c.val_mse == b.val_mse && c.tau < b.tau)) out.best_index = i;
  }
  out.best_tau = out.curve[out.best_index].tau;
  return out;
}

}  // namespace carrnn
