#include "carrnn/bptt.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace carrnn {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Zero tensors with the same shape, τ, activations and flags as `p`.
template <class P>
P zero_params(const P& p) {
  P g = p;
  CellParams wrapped = g;
  for (TensorRef t : tensors(wrapped)) std::fill(t.values.begin(), t.values.end(), 0.0);
  return std::get<P>(wrapped);
}

template <class P, class Steps>
const Steps& steps_of(const ForwardCache& cache, const P&) {
  const auto* steps = std::get_if<Steps>(&cache.steps);
  if (!steps) throw std::invalid_argument("backward: cache was produced by a different cell type");
  return *steps;
}

void check_dy(const Matrix& dY_bar, std::size_t T, std::size_t Q) {
  if (dY_bar.rows() != T || dY_bar.cols() != Q)
    throw DimensionError("backward: output gradient shape does not match the cache");
}

void add_into(Vector& a, const Vector& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

Vector times_deriv(const Vector& upstream, Activation kind, const Vector& pre) {
  Vector out(upstream.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = upstream[i] * activate_deriv(kind, pre[i]);
  return out;
}

void add_car_grads(CarLayer& g, const CarGradients& cg) {
  g.phi += cg.d_phi;
  add_into(g.sigma, cg.d_sigma);
}

}  // namespace

std::vector<TensorRef> tensors(Network& net) {
  auto out = tensors(net.cell);
  out.push_back({"varphi", net.imputer.phi_diag.span(), net.imputer.phi_diag.size(), 1, false});
  out.push_back({"zeta", net.imputer.zeta.span(), net.imputer.zeta.size(), 1, false});
  return out;
}

std::vector<ConstTensorRef> tensors(const Network& net) {
  std::vector<ConstTensorRef> out;
  for (const TensorRef& t : tensors(const_cast<Network&>(net)))
    out.push_back({t.name, t.values, t.rows, t.cols, t.decays});
  return out;
}

GradientSet zeros_like(const Network& net) {
  GradientSet g = net;
  for (TensorRef t : tensors(g)) std::fill(t.values.begin(), t.values.end(), 0.0);
  return g;
}

void accumulate(GradientSet& a, const GradientSet& b, double scale) {
  auto ta = tensors(a);
  auto tb = tensors(b);
  if (ta.size() != tb.size()) throw DimensionError("accumulate: gradient sets differ");
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].values.size() != tb[i].values.size())
      throw DimensionError("accumulate: tensor '" + std::string(ta[i].name) + "' differs");
    for (std::size_t j = 0; j < ta[i].values.size(); ++j) ta[i].values[j] += scale * tb[i].values[j];
  }
}

double input_scale(std::span<const double> mask) {
  if (mask.empty()) return 0.0;
  double available = 0.0;
  for (double m : mask) available += m != 0.0 ? 1.0 : 0.0;
  return available / static_cast<double>(mask.size());
}

Vector scale_inputs(const Vector& x, const Vector& mask) {
  if (x.size() != mask.size()) throw DimensionError("scale_inputs: mask size");
  const double s = input_scale(mask.span());
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = mask[i] != 0.0 ? s * x[i] : 0.0;
  return out;
}

LossGradient loss_and_output_grad(const Matrix& Y, const Matrix& S, const Matrix& target_mask,
                                  const Matrix* Y_bar, Activation act_y) {
  if (Y.rows() != S.rows() || Y.cols() != S.cols() || Y.rows() != target_mask.rows() ||
      Y.cols() != target_mask.cols())
    throw DimensionError("loss: Y, S and mask must share a shape");
  if (Y_bar && (Y_bar->rows() != Y.rows() || Y_bar->cols() != Y.cols()))
    throw DimensionError("loss: pre-activation output shape");
  const std::size_t T = Y.rows(), Q = Y.cols();
  LossGradient out{0.0, Matrix(T, Q), Matrix(T, Q)};
  std::size_t supervised = 0;
  for (std::size_t k = 0; k < T; ++k) {
    double available = 0.0;
    for (std::size_t q = 0; q < Q; ++q) available += target_mask(k, q) != 0.0 ? 1.0 : 0.0;
    if (available == 0.0) continue;
    supervised += static_cast<std::size_t>(available);
    double sq = 0.0;
    for (std::size_t q = 0; q < Q; ++q) {
      if (target_mask(k, q) == 0.0) continue;
      const double e = Y(k, q) - S(k, q);
      sq += e * e;
      out.dY(k, q) = 2.0 * e / (static_cast<double>(T) * available);
    }
    out.loss += sq / available;
  }
  if (supervised == 0) throw DataError("no supervision: every target is missing");
  out.loss /= static_cast<double>(T);
  if (!Y_bar && act_y != Activation::Identity)
    throw std::invalid_argument("loss: pre-activation outputs required for a non-identity σ_y");
  for (std::size_t k = 0; k < T; ++k)
    for (std::size_t q = 0; q < Q; ++q)
      out.dY_bar(k, q) = out.dY(k, q) * (Y_bar ? activate_deriv(act_y, (*Y_bar)(k, q)) : 1.0);
  return out;
}

CellBackward backward_rnn(const RnnParams& p, const ForwardCache& cache, const Matrix& dY_bar) {
  const auto& steps = steps_of<RnnParams, std::vector<RnnStepCache>>(cache, p);
  const std::size_t T = steps.size(), M = p.W_h.rows(), N = p.W_h.cols();
  check_dy(dY_bar, T, p.W_y.rows());

  RnnParams g = zero_params(p);
  Matrix d_inputs(T, N);
  Vector dh_bar_next(M);
  for (std::size_t k = T; k-- > 0;) {
    const RnnStepCache& s = steps[k];
    const Vector dy = dY_bar.row_vector(k);
    add_outer(g.W_y, dy, s.h);
    add_into(g.b_y, dy);

    Vector dh = matvec_transposed(p.W_y, dy);
    matvec_transposed_accumulate(p.U_h, dh_bar_next, dh);
    const CarGradients car = car_correct_backward(p.car_h, s.h_tilde, s.delta_t, dh);
    add_car_grads(g.car_h, car);

    Vector dh_bar = times_deriv(car.d_v_tilde, p.act_h, s.h_bar);
    add_outer(g.W_h, dh_bar, s.x);
    add_outer(g.U_h, dh_bar, s.h_prev);
    add_into(g.b_h, dh_bar);
    d_inputs.set_row(k, matvec_transposed(p.W_h, dh_bar).span());
    dh_bar_next = std::move(dh_bar);
  }
  return {std::move(g), std::move(d_inputs)};
}

CellBackward backward_lstm(const LstmParams& p, const ForwardCache& cache, const Matrix& dY_bar) {
  const auto& steps = steps_of<LstmParams, std::vector<LstmStepCache>>(cache, p);
  const std::size_t T = steps.size(), M = p.W_f.rows(), N = p.W_f.cols();
  check_dy(dY_bar, T, p.W_y.rows());

  LstmParams g = zero_params(p);
  Matrix d_inputs(T, N);
  // gradients carried from step k+1
  Vector df_next(M), di_next(M), dz_next(M), do_next(M), dc_bar_next(M), f_next(M);
  for (std::size_t k = T; k-- > 0;) {
    const LstmStepCache& s = steps[k];
    const Vector dy = dY_bar.row_vector(k);
    add_outer(g.W_y, dy, s.h);
    add_into(g.b_y, dy);

    Vector dh = matvec_transposed(p.W_y, dy);
    matvec_transposed_accumulate(p.U_f, df_next, dh);
    matvec_transposed_accumulate(p.U_i, di_next, dh);
    matvec_transposed_accumulate(p.U_z, dz_next, dh);
    matvec_transposed_accumulate(p.U_o, do_next, dh);
    const CarGradients car_h = car_correct_backward(p.car_h, s.h_tilde, s.delta_t, dh);
    add_car_grads(g.car_h, car_h);
    const Vector& dh_tilde = car_h.d_v_tilde;

    Vector do_bar = times_deriv(hadamard(dh_tilde, s.c_tilde), p.act_g, s.o_bar);
    const Vector dc_tilde = hadamard(dh_tilde, s.o);

    Vector dc = hadamard(dc_bar_next, f_next);
    if (p.peepholes) {
      for (std::size_t m = 0; m < M; ++m)
        dc[m] += p.V_f[m] * df_next[m] + p.V_i[m] * di_next[m] + p.V_o[m] * do_bar[m];
    }
    const CarGradients car_c = car_correct_backward(p.car_c, s.c_bar, s.delta_t, dc);
    add_car_grads(g.car_c, car_c);
    Vector dc_bar = car_c.d_v_tilde;
    add_into(dc_bar, times_deriv(dc_tilde, p.act_h, s.c_bar));

    Vector dz_bar = times_deriv(hadamard(dc_bar, s.i), p.act_c, s.z_bar);
    Vector di_bar = times_deriv(hadamard(dc_bar, s.z), p.act_g, s.i_bar);
    Vector df_bar = times_deriv(hadamard(dc_bar, s.c_prev), p.act_g, s.f_bar);

    Vector dx(N);
    auto gate = [&](Matrix& gW, Matrix& gU, Vector& gb, const Matrix& W, const Vector& d) {
      add_outer(gW, d, s.x);
      add_outer(gU, d, s.h_prev);
      add_into(gb, d);
      matvec_transposed_accumulate(W, d, dx);
    };
    gate(g.W_f, g.U_f, g.b_f, p.W_f, df_bar);
    gate(g.W_i, g.U_i, g.b_i, p.W_i, di_bar);
    gate(g.W_z, g.U_z, g.b_z, p.W_z, dz_bar);
    gate(g.W_o, g.U_o, g.b_o, p.W_o, do_bar);
    if (p.peepholes) {
      add_into(g.V_f, hadamard(df_bar, s.c_prev));
      add_into(g.V_i, hadamard(di_bar, s.c_prev));
      add_into(g.V_o, hadamard(do_bar, s.c));
    }
    d_inputs.set_row(k, dx.span());

    df_next = std::move(df_bar);
    di_next = std::move(di_bar);
    dz_next = std::move(dz_bar);
    do_next = std::move(do_bar);
    dc_bar_next = std::move(dc_bar);
    f_next = s.f;
  }
  return {std::move(g), std::move(d_inputs)};
}

CellBackward backward_gru(const GruParams& p, const ForwardCache& cache, const Matrix& dY_bar) {
  const auto& steps = steps_of<GruParams, std::vector<GruStepCache>>(cache, p);
  const std::size_t T = steps.size(), M = p.W_z.rows(), N = p.W_z.cols();
  check_dy(dY_bar, T, p.W_y.rows());

  GruParams g = zero_params(p);
  Matrix d_inputs(T, N);
  Vector dz_next(M), dr_next(M), dc_next(M), dh_tilde_next(M), z_next(M), r_next(M);
  for (std::size_t k = T; k-- > 0;) {
    const GruStepCache& s = steps[k];
    const Vector dy = dY_bar.row_vector(k);
    add_outer(g.W_y, dy, s.h);
    add_into(g.b_y, dy);

    Vector dh = matvec_transposed(p.W_y, dy);
    matvec_transposed_accumulate(p.U_z, dz_next, dh);
    matvec_transposed_accumulate(p.U_r, dr_next, dh);
    const Vector reset_back = matvec_transposed(p.U_c, dc_next);
    for (std::size_t m = 0; m < M; ++m)
      dh[m] += dh_tilde_next[m] * z_next[m] + r_next[m] * reset_back[m];

    const CarGradients car = car_correct_backward(p.car_h, s.h_tilde, s.delta_t, dh);
    add_car_grads(g.car_h, car);
    const Vector& dh_tilde = car.d_v_tilde;

    Vector dc_tilde(M), dz(M);
    for (std::size_t m = 0; m < M; ++m) {
      dc_tilde[m] = dh_tilde[m] * (1.0 - s.z[m]);
      dz[m] = dh_tilde[m] * (s.h_prev[m] - s.c_tilde[m]);
    }
    Vector dc_bar = times_deriv(dc_tilde, p.act_h, s.c_bar);
    Vector dr_bar = times_deriv(hadamard(s.h_prev, matvec_transposed(p.U_c, dc_bar)), p.act_g, s.r_bar);
    Vector dz_bar = times_deriv(dz, p.act_g, s.z_bar);

    add_outer(g.W_z, dz_bar, s.x);
    add_outer(g.W_r, dr_bar, s.x);
    add_outer(g.W_c, dc_bar, s.x);
    add_outer(g.U_z, dz_bar, s.h_prev);
    add_outer(g.U_r, dr_bar, s.h_prev);
    add_outer(g.U_c, dc_bar, hadamard(s.r, s.h_prev));
    add_into(g.b_z, dz_bar);
    add_into(g.b_r, dr_bar);
    add_into(g.b_c, dc_bar);

    Vector dx = matvec_transposed(p.W_z, dz_bar);
    matvec_transposed_accumulate(p.W_r, dr_bar, dx);
    matvec_transposed_accumulate(p.W_c, dc_bar, dx);
    d_inputs.set_row(k, dx.span());

    dz_next = std::move(dz_bar);
    dr_next = std::move(dr_bar);
    dc_next = std::move(dc_bar);
    dh_tilde_next = dh_tilde;
    z_next = s.z;
    r_next = s.r;
  }
  return {std::move(g), std::move(d_inputs)};
}

CellBackward backward_cell(const CellParams& p, const ForwardCache& cache, const Matrix& dY_bar) {
  return std::visit(
      overloaded{[&](const RnnParams& r) { return backward_rnn(r, cache, dY_bar); },
                 [&](const LstmParams& l) { return backward_lstm(l, cache, dY_bar); },
                 [&](const GruParams& gr) { return backward_gru(gr, cache, dY_bar); }},
      p);
}

Matrix assemble_inputs(const Network& net, const StepSequence& seq) {
  Matrix x = seq.inputs;
  for (const ImputedCell& c : seq.imputed)
    x(c.step, c.feature) =
        impute_univariate(net.imputer, c.feature, c.source_value, 0.0, c.gap);
  return x;
}

Matrix scaled_inputs(const Network& net, const StepSequence& seq) {
  const Matrix raw = assemble_inputs(net, seq);
  Matrix out(raw.rows(), raw.cols());
  for (std::size_t k = 0; k < raw.rows(); ++k)
    out.set_row(k, scale_inputs(raw.row_vector(k), seq.input_mask.row_vector(k)).span());
  return out;
}

SequenceOutput network_forward(const Network& net, const StepSequence& seq) {
  return forward_sequence(net.cell, scaled_inputs(net, seq), seq.delta_t);
}

namespace {

Activation output_activation(const CellParams& p) {
  return std::visit([](const auto& c) { return c.act_y; }, p);
}

}  // namespace

double sequence_loss(const Network& net, const StepSequence& seq) {
  const SequenceOutput fwd = network_forward(net, seq);
  return loss_and_output_grad(fwd.y, seq.targets, seq.target_mask, &fwd.cache.y_bar,
                              output_activation(net.cell))
      .loss;
}

SequenceGradient sequence_gradient(const Network& net, const StepSequence& seq) {
  const SequenceOutput fwd = network_forward(net, seq);
  const LossGradient lg = loss_and_output_grad(fwd.y, seq.targets, seq.target_mask,
                                               &fwd.cache.y_bar, output_activation(net.cell));
  CellBackward back = backward_cell(net.cell, fwd.cache, lg.dY_bar);

  SequenceGradient out;
  out.loss = lg.loss;
  out.grads.cell = std::move(back.grads);
  out.grads.imputer = UnivariateImputer::zeros(net.imputer.size());
  out.d_inputs = Matrix(back.d_inputs.rows(), back.d_inputs.cols());
  for (std::size_t k = 0; k < out.d_inputs.rows(); ++k) {
    const double s = input_scale(seq.input_mask.row(k));
    for (std::size_t n = 0; n < out.d_inputs.cols(); ++n)
      if (seq.input_mask(k, n) != 0.0) out.d_inputs(k, n) = s * back.d_inputs(k, n);
  }
  // imputed cells: x = (1 + gap·φ)·x_j + gap·ζ, the source x_j held constant
  for (const ImputedCell& c : seq.imputed) {
    const double d = out.d_inputs(c.step, c.feature);
    out.grads.imputer.phi_diag[c.feature] += d * c.gap * c.source_value;
    out.grads.imputer.zeta[c.feature] += d * c.gap;
  }
  return out;
}

double accumulate_batch_gradient(const Network& net, const std::vector<const StepSequence*>& batch,
                                 GradientSet& acc) {
  double loss = 0.0;
  for (const StepSequence* seq : batch) {
    SequenceGradient g = sequence_gradient(net, *seq);
    accumulate(acc, g.grads);
    loss += g.loss;
  }
  return loss;
}

namespace {

std::span<double> find_tensor(Network& net, std::string_view name) {
  for (TensorRef t : tensors(net))
    if (t.name == name) return t.values;
  throw std::invalid_argument("unknown tensor '" + std::string(name) + "'");
}

}  // namespace

double finite_difference(const Network& net, const StepSequence& seq, std::string_view tensor,
                         std::size_t index, double h) {
  Network probe = net;
  std::span<double> values = find_tensor(probe, tensor);
  if (index >= values.size()) throw std::out_of_range("finite_difference: index out of range");
  const double theta = values[index];
  if (!(h > 0.0)) h = 1e-5 * std::max(1.0, std::abs(theta));
  values[index] = theta + h;
  const double plus = sequence_loss(probe, seq);
  values[index] = theta - h;
  const double minus = sequence_loss(probe, seq);
  return (plus - minus) / (2.0 * h);
}

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradcheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

namespace {

struct Variant {
  std::string label;
  CellType type;
  bool peepholes = false;
  Activation act_h = Activation::Identity;
};

std::vector<Variant> expand_variants(const std::vector<std::string>& cells) {
  std::vector<Variant> out;
  for (const auto& name : cells) {
    CellType type;
    if (name == "car_rnn" || name == "rnn")
      type = CellType::Rnn;
    else if (name == "car_lstm" || name == "lstm")
      type = CellType::Lstm;
    else if (name == "car_gru" || name == "gru")
      type = CellType::Gru;
    else
      throw std::invalid_argument("gradcheck: unknown cell '" + name + "'");
    for (Activation act : {Activation::Identity, Activation::Tanh}) {
      const std::string act_name(to_string(act));
      if (type == CellType::Lstm) {
        out.push_back({name + "/peep/" + act_name, type, true, act});
        out.push_back({name + "/nopeep/" + act_name, type, false, act});
      } else {
        out.push_back({name + "/" + act_name, type, false, act});
      }
    }
  }
  return out;
}

StepSequence random_sequence(std::mt19937_64& rng, std::size_t N, std::size_t T, double tau) {
  std::uniform_real_distribution<double> gap(0.3 * tau, 1.7 * tau);
  std::normal_distribution<double> value(0.0, 1.0);
  std::bernoulli_distribution observed(0.7);
  while (true) {
    BinnedSequence b;
    b.subject_id = "gradcheck";
    b.values = Matrix(T + 1, N);
    b.mask = Matrix(T + 1, N);
    double t = 0.0;
    for (std::size_t k = 0; k <= T; ++k) {
      if (k > 0) t += gap(rng);
      b.rep_times.push_back(t);
      b.delta_t.push_back(k == 0 ? tau : t - b.rep_times[k - 1]);
      for (std::size_t n = 0; n < N; ++n) {
        b.values(k, n) = value(rng);
        b.mask(k, n) = observed(rng) ? 1.0 : 0.0;
      }
    }
    StepSequence seq = make_step_sequence(b, FillMode::None, true, Vector(N));
    double supervised = 0.0;
    for (double m : seq.target_mask.span()) supervised += m;
    if (supervised > 0.0) return seq;
  }
}

}  // namespace

GradcheckReport gradcheck(const GradcheckOptions& opts) {
  GradcheckReport report;
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> weight(-0.5, 0.5);
  const std::size_t Ns[] = {2, 3}, Ms[] = {4, 6}, Ks[] = {3, 7};
  std::uniform_int_distribution<int> pick(0, 1);

  for (const Variant& v : expand_variants(opts.cells)) {
    std::vector<GradcheckEntry> entries;
    for (std::size_t cfg = 0; cfg < opts.configs; ++cfg) {
      const std::size_t N = Ns[pick(rng)], M = Ms[pick(rng)], T = Ks[pick(rng)];
      const double tau = 1.0;
      Network net{make_cell_params({v.type, N, M, N}, tau), UnivariateImputer::zeros(N)};
      std::visit(overloaded{[&](RnnParams& r) { r.act_h = v.act_h; },
                            [&](LstmParams& l) {
                              l.act_h = v.act_h;
                              l.peepholes = v.peepholes;
                            },
                            [&](GruParams& g) { g.act_h = v.act_h; }},
                 net.cell);
      for (TensorRef t : tensors(net))
        for (double& x : t.values) x = weight(rng);
      if (auto* l = std::get_if<LstmParams>(&net.cell); l && !l->peepholes) {
        l->V_f.fill(0.0);
        l->V_i.fill(0.0);
        l->V_o.fill(0.0);
      }
      const StepSequence seq = random_sequence(rng, N, T, tau);

      SequenceGradient analytic = sequence_gradient(net, seq);
      if (opts.corrupt) opts.corrupt(analytic.grads);
      const auto grad_tensors = tensors(analytic.grads);
      if (entries.empty())
        for (const auto& t : grad_tensors) entries.push_back({v.label, std::string(t.name)});

      for (std::size_t ti = 0; ti < grad_tensors.size(); ++ti) {
        const auto& gt = grad_tensors[ti];
        double diff_sq = 0.0, fd_sq = 0.0, max_abs = 0.0;
        for (std::size_t j = 0; j < gt.values.size(); ++j) {
          const double fd = finite_difference(net, seq, gt.name, j);
          const double d = gt.values[j] - fd;
          diff_sq += d * d;
          fd_sq += fd * fd;
          max_abs = std::max(max_abs, std::abs(d));
        }
        const double fd_norm = std::sqrt(fd_sq);
        const double rel = std::sqrt(diff_sq) / std::max(fd_norm, 1e-8);
        GradcheckEntry& e = entries[ti];
        if (rel >= e.max_rel_error) {
          e.max_rel_error = rel;
          e.fd_norm = fd_norm;
        }
        e.max_abs_error = std::max(e.max_abs_error, max_abs);
        e.passed = e.passed && rel <= opts.tolerance;
      }
      ++report.configurations;
    }
    report.entries.insert(report.entries.end(), entries.begin(), entries.end());
  }
  return report;
}

}  // namespace carrnn
