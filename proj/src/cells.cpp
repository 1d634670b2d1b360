#include "carrnn/cells.hpp"

#include <sstream>

namespace carrnn {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// W·x + U·h + b
Vector gate_input(const Matrix& W, const Vector& x, const Matrix& U, const Vector& h,
                  const Vector& b) {
  Vector out = b;
  matvec_accumulate(W, x, out);
  matvec_accumulate(U, h, out);
  return out;
}

void add_peephole(Vector& pre, const Vector& diag, const Vector& c) {
  for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += diag[i] * c[i];
}

TensorRef ref(std::string_view name, Matrix& m, bool decays) {
  return {name, m.span(), m.rows(), m.cols(), decays};
}
TensorRef ref(std::string_view name, Vector& v, bool decays) {
  return {name, v.span(), v.size(), 1, decays};
}

template <class Visit>
void visit_tensors(RnnParams& p, Visit&& add) {
  add("W_h", p.W_h, true);
  add("U_h", p.U_h, true);
  add("b_h", p.b_h, false);
  add("Phi_h", p.car_h.phi, true);
  add("sigma_h", p.car_h.sigma, false);
  add("W_y", p.W_y, true);
  add("b_y", p.b_y, false);
}

template <class Visit>
void visit_tensors(LstmParams& p, Visit&& add) {
  add("W_f", p.W_f, true);
  add("W_i", p.W_i, true);
  add("W_z", p.W_z, true);
  add("W_o", p.W_o, true);
  add("U_f", p.U_f, true);
  add("U_i", p.U_i, true);
  add("U_z", p.U_z, true);
  add("U_o", p.U_o, true);
  add("V_f", p.V_f, true);
  add("V_i", p.V_i, true);
  add("V_o", p.V_o, true);
  add("b_f", p.b_f, false);
  add("b_i", p.b_i, false);
  add("b_z", p.b_z, false);
  add("b_o", p.b_o, false);
  add("Phi_h", p.car_h.phi, true);
  add("sigma_h", p.car_h.sigma, false);
  add("Phi_c", p.car_c.phi, true);
  add("sigma_c", p.car_c.sigma, false);
  add("W_y", p.W_y, true);
  add("b_y", p.b_y, false);
}

template <class Visit>
void visit_tensors(GruParams& p, Visit&& add) {
  add("W_z", p.W_z, true);
  add("W_r", p.W_r, true);
  add("W_c", p.W_c, true);
  add("U_z", p.U_z, true);
  add("U_r", p.U_r, true);
  add("U_c", p.U_c, true);
  add("b_z", p.b_z, false);
  add("b_r", p.b_r, false);
  add("b_c", p.b_c, false);
  add("Phi_h", p.car_h.phi, true);
  add("sigma_h", p.car_h.sigma, false);
  add("W_y", p.W_y, true);
  add("b_y", p.b_y, false);
}

}  // namespace

std::string_view to_string(CellType type) {
  switch (type) {
    case CellType::Rnn:
      return "rnn";
    case CellType::Lstm:
      return "lstm";
    case CellType::Gru:
      return "gru";
  }
  return "gru";
}

CellParams make_cell_params(const CellShape& s, double tau) {
  const std::size_t N = s.inputs, M = s.hidden, Q = s.outputs;
  switch (s.type) {
    case CellType::Rnn: {
      RnnParams p;
      p.W_h = Matrix(M, N);
      p.U_h = Matrix(M, M);
      p.b_h = Vector(M);
      p.car_h = CarLayer::zeros(M, tau);
      p.W_y = Matrix(Q, M);
      p.b_y = Vector(Q);
      return p;
    }
    case CellType::Lstm: {
      LstmParams p;
      for (Matrix* W : {&p.W_f, &p.W_i, &p.W_z, &p.W_o}) *W = Matrix(M, N);
      for (Matrix* U : {&p.U_f, &p.U_i, &p.U_z, &p.U_o}) *U = Matrix(M, M);
      for (Vector* v : {&p.V_f, &p.V_i, &p.V_o, &p.b_f, &p.b_i, &p.b_z, &p.b_o}) *v = Vector(M);
      p.car_h = CarLayer::zeros(M, tau);
      p.car_c = CarLayer::zeros(M, tau);
      p.W_y = Matrix(Q, M);
      p.b_y = Vector(Q);
      return p;
    }
    case CellType::Gru: {
      GruParams p;
      for (Matrix* W : {&p.W_z, &p.W_r, &p.W_c}) *W = Matrix(M, N);
      for (Matrix* U : {&p.U_z, &p.U_r, &p.U_c}) *U = Matrix(M, M);
      for (Vector* b : {&p.b_z, &p.b_r, &p.b_c}) *b = Vector(M);
      p.car_h = CarLayer::zeros(M, tau);
      p.W_y = Matrix(Q, M);
      p.b_y = Vector(Q);
      return p;
    }
  }
  throw std::invalid_argument("unknown cell type");
}

CellType cell_type(const CellParams& p) {
  return std::visit(overloaded{[](const RnnParams&) { return CellType::Rnn; },
                               [](const LstmParams&) { return CellType::Lstm; },
                               [](const GruParams&) { return CellType::Gru; }},
                    p);
}

CellShape cell_shape(const CellParams& p) {
  return std::visit(overloaded{[](const RnnParams& r) {
                                 return CellShape{CellType::Rnn, r.W_h.cols(), r.W_h.rows(),
                                                  r.W_y.rows()};
                               },
                               [](const LstmParams& l) {
                                 return CellShape{CellType::Lstm, l.W_f.cols(), l.W_f.rows(),
                                                  l.W_y.rows()};
                               },
                               [](const GruParams& g) {
                                 return CellShape{CellType::Gru, g.W_z.cols(), g.W_z.rows(),
                                                  g.W_y.rows()};
                               }},
                    p);
}

double cell_tau(const CellParams& p) {
  return std::visit([](const auto& c) { return c.car_h.tau; }, p);
}

void set_cell_tau(CellParams& p, double tau) {
  std::visit(overloaded{[tau](RnnParams& r) { r.car_h.tau = tau; },
                        [tau](LstmParams& l) {
                          l.car_h.tau = tau;
                          l.car_c.tau = tau;
                        },
                        [tau](GruParams& g) { g.car_h.tau = tau; }},
             p);
}

std::vector<TensorRef> tensors(CellParams& p) {
  std::vector<TensorRef> out;
  std::visit(
      [&out](auto& c) {
        visit_tensors(c, [&out](std::string_view name, auto& t, bool decays) {
          out.push_back(ref(name, t, decays));
        });
      },
      p);
  return out;
}

std::vector<ConstTensorRef> tensors(const CellParams& p) {
  std::vector<ConstTensorRef> out;
  for (const TensorRef& t : tensors(const_cast<CellParams&>(p)))
    out.push_back({t.name, t.values, t.rows, t.cols, t.decays});
  return out;
}

RnnStepCache rnn_step(const RnnParams& p, const Vector& x, const Vector& h_prev, double delta_t) {
  RnnStepCache s;
  s.x = x;
  s.h_prev = h_prev;
  s.delta_t = delta_t;
  s.h_bar = gate_input(p.W_h, x, p.U_h, h_prev, p.b_h);
  s.h_tilde = activate(p.act_h, s.h_bar);
  s.h = car_correct(p.car_h, s.h_tilde, delta_t);
  return s;
}

LstmStepCache lstm_step(const LstmParams& p, const Vector& x, const Vector& h_prev,
                        const Vector& c_prev, double delta_t) {
  LstmStepCache s;
  s.x = x;
  s.h_prev = h_prev;
  s.c_prev = c_prev;
  s.delta_t = delta_t;

  s.f_bar = gate_input(p.W_f, x, p.U_f, h_prev, p.b_f);
  s.i_bar = gate_input(p.W_i, x, p.U_i, h_prev, p.b_i);
  if (p.peepholes) {
    add_peephole(s.f_bar, p.V_f, c_prev);
    add_peephole(s.i_bar, p.V_i, c_prev);
  }
  s.f = activate(p.act_g, s.f_bar);
  s.i = activate(p.act_g, s.i_bar);
  s.z_bar = gate_input(p.W_z, x, p.U_z, h_prev, p.b_z);
  s.z = activate(p.act_c, s.z_bar);

  s.c_bar = hadamard(s.f, c_prev);
  for (std::size_t m = 0; m < s.c_bar.size(); ++m) s.c_bar[m] += s.i[m] * s.z[m];
  s.c_tilde = activate(p.act_h, s.c_bar);
  s.c = car_correct(p.car_c, s.c_bar, delta_t);

  // the output-gate peephole reads the corrected cell of the current step
  s.o_bar = gate_input(p.W_o, x, p.U_o, h_prev, p.b_o);
  if (p.peepholes) add_peephole(s.o_bar, p.V_o, s.c);
  s.o = activate(p.act_g, s.o_bar);

  s.h_tilde = hadamard(s.o, s.c_tilde);
  s.h = car_correct(p.car_h, s.h_tilde, delta_t);
  return s;
}

GruStepCache gru_step(const GruParams& p, const Vector& x, const Vector& h_prev, double delta_t) {
  GruStepCache s;
  s.x = x;
  s.h_prev = h_prev;
  s.delta_t = delta_t;
  s.z_bar = gate_input(p.W_z, x, p.U_z, h_prev, p.b_z);
  s.z = activate(p.act_g, s.z_bar);
  s.r_bar = gate_input(p.W_r, x, p.U_r, h_prev, p.b_r);
  s.r = activate(p.act_g, s.r_bar);
  s.c_bar = gate_input(p.W_c, x, p.U_c, hadamard(s.r, h_prev), p.b_c);
  s.c_tilde = activate(p.act_h, s.c_bar);
  s.h_tilde = Vector(h_prev.size());
  for (std::size_t m = 0; m < h_prev.size(); ++m)
    s.h_tilde[m] = (1.0 - s.z[m]) * s.c_tilde[m] + s.z[m] * h_prev[m];
  s.h = car_correct(p.car_h, s.h_tilde, delta_t);
  return s;
}

Vector output_layer(const Matrix& W_y, const Vector& b_y, Activation act_y, const Vector& h,
                    Vector* y_bar) {
  Vector pre = b_y;
  matvec_accumulate(W_y, h, pre);
  Vector y = activate(act_y, pre);
  if (y_bar) *y_bar = std::move(pre);
  return y;
}

Vector output_layer(const CellParams& p, const Vector& h, Vector* y_bar) {
  return std::visit([&](const auto& c) { return output_layer(c.W_y, c.b_y, c.act_y, h, y_bar); },
                    p);
}

std::size_t ForwardCache::size() const {
  return std::visit([](const auto& v) { return v.size(); }, steps);
}

CellState CellState::zeros(const CellParams& p) {
  const auto shape = cell_shape(p);
  return {Vector(shape.hidden), Vector(shape.hidden)};
}

namespace {

template <class Fn>
auto at_step(std::size_t k, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    std::ostringstream os;
    os << "step " << k << ": " << e.what();
    throw NumericError(os.str());
  }
}

}  // namespace

Vector advance(const CellParams& p, CellState& state, const Vector& x, double delta_t) {
  std::visit(overloaded{[&](const RnnParams& r) {
                          state.h = rnn_step(r, x, state.h, delta_t).h;
                        },
                        [&](const LstmParams& l) {
                          auto s = lstm_step(l, x, state.h, state.c, delta_t);
                          state.h = std::move(s.h);
                          state.c = std::move(s.c);
                        },
                        [&](const GruParams& g) {
                          state.h = gru_step(g, x, state.h, delta_t).h;
                        }},
             p);
  Vector y = output_layer(p, state.h);
  require_finite(y, "output");
  return y;
}

SequenceOutput forward_sequence(const CellParams& p, const Matrix& inputs,
                                std::span<const double> delta_t) {
  const auto shape = cell_shape(p);
  const std::size_t T = inputs.rows();
  if (inputs.cols() != shape.inputs) throw DimensionError("forward_sequence: input width");
  if (delta_t.size() != T) throw DimensionError("forward_sequence: delta_t length");

  SequenceOutput out;
  out.y = Matrix(T, shape.outputs);
  out.cache.y_bar = Matrix(T, shape.outputs);

  auto emit = [&](std::size_t k, const Vector& h) {
    Vector y_bar;
    Vector y = output_layer(p, h, &y_bar);
    require_finite(y, "output");
    out.y.set_row(k, y.span());
    out.cache.y_bar.set_row(k, y_bar.span());
  };

  std::visit(
      overloaded{[&](const RnnParams& r) {
                   std::vector<RnnStepCache> steps;
                   steps.reserve(T);
                   Vector h(shape.hidden);
                   for (std::size_t k = 0; k < T; ++k) {
                     steps.push_back(
                         at_step(k, [&] { return rnn_step(r, inputs.row_vector(k), h, delta_t[k]); }));
                     h = steps.back().h;
                     at_step(k, [&] { emit(k, h); });
                   }
                   out.cache.steps = std::move(steps);
                 },
                 [&](const LstmParams& l) {
                   std::vector<LstmStepCache> steps;
                   steps.reserve(T);
                   Vector h(shape.hidden), c(shape.hidden);
                   for (std::size_t k = 0; k < T; ++k) {
                     steps.push_back(at_step(
                         k, [&] { return lstm_step(l, inputs.row_vector(k), h, c, delta_t[k]); }));
                     h = steps.back().h;
                     c = steps.back().c;
                     at_step(k, [&] { emit(k, h); });
                   }
                   out.cache.steps = std::move(steps);
                 },
                 [&](const GruParams& g) {
                   std::vector<GruStepCache> steps;
                   steps.reserve(T);
                   Vector h(shape.hidden);
                   for (std::size_t k = 0; k < T; ++k) {
                     steps.push_back(
                         at_step(k, [&] { return gru_step(g, inputs.row_vector(k), h, delta_t[k]); }));
                     h = steps.back().h;
                     at_step(k, [&] { emit(k, h); });
                   }
                   out.cache.steps = std::move(steps);
                 }},
      p);
  return out;
}

}  // namespace carrnn
