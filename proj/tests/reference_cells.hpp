#pragma once

// Textbook RNN / peephole LSTM / GRU steps on raw row-major arrays, written without the
// library's kernels so they can serve as an independent forward oracle.

#include <cmath>
#include <vector>

#include "carrnn/cells.hpp"

namespace carrnn::reference {

using Vec = std::vector<double>;

inline double act(Activation a, double x) {
  switch (a) {
    case Activation::Tanh:
      return std::tanh(x);
    case Activation::Sigmoid:
      return 1.0 / (1.0 + std::exp(-x));
    default:
      return x;
  }
}

// W·x + U·h + b
inline Vec affine(const Matrix& W, const Vec& x, const Matrix& U, const Vec& h, const Vector& b) {
  Vec out(b.size());
  for (std::size_t m = 0; m < out.size(); ++m) {
    double s = b[m];
    for (std::size_t n = 0; n < x.size(); ++n) s += W(m, n) * x[n];
    for (std::size_t j = 0; j < h.size(); ++j) s += U(m, j) * h[j];
    out[m] = s;
  }
  return out;
}

inline Vec output(const Matrix& W_y, const Vector& b_y, Activation a, const Vec& h) {
  Vec y(b_y.size());
  for (std::size_t q = 0; q < y.size(); ++q) {
    double s = b_y[q];
    for (std::size_t m = 0; m < h.size(); ++m) s += W_y(q, m) * h[m];
    y[q] = act(a, s);
  }
  return y;
}

inline Vec rnn(const RnnParams& p, const Vec& x, const Vec& h) {
  Vec pre = affine(p.W_h, x, p.U_h, h, p.b_h);
  for (double& v : pre) v = act(p.act_h, v);
  return pre;
}

struct LstmState {
  Vec h, c;
};

inline LstmState lstm(const LstmParams& p, const Vec& x, const LstmState& s) {
  const std::size_t M = s.h.size();
  Vec f = affine(p.W_f, x, p.U_f, s.h, p.b_f), i = affine(p.W_i, x, p.U_i, s.h, p.b_i);
  Vec z = affine(p.W_z, x, p.U_z, s.h, p.b_z), o = affine(p.W_o, x, p.U_o, s.h, p.b_o);
  LstmState next{Vec(M), Vec(M)};
  for (std::size_t m = 0; m < M; ++m) {
    const double vf = p.peepholes ? p.V_f[m] : 0.0, vi = p.peepholes ? p.V_i[m] : 0.0,
                 vo = p.peepholes ? p.V_o[m] : 0.0;
    const double fg = act(p.act_g, f[m] + vf * s.c[m]);
    const double ig = act(p.act_g, i[m] + vi * s.c[m]);
    const double zg = act(p.act_c, z[m]);
    next.c[m] = fg * s.c[m] + ig * zg;
    const double og = act(p.act_g, o[m] + vo * next.c[m]);
    next.h[m] = og * act(p.act_h, next.c[m]);
  }
  return next;
}

inline Vec gru(const GruParams& p, const Vec& x, const Vec& h) {
  const std::size_t M = h.size();
  Vec z = affine(p.W_z, x, p.U_z, h, p.b_z), r = affine(p.W_r, x, p.U_r, h, p.b_r);
  Vec rh(M);
  for (std::size_t m = 0; m < M; ++m) {
    z[m] = act(p.act_g, z[m]);
    rh[m] = act(p.act_g, r[m]) * h[m];
  }
  Vec c = affine(p.W_c, x, p.U_c, rh, p.b_c);
  Vec out(M);
  for (std::size_t m = 0; m < M; ++m) out[m] = (1.0 - z[m]) * act(p.act_h, c[m]) + z[m] * h[m];
  return out;
}

/// Outputs of the standard cell over the rows of `inputs` from a zero state.
inline std::vector<Vec> run(const CellParams& cell, const Matrix& inputs) {
  const CellShape shape = cell_shape(cell);
  std::vector<Vec> ys;
  Vec h(shape.hidden, 0.0);
  LstmState s{Vec(shape.hidden, 0.0), Vec(shape.hidden, 0.0)};
  for (std::size_t k = 0; k < inputs.rows(); ++k) {
    const Vec x(inputs.row(k).begin(), inputs.row(k).end());
    if (const auto* r = std::get_if<RnnParams>(&cell)) {
      h = rnn(*r, x, h);
      ys.push_back(output(r->W_y, r->b_y, r->act_y, h));
    } else if (const auto* l = std::get_if<LstmParams>(&cell)) {
      s = lstm(*l, x, s);
      ys.push_back(output(l->W_y, l->b_y, l->act_y, s.h));
    } else {
      const auto& g = std::get<GruParams>(cell);
      h = gru(g, x, h);
      ys.push_back(output(g.W_y, g.b_y, g.act_y, h));
    }
  }
  return ys;
}

}  // namespace carrnn::reference
