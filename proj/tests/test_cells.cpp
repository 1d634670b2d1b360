#include <doctest.h>

#include <random>
#include <set>
#include <string>

#include "carrnn/cells.hpp"
#include "reference_cells.hpp"
#include "support.hpp"

using namespace carrnn;
using carrnn::testing::max_abs_diff;
using carrnn::testing::random_matrix;
using carrnn::testing::random_network;

namespace {

CellParams random_cell(CellType type, std::mt19937_64& rng, Activation act_h, bool peep = true) {
  Network net = random_network({type, 3, 5, 3}, 0.6, rng);
  std::visit(
      [&](auto& c) {
        c.act_h = act_h;
        if constexpr (std::is_same_v<std::decay_t<decltype(c)>, LstmParams>) c.peepholes = peep;
      },
      net.cell);
  return net.cell;
}

}  // namespace

TEST_CASE("gap equal to tau reduces every cell to its standard form") {
  std::mt19937_64 rng(41);
  for (CellType type : {CellType::Rnn, CellType::Lstm, CellType::Gru})
    for (Activation a : {Activation::Identity, Activation::Tanh})
      for (bool peep : {true, false}) {
        const CellParams cell = random_cell(type, rng, a, peep);
        const Matrix x = random_matrix(6, 3, rng, 1.0);
        const std::vector<double> gaps(6, 0.6);
        const SequenceOutput out = forward_sequence(cell, x, gaps);
        const auto ref = reference::run(cell, x);
        for (std::size_t k = 0; k < 6; ++k) CHECK(max_abs_diff(out.y.row(k), ref[k]) <= 1e-12);
      }
}

TEST_CASE("the correction changes outputs when gaps differ from tau") {
  std::mt19937_64 rng(42);
  for (CellType type : {CellType::Rnn, CellType::Lstm, CellType::Gru}) {
    const CellParams cell = random_cell(type, rng, Activation::Identity);
    const Matrix x = random_matrix(4, 3, rng, 1.0);
    const auto a = forward_sequence(cell, x, std::vector<double>(4, 0.6));
    const auto b = forward_sequence(cell, x, std::vector<double>{0.6, 1.4, 0.2, 0.9});
    CHECK(max_abs_diff(a.y.row(0), b.y.row(0)) == 0.0);
    CHECK(max_abs_diff(a.y.row(1), b.y.row(1)) > 1e-6);
  }
}

TEST_CASE("one CAR-RNN step by hand") {
  RnnParams p = std::get<RnnParams>(make_cell_params({CellType::Rnn, 1, 1, 1}, 1.0));
  p.W_h = Matrix{{2.0}};
  p.U_h = Matrix{{0.5}};
  p.b_h = Vector{0.1};
  p.car_h.phi = Matrix{{-0.4}};
  p.car_h.sigma = Vector{0.3};
  const RnnStepCache s = rnn_step(p, Vector{1.5}, Vector{2.0}, 3.0);
  const double h_tilde = 2.0 * 1.5 + 0.5 * 2.0 + 0.1;
  CHECK(s.h_tilde[0] == doctest::Approx(h_tilde));
  CHECK(s.h[0] == doctest::Approx((1.0 + 2.0 * -0.4) * h_tilde + 2.0 * 0.3));
}

TEST_CASE("the LSTM output peephole reads the corrected cell") {
  std::mt19937_64 rng(43);
  CellParams cell = random_cell(CellType::Lstm, rng, Activation::Identity);
  auto& p = std::get<LstmParams>(cell);
  const Vector x = testing::random_vector(3, rng), h = testing::random_vector(5, rng),
               c = testing::random_vector(5, rng);
  const LstmStepCache s = lstm_step(p, x, h, c, 1.7);
  CHECK(s.c == car_correct(p.car_c, s.c_bar, 1.7));
  Vector o_bar = p.b_o;
  matvec_accumulate(p.W_o, x, o_bar);
  matvec_accumulate(p.U_o, h, o_bar);
  for (std::size_t m = 0; m < 5; ++m) o_bar[m] += p.V_o[m] * s.c[m];
  CHECK(max_abs_diff(o_bar.span(), s.o_bar.span()) <= 1e-15);
  CHECK(s.h == car_correct(p.car_h, hadamard(s.o, s.c_tilde), 1.7));
}

TEST_CASE("disabled peepholes ignore V") {
  std::mt19937_64 rng(44);
  CellParams a = random_cell(CellType::Lstm, rng, Activation::Identity, false);
  CellParams b = a;
  std::get<LstmParams>(b).V_f[0] += 3.0;
  std::get<LstmParams>(b).V_o[2] -= 3.0;
  const Matrix x = random_matrix(4, 3, rng);
  const std::vector<double> gaps{0.5, 1.0, 0.7, 2.0};
  CHECK(forward_sequence(a, x, gaps).y == forward_sequence(b, x, gaps).y);
}

TEST_CASE("advance reproduces the sequence forward pass") {
  std::mt19937_64 rng(45);
  for (CellType type : {CellType::Rnn, CellType::Lstm, CellType::Gru}) {
    const CellParams cell = random_cell(type, rng, Activation::Tanh);
    const Matrix x = random_matrix(5, 3, rng);
    const std::vector<double> gaps{0.3, 1.1, 0.6, 0.9, 2.0};
    const SequenceOutput out = forward_sequence(cell, x, gaps);
    CellState state = CellState::zeros(cell);
    for (std::size_t k = 0; k < 5; ++k) {
      const Vector y = advance(cell, state, x.row_vector(k), gaps[k]);
      CHECK(max_abs_diff(y.span(), out.y.row(k)) == 0.0);
    }
  }
}

TEST_CASE("tensor inventory, shapes and decay flags") {
  const CellParams lstm = make_cell_params({CellType::Lstm, 4, 6, 3}, 0.5);
  std::set<std::string> names;
  for (const auto& t : tensors(lstm)) {
    names.insert(std::string(t.name));
    for (double v : t.values) CHECK(v == 0.0);
    const char c = t.name[0];
    CHECK(t.decays == (c == 'W' || c == 'U' || c == 'V' || c == 'P'));
    CHECK(t.values.size() == t.rows * t.cols);
    if (t.name == "W_f") CHECK((t.rows == 6 && t.cols == 4));
    if (t.name == "V_o") CHECK((t.rows == 6 && t.cols == 1));
    if (t.name == "W_y") CHECK((t.rows == 3 && t.cols == 6));
  }
  CHECK(names.size() == 21);
  CHECK(names.count("Phi_c"));
  CHECK(tensors(make_cell_params({CellType::Rnn, 2, 3, 2}, 1.0)).size() == 7);
  CHECK(tensors(make_cell_params({CellType::Gru, 2, 3, 2}, 1.0)).size() == 13);
}

TEST_CASE("tau is shared by every CAR layer") {
  CellParams lstm = make_cell_params({CellType::Lstm, 2, 3, 2}, 0.5);
  set_cell_tau(lstm, 0.8);
  CHECK(cell_tau(lstm) == 0.8);
  CHECK(std::get<LstmParams>(lstm).car_c.tau == 0.8);
  CHECK(cell_type(lstm) == CellType::Lstm);
}

TEST_CASE("forward rejects mismatched shapes and exploding states") {
  std::mt19937_64 rng(46);
  CellParams cell = random_cell(CellType::Rnn, rng, Activation::Identity);
  CHECK_THROWS_AS(forward_sequence(cell, Matrix(3, 2), std::vector<double>(3, 1.0)), DimensionError);
  CHECK_THROWS_AS(forward_sequence(cell, Matrix(3, 3), std::vector<double>(2, 1.0)), DimensionError);
  auto& r = std::get<RnnParams>(cell);
  r.car_h.phi = Matrix::identity(5);
  r.car_h.phi *= 1e200;
  try {
    forward_sequence(cell, random_matrix(3, 3, rng), std::vector<double>(3, 5.0));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}
