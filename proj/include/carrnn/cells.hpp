#pragma once

#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "carrnn/car.hpp"
#include "carrnn/numerics.hpp"

namespace carrnn {

enum class CellType { Rnn, Lstm, Gru };

std::string_view to_string(CellType type);

/// Mutable view of one learnable tensor. Vectors are reported as rows×1.
struct TensorRef {
  std::string_view name;
  std::span<double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool decays = false;  // weight decay applies (W/U/V/Φ), not to biases or ς
};

struct ConstTensorRef {
  std::string_view name;
  std::span<const double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool decays = false;
};

struct RnnParams {
  Matrix W_h, U_h;
  Vector b_h;
  CarLayer car_h;
  Matrix W_y;
  Vector b_y;
  Activation act_h = Activation::Identity;
  Activation act_y = Activation::Identity;
};

/// Peephole LSTM. V_f, V_i, V_o hold the diagonals of the peephole matrices.
struct LstmParams {
  Matrix W_f, W_i, W_z, W_o;
  Matrix U_f, U_i, U_z, U_o;
  Vector V_f, V_i, V_o;
  Vector b_f, b_i, b_z, b_o;
  CarLayer car_h, car_c;
  Matrix W_y;
  Vector b_y;
  bool peepholes = true;
  Activation act_g = Activation::Sigmoid;
  Activation act_c = Activation::Tanh;
  Activation act_h = Activation::Identity;
  Activation act_y = Activation::Identity;
};

struct GruParams {
  Matrix W_z, W_r, W_c;
  Matrix U_z, U_r, U_c;
  Vector b_z, b_r, b_c;
  CarLayer car_h;
  Matrix W_y;
  Vector b_y;
  Activation act_g = Activation::Sigmoid;
  Activation act_h = Activation::Identity;
  Activation act_y = Activation::Identity;
};

using CellParams = std::variant<RnnParams, LstmParams, GruParams>;

struct CellShape {
  CellType type = CellType::Gru;
  std::size_t inputs = 0;   // N (or N+1 with a concatenated gap column)
  std::size_t hidden = 0;   // M
  std::size_t outputs = 0;  // Q
};

/// All-zero parameters of the given shape.
CellParams make_cell_params(const CellShape& shape, double tau);

CellType cell_type(const CellParams& p);
CellShape cell_shape(const CellParams& p);
double cell_tau(const CellParams& p);
/// Sets τ on every CAR layer of the cell.
void set_cell_tau(CellParams& p, double tau);

std::vector<TensorRef> tensors(CellParams& p);
std::vector<ConstTensorRef> tensors(const CellParams& p);

struct RnnStepCache {
  Vector x, h_prev;
  Vector h_bar, h_tilde, h;
  double delta_t = 0.0;
};

struct LstmStepCache {
  Vector x, h_prev, c_prev;
  Vector f_bar, f, i_bar, i, z_bar, z;
  Vector c_bar;    // regularized cell before activation
  Vector c_tilde;  // activated cell
  Vector c;        // corrected cell
  Vector o_bar, o;
  Vector h_tilde, h;
  double delta_t = 0.0;
};

struct GruStepCache {
  Vector x, h_prev;
  Vector z_bar, z, r_bar, r;
  Vector c_bar, c_tilde;
  Vector h_tilde, h;
  double delta_t = 0.0;
};

RnnStepCache rnn_step(const RnnParams& p, const Vector& x, const Vector& h_prev, double delta_t);
LstmStepCache lstm_step(const LstmParams& p, const Vector& x, const Vector& h_prev,
                        const Vector& c_prev, double delta_t);
GruStepCache gru_step(const GruParams& p, const Vector& x, const Vector& h_prev, double delta_t);

/// y = σ_y(W_y·h + b_y); `y_bar` receives the pre-activation when non-null.
Vector output_layer(const Matrix& W_y, const Vector& b_y, Activation act_y, const Vector& h,
                    Vector* y_bar = nullptr);
Vector output_layer(const CellParams& p, const Vector& h, Vector* y_bar = nullptr);

struct ForwardCache {
  std::variant<std::vector<RnnStepCache>, std::vector<LstmStepCache>, std::vector<GruStepCache>>
      steps;
  Matrix y_bar;  // T×Q pre-activation outputs

  std::size_t size() const;
};

struct SequenceOutput {
  Matrix y;  // T×Q
  ForwardCache cache;
};

/// Rolls the cell over already masked-and-scaled inputs from a zero initial state.
SequenceOutput forward_sequence(const CellParams& p, const Matrix& inputs,
                                std::span<const double> delta_t);

/// Recurrent state carried between single steps (c is unused by RNN and GRU).
struct CellState {
  Vector h, c;
  static CellState zeros(const CellParams& p);
};

/// Advances `state` by one step and returns the output y.
Vector advance(const CellParams& p, CellState& state, const Vector& x, double delta_t);

}  // namespace carrnn
