#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "carrnn/numerics.hpp"
#include "support.hpp"

using namespace carrnn;
using carrnn::testing::random_matrix;
using carrnn::testing::random_vector;

TEST_CASE("matmul agrees with a triple loop") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t r = 1 + rng() % 5, k = 1 + rng() % 5, c = 1 + rng() % 5;
    const Matrix a = random_matrix(r, k, rng), b = random_matrix(k, c, rng);
    const Matrix p = matmul(a, b);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::size_t q = 0; q < k; ++q) s += a(i, q) * b(q, j);
        CHECK(p(i, j) == doctest::Approx(s).epsilon(1e-14));
      }
  }
}

TEST_CASE("matvec and its transpose satisfy <Ax, y> = <x, Aᵀy>") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(4, 3, rng);
    const Vector x = random_vector(3, rng), y = random_vector(4, rng);
    const Vector ax = matvec(a, x), aty = matvec_transposed(a, y);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < 4; ++i) lhs += ax[i] * y[i];
    for (std::size_t i = 0; i < 3; ++i) rhs += x[i] * aty[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-13));
  }
}

TEST_CASE("add_outer accumulates a scaled rank-one update") {
  Matrix a(2, 3, 1.0);
  add_outer(a, Vector{1.0, 2.0}, Vector{3.0, 4.0, 5.0}, 0.5);
  CHECK(a(0, 0) == 2.5);
  CHECK(a(1, 2) == 6.0);
}

TEST_CASE("shape mismatches raise DimensionError") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), DimensionError);
  CHECK_THROWS_AS(matvec(Matrix(2, 3), Vector(2)), DimensionError);
  CHECK_THROWS_AS(hadamard(Vector(2), Vector(3)), DimensionError);
}

TEST_CASE("sigmoid is stable at extreme arguments") {
  CHECK(activate(Activation::Sigmoid, 800.0) == 1.0);
  CHECK(activate(Activation::Sigmoid, -800.0) >= 0.0);
  CHECK(std::isfinite(activate(Activation::Sigmoid, -800.0)));
  CHECK(activate(Activation::Sigmoid, 0.0) == 0.5);
}

TEST_CASE("activation derivatives match central differences") {
  for (Activation a : {Activation::Identity, Activation::Tanh, Activation::Sigmoid})
    for (double x : {-2.0, -0.3, 0.0, 0.7, 3.0}) {
      const double h = 1e-6;
      const double fd = (activate(a, x + h) - activate(a, x - h)) / (2 * h);
      CHECK(activate_deriv(a, x) == doctest::Approx(fd).epsilon(1e-8));
    }
}

TEST_CASE("activation names round-trip") {
  for (Activation a : {Activation::Identity, Activation::Tanh, Activation::Sigmoid})
    CHECK(parse_activation(to_string(a)) == a);
  CHECK_THROWS(parse_activation("relu6"));
}

TEST_CASE("require_finite names the offending quantity") {
  Vector v{1.0, std::numeric_limits<double>::quiet_NaN()};
  try {
    require_finite(v, "hidden state");
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("hidden state") != std::string::npos);
  }
}
