#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "carrnn/dataset.hpp"

using namespace carrnn;

namespace {

SporadicSeries series(std::string id, std::vector<Observation> obs) {
  return {std::move(id), std::move(obs), std::nullopt};
}

SporadicSeries random_series(std::mt19937_64& rng, std::size_t N) {
  std::uniform_real_distribution<double> gap(0.05, 2.0), val(-3, 3), unit(0, 1);
  SporadicSeries s{"r", {}, std::nullopt};
  double t = 0.0;
  const std::size_t visits = 2 + rng() % 10;
  for (std::size_t v = 0; v < visits; ++v) {
    bool any = false;
    for (std::size_t n = 0; n < N; ++n)
      if (unit(rng) < 0.6) {
        s.observations.push_back({t, n, val(rng)});
        any = true;
      }
    if (!any) s.observations.push_back({t, 0, val(rng)});
    t += gap(rng);
  }
  return s;
}

ProcessSpec diagonal_spec() {
  ProcessSpec spec;
  spec.n_subjects = 5;
  spec.drift = Matrix{{-0.5, 0.0}, {0.0, -1.0}};
  spec.bias = Vector{0.2, -0.1};
  spec.diffusion_chol = Matrix(2, 2);
  spec.initial_mean = Vector{1.0, -2.0};
  spec.initial_cov = Matrix(2, 2);
  spec.missing_prob = Vector{0.0, 0.0};
  spec.arrival_rate = 0.7;
  spec.horizon = 6.0;
  spec.seed = 3;
  return spec;
}

}  // namespace

TEST_CASE("hand-binned single feature") {
  const auto s = series("a", {{0.0, 0, 1.0}, {0.2, 0, 3.0}, {0.6, 0, 5.0}, {1.1, 0, 7.0}});
  const BinnedSequence b = bin_series(s, 1, 0.5);
  REQUIRE(b.steps() == 3);
  CHECK(b.values(0, 0) == 2.0);
  CHECK(b.values(1, 0) == 5.0);
  CHECK(b.values(2, 0) == 7.0);
  CHECK(b.rep_times[0] == doctest::Approx(0.1));
  CHECK(b.rep_times[1] == doctest::Approx(0.6));
  CHECK(b.rep_times[2] == doctest::Approx(1.1));
  for (double d : b.delta_t) CHECK(d == doctest::Approx(0.5));
}

TEST_CASE("regular grid gives constant gaps") {
  std::vector<Observation> obs;
  for (int k = 0; k < 8; ++k) obs.push_back({0.3 * k, 0, double(k)});
  const BinnedSequence b = bin_series(series("g", obs), 1, 0.3);
  REQUIRE(b.steps() == 8);
  for (double d : b.delta_t) CHECK(d == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("features at identical times share a bin with a full mask") {
  const auto s = series("b", {{0.0, 0, 1.0}, {0.0, 1, 2.0}, {1.0, 0, 3.0}, {1.0, 1, 4.0}});
  const BinnedSequence b = bin_series(s, 2, 0.5);
  REQUIRE(b.steps() == 2);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t n = 0; n < 2; ++n) CHECK(b.mask(k, n) == 1.0);
}

TEST_CASE("empty bins are dropped and widen the gap") {
  const auto s = series("c", {{0.0, 0, 1.0}, {0.1, 1, 1.0}, {2.2, 0, 3.0}});
  const BinnedSequence b = bin_series(s, 2, 0.5);
  REQUIRE(b.steps() == 2);
  CHECK(b.delta_t[0] == 0.5);
  CHECK(b.delta_t[1] == doctest::Approx(2.2 - 0.05));
  CHECK(b.mask(0, 0) == 1.0);
  CHECK(b.mask(0, 1) == 1.0);
  CHECK(b.mask(1, 1) == 0.0);
}

TEST_CASE("a single occupied bin is too short") {
  const auto s = series("d", {{0.0, 0, 1.0}, {0.1, 0, 2.0}});
  CHECK_THROWS_AS(bin_series(s, 1, 0.5), SequenceTooShort);
  CHECK_THROWS_AS(bin_series(s, 1, 0.0), std::invalid_argument);
}

TEST_CASE("binning invariants over random series") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const SporadicSeries s = random_series(rng, 3);
    const double tau = std::uniform_real_distribution<double>(0.005, 0.04)(rng);
    BinnedSequence b;
    try {
      b = bin_series(s, 3, tau);
    } catch (const SequenceTooShort&) {
      continue;
    }
    CHECK(b.delta_t[0] == tau);
    for (std::size_t k = 1; k < b.steps(); ++k) {
      CHECK(b.rep_times[k] > b.rep_times[k - 1]);
      CHECK(b.delta_t[k] > 0.0);
    }
    // with τ below the minimum gap, every observation lands in its own (bin, feature) cell
    double cells = 0.0;
    for (double m : b.mask.span()) cells += m;
    CHECK(cells == double(s.observations.size()));
    for (std::size_t k = 0; k < b.steps(); ++k) {
      double row = 0.0;
      for (std::size_t n = 0; n < 3; ++n) row += b.mask(k, n);
      CHECK(row >= 1.0);
    }
  }
}

TEST_CASE("validate_series rejects broken records") {
  CHECK_THROWS_AS(validate_series(series("x", {{-1.0, 0, 1.0}, {1.0, 0, 1.0}}), 1), DataError);
  CHECK_THROWS_AS(validate_series(series("x", {{0.0, 0, 1.0}, {0.0, 0, 2.0}, {1.0, 0, 1.0}}), 1),
                  DataError);
  CHECK_THROWS_AS(validate_series(series("x", {{0.0, 0, 1.0}, {0.0, 1, 2.0}}), 2), DataError);
  CHECK_THROWS_AS(validate_series(series("x", {{0.0, 3, 1.0}, {1.0, 0, 2.0}}), 2), DataError);
  CHECK_NOTHROW(validate_series(series("x", {{0.0, 0, 1.0}, {1.0, 1, 2.0}}), 2));
}

TEST_CASE("type-7 quantiles") {
  CHECK(quantile({1, 2, 3, 4}, 0.25) == doctest::Approx(1.75));
  CHECK(quantile({4, 1, 3, 2}, 0.75) == doctest::Approx(3.25));
  CHECK(quantile({0, 1, 2, 3, 4}, 0.5) == 2.0);
  CHECK(quantile({7}, 0.3) == 7.0);
}

TEST_CASE("standardizer statistics by hand") {
  const std::vector<SporadicSeries> train{
      series("a", {{0, 0, 1.0}, {1, 0, 2.0}, {2, 0, 3.0}, {3, 1, 10.0}, {4, 1, 20.0}})};
  const Standardizer st = fit_standardizer(train, 2);
  CHECK(st.mean[0] == doctest::Approx(2.0));
  CHECK(st.scale[0] == doctest::Approx(std::sqrt(2.0 / 3.0)));
  CHECK(st.time_iqr == doctest::Approx(2.0));
  CHECK(st.standardize(0, 1.0) == doctest::Approx(-1.0 / std::sqrt(2.0 / 3.0)));
  CHECK(st.transform_time(3.0) == doctest::Approx(1.5));
  CHECK(st.destandardize(1, st.standardize(1, 17.0)) == doctest::Approx(17.0));
}

TEST_CASE("standardized training data has zero mean and unit variance; refit is the identity") {
  std::mt19937_64 rng(12);
  std::vector<SporadicSeries> train;
  for (int i = 0; i < 30; ++i) train.push_back(random_series(rng, 3));
  const Standardizer st = fit_standardizer(train, 3);
  std::vector<SporadicSeries> z;
  for (const auto& s : train) z.push_back(st.transform(s));
  std::vector<double> sum(3), sq(3), cnt(3);
  for (const auto& s : z)
    for (const auto& o : s.observations) {
      sum[o.feature] += o.value;
      sq[o.feature] += o.value * o.value;
      cnt[o.feature] += 1;
    }
  for (int n = 0; n < 3; ++n) {
    CHECK(std::abs(sum[n] / cnt[n]) <= 1e-10);
    CHECK(std::abs(sq[n] / cnt[n] - 1.0) <= 1e-10);
  }
  const Standardizer again = fit_standardizer(z, 3);
  for (std::size_t i = 0; i < z.size(); ++i)
    for (std::size_t j = 0; j < z[i].observations.size(); ++j) {
      const Observation& o = z[i].observations[j];
      CHECK(std::abs(again.standardize(o.feature, o.value) - o.value) <= 1e-12);
    }
}

TEST_CASE("constant or unobserved features are named") {
  const std::vector<SporadicSeries> train{series("a", {{0, 0, 1.0}, {1, 0, 1.0}, {2, 1, 3.0}, {3, 1, 4.0}})};
  try {
    fit_standardizer(train, 2, {"ADAS", "MMSE"});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("ADAS") != std::string::npos);
  }
  CHECK_THROWS_AS(fit_standardizer(train, 3), DataError);
}

TEST_CASE("noiseless generator matches the closed-form solution") {
  const ProcessSpec spec = diagonal_spec();
  const auto data = generate_synthetic(spec);
  REQUIRE(data.size() == 5);
  const double phi[2] = {-0.5, -1.0}, bias[2] = {0.2, -0.1}, x0[2] = {1.0, -2.0};
  for (const auto& s : data) {
    CHECK(s.observations.size() >= 4);
    for (const auto& o : s.observations) {
      const double a = phi[o.feature], e = std::exp(a * o.time);
      const double expected = e * x0[o.feature] + (e - 1.0) / a * bias[o.feature];
      CHECK(std::abs(o.value - expected) <= 1e-10);
    }
  }
}

TEST_CASE("unit-drift example decays by e^-1 per unit time") {
  ProcessSpec spec = diagonal_spec();
  spec.drift = Matrix{{-1.0, 0.0}, {0.0, -1.0}};
  spec.bias = Vector{0.0, 0.0};
  spec.initial_mean = Vector{1.0, 1.0};
  for (const auto& s : generate_synthetic(spec))
    for (const auto& o : s.observations) CHECK(o.value == doctest::Approx(std::exp(-o.time)).epsilon(1e-12));
}

TEST_CASE("generator is deterministic and seed-sensitive") {
  ProcessSpec spec = diagonal_spec();
  spec.diffusion_chol = Matrix{{0.3, 0.0}, {0.1, 0.2}};
  spec.missing_prob = Vector{0.3, 0.3};
  CHECK(generate_synthetic(spec) == generate_synthetic(spec));
  ProcessSpec other = spec;
  other.seed = 4;
  CHECK_FALSE(generate_synthetic(spec) == generate_synthetic(other));
  for (const auto& s : generate_synthetic(spec)) CHECK_NOTHROW(validate_series(s, 2));
}

TEST_CASE("unstable or malformed process specs are refused") {
  ProcessSpec spec = diagonal_spec();
  spec.drift = Matrix{{0.2, 0.0}, {0.0, -1.0}};
  try {
    validate_process_spec(spec);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("eigenvalue") != std::string::npos);
  }
  spec = diagonal_spec();
  spec.diffusion_chol = Matrix{{0.1, 0.2}, {0.0, 0.1}};
  CHECK_THROWS_AS(validate_process_spec(spec), DataError);
  spec = diagonal_spec();
  spec.missing_prob = Vector{1.0, 0.0};
  CHECK_THROWS_AS(validate_process_spec(spec), DataError);
}

TEST_CASE("process spec text format") {
  const ProcessSpec spec = parse_process_spec(
      "# two features\n"
      "n_subjects = 7\n"
      "drift = -0.5, 0.2; 0.1, -0.4\n"
      "bias = 0.1 0.2\n"
      "missing_prob = 0.3\n"
      "seed = 9\n");
  CHECK(spec.n_subjects == 7);
  CHECK(spec.drift(0, 1) == 0.2);
  CHECK(spec.missing_prob == Vector{0.3, 0.3});
  CHECK(spec.initial_cov == Matrix::identity(2));
  CHECK(spec.seed == 9);
  CHECK_THROWS_AS(parse_process_spec("drift = -1\nwobble = 2\n"), DataError);
  CHECK_THROWS_AS(parse_process_spec("bias = 1\n"), DataError);
}

TEST_CASE("baseline fills") {
  BinnedSequence b;
  b.subject_id = "f";
  b.values = Matrix{{1.0, 0.0}, {0.0, 5.0}, {0.0, 0.0}};
  b.mask = Matrix{{1.0, 0.0}, {0.0, 1.0}, {0.0, 1.0}};
  b.rep_times = {0.0, 1.0, 3.0};
  b.delta_t = {1.0, 1.0, 2.0};
  const Vector fill{-7.0, -8.0};

  const BinnedSequence mean = apply_baseline_fill(b, FillMode::Mean, fill);
  CHECK(mean.values(1, 0) == -7.0);
  CHECK(mean.values(0, 1) == -8.0);
  for (double m : mean.mask.span()) CHECK(m == 1.0);

  const BinnedSequence fwd = apply_baseline_fill(b, FillMode::Forward, fill);
  CHECK(fwd.values(1, 0) == 1.0);
  CHECK(fwd.values(2, 0) == 1.0);
  CHECK(fwd.values(0, 1) == -8.0);  // nothing earlier to carry

  const BinnedSequence cat = apply_baseline_fill(b, FillMode::NearestConcat, fill);
  REQUIRE(cat.features() == 3);
  for (std::size_t k = 0; k < 3; ++k) CHECK(cat.values(k, 2) == b.delta_t[k]);
  CHECK(cat.values(0, 1) == -8.0);  // the later observation is never used

  CHECK(apply_baseline_fill(b, FillMode::None, fill).values == b.values);
  CHECK(parse_fill_mode("concat") == FillMode::NearestConcat);
  CHECK(parse_fill_mode(to_string(FillMode::Forward)) == FillMode::Forward);
}

TEST_CASE("csv round trip and errors") {
  CsvDataset d;
  d.feature_names = {"a", "b", "c"};
  d.series = {series("s1", {{0.0, 0, 0.1}, {0.5, 2, -1.0 / 3.0}, {1.25, 1, 1e-17}}),
              series("s2", {{0.0, 1, 2.0}, {3.0, 0, 4.5}})};
  const std::string text = format_csv(d);
  const CsvDataset back = parse_csv(text);
  CHECK(back.series.size() == 2);
  CHECK(format_csv(back) == text);
  CHECK(back.series[0].observations[1].value == -1.0 / 3.0);

  auto error_of = [](std::string_view t, std::optional<std::vector<std::string>> f = std::nullopt) {
    try {
      parse_csv(t, f);
    } catch (const DataError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(error_of("subject_id,time,feature,value\ns,0,a,1\ns,1,a,\n").find("line 3") != std::string::npos);
  CHECK(error_of("subject,time,feature,value\n").find("header") != std::string::npos);
  CHECK(error_of("subject_id,time,feature,value\ns,0,a,1\ns,1,z,2\n", std::vector<std::string>{"a"})
            .find("z") != std::string::npos);
  CHECK(error_of("subject_id,time,feature,value\ns,0,a,1\ns,0.5,a,2\n").empty());
  CHECK_THROWS_AS(read_csv("/definitely/not/here.csv"), DataError);
}

TEST_CASE("step sequences pair each binned row with the next") {
  BinnedSequence b;
  b.subject_id = "p";
  b.values = Matrix{{1.0, 0.0}, {2.0, 3.0}, {0.0, 4.0}, {5.0, 6.0}};
  b.mask = Matrix{{1.0, 0.0}, {1.0, 1.0}, {0.0, 1.0}, {1.0, 1.0}};
  b.rep_times = {0.0, 1.0, 2.5, 3.0};
  b.delta_t = {1.0, 1.0, 1.5, 0.5};
  const StepSequence s = make_step_sequence(b, FillMode::None, true, Vector(2));
  REQUIRE(s.steps() == 3);
  CHECK(s.delta_t == std::vector<double>{1.0, 1.5, 0.5});
  CHECK(s.target_times == std::vector<double>{1.0, 2.5, 3.0});
  CHECK(s.targets(0, 1) == 3.0);
  CHECK(s.target_mask(1, 0) == 0.0);
  // leading gap stays masked; the missing cell at row 2 is carried from row 1
  CHECK(s.input_mask(0, 1) == 0.0);
  REQUIRE(s.imputed.size() == 1);
  CHECK(s.imputed[0].step == 2);
  CHECK(s.imputed[0].feature == 0);
  CHECK(s.imputed[0].source_value == 2.0);
  CHECK(s.imputed[0].gap == doctest::Approx(1.5));
  CHECK(s.input_mask(2, 0) == 1.0);
  CHECK(s.inputs(2, 0) == 2.0);

  const StepSequence plain = make_step_sequence(b, FillMode::None, false, Vector(2));
  CHECK(plain.imputed.empty());
  CHECK(plain.input_mask(1, 0) == 1.0);
  CHECK(plain.input_mask(2, 0) == 0.0);
}

TEST_CASE("inputs never depend on later rows") {
  std::mt19937_64 rng(30);
  for (int trial = 0; trial < 100; ++trial) {
    const SporadicSeries s = random_series(rng, 3);
    BinnedSequence b;
    try {
      b = bin_series(s, 3, 0.01);
    } catch (const SequenceTooShort&) {
      continue;
    }
    for (FillMode mode : {FillMode::None, FillMode::Forward, FillMode::NearestConcat}) {
      const StepSequence base = make_step_sequence(b, mode, true, Vector(3));
      BinnedSequence changed = b;
      const std::size_t j = 1 + rng() % (b.steps() - 1);
      for (std::size_t n = 0; n < 3; ++n) {
        changed.values(j, n) += 100.0;
        changed.mask(j, n) = 1.0;
      }
      const StepSequence moved = make_step_sequence(changed, mode, true, Vector(3));
      // input row k < j predicts row k+1 ≤ j and must not see it
      for (std::size_t k = 0; k < j; ++k)
        for (std::size_t c = 0; c < base.inputs.cols(); ++c) {
          CHECK(moved.inputs(k, c) == base.inputs(k, c));
          CHECK(moved.input_mask(k, c) == base.input_mask(k, c));
        }
    }
  }
}
