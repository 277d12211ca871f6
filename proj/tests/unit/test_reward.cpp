#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "design_lab/errors.hpp"
#include "design_lab/random.hpp"
#include "design_lab/reward.hpp"
#include "doctest.h"

using namespace design_lab;
using doctest::Approx;

namespace {

FeatureSchema one_slider() { return FeatureSchema({{"x", Block::dimension, "x", 0.5}}, {}); }

// Two sliders and a three-option dropdown.
FeatureSchema reduced_schema() {
  return FeatureSchema({{"a", Block::dimension, "a", 0.5}, {"b", Block::aesthetic, "b", 0.5}},
                       {{"kind", {"none", "p", "q"}, Block::type}});
}

RewardModel uniform_model(const FeatureSchema& s, double mean, double sd) {
  RewardModel m;
  m.goal = "cheerful";
  m.continuous.assign(s.continuous_count(), {mean, sd});
  for (const auto& d : s.discrete()) m.discrete.emplace_back(d.options.size(), 1.0 / static_cast<double>(d.options.size()));
  return m;
}

DesignState random_state(const FeatureSchema& s, Rng& rng) {
  DesignState st;
  for (std::size_t c = 0; c < s.continuous_count(); ++c) st.continuous.push_back(uniform01(rng));
  for (const auto& d : s.discrete()) {
    st.discrete.push_back(std::uniform_int_distribution<std::size_t>(0, d.options.size() - 1)(rng));
  }
  return st;
}

}  // namespace

TEST_CASE("fit recovers a slider sampled from N(0.3, 0.05) at n = 500") {
  const auto s = one_slider();
  std::mt19937_64 gen(99);
  std::normal_distribution<double> n(0.3, 0.05);
  DesignDataset ds{"cheerful", {}, {}};
  for (int i = 0; i < 500; ++i) ds.designs.push_back({{std::clamp(n(gen), 0.0, 1.0)}, {}});
  const auto m = fit_goal_aligned(s, ds);
  CHECK(std::abs(m.continuous[0].mean - 0.3) <= 0.01);
  CHECK(std::abs(m.continuous[0].stddev - 0.05) <= 0.01);
}

TEST_CASE("add-one smoothing of counts (50, 30, 20)") {
  const auto s = FeatureSchema({}, {{"kind", {"none", "p", "q"}, Block::type}});
  DesignDataset ds{"cheerful", {}, {}};
  for (int i = 0; i < 50; ++i) ds.designs.push_back({{}, {0}});
  for (int i = 0; i < 30; ++i) ds.designs.push_back({{}, {1}});
  for (int i = 0; i < 20; ++i) ds.designs.push_back({{}, {2}});
  const auto m = fit_goal_aligned(s, ds);
  CHECK(m.discrete[0][0] == Approx(51.0 / 103.0).epsilon(1e-15));
  CHECK(m.discrete[0][1] == Approx(31.0 / 103.0).epsilon(1e-15));
  CHECK(m.discrete[0][2] == Approx(21.0 / 103.0).epsilon(1e-15));
  CHECK(m.discrete[0][0] == Approx(0.4951).epsilon(1e-4));
}

TEST_CASE("identical or single designs fall back to the sigma floor") {
  const auto s = default_chair_schema();
  auto st = initial_state(s);
  st.continuous[3] = 0.71;
  DesignDataset same{"cheerful", std::vector<DesignState>(7, st), {}};
  const auto m = fit_goal_aligned(s, same);
  for (std::size_t c = 0; c < s.continuous_count(); ++c) {
    CHECK(m.continuous[c].mean == st.continuous[c]);
    CHECK(m.continuous[c].stddev == kSigmaFloor);
  }
  DesignDataset one{"cheerful", {st}, {}};
  for (const auto& p : fit_goal_aligned(s, one).continuous) CHECK(p.stddev == kSigmaFloor);
  CHECK_THROWS_AS(fit_goal_aligned(s, DesignDataset{"cheerful", {}, {}}), EstimationError);
}

TEST_CASE("fit is invariant to dataset order") {
  const auto s = default_chair_schema();
  Rng rng(4);
  DesignDataset ds{"unique", {}, {}};
  for (int i = 0; i < 150; ++i) ds.designs.push_back(random_state(s, rng));
  const auto a = fit_goal_aligned(s, ds);
  std::shuffle(ds.designs.begin(), ds.designs.end(), rng);
  const auto b = fit_goal_aligned(s, ds);
  CHECK(a == b);
}

TEST_CASE("goal-agnostic sampling: deterministic, 56 parameters, valid") {
  const auto s = default_chair_schema();
  const auto a = sample_goal_agnostic(s, 17);
  CHECK(a == sample_goal_agnostic(s, 17));
  CHECK(a.parameter_count() == 56);
  CHECK(a.kind == RewardKind::goal_agnostic);
  CHECK(a.seed == 17u);
  for (const auto& p : a.continuous) {
    CHECK(p.mean >= 0.0);
    CHECK(p.mean <= 1.0);
    CHECK(p.stddev >= kSigmaFloor);
    CHECK(p.stddev <= 1.0);
  }
  for (const auto& theta : a.discrete) {
    double total = 0;
    for (double t : theta) {
      CHECK(t > 0.0);
      total += t;
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
  validate_model(s, a);
}

TEST_CASE("different agnostic seeds give different optimal designs") {
  const auto s = default_chair_schema();
  int differ = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto a = sample_goal_agnostic(s, 1000 + 2 * i);
    const auto b = sample_goal_agnostic(s, 1001 + 2 * i);
    differ += optimal_design(s, a) != optimal_design(s, b);
  }
  CHECK(differ >= 99);
}

TEST_CASE("log-likelihood closed form: 18 x N(0.5, 0.1), uniform categoricals") {
  const auto s = default_chair_schema();
  const auto m = uniform_model(s, 0.5, 0.1);
  auto st = initial_state(s);
  std::fill(st.continuous.begin(), st.continuous.end(), 0.5);
  const double expected =
      18.0 * std::log(1.0 / (0.1 * std::sqrt(2.0 * std::numbers::pi))) + std::log(1.0 / 3) + std::log(1.0 / 8) +
      std::log(1.0 / 9);
  CHECK(log_likelihood(m, st) == Approx(expected).epsilon(1e-12));
  CHECK(log_likelihood(m, st) == Approx(19.5303).epsilon(1e-5));

  // One standard deviation away costs exactly 0.5.
  auto moved = st;
  moved.continuous[4] = 0.6;
  CHECK(log_likelihood(m, moved) - log_likelihood(m, st) == Approx(-0.5).epsilon(1e-9));
}

TEST_CASE("log-likelihood is additive across features") {
  const auto s = default_chair_schema();
  const auto m = sample_goal_agnostic(s, 5);
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    const auto st = random_state(s, rng);
    auto other = st;
    const auto c = std::uniform_int_distribution<std::size_t>(0, 17)(rng);
    other.continuous[c] = uniform01(rng);
    const double delta = log_likelihood(m, other) - log_likelihood(m, st);
    const double term =
        gaussian_log_density(other.continuous[c], m.continuous[c]) - gaussian_log_density(st.continuous[c], m.continuous[c]);
    CHECK(delta == Approx(term).epsilon(1e-9));
  }
}

TEST_CASE("log-space likelihood matches a linear-space product on a reduced schema") {
  const auto s = reduced_schema();
  Rng rng(21);
  for (int k = 0; k < 5; ++k) {
    const auto m = sample_goal_agnostic(s, 300 + k);
    for (int i = 0; i < 200; ++i) {
      const auto st = random_state(s, rng);
      double product = 1.0;
      for (std::size_t c = 0; c < 2; ++c) {
        const double mu = m.continuous[c].mean, sd = m.continuous[c].stddev;
        const double z = (st.continuous[c] - mu) / sd;
        product *= std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
      }
      product *= m.discrete[0][st.discrete[0]];
      CHECK(std::abs(log_likelihood(m, st) - std::log(product)) <= 1e-9);
    }
  }
}

TEST_CASE("score normalisation examples") {
  const ScoreCalibration cal{-10.0, 30.0};
  CHECK(score_from_log_likelihood(cal, 19.5303) == 74);
  CHECK(score_from_log_likelihood(cal, 35.0) == 100);
  CHECK(score_from_log_likelihood(cal, -10.0) == 0);
  CHECK(score_from_log_likelihood(cal, -50.0) == 0);
  CHECK(score_from_log_likelihood(cal, 30.0) == 100);
  // 100 * 0.125 = 12.5 rounds half up
  CHECK(score_from_log_likelihood(cal, -5.0) == 13);
}

TEST_CASE("calibration is the min/max over the reference") {
  const auto s = default_chair_schema();
  const auto m = sample_goal_agnostic(s, 8);
  Rng rng(1);
  std::vector<DesignState> ref;
  for (int i = 0; i < 300; ++i) ref.push_back(random_state(s, rng));
  const auto cal = calibrate(m, ref);
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& d : ref) {
    lo = std::min(lo, log_likelihood(m, d));
    hi = std::max(hi, log_likelihood(m, d));
  }
  CHECK(cal.logl_min == lo);
  CHECK(cal.logl_max == hi);
  CHECK_THROWS_AS(calibrate(m, std::vector<DesignState>(3, ref[0])), EstimationError);
  CHECK_THROWS_AS(calibrate(m, std::vector<DesignState>{}), EstimationError);
}

TEST_CASE("scores are integers in [0,100] and monotone in log-likelihood") {
  const auto s = default_chair_schema();
  const auto cm = make_goal_agnostic(s, 44);
  Rng rng(2);
  std::vector<std::pair<double, int>> pts;
  for (int i = 0; i < 2000; ++i) {
    const auto st = random_state(s, rng);
    const int sc = score(cm, st);
    CHECK(sc >= 0);
    CHECK(sc <= 100);
    pts.emplace_back(log_likelihood(cm.model, st), sc);
  }
  std::sort(pts.begin(), pts.end());
  for (std::size_t i = 1; i < pts.size(); ++i) CHECK(pts[i - 1].second <= pts[i].second);
}

TEST_CASE("optimal design: clamped means and argmax options") {
  const auto s = reduced_schema();
  auto m = uniform_model(s, 0.5, 0.2);
  m.continuous[0].mean = 1.2;
  m.continuous[1].mean = -0.3;
  const auto best = optimal_design(s, m);
  CHECK(best.continuous[0] == 1.0);
  CHECK(best.continuous[1] == 0.0);
  CHECK(best.discrete[0] == 0);  // uniform tie goes to the first option
  m.discrete[0] = {0.2, 0.5, 0.3};
  CHECK(optimal_design(s, m).discrete[0] == 1);
}

TEST_CASE("no random design beats the optimal design (100,000 samples)") {
  const auto s = default_chair_schema();
  const auto m = sample_goal_agnostic(s, 2024);
  const double best = log_likelihood(m, optimal_design(s, m));
  const auto designs = sample_uniform_designs(s, 100000, 7);
  double seen = -INFINITY;
  for (const auto& d : designs) seen = std::max(seen, log_likelihood(m, d));
  CHECK(seen <= best);
}

TEST_CASE("aligned models calibrate on their training set; the optimum scores 100") {
  const auto s = default_chair_schema();
  Rng rng(31);
  DesignDataset ds{"dependable", {}, {}};
  std::normal_distribution<double> n(0.0, 0.05);
  for (int i = 0; i < 120; ++i) {
    auto st = random_state(s, rng);
    for (auto& x : st.continuous) x = std::clamp(0.6 + n(rng), 0.0, 1.0);
    ds.designs.push_back(st);
  }
  const auto cm = make_goal_aligned(s, ds);
  CHECK(cm.reference.source == "training_dataset");
  CHECK(cm.reference.size == 120);
  CHECK(score(cm, optimal_design(s, cm.model)) == 100);
  int lo = 100, hi = 0;
  for (const auto& d : ds.designs) {
    lo = std::min(lo, score(cm, d));
    hi = std::max(hi, score(cm, d));
  }
  CHECK(lo == 0);
  CHECK(hi == 100);
}

TEST_CASE("agnostic calibration uses the fixed uniform reference") {
  const auto s = default_chair_schema();
  const auto cm = make_goal_agnostic(s, 9, "cheerful");
  CHECK(cm.reference.source == "uniform_random");
  CHECK(cm.reference.size == kAgnosticReferenceSize);
  CHECK(cm.reference.seed == kAgnosticReferenceSeed);
  CHECK(cm.calibration == calibrate(cm.model, sample_uniform_designs(s, kAgnosticReferenceSize, kAgnosticReferenceSeed)));
  CHECK(score(cm, optimal_design(s, cm.model)) == 100);
}

TEST_CASE("model files round-trip losslessly") {
  const auto s = default_chair_schema();
  const auto cm = make_goal_agnostic(s, 123456789012345ULL, "unique");
  const auto j = model_to_json(s, cm);
  CHECK(j.at("parameter_count") == 56);
  const auto back = model_from_json(s, nlohmann::json::parse(j.dump()));
  CHECK(back == cm);
  CHECK(fingerprint(s, back) == fingerprint(s, cm));
  CHECK(fingerprint(s, cm) != fingerprint(s, make_goal_agnostic(s, 123456789012346ULL, "unique")));

  const auto path = (std::filesystem::temp_directory_path() / "design_lab_model_rt.json").string();
  save_model(s, cm, path);
  CHECK(load_model(s, path) == cm);
  std::filesystem::remove(path);
}

TEST_CASE("malformed models are rejected") {
  const auto s = default_chair_schema();
  auto j = model_to_json(s, make_goal_agnostic(s, 1));
  j["continuous_params"][0]["std"] = -1.0;
  CHECK_THROWS_AS(model_from_json(s, j), ValidationError);
  auto k = model_to_json(s, make_goal_agnostic(s, 1));
  k["discrete_params"][0]["theta"] = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(model_from_json(s, k), ValidationError);
}

TEST_CASE("datasets round-trip and report the failing line") {
  const auto s = default_chair_schema();
  Rng rng(3);
  DesignDataset ds{"cheerful", {}, {}};
  for (int i = 0; i < 5; ++i) {
    ds.designs.push_back(random_state(s, rng));
    ds.ids.push_back("d" + std::to_string(i));
  }
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = (dir / "design_lab_ds_rt.jsonl").string();
  write_dataset(s, ds, path);
  const auto back = read_dataset(s, path);
  CHECK(back.goal == "cheerful");
  CHECK(back.ids == ds.ids);
  REQUIRE(back.designs.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(back.designs[i] == ds.designs[i]);

  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), {});
  in.close();
  const auto pos = text.find('\n', text.find('\n', text.find('\n') + 1) + 1);  // end of line 3
  text.insert(pos + 1, "{not json}\n");
  std::ofstream(path) << text;
  try {
    read_dataset(s, path);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
  }
  std::filesystem::remove(path);
}
