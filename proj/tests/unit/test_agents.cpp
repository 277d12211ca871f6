#include <algorithm>
#include <optional>

#include "design_lab/agents.hpp"
#include "design_lab/errors.hpp"
#include "doctest.h"

using namespace design_lab;

namespace {

const auto kSchema = std::make_shared<const FeatureSchema>(default_chair_schema());

Session agnostic_session(std::uint64_t seed, const std::string& goal = "cheerful") {
  SessionConfig cfg;
  cfg.goal = goal;
  cfg.reward_kind = RewardKind::goal_agnostic;
  cfg.agnostic_seed = seed;
  cfg.block_order_seed = seed;
  return create_session(kSchema, cfg, std::make_shared<const CalibratedModel>(make_goal_agnostic(*kSchema, seed, goal)));
}

// Saves twice per phase until the reward phase opens.
void skip_to_reward(Session& s) {
  std::int64_t t = 0;
  while (s.phase() != Phase::reward) {
    s.submit_action(Save{}, ++t);
    s.submit_action(Save{}, ++t);
    t = s.phase_deadline_ms();
    s.tick(t);
  }
}

std::shared_ptr<const CalibratedModel> aligned(const std::string& goal, std::uint64_t seed) {
  const auto ds = generate_pilot_dataset(*kSchema, builtin_goal_profile(*kSchema, goal), 220, seed);
  return std::make_shared<const CalibratedModel>(make_goal_aligned(*kSchema, ds));
}

}  // namespace

TEST_CASE("greedy trajectories never decrease") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    auto s = agnostic_session(seed);
    skip_to_reward(s);
    AgentRunConfig cfg;
    cfg.action_budget = 1000;
    cfg.start_ms = s.last_event_ms() + 250;
    cfg.action_interval_ms = 250;
    const auto r = run_agent_in_phase(GreedyCoordinateAscent{seed}, s, cfg, seed);
    CHECK(r.trajectory.size() == 42);
    CHECK(std::is_sorted(r.trajectory.begin(), r.trajectory.end()));
    CHECK(r.trajectory.back() == *s.current_score());
    CHECK(replay(*kSchema, s.log()).ok());
  }
}

TEST_CASE("greedy reaches at least 99 under goal-aligned models in two sweeps") {
  for (const auto& goal : builtin_goals()) {
    const auto model = aligned(goal, 70);
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      SessionConfig cfg;
      cfg.goal = goal;
      cfg.block_order_seed = seed;
      auto s = create_session(kSchema, cfg, model);
      DesignerSpec d;
      d.reward = GreedyCoordinateAscent{seed};
      d.actions_per_phase = 1000;
      d.action_interval_ms = 250;
      d.internal_model = model;
      const auto log = simulate_session(s, d, seed);
      std::optional<int> last;
      for (const auto& e : log.events) {
        if (e.score) last = e.score;
      }
      REQUIRE(last);
      CHECK_MESSAGE(*last >= 99, goal << " seed " << seed);
    }
  }
}

TEST_CASE("greedy refuses an unscored phase") {
  auto s = agnostic_session(3);
  CHECK_THROWS(run_agent_in_phase(GreedyCoordinateAscent{}, s, AgentRunConfig{}, 0));
}

TEST_CASE("random walk is reproducible from its seed") {
  auto a = agnostic_session(4);
  auto b = agnostic_session(4);
  AgentRunConfig cfg;
  cfg.action_budget = 60;
  cfg.start_ms = 1000;
  run_agent_in_phase(RandomWalk{0.3, 9}, a, cfg, 5);
  run_agent_in_phase(RandomWalk{0.3, 9}, b, cfg, 5);
  CHECK(log_to_jsonl(*kSchema, a.log()) == log_to_jsonl(*kSchema, b.log()));
  auto c = agnostic_session(4);
  run_agent_in_phase(RandomWalk{0.3, 9}, c, cfg, 6);
  CHECK(log_to_jsonl(*kSchema, a.log()) != log_to_jsonl(*kSchema, c.log()));
}

TEST_CASE("agents stop at the budget and meet the save minimum") {
  auto s = agnostic_session(5);
  AgentRunConfig cfg;
  cfg.action_budget = 25;
  cfg.start_ms = 1000;
  cfg.save_every = 0;
  const auto r = run_agent_in_phase(RandomWalk{}, s, cfg, 1);
  CHECK(r.actions == 25 + 2);  // two top-up saves
  CHECK(s.phase_state().saves == 2);
  CHECK(s.phase() == Phase::practice);
}

TEST_CASE("an internal follower works in a goal-agnostic session and submits only accepted moves") {
  auto s = agnostic_session(6);
  const auto internal = aligned("cheerful", 11);
  // Move the session into baseline, where the follower only has its own sense of the goal.
  std::int64_t t = 0;
  s.submit_action(Save{}, ++t);
  s.submit_action(Save{}, ++t);
  s.tick(s.phase_deadline_ms());
  REQUIRE(s.phase() == Phase::baseline);

  const double before = log_likelihood(internal->model, s.state());
  AgentRunConfig cfg;
  cfg.action_budget = 120;
  cfg.start_ms = s.last_event_ms() + 1000;
  cfg.action_interval_ms = 1000;
  cfg.internal_model = internal;
  run_agent_in_phase(SoftmaxFollower{0.5, Objective::internal_goal_model, 2, 0.5}, s, cfg, 3);
  CHECK(log_likelihood(internal->model, s.state()) > before);
  CHECK(replay(*kSchema, s.log()).ok());

  cfg.internal_model = nullptr;
  auto u = agnostic_session(6);
  CHECK_THROWS_AS(run_agent_in_phase(SoftmaxFollower{1.0, Objective::internal_goal_model}, u, cfg, 0), ValidationError);
}

TEST_CASE("a shown-score follower climbs the reward") {
  int improved = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto s = agnostic_session(seed + 40);
    skip_to_reward(s);
    const int start = *s.current_score();
    AgentRunConfig cfg;
    cfg.action_budget = 150;
    cfg.start_ms = s.last_event_ms() + 1000;
    run_agent_in_phase(SoftmaxFollower{2.0, Objective::shown_score, seed, 0.15}, s, cfg, seed);
    improved += *s.current_score() > start;
  }
  CHECK(improved >= 9);
}

TEST_CASE("simulated sessions complete with valid, replayable logs") {
  const auto internal = aligned("dependable", 12);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    auto s = agnostic_session(100 + seed, "dependable");
    DesignerSpec d;
    d.internal_model = internal;
    const auto log = simulate_session(s, d, seed);
    CHECK(s.status() == SessionStatus::completed);
    const auto r = replay(*kSchema, log);
    CHECK(r.ok());
    for (auto p : kPhaseOrder) {
      std::size_t saves = 0;
      for (const auto& e : log.events) saves += e.phase == p && e.kind == EventKind::save;
      CHECK(saves >= 2);
    }
  }
}

TEST_CASE("pilot datasets have the requested size and are deterministic") {
  const auto p = builtin_goal_profile(*kSchema, "cheerful");
  const auto a = generate_pilot_dataset(*kSchema, p, 223, 1000);
  CHECK(a.designs.size() == 223);
  CHECK(a.goal == "cheerful");
  for (const auto& d : a.designs) validate_state(*kSchema, d);
  const auto b = generate_pilot_dataset(*kSchema, p, 223, 1000);
  CHECK(a.designs == b.designs);
  CHECK_THROWS_AS(builtin_goal_profile(*kSchema, "sporty"), ValidationError);
  for (const auto& g : known_goals()) validate_profile(*kSchema, builtin_goal_profile(*kSchema, g));
}

TEST_CASE("policy and profile JSON round trips") {
  for (const AgentPolicy& p : {AgentPolicy{GreedyCoordinateAscent{4, 3, 0.02}}, AgentPolicy{RandomWalk{0.4, 8}},
                               AgentPolicy{SoftmaxFollower{1.5, Objective::internal_goal_model, 3, 0.2}}}) {
    const auto j = policy_to_json(p);
    CHECK(policy_to_json(policy_from_json(nlohmann::json::parse(j.dump()))) == j);
  }
  CHECK(policy_name(SoftmaxFollower{}) == "softmax_shown");
  CHECK_THROWS_AS(policy_from_json({{"type", "softmax"}, {"temperature", 0.0}}), ValidationError);
  CHECK_THROWS_AS(policy_from_json({{"type", "oracle"}}), ValidationError);
  CHECK_THROWS_AS(policy_from_json({{"type", "random_walk"}, {"step_scale", 2.0}}), ValidationError);

  const auto prof = builtin_goal_profile(*kSchema, "unique");
  const auto back = profile_from_json(*kSchema, nlohmann::json::parse(profile_to_json(*kSchema, prof).dump()));
  CHECK(back.continuous == prof.continuous);
  CHECK(back.discrete == prof.discrete);
}
