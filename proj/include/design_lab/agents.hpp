#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "design_lab/reward.hpp"
#include "design_lab/schema.hpp"
#include "design_lab/session.hpp"
#include "json.hpp"

namespace design_lab {

// Sets each feature in turn to the value that maximises the shown score.
struct GreedyCoordinateAscent {
  std::uint64_t sweep_seed = 0;
  std::size_t sweeps = 2;
  // Slider resolution of the golden-section refinement.
  double tolerance = 0.01;
};

// Uniform single-feature perturbations, ignoring any feedback.
struct RandomWalk {
  double step_scale = 0.25;  // in (0,1]
  std::uint64_t seed = 0;
};

enum class Objective { shown_score, internal_goal_model };

// Metropolis-style follower: proposes single-feature changes and keeps them
// with probability min(1, exp(delta / temperature)). With the shown score,
// delta is in score points and a rejected move is undone with a second
// action. With the internal model, delta is in log-likelihood units and
// proposals are weighed privately, so only accepted moves reach the session.
struct SoftmaxFollower {
  double temperature = 5.0;
  Objective objective = Objective::shown_score;
  std::uint64_t seed = 0;
  double proposal_scale = 0.15;
};

using AgentPolicy = std::variant<GreedyCoordinateAscent, RandomWalk, SoftmaxFollower>;

void validate_policy(const AgentPolicy& policy);
std::string policy_name(const AgentPolicy& policy);
nlohmann::json policy_to_json(const AgentPolicy& policy);
AgentPolicy policy_from_json(const nlohmann::json& j);

struct AgentRunConfig {
  std::size_t action_budget = 100;
  std::int64_t start_ms = 0;
  std::int64_t action_interval_ms = 1000;
  // Save after every `save_every` edits; 0 disables periodic saves.
  std::size_t save_every = 0;
  // Save once more before returning if the phase minimum is not yet met.
  bool ensure_min_saves = true;
  // The agent's own sense of the goal; required by internal_goal_model.
  std::shared_ptr<const CalibratedModel> internal_model;
};

struct AgentRunResult {
  std::size_t actions = 0;
  std::int64_t end_ms = 0;
  // Greedy only: shown score after each completed feature setting.
  std::vector<int> trajectory;
};

// Drives `session` within its current phase until the budget is spent or
// the phase changes. Actions are timed start_ms, start_ms + interval, ...
AgentRunResult run_agent_in_phase(const AgentPolicy& policy, Session& session, const AgentRunConfig& config,
                                  std::uint64_t seed);

// Same, returning the session's log afterwards.
SessionLog run_agent(const AgentPolicy& policy, Session& session, const AgentRunConfig& config, std::uint64_t seed);

// Generative per-feature parameters for synthesising pilot designs.
struct GoalProfile {
  std::string goal;
  std::vector<GaussianParams> continuous;
  std::vector<std::vector<double>> discrete;
};

void validate_profile(const FeatureSchema& schema, const GoalProfile& profile);
nlohmann::json profile_to_json(const FeatureSchema& schema, const GoalProfile& profile);
GoalProfile profile_from_json(const FeatureSchema& schema, const nlohmann::json& j);

// Synthetic stand-ins for the cheerful / dependable / unique pilot pools on
// the default chair schema, plus a broad "custom" (personal taste) profile.
GoalProfile builtin_goal_profile(const FeatureSchema& schema, const std::string& goal);
// The three extrinsic goals.
std::vector<std::string> builtin_goals();
// Every goal label a model may carry.
std::vector<std::string> known_goals();

DesignDataset generate_pilot_dataset(const FeatureSchema& schema, const GoalProfile& profile, std::size_t n,
                                     std::uint64_t seed);

// A simulated participant: one policy per phase.
struct DesignerSpec {
  AgentPolicy practice = RandomWalk{};
  AgentPolicy baseline = SoftmaxFollower{0.5, Objective::internal_goal_model, 0, 0.5};
  AgentPolicy reward = SoftmaxFollower{2.0, Objective::shown_score, 0, 0.15};
  std::size_t actions_per_phase = 150;
  std::int64_t action_interval_ms = 2000;
  std::size_t save_every = 40;
  std::shared_ptr<const CalibratedModel> internal_model;
};

// Runs all three phases to completion, ticking through phase boundaries.
SessionLog simulate_session(Session& session, const DesignerSpec& designer, std::uint64_t seed);

}  // namespace design_lab
