#include "design_lab/agents.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "design_lab/errors.hpp"

namespace design_lab {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr double kInvPhi = 0.6180339887498949;  // 1/golden ratio
constexpr double kCoarseStep = 0.1;

std::uint64_t policy_seed(const AgentPolicy& policy) {
  return std::visit(overloaded{[](const GreedyCoordinateAscent& p) { return p.sweep_seed; },
                               [](const RandomWalk& p) { return p.seed; },
                               [](const SoftmaxFollower& p) { return p.seed; }},
                    policy);
}

// Owns the clock and budget for one run inside a single phase.
class PhaseDriver {
 public:
  PhaseDriver(Session& session, const AgentRunConfig& config)
      : session_(session),
        config_(config),
        phase_(session.phase()),
        phase_start_(session.phase_state().phase_start_ms),
        now_(std::max(config.start_ms, session.last_event_ms())) {}

  bool can_act() {
    if (actions_ >= config_.action_budget) return false;
    return in_phase_at(now_);
  }

  StepResult act(const Action& action) {
    auto result = session_.submit_action(action, now_);
    now_ += config_.action_interval_ms;
    ++actions_;
    if (!std::holds_alternative<Save>(action)) ++edits_since_save_;
    return result;
  }

  // Called where the policy is not mid-probe; saves on the periodic schedule.
  void settle() {
    if (config_.save_every > 0 && edits_since_save_ >= config_.save_every && can_act()) save();
  }

  void save() {
    session_.submit_action(Save{}, now_);
    now_ += config_.action_interval_ms;
    ++actions_;
    edits_since_save_ = 0;
  }

  // Top up to the phase minimum if time allows; ignores the budget.
  void finish() {
    if (!config_.ensure_min_saves) return;
    while (in_phase_at(now_) && session_.phase_state().saves < session_.config().min_saves) save();
  }

  const DesignState& state() const { return session_.state(); }
  std::optional<int> shown_score() const { return session_.current_score(); }
  const FeatureSchema& schema() const { return session_.schema(); }
  std::size_t actions() const { return actions_; }
  std::int64_t now() const { return now_; }

 private:
  bool in_phase_at(std::int64_t t) {
    session_.tick(t);
    return session_.active() && session_.phase() == phase_ && session_.phase_state().phase_start_ms == phase_start_;
  }

  Session& session_;
  const AgentRunConfig& config_;
  Phase phase_;
  std::int64_t phase_start_;
  std::int64_t now_;
  std::size_t actions_ = 0;
  std::size_t edits_since_save_ = 0;
};

class GreedyRunner {
 public:
  GreedyRunner(const GreedyCoordinateAscent& policy, PhaseDriver& driver, Rng& rng)
      : policy_(policy), driver_(driver), rng_(rng) {}

  std::vector<int> run() {
    if (!driver_.shown_score()) {
      throw std::logic_error("greedy coordinate ascent needs a scored (reward) phase");
    }
    const auto& schema = driver_.schema();
    const std::size_t n = schema.continuous_count() + schema.discrete_count();
    std::vector<std::size_t> order(n);
    for (std::size_t sweep = 0; sweep < policy_.sweeps; ++sweep) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng_);
      for (std::size_t f : order) {
        if (!driver_.can_act()) return trajectory_;
        const bool done = f < schema.continuous_count() ? optimise_continuous(f)
                                                        : optimise_discrete(f - schema.continuous_count());
        if (!done) return trajectory_;
        trajectory_.push_back(*driver_.shown_score());
        driver_.settle();
      }
    }
    return trajectory_;
  }

 private:
  struct Best {
    int score;
    double x;
  };

  // Returns false when the budget or phase ran out mid-search.
  bool optimise_continuous(std::size_t c) {
    const double start = driver_.state().continuous[c];
    Best best{*driver_.shown_score(), start};
    bool ok = true;
    auto probe = [&](double x) -> int {
      if (!ok || !driver_.can_act()) {
        ok = false;
        return -1;
      }
      const int s = *driver_.act(SetContinuous{c, x}).score;
      if (s > best.score) best = {s, x};
      return s;
    };

    // A coarse scan brackets the peak; the golden-section search refines it.
    for (int k = 0; k <= 10 && ok; ++k) {
      const double x = k * kCoarseStep;
      if (x != start) probe(x);
    }
    double lo = std::max(0.0, best.x - kCoarseStep);
    double hi = std::min(1.0, best.x + kCoarseStep);
    double x1 = hi - kInvPhi * (hi - lo);
    double x2 = lo + kInvPhi * (hi - lo);
    int f1 = probe(x1);
    int f2 = probe(x2);
    while (ok && hi - lo > policy_.tolerance) {
      if (f1 < f2) {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + kInvPhi * (hi - lo);
        f2 = probe(x2);
      } else {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - kInvPhi * (hi - lo);
        f1 = probe(x1);
      }
    }
    return settle_continuous(c, best.x);
  }

  bool settle_continuous(std::size_t c, double x) {
    if (driver_.state().continuous[c] == x) return true;
    if (!driver_.can_act()) return false;
    driver_.act(SetContinuous{c, x});
    return true;
  }

  bool optimise_discrete(std::size_t d) {
    const std::size_t start = driver_.state().discrete[d];
    int best_score = *driver_.shown_score();
    std::size_t best = start;
    const std::size_t k = driver_.schema().discrete()[d].options.size();
    for (std::size_t o = 0; o < k; ++o) {
      if (o == start) continue;
      if (!driver_.can_act()) return settle_discrete(d, best);
      const int s = *driver_.act(SetDiscrete{d, o}).score;
      if (s > best_score) {
        best_score = s;
        best = o;
      }
    }
    return settle_discrete(d, best);
  }

  bool settle_discrete(std::size_t d, std::size_t option) {
    if (driver_.state().discrete[d] == option) return true;
    if (!driver_.can_act()) return false;
    driver_.act(SetDiscrete{d, option});
    return true;
  }

  const GreedyCoordinateAscent& policy_;
  PhaseDriver& driver_;
  Rng& rng_;
  std::vector<int> trajectory_;
};

Action propose(const FeatureSchema& schema, const DesignState& state, double scale, bool uniform_step, Rng& rng) {
  const std::size_t n = schema.continuous_count() + schema.discrete_count();
  const std::size_t f = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  if (f < schema.continuous_count()) {
    const double x = state.continuous[f];
    const double step = uniform_step ? std::uniform_real_distribution<double>(-scale, scale)(rng)
                                     : std::normal_distribution<double>(0.0, scale)(rng);
    return SetContinuous{f, std::clamp(x + step, 0.0, 1.0)};
  }
  const std::size_t d = f - schema.continuous_count();
  const std::size_t k = schema.discrete()[d].options.size();
  // Uniform over the other options.
  std::size_t o = std::uniform_int_distribution<std::size_t>(0, k - 2)(rng);
  if (o >= state.discrete[d]) ++o;
  return SetDiscrete{d, o};
}

Action inverse_of(const Action& edit, const DesignState& before) {
  return std::visit(overloaded{[&](const SetContinuous& a) -> Action {
                                 return SetContinuous{a.feature, before.continuous[a.feature]};
                               },
                               [&](const SetDiscrete& a) -> Action {
                                 return SetDiscrete{a.feature, before.discrete[a.feature]};
                               },
                               [](const Save& a) -> Action { return a; }, [](const Reset& a) -> Action { return a; }},
                    edit);
}

bool metropolis_accept(double delta, double temperature, Rng& rng) {
  if (delta >= 0.0) return true;
  return uniform01(rng) < std::exp(delta / temperature);
}

void run_softmax(const SoftmaxFollower& policy, PhaseDriver& driver, const AgentRunConfig& config, Rng& rng) {
  const auto& schema = driver.schema();
  if (policy.objective == Objective::internal_goal_model) {
    if (!config.internal_model) throw ValidationError("internal_goal_model objective needs an internal model");
    // The internal objective is the unclamped log-likelihood, so the agent
    // has a gradient everywhere, not only inside the calibrated range.
    const auto& model = config.internal_model->model;
    const std::size_t max_proposals = 200 * std::max<std::size_t>(config.action_budget, 1);
    for (std::size_t p = 0; p < max_proposals && driver.can_act(); ++p) {
      const auto& state = driver.state();
      const Action edit = propose(schema, state, policy.proposal_scale, false, rng);
      const double delta = log_likelihood(model, apply_action(schema, state, edit)) - log_likelihood(model, state);
      if (metropolis_accept(delta, policy.temperature, rng)) {
        driver.act(edit);
        driver.settle();
      }
    }
    return;
  }

  while (driver.can_act()) {
    const DesignState before = driver.state();
    const auto before_score = driver.shown_score();
    const Action edit = propose(schema, before, policy.proposal_scale, false, rng);
    const auto result = driver.act(edit);
    // In an unscored phase there is nothing to follow and every move stands.
    if (before_score && result.score) {
      const double delta = static_cast<double>(*result.score - *before_score);
      if (!metropolis_accept(delta, policy.temperature, rng) && driver.can_act()) {
        driver.act(inverse_of(edit, before));
      }
    }
    driver.settle();
  }
}

void run_random_walk(const RandomWalk& policy, PhaseDriver& driver, Rng& rng) {
  while (driver.can_act()) {
    driver.act(propose(driver.schema(), driver.state(), policy.step_scale, true, rng));
    driver.settle();
  }
}

}  // namespace

void validate_policy(const AgentPolicy& policy) {
  std::visit(overloaded{[](const GreedyCoordinateAscent& p) {
                          if (!(p.tolerance > 0.0)) throw ValidationError("greedy tolerance must be positive");
                        },
                        [](const RandomWalk& p) {
                          if (!(p.step_scale > 0.0 && p.step_scale <= 1.0)) {
                            throw ValidationError("random-walk step scale must lie in (0,1]");
                          }
                        },
                        [](const SoftmaxFollower& p) {
                          if (!(p.temperature > 0.0)) throw ValidationError("softmax temperature must be positive");
                          if (!(p.proposal_scale > 0.0)) throw ValidationError("proposal scale must be positive");
                        }},
             policy);
}

std::string policy_name(const AgentPolicy& policy) {
  return std::visit(overloaded{[](const GreedyCoordinateAscent&) { return std::string("greedy"); },
                               [](const RandomWalk&) { return std::string("random_walk"); },
                               [](const SoftmaxFollower& p) {
                                 return std::string(p.objective == Objective::shown_score ? "softmax_shown"
                                                                                          : "softmax_internal");
                               }},
                    policy);
}

nlohmann::json policy_to_json(const AgentPolicy& policy) {
  return std::visit(overloaded{[](const GreedyCoordinateAscent& p) -> nlohmann::json {
                                 return {{"type", "greedy"},
                                         {"sweep_seed", p.sweep_seed},
                                         {"sweeps", p.sweeps},
                                         {"tolerance", p.tolerance}};
                               },
                               [](const RandomWalk& p) -> nlohmann::json {
                                 return {{"type", "random_walk"}, {"step_scale", p.step_scale}, {"seed", p.seed}};
                               },
                               [](const SoftmaxFollower& p) -> nlohmann::json {
                                 return {{"type", "softmax"},
                                         {"temperature", p.temperature},
                                         {"objective", p.objective == Objective::shown_score ? "shown_score"
                                                                                             : "internal_goal_model"},
                                         {"seed", p.seed},
                                         {"proposal_scale", p.proposal_scale}};
                               }},
                    policy);
}

AgentPolicy policy_from_json(const nlohmann::json& j) {
  AgentPolicy policy;
  try {
    const auto type = j.at("type").get<std::string>();
    if (type == "greedy") {
      GreedyCoordinateAscent p;
      p.sweep_seed = j.value("sweep_seed", p.sweep_seed);
      p.sweeps = j.value("sweeps", p.sweeps);
      p.tolerance = j.value("tolerance", p.tolerance);
      policy = p;
    } else if (type == "random_walk") {
      RandomWalk p;
      p.step_scale = j.value("step_scale", p.step_scale);
      p.seed = j.value("seed", p.seed);
      policy = p;
    } else if (type == "softmax") {
      SoftmaxFollower p;
      p.temperature = j.value("temperature", p.temperature);
      const auto objective = j.value("objective", std::string("shown_score"));
      if (objective == "shown_score") {
        p.objective = Objective::shown_score;
      } else if (objective == "internal_goal_model") {
        p.objective = Objective::internal_goal_model;
      } else {
        throw ValidationError("unknown softmax objective '" + objective + "'");
      }
      p.seed = j.value("seed", p.seed);
      p.proposal_scale = j.value("proposal_scale", p.proposal_scale);
      policy = p;
    } else {
      throw ValidationError("unknown policy type '" + type + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed policy: ") + e.what());
  }
  validate_policy(policy);
  return policy;
}

AgentRunResult run_agent_in_phase(const AgentPolicy& policy, Session& session, const AgentRunConfig& config,
                                  std::uint64_t seed) {
  validate_policy(policy);
  if (!session.active()) throw SessionEndedError("cannot run an agent on an inactive session");
  Rng rng(mix_seed(policy_seed(policy), seed));
  PhaseDriver driver(session, config);
  std::vector<int> trajectory;
  std::visit(overloaded{[&](const GreedyCoordinateAscent& p) { trajectory = GreedyRunner(p, driver, rng).run(); },
                        [&](const RandomWalk& p) { run_random_walk(p, driver, rng); },
                        [&](const SoftmaxFollower& p) { run_softmax(p, driver, config, rng); }},
             policy);
  driver.finish();
  return {driver.actions(), driver.now(), std::move(trajectory)};
}

SessionLog run_agent(const AgentPolicy& policy, Session& session, const AgentRunConfig& config, std::uint64_t seed) {
  run_agent_in_phase(policy, session, config, seed);
  return session.export_log();
}

void validate_profile(const FeatureSchema& schema, const GoalProfile& profile) {
  RewardModel as_model;
  as_model.goal = profile.goal;
  as_model.continuous = profile.continuous;
  as_model.discrete = profile.discrete;
  validate_model(schema, as_model);
}

nlohmann::json profile_to_json(const FeatureSchema& schema, const GoalProfile& profile) {
  validate_profile(schema, profile);
  nlohmann::json cont = nlohmann::json::array();
  for (std::size_t c = 0; c < profile.continuous.size(); ++c) {
    cont.push_back({{"feature", schema.continuous()[c].name},
                    {"mean", profile.continuous[c].mean},
                    {"std", profile.continuous[c].stddev}});
  }
  nlohmann::json disc = nlohmann::json::array();
  for (std::size_t d = 0; d < profile.discrete.size(); ++d) {
    disc.push_back({{"feature", schema.discrete()[d].name}, {"theta", profile.discrete[d]}});
  }
  return {{"goal", profile.goal}, {"continuous_params", cont}, {"discrete_params", disc}};
}

GoalProfile profile_from_json(const FeatureSchema& schema, const nlohmann::json& j) {
  GoalProfile p;
  try {
    p.goal = j.at("goal").get<std::string>();
    for (const auto& e : j.at("continuous_params")) {
      p.continuous.push_back({e.at("mean").get<double>(), e.at("std").get<double>()});
    }
    for (const auto& e : j.at("discrete_params")) p.discrete.push_back(e.at("theta").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed goal profile: ") + e.what());
  }
  validate_profile(schema, p);
  return p;
}

std::vector<std::string> builtin_goals() { return {"cheerful", "dependable", "unique"}; }

std::vector<std::string> known_goals() { return {"cheerful", "dependable", "unique", "custom"}; }

GoalProfile builtin_goal_profile(const FeatureSchema& schema, const std::string& goal) {
  if (!(schema == default_chair_schema())) {
    throw ValidationError("built-in goal profiles are defined for the default chair schema only");
  }
  struct Spec {
    std::vector<GaussianParams> continuous;
    std::vector<std::vector<double>> weights;
  };
  Spec spec;
  // Continuous order: 9 dimensions, then body/leg/arm colour as (h, s, v).
  if (goal == "cheerful") {
    spec.continuous = {{0.55, 0.06}, {0.50, 0.06}, {0.45, 0.06}, {0.40, 0.05}, {0.60, 0.06}, {0.45, 0.06},
                       {0.35, 0.05}, {0.50, 0.06}, {0.35, 0.06}, {0.14, 0.05}, {0.80, 0.06}, {0.85, 0.05},
                       {0.55, 0.07}, {0.65, 0.07}, {0.80, 0.06}, {0.10, 0.05}, {0.70, 0.07}, {0.82, 0.05}};
    spec.weights = {{0.25, 0.15, 0.60},
                    {0.02, 0.55, 0.03, 0.05, 0.03, 0.04, 0.08, 0.20},
                    {0.02, 0.08, 0.03, 0.55, 0.22, 0.02, 0.04, 0.01, 0.03}};
  } else if (goal == "dependable") {
    spec.continuous = {{0.65, 0.05}, {0.65, 0.05}, {0.55, 0.05}, {0.70, 0.05}, {0.45, 0.04}, {0.50, 0.05},
                       {0.80, 0.04}, {0.55, 0.05}, {0.75, 0.05}, {0.08, 0.03}, {0.45, 0.06}, {0.40, 0.06},
                       {0.08, 0.03}, {0.40, 0.06}, {0.35, 0.06}, {0.08, 0.03}, {0.40, 0.06}, {0.40, 0.06}};
    spec.weights = {{0.10, 0.75, 0.15},
                    {0.01, 0.80, 0.02, 0.07, 0.05, 0.02, 0.02, 0.01},
                    {0.01, 0.70, 0.18, 0.02, 0.03, 0.04, 0.01, 0.005, 0.005}};
  } else if (goal == "unique") {
    spec.continuous = {{0.35, 0.07}, {0.40, 0.07}, {0.70, 0.07}, {0.30, 0.07}, {0.75, 0.07}, {0.65, 0.07},
                       {0.30, 0.07}, {0.65, 0.07}, {0.40, 0.07}, {0.78, 0.07}, {0.60, 0.07}, {0.60, 0.07},
                       {0.35, 0.07}, {0.55, 0.07}, {0.45, 0.07}, {0.62, 0.07}, {0.50, 0.07}, {0.70, 0.07}};
    spec.weights = {{0.30, 0.10, 0.60},
                    {0.03, 0.03, 0.10, 0.06, 0.08, 0.40, 0.10, 0.20},
                    {0.02, 0.03, 0.05, 0.05, 0.05, 0.05, 0.15, 0.35, 0.25}};
  } else if (goal == "custom") {
    // Personal taste: broad preferences, no shared target.
    spec.continuous = {{0.50, 0.25}, {0.45, 0.24}, {0.55, 0.25}, {0.40, 0.22}, {0.55, 0.24}, {0.50, 0.25},
                       {0.45, 0.23}, {0.50, 0.25}, {0.45, 0.24}, {0.40, 0.25}, {0.55, 0.24}, {0.60, 0.22},
                       {0.45, 0.25}, {0.50, 0.24}, {0.55, 0.23}, {0.50, 0.25}, {0.45, 0.24}, {0.60, 0.22}};
    spec.weights = {{0.30, 0.35, 0.35},
                    {0.05, 0.20, 0.12, 0.14, 0.10, 0.13, 0.14, 0.12},
                    {0.04, 0.16, 0.12, 0.12, 0.14, 0.12, 0.10, 0.08, 0.12}};
  } else {
    throw ValidationError("no built-in profile for goal '" + goal + "'");
  }

  GoalProfile p;
  p.goal = goal;
  p.continuous = spec.continuous;
  for (auto& w : spec.weights) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& x : w) x /= total;
    p.discrete.push_back(w);
  }
  validate_profile(schema, p);
  return p;
}

DesignDataset generate_pilot_dataset(const FeatureSchema& schema, const GoalProfile& profile, std::size_t n,
                                     std::uint64_t seed) {
  if (n < 2) throw ValidationError("pilot dataset needs at least 2 designs");
  validate_profile(schema, profile);
  Rng rng(seed);
  std::vector<std::discrete_distribution<std::size_t>> categorical;
  for (const auto& theta : profile.discrete) categorical.emplace_back(theta.begin(), theta.end());

  DesignDataset ds;
  ds.goal = profile.goal;
  ds.designs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    DesignState s;
    for (const auto& p : profile.continuous) {
      s.continuous.push_back(std::clamp(std::normal_distribution<double>(p.mean, p.stddev)(rng), 0.0, 1.0));
    }
    for (auto& dist : categorical) s.discrete.push_back(dist(rng));
    ds.designs.push_back(std::move(s));
    ds.ids.push_back("pilot-" + std::to_string(i));
  }
  return ds;
}

SessionLog simulate_session(Session& session, const DesignerSpec& designer, std::uint64_t seed) {
  std::size_t phase_index = 0;
  while (session.active()) {
    const Phase phase = session.phase();
    const std::int64_t phase_start = session.phase_state().phase_start_ms;
    const AgentPolicy& policy = phase == Phase::practice   ? designer.practice
                                : phase == Phase::baseline ? designer.baseline
                                                           : designer.reward;
    AgentRunConfig cfg;
    cfg.action_budget = designer.actions_per_phase;
    cfg.start_ms = phase_start + designer.action_interval_ms;
    cfg.action_interval_ms = designer.action_interval_ms;
    cfg.save_every = designer.save_every;
    cfg.internal_model = designer.internal_model;
    if (session.last_event_ms() < cfg.start_ms) {
      run_agent_in_phase(policy, session, cfg, mix_seed(seed, phase_index));
    }
    // Idle until the phase closes (or the session times out).
    while (session.active() && session.phase() == phase && session.phase_state().phase_start_ms == phase_start) {
      session.tick(session.phase_deadline_ms());
    }
    ++phase_index;
  }
  return session.export_log();
}

}  // namespace design_lab
