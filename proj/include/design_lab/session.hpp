#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "design_lab/reward.hpp"
#include "design_lab/schema.hpp"
#include "json.hpp"

namespace design_lab {

enum class Phase { practice, baseline, reward };
enum class EventKind { action, save, phase_start, phase_end, warning, timeout, response };
enum class SessionStatus { active, completed, timed_out };

std::string_view to_string(Phase phase);
std::string_view to_string(EventKind kind);
std::string_view to_string(SessionStatus status);
Phase phase_from_string(std::string_view name);
EventKind event_kind_from_string(std::string_view name);

inline constexpr std::array<Phase, 3> kPhaseOrder = {Phase::practice, Phase::baseline, Phase::reward};

struct SessionConfig {
  std::string goal = "cheerful";
  RewardKind reward_kind = RewardKind::goal_aligned;
  std::optional<std::uint64_t> agnostic_seed;
  std::int64_t phase_duration_ms = 300'000;
  std::int64_t extension_ms = 120'000;
  std::size_t min_saves = 2;
  std::uint64_t block_order_seed = 0;
};

void validate_config(const SessionConfig& config);

// One of the six orders of the three interface blocks.
std::array<Block, 3> block_order_for_seed(std::uint64_t seed);

// What a log says about its reward model without carrying the parameters.
struct ModelReference {
  RewardKind kind = RewardKind::goal_aligned;
  std::string goal;
  std::optional<std::uint64_t> seed;
  std::string fingerprint;
};

struct SessionEvent {
  std::uint64_t seq = 0;
  std::int64_t t_ms = 0;
  Phase phase = Phase::practice;
  EventKind kind = EventKind::action;
  std::optional<Action> action;
  DesignState state;
  std::optional<int> score;
  std::optional<std::int64_t> client_t_ms;
  nlohmann::json payload;  // response events: {"key":..., "value":...}
};

struct SessionHeader {
  std::string session_id;
  SessionConfig config;
  ModelReference model;
  std::array<Block, 3> block_order{};
  std::int64_t start_ms = 0;
};

struct SessionLog {
  SessionHeader header;
  std::vector<SessionEvent> events;
};

struct PhaseState {
  Phase phase = Phase::practice;
  std::int64_t phase_start_ms = 0;
  std::int64_t elapsed_ms = 0;
  std::size_t saves = 0;
  bool warning_issued = false;
};

struct StepResult {
  DesignState state;
  std::optional<int> score;
  Phase phase = Phase::practice;
};

// Serial state machine over the practice -> baseline -> reward protocol.
// Time is always supplied by the caller. Not thread-safe; callers serialise
// access per session.
class Session {
 public:
  Session(std::shared_ptr<const FeatureSchema> schema, SessionConfig config,
          std::shared_ptr<const CalibratedModel> model, std::int64_t start_ms = 0, std::string session_id = "session");

  // Runs tick(t_ms) first, so an action never lands past a phase deadline.
  StepResult submit_action(const Action& action, std::int64_t t_ms,
                           std::optional<std::int64_t> client_t_ms = std::nullopt);

  // Advances phase logic to `now` and returns the events it emitted
  // (phase_end, phase_start, warning, timeout), in order.
  std::vector<SessionEvent> tick(std::int64_t now);

  // Opaque questionnaire answer, logged without any scoring.
  void record_response(const std::string& key, const nlohmann::json& value, std::int64_t t_ms);

  SessionStatus status() const noexcept { return status_; }
  bool active() const noexcept { return status_ == SessionStatus::active; }
  const PhaseState& phase_state() const noexcept { return phase_; }
  Phase phase() const noexcept { return phase_.phase; }
  const DesignState& state() const noexcept { return state_; }
  // Score shown for the current state, only in the reward phase.
  std::optional<int> current_score() const;
  std::int64_t last_event_ms() const noexcept { return last_t_ms_; }
  // Instant at which the current phase's deadline falls.
  std::int64_t phase_deadline_ms() const noexcept;

  const FeatureSchema& schema() const noexcept { return *schema_; }
  const CalibratedModel& model() const noexcept { return *model_; }
  const SessionConfig& config() const noexcept { return log_.header.config; }
  const std::array<Block, 3>& block_order() const noexcept { return log_.header.block_order; }
  const std::string& id() const noexcept { return log_.header.session_id; }

  const SessionLog& log() const noexcept { return log_; }
  SessionLog export_log() const { return log_; }

 private:
  SessionEvent& append(EventKind kind, std::int64_t t_ms);
  void start_phase(Phase phase, std::int64_t t_ms);
  void end_phase(std::int64_t t_ms, std::vector<SessionEvent>* emitted);
  void require_active() const;

  std::shared_ptr<const FeatureSchema> schema_;
  std::shared_ptr<const CalibratedModel> model_;
  SessionLog log_;
  PhaseState phase_;
  DesignState state_;
  SessionStatus status_ = SessionStatus::active;
  std::int64_t last_t_ms_ = 0;
};

// Checks the model matches the configured reward kind and goal.
Session create_session(std::shared_ptr<const FeatureSchema> schema, const SessionConfig& config,
                       std::shared_ptr<const CalibratedModel> model, std::int64_t start_ms = 0,
                       std::string session_id = "session");

// JSONL: a header line, then one event per line.
std::string log_to_jsonl(const FeatureSchema& schema, const SessionLog& log);
void write_log(const FeatureSchema& schema, const SessionLog& log, const std::string& path);
// Schema is taken from the header when present, else `fallback`.
SessionLog parse_log(std::istream& in, const FeatureSchema* fallback = nullptr);
SessionLog read_log(const std::string& path, const FeatureSchema* fallback = nullptr);
// The schema embedded in a log header.
FeatureSchema log_schema(std::istream& in);

nlohmann::json config_to_json(const SessionConfig& config);
SessionConfig config_from_json(const nlohmann::json& j);

struct Divergence {
  std::uint64_t seq = 0;
  std::size_t line = 0;
  std::string what;
};

struct ReplayReport {
  std::size_t events_checked = 0;
  bool scores_verified = false;
  std::vector<Divergence> divergences;

  bool ok() const noexcept { return divergences.empty(); }
  const Divergence* first_divergence() const noexcept { return divergences.empty() ? nullptr : &divergences.front(); }
};

// Re-derives every state (and, when a model is available, every score) from
// the logged actions. Goal-agnostic models are regenerated from the seed in
// the header when `model` is null.
ReplayReport replay(const FeatureSchema& schema, const SessionLog& log, const CalibratedModel* model = nullptr);

}  // namespace design_lab
