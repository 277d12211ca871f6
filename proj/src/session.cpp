#include "design_lab/session.hpp"

#include <fstream>
#include <sstream>

#include "design_lab/errors.hpp"

namespace design_lab {

namespace {

constexpr std::string_view kLogFormat = "design-lab-session/1";

constexpr std::array<std::array<Block, 3>, 6> kBlockOrders = {{
    {Block::type, Block::dimension, Block::aesthetic},
    {Block::type, Block::aesthetic, Block::dimension},
    {Block::dimension, Block::type, Block::aesthetic},
    {Block::dimension, Block::aesthetic, Block::type},
    {Block::aesthetic, Block::type, Block::dimension},
    {Block::aesthetic, Block::dimension, Block::type},
}};

bool is_save(const Action& a) { return std::holds_alternative<Save>(a); }

std::optional<Phase> next_phase(Phase p) {
  switch (p) {
    case Phase::practice:
      return Phase::baseline;
    case Phase::baseline:
      return Phase::reward;
    case Phase::reward:
      return std::nullopt;
  }
  return std::nullopt;
}

nlohmann::json event_to_json(const FeatureSchema& schema, const SessionEvent& e) {
  nlohmann::json j = {{"seq", e.seq},
                      {"t_ms", e.t_ms},
                      {"phase", std::string(to_string(e.phase))},
                      {"kind", std::string(to_string(e.kind))}};
  if (e.action) j["action"] = action_to_json(schema, *e.action);
  j["state"] = state_to_json(e.state);
  if (e.score) j["score"] = *e.score;
  if (e.client_t_ms) j["client_t_ms"] = *e.client_t_ms;
  if (!e.payload.is_null()) j["payload"] = e.payload;
  return j;
}

SessionEvent event_from_json(const FeatureSchema& schema, const nlohmann::json& j) {
  SessionEvent e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.t_ms = j.at("t_ms").get<std::int64_t>();
  e.phase = phase_from_string(j.at("phase").get<std::string>());
  e.kind = event_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("action")) e.action = action_from_json(schema, j["action"]);
  // States are parsed without range validation so that a tampered value is
  // reported by replay rather than rejected here.
  const auto& st = j.at("state");
  e.state.continuous = st.at("continuous").get<std::vector<double>>();
  e.state.discrete = st.at("discrete").get<std::vector<std::size_t>>();
  if (j.contains("score") && !j["score"].is_null()) e.score = j["score"].get<int>();
  if (j.contains("client_t_ms") && !j["client_t_ms"].is_null()) e.client_t_ms = j["client_t_ms"].get<std::int64_t>();
  if (j.contains("payload")) e.payload = j["payload"];
  return e;
}

nlohmann::json header_to_json(const FeatureSchema& schema, const SessionHeader& h) {
  nlohmann::json model = {{"kind", std::string(to_string(h.model.kind))},
                          {"goal", h.model.goal},
                          {"fingerprint", h.model.fingerprint}};
  if (h.model.seed) model["seed"] = *h.model.seed;
  nlohmann::json order = nlohmann::json::array();
  for (auto b : h.block_order) order.push_back(std::string(to_string(b)));
  return {{"type", "header"},
          {"format", std::string(kLogFormat)},
          {"session_id", h.session_id},
          {"config", config_to_json(h.config)},
          {"model", model},
          {"block_order", order},
          {"start_ms", h.start_ms},
          {"slider_emission", "one action per committed value"},
          {"schema", schema_to_json(schema)}};
}

SessionHeader header_from_json(const nlohmann::json& j) {
  SessionHeader h;
  h.session_id = j.value("session_id", std::string());
  h.config = config_from_json(j.at("config"));
  const auto& m = j.at("model");
  h.model.kind = reward_kind_from_string(m.at("kind").get<std::string>());
  h.model.goal = m.at("goal").get<std::string>();
  if (m.contains("seed") && !m["seed"].is_null()) h.model.seed = m["seed"].get<std::uint64_t>();
  h.model.fingerprint = m.value("fingerprint", std::string());
  const auto& order = j.at("block_order");
  if (order.size() != 3) throw ValidationError("block_order must list 3 blocks");
  for (std::size_t i = 0; i < 3; ++i) h.block_order[i] = block_from_string(order[i].get<std::string>());
  h.start_ms = j.value("start_ms", std::int64_t{0});
  return h;
}

}  // namespace

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::practice:
      return "practice";
    case Phase::baseline:
      return "baseline";
    case Phase::reward:
      return "reward";
  }
  return "unknown";
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::action:
      return "action";
    case EventKind::save:
      return "save";
    case EventKind::phase_start:
      return "phase_start";
    case EventKind::phase_end:
      return "phase_end";
    case EventKind::warning:
      return "warning";
    case EventKind::timeout:
      return "timeout";
    case EventKind::response:
      return "response";
  }
  return "unknown";
}

std::string_view to_string(SessionStatus status) {
  switch (status) {
    case SessionStatus::active:
      return "active";
    case SessionStatus::completed:
      return "completed";
    case SessionStatus::timed_out:
      return "timed_out";
  }
  return "unknown";
}

Phase phase_from_string(std::string_view name) {
  for (auto p : kPhaseOrder) {
    if (to_string(p) == name) return p;
  }
  throw ValidationError("unknown phase '" + std::string(name) + "'");
}

EventKind event_kind_from_string(std::string_view name) {
  for (auto k : {EventKind::action, EventKind::save, EventKind::phase_start, EventKind::phase_end, EventKind::warning,
                 EventKind::timeout, EventKind::response}) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown event kind '" + std::string(name) + "'");
}

void validate_config(const SessionConfig& config) {
  if (config.phase_duration_ms <= 0) throw ValidationError("phase duration must be positive");
  if (config.extension_ms <= 0) throw ValidationError("extension duration must be positive");
  if (config.min_saves < 1) throw ValidationError("minimum saves per phase must be at least 1");
  if (config.goal.empty()) throw ValidationError("session goal must not be empty");
}

std::array<Block, 3> block_order_for_seed(std::uint64_t seed) { return kBlockOrders[mix_seed(seed) % 6]; }

Session::Session(std::shared_ptr<const FeatureSchema> schema, SessionConfig config,
                 std::shared_ptr<const CalibratedModel> model, std::int64_t start_ms, std::string session_id)
    : schema_(std::move(schema)), model_(std::move(model)) {
  if (!schema_ || !model_) throw ValidationError("session needs a schema and a reward model");
  validate_config(config);
  validate_model(*schema_, model_->model);

  auto& h = log_.header;
  h.session_id = std::move(session_id);
  h.model = {model_->model.kind, model_->model.goal, model_->model.seed, fingerprint(*schema_, *model_)};
  h.block_order = block_order_for_seed(config.block_order_seed);
  h.start_ms = start_ms;
  h.config = std::move(config);

  last_t_ms_ = start_ms;
  start_phase(Phase::practice, start_ms);
}

SessionEvent& Session::append(EventKind kind, std::int64_t t_ms) {
  SessionEvent e;
  e.seq = log_.events.size() + 1;
  e.t_ms = t_ms;
  e.phase = phase_.phase;
  e.kind = kind;
  e.state = state_;
  last_t_ms_ = t_ms;
  log_.events.push_back(std::move(e));
  return log_.events.back();
}

void Session::start_phase(Phase phase, std::int64_t t_ms) {
  phase_ = PhaseState{phase, t_ms, 0, 0, false};
  // The design on screen carries over; only the session opens on the
  // starting configuration.
  if (phase == Phase::practice) state_ = initial_state(*schema_);
  append(EventKind::phase_start, t_ms);
}

void Session::end_phase(std::int64_t t_ms, std::vector<SessionEvent>* emitted) {
  phase_.elapsed_ms = t_ms - phase_.phase_start_ms;
  append(EventKind::phase_end, t_ms);
  if (emitted) emitted->push_back(log_.events.back());
  if (auto next = next_phase(phase_.phase)) {
    start_phase(*next, t_ms);
    if (emitted) emitted->push_back(log_.events.back());
  } else {
    status_ = SessionStatus::completed;
  }
}

std::int64_t Session::phase_deadline_ms() const noexcept {
  const auto& cfg = config();
  return phase_.phase_start_ms + cfg.phase_duration_ms + (phase_.warning_issued ? cfg.extension_ms : 0);
}

void Session::require_active() const {
  if (status_ == SessionStatus::timed_out) throw SessionEndedError("session '" + id() + "' timed out");
  if (status_ == SessionStatus::completed) throw SessionEndedError("session '" + id() + "' is complete");
}

std::vector<SessionEvent> Session::tick(std::int64_t now) {
  std::vector<SessionEvent> emitted;
  const auto& cfg = config();
  while (status_ == SessionStatus::active) {
    const std::int64_t due = phase_.phase_start_ms + cfg.phase_duration_ms;
    if (!phase_.warning_issued) {
      if (now < due) break;
      if (phase_.saves >= cfg.min_saves) {
        end_phase(due, &emitted);
        continue;
      }
      phase_.warning_issued = true;
      phase_.elapsed_ms = cfg.phase_duration_ms;
      auto& w = append(EventKind::warning, due);
      w.payload = {{"saves", phase_.saves}, {"required", cfg.min_saves}, {"extension_ms", cfg.extension_ms}};
      emitted.push_back(w);
      continue;
    }
    const std::int64_t hard = due + cfg.extension_ms;
    if (now < hard) break;
    // The extension closes early once the minimum is met (see submit_action),
    // so reaching the hard deadline means the requirement was missed.
    phase_.elapsed_ms = cfg.phase_duration_ms + cfg.extension_ms;
    auto& t = append(EventKind::timeout, hard);
    t.payload = {{"saves", phase_.saves}, {"required", cfg.min_saves}};
    emitted.push_back(t);
    status_ = SessionStatus::timed_out;
  }
  if (status_ == SessionStatus::active && now > phase_.phase_start_ms) {
    phase_.elapsed_ms = std::max(phase_.elapsed_ms, now - phase_.phase_start_ms);
  }
  return emitted;
}

StepResult Session::submit_action(const Action& action, std::int64_t t_ms, std::optional<std::int64_t> client_t_ms) {
  require_active();
  if (t_ms < last_t_ms_) {
    throw ValidationError("action timestamp " + std::to_string(t_ms) + " precedes the last event at " +
                          std::to_string(last_t_ms_));
  }
  tick(t_ms);
  require_active();

  // Throws before anything is logged when the action is invalid.
  DesignState next = apply_action(*schema_, state_, action);

  state_ = std::move(next);
  auto& e = append(is_save(action) ? EventKind::save : EventKind::action, t_ms);
  e.action = action;
  e.client_t_ms = client_t_ms;
  if (phase_.phase == Phase::reward) e.score = score(*model_, state_);

  StepResult result{state_, e.score, phase_.phase};
  if (is_save(action)) {
    ++phase_.saves;
    if (phase_.warning_issued && phase_.saves >= config().min_saves) end_phase(t_ms, nullptr);
  }
  return result;
}

void Session::record_response(const std::string& key, const nlohmann::json& value, std::int64_t t_ms) {
  if (key.empty()) throw ValidationError("response key must not be empty");
  if (t_ms < last_t_ms_) {
    throw ValidationError("response timestamp " + std::to_string(t_ms) + " precedes the last event");
  }
  auto& e = append(EventKind::response, t_ms);
  e.payload = {{"key", key}, {"value", value}};
}

std::optional<int> Session::current_score() const {
  if (status_ != SessionStatus::active || phase_.phase != Phase::reward) return std::nullopt;
  return score(*model_, state_);
}

Session create_session(std::shared_ptr<const FeatureSchema> schema, const SessionConfig& config,
                       std::shared_ptr<const CalibratedModel> model, std::int64_t start_ms, std::string session_id) {
  if (!model) throw ValidationError("session needs a reward model");
  if (model->model.kind != config.reward_kind) {
    throw ValidationError("reward model kind '" + std::string(to_string(model->model.kind)) +
                          "' does not match configured '" + std::string(to_string(config.reward_kind)) + "'");
  }
  if (model->model.goal != config.goal) {
    throw ValidationError("reward model goal '" + model->model.goal + "' does not match configured goal '" +
                          config.goal + "'");
  }
  if (config.reward_kind == RewardKind::goal_agnostic && config.agnostic_seed &&
      model->model.seed != config.agnostic_seed) {
    throw ValidationError("goal-agnostic model seed does not match configured agnostic seed");
  }
  return Session(std::move(schema), config, std::move(model), start_ms, std::move(session_id));
}

nlohmann::json config_to_json(const SessionConfig& c) {
  nlohmann::json j = {{"goal", c.goal},
                      {"reward_kind", std::string(to_string(c.reward_kind))},
                      {"phase_duration_ms", c.phase_duration_ms},
                      {"extension_ms", c.extension_ms},
                      {"min_saves", c.min_saves},
                      {"block_order_seed", c.block_order_seed}};
  if (c.agnostic_seed) j["agnostic_seed"] = *c.agnostic_seed;
  return j;
}

SessionConfig config_from_json(const nlohmann::json& j) {
  SessionConfig c;
  try {
    c.goal = j.value("goal", c.goal);
    if (j.contains("reward_kind")) c.reward_kind = reward_kind_from_string(j["reward_kind"].get<std::string>());
    if (j.contains("agnostic_seed") && !j["agnostic_seed"].is_null()) {
      c.agnostic_seed = j["agnostic_seed"].get<std::uint64_t>();
    }
    c.phase_duration_ms = j.value("phase_duration_ms", c.phase_duration_ms);
    c.extension_ms = j.value("extension_ms", c.extension_ms);
    c.min_saves = j.value("min_saves", c.min_saves);
    c.block_order_seed = j.value("block_order_seed", c.block_order_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed session config: ") + e.what());
  }
  validate_config(c);
  return c;
}

std::string log_to_jsonl(const FeatureSchema& schema, const SessionLog& log) {
  std::string out = header_to_json(schema, log.header).dump();
  out += '\n';
  for (const auto& e : log.events) {
    out += event_to_json(schema, e).dump();
    out += '\n';
  }
  return out;
}

void write_log(const FeatureSchema& schema, const SessionLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write session log '" + path + "'");
  out << log_to_jsonl(schema, log);
  if (!out) throw std::runtime_error("failed while writing session log '" + path + "'");
}

SessionLog parse_log(std::istream& in, const FeatureSchema* fallback) {
  SessionLog log;
  std::optional<FeatureSchema> schema;
  if (fallback) schema = *fallback;
  bool have_header = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(lineno, e.what());
    }
    try {
      if (!have_header) {
        if (!j.is_object() || j.value("type", std::string()) != "header") {
          throw ParseError(lineno, "first record must be the session header");
        }
        log.header = header_from_json(j);
        if (j.contains("schema")) schema = schema_from_json(j["schema"]);
        if (!schema) throw ParseError(lineno, "log header carries no schema and none was supplied");
        have_header = true;
        continue;
      }
      log.events.push_back(event_from_json(*schema, j));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    } catch (const ValidationError& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return log;
}

SessionLog read_log(const std::string& path, const FeatureSchema* fallback) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open session log '" + path + "'");
  return parse_log(in, fallback);
}

FeatureSchema log_schema(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      if (!j.contains("schema")) break;
      return schema_from_json(j["schema"]);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  throw ParseError(lineno, "log has no header schema");
}

ReplayReport replay(const FeatureSchema& schema, const SessionLog& log, const CalibratedModel* model) {
  ReplayReport report;
  if (log.events.empty()) return report;

  std::optional<CalibratedModel> regenerated;
  const auto& ref = log.header.model;
  if (model) {
    if (!ref.fingerprint.empty() && fingerprint(schema, *model) != ref.fingerprint) {
      throw ValidationError("supplied reward model does not match the log's model fingerprint " + ref.fingerprint);
    }
  } else if (ref.kind == RewardKind::goal_agnostic && ref.seed) {
    regenerated = make_goal_agnostic(schema, *ref.seed, ref.goal);
    if (ref.fingerprint.empty() || fingerprint(schema, *regenerated) == ref.fingerprint) model = &*regenerated;
  }
  report.scores_verified = model != nullptr;

  const DesignState start = initial_state(schema);
  DesignState state = start;
  std::optional<Phase> phase;
  std::size_t phases_started = 0;
  std::uint64_t last_seq = 0;
  std::int64_t last_t = log.header.start_ms;

  auto diverge = [&](const SessionEvent& e, std::size_t line, std::string what) {
    report.divergences.push_back({e.seq, line, std::move(what)});
  };

  for (std::size_t i = 0; i < log.events.size(); ++i) {
    const auto& e = log.events[i];
    const std::size_t line = i + 2;  // line 1 is the header
    ++report.events_checked;

    if (e.seq <= last_seq) diverge(e, line, "sequence number not increasing");
    if (e.t_ms < last_t) diverge(e, line, "timestamp decreased");
    last_seq = e.seq;
    last_t = e.t_ms;

    if (e.kind == EventKind::phase_start) {
      const Phase expected = phases_started < kPhaseOrder.size() ? kPhaseOrder[phases_started] : Phase::reward;
      if (phases_started >= kPhaseOrder.size() || e.phase != expected) {
        diverge(e, line, "phase '" + std::string(to_string(e.phase)) + "' started out of protocol order");
      }
      ++phases_started;
      phase = e.phase;
    } else if (!phase || e.phase != *phase) {
      diverge(e, line, "event recorded in phase '" + std::string(to_string(e.phase)) + "' outside that phase");
    }

    DesignState expected = state;
    if (e.kind == EventKind::phase_start) {
      if (e.phase == Phase::practice) expected = start;
    } else if (e.kind == EventKind::action || e.kind == EventKind::save) {
      if (!e.action) {
        diverge(e, line, "action event without an action payload");
      } else if (std::holds_alternative<Save>(*e.action) != (e.kind == EventKind::save)) {
        diverge(e, line, "event kind does not match its action");
      } else {
        try {
          expected = apply_action(schema, state, *e.action);
        } catch (const ValidationError& err) {
          diverge(e, line, std::string("invalid action: ") + err.what());
        }
      }
    } else if (e.action) {
      diverge(e, line, "non-action event carries an action payload");
    }

    if (e.state != expected) {
      diverge(e, line, "recorded state differs from replayed state");
      state = e.state;
    } else {
      state = std::move(expected);
    }

    const bool scored = (e.kind == EventKind::action || e.kind == EventKind::save) && e.phase == Phase::reward;
    if (scored != e.score.has_value()) {
      diverge(e, line, scored ? "reward-phase action without a score" : "score recorded outside a reward-phase action");
    } else if (scored && model) {
      try {
        validate_state(schema, state);
        const int expected_score = score(*model, state);
        if (expected_score != *e.score) {
          diverge(e, line,
                  "score " + std::to_string(*e.score) + " differs from replayed " + std::to_string(expected_score));
        }
      } catch (const ValidationError& err) {
        diverge(e, line, std::string("cannot score recorded state: ") + err.what());
      }
    }
  }
  return report;
}

}  // namespace design_lab
