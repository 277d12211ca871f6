#include "design_lab/service.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <regex>
#include <sstream>

#include "design_lab/errors.hpp"
#include "design_lab/random.hpp"
#include "httplib.h"
#include "json.hpp"

namespace design_lab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

HttpResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

HttpResponse error(int status, const std::string& message) { return json_response(status, {{"error", message}}); }

json event_summary(const SessionEvent& e) {
  json j = {{"seq", e.seq}, {"t_ms", e.t_ms}, {"phase", to_string(e.phase)}, {"kind", to_string(e.kind)}};
  if (!e.payload.is_null()) j["payload"] = e.payload;
  return j;
}

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  json j = json::parse(body);  // throws json::parse_error
  if (!j.is_object()) throw ValidationError("request body must be a JSON object");
  return j;
}

std::string session_id_for(std::uint64_t n) {
  std::ostringstream out;
  out << "s-" << std::setw(6) << std::setfill('0') << n;
  return out.str();
}

bool is_known_goal(const std::string& goal) {
  for (const char* g : {"cheerful", "dependable", "unique", "custom"}) {
    if (goal == g) return true;
  }
  return false;
}

}  // namespace

Clock steady_clock_ms() {
  const auto origin = std::chrono::steady_clock::now();
  return [origin] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - origin).count();
  };
}

DesignService::DesignService(std::shared_ptr<const FeatureSchema> schema,
                             std::map<std::string, std::shared_ptr<const CalibratedModel>> aligned_models, Clock clock,
                             ServiceOptions options)
    : schema_(std::move(schema)), aligned_(std::move(aligned_models)), clock_(std::move(clock)),
      options_(std::move(options)) {
  if (!schema_) throw ValidationError("service needs a schema");
  if (!clock_) throw ValidationError("service needs a clock");
  for (const auto& [goal, model] : aligned_) {
    if (!model || model->model.kind != RewardKind::goal_aligned || model->model.goal != goal) {
      throw ValidationError("model registered for goal '" + goal + "' is not a goal-aligned model for that goal");
    }
  }
}

std::size_t DesignService::session_count() const {
  std::shared_lock lock(sessions_mutex_);
  return sessions_.size();
}

std::shared_ptr<DesignService::Entry> DesignService::find(const std::string& id) const {
  std::shared_lock lock(sessions_mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

HttpResponse DesignService::handle(const std::string& method, const std::string& path, const std::string& body,
                                   const std::map<std::string, std::string>& headers) {
  static const std::regex session_route(R"(^/v1/sessions/([A-Za-z0-9_-]+)(/(actions|tick|export|responses))?$)");
  try {
    if (path == "/v1/health" && method == "GET") return json_response(200, {{"ok", true}});
    if (path == "/v1/schema" && method == "GET") return json_response(200, schema_to_json(*schema_));
    if (path == "/v1/sessions") {
      if (method != "POST") return error(405, "method not allowed");
      return create(body, headers);
    }
    std::smatch m;
    if (!std::regex_match(path, m, session_route)) return error(404, "no such endpoint");
    auto entry = find(m[1].str());
    if (!entry) return error(404, "unknown session '" + m[1].str() + "'");
    const std::string sub = m[3].str();
    const std::string want = sub.empty() || sub == "export" ? "GET" : "POST";
    if (method != want) return error(405, "method not allowed");

    // One writer per session: requests for the same session queue here.
    std::lock_guard lock(entry->mutex);
    if (sub.empty()) return status(*entry);
    if (sub == "actions") return act(*entry, body);
    if (sub == "tick") return tick(*entry, body);
    if (sub == "responses") return respond(*entry, body);
    return export_log(*entry);
  } catch (const json::exception& e) {
    return error(400, std::string("malformed JSON: ") + e.what());
  } catch (const ValidationError& e) {
    return error(400, e.what());
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

HttpResponse DesignService::create(const std::string& body, const std::map<std::string, std::string>& headers) {
  const json req = parse_body(body);
  std::string key = req.value("idempotency_key", std::string());
  if (auto it = headers.find("Idempotency-Key"); it != headers.end()) key = it->second;

  std::unique_lock lock(sessions_mutex_);
  if (!key.empty()) {
    if (auto it = idempotency_.find(key); it != idempotency_.end()) {
      const auto& s = sessions_.at(it->second);
      std::lock_guard entry_lock(s->mutex);
      json out = {{"session_id", it->second},
                  {"goal", s->session.config().goal},
                  {"reward_kind", to_string(s->session.config().reward_kind)},
                  {"block_order", json::array()},
                  {"phase", to_string(s->session.phase())},
                  {"schema", schema_to_json(*schema_)},
                  {"replayed", true}};
      for (auto b : s->session.block_order()) out["block_order"].push_back(to_string(b));
      return json_response(200, out);
    }
  }

  // Round-robin over goal x reward kind; request fields override.
  std::vector<std::pair<std::string, RewardKind>> conditions;
  for (const auto& [goal, _] : aligned_) {
    conditions.emplace_back(goal, RewardKind::goal_aligned);
    conditions.emplace_back(goal, RewardKind::goal_agnostic);
  }
  SessionConfig cfg;
  if (req.contains("goal")) {
    cfg.goal = req.at("goal").get<std::string>();
    if (!is_known_goal(cfg.goal)) return error(400, "unknown goal '" + cfg.goal + "'");
    if (!aligned_.count(cfg.goal)) return error(503, "no fitted model for goal '" + cfg.goal + "'");
  } else if (conditions.empty()) {
    return error(503, "no fitted models loaded");
  }
  const std::uint64_t n = created_;
  if (!conditions.empty()) {
    const auto& c = conditions[next_condition_ % conditions.size()];
    if (!req.contains("goal")) cfg.goal = c.first;
    cfg.reward_kind = c.second;
  }
  if (req.contains("reward_kind")) cfg.reward_kind = reward_kind_from_string(req.at("reward_kind").get<std::string>());
  cfg.block_order_seed = req.value("block_order_seed", mix_seed(options_.agnostic_seed_base, 0xB10C0000ULL + n));
  if (req.contains("phase_duration_ms")) cfg.phase_duration_ms = req.at("phase_duration_ms").get<std::int64_t>();
  if (req.contains("extension_ms")) cfg.extension_ms = req.at("extension_ms").get<std::int64_t>();

  std::shared_ptr<const CalibratedModel> model = aligned_.at(cfg.goal);
  if (cfg.reward_kind == RewardKind::goal_agnostic) {
    cfg.agnostic_seed = req.value("agnostic_seed", mix_seed(options_.agnostic_seed_base, n));
    model = std::make_shared<const CalibratedModel>(make_goal_agnostic(*schema_, *cfg.agnostic_seed, cfg.goal));
  }
  validate_config(cfg);

  const std::string id = session_id_for(n + 1);
  auto entry = std::make_shared<Entry>(create_session(schema_, cfg, model, clock_(), id));
  ++created_;
  ++next_condition_;
  sessions_.emplace(id, entry);
  if (!key.empty()) idempotency_.emplace(key, id);

  json out = {{"session_id", id},
              {"goal", cfg.goal},
              {"reward_kind", to_string(cfg.reward_kind)},
              {"block_order", json::array()},
              {"phase", to_string(entry->session.phase())},
              {"phase_deadline_ms", entry->session.phase_deadline_ms()},
              {"schema", schema_to_json(*schema_)}};
  for (auto b : entry->session.block_order()) out["block_order"].push_back(to_string(b));
  return json_response(201, out);
}

HttpResponse DesignService::act(Entry& entry, const std::string& body) {
  const json req = parse_body(body);
  if (!req.contains("action")) return error(422, "request needs an 'action' object");
  Action action;
  try {
    action = action_from_json(*schema_, req.at("action"));
  } catch (const ValidationError& e) {
    return error(422, e.what());
  }
  std::optional<std::int64_t> client_t;
  if (req.contains("client_t_ms")) client_t = req.at("client_t_ms").get<std::int64_t>();

  auto& s = entry.session;
  if (!s.active()) return error(410, "session has ended (" + std::string(to_string(s.status())) + ")");
  // Server receipt time is authoritative.
  const std::int64_t now = std::max(clock_(), s.last_event_ms());
  json events = json::array();
  for (const auto& e : s.tick(now)) events.push_back(event_summary(e));
  if (!s.active()) {
    persist_if_ended(entry);
    json out = {{"error", "session has ended (" + std::string(to_string(s.status())) + ")"}, {"events", events}};
    return json_response(410, out);
  }
  StepResult r;
  try {
    r = s.submit_action(action, now, client_t);
  } catch (const ValidationError& e) {
    return error(422, e.what());
  }
  json out = {{"seq", s.log().events.back().seq},
              {"state", state_to_json(r.state)},
              {"phase", to_string(r.phase)},
              {"current_phase", to_string(s.phase())},
              {"status", to_string(s.status())},
              {"saves", s.phase_state().saves},
              {"events", events}};
  if (r.score) out["score"] = *r.score;
  persist_if_ended(entry);
  return json_response(200, out);
}

HttpResponse DesignService::tick(Entry& entry, const std::string& body) {
  parse_body(body);
  auto& s = entry.session;
  json events = json::array();
  json out;
  if (s.active()) {
    const std::int64_t now = std::max(clock_(), s.last_event_ms());
    for (const auto& e : s.tick(now)) {
      events.push_back(event_summary(e));
      if (e.kind == EventKind::warning) out["warning"] = e.payload;
      if (e.kind == EventKind::timeout) out["timeout"] = e.payload;
    }
  }
  out["events"] = events;
  out["phase"] = to_string(s.phase());
  out["status"] = to_string(s.status());
  out["phase_deadline_ms"] = s.phase_deadline_ms();
  out["saves"] = s.phase_state().saves;
  persist_if_ended(entry);
  return json_response(200, out);
}

HttpResponse DesignService::respond(Entry& entry, const std::string& body) {
  const json req = parse_body(body);
  if (!req.contains("key") || !req.at("key").is_string()) return error(422, "response needs a string 'key'");
  auto& s = entry.session;
  const std::int64_t now = std::max(clock_(), s.last_event_ms());
  s.record_response(req.at("key").get<std::string>(), req.value("value", json()), now);
  return json_response(200, {{"seq", s.log().events.back().seq}});
}

HttpResponse DesignService::status(Entry& entry) {
  const auto& s = entry.session;
  json out = {{"session_id", s.id()},
              {"goal", s.config().goal},
              {"reward_kind", to_string(s.config().reward_kind)},
              {"phase", to_string(s.phase())},
              {"status", to_string(s.status())},
              {"saves", s.phase_state().saves},
              {"phase_deadline_ms", s.phase_deadline_ms()},
              {"state", state_to_json(s.state())}};
  if (auto sc = s.current_score()) out["score"] = *sc;
  return json_response(200, out);
}

HttpResponse DesignService::export_log(Entry& entry) {
  return {200, "application/x-ndjson", log_to_jsonl(*schema_, entry.session.log())};
}

void DesignService::persist_if_ended(Entry& entry) {
  if (options_.log_dir.empty() || entry.persisted || entry.session.active()) return;
  fs::create_directories(options_.log_dir);
  write_log(*schema_, entry.session.log(), (fs::path(options_.log_dir) / (entry.session.id() + ".jsonl")).string());
  entry.persisted = true;
}

std::map<std::string, std::shared_ptr<const CalibratedModel>> load_models_dir(const FeatureSchema& schema,
                                                                             const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("models directory '" + dir + "' not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, std::shared_ptr<const CalibratedModel>> out;
  for (const auto& f : files) {
    auto m = load_model(schema, f.string());
    if (m.model.kind != RewardKind::goal_aligned) continue;
    const std::string goal = m.model.goal;
    if (out.count(goal)) throw ValidationError("two goal-aligned models for goal '" + goal + "' in " + dir);
    out.emplace(goal, std::make_shared<const CalibratedModel>(std::move(m)));
  }
  return out;
}

void serve(DesignService& service, const std::string& host, int port) {
  httplib::Server server;
  auto forward = [&service](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> headers;
    if (req.has_header("Idempotency-Key")) headers["Idempotency-Key"] = req.get_header_value("Idempotency-Key");
    const auto out = service.handle(req.method, req.path, req.body, headers);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  server.Get(R"(/v1/.*)", forward);
  server.Post(R"(/v1/.*)", forward);
  if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace design_lab
