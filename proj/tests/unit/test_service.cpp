#include <atomic>
#include <filesystem>
#include <sstream>
#include <thread>

#include "design_lab/agents.hpp"
#include "design_lab/service.hpp"
#include "doctest.h"

using namespace design_lab;
using nlohmann::json;

namespace {

const auto kSchema = std::make_shared<const FeatureSchema>(default_chair_schema());

std::map<std::string, std::shared_ptr<const CalibratedModel>> models(std::initializer_list<const char*> goals) {
  std::map<std::string, std::shared_ptr<const CalibratedModel>> out;
  std::uint64_t seed = 500;
  for (const char* g : goals) {
    const auto ds = generate_pilot_dataset(*kSchema, builtin_goal_profile(*kSchema, g), 120, seed++);
    out.emplace(g, std::make_shared<const CalibratedModel>(make_goal_aligned(*kSchema, ds)));
  }
  return out;
}

struct Harness {
  std::shared_ptr<std::atomic<std::int64_t>> now = std::make_shared<std::atomic<std::int64_t>>(0);
  DesignService svc;

  explicit Harness(std::map<std::string, std::shared_ptr<const CalibratedModel>> m = models({"cheerful", "unique"}),
                   ServiceOptions opt = {})
      : svc(kSchema, std::move(m), [c = now] { return c->load(); }, std::move(opt)) {}

  json call(const std::string& method, const std::string& path, const json& body = json(), int want = 200) {
    const auto r = svc.handle(method, path, body.is_null() ? "" : body.dump());
    CHECK_MESSAGE(r.status == want, method << ' ' << path << " -> " << r.body);
    return r.status == 200 || r.status == 201 ? json::parse(r.body) : json();
  }

  std::string create(json body = json::object()) { return call("POST", "/v1/sessions", body, 201)["session_id"]; }

  json act(const std::string& id, const json& action, int want = 200) {
    return call("POST", "/v1/sessions/" + id + "/actions", {{"action", action}, {"client_t_ms", now->load()}}, want);
  }
};

const json kSave = {{"type", "save"}};

}  // namespace

TEST_CASE("health and schema") {
  Harness h;
  CHECK(h.call("GET", "/v1/health")["ok"] == true);
  CHECK(schema_from_json(h.call("GET", "/v1/schema")) == *kSchema);
}

TEST_CASE("session creation: 201, unknown goal 400, missing model 503") {
  Harness h;
  const auto r = h.svc.handle("POST", "/v1/sessions", "{}");
  CHECK(r.status == 201);
  const auto j = json::parse(r.body);
  CHECK(j["session_id"] == "s-000001");
  CHECK(j["phase"] == "practice");
  CHECK(j["block_order"].size() == 3);
  CHECK(h.svc.handle("POST", "/v1/sessions", R"({"goal":"sporty"})").status == 400);
  CHECK(h.svc.handle("POST", "/v1/sessions", R"({"goal":"dependable"})").status == 503);
  CHECK(h.svc.handle("POST", "/v1/sessions", R"({"goal": )").status == 400);
  CHECK(h.svc.handle("GET", "/v1/sessions", "").status == 405);

  Harness empty(models({}));
  CHECK(empty.svc.handle("POST", "/v1/sessions", "{}").status == 503);
}

TEST_CASE("round robin over goal x reward kind") {
  Harness h;
  std::map<std::pair<std::string, std::string>, int> seen;
  for (int i = 0; i < 8; ++i) {
    const auto j = h.call("POST", "/v1/sessions", json::object(), 201);
    ++seen[{j["goal"], j["reward_kind"]}];
  }
  CHECK(seen.size() == 4);
  for (const auto& [k, n] : seen) CHECK(n == 2);
}

TEST_CASE("idempotency key returns the same session") {
  Harness h;
  const auto a = h.svc.handle("POST", "/v1/sessions", "{}", {{"Idempotency-Key", "abc"}});
  const auto b = h.svc.handle("POST", "/v1/sessions", "{}", {{"Idempotency-Key", "abc"}});
  CHECK(a.status == 201);
  CHECK(b.status == 200);
  CHECK(json::parse(a.body)["session_id"] == json::parse(b.body)["session_id"]);
  CHECK(json::parse(b.body)["replayed"] == true);
  CHECK(h.svc.session_count() == 1);
}

TEST_CASE("actions: scored only in reward; invalid 422; ended 410; unknown 404") {
  Harness h;
  const auto id = h.create({{"goal", "cheerful"}, {"reward_kind", "goal_agnostic"}});
  *h.now = 1000;
  auto r = h.act(id, {{"type", "set_continuous"}, {"feature", "body_width"}, {"value", 0.8}});
  CHECK(r["phase"] == "practice");
  CHECK_FALSE(r.contains("score"));
  CHECK(r["seq"] == 2);
  CHECK(r["state"]["continuous"][*kSchema->find_continuous("body_width")] == 0.8);

  h.act(id, {{"type", "set_continuous"}, {"feature", "body_width"}, {"value", 1.8}}, 422);
  h.act(id, {{"type", "fly"}}, 422);
  h.call("POST", "/v1/sessions/" + id + "/actions", {{"nope", 1}}, 422);
  h.act("s-999999", kSave, 404);
  h.call("GET", "/v1/sessions/" + id + "/actions", json(), 405);
  h.call("GET", "/v1/elsewhere", json(), 404);

  for (int phase = 0; phase < 2; ++phase) {
    h.act(id, kSave);
    h.act(id, kSave);
    *h.now += 300'000;
  }
  r = h.act(id, {{"type", "set_discrete"}, {"feature", "leg_type"}, {"option", "tripod"}});
  CHECK(r["phase"] == "reward");
  CHECK(r.contains("score"));
  const auto st = h.call("GET", "/v1/sessions/" + id);
  CHECK(st["score"] == r["score"]);

  h.act(id, kSave);
  h.act(id, kSave);
  *h.now += 300'000;
  h.act(id, kSave, 410);
  CHECK(h.call("GET", "/v1/sessions/" + id)["status"] == "completed");
}

TEST_CASE("tick reports the warning and the timeout") {
  Harness h;
  const auto id = h.create();
  *h.now = 5'000;
  h.act(id, kSave);
  *h.now = 300'000;
  auto t = h.call("POST", "/v1/sessions/" + id + "/tick");
  REQUIRE(t.contains("warning"));
  CHECK(t["warning"]["saves"] == 1);
  CHECK(t["warning"]["required"] == 2);
  CHECK(t["phase_deadline_ms"] == 420'000);
  CHECK(t["status"] == "active");
  *h.now = 420'000;
  t = h.call("POST", "/v1/sessions/" + id + "/tick");
  CHECK(t.contains("timeout"));
  CHECK(t["status"] == "timed_out");
  h.act(id, kSave, 410);
}

TEST_CASE("export is a replayable JSONL log; responses are recorded") {
  const auto dir = std::filesystem::temp_directory_path() / "design_lab_service_logs";
  std::filesystem::remove_all(dir);
  ServiceOptions opt;
  opt.log_dir = dir.string();
  Harness h(models({"cheerful"}), opt);
  const auto id = h.create({{"reward_kind", "goal_agnostic"}, {"agnostic_seed", 31}});
  h.call("POST", "/v1/sessions/" + id + "/responses", {{"key", "prior_experience"}, {"value", 3}});
  h.call("POST", "/v1/sessions/" + id + "/responses", {{"value", 3}}, 422);
  for (int phase = 0; phase < 3; ++phase) {
    *h.now += 1000;
    h.act(id, {{"type", "set_continuous"}, {"feature", "leg_length"}, {"value", 0.1 * (phase + 2)}});
    h.act(id, kSave);
    h.act(id, kSave);
    *h.now += 300'000;
    h.call("POST", "/v1/sessions/" + id + "/tick");
  }
  const auto r = h.svc.handle("GET", "/v1/sessions/" + id + "/export", "");
  CHECK(r.status == 200);
  CHECK(r.content_type == "application/x-ndjson");
  std::istringstream in(r.body);
  const auto log = parse_log(in);
  CHECK(log.header.model.seed == 31u);
  const auto rep = replay(*kSchema, log);
  CHECK(rep.ok());
  CHECK(rep.scores_verified);
  CHECK(std::filesystem::exists(dir / (id + ".jsonl")));
  std::filesystem::remove_all(dir);
}

TEST_CASE("responses never expose reward model parameters") {
  Harness h;
  const auto id = h.create({{"reward_kind", "goal_aligned"}});
  std::vector<std::string> bodies;
  bodies.push_back(h.svc.handle("GET", "/v1/sessions/" + id, "").body);
  for (int phase = 0; phase < 2; ++phase) {
    *h.now += 1000;
    bodies.push_back(h.act(id, kSave).dump());
    bodies.push_back(h.act(id, kSave).dump());
    *h.now += 300'000;
  }
  bodies.push_back(h.act(id, {{"type", "reset"}}).dump());
  bodies.push_back(h.svc.handle("POST", "/v1/sessions/" + id + "/tick", "").body);
  bodies.push_back(h.svc.handle("GET", "/v1/sessions/" + id + "/export", "").body);
  for (const auto& b : bodies) {
    for (const char* leak : {"\"theta\"", "\"std\"", "\"mean\"", "logl_min", "logl_max", "continuous_params"}) {
      CHECK_MESSAGE(b.find(leak) == std::string::npos, leak);
    }
  }
}

TEST_CASE("concurrent clients on one session leave a gap-free log") {
  Harness h;
  const auto id = h.create({{"phase_duration_ms", 3'600'000}});
  std::atomic<int> ok{0};
  std::vector<std::thread> threads;
  for (int w = 0; w < 8; ++w) {
    threads.emplace_back([&, w] {
      for (int i = 0; i < 50; ++i) {
        h.now->fetch_add(1);
        const json a = {{"action", {{"type", "set_continuous"}, {"feature", kSchema->continuous()[w].name},
                                    {"value", (i % 10) / 10.0}}}};
        if (h.svc.handle("POST", "/v1/sessions/" + id + "/actions", a.dump()).status == 200) ++ok;
        if (i % 10 == 0) h.svc.handle("POST", "/v1/sessions", "{}");
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(ok == 400);
  std::istringstream in(h.svc.handle("GET", "/v1/sessions/" + id + "/export", "").body);
  const auto log = parse_log(in);
  REQUIRE(log.events.size() == 401);
  for (std::size_t i = 0; i < log.events.size(); ++i) CHECK(log.events[i].seq == i + 1);
  CHECK(replay(*kSchema, log).ok());
  CHECK(h.svc.session_count() == 1 + 8 * 5);
}
