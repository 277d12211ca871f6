#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "design_lab/reward.hpp"
#include "design_lab/schema.hpp"
#include "design_lab/session.hpp"

namespace design_lab {

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

// Milliseconds on the server's clock.
using Clock = std::function<std::int64_t()>;
Clock steady_clock_ms();

struct ServiceOptions {
  // Agnostic session i gets seed mix_seed(agnostic_seed_base, i).
  std::uint64_t agnostic_seed_base = 1;
  // Finished sessions are written here as <id>.jsonl when non-empty.
  std::string log_dir;
};

// Session lifecycle over a small JSON API rooted at /v1. Transport-free:
// handle() is the whole router, so tests drive it without sockets.
class DesignService {
 public:
  DesignService(std::shared_ptr<const FeatureSchema> schema,
                std::map<std::string, std::shared_ptr<const CalibratedModel>> aligned_models, Clock clock,
                ServiceOptions options = {});

  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body,
                      const std::map<std::string, std::string>& headers = {});

  std::size_t session_count() const;

 private:
  struct Entry {
    std::mutex mutex;
    Session session;
    bool persisted = false;
    explicit Entry(Session s) : session(std::move(s)) {}
  };

  HttpResponse create(const std::string& body, const std::map<std::string, std::string>& headers);
  HttpResponse act(Entry& entry, const std::string& body);
  HttpResponse tick(Entry& entry, const std::string& body);
  HttpResponse respond(Entry& entry, const std::string& body);
  HttpResponse status(Entry& entry);
  HttpResponse export_log(Entry& entry);
  std::shared_ptr<Entry> find(const std::string& id) const;
  void persist_if_ended(Entry& entry);

  std::shared_ptr<const FeatureSchema> schema_;
  std::map<std::string, std::shared_ptr<const CalibratedModel>> aligned_;
  Clock clock_;
  ServiceOptions options_;

  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::map<std::string, std::string> idempotency_;
  std::uint64_t created_ = 0;
  std::uint64_t next_condition_ = 0;
};

// Aligned models found as *.json in `dir`, keyed by goal.
std::map<std::string, std::shared_ptr<const CalibratedModel>> load_models_dir(const FeatureSchema& schema,
                                                                             const std::string& dir);

// Blocks serving `service` over HTTP until the process is stopped.
void serve(DesignService& service, const std::string& host, int port);

}  // namespace design_lab
