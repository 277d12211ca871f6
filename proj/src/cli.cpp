#include "design_lab/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "design_lab/agents.hpp"
#include "design_lab/analysis.hpp"
#include "design_lab/errors.hpp"
#include "design_lab/random.hpp"
#include "design_lab/service.hpp"
#include "json.hpp"

namespace design_lab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Config files are JSON: top-level keys are global flags, nested objects
// are subcommands, e.g. {"fit": {"goal": "cheerful", "data": "pilot.jsonl"}}.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j;
    for (const CLI::Option* opt : app->get_options({})) {
      if (!opt->get_lnames().empty() && opt->get_configurable()) {
        const std::string name = opt->get_lnames()[0];
        if (opt->count() > 0) {
          j[name] = opt->as<std::string>();
        } else if (default_also && !opt->get_default_str().empty()) {
          j[name] = opt->get_default_str();
        }
      }
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static void flatten(const json& j, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        flatten(value, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      } else if (value.is_string()) {
        item.inputs = {value.get<std::string>()};
      } else {
        item.inputs = {value.dump()};  // dump keeps 64-bit seeds exact
      }
      out.push_back(std::move(item));
    }
  }
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

FeatureSchema schema_or_default(const std::string& path) {
  return path.empty() ? default_chair_schema() : load_schema(path);
}

DesignerSpec designer_from_json(const json& j) {
  DesignerSpec d;
  if (j.is_null()) return d;
  try {
    if (j.contains("practice")) d.practice = policy_from_json(j.at("practice"));
    if (j.contains("baseline")) d.baseline = policy_from_json(j.at("baseline"));
    if (j.contains("reward")) d.reward = policy_from_json(j.at("reward"));
    d.actions_per_phase = j.value("actions_per_phase", d.actions_per_phase);
    d.action_interval_ms = j.value("action_interval_ms", d.action_interval_ms);
    d.save_every = j.value("save_every", d.save_every);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed designer: ") + e.what());
  }
  if (d.action_interval_ms <= 0) throw ValidationError("action_interval_ms must be positive");
  return d;
}

json designer_to_json(const DesignerSpec& d) {
  return {{"practice", policy_to_json(d.practice)},
          {"baseline", policy_to_json(d.baseline)},
          {"reward", policy_to_json(d.reward)},
          {"actions_per_phase", d.actions_per_phase},
          {"action_interval_ms", d.action_interval_ms},
          {"save_every", d.save_every}};
}

std::string csv_double(std::optional<double> v) {
  if (!v) return "";
  std::ostringstream out;
  out << std::setprecision(17) << *v;
  return out.str();
}

struct SimJob {
  std::string run_id;
  std::uint64_t seed = 0;
  SessionConfig config;
  DesignerSpec designer;
};

struct SimResult {
  std::string session_id;
  std::string status;
  std::optional<double> final_score;
  std::optional<double> mean_reward_score;
  std::optional<double> drift;
  std::string error;
};

int run_simulate(const std::string& manifest_path, const std::string& models_dir, const std::string& out_dir,
                 unsigned workers, std::ostream& out) {
  const auto schema = std::make_shared<const FeatureSchema>(default_chair_schema());
  const auto models = load_models_dir(*schema, models_dir);
  const json manifest = read_json_file(manifest_path);

  std::vector<SimJob> jobs;
  try {
    std::size_t index = 0;
    for (const auto& run : manifest.at("runs")) {
      const std::string id = run.value("id", "run" + std::to_string(index++));
      DesignerSpec designer = designer_from_json(run.value("designer", json()));
      if (run.contains("policy")) designer.reward = policy_from_json(run.at("policy"));
      const SessionConfig base = config_from_json(run.value("config", json::object()));
      for (const auto& s : run.at("seeds")) {
        SimJob job{id, s.get<std::uint64_t>(), base, designer};
        if (job.config.reward_kind == RewardKind::goal_agnostic && !job.config.agnostic_seed) {
          job.config.agnostic_seed = mix_seed(job.seed, 0xA9);
        }
        if (!run.value("config", json::object()).contains("block_order_seed")) job.config.block_order_seed = job.seed;
        jobs.push_back(std::move(job));
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  for (const auto& job : jobs) {
    if (!models.count(job.config.goal)) {
      throw ValidationError("no goal-aligned model for goal '" + job.config.goal + "' in " + models_dir);
    }
  }
  fs::create_directories(out_dir);

  std::vector<SimResult> results(jobs.size());
  std::size_t next = 0;
  std::mutex next_mutex;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(next_mutex);
        if (next >= jobs.size()) return;
        i = next++;
      }
      const auto& job = jobs[i];
      auto& r = results[i];
      r.session_id = job.run_id + "-" + std::to_string(job.seed);
      try {
        const auto aligned = models.at(job.config.goal);
        auto model = aligned;
        if (job.config.reward_kind == RewardKind::goal_agnostic) {
          model = std::make_shared<const CalibratedModel>(
              make_goal_agnostic(*schema, *job.config.agnostic_seed, job.config.goal));
        }
        DesignerSpec designer = job.designer;
        designer.internal_model = aligned;
        Session session = create_session(schema, job.config, model, 0, r.session_id);
        const auto log = simulate_session(session, designer, job.seed);
        write_log(*schema, log, (fs::path(out_dir) / (r.session_id + ".jsonl")).string());
        r.status = std::string(to_string(session.status()));
        for (const auto& e : log.events) {
          if (e.phase == Phase::reward && e.score) r.final_score = *e.score;
        }
        const auto shown = shown_save_scores(log, Phase::reward);
        if (!shown.empty()) {
          double total = 0;
          for (int s : shown) total += s;
          r.mean_reward_score = total / static_cast<double>(shown.size());
        }
        if (!shown.empty() && !saved_designs(log, Phase::baseline).empty()) {
          r.drift = reward_drift(*schema, log, *aligned);
        }
      } catch (const std::exception& e) {
        r.error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned n = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(jobs.size())));
  for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::ostringstream csv;
  csv << "run_id,seed,session_id,goal,reward_kind,agnostic_seed,reward_policy,status,final_score,mean_reward_score,"
         "drift\n";
  std::size_t failures = 0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& j = jobs[i];
    const auto& r = results[i];
    if (!r.error.empty()) {
      ++failures;
      out << r.session_id << ": " << r.error << '\n';
    }
    csv << j.run_id << ',' << j.seed << ',' << r.session_id << ',' << j.config.goal << ','
        << to_string(j.config.reward_kind) << ',' << (j.config.agnostic_seed ? std::to_string(*j.config.agnostic_seed) : "")
        << ',' << policy_name(j.designer.reward) << ',' << r.status << ',' << csv_double(r.final_score) << ','
        << csv_double(r.mean_reward_score) << ',' << csv_double(r.drift) << '\n';
  }
  write_text((fs::path(out_dir) / "summary.csv").string(), csv.str());
  json meta = {{"manifest", manifest_path}, {"models_dir", models_dir}, {"runs", json::array()}};
  for (const auto& j : jobs) {
    meta["runs"].push_back({{"run_id", j.run_id},
                            {"seed", j.seed},
                            {"config", config_to_json(j.config)},
                            {"designer", designer_to_json(j.designer)}});
  }
  write_text((fs::path(out_dir) / "summary.meta.json").string(), meta.dump(2) + "\n");
  out << jobs.size() - failures << " of " << jobs.size() << " sessions simulated into " << out_dir << '\n';
  return failures == 0 ? 0 : 1;
}

std::vector<fs::path> log_files(const std::string& path) {
  std::vector<fs::path> files;
  if (fs::is_regular_file(path)) return {fs::path(path)};
  if (!fs::is_directory(path)) throw std::runtime_error("no logs at '" + path + "'");
  for (const auto& e : fs::directory_iterator(path)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

int run_analyze(const std::string& logs, const std::string& models_dir, const std::string& out_path,
                const std::string& landscape_path, std::size_t bins, std::ostream& out) {
  const FeatureSchema schema = default_chair_schema();
  std::map<std::string, std::shared_ptr<const CalibratedModel>> models;
  if (!models_dir.empty()) models = load_models_dir(schema, models_dir);

  std::vector<SessionMetrics> rows;
  std::vector<DesignState> saved;
  std::vector<double> saved_scores;
  json sources = json::array();
  for (const auto& f : log_files(logs)) {
    const SessionLog log = read_log(f.string(), &schema);
    auto it = models.find(log.header.config.goal);
    const CalibratedModel* aligned = it == models.end() ? nullptr : it->second.get();
    rows.push_back(session_metrics(schema, log, aligned));
    json src = {{"file", f.filename().string()},
                {"session_id", log.header.session_id},
                {"block_order_seed", log.header.config.block_order_seed}};
    if (log.header.model.seed) src["agnostic_seed"] = *log.header.model.seed;
    sources.push_back(src);
    if (aligned) {
      for (const auto& e : log.events) {
        if (e.kind != EventKind::save) continue;
        saved.push_back(e.state);
        saved_scores.push_back(score(*aligned, e.state));
      }
    }
  }
  std::ostringstream csv;
  write_metrics_csv(rows, csv);
  write_text(out_path, csv.str());
  json meta = {{"persistence_definition", kPersistenceDefinition},
               {"slider_emission", "on_release"},
               {"drift_definition", "mean shown score of reward-phase saves minus mean goal-aligned score of "
                                    "baseline-phase saves"},
               {"sessions", sources}};
  if (!landscape_path.empty()) {
    if (saved.size() < 3) throw ValidationError("landscape needs at least 3 saved designs with a matching model");
    const auto grid = landscape_grid(schema, saved, saved_scores, bins);
    std::ostringstream lcsv;
    write_landscape_csv(grid, lcsv);
    write_text(landscape_path, lcsv.str());
    meta["landscape"] = {{"file", landscape_path}, {"bins", bins}, {"designs", saved.size()},
                         {"score", "goal-aligned model of each session's goal"}};
  }
  write_text(out_path + ".meta.json", meta.dump(2) + "\n");
  out << rows.size() << " sessions analysed into " << out_path << '\n';
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Goal-directed chair design lab: reward models, sessions, agents and analysis", "design-lab"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file supplying flag values");

  const char* env_dir = std::getenv("DESIGN_LAB_DATA_DIR");
  std::string data_dir = env_dir && *env_dir ? env_dir : ".";
  app.add_option("--data-dir", data_dir, "Default directory for models, runs and session logs")
      ->envname("DESIGN_LAB_DATA_DIR");
  auto under_data = [&](const std::string& value, const char* sub) {
    return value.empty() ? (fs::path(data_dir) / sub).string() : value;
  };

  // fit
  std::string fit_goal, fit_data, fit_out, schema_path;
  double sigma_floor = kSigmaFloor;
  auto* fit = app.add_subcommand("fit", "Fit a goal-aligned reward model from a design dataset");
  fit->add_option("--goal", fit_goal, "Goal label the dataset was collected for")->required();
  fit->add_option("--data", fit_data, "Dataset JSONL")->required();
  fit->add_option("--out", fit_out, "Model file to write")->required();
  fit->add_option("--sigma-floor", sigma_floor, "Lower bound on fitted standard deviations")
      ->check(CLI::PositiveNumber);
  fit->add_option("--schema", schema_path, "Feature schema JSON (default: chair schema)");

  // agnostic
  std::string ag_goal = "custom", ag_out;
  std::uint64_t ag_seed = 0, ag_ref_seed = kAgnosticReferenceSeed;
  std::size_t ag_ref_size = kAgnosticReferenceSize;
  auto* agnostic = app.add_subcommand("agnostic", "Sample a goal-agnostic control model");
  agnostic->add_option("--seed", ag_seed, "Parameter seed")->required();
  agnostic->add_option("--goal", ag_goal, "Goal label to attach");
  agnostic->add_option("--out", ag_out, "Model file to write")->required();
  agnostic->add_option("--reference-size", ag_ref_size, "Uniform designs used for calibration");
  agnostic->add_option("--reference-seed", ag_ref_seed, "Seed of the calibration reference");
  agnostic->add_option("--schema", schema_path, "Feature schema JSON (default: chair schema)");

  // pilot
  std::string pilot_goal, pilot_profile, pilot_out;
  std::size_t pilot_n = 0;
  std::uint64_t pilot_seed = 0;
  auto* pilot = app.add_subcommand("pilot", "Generate a synthetic pilot dataset from a goal profile");
  auto* pg = pilot->add_option("--goal", pilot_goal, "Built-in profile: cheerful, dependable, unique or custom");
  auto* pp = pilot->add_option("--profile", pilot_profile, "Goal profile JSON");
  pg->excludes(pp);
  pilot->add_option("--n", pilot_n, "Number of designs")->required()->check(CLI::Range(std::size_t{2}, std::size_t{10'000'000}));
  pilot->add_option("--seed", pilot_seed, "Sampling seed")->required();
  pilot->add_option("--out", pilot_out, "Dataset JSONL to write")->required();

  // simulate
  std::string manifest, sim_models, sim_out;
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  auto* simulate = app.add_subcommand("simulate", "Run a batch of simulated sessions from a manifest");
  simulate->add_option("--manifest", manifest, "Manifest JSON: {\"runs\": [{id, config, policy, designer, seeds}]}")
      ->required();
  simulate->add_option("--models", sim_models, "Directory of goal-aligned model files (default: <data-dir>/models)");
  simulate->add_option("--out", sim_out, "Output directory (default: <data-dir>/runs)");
  simulate->add_option("--workers", workers, "Parallel workers")->check(CLI::PositiveNumber);

  // analyze
  std::string an_logs, an_models, an_out, an_landscape;
  std::size_t bins = 25;
  auto* analyze = app.add_subcommand("analyze", "Compute per-session metrics and a landscape grid from logs");
  analyze->add_option("--logs", an_logs, "Log file or directory (default: <data-dir>/runs)");
  analyze->add_option("--models", an_models, "Directory of goal-aligned model files (default: <data-dir>/models)");
  analyze->add_option("--out", an_out, "Metrics CSV to write")->required();
  analyze->add_option("--landscape", an_landscape, "Landscape CSV to write");
  analyze->add_option("--bins", bins, "Landscape bins per axis")->check(CLI::Range(std::size_t{2}, std::size_t{1000}));

  // replay
  std::string rp_log, rp_model;
  auto* replay_cmd = app.add_subcommand("replay", "Re-derive a session log and report divergences");
  replay_cmd->add_option("--log", rp_log, "Session log JSONL")->required();
  replay_cmd->add_option("--model", rp_model, "Reward model file (goal-agnostic models regenerate from the log)");

  // serve
  std::string sv_models, sv_host = "127.0.0.1", sv_log_dir;
  int sv_port = 8080;
  std::uint64_t sv_seed = 1;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the /v1 HTTP API");
  serve_cmd->add_option("--models", sv_models, "Directory of goal-aligned model files (default: <data-dir>/models)");
  serve_cmd->add_option("--host", sv_host, "Bind address");
  serve_cmd->add_option("--port", sv_port, "Port")->check(CLI::Range(1, 65535));
  serve_cmd->add_option("--seed", sv_seed, "Base seed for goal-agnostic sessions");
  serve_cmd->add_option("--log-dir", sv_log_dir, "Where finished sessions are written (default: <data-dir>/sessions)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    // CLI11's exit() prints help/usage; success codes are --help and friends.
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*fit) {
      const FeatureSchema schema = schema_or_default(schema_path);
      DesignDataset ds = read_dataset(schema, fit_data);
      if (ds.goal != fit_goal) {
        throw ValidationError("dataset goal '" + ds.goal + "' does not match --goal '" + fit_goal + "'");
      }
      const auto model = make_goal_aligned(schema, ds, FitConfig{sigma_floor});
      save_model(schema, model, fit_out);
      out << "wrote " << fit_out << ": goal_aligned " << fit_goal << ", " << model.model.parameter_count()
          << " parameters, calibration [" << model.calibration.logl_min << ", " << model.calibration.logl_max
          << "] on " << ds.designs.size() << " designs\n";
      return 0;
    }
    if (*agnostic) {
      const FeatureSchema schema = schema_or_default(schema_path);
      const auto model = make_goal_agnostic(schema, ag_seed, ag_goal, ag_ref_size, ag_ref_seed);
      save_model(schema, model, ag_out);
      out << "wrote " << ag_out << ": goal_agnostic seed " << ag_seed << ", " << model.model.parameter_count()
          << " parameters, reference seed " << ag_ref_seed << "\n";
      return 0;
    }
    if (*pilot) {
      const FeatureSchema schema = default_chair_schema();
      if (pilot_goal.empty() == pilot_profile.empty()) throw CLI::ValidationError("pilot needs --goal or --profile");
      const GoalProfile profile =
          pilot_profile.empty() ? builtin_goal_profile(schema, pilot_goal) : profile_from_json(schema, read_json_file(pilot_profile));
      const auto ds = generate_pilot_dataset(schema, profile, pilot_n, pilot_seed);
      write_dataset(schema, ds, pilot_out, {{"seed", pilot_seed}, {"generator", "pilot"}});
      out << "wrote " << pilot_out << ": " << ds.designs.size() << " designs for '" << profile.goal << "', seed "
          << pilot_seed << "\n";
      return 0;
    }
    if (*simulate) {
      return run_simulate(manifest, under_data(sim_models, "models"), under_data(sim_out, "runs"), workers, out);
    }
    if (*analyze) {
      return run_analyze(under_data(an_logs, "runs"), under_data(an_models, "models"), an_out, an_landscape, bins,
                         out);
    }
    if (*replay_cmd) {
      std::ifstream in(rp_log);
      if (!in) throw std::runtime_error("cannot open session log '" + rp_log + "'");
      const FeatureSchema schema = log_schema(in);
      const SessionLog log = read_log(rp_log, &schema);
      std::optional<CalibratedModel> model;
      if (!rp_model.empty()) model = load_model(schema, rp_model);
      const auto report = replay(schema, log, model ? &*model : nullptr);
      out << report.events_checked << " events checked, scores " << (report.scores_verified ? "verified" : "unverified")
          << ", " << report.divergences.size() << " divergences\n";
      for (const auto& d : report.divergences) out << "  line " << d.line << " (seq " << d.seq << "): " << d.what << '\n';
      return report.ok() ? 0 : 3;
    }
    if (*serve_cmd) {
      auto schema = std::make_shared<const FeatureSchema>(default_chair_schema());
      auto models = load_models_dir(*schema, under_data(sv_models, "models"));
      DesignService service(schema, models, steady_clock_ms(),
                            ServiceOptions{sv_seed, under_data(sv_log_dir, "sessions")});
      out << "serving " << models.size() << " goal-aligned models on http://" << sv_host << ':' << sv_port << "/v1\n"
          << std::flush;
      serve(service, sv_host, sv_port);
      return 0;
    }
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace design_lab
