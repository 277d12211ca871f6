#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "design_lab/agents.hpp"
#include "design_lab/analysis.hpp"
#include "design_lab/errors.hpp"
#include "design_lab/reward.hpp"
#include "design_lab/schema.hpp"
#include "design_lab/service.hpp"
#include "design_lab/session.hpp"

namespace py = pybind11;
using namespace design_lab;
using nlohmann::json;

namespace {

std::shared_ptr<const FeatureSchema> shared_schema(const FeatureSchema& s) {
  return std::make_shared<const FeatureSchema>(s);
}

SessionLog parse_jsonl(const std::string& text, const FeatureSchema* fallback) {
  std::istringstream in(text);
  return parse_log(in, fallback);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Chair design lab core: schema, reward models, sessions, agents and analysis";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<EstimationError>(m, "EstimationError", PyExc_RuntimeError);
  py::register_exception<SessionEndedError>(m, "SessionEndedError", PyExc_RuntimeError);

  py::class_<FeatureSchema>(m, "Schema")
      .def_static("default", &default_chair_schema)
      .def_static("from_json", [](const std::string& text) { return schema_from_json(json::parse(text)); })
      .def("to_json", [](const FeatureSchema& s) { return schema_to_json(s).dump(); })
      .def_property_readonly("continuous_count", &FeatureSchema::continuous_count)
      .def_property_readonly("discrete_count", &FeatureSchema::discrete_count)
      .def_property_readonly("parameter_count", &FeatureSchema::parameter_count)
      .def_property_readonly("encoded_size", &FeatureSchema::encoded_size)
      .def_property_readonly("controls", &FeatureSchema::controls)
      .def("continuous_names",
           [](const FeatureSchema& s) {
             std::vector<std::string> out;
             for (const auto& f : s.continuous()) out.push_back(f.name);
             return out;
           })
      .def("discrete_names", [](const FeatureSchema& s) {
        std::vector<std::string> out;
        for (const auto& f : s.discrete()) out.push_back(f.name);
        return out;
      });

  py::class_<DesignState>(m, "DesignState")
      .def(py::init<>())
      .def(py::init([](std::vector<double> c, std::vector<std::size_t> d) { return DesignState{std::move(c), std::move(d)}; }),
           py::arg("continuous"), py::arg("discrete"))
      .def_readwrite("continuous", &DesignState::continuous)
      .def_readwrite("discrete", &DesignState::discrete)
      .def("__eq__", [](const DesignState& a, const DesignState& b) { return a == b; })
      .def("__repr__", [](const DesignState& s) { return "DesignState(" + state_to_json(s).dump() + ")"; });

  py::class_<CalibratedModel>(m, "Model")
      .def_property_readonly("kind", [](const CalibratedModel& c) { return std::string(to_string(c.model.kind)); })
      .def_property_readonly("goal", [](const CalibratedModel& c) { return c.model.goal; })
      .def_property_readonly("seed", [](const CalibratedModel& c) { return c.model.seed; })
      .def_property_readonly("parameter_count", [](const CalibratedModel& c) { return c.model.parameter_count(); })
      .def_property_readonly("logl_min", [](const CalibratedModel& c) { return c.calibration.logl_min; })
      .def_property_readonly("logl_max", [](const CalibratedModel& c) { return c.calibration.logl_max; })
      .def("to_json", [](const CalibratedModel& c, const FeatureSchema& s) { return model_to_json(s, c).dump(); })
      .def_static("from_json", [](const FeatureSchema& s, const std::string& text) {
        return model_from_json(s, json::parse(text));
      });

  m.def("initial_state", &initial_state, py::arg("schema"));
  m.def(
      "apply_action",
      [](const FeatureSchema& s, const DesignState& st, const std::string& action_json) {
        return apply_action(s, st, action_from_json(s, json::parse(action_json)));
      },
      py::arg("schema"), py::arg("state"), py::arg("action_json"));
  m.def("encode_design", &encode_design, py::arg("schema"), py::arg("state"));
  m.def("decode_design", &decode_design, py::arg("schema"), py::arg("encoded"));

  m.def(
      "fit_goal_aligned",
      [](const FeatureSchema& s, const std::string& goal, const std::vector<DesignState>& designs, double sigma_floor) {
        DesignDataset ds;
        ds.goal = goal;
        ds.designs = designs;
        return make_goal_aligned(s, ds, FitConfig{sigma_floor});
      },
      py::arg("schema"), py::arg("goal"), py::arg("designs"), py::arg("sigma_floor") = kSigmaFloor);
  m.def(
      "goal_agnostic",
      [](const FeatureSchema& s, std::uint64_t seed, const std::string& goal) { return make_goal_agnostic(s, seed, goal); },
      py::arg("schema"), py::arg("seed"), py::arg("goal") = "custom");
  m.def(
      "log_likelihood", [](const CalibratedModel& c, const DesignState& st) { return log_likelihood(c.model, st); },
      py::arg("model"), py::arg("state"));
  m.def(
      "score", [](const CalibratedModel& c, const DesignState& st) { return score(c, st); }, py::arg("model"),
      py::arg("state"));
  m.def(
      "optimal_design", [](const FeatureSchema& s, const CalibratedModel& c) { return optimal_design(s, c.model); },
      py::arg("schema"), py::arg("model"));
  m.def("fingerprint", &fingerprint, py::arg("schema"), py::arg("model"));
  m.def("sample_uniform_designs", &sample_uniform_designs, py::arg("schema"), py::arg("n"), py::arg("seed"));

  m.def(
      "pilot_dataset",
      [](const FeatureSchema& s, const std::string& goal, std::size_t n, std::uint64_t seed) {
        return generate_pilot_dataset(s, builtin_goal_profile(s, goal), n, seed).designs;
      },
      py::arg("schema"), py::arg("goal"), py::arg("n"), py::arg("seed"));

  m.def(
      "simulate_session",
      [](const FeatureSchema& s, const CalibratedModel& aligned, const std::string& reward_kind, std::uint64_t seed,
         const std::string& reward_policy_json) {
        auto schema = shared_schema(s);
        auto internal = std::make_shared<const CalibratedModel>(aligned);
        SessionConfig cfg;
        cfg.goal = aligned.model.goal;
        cfg.reward_kind = reward_kind_from_string(reward_kind);
        cfg.block_order_seed = seed;
        auto model = internal;
        if (cfg.reward_kind == RewardKind::goal_agnostic) {
          cfg.agnostic_seed = seed;
          model = std::make_shared<const CalibratedModel>(make_goal_agnostic(s, seed, cfg.goal));
        }
        DesignerSpec designer;
        designer.internal_model = internal;
        if (!reward_policy_json.empty()) designer.reward = policy_from_json(json::parse(reward_policy_json));
        Session session = create_session(schema, cfg, model, 0, "py-" + std::to_string(seed));
        return log_to_jsonl(s, simulate_session(session, designer, seed));
      },
      py::arg("schema"), py::arg("aligned"), py::arg("reward_kind"), py::arg("seed"), py::arg("reward_policy_json") = "",
      "Runs a full simulated session and returns its JSONL log.");

  m.def(
      "replay",
      [](const std::string& jsonl, const CalibratedModel* model) {
        std::istringstream head(jsonl);
        const FeatureSchema schema = log_schema(head);
        const SessionLog log = parse_jsonl(jsonl, &schema);
        const auto r = replay(schema, log, model);
        py::list divergences;
        for (const auto& d : r.divergences) divergences.append(py::make_tuple(d.line, d.seq, d.what));
        py::dict out;
        out["events_checked"] = r.events_checked;
        out["scores_verified"] = r.scores_verified;
        out["divergences"] = divergences;
        return out;
      },
      py::arg("jsonl"), py::arg("model") = nullptr);

  m.def("gower_distance", &gower_distance, py::arg("schema"), py::arg("a"), py::arg("b"));
  m.def("diversity", &diversity, py::arg("schema"), py::arg("designs"));
  m.def(
      "persistence",
      [](const std::string& jsonl, const std::string& phase) {
        std::istringstream head(jsonl);
        const FeatureSchema schema = log_schema(head);
        return persistence(schema, parse_jsonl(jsonl, &schema), phase_from_string(phase));
      },
      py::arg("jsonl"), py::arg("phase"));
  m.def(
      "reward_drift",
      [](const std::string& jsonl, const CalibratedModel& aligned) {
        std::istringstream head(jsonl);
        const FeatureSchema schema = log_schema(head);
        return reward_drift(schema, parse_jsonl(jsonl, &schema), aligned);
      },
      py::arg("jsonl"), py::arg("aligned"));
  m.def("score_correlation", &score_correlation, py::arg("schema"), py::arg("a"), py::arg("b"), py::arg("n"),
        py::arg("seed"));
  m.def(
      "landscape_best_cell",
      [](const FeatureSchema& s, const std::vector<DesignState>& designs, const std::vector<double>& scores,
         std::size_t bins) {
        const auto g = landscape_grid(s, designs, scores, bins);
        const std::size_t best = g.best_cell();
        return py::make_tuple(best % bins, best / bins);
      },
      py::arg("schema"), py::arg("designs"), py::arg("scores"), py::arg("bins"));

  py::class_<DesignService>(m, "Service")
      .def(py::init([](const FeatureSchema& s, const std::vector<CalibratedModel>& aligned,
                       std::function<std::int64_t()> clock) {
             std::map<std::string, std::shared_ptr<const CalibratedModel>> models;
             for (const auto& a : aligned) models.emplace(a.model.goal, std::make_shared<const CalibratedModel>(a));
             return std::make_unique<DesignService>(shared_schema(s), models, clock);
           }),
           py::arg("schema"), py::arg("aligned_models"), py::arg("clock"))
      .def(
          "handle",
          [](DesignService& svc, const std::string& method, const std::string& path, const std::string& body) {
            const auto r = svc.handle(method, path, body);
            return py::make_tuple(r.status, r.content_type, r.body);
          },
          py::arg("method"), py::arg("path"), py::arg("body") = "");
}
