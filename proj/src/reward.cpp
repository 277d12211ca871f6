#include "design_lab/reward.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "design_lab/errors.hpp"

namespace design_lab {

namespace {

constexpr double kSimplexTolerance = 1e-12;
const double kHalfLogTwoPi = 0.5 * std::log(2.0 * std::numbers::pi);

double sorted_sum(std::vector<double>& values) {
  // Summing in sorted order makes the fit independent of dataset order.
  std::sort(values.begin(), values.end());
  double total = 0.0;
  for (double v : values) total += v;
  return total;
}

void check_sizes(const RewardModel& model, const DesignState& state) {
  if (state.continuous.size() != model.continuous.size() || state.discrete.size() != model.discrete.size()) {
    throw ValidationError("state shape does not match reward model (" + std::to_string(state.continuous.size()) +
                          "+" + std::to_string(state.discrete.size()) + " vs " +
                          std::to_string(model.continuous.size()) + "+" + std::to_string(model.discrete.size()) +
                          ")");
  }
}

}  // namespace

std::string_view to_string(RewardKind kind) {
  return kind == RewardKind::goal_aligned ? "goal_aligned" : "goal_agnostic";
}

RewardKind reward_kind_from_string(std::string_view name) {
  if (name == "goal_aligned") return RewardKind::goal_aligned;
  if (name == "goal_agnostic") return RewardKind::goal_agnostic;
  throw ValidationError("unknown reward kind '" + std::string(name) + "'");
}

std::size_t RewardModel::parameter_count() const noexcept {
  std::size_t n = 2 * continuous.size();
  for (const auto& theta : discrete) n += theta.size();
  return n;
}

void validate_model(const FeatureSchema& schema, const RewardModel& model) {
  if (model.continuous.size() != schema.continuous_count()) {
    throw ValidationError("model has " + std::to_string(model.continuous.size()) +
                          " continuous parameter pairs, schema has " + std::to_string(schema.continuous_count()));
  }
  if (model.discrete.size() != schema.discrete_count()) {
    throw ValidationError("model has " + std::to_string(model.discrete.size()) +
                          " categorical parameter vectors, schema has " + std::to_string(schema.discrete_count()));
  }
  for (std::size_t c = 0; c < model.continuous.size(); ++c) {
    const auto& p = model.continuous[c];
    const auto& name = schema.continuous()[c].name;
    if (!std::isfinite(p.mean)) throw ValidationError("feature '" + name + "': mean is not finite");
    if (!(p.stddev > 0.0) || !std::isfinite(p.stddev)) {
      throw ValidationError("feature '" + name + "': std must be positive and finite");
    }
  }
  for (std::size_t d = 0; d < model.discrete.size(); ++d) {
    const auto& theta = model.discrete[d];
    const auto& f = schema.discrete()[d];
    if (theta.size() != f.options.size()) {
      throw ValidationError("feature '" + f.name + "': theta has " + std::to_string(theta.size()) +
                            " entries, expected " + std::to_string(f.options.size()));
    }
    double total = 0.0;
    for (double t : theta) {
      if (!(t > 0.0)) throw ValidationError("feature '" + f.name + "': theta entries must be strictly positive");
      total += t;
    }
    if (std::abs(total - 1.0) > kSimplexTolerance) {
      throw ValidationError("feature '" + f.name + "': theta does not sum to 1");
    }
  }
}

RewardModel fit_goal_aligned(const FeatureSchema& schema, const DesignDataset& dataset, const FitConfig& config) {
  if (dataset.designs.empty()) throw EstimationError("cannot fit a reward model on an empty dataset");
  if (!(config.sigma_floor > 0.0)) throw ValidationError("sigma floor must be positive");
  if (!(config.smoothing > 0.0)) throw ValidationError("categorical smoothing must be positive");
  for (const auto& s : dataset.designs) validate_state(schema, s);

  const auto n = dataset.designs.size();
  RewardModel model;
  model.kind = RewardKind::goal_aligned;
  model.goal = dataset.goal;

  std::vector<double> column(n);
  for (std::size_t c = 0; c < schema.continuous_count(); ++c) {
    for (std::size_t i = 0; i < n; ++i) column[i] = dataset.designs[i].continuous[c];
    const double mean = sorted_sum(column) / static_cast<double>(n);
    double stddev = config.sigma_floor;
    if (n > 1) {
      std::vector<double> sq(n);
      for (std::size_t i = 0; i < n; ++i) sq[i] = (column[i] - mean) * (column[i] - mean);
      stddev = std::max(std::sqrt(sorted_sum(sq) / static_cast<double>(n - 1)), config.sigma_floor);
    }
    model.continuous.push_back({mean, stddev});
  }

  for (std::size_t d = 0; d < schema.discrete_count(); ++d) {
    const auto k = schema.discrete()[d].options.size();
    std::vector<std::size_t> counts(k, 0);
    for (const auto& s : dataset.designs) ++counts[s.discrete[d]];
    const double denom = static_cast<double>(n) + config.smoothing * static_cast<double>(k);
    std::vector<double> theta(k);
    for (std::size_t o = 0; o < k; ++o) theta[o] = (static_cast<double>(counts[o]) + config.smoothing) / denom;
    model.discrete.push_back(std::move(theta));
  }
  return model;
}

RewardModel sample_goal_agnostic(const FeatureSchema& schema, std::uint64_t seed, std::string goal) {
  Rng rng(seed);
  RewardModel model;
  model.kind = RewardKind::goal_agnostic;
  model.goal = std::move(goal);
  model.seed = seed;
  for (std::size_t c = 0; c < schema.continuous_count(); ++c) {
    const double mean = uniform01(rng);
    const double stddev = std::max(uniform01(rng), kSigmaFloor);
    model.continuous.push_back({mean, stddev});
  }
  for (const auto& f : schema.discrete()) {
    std::vector<double> theta(f.options.size());
    double total = 0.0;
    for (auto& t : theta) {
      t = 1.0 - uniform01(rng);  // (0,1]: keeps every option reachable
      total += t;
    }
    for (auto& t : theta) t /= total;
    model.discrete.push_back(std::move(theta));
  }
  return model;
}

double gaussian_log_density(double x, const GaussianParams& p) {
  const double z = (x - p.mean) / p.stddev;
  return -0.5 * z * z - std::log(p.stddev) - kHalfLogTwoPi;
}

double log_likelihood(const RewardModel& model, const DesignState& state) {
  check_sizes(model, state);
  double total = 0.0;
  for (std::size_t c = 0; c < model.continuous.size(); ++c) {
    total += gaussian_log_density(state.continuous[c], model.continuous[c]);
  }
  for (std::size_t d = 0; d < model.discrete.size(); ++d) {
    total += std::log(model.discrete[d].at(state.discrete[d]));
  }
  return total;
}

ScoreCalibration calibrate(const RewardModel& model, std::span<const DesignState> reference) {
  if (reference.empty()) throw EstimationError("calibration reference set is empty");
  double lo = log_likelihood(model, reference.front());
  double hi = lo;
  for (const auto& s : reference.subspan(1)) {
    const double l = log_likelihood(model, s);
    lo = std::min(lo, l);
    hi = std::max(hi, l);
  }
  if (!(lo < hi)) {
    throw EstimationError("calibration reference set has a single log-likelihood value; use a larger reference set");
  }
  return {lo, hi};
}

DesignState sample_uniform_design(const FeatureSchema& schema, Rng& rng) {
  DesignState s;
  s.continuous.reserve(schema.continuous_count());
  for (std::size_t c = 0; c < schema.continuous_count(); ++c) s.continuous.push_back(uniform01(rng));
  for (const auto& f : schema.discrete()) {
    s.discrete.push_back(std::uniform_int_distribution<std::size_t>(0, f.options.size() - 1)(rng));
  }
  return s;
}

std::vector<DesignState> sample_uniform_designs(const FeatureSchema& schema, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DesignState> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_uniform_design(schema, rng));
  return out;
}

int score_from_log_likelihood(const ScoreCalibration& calibration, double logl) {
  const double t = std::clamp((logl - calibration.logl_min) / (calibration.logl_max - calibration.logl_min), 0.0, 1.0);
  return static_cast<int>(std::floor(100.0 * t + 0.5));
}

int score(const RewardModel& model, const ScoreCalibration& calibration, const DesignState& state) {
  return score_from_log_likelihood(calibration, log_likelihood(model, state));
}

DesignState optimal_design(const FeatureSchema& schema, const RewardModel& model) {
  validate_model(schema, model);
  DesignState s;
  for (const auto& p : model.continuous) s.continuous.push_back(std::clamp(p.mean, 0.0, 1.0));
  for (const auto& theta : model.discrete) {
    // max_element returns the first maximum, so ties go to the lowest index.
    s.discrete.push_back(static_cast<std::size_t>(std::max_element(theta.begin(), theta.end()) - theta.begin()));
  }
  return s;
}

CalibratedModel make_goal_aligned(const FeatureSchema& schema, const DesignDataset& dataset, const FitConfig& config) {
  CalibratedModel out;
  out.model = fit_goal_aligned(schema, dataset, config);
  out.calibration = calibrate(out.model, dataset.designs);
  out.reference = {"training_dataset", dataset.designs.size(), std::nullopt};
  return out;
}

CalibratedModel make_goal_agnostic(const FeatureSchema& schema, std::uint64_t seed, std::string goal,
                                   std::size_t reference_size, std::uint64_t reference_seed) {
  CalibratedModel out;
  out.model = sample_goal_agnostic(schema, seed, std::move(goal));
  const auto reference = sample_uniform_designs(schema, reference_size, reference_seed);
  out.calibration = calibrate(out.model, reference);
  out.reference = {"uniform_random", reference_size, reference_seed};
  return out;
}

nlohmann::json model_to_json(const FeatureSchema& schema, const CalibratedModel& m) {
  validate_model(schema, m.model);
  nlohmann::json cont = nlohmann::json::array();
  for (std::size_t c = 0; c < m.model.continuous.size(); ++c) {
    cont.push_back({{"feature", schema.continuous()[c].name},
                    {"mean", m.model.continuous[c].mean},
                    {"std", m.model.continuous[c].stddev}});
  }
  nlohmann::json disc = nlohmann::json::array();
  for (std::size_t d = 0; d < m.model.discrete.size(); ++d) {
    disc.push_back({{"feature", schema.discrete()[d].name}, {"theta", m.model.discrete[d]}});
  }
  nlohmann::json reference = {{"source", m.reference.source}, {"size", m.reference.size}};
  if (m.reference.seed) reference["seed"] = *m.reference.seed;

  nlohmann::json j = {{"format", "design-lab-reward-model/1"},
                      {"kind", std::string(to_string(m.model.kind))},
                      {"goal", m.model.goal},
                      {"parameter_count", m.model.parameter_count()},
                      {"continuous_params", cont},
                      {"discrete_params", disc},
                      {"calibration",
                       {{"logL_min", m.calibration.logl_min},
                        {"logL_max", m.calibration.logl_max},
                        {"reference", reference}}}};
  if (m.model.seed) j["seed"] = *m.model.seed;
  return j;
}

CalibratedModel model_from_json(const FeatureSchema& schema, const nlohmann::json& j) {
  CalibratedModel m;
  try {
    m.model.kind = reward_kind_from_string(j.at("kind").get<std::string>());
    m.model.goal = j.at("goal").get<std::string>();
    if (j.contains("seed") && !j["seed"].is_null()) m.model.seed = j["seed"].get<std::uint64_t>();

    const auto& cont = j.at("continuous_params");
    if (cont.size() != schema.continuous_count()) {
      throw ValidationError("model file lists " + std::to_string(cont.size()) + " continuous features, schema has " +
                            std::to_string(schema.continuous_count()));
    }
    for (std::size_t c = 0; c < cont.size(); ++c) {
      const auto& e = cont[c];
      if (e.contains("feature") && e["feature"].get<std::string>() != schema.continuous()[c].name) {
        throw ValidationError("model file feature order differs from schema at '" +
                              e["feature"].get<std::string>() + "'");
      }
      m.model.continuous.push_back({e.at("mean").get<double>(), e.at("std").get<double>()});
    }
    const auto& disc = j.at("discrete_params");
    if (disc.size() != schema.discrete_count()) {
      throw ValidationError("model file lists " + std::to_string(disc.size()) + " discrete features, schema has " +
                            std::to_string(schema.discrete_count()));
    }
    for (std::size_t d = 0; d < disc.size(); ++d) {
      const auto& e = disc[d];
      if (e.contains("feature") && e["feature"].get<std::string>() != schema.discrete()[d].name) {
        throw ValidationError("model file feature order differs from schema at '" +
                              e["feature"].get<std::string>() + "'");
      }
      m.model.discrete.push_back(e.at("theta").get<std::vector<double>>());
    }

    const auto& cal = j.at("calibration");
    m.calibration = {cal.at("logL_min").get<double>(), cal.at("logL_max").get<double>()};
    if (cal.contains("reference")) {
      const auto& r = cal["reference"];
      m.reference.source = r.value("source", std::string("custom"));
      m.reference.size = r.value("size", std::size_t{0});
      if (r.contains("seed") && !r["seed"].is_null()) m.reference.seed = r["seed"].get<std::uint64_t>();
    } else {
      m.reference.source = "custom";
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed reward-model document: ") + e.what());
  }
  validate_model(schema, m.model);
  if (!(m.calibration.logl_min < m.calibration.logl_max)) {
    throw ValidationError("calibration requires logL_min < logL_max");
  }
  return m;
}

CalibratedModel load_model(const FeatureSchema& schema, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("model file '" + path + "': " + e.what());
  }
  return model_from_json(schema, j);
}

void save_model(const FeatureSchema& schema, const CalibratedModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file '" + path + "'");
  out << model_to_json(schema, model).dump(2) << '\n';
  if (!out) throw std::runtime_error("failed while writing model file '" + path + "'");
}

std::string fingerprint(const FeatureSchema& schema, const CalibratedModel& model) {
  const std::string text = model_to_json(schema, model).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

DesignDataset read_dataset(const FeatureSchema& schema, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file '" + path + "'");
  DesignDataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool any_id = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(lineno, e.what());
    }
    const auto type = j.value("type", std::string("design"));
    if (type == "header") {
      if (j.contains("goal")) ds.goal = j["goal"].get<std::string>();
      continue;
    }
    if (type != "design") throw ParseError(lineno, "unexpected record type '" + type + "'");
    try {
      ds.designs.push_back(state_from_json(schema, j.contains("state") ? j["state"] : j));
    } catch (const ValidationError& e) {
      throw ParseError(lineno, e.what());
    }
    std::string id;
    if (j.contains("id")) id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    ds.ids.push_back(std::move(id));
    any_id = any_id || j.contains("id");
  }
  if (!any_id) ds.ids.clear();
  return ds;
}

void write_dataset(const FeatureSchema& schema, const DesignDataset& dataset, const std::string& path,
                   const nlohmann::json& header_extra) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file '" + path + "'");
  nlohmann::json header = {{"type", "header"}, {"goal", dataset.goal}, {"size", dataset.designs.size()}};
  for (const auto& [k, v] : header_extra.items()) header[k] = v;
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < dataset.designs.size(); ++i) {
    validate_state(schema, dataset.designs[i]);
    nlohmann::json rec = {{"type", "design"}, {"state", state_to_json(dataset.designs[i])}};
    rec["id"] = i < dataset.ids.size() ? nlohmann::json(dataset.ids[i]) : nlohmann::json(i);
    out << rec.dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed while writing dataset file '" + path + "'");
}

}  // namespace design_lab
