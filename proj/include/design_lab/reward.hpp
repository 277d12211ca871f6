#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "design_lab/random.hpp"
#include "design_lab/schema.hpp"
#include "json.hpp"

namespace design_lab {

enum class RewardKind { goal_aligned, goal_agnostic };

std::string_view to_string(RewardKind kind);
RewardKind reward_kind_from_string(std::string_view name);

inline constexpr double kSigmaFloor = 0.01;

// Reference set used to anchor goal-agnostic score normalisation.
inline constexpr std::size_t kAgnosticReferenceSize = 10000;
inline constexpr std::uint64_t kAgnosticReferenceSeed = 20240601;

struct GaussianParams {
  double mean = 0.5;
  double stddev = 1.0;
  bool operator==(const GaussianParams&) const = default;
};

// Independent per-feature likelihood: a Normal per continuous feature and a
// Categorical per discrete feature.
struct RewardModel {
  RewardKind kind = RewardKind::goal_aligned;
  std::string goal;
  std::vector<GaussianParams> continuous;
  std::vector<std::vector<double>> discrete;
  std::optional<std::uint64_t> seed;  // goal-agnostic only

  // Two per continuous feature plus one per discrete option.
  std::size_t parameter_count() const noexcept;
  bool operator==(const RewardModel&) const = default;
};

// Log-likelihood bounds of the min-max normalisation onto [0,100].
struct ScoreCalibration {
  double logl_min = 0.0;
  double logl_max = 1.0;
  bool operator==(const ScoreCalibration&) const = default;
};

// Where a calibration came from; stored alongside it in model files.
struct CalibrationReference {
  std::string source;  // "training_dataset" | "uniform_random" | "custom"
  std::size_t size = 0;
  std::optional<std::uint64_t> seed;
  bool operator==(const CalibrationReference&) const = default;
};

// A model together with its normalisation: the unit persisted in model files
// and handed to sessions.
struct CalibratedModel {
  RewardModel model;
  ScoreCalibration calibration;
  CalibrationReference reference;
  bool operator==(const CalibratedModel&) const = default;
};

struct DesignDataset {
  std::string goal;
  std::vector<DesignState> designs;
  std::vector<std::string> ids;  // optional provenance, empty or one per design
};

struct FitConfig {
  double sigma_floor = kSigmaFloor;
  // Dirichlet pseudo-count added to every option count.
  double smoothing = 1.0;
};

void validate_model(const FeatureSchema& schema, const RewardModel& model);

RewardModel fit_goal_aligned(const FeatureSchema& schema, const DesignDataset& dataset, const FitConfig& config = {});

RewardModel sample_goal_agnostic(const FeatureSchema& schema, std::uint64_t seed, std::string goal = "custom");

double log_likelihood(const RewardModel& model, const DesignState& state);

// Log-density of one continuous term; exposed for term-wise checks.
double gaussian_log_density(double x, const GaussianParams& p);

ScoreCalibration calibrate(const RewardModel& model, std::span<const DesignState> reference);

DesignState sample_uniform_design(const FeatureSchema& schema, Rng& rng);
std::vector<DesignState> sample_uniform_designs(const FeatureSchema& schema, std::size_t n, std::uint64_t seed);

int score_from_log_likelihood(const ScoreCalibration& calibration, double logl);
int score(const RewardModel& model, const ScoreCalibration& calibration, const DesignState& state);
inline int score(const CalibratedModel& m, const DesignState& state) { return score(m.model, m.calibration, state); }

// Global likelihood maximiser over the valid design space.
DesignState optimal_design(const FeatureSchema& schema, const RewardModel& model);

// Fit and calibrate on the training dataset.
CalibratedModel make_goal_aligned(const FeatureSchema& schema, const DesignDataset& dataset,
                                  const FitConfig& config = {});

// Sample and calibrate on uniform-random designs drawn with a fixed seed.
CalibratedModel make_goal_agnostic(const FeatureSchema& schema, std::uint64_t seed, std::string goal = "custom",
                                   std::size_t reference_size = kAgnosticReferenceSize,
                                   std::uint64_t reference_seed = kAgnosticReferenceSeed);

nlohmann::json model_to_json(const FeatureSchema& schema, const CalibratedModel& model);
CalibratedModel model_from_json(const FeatureSchema& schema, const nlohmann::json& j);
CalibratedModel load_model(const FeatureSchema& schema, const std::string& path);
void save_model(const FeatureSchema& schema, const CalibratedModel& model, const std::string& path);

// Stable 16-hex-digit digest of a model file's content.
std::string fingerprint(const FeatureSchema& schema, const CalibratedModel& model);

// Dataset files are JSONL: an optional {"type":"header",...} line followed by
// one {"type":"design","id":...,"state":{...}} line per design.
DesignDataset read_dataset(const FeatureSchema& schema, const std::string& path);
void write_dataset(const FeatureSchema& schema, const DesignDataset& dataset, const std::string& path,
                   const nlohmann::json& header_extra = nlohmann::json::object());

}  // namespace design_lab
