#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "design_lab/reward.hpp"
#include "design_lab/schema.hpp"
#include "design_lab/session.hpp"

namespace design_lab {

struct ActionStats {
  std::size_t count = 0;
  // Mean gap between successive actions, in seconds; absent below 2 actions.
  std::optional<double> mean_interval_s;
};

// Counts edits and saves in `phase`. Throws ValidationError if the log never
// entered that phase.
ActionStats action_stats(const SessionLog& log, Phase phase);

// Node sequence of a phase: controls are 0..controls-1, then save, then reset.
std::vector<std::size_t> action_nodes(const FeatureSchema& schema, const SessionLog& log, Phase phase);
std::vector<std::string> node_labels(const FeatureSchema& schema);

struct TransitionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> counts;
  std::vector<std::vector<double>> probabilities;  // zero rows where visits == 0
  std::vector<std::size_t> visits;                 // outgoing transitions per node
};

TransitionMatrix transition_graph(const FeatureSchema& schema, const SessionLog& log, Phase phase);
// Fraction of consecutive action pairs on the same feature control. Save and
// reset never count as persisting.
double persistence(const FeatureSchema& schema, const SessionLog& log, Phase phase);
double persistence_of_nodes(const FeatureSchema& schema, const std::vector<std::size_t>& nodes);

inline constexpr const char* kPersistenceDefinition =
    "fraction of consecutive action pairs within a phase that target the same feature control "
    "(HSV channels of one colour form one control; save and reset never persist)";

double gower_distance(const FeatureSchema& schema, const DesignState& a, const DesignState& b);
double gower_similarity(const FeatureSchema& schema, const DesignState& a, const DesignState& b);
// Mean pairwise Gower distance; needs at least 2 designs.
double diversity(const FeatureSchema& schema, const std::vector<DesignState>& designs);
double diversity_drop_bound(const FeatureSchema& schema, const std::vector<DesignState>& baseline);

// States recorded by the save events of a phase.
std::vector<DesignState> saved_designs(const SessionLog& log, Phase phase);
std::vector<int> shown_save_scores(const SessionLog& log, Phase phase);

std::vector<int> rescore(const FeatureSchema& schema, const std::vector<DesignState>& designs,
                         const CalibratedModel& model);

// Mean shown score of reward-phase saves minus mean score of baseline saves
// under `aligned`.
double reward_drift(const FeatureSchema& schema, const SessionLog& log, const CalibratedModel& aligned);

struct LandscapeCell {
  std::size_t count = 0;
  std::optional<double> mean_score;  // absent for empty cells
};

struct LandscapeGrid {
  std::size_t bins = 0;
  std::vector<double> column_means;             // centring vector, encoded space
  std::vector<std::vector<double>> basis;       // 2 rows, encoded-space length each
  std::vector<std::vector<double>> projection;  // per design: (x, y)
  std::vector<double> x_edges, y_edges;         // bins + 1 each
  std::vector<LandscapeCell> cells;             // row-major, index = y * bins + x

  const LandscapeCell& cell(std::size_t x, std::size_t y) const { return cells.at(y * bins + x); }
  // Non-empty cell with the highest mean (first in row-major order on ties).
  std::size_t best_cell() const;
};

LandscapeGrid landscape_grid(const FeatureSchema& schema, const std::vector<DesignState>& designs,
                             const std::vector<double>& scores, std::size_t bins);
void write_landscape_csv(const LandscapeGrid& grid, std::ostream& out);

// Pearson correlation of the two models' scores over n uniform designs.
// Throws EstimationError when either stream is constant.
double score_correlation(const FeatureSchema& schema, const CalibratedModel& a, const CalibratedModel& b, std::size_t n,
                         std::uint64_t seed);
double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct SessionMetrics {
  std::string session_id;
  std::string goal;
  std::string reward_kind;
  std::string status;
  struct PerPhase {
    std::size_t actions = 0;
    std::optional<double> mean_interval_s;
    std::optional<double> persistence;
    std::size_t saves = 0;
    std::optional<double> diversity;
    std::optional<double> mean_score;  // shown in reward, aligned post-hoc elsewhere
  };
  PerPhase practice, baseline, reward;
  std::optional<double> drift;
  std::optional<double> similarity_to_optimal;  // mean over reward-phase saves
};

// `aligned` may be null; score-dependent columns are then left empty.
SessionMetrics session_metrics(const FeatureSchema& schema, const SessionLog& log, const CalibratedModel* aligned);
void write_metrics_csv(const std::vector<SessionMetrics>& rows, std::ostream& out);

}  // namespace design_lab
