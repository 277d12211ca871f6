#include "design_lab/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>

#include "design_lab/errors.hpp"

namespace design_lab {

namespace {

bool is_action(const SessionEvent& e) { return e.kind == EventKind::action || e.kind == EventKind::save; }

bool has_phase(const SessionLog& log, Phase phase) {
  return std::any_of(log.events.begin(), log.events.end(),
                     [&](const SessionEvent& e) { return e.kind == EventKind::phase_start && e.phase == phase; });
}

void require_phase(const SessionLog& log, Phase phase) {
  if (!has_phase(log, phase)) {
    throw ValidationError("log has no '" + std::string(to_string(phase)) + "' phase");
  }
}

double mean_of(const std::vector<int>& v) {
  double total = 0.0;
  for (int x : v) total += x;
  return total / static_cast<double>(v.size());
}

void require_same_shape(const FeatureSchema& schema, const DesignState& s) {
  if (s.continuous.size() != schema.continuous_count() || s.discrete.size() != schema.discrete_count()) {
    throw ValidationError("design does not match the schema");
  }
}

}  // namespace

ActionStats action_stats(const SessionLog& log, Phase phase) {
  require_phase(log, phase);
  ActionStats stats;
  std::optional<std::int64_t> first, last;
  for (const auto& e : log.events) {
    if (e.phase != phase || !is_action(e)) continue;
    ++stats.count;
    if (!first) first = e.t_ms;
    last = e.t_ms;
  }
  // The mean of successive deltas telescopes to (last - first) / (count - 1).
  if (stats.count >= 2) {
    stats.mean_interval_s = static_cast<double>(*last - *first) / 1000.0 / static_cast<double>(stats.count - 1);
  }
  return stats;
}

std::vector<std::string> node_labels(const FeatureSchema& schema) {
  auto labels = schema.controls();
  labels.push_back("save");
  labels.push_back("reset");
  return labels;
}

std::vector<std::size_t> action_nodes(const FeatureSchema& schema, const SessionLog& log, Phase phase) {
  require_phase(log, phase);
  const std::size_t save_node = schema.controls().size();
  const std::size_t reset_node = save_node + 1;
  std::vector<std::size_t> nodes;
  for (const auto& e : log.events) {
    if (e.phase != phase || !is_action(e) || !e.action) continue;
    const Action& a = *e.action;
    if (auto* c = std::get_if<SetContinuous>(&a)) {
      nodes.push_back(schema.control_of_continuous(c->feature));
    } else if (auto* d = std::get_if<SetDiscrete>(&a)) {
      nodes.push_back(schema.control_of_discrete(d->feature));
    } else if (std::holds_alternative<Save>(a)) {
      nodes.push_back(save_node);
    } else {
      nodes.push_back(reset_node);
    }
  }
  return nodes;
}

TransitionMatrix transition_graph(const FeatureSchema& schema, const SessionLog& log, Phase phase) {
  const auto nodes = action_nodes(schema, log, phase);
  if (nodes.size() < 2) throw ValidationError("transition graph needs at least 2 actions in the phase");
  TransitionMatrix m;
  m.labels = node_labels(schema);
  const std::size_t n = m.labels.size();
  m.counts.assign(n, std::vector<std::size_t>(n, 0));
  m.probabilities.assign(n, std::vector<double>(n, 0.0));
  m.visits.assign(n, 0);
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    ++m.counts[nodes[i - 1]][nodes[i]];
    ++m.visits[nodes[i - 1]];
  }
  for (std::size_t r = 0; r < n; ++r) {
    if (m.visits[r] == 0) continue;
    for (std::size_t c = 0; c < n; ++c) {
      m.probabilities[r][c] = static_cast<double>(m.counts[r][c]) / static_cast<double>(m.visits[r]);
    }
  }
  return m;
}

double persistence_of_nodes(const FeatureSchema& schema, const std::vector<std::size_t>& nodes) {
  if (nodes.size() < 2) throw ValidationError("persistence needs at least 2 actions");
  const std::size_t controls = schema.controls().size();
  std::size_t same = 0;
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    if (nodes[i] == nodes[i - 1] && nodes[i] < controls) ++same;
  }
  return static_cast<double>(same) / static_cast<double>(nodes.size() - 1);
}

double persistence(const FeatureSchema& schema, const SessionLog& log, Phase phase) {
  return persistence_of_nodes(schema, action_nodes(schema, log, phase));
}

double gower_distance(const FeatureSchema& schema, const DesignState& a, const DesignState& b) {
  require_same_shape(schema, a);
  require_same_shape(schema, b);
  validate_state(schema, a);
  validate_state(schema, b);
  double total = 0.0;
  for (std::size_t i = 0; i < a.continuous.size(); ++i) total += std::abs(a.continuous[i] - b.continuous[i]);
  for (std::size_t i = 0; i < a.discrete.size(); ++i) total += a.discrete[i] != b.discrete[i] ? 1.0 : 0.0;
  return total / static_cast<double>(schema.parameter_count());
}

double gower_similarity(const FeatureSchema& schema, const DesignState& a, const DesignState& b) {
  return 1.0 - gower_distance(schema, a, b);
}

double diversity(const FeatureSchema& schema, const std::vector<DesignState>& designs) {
  if (designs.size() < 2) throw ValidationError("diversity needs at least 2 designs");
  std::vector<double> d;
  d.reserve(designs.size() * (designs.size() - 1) / 2);
  for (std::size_t i = 0; i < designs.size(); ++i) {
    for (std::size_t j = i + 1; j < designs.size(); ++j) d.push_back(gower_distance(schema, designs[i], designs[j]));
  }
  // Summing in sorted order makes the result independent of list order.
  std::sort(d.begin(), d.end());
  return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

double diversity_drop_bound(const FeatureSchema& schema, const std::vector<DesignState>& baseline) {
  return diversity(schema, baseline);
}

std::vector<DesignState> saved_designs(const SessionLog& log, Phase phase) {
  std::vector<DesignState> out;
  for (const auto& e : log.events) {
    if (e.phase == phase && e.kind == EventKind::save) out.push_back(e.state);
  }
  return out;
}

std::vector<int> shown_save_scores(const SessionLog& log, Phase phase) {
  std::vector<int> out;
  for (const auto& e : log.events) {
    if (e.phase == phase && e.kind == EventKind::save && e.score) out.push_back(*e.score);
  }
  return out;
}

std::vector<int> rescore(const FeatureSchema& schema, const std::vector<DesignState>& designs,
                         const CalibratedModel& model) {
  std::vector<int> out;
  out.reserve(designs.size());
  for (const auto& d : designs) {
    validate_state(schema, d);
    out.push_back(score(model, d));
  }
  return out;
}

double reward_drift(const FeatureSchema& schema, const SessionLog& log, const CalibratedModel& aligned) {
  const auto baseline = saved_designs(log, Phase::baseline);
  const auto shown = shown_save_scores(log, Phase::reward);
  if (baseline.empty()) throw ValidationError("reward drift needs at least one baseline save");
  if (shown.empty()) throw ValidationError("reward drift needs at least one scored reward-phase save");
  return mean_of(shown) - mean_of(rescore(schema, baseline, aligned));
}

std::size_t LandscapeGrid::best_cell() const {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!cells[i].mean_score) continue;
    if (!best || *cells[i].mean_score > *cells[*best].mean_score) best = i;
  }
  if (!best) throw ValidationError("landscape grid has no populated cells");
  return *best;
}

LandscapeGrid landscape_grid(const FeatureSchema& schema, const std::vector<DesignState>& designs,
                             const std::vector<double>& scores, std::size_t bins) {
  if (designs.size() < 3) throw ValidationError("landscape grid needs at least 3 designs");
  if (bins < 2) throw ValidationError("landscape grid needs at least 2 bins per axis");
  if (scores.size() != designs.size()) throw ValidationError("landscape grid needs one score per design");

  const auto n = static_cast<Eigen::Index>(designs.size());
  const auto dim = static_cast<Eigen::Index>(schema.encoded_size());
  Eigen::MatrixXd x(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    validate_state(schema, designs[static_cast<std::size_t>(i)]);
    const auto enc = encode_design(schema, designs[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < dim; ++j) x(i, j) = enc[static_cast<std::size_t>(j)];
  }
  const Eigen::RowVectorXd means = x.colwise().mean();
  x.rowwise() -= means;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double tol = std::max<double>(static_cast<double>(std::max(n, dim)), 1.0) *
                     std::numeric_limits<double>::epsilon() * (sv.size() > 0 ? sv(0) : 0.0);
  if (sv.size() < 2 || !(sv(1) > tol)) throw ValidationError("design matrix has rank below 2");

  Eigen::MatrixXd v = svd.matrixV().leftCols(2);
  // Singular vectors are defined up to sign; pin it so the largest-magnitude
  // loading is positive.
  for (Eigen::Index c = 0; c < 2; ++c) {
    Eigen::Index arg = 0;
    v.col(c).cwiseAbs().maxCoeff(&arg);
    if (v(arg, c) < 0) v.col(c) *= -1.0;
  }
  const Eigen::MatrixXd p = x * v;

  LandscapeGrid g;
  g.bins = bins;
  g.column_means.assign(means.data(), means.data() + dim);
  for (Eigen::Index c = 0; c < 2; ++c) {
    g.basis.emplace_back(v.col(c).data(), v.col(c).data() + dim);
  }
  auto edges = [&](Eigen::Index c) {
    const double lo = p.col(c).minCoeff();
    const double hi = p.col(c).maxCoeff();
    std::vector<double> e(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) e[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
    e.back() = hi;
    return e;
  };
  g.x_edges = edges(0);
  g.y_edges = edges(1);

  auto bin_of = [&](double value, const std::vector<double>& e) {
    const double lo = e.front(), hi = e.back();
    if (!(hi > lo)) return std::size_t{0};
    const auto b = static_cast<std::size_t>(std::floor((value - lo) / (hi - lo) * static_cast<double>(bins)));
    return std::min(b, bins - 1);
  };
  std::vector<double> sums(bins * bins, 0.0);
  g.cells.assign(bins * bins, {});
  for (Eigen::Index i = 0; i < n; ++i) {
    g.projection.push_back({p(i, 0), p(i, 1)});
    const std::size_t idx = bin_of(p(i, 1), g.y_edges) * bins + bin_of(p(i, 0), g.x_edges);
    ++g.cells[idx].count;
    sums[idx] += scores[static_cast<std::size_t>(i)];
  }
  for (std::size_t i = 0; i < g.cells.size(); ++i) {
    if (g.cells[i].count > 0) g.cells[i].mean_score = sums[i] / static_cast<double>(g.cells[i].count);
  }
  return g;
}

void write_landscape_csv(const LandscapeGrid& grid, std::ostream& out) {
  out << "cell_x,cell_y,x_lo,x_hi,y_lo,y_hi,mean_score,count\n";
  out << std::setprecision(17);
  for (std::size_t y = 0; y < grid.bins; ++y) {
    for (std::size_t x = 0; x < grid.bins; ++x) {
      const auto& c = grid.cell(x, y);
      out << x << ',' << y << ',' << grid.x_edges[x] << ',' << grid.x_edges[x + 1] << ',' << grid.y_edges[y] << ','
          << grid.y_edges[y + 1] << ',';
      if (c.mean_score) out << *c.mean_score;
      out << ',' << c.count << '\n';
    }
  }
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("pearson needs two equal-length series");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw EstimationError("correlation undefined: a score stream is constant");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double score_correlation(const FeatureSchema& schema, const CalibratedModel& a, const CalibratedModel& b, std::size_t n,
                         std::uint64_t seed) {
  if (n < 100) throw ValidationError("score correlation needs at least 100 designs");
  const auto designs = sample_uniform_designs(schema, n, seed);
  std::vector<double> sa, sb;
  sa.reserve(n);
  sb.reserve(n);
  for (const auto& d : designs) {
    sa.push_back(score(a, d));
    sb.push_back(score(b, d));
  }
  return pearson(sa, sb);
}

SessionMetrics session_metrics(const FeatureSchema& schema, const SessionLog& log, const CalibratedModel* aligned) {
  SessionMetrics m;
  m.session_id = log.header.session_id;
  m.goal = log.header.config.goal;
  m.reward_kind = std::string(to_string(log.header.config.reward_kind));
  m.status = "active";
  for (const auto& e : log.events) {
    if (e.kind == EventKind::timeout) m.status = "timed_out";
  }
  if (m.status != "timed_out" && !log.events.empty() && log.events.back().kind == EventKind::phase_end &&
      log.events.back().phase == Phase::reward) {
    m.status = "completed";
  }

  auto fill = [&](Phase phase, SessionMetrics::PerPhase& out) {
    if (!has_phase(log, phase)) return;
    const auto stats = action_stats(log, phase);
    out.actions = stats.count;
    out.mean_interval_s = stats.mean_interval_s;
    const auto nodes = action_nodes(schema, log, phase);
    if (nodes.size() >= 2) out.persistence = persistence_of_nodes(schema, nodes);
    const auto saves = saved_designs(log, phase);
    out.saves = saves.size();
    if (saves.size() >= 2) out.diversity = diversity(schema, saves);
    if (phase == Phase::reward) {
      const auto shown = shown_save_scores(log, phase);
      if (!shown.empty()) out.mean_score = mean_of(shown);
    } else if (aligned && !saves.empty()) {
      out.mean_score = mean_of(rescore(schema, saves, *aligned));
    }
  };
  fill(Phase::practice, m.practice);
  fill(Phase::baseline, m.baseline);
  fill(Phase::reward, m.reward);

  if (aligned) {
    if (m.baseline.saves > 0 && m.reward.mean_score) m.drift = reward_drift(schema, log, *aligned);
    const auto reward_saves = saved_designs(log, Phase::reward);
    if (!reward_saves.empty()) {
      const auto best = optimal_design(schema, aligned->model);
      double total = 0.0;
      for (const auto& d : reward_saves) total += gower_similarity(schema, d, best);
      m.similarity_to_optimal = total / static_cast<double>(reward_saves.size());
    }
  }
  return m;
}

void write_metrics_csv(const std::vector<SessionMetrics>& rows, std::ostream& out) {
  auto opt = [&](const std::optional<double>& v) {
    if (v) out << *v;
  };
  out << "session_id,goal,reward_kind,status";
  for (const char* p : {"practice", "baseline", "reward"}) {
    out << ',' << p << "_actions," << p << "_mean_interval_s," << p << "_persistence," << p << "_saves," << p
        << "_diversity," << p << "_mean_score";
  }
  out << ",drift,similarity_to_optimal\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.session_id << ',' << r.goal << ',' << r.reward_kind << ',' << r.status;
    for (const auto* p : {&r.practice, &r.baseline, &r.reward}) {
      out << ',' << p->actions << ',';
      opt(p->mean_interval_s);
      out << ',';
      opt(p->persistence);
      out << ',' << p->saves << ',';
      opt(p->diversity);
      out << ',';
      opt(p->mean_score);
    }
    out << ',';
    opt(r.drift);
    out << ',';
    opt(r.similarity_to_optimal);
    out << '\n';
  }
}

}  // namespace design_lab
