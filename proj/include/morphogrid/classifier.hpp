#pragma once

// Category probabilities from graph features, evaluation of any probability
// source, and ingestion of externally produced probabilities.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "morphogrid/category.hpp"
#include "morphogrid/csv.hpp"
#include "morphogrid/geodata.hpp"
#include "morphogrid/road_graph.hpp"

namespace morphogrid {

// ---------------------------------------------------------------------------
// Graph-feature heuristic

struct HeuristicFeatures {
  double major_density = 0.0;     // m of tertiary-or-higher road per km^2
  double entropy = 1.0;           // normalized bearing entropy in [0,1]
  double orthogonal_mass = 0.0;   // best mass share of two perpendicular bin windows
  double hub_alignment = 0.0;     // length share of major segments pointing at the hub
  int hub_degree = 0;
};

struct HeuristicConfig {
  double density_floor = 1000.0;  // m/km^2
  double alignment_deg = 15.0;
  int bins = 36;
};

inline HeuristicFeatures heuristic_features(const RoadGraph& g, double extent_m,
                                            const HeuristicConfig& cfg = {}) {
  HeuristicFeatures f;
  const RoadGraph major = subgraph_min_tier(g, RoadTier::Tertiary);
  const double area_km2 = extent_m * extent_m / 1e6;
  const double len = total_length(major);
  f.major_density = area_km2 > 0 ? len / area_km2 : 0.0;
  if (len <= 0.0) return f;

  const auto hist = bearing_histogram(major, cfg.bins);
  double h = 0.0;
  for (double v : hist)
    if (v > 0) h -= (v / len) * std::log(v / len);
  f.entropy = h / std::log(static_cast<double>(cfg.bins));
  const int n = cfg.bins, quarter = n / 2;
  for (int k = 0; k < quarter; ++k) {
    double m = 0.0;
    for (int d = -1; d <= 1; ++d) {
      m += hist[static_cast<std::size_t>((k + d + n) % n)];
      m += hist[static_cast<std::size_t>((k + quarter + d + n) % n)];
    }
    f.orthogonal_mass = std::max(f.orthogonal_mass, m / len);
  }

  // hub: highest major degree; ties go to the node nearest the window centre
  double lon = 0, lat = 0;
  for (const auto& e : major.edges) {
    lon += major.nodes[e.u].pos.lon + major.nodes[e.v].pos.lon;
    lat += major.nodes[e.u].pos.lat + major.nodes[e.v].pos.lat;
  }
  const GeoPoint mid{lon / (2.0 * major.edges.size()), lat / (2.0 * major.edges.size())};
  std::size_t hub = 0;
  double hub_dist = 0.0;
  bool found = false;
  for (std::size_t i = 0; i < major.nodes.size(); ++i) {
    if (major.nodes[i].degree == 0) continue;
    const double d = geo::haversine_m(major.nodes[i].pos, mid);
    if (!found || major.nodes[i].degree > major.nodes[hub].degree ||
        (major.nodes[i].degree == major.nodes[hub].degree && d < hub_dist)) {
      hub = i;
      hub_dist = d;
      found = true;
    }
  }
  f.hub_degree = major.nodes[hub].degree;
  const GeoPoint hp = major.nodes[hub].pos;
  double aligned = 0.0;
  for (const auto& e : major.edges) {
    for (std::size_t i = 1; i < e.polyline.size(); ++i) {
      const auto& a = e.polyline[i - 1];
      const auto& b = e.polyline[i];
      const GeoPoint m{(a.lon + b.lon) / 2, (a.lat + b.lat) / 2};
      const double seg = geo::haversine_m(a, b);
      if (geo::haversine_m(m, hp) < 1.0) {
        aligned += seg;
        continue;
      }
      double diff = std::abs(geo::undirected_bearing_deg(a, b) - geo::undirected_bearing_deg(m, hp));
      diff = std::min(diff, 180.0 - diff);
      if (diff <= cfg.alignment_deg) aligned += seg;
    }
  }
  f.hub_alignment = aligned / len;
  return f;
}

// Raw scores (logits) for gridiron, organic, radial, no pattern.
inline std::array<double, kCategoryCount> heuristic_scores(const HeuristicFeatures& f,
                                                           const HeuristicConfig& cfg = {}) {
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  const double nopattern = clamp01(1.0 - f.major_density / cfg.density_floor);
  const double patterned = 1.0 - nopattern;
  // gridiron: low orientation entropy with an orthogonal mode
  const double grid = clamp01((1.0 - f.entropy) / 0.6) * clamp01((f.orthogonal_mass - 0.35) / 0.45);
  // radial: major length converging on a high-degree hub
  const double hub_bonus = clamp01((f.hub_degree - 4) / 2.0);
  const double radial = clamp01((f.hub_alignment - 0.15) / 0.25) * (0.5 + 0.5 * hub_bonus);
  const double organic = clamp01(1.0 - std::max(grid, radial));
  const double gain = 6.0;
  return {gain * patterned * grid, gain * patterned * organic, gain * patterned * radial,
          gain * nopattern};
}

// Desk-scale classifier over graph features. `extent_m` is the side of the
// square window the graph covers.
inline CategoryProbs classify_heuristic(const RoadGraph& g, double extent_m,
                                        const HeuristicConfig& cfg = {}) {
  return softmax(heuristic_scores(heuristic_features(g, extent_m, cfg), cfg));
}

// ---------------------------------------------------------------------------
// Evaluation

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct EvalReport {
  // confusion[true][pred], rows normalized by support; nullopt rows lack support
  std::array<std::optional<std::array<double, kCategoryCount>>, kCategoryCount> confusion;
  std::array<std::size_t, kCategoryCount> support{};
  std::array<std::array<std::size_t, kCategoryCount>, kCategoryCount> counts{};
  double overall_accuracy = 0.0;
  std::array<std::optional<double>, kCategoryCount> auc;
  std::array<std::vector<RocPoint>, kCategoryCount> roc;
};

namespace detail {

// One-vs-rest ROC by sweeping the threshold over distinct scores, highest
// first; tied scores move together.
inline std::vector<RocPoint> roc_curve(const std::vector<double>& score, const std::vector<bool>& positive) {
  std::vector<std::size_t> order(score.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return score[a] > score[b]; });
  const auto pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const double neg = static_cast<double>(positive.size()) - pos;
  std::vector<RocPoint> pts{{0.0, 0.0}};
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && score[order[j]] == score[order[i]]) {
      (positive[order[j]] ? tp : fp) += 1;
      ++j;
    }
    pts.push_back({neg > 0 ? fp / neg : 0.0, pos > 0 ? tp / pos : 0.0});
    i = j;
  }
  return pts;
}

inline double trapezoid_auc(const std::vector<RocPoint>& pts) {
  double a = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    a += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2.0;
  return a;
}

}  // namespace detail

inline EvalReport evaluate(const std::vector<CategoryProbs>& predictions,
                           const std::vector<RoadCategory>& labels) {
  if (predictions.empty() || predictions.size() != labels.size())
    throw ArgumentError("evaluate: need equally many (non-zero) predictions and labels");
  EvalReport r;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto t = index_of(labels[i]);
    const auto p = index_of(assign_category(predictions[i]));
    ++r.counts[t][p];
    ++r.support[t];
    if (t == p) ++correct;
  }
  r.overall_accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  for (std::size_t c = 0; c < kCategoryCount; ++c) {
    if (r.support[c] == 0) continue;
    std::array<double, kCategoryCount> row{};
    for (std::size_t k = 0; k < kCategoryCount; ++k)
      row[k] = static_cast<double>(r.counts[c][k]) / static_cast<double>(r.support[c]);
    r.confusion[c] = row;
    if (r.support[c] == labels.size()) continue;  // no negatives: AUC undefined
    std::vector<double> score;
    std::vector<bool> positive;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      score.push_back(predictions[i].p[c]);
      positive.push_back(index_of(labels[i]) == c);
    }
    r.roc[c] = detail::roc_curve(score, positive);
    r.auc[c] = detail::trapezoid_auc(r.roc[c]);
  }
  return r;
}

inline std::string format_confusion(const EvalReport& r) {
  std::string out = "true\\pred   gridiron  organic   radial    nopattern\n";
  for (auto c : kAllCategories) {
    std::string name(category_name(c));
    name.resize(12, ' ');
    out += name;
    const auto& row = r.confusion[index_of(c)];
    for (std::size_t k = 0; k < kCategoryCount; ++k) {
      char buf[16];
      if (row)
        std::snprintf(buf, sizeof buf, "%-10.3f", (*row)[k]);
      else
        std::snprintf(buf, sizeof buf, "%-10s", "NA");
      out += buf;
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// External probabilities

struct ExternalProbs {
  std::map<CellId, CategoryProbs> probs;
  std::size_t rejected = 0;
  std::size_t renormalized = 0;
};

// Reads `cell_col,cell_row,p_gridiron,p_organic,p_radial,p_nopattern`. Rows
// not summing exactly to one are renormalized; rows with a probability
// outside [0,1] (or an all-zero row) are rejected and counted.
inline ExternalProbs load_external_probs(const csv::Table& t) {
  const std::size_t ic = t.column("cell_col"), ir = t.column("cell_row");
  const std::array<std::size_t, kCategoryCount> ip = {t.column("p_gridiron"), t.column("p_organic"),
                                                      t.column("p_radial"), t.column("p_nopattern")};
  ExternalProbs out;
  for (const auto& row : t.rows) {
    CategoryProbs p;
    bool ok = true;
    double sum = 0.0;
    for (std::size_t k = 0; k < kCategoryCount; ++k) {
      const auto v = csv::parse_double(row[ip[k]]);
      if (!v || !(*v >= 0.0 && *v <= 1.0)) {
        ok = false;
        break;
      }
      p.p[k] = *v;
      sum += *v;
    }
    if (!ok || !(sum > 0.0)) {
      ++out.rejected;
      continue;
    }
    if (sum != 1.0) {
      for (auto& v : p.p) v /= sum;
      ++out.renormalized;
    }
    out.probs[{csv::parse_int(row[ic]), csv::parse_int(row[ir])}] = p;
  }
  return out;
}

inline ExternalProbs load_external_probs_file(const std::string& path) {
  return load_external_probs(csv::read_file(path));
}

}  // namespace morphogrid
