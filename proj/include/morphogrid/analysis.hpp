#pragma once

// Post-hoc analyses over classified, scored cells.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "morphogrid/category.hpp"
#include "morphogrid/gbm.hpp"
#include "morphogrid/geodata.hpp"
#include "morphogrid/morphoindex.hpp"
#include "morphogrid/rng.hpp"

namespace morphogrid {

inline constexpr std::array<RoadCategory, 3> kPatterned = {RoadCategory::Gridiron, RoadCategory::Organic,
                                                           RoadCategory::Radial};

// ---------------------------------------------------------------------------
// City shares and clustering

struct CityShares {
  std::string city;
  std::array<double, 3> share{};  // gridiron, organic, radial
  std::size_t patterned_cells = 0;
};

struct SharesResult {
  std::vector<CityShares> cities;      // sorted by name
  std::vector<std::string> excluded;   // cities without a patterned cell
};

inline SharesResult category_shares(const std::vector<std::pair<std::string, RoadCategory>>& cells) {
  std::map<std::string, std::array<std::size_t, kCategoryCount>> counts;
  for (const auto& [city, cat] : cells) ++counts[city][index_of(cat)];
  SharesResult r;
  for (const auto& [city, c] : counts) {
    const std::size_t n = c[0] + c[1] + c[2];
    if (n == 0) {
      r.excluded.push_back(city);
      continue;
    }
    CityShares s{city, {}, n};
    for (std::size_t k = 0; k < 3; ++k) s.share[k] = static_cast<double>(c[k]) / static_cast<double>(n);
    r.cities.push_back(s);
  }
  return r;
}

struct ClusterResult {
  std::vector<int> labels;  // per input city, relabelled by first appearance
  std::vector<std::array<double, 3>> centroids;
  double inertia = 0.0;
  std::size_t best_restart = 0;
  std::vector<std::vector<double>> inertia_trace;  // per restart, per iteration
};

namespace analysis_detail {

inline double dist2(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

struct KmeansRun {
  std::vector<int> labels;
  std::vector<std::array<double, 3>> centroids;
  double inertia = 0.0;
  std::vector<double> trace;
};

inline int nearest(const std::array<double, 3>& p, const std::vector<std::array<double, 3>>& cs) {
  int best = 0;
  for (std::size_t c = 1; c < cs.size(); ++c)
    if (dist2(p, cs[c]) < dist2(p, cs[static_cast<std::size_t>(best)])) best = static_cast<int>(c);
  return best;
}

inline KmeansRun kmeans_once(const std::vector<std::array<double, 3>>& pts, int k, Rng& rng) {
  const std::size_t n = pts.size();
  KmeansRun run;
  // k-means++ seeding
  run.centroids.push_back(pts[rng.below(n)]);
  while (run.centroids.size() < static_cast<std::size_t>(k)) {
    std::vector<double> d(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = dist2(pts[i], run.centroids[static_cast<std::size_t>(nearest(pts[i], run.centroids))]);
      total += d[i];
    }
    if (!(total > 0.0)) {
      run.centroids.push_back(run.centroids.front());
      continue;
    }
    double u = rng.uniform() * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (u < d[i]) {
        pick = i;
        break;
      }
      u -= d[i];
    }
    run.centroids.push_back(pts[pick]);
  }
  run.labels.assign(n, -1);
  std::vector<bool> reseeded(static_cast<std::size_t>(k), false);
  for (int iter = 0; iter < 300; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int l = nearest(pts[i], run.centroids);
      if (l != run.labels[i]) {
        run.labels[i] = l;
        changed = true;
      }
    }
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      inertia += dist2(pts[i], run.centroids[static_cast<std::size_t>(run.labels[i])]);
    run.trace.push_back(inertia);
    run.inertia = inertia;
    if (!changed && iter > 0) break;
    // update step; an empty cluster is re-seeded once at the worst-fit point
    std::vector<std::array<double, 3>> sum(static_cast<std::size_t>(k), {0, 0, 0});
    std::vector<std::size_t> cnt(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto l = static_cast<std::size_t>(run.labels[i]);
      for (std::size_t j = 0; j < 3; ++j) sum[l][j] += pts[i][j];
      ++cnt[l];
    }
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
      if (cnt[c] > 0) {
        for (std::size_t j = 0; j < 3; ++j) run.centroids[c][j] = sum[c][j] / static_cast<double>(cnt[c]);
      } else if (!reseeded[c]) {
        reseeded[c] = true;
        std::size_t worst = 0;
        double wd = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double dd = dist2(pts[i], run.centroids[static_cast<std::size_t>(run.labels[i])]);
          if (dd > wd) {
            wd = dd;
            worst = i;
          }
        }
        run.centroids[c] = pts[worst];
      }
    }
  }
  return run;
}

}  // namespace analysis_detail

// k-means on share vectors with k-means++ seeding; the lowest-inertia
// restart wins, ties going to the earliest restart.
inline ClusterResult cluster_cities(const std::vector<CityShares>& shares, int k, std::uint64_t seed,
                                    int restarts = 50) {
  if (k < 1) throw ArgumentError("cluster_cities: k must be >= 1");
  if (static_cast<std::size_t>(k) > shares.size()) throw ArgumentError("cluster_cities: k exceeds city count");
  if (restarts < 1) throw ArgumentError("cluster_cities: restarts must be >= 1");
  std::vector<std::array<double, 3>> pts;
  for (const auto& s : shares) pts.push_back(s.share);
  ClusterResult r;
  analysis_detail::KmeansRun best;
  for (int rs = 0; rs < restarts; ++rs) {
    Rng rng(derive_seed(seed, "kmeans", static_cast<std::uint64_t>(rs)));
    auto run = analysis_detail::kmeans_once(pts, k, rng);
    r.inertia_trace.push_back(run.trace);
    if (rs == 0 || run.inertia < best.inertia) {
      best = std::move(run);
      r.best_restart = static_cast<std::size_t>(rs);
    }
  }
  std::map<int, int> relabel;
  for (int l : best.labels)
    if (!relabel.contains(l)) relabel[l] = static_cast<int>(relabel.size());
  for (std::size_t c = 0; c < best.centroids.size(); ++c)
    if (!relabel.contains(static_cast<int>(c))) relabel[static_cast<int>(c)] = static_cast<int>(relabel.size());
  r.centroids.resize(best.centroids.size());
  for (const auto& [from, to] : relabel) r.centroids[static_cast<std::size_t>(to)] = best.centroids[static_cast<std::size_t>(from)];
  for (int l : best.labels) r.labels.push_back(relabel[l]);
  r.inertia = best.inertia;
  return r;
}

// ---------------------------------------------------------------------------
// Score statistics

struct CategoryStats {
  std::size_t n = 0;
  double mean = 0.0;
  double median = 0.0;  // lower middle for even n
  double stddev = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
};

inline CategoryStats summarize(std::vector<double> v) {
  CategoryStats s;
  s.n = v.size();
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(v.size()));
  s.median = v[(v.size() - 1) / 2];
  s.min = v.front();
  s.max = v.back();
  return s;
}

inline std::map<RoadCategory, CategoryStats> stats_by_category(const std::vector<double>& scores,
                                                               const std::vector<RoadCategory>& cats) {
  if (scores.size() != cats.size()) throw ArgumentError("stats_by_category: length mismatch");
  std::map<RoadCategory, std::vector<double>> groups;
  for (std::size_t i = 0; i < scores.size(); ++i) groups[cats[i]].push_back(scores[i]);
  std::map<RoadCategory, CategoryStats> out;
  for (const auto& [c, v] : groups) out[c] = summarize(v);
  return out;
}

struct RangeBin {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  std::optional<std::array<double, kCategoryCount>> proportions;  // missing when empty
};

// Five 20-wide score ranges; the last one is closed at 100.
inline std::array<RangeBin, 5> proportion_by_range(const std::vector<double>& scores,
                                                   const std::vector<RoadCategory>& cats) {
  if (scores.size() != cats.size()) throw ArgumentError("proportion_by_range: length mismatch");
  std::array<RangeBin, 5> bins;
  std::array<std::array<std::size_t, kCategoryCount>, 5> tally{};
  for (std::size_t b = 0; b < 5; ++b) {
    bins[b].lo = 20.0 * static_cast<double>(b);
    bins[b].hi = bins[b].lo + 20.0;
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores[i];
    if (!(s >= 0.0 && s <= 100.0)) throw ArgumentError("proportion_by_range: score outside [0, 100]");
    const auto b = std::min<std::size_t>(4, static_cast<std::size_t>(s / 20.0));
    ++tally[b][index_of(cats[i])];
    ++bins[b].count;
  }
  for (std::size_t b = 0; b < 5; ++b) {
    if (bins[b].count == 0) continue;
    std::array<double, kCategoryCount> p{};
    for (std::size_t k = 0; k < kCategoryCount; ++k)
      p[k] = static_cast<double>(tally[b][k]) / static_cast<double>(bins[b].count);
    bins[b].proportions = p;
  }
  return bins;
}

// ---------------------------------------------------------------------------
// Kernel density curves

struct KdeCurve {
  double bandwidth = 0.0;
  std::vector<double> x;
  std::vector<double> density;
};

namespace analysis_detail {

inline double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= sorted.size()) return sorted.back();
  return sorted[i] + (pos - static_cast<double>(i)) * (sorted[i + 1] - sorted[i]);
}

}  // namespace analysis_detail

// 0.9 * min(sd, IQR/1.34) * n^(-1/5), falling back to sd and then 1 when the
// spread collapses.
inline double silverman_bandwidth(std::vector<double> v) {
  if (v.size() < 2) throw ArgumentError("silverman_bandwidth: need >= 2 values");
  std::sort(v.begin(), v.end());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  const double iqr = analysis_detail::quantile(v, 0.75) - analysis_detail::quantile(v, 0.25);
  double a = std::min(sd, iqr / 1.34);
  if (!(a > 0.0)) a = sd;
  if (!(a > 0.0)) a = 1.0;
  return 0.9 * a * std::pow(static_cast<double>(v.size()), -0.2);
}

// Gaussian KDE sampled at `points` positions spanning [0,100] widened to
// three bandwidths beyond the data.
inline KdeCurve kde_curve(const std::vector<double>& values, std::optional<double> bandwidth = std::nullopt,
                          int points = 256) {
  if (values.size() < 2) throw ArgumentError("kde_curve: need >= 2 values");
  if (points < 2) throw ArgumentError("kde_curve: need >= 2 sample points");
  KdeCurve c;
  c.bandwidth = bandwidth ? *bandwidth : silverman_bandwidth(values);
  if (!(c.bandwidth > 0.0)) throw ArgumentError("kde_curve: bandwidth must be > 0");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = std::min(0.0, *lo_it - 3.0 * c.bandwidth);
  const double hi = std::max(100.0, *hi_it + 3.0 * c.bandwidth);
  const double norm = 1.0 / (static_cast<double>(values.size()) * c.bandwidth * std::sqrt(2.0 * std::numbers::pi));
  for (int i = 0; i < points; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    double s = 0.0;
    for (double v : values) {
      const double u = (x - v) / c.bandwidth;
      s += std::exp(-0.5 * u * u);
    }
    c.x.push_back(x);
    c.density.push_back(s * norm);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Top-N table

struct ScoredCell {
  std::string city;
  CellId cell;
  RoadCategory category = RoadCategory::NoPattern;
  MorphoVector indices;
  double score = 0.0;
};

struct TopNRow {
  RoadCategory category = RoadCategory::Gridiron;
  std::size_t used = 0;
  bool short_of_n = false;          // fewer cells than requested
  std::vector<double> mean_indices; // baseline column order
  double mean_score = 0.0;
};

inline std::vector<TopNRow> top_n_table(const std::vector<ScoredCell>& cells, std::size_t n = 10) {
  std::vector<TopNRow> out;
  for (auto cat : kPatterned) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (cells[i].category == cat) idx.push_back(i);
    if (idx.empty()) continue;
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return cells[a].score > cells[b].score; });
    TopNRow row;
    row.category = cat;
    row.short_of_n = idx.size() < n;
    row.used = std::min(n, idx.size());
    row.mean_indices.assign(baseline_columns().size(), 0.0);
    for (std::size_t j = 0; j < row.used; ++j) {
      const auto f = feature_row(cells[idx[j]].indices, false);
      for (std::size_t k = 0; k < f.size(); ++k) row.mean_indices[k] += f[k];
      row.mean_score += cells[idx[j]].score;
    }
    for (auto& v : row.mean_indices) v /= static_cast<double>(row.used);
    row.mean_score /= static_cast<double>(row.used);
    out.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Baseline vs augmented comparison

struct Comparison {
  Metrics baseline;
  Metrics augmented;
  double delta_r2 = 0.0;  // augmented - baseline (0 when either is undefined)
  double delta_rmse = 0.0;
  double delta_mae = 0.0;
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;
};

// Seeded holdout: returns (train rows, test rows), both ascending.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(std::size_t n, double test_frac,
                                                                                  std::uint64_t seed) {
  if (n < 4) throw ArgumentError("holdout split: need >= 4 rows");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "holdout"));
  rng.shuffle(order);
  auto n_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 2, n - 2);
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {train, test};
}

inline Comparison compare_models(const Matrix& x_base, const Matrix& x_aug, const std::vector<double>& y,
                                 const GbmParams& params, std::uint64_t seed, double test_frac = 0.2) {
  if (x_base.size() != y.size() || x_aug.size() != y.size())
    throw ArgumentError("compare_models: row counts differ");
  const auto [train, test] = holdout_split(y.size(), test_frac, seed);
  auto run = [&](const Matrix& x) {
    Matrix xt, xv;
    std::vector<double> yt, yv;
    for (auto i : train) {
      xt.push_back(x[i]);
      yt.push_back(y[i]);
    }
    for (auto i : test) {
      xv.push_back(x[i]);
      yv.push_back(y[i]);
    }
    return metrics(yv, predict(fit(xt, yt, params), xv));
  };
  Comparison c;
  c.baseline = run(x_base);
  c.augmented = run(x_aug);
  if (c.baseline.r2 && c.augmented.r2) c.delta_r2 = *c.augmented.r2 - *c.baseline.r2;
  c.delta_rmse = c.augmented.rmse - c.baseline.rmse;
  c.delta_mae = c.augmented.mae - c.baseline.mae;
  c.train_rows = train.size();
  c.test_rows = test.size();
  return c;
}

// ---------------------------------------------------------------------------
// Categorical map

struct MapCell {
  GridCell cell;
  CategoryProbs probs;
  std::optional<double> score;
};

inline nlohmann::json categorical_map(const std::vector<MapCell>& cells) {
  nlohmann::json fc = {{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
  for (const auto& m : cells) {
    const auto& b = m.cell.bbox;
    nlohmann::json ring = nlohmann::json::array(
        {{b.west, b.south}, {b.east, b.south}, {b.east, b.north}, {b.west, b.north}, {b.west, b.south}});
    nlohmann::json props = {{"cell_col", m.cell.col},
                            {"cell_row", m.cell.row},
                            {"category", category_name(assign_category(m.probs))},
                            {"p_gridiron", m.probs.p[0]},
                            {"p_organic", m.probs.p[1]},
                            {"p_radial", m.probs.p[2]},
                            {"p_nopattern", m.probs.p[3]},
                            {"score", m.score ? nlohmann::json(*m.score) : nlohmann::json(nullptr)}};
    fc["features"].push_back({{"type", "Feature"},
                              {"geometry", {{"type", "Polygon"}, {"coordinates", {ring}}}},
                              {"properties", props}});
  }
  return fc;
}

inline std::string export_categorical_map(const std::vector<MapCell>& cells) {
  return categorical_map(cells).dump(1) + "\n";
}

// Reads back (cell, category) pairs from an exported map.
inline std::vector<std::pair<CellId, RoadCategory>> parse_categorical_map(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("categorical map: ") + e.what(), 0, e.byte);
  }
  std::vector<std::pair<CellId, RoadCategory>> out;
  try {
    for (const auto& f : j.at("features")) {
      const auto& p = f.at("properties");
      out.push_back({{p.at("cell_col").get<std::int64_t>(), p.at("cell_row").get<std::int64_t>()},
                     parse_category(p.at("category").get<std::string>())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("categorical map: ") + e.what());
  }
  return out;
}

}  // namespace morphogrid
