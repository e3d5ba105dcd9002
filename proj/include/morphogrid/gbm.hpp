#pragma once

// Histogram gradient-boosted regression trees (squared error) with optional
// gradient-based one-side sampling, split-count importance, k-fold grid
// search and regression metrics.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "morphogrid/error.hpp"
#include "morphogrid/rng.hpp"

namespace morphogrid {

using Matrix = std::vector<std::vector<double>>;

struct GossParams {
  double top_rate = 0.2;
  double other_rate = 0.1;
};

struct GbmParams {
  int num_iterations = 200;
  double learning_rate = 0.05;
  int num_leaves = 15;
  int min_samples_leaf = 5;
  int max_bins = 255;
  std::optional<GossParams> goss;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_iterations < 0) throw ArgumentError("gbm: num_iterations must be >= 0");
    if (!(learning_rate > 0.0)) throw ArgumentError("gbm: learning_rate must be > 0");
    if (num_leaves < 2) throw ArgumentError("gbm: num_leaves must be >= 2");
    if (min_samples_leaf < 1) throw ArgumentError("gbm: min_samples_leaf must be >= 1");
    if (max_bins < 2 || max_bins > 255) throw ArgumentError("gbm: max_bins must be in [2, 255]");
    if (goss) {
      const double a = goss->top_rate, b = goss->other_rate;
      if (a < 0.0 || b < 0.0 || !(a + b > 0.0) || a + b > 1.0)
        throw ArgumentError("gbm: GOSS rates need 0 < a + b <= 1");
    }
  }
};

struct TreeNode {
  bool leaf = true;
  int feature = -1;
  int bin = -1;  // rows with bin <= this go left
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.leaf; }));
  }
};

struct GbmModel {
  std::size_t num_features = 0;
  double base_score = 0.0;
  double shrinkage = 0.05;
  std::vector<std::vector<double>> bin_edges;  // per feature, ascending
  std::vector<RegressionTree> trees;
  std::vector<std::size_t> split_counts;
};

// ---------------------------------------------------------------------------
// Binning

// Bin edges at midpoints between adjacent distinct values; with more distinct
// values than bins, the cuts sit at equal-frequency quantiles.
inline std::vector<double> make_bin_edges(std::vector<double> values, int max_bins) {
  std::sort(values.begin(), values.end());
  std::vector<double> distinct;
  for (double v : values)
    if (distinct.empty() || v != distinct.back()) distinct.push_back(v);
  std::vector<double> edges;
  if (distinct.size() <= 1) return edges;
  auto mid = [](double a, double b) {
    const double m = a + (b - a) / 2.0;
    return m > a ? m : b;
  };
  if (distinct.size() <= static_cast<std::size_t>(max_bins)) {
    for (std::size_t i = 1; i < distinct.size(); ++i) edges.push_back(mid(distinct[i - 1], distinct[i]));
    return edges;
  }
  const std::size_t n = values.size();
  for (int k = 1; k < max_bins; ++k) {
    const double q = values[static_cast<std::size_t>(k) * n / static_cast<std::size_t>(max_bins) - 1];
    const auto next = std::upper_bound(distinct.begin(), distinct.end(), q);
    if (next == distinct.end()) break;
    const double e = mid(q, *next);
    if (edges.empty() || e > edges.back()) edges.push_back(e);
  }
  return edges;
}

inline int bin_of(const std::vector<double>& edges, double x) {
  return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), x) - edges.begin());
}

// ---------------------------------------------------------------------------
// GOSS

struct GossSample {
  std::vector<std::size_t> indices;  // ascending
  std::vector<double> weights;       // aligned with indices
};

inline GossSample goss_sample(const std::vector<double>& gradients, double a, double b, std::uint64_t seed) {
  if (a < 0.0 || b < 0.0 || !(a + b > 0.0) || a + b > 1.0)
    throw ArgumentError("goss_sample: need 0 < a + b <= 1");
  const std::size_t n = gradients.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](auto i, auto j) { return std::abs(gradients[i]) > std::abs(gradients[j]); });
  const auto n_top = std::min(n, static_cast<std::size_t>(std::floor(a * static_cast<double>(n) + 1e-9)));
  const auto n_other =
      std::min(n - n_top, static_cast<std::size_t>(std::floor(b * static_cast<double>(n) + 1e-9)));
  std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(n_top), order.end());
  Rng rng(seed);
  rng.shuffle(rest);
  std::vector<std::pair<std::size_t, double>> picked;
  for (std::size_t i = 0; i < n_top; ++i) picked.push_back({order[i], 1.0});
  const double w = n_other > 0 ? (1.0 - a) / b : 0.0;
  for (std::size_t i = 0; i < n_other; ++i) picked.push_back({rest[i], w});
  std::sort(picked.begin(), picked.end());
  GossSample s;
  for (const auto& [i, wt] : picked) {
    s.indices.push_back(i);
    s.weights.push_back(wt);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Tree growth

namespace gbm_detail {

struct Split {
  double gain = 0.0;
  int feature = -1;
  int bin = -1;
};

struct Leaf {
  int node = 0;
  std::vector<std::size_t> rows;  // positions into the sample
  Split best;
};

struct Grower {
  const std::vector<std::vector<std::uint8_t>>& bins;  // [feature][row]
  const std::vector<int>& nbins;
  const std::vector<std::size_t>& sample;  // row ids
  const std::vector<double>& weight;       // per sample position
  const std::vector<double>& residual;     // per row
  int min_leaf;

  Split best_split(const std::vector<std::size_t>& rows) const {
    Split best;
    double g_all = 0.0, h_all = 0.0, ss = 0.0;
    for (auto p : rows) {
      const double r = residual[sample[p]];
      g_all += weight[p] * r;
      h_all += weight[p];
      ss += weight[p] * r * r;
    }
    if (rows.size() < 2 * static_cast<std::size_t>(min_leaf) || !(h_all > 0.0)) return best;
    const double parent = g_all * g_all / h_all;
    // gains below this are rounding noise
    const double eps = 1e-11 * std::max(1.0, ss);
    for (std::size_t f = 0; f < bins.size(); ++f) {
      const int nb = nbins[f];
      if (nb < 2) continue;
      std::vector<double> g(static_cast<std::size_t>(nb), 0.0), h(static_cast<std::size_t>(nb), 0.0);
      std::vector<std::size_t> c(static_cast<std::size_t>(nb), 0);
      for (auto p : rows) {
        const auto b = bins[f][sample[p]];
        g[b] += weight[p] * residual[sample[p]];
        h[b] += weight[p];
        ++c[b];
      }
      double gl = 0.0, hl = 0.0;
      std::size_t cl = 0;
      for (int b = 0; b + 1 < nb; ++b) {
        gl += g[static_cast<std::size_t>(b)];
        hl += h[static_cast<std::size_t>(b)];
        cl += c[static_cast<std::size_t>(b)];
        const std::size_t cr = rows.size() - cl;
        if (cl < static_cast<std::size_t>(min_leaf) || cr < static_cast<std::size_t>(min_leaf)) continue;
        const double hr = h_all - hl;
        if (!(hl > 0.0) || !(hr > 0.0)) continue;
        const double gr = g_all - gl;
        const double gain = gl * gl / hl + gr * gr / hr - parent;
        if (gain > eps && (best.feature < 0 || gain > best.gain + eps)) best = {gain, static_cast<int>(f), b};
      }
    }
    return best;
  }

  double leaf_value(const std::vector<std::size_t>& rows) const {
    double g = 0.0, h = 0.0;
    for (auto p : rows) {
      g += weight[p] * residual[sample[p]];
      h += weight[p];
    }
    return h > 0.0 ? g / h : 0.0;
  }

  RegressionTree grow(int num_leaves) const {
    RegressionTree t;
    t.nodes.push_back({});
    std::vector<Leaf> open;
    std::vector<std::size_t> all(sample.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    open.push_back({0, std::move(all), {}});
    open.back().best = best_split(open.back().rows);
    int leaves = 1;
    while (leaves < num_leaves) {
      int pick = -1;
      for (std::size_t i = 0; i < open.size(); ++i) {
        if (open[i].best.feature < 0) continue;
        if (pick < 0 || open[i].best.gain > open[static_cast<std::size_t>(pick)].best.gain) pick = static_cast<int>(i);
      }
      if (pick < 0) break;
      Leaf leaf = std::move(open[static_cast<std::size_t>(pick)]);
      open.erase(open.begin() + pick);
      const auto f = static_cast<std::size_t>(leaf.best.feature);
      std::vector<std::size_t> lrows, rrows;
      for (auto p : leaf.rows) (bins[f][sample[p]] <= leaf.best.bin ? lrows : rrows).push_back(p);
      const int li = static_cast<int>(t.nodes.size());
      t.nodes.push_back({});
      t.nodes.push_back({});
      auto& n = t.nodes[static_cast<std::size_t>(leaf.node)];
      n.leaf = false;
      n.feature = leaf.best.feature;
      n.bin = leaf.best.bin;
      n.left = li;
      n.right = li + 1;
      Leaf l{li, std::move(lrows), {}}, r{li + 1, std::move(rrows), {}};
      l.best = best_split(l.rows);
      r.best = best_split(r.rows);
      open.push_back(std::move(l));
      open.push_back(std::move(r));
      ++leaves;
    }
    for (const auto& leaf : open) t.nodes[static_cast<std::size_t>(leaf.node)].value = leaf_value(leaf.rows);
    return t;
  }
};

// Mean over the sorted values, so the result does not depend on row order.
inline double ordered_mean(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline void check_matrix(const Matrix& x, std::size_t features) {
  for (const auto& row : x) {
    if (row.size() != features) throw ArgumentError("gbm: feature count mismatch");
    for (double v : row)
      if (!std::isfinite(v)) throw ArgumentError("gbm: non-finite feature value");
  }
}

}  // namespace gbm_detail

inline double tree_output(const GbmModel& m, const RegressionTree& t, const std::vector<double>& row) {
  std::size_t i = 0;
  while (!t.nodes[i].leaf) {
    const auto& n = t.nodes[i];
    const auto& edges = m.bin_edges[static_cast<std::size_t>(n.feature)];
    i = static_cast<std::size_t>(row[static_cast<std::size_t>(n.feature)] < edges[static_cast<std::size_t>(n.bin)] ? n.left : n.right);
  }
  return t.nodes[i].value;
}

// Prediction from the first `n_trees` trees (all by default).
inline std::vector<double> predict(const GbmModel& m, const Matrix& x,
                                   std::optional<std::size_t> n_trees = std::nullopt) {
  gbm_detail::check_matrix(x, m.num_features);
  const std::size_t k = std::min(m.trees.size(), n_trees.value_or(m.trees.size()));
  std::vector<double> out(x.size(), m.base_score);
  for (std::size_t t = 0; t < k; ++t)
    for (std::size_t i = 0; i < x.size(); ++i) out[i] += m.shrinkage * tree_output(m, m.trees[t], x[i]);
  return out;
}

// Rows are put in a canonical (lexicographic) order first, so every sum
// runs in the same order whatever order the caller supplied.
inline GbmModel fit(const Matrix& x_in, const std::vector<double>& y_in, const GbmParams& params) {
  params.validate();
  if (x_in.size() < 2 || x_in.size() != y_in.size())
    throw ArgumentError("gbm fit: need >= 2 rows and one target per row");
  const std::size_t nf = x_in[0].size();
  gbm_detail::check_matrix(x_in, nf);
  for (double v : y_in)
    if (!std::isfinite(v)) throw ArgumentError("gbm fit: non-finite target");
  const std::size_t n = x_in.size();
  std::vector<std::size_t> canon(n);
  for (std::size_t i = 0; i < n; ++i) canon[i] = i;
  std::sort(canon.begin(), canon.end(), [&](auto a, auto b) {
    if (x_in[a] != x_in[b]) return x_in[a] < x_in[b];
    return y_in[a] < y_in[b];
  });
  Matrix x(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = x_in[canon[i]];
    y[i] = y_in[canon[i]];
  }

  GbmModel m;
  m.num_features = nf;
  m.shrinkage = params.learning_rate;
  m.split_counts.assign(nf, 0);
  m.base_score = gbm_detail::ordered_mean(y);

  std::vector<std::vector<std::uint8_t>> bins(nf, std::vector<std::uint8_t>(n));
  std::vector<int> nbins(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = x[i][f];
    m.bin_edges.push_back(make_bin_edges(col, params.max_bins));
    nbins[f] = static_cast<int>(m.bin_edges[f].size()) + 1;
    for (std::size_t i = 0; i < n; ++i) bins[f][i] = static_cast<std::uint8_t>(bin_of(m.bin_edges[f], x[i][f]));
  }

  std::vector<double> pred(n, m.base_score), residual(n);
  std::vector<std::size_t> sample(n);
  std::vector<double> weight(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) sample[i] = i;
  for (int it = 0; it < params.num_iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) residual[i] = y[i] - pred[i];
    if (params.goss) {
      const auto s = goss_sample(residual, params.goss->top_rate, params.goss->other_rate,
                                 derive_seed(params.seed, "goss", static_cast<std::uint64_t>(it)));
      sample = s.indices;
      weight = s.weights;
    }
    gbm_detail::Grower grower{bins, nbins, sample, weight, residual, params.min_samples_leaf};
    RegressionTree tree = grower.grow(params.num_leaves);
    for (const auto& node : tree.nodes)
      if (!node.leaf) ++m.split_counts[static_cast<std::size_t>(node.feature)];
    m.trees.push_back(std::move(tree));
    for (std::size_t i = 0; i < n; ++i) pred[i] += m.shrinkage * tree_output(m, m.trees.back(), x[i]);
  }
  return m;
}

inline std::vector<std::size_t> feature_importance(const GbmModel& m) { return m.split_counts; }

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  std::optional<double> r2;  // undefined for constant targets
  double rmse = 0.0;
  double mae = 0.0;
};

inline Metrics metrics(const std::vector<double>& y, const std::vector<double>& y_hat) {
  if (y.size() < 2 || y.size() != y_hat.size()) throw ArgumentError("metrics: need equal lengths >= 2");
  const auto n = static_cast<double>(y.size());
  const double mean = gbm_detail::ordered_mean(y);
  double ss_res = 0.0, ss_tot = 0.0, abs_sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y[i] - y_hat[i];
    ss_res += e * e;
    abs_sum += std::abs(e);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  Metrics m;
  m.rmse = std::sqrt(ss_res / n);
  m.mae = abs_sum / n;
  if (ss_tot > 0.0) m.r2 = 1.0 - ss_res / ss_tot;
  return m;
}

enum class R2Level { High, Medium, Low, NotRelative };

// Negative R^2 counts as 0 here only.
inline R2Level r2_level(double r2) {
  const double v = std::max(0.0, r2);
  if (v > 0.5) return R2Level::High;
  if (v >= 0.25) return R2Level::Medium;
  if (v > 0.0) return R2Level::Low;
  return R2Level::NotRelative;
}

inline std::string_view r2_level_name(R2Level l) {
  switch (l) {
    case R2Level::High: return "high";
    case R2Level::Medium: return "medium";
    case R2Level::Low: return "low";
    case R2Level::NotRelative: return "not relative";
  }
  return "not relative";
}

// ---------------------------------------------------------------------------
// Cross-validation

// Fold id per row: a seeded permutation dealt round-robin.
inline std::vector<int> make_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw ArgumentError("cv: k must be >= 2");
  if (n < static_cast<std::size_t>(k)) throw ArgumentError("cv: fewer rows than folds");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "folds"));
  rng.shuffle(order);
  std::vector<int> fold(n);
  for (std::size_t p = 0; p < n; ++p) fold[order[p]] = static_cast<int>(p % static_cast<std::size_t>(k));
  return fold;
}

struct CvScore {
  double rmse = 0.0;  // mean over folds
  double mae = 0.0;
  std::optional<double> r2;  // mean over folds with defined R^2
  double oof_r2 = 0.0;       // R^2 of pooled out-of-fold predictions
};

inline CvScore cross_validate(const Matrix& x, const std::vector<double>& y, const GbmParams& p,
                              const std::vector<int>& fold, int k) {
  CvScore s;
  double r2_sum = 0.0;
  int r2_n = 0;
  std::vector<double> oof(y.size(), 0.0);
  for (int f = 0; f < k; ++f) {
    Matrix xt, xv;
    std::vector<double> yt, yv;
    std::vector<std::size_t> vidx;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (fold[i] == f) {
        xv.push_back(x[i]);
        yv.push_back(y[i]);
        vidx.push_back(i);
      } else {
        xt.push_back(x[i]);
        yt.push_back(y[i]);
      }
    }
    const auto model = fit(xt, yt, p);
    const auto yh = predict(model, xv);
    for (std::size_t j = 0; j < vidx.size(); ++j) oof[vidx[j]] = yh[j];
    if (yv.size() >= 2) {
      const auto m = metrics(yv, yh);
      s.rmse += m.rmse;
      s.mae += m.mae;
      if (m.r2) {
        r2_sum += *m.r2;
        ++r2_n;
      }
    } else {
      const double e = yv[0] - yh[0];
      s.rmse += std::abs(e);
      s.mae += std::abs(e);
    }
  }
  s.rmse /= k;
  s.mae /= k;
  if (r2_n > 0) s.r2 = r2_sum / r2_n;
  s.oof_r2 = metrics(y, oof).r2.value_or(0.0);
  return s;
}

struct GridSearchResult {
  std::size_t best_index = 0;
  GbmParams best;
  std::vector<CvScore> scores;  // per candidate, grid order
};

inline GridSearchResult cv_grid_search(const Matrix& x, const std::vector<double>& y,
                                       const std::vector<GbmParams>& grid, int k, std::uint64_t seed) {
  if (grid.empty()) throw ArgumentError("cv_grid_search: empty grid");
  if (x.size() != y.size()) throw ArgumentError("cv_grid_search: row/target count mismatch");
  const auto fold = make_folds(x.size(), k, seed);
  GridSearchResult r;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    r.scores.push_back(cross_validate(x, y, grid[c], fold, k));
    if (r.scores[c].rmse < r.scores[r.best_index].rmse) r.best_index = c;
  }
  r.best = grid[r.best_index];
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoint: "MGBM01" text, hex floats, trees as preorder node lists.

namespace gbm_detail {

inline std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double unhex(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw FormatError("MGBM01: bad number '" + s + "'");
  return v;
}

inline void write_preorder(std::ostream& out, const RegressionTree& t, std::size_t i) {
  const auto& n = t.nodes[i];
  if (n.leaf) {
    out << "L " << hex(n.value) << '\n';
    return;
  }
  out << "S " << n.feature << ' ' << n.bin << '\n';
  write_preorder(out, t, static_cast<std::size_t>(n.left));
  write_preorder(out, t, static_cast<std::size_t>(n.right));
}

inline int read_preorder(std::istream& in, RegressionTree& t, const GbmModel& m) {
  std::string kind;
  if (!(in >> kind)) throw FormatError("MGBM01: truncated tree");
  const int idx = static_cast<int>(t.nodes.size());
  t.nodes.push_back({});
  if (kind == "L") {
    std::string v;
    in >> v;
    t.nodes[static_cast<std::size_t>(idx)].value = unhex(v);
    return idx;
  }
  if (kind != "S") throw FormatError("MGBM01: unknown node kind '" + kind + "'");
  int f = -1, b = -1;
  if (!(in >> f >> b) || f < 0 || static_cast<std::size_t>(f) >= m.num_features || b < 0 ||
      static_cast<std::size_t>(b) >= m.bin_edges[static_cast<std::size_t>(f)].size())
    throw FormatError("MGBM01: bad split node");
  const int l = read_preorder(in, t, m);
  const int r = read_preorder(in, t, m);
  auto& n = t.nodes[static_cast<std::size_t>(idx)];
  n = {false, f, b, l, r, 0.0};
  return idx;
}

}  // namespace gbm_detail

inline std::string save_gbm(const GbmModel& m) {
  using gbm_detail::hex;
  std::ostringstream out;
  out << "MGBM01\n";
  out << "features " << m.num_features << '\n';
  out << "base " << hex(m.base_score) << '\n';
  out << "shrinkage " << hex(m.shrinkage) << '\n';
  for (std::size_t f = 0; f < m.num_features; ++f) {
    out << "edges " << f << ' ' << m.bin_edges[f].size();
    for (double e : m.bin_edges[f]) out << ' ' << hex(e);
    out << '\n';
  }
  out << "trees " << m.trees.size() << '\n';
  for (const auto& t : m.trees) {
    out << "tree " << t.nodes.size() << '\n';
    gbm_detail::write_preorder(out, t, 0);
  }
  return out.str();
}

inline GbmModel load_gbm(const std::string& text) {
  using gbm_detail::unhex;
  std::istringstream in(text);
  std::string tok, v;
  if (!(in >> tok) || tok != "MGBM01") throw FormatError("not an MGBM01 checkpoint");
  GbmModel m;
  auto expect = [&](const char* key) {
    if (!(in >> tok) || tok != key) throw FormatError(std::string("MGBM01: expected '") + key + "'");
  };
  expect("features");
  in >> m.num_features;
  expect("base");
  in >> v;
  m.base_score = unhex(v);
  expect("shrinkage");
  in >> v;
  m.shrinkage = unhex(v);
  for (std::size_t f = 0; f < m.num_features; ++f) {
    expect("edges");
    std::size_t idx = 0, count = 0;
    in >> idx >> count;
    if (idx != f) throw FormatError("MGBM01: edges out of order");
    std::vector<double> edges(count);
    for (auto& e : edges) {
      in >> v;
      e = unhex(v);
    }
    m.bin_edges.push_back(std::move(edges));
  }
  expect("trees");
  std::size_t nt = 0;
  in >> nt;
  m.split_counts.assign(m.num_features, 0);
  for (std::size_t t = 0; t < nt; ++t) {
    expect("tree");
    std::size_t nn = 0;
    in >> nn;
    RegressionTree tree;
    gbm_detail::read_preorder(in, tree, m);
    if (tree.nodes.size() != nn) throw FormatError("MGBM01: node count mismatch");
    for (const auto& n : tree.nodes)
      if (!n.leaf) ++m.split_counts[static_cast<std::size_t>(n.feature)];
    m.trees.push_back(std::move(tree));
  }
  if (!in && !in.eof()) throw FormatError("MGBM01: truncated");
  return m;
}

}  // namespace morphogrid
