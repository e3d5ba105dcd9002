#include <gtest/gtest.h>

#include <numeric>

#include "morphogrid/analysis.hpp"
#include "test_support.hpp"

using namespace morphogrid;

namespace {

using RC = RoadCategory;

std::vector<CityShares> shares_of(const std::vector<std::array<double, 3>>& v) {
  std::vector<CityShares> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back({"c" + std::to_string(i), v[i], 10});
  return out;
}

double brute_inertia(const std::vector<CityShares>& s, const ClusterResult& r) {
  double in = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (int d = 0; d < 3; ++d) {
      const double e = s[i].share[d] - r.centroids[static_cast<std::size_t>(r.labels[i])][d];
      in += e * e;
    }
  return in;
}

// sort, then sum directly
struct StatsOracle {
  double mean, median, sd;
};
StatsOracle stats_oracle(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double sum = 0;
  for (double x : v) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, v[(v.size() - 1) / 2], std::sqrt(ss / static_cast<double>(v.size()))};
}

double trapezoid(const KdeCurve& c) {
  double a = 0;
  for (std::size_t i = 1; i < c.x.size(); ++i) a += (c.x[i] - c.x[i - 1]) * (c.density[i] + c.density[i - 1]) / 2;
  return a;
}

}  // namespace

TEST(CategoryShares, ExclusionRule) {
  const auto r = category_shares({{"a", RC::Gridiron},
                                  {"a", RC::Gridiron},
                                  {"a", RC::Organic},
                                  {"a", RC::NoPattern},
                                  {"b", RC::Gridiron},
                                  {"c", RC::NoPattern}});
  ASSERT_EQ(r.cities.size(), 2u);
  EXPECT_EQ(r.cities[0].city, "a");
  EXPECT_NEAR(r.cities[0].share[0], 2.0 / 3, 1e-15);
  EXPECT_NEAR(r.cities[0].share[1], 1.0 / 3, 1e-15);
  EXPECT_EQ(r.cities[0].share[2], 0.0);
  EXPECT_EQ(r.cities[1].share, (std::array<double, 3>{1, 0, 0}));
  EXPECT_EQ(r.excluded, (std::vector<std::string>{"c"}));
}

TEST(CategoryShares, SumToOneProperty) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::pair<std::string, RC>> cells;
    for (std::size_t i = 0, n = 1 + rng.below(200); i < n; ++i)
      cells.push_back({"city" + std::to_string(rng.below(5)), static_cast<RC>(rng.below(4))});
    for (const auto& s : category_shares(cells).cities) {
      EXPECT_NEAR(s.share[0] + s.share[1] + s.share[2], 1.0, 1e-9);
      for (double v : s.share) EXPECT_GE(v, 0.0);
    }
  }
}

TEST(ClusterCities, KEqualsN) {
  const auto s = shares_of({{1, 0, 0}, {0, 1, 0}, {0.2, 0.3, 0.5}, {0.4, 0.4, 0.2}});
  const auto r = cluster_cities(s, 4, 7);
  EXPECT_NEAR(r.inertia, 0.0, 1e-15);
  std::set<int> labels(r.labels.begin(), r.labels.end());
  EXPECT_EQ(labels.size(), 4u);
}

TEST(ClusterCities, IdenticalPointsCollapse) {
  const auto s = shares_of({{0.5, 0.3, 0.2}, {0.5, 0.3, 0.2}, {0.5, 0.3, 0.2}});
  const auto r = cluster_cities(s, 2, 3);
  EXPECT_EQ(r.labels, (std::vector<int>{0, 0, 0}));
  EXPECT_NEAR(r.inertia, 0.0, 1e-15);
}

TEST(ClusterCities, RecoversSeparatedGroups) {
  const auto s = shares_of({{0.9, 0.1, 0.0},
                            {0.85, 0.15, 0.0},
                            {0.1, 0.9, 0.0},
                            {0.15, 0.8, 0.05},
                            {0.1, 0.2, 0.7},
                            {0.05, 0.25, 0.7}});
  const auto r = cluster_cities(s, 3, 1);
  EXPECT_EQ(r.labels, (std::vector<int>{0, 0, 1, 1, 2, 2}));
  EXPECT_NEAR(r.inertia, brute_inertia(s, r), 1e-12);
  EXPECT_EQ(cluster_cities(s, 3, 1).labels, r.labels);
  EXPECT_THROW(cluster_cities(s, 0, 1), ArgumentError);
  EXPECT_THROW(cluster_cities(s, 7, 1), ArgumentError);
}

TEST(ClusterCities, InertiaNonIncreasingProperty) {
  Rng rng(2);
  for (int t = 0; t < 30; ++t) {
    std::vector<std::array<double, 3>> pts;
    for (std::size_t i = 0, n = 3 + rng.below(15); i < n; ++i) {
      std::array<double, 3> p{rng.uniform(), rng.uniform(), rng.uniform()};
      const double s = p[0] + p[1] + p[2];
      for (auto& v : p) v /= s;
      pts.push_back(p);
    }
    const auto s = shares_of(pts);
    const int k = 1 + static_cast<int>(rng.below(std::min<std::size_t>(4, pts.size())));
    const auto r = cluster_cities(s, k, rng.next(), 10);
    ASSERT_EQ(r.inertia_trace.size(), 10u);
    for (const auto& trace : r.inertia_trace)
      for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] + 1e-12);
    EXPECT_NEAR(r.inertia, brute_inertia(s, r), 1e-12);
    for (const auto& trace : r.inertia_trace) EXPECT_LE(r.inertia, trace.back() + 1e-12);
  }
}

TEST(StatsByCategory, SingleAndOracle) {
  auto st = stats_by_category({42.0, 7.0}, {RC::Radial, RC::Organic});
  EXPECT_EQ(st[RC::Radial].mean, 42.0);
  EXPECT_EQ(st[RC::Radial].median, 42.0);
  EXPECT_EQ(st[RC::Radial].stddev, 0.0);
  EXPECT_FALSE(st.contains(RC::Gridiron));

  const std::vector<double> six = {12.5, 3.0, 99.0, 47.25, 3.0, 60.0};
  st = stats_by_category(six, std::vector<RC>(6, RC::Gridiron));
  const auto o = stats_oracle(six);
  EXPECT_NEAR(st[RC::Gridiron].mean, o.mean, 1e-12);
  EXPECT_EQ(st[RC::Gridiron].median, 12.5);  // lower middle of 3,3,12.5,47.25,60,99
  EXPECT_NEAR(st[RC::Gridiron].stddev, o.sd, 1e-12);
}

TEST(StatsByCategory, RecombinedMeanProperty) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s;
    std::vector<RC> c;
    for (std::size_t i = 0, n = 1 + rng.below(80); i < n; ++i) {
      s.push_back(rng.uniform(0, 100));
      c.push_back(static_cast<RC>(rng.below(4)));
    }
    const auto st = stats_by_category(s, c);
    double total = 0, n = 0;
    for (const auto& [cat, v] : st) {
      total += v.mean * static_cast<double>(v.n);
      n += static_cast<double>(v.n);
      EXPECT_GE(v.stddev, 0.0);
      EXPECT_GE(v.median, v.min);
      EXPECT_LE(v.median, v.max);
    }
    EXPECT_NEAR(total / n, stats_oracle(s).mean, 1e-9);
  }
}

TEST(ProportionByRange, HandTally) {
  const std::vector<double> s = {5, 15, 25, 100, 80, 79.9, 20};
  const std::vector<RC> c = {RC::Gridiron, RC::Organic, RC::Organic, RC::Radial, RC::Radial, RC::NoPattern, RC::Gridiron};
  const auto b = proportion_by_range(s, c);
  EXPECT_EQ(b[0].count, 2u);
  EXPECT_EQ(*b[0].proportions, (std::array<double, 4>{0.5, 0.5, 0, 0}));
  EXPECT_EQ(b[1].count, 2u);  // 20 and 25
  EXPECT_EQ(*b[1].proportions, (std::array<double, 4>{0.5, 0.5, 0, 0}));
  EXPECT_EQ(b[2].count, 0u);
  EXPECT_FALSE(b[2].proportions);
  EXPECT_EQ(b[3].count, 1u);
  EXPECT_EQ(*b[3].proportions, (std::array<double, 4>{0, 0, 0, 1}));
  EXPECT_EQ(b[4].count, 2u);  // 80 and 100
  EXPECT_EQ(*b[4].proportions, (std::array<double, 4>{0, 0, 1, 0}));
  EXPECT_THROW(proportion_by_range({101}, {RC::Radial}), ArgumentError);
}

TEST(ProportionByRange, OneBinAndSumsProperty) {
  auto b = proportion_by_range({41, 42, 59.9}, {RC::Gridiron, RC::Radial, RC::Radial});
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(b[i].count, i == 2 ? 3u : 0u);
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s;
    std::vector<RC> c;
    for (std::size_t i = 0, n = 1 + rng.below(50); i < n; ++i) {
      s.push_back(rng.uniform(0, 100));
      c.push_back(static_cast<RC>(rng.below(4)));
    }
    std::size_t total = 0;
    for (const auto& bin : proportion_by_range(s, c)) {
      total += bin.count;
      if (bin.proportions) { EXPECT_NEAR(std::accumulate(bin.proportions->begin(), bin.proportions->end(), 0.0), 1.0, 1e-12); }
    }
    EXPECT_EQ(total, s.size());
  }
}

TEST(KdeCurve, NormalizedAndShifted) {
  Rng rng(5);
  std::vector<double> a;
  for (int i = 0; i < 60; ++i) a.push_back(std::clamp(50 + 10 * rng.normal(), 0.0, 100.0));
  const auto ca = kde_curve(a);
  EXPECT_EQ(ca.x.size(), 256u);
  EXPECT_NEAR(trapezoid(ca), 1.0, 0.02);
  EXPECT_EQ(kde_curve(a).density, ca.density);
  auto left = a;
  for (auto& v : left) v -= 20;
  const auto cl = kde_curve(left, ca.bandwidth);
  auto mode = [](const KdeCurve& c) {
    return c.x[static_cast<std::size_t>(std::max_element(c.density.begin(), c.density.end()) - c.density.begin())];
  };
  EXPECT_LT(mode(cl), mode(ca) - 15);
  EXPECT_NEAR(trapezoid(cl), 1.0, 0.02);
  EXPECT_THROW(kde_curve({1.0}), ArgumentError);
}

TEST(KdeCurve, SilvermanAndFallbacks) {
  const std::vector<double> v = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  // sd = 3.02765, IQR = 4.5 -> 3.358; min is sd
  const double sd = std::sqrt(82.5 / 9);
  EXPECT_NEAR(silverman_bandwidth(v), 0.9 * sd * std::pow(10.0, -0.2), 1e-12);
  // IQR 0 but sd > 0 -> sd
  const std::vector<double> spike = {5, 5, 5, 5, 5, 5, 5, 9};
  const double sd2 = std::sqrt((7 * 0.25 + 12.25) / 7);
  EXPECT_NEAR(silverman_bandwidth(spike), 0.9 * sd2 * std::pow(8.0, -0.2), 1e-12);
  EXPECT_NEAR(silverman_bandwidth({3, 3}), 0.9 * std::pow(2.0, -0.2), 1e-12);
  EXPECT_THROW(silverman_bandwidth({1}), ArgumentError);
}

TEST(TopN, OracleAndLimits) {
  Rng rng(6);
  std::vector<ScoredCell> cells;
  for (int i = 0; i < 40; ++i) {
    ScoredCell c;
    c.category = static_cast<RC>(rng.below(4));
    c.score = rng.uniform(0, 100);
    c.indices.rd = rng.uniform(0, 30000);
    c.indices.bud = rng.uniform();
    c.indices.lum = rng.uniform(0, 1.5);
    cells.push_back(c);
  }
  for (std::size_t n : {1u, 3u, 10u, 40u}) {
    const auto rows = top_n_table(cells, n);
    for (const auto& row : rows) {
      std::vector<const ScoredCell*> mine;
      for (const auto& c : cells)
        if (c.category == row.category) mine.push_back(&c);
      std::sort(mine.begin(), mine.end(), [](auto a, auto b) { return a->score > b->score; });
      const std::size_t used = std::min(n, mine.size());
      EXPECT_EQ(row.used, used);
      EXPECT_EQ(row.short_of_n, mine.size() < n);
      double score = 0, rd = 0, lum = 0;
      for (std::size_t j = 0; j < used; ++j) score += mine[j]->score, rd += mine[j]->indices.rd, lum += mine[j]->indices.lum;
      EXPECT_NEAR(row.mean_score, score / static_cast<double>(used), 1e-9);
      EXPECT_NEAR(row.mean_indices[0], rd / static_cast<double>(used), 1e-9);
      EXPECT_NEAR(row.mean_indices[6], lum / static_cast<double>(used), 1e-12);
      if (n == 1) { EXPECT_EQ(row.mean_score, mine[0]->score); }
      if (n == 40) {
        std::vector<double> s;
        for (auto* c : mine) s.push_back(c->score);
        EXPECT_NEAR(row.mean_score, stats_oracle(s).mean, 1e-9);
      }
    }
    for (const auto& row : rows) EXPECT_NE(row.category, RC::NoPattern);
  }
}

TEST(CompareModels, ZeroProbabilityColumnsMatchBaseline) {
  Rng rng(7);
  Matrix base, aug;
  std::vector<double> y;
  for (int i = 0; i < 120; ++i) {
    std::vector<double> row = {rng.uniform(), rng.uniform(), rng.uniform()};
    y.push_back(row[0] * 10 + rng.normal());
    base.push_back(row);
    row.insert(row.end(), {0.0, 0.0, 0.0, 0.0});
    aug.push_back(row);
  }
  GbmParams p;
  p.num_iterations = 40;
  const auto c = compare_models(base, aug, y, p, 3);
  EXPECT_EQ(c.baseline.rmse, c.augmented.rmse);
  EXPECT_EQ(c.baseline.mae, c.augmented.mae);
  EXPECT_EQ(*c.baseline.r2, *c.augmented.r2);
  EXPECT_EQ(c.test_rows, 24u);
  EXPECT_EQ(c.train_rows, 96u);
  const auto same = compare_models(base, base, y, p, 3);
  EXPECT_EQ(same.delta_rmse, 0.0);
}

TEST(CompareModels, InformativeProbabilityHelps) {
  Rng rng(8);
  Matrix base, aug;
  std::vector<double> y;
  for (int i = 0; i < 200; ++i) {
    const auto pr = softmax({rng.normal(), rng.normal(), rng.normal(), 2 * rng.normal()});
    std::vector<double> row = {rng.uniform(), rng.uniform()};
    y.push_back(40 * pr.p[3] + row[0] + 0.5 * rng.normal());
    base.push_back(row);
    row.insert(row.end(), {pr.p[2], pr.p[1], pr.p[0], pr.p[3]});
    aug.push_back(row);
  }
  GbmParams p;
  p.num_iterations = 100;
  const auto c = compare_models(base, aug, y, p, 5);
  EXPECT_GT(*c.augmented.r2, *c.baseline.r2);
  EXPECT_LT(c.delta_rmse, 0.0);
}

TEST(CompareModels, HoldoutSplit) {
  const auto [train, test] = holdout_split(50, 0.2, 9);
  EXPECT_EQ(test.size(), 10u);
  EXPECT_EQ(train.size(), 40u);
  std::vector<std::size_t> all = train;
  all.insert(all.end(), test.begin(), test.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(holdout_split(50, 0.2, 9).second, test);
  EXPECT_THROW(holdout_split(3, 0.2, 1), ArgumentError);
}

TEST(CategoricalMap, ExportAndParseBack) {
  EXPECT_EQ(categorical_map({})["features"].size(), 0u);
  std::vector<MapCell> cells;
  Rng rng(10);
  for (int i = 0; i < 12; ++i) {
    MapCell m{make_cell(22800 + i % 4, 4797 + i / 4), softmax({rng.normal(), rng.normal(), rng.normal(), rng.normal()}),
              i % 3 ? std::optional<double>(rng.uniform(0, 100)) : std::nullopt};
    cells.push_back(m);
  }
  const auto one = categorical_map({cells[0]});
  ASSERT_EQ(one["features"].size(), 1u);
  const auto& ring = one["features"][0]["geometry"]["coordinates"][0];
  ASSERT_EQ(ring.size(), 5u);
  EXPECT_EQ(ring[0], ring[4]);
  EXPECT_TRUE(one["features"][0]["properties"]["score"].is_null());
  const auto back = parse_categorical_map(export_categorical_map(cells));
  ASSERT_EQ(back.size(), cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    EXPECT_EQ(back[i].first, cells[i].cell.id());
    EXPECT_EQ(back[i].second, assign_category(cells[i].probs));
  }
  EXPECT_THROW(parse_categorical_map("{"), ParseError);
  EXPECT_THROW(parse_categorical_map("{\"features\": [{}]}"), FormatError);
}
