#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

#include "morphogrid/classifier.hpp"
#include "morphogrid/synth.hpp"
#include "test_support.hpp"

using namespace morphogrid;

TEST(GenCategory, UnjitteredGridironIsOrthogonal) {
  SynthParams p;
  p.seed = 4;
  const auto g = gen_category(RoadCategory::Gridiron, p);
  const auto h = bearing_histogram(g, 36);
  const double total = std::accumulate(h.begin(), h.end(), 0.0);
  ASSERT_GT(total, 0.0);
  EXPECT_GE((h[0] + h[18]) / total, 0.99);
}

TEST(GenCategory, RadialHubDegree) {
  SynthParams p;
  p.spokes = 8;
  const auto g = gen_category(RoadCategory::Radial, p);
  int max_degree = 0;
  for (const auto& n : g.nodes) max_degree = std::max(max_degree, n.degree);
  EXPECT_GE(max_degree, 8);
}

TEST(GenCategory, SameSeedSameGraph) {
  for (auto c : kAllCategories) {
    const auto p = random_params(c, 99);
    const auto a = gen_ways(c, p), b = gen_ways(c, p);
    EXPECT_EQ(a, b) << category_name(c);
  }
}

TEST(GenCategory, InvalidInputs) {
  EXPECT_THROW(gen_category(static_cast<RoadCategory>(7), SynthParams{}), ArgumentError);
  SynthParams p;
  p.spokes = 3;
  EXPECT_THROW(gen_category(RoadCategory::Radial, p), ArgumentError);
  p = SynthParams{};
  p.extent_m = 0;
  EXPECT_THROW(gen_category(RoadCategory::Gridiron, p), ArgumentError);
  p = SynthParams{};
  p.jitter = 1.0;
  EXPECT_THROW(gen_category(RoadCategory::Gridiron, p), ArgumentError);
}

TEST(GenCategory, LowJitterGridironClassifiedGridironProperty) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto p = random_params(RoadCategory::Gridiron, seed, 0.05);
    const auto probs = classify_heuristic(gen_category(RoadCategory::Gridiron, p), p.extent_m);
    EXPECT_EQ(assign_category(probs), RoadCategory::Gridiron) << "seed " << seed;
  }
}

TEST(GenCategory, NoPatternIsSparseProperty) {
  const double grid_len = total_length(gen_category(RoadCategory::Gridiron, SynthParams{}));
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto p = random_params(RoadCategory::NoPattern, seed);
    EXPECT_LT(total_length(gen_category(RoadCategory::NoPattern, p)), 0.3 * grid_len) << "seed " << seed;
  }
}

TEST(GenDataset, OnePerClass) {
  DatasetOptions opt;
  opt.size_px = 64;
  const auto d = gen_dataset(1, 5, opt);
  ASSERT_EQ(d.size(), 4u);
  std::set<RoadCategory> labels;
  for (const auto& x : d) {
    labels.insert(x.label);
    EXPECT_EQ(x.image.size, 64);
  }
  EXPECT_EQ(labels.size(), 4u);
}

TEST(GenDataset, StratifiedSplit) {
  const auto specs = gen_dataset_specs(50, 3);
  ASSERT_EQ(specs.size(), 200u);
  std::map<Split, int> total;
  std::map<std::pair<RoadCategory, Split>, int> per;
  for (const auto& s : specs) ++total[s.split], ++per[{s.label, s.split}];
  EXPECT_EQ(total[Split::Train], 160);
  EXPECT_EQ(total[Split::Validation], 20);
  EXPECT_EQ(total[Split::Test], 20);
  for (auto c : kAllCategories) {
    EXPECT_EQ((per[{c, Split::Train}]), 40);
    EXPECT_EQ((per[{c, Split::Validation}]), 5);
    EXPECT_EQ((per[{c, Split::Test}]), 5);
  }
}

TEST(GenDataset, StrataBalancedProperty) {
  for (int n = 1; n <= 23; ++n) {
    const auto specs = gen_dataset_specs(n, static_cast<std::uint64_t>(n));
    std::map<std::pair<RoadCategory, Split>, int> per;
    for (const auto& s : specs) ++per[{s.label, s.split}];
    for (auto split : {Split::Train, Split::Validation, Split::Test}) {
      int lo = 1 << 30, hi = -1;
      for (auto c : kAllCategories) lo = std::min(lo, per[{c, split}]), hi = std::max(hi, per[{c, split}]);
      EXPECT_LE(hi - lo, 1) << "n " << n;
    }
  }
}

TEST(GenDataset, PureFunctionOfInputs) {
  DatasetOptions opt;
  opt.size_px = 64;
  const auto a = gen_dataset(2, 8, opt), b = gen_dataset(2, 8, opt);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].image.pixels, b[i].image.pixels);
  const auto c = gen_dataset(2, 9, opt);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) any_diff |= a[i].image.pixels != c[i].image.pixels;
  EXPECT_TRUE(any_diff);
}

TEST(GenDataset, ManifestRows) {
  const auto specs = gen_dataset_specs(1, 1);
  std::ostringstream out;
  write_dataset_manifest(out, specs, [](const DatasetSpec& s) { return "img_" + std::to_string(s.index) + ".png"; });
  const auto t = out.str();
  EXPECT_EQ(t.substr(0, t.find('\n')), "path,label,split");
  EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 5);
  EXPECT_NE(t.find("img_0.png,gridiron,"), std::string::npos);
  EXPECT_THROW(parse_split("holdout"), FormatError);
}
