#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "morphogrid/classifier.hpp"
#include "morphogrid/synth.hpp"
#include "test_support.hpp"

using namespace morphogrid;

namespace {

CategoryProbs probs(double a, double b, double c, double d) { return CategoryProbs{{a, b, c, d}}; }

CategoryProbs one_hot(RoadCategory c) {
  CategoryProbs p{{0, 0, 0, 0}};
  p.p[index_of(c)] = 1.0;
  return p;
}

// Rank-sum (Mann-Whitney) AUC with ties counted half: an oracle independent
// of the ROC sweep.
double auc_oracle(const std::vector<double>& s, const std::vector<bool>& pos) {
  double num = 0, np = 0, nn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!pos[i]) continue;
    ++np;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (pos[j]) continue;
      num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  for (bool b : pos) nn += !b;
  return num / (np * nn);
}

}  // namespace

TEST(Category, NamesAndOrder) {
  EXPECT_EQ(kAllCategories.size(), 4u);
  EXPECT_EQ(category_name(RoadCategory::NoPattern), "nopattern");
  for (auto c : kAllCategories) EXPECT_EQ(parse_category(category_name(c)), c);
  EXPECT_THROW(parse_category("spiral"), ArgumentError);
}

TEST(AssignCategory, ArgmaxAndTieBreak) {
  EXPECT_EQ(assign_category(probs(0.1, 0.2, 0.3, 0.4)), RoadCategory::NoPattern);
  EXPECT_EQ(assign_category(probs(1, 0, 0, 0)), RoadCategory::Gridiron);
  EXPECT_EQ(assign_category(probs(0.25, 0.25, 0.25, 0.25)), RoadCategory::Gridiron);
  EXPECT_EQ(assign_category(probs(0.1, 0.4, 0.4, 0.1)), RoadCategory::Organic);
}

TEST(AssignCategory, ScaleInvariantProperty) {
  Rng rng(12);
  for (int t = 0; t < 500; ++t) {
    CategoryProbs p;
    for (auto& v : p.p) v = static_cast<double>(rng.below(5));
    const double k = rng.uniform(0.01, 100.0);
    CategoryProbs q = p;
    for (auto& v : q.p) v *= k;
    EXPECT_EQ(assign_category(p), assign_category(q));
  }
}

TEST(Softmax, ZerosAreUniform) {
  const auto p = softmax({0, 0, 0, 0});
  for (double v : p.p) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, SumsToOneAndShiftInvariantProperty) {
  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    std::array<double, 4> z;
    for (auto& v : z) v = rng.uniform(-50, 50);
    const auto p = softmax(z);
    EXPECT_TRUE(p.valid());
    EXPECT_NEAR(std::accumulate(p.p.begin(), p.p.end(), 0.0), 1.0, 1e-12);
    const double c = rng.uniform(-500, 500);
    auto shifted = z;
    for (auto& v : shifted) v += c;
    const auto q = softmax(shifted);
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(p.p[k], q.p[k], 1e-12);
  }
}

TEST(Heuristic, EmptyGraphIsNoPattern) {
  EXPECT_EQ(assign_category(classify_heuristic(RoadGraph{}, 1000)), RoadCategory::NoPattern);
}

TEST(Heuristic, UnjitteredGridiron) {
  const auto g = gen_category(RoadCategory::Gridiron, SynthParams{});
  const auto p = classify_heuristic(g, SynthParams{}.extent_m);
  EXPECT_TRUE(p.valid());
  EXPECT_EQ(assign_category(p), RoadCategory::Gridiron);
}

TEST(Heuristic, EightSpokeRadial) {
  SynthParams sp;
  sp.spokes = 8;
  const auto p = classify_heuristic(gen_category(RoadCategory::Radial, sp), sp.extent_m);
  EXPECT_EQ(assign_category(p), RoadCategory::Radial);
}

TEST(Heuristic, MinorRoadsOnlyIsNoPattern) {
  // dense residential grid carries no major length
  const auto g = build_graph(mgtest::street_grid(10, 10.0, 50.0, 0.001));
  EXPECT_EQ(assign_category(classify_heuristic(g, 1000)), RoadCategory::NoPattern);
}

TEST(Heuristic, ValidProbabilitiesProperty) {
  Rng rng(21);
  for (int t = 0; t < 50; ++t) {
    const auto g = build_graph(mgtest::random_streets(rng, 10.0, 50.0, 0.01));
    EXPECT_TRUE(classify_heuristic(g, rng.uniform(100, 3000)).valid());
  }
}

TEST(Heuristic, SyntheticAccuracyAtLowJitter) {
  std::vector<CategoryProbs> pred;
  std::vector<RoadCategory> labels;
  for (auto c : kAllCategories)
    for (std::uint64_t s = 0; s < 25; ++s) {
      const auto p = random_params(c, s, 0.05);
      pred.push_back(classify_heuristic(gen_category(c, p), p.extent_m));
      labels.push_back(c);
    }
  EXPECT_GE(evaluate(pred, labels).overall_accuracy, 0.90);
}

TEST(Evaluate, PerfectPredictor) {
  std::vector<CategoryProbs> pred;
  std::vector<RoadCategory> labels;
  for (int rep = 0; rep < 3; ++rep)
    for (auto c : kAllCategories) {
      pred.push_back(one_hot(c));
      labels.push_back(c);
    }
  const auto r = evaluate(pred, labels);
  EXPECT_DOUBLE_EQ(r.overall_accuracy, 1.0);
  for (std::size_t c = 0; c < 4; ++c) {
    ASSERT_TRUE(r.confusion[c]);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ((*r.confusion[c])[k], c == k ? 1.0 : 0.0);
    ASSERT_TRUE(r.auc[c]);
    EXPECT_DOUBLE_EQ(*r.auc[c], 1.0);
  }
}

TEST(Evaluate, ConstantPredictorOnBalancedSet) {
  std::vector<CategoryProbs> pred;
  std::vector<RoadCategory> labels;
  for (auto c : kAllCategories)
    for (int rep = 0; rep < 5; ++rep) {
      pred.push_back(one_hot(RoadCategory::Organic));
      labels.push_back(c);
    }
  const auto r = evaluate(pred, labels);
  EXPECT_DOUBLE_EQ(r.overall_accuracy, 0.25);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(*r.auc[c], 0.5);
}

TEST(Evaluate, MissingSupportRow) {
  const auto r = evaluate({one_hot(RoadCategory::Gridiron), probs(0.2, 0.6, 0.1, 0.1)},
                          {RoadCategory::Gridiron, RoadCategory::Organic});
  EXPECT_FALSE(r.confusion[2]);
  EXPECT_FALSE(r.auc[2]);
  EXPECT_FALSE(r.confusion[3]);
  EXPECT_NE(format_confusion(r).find("NA"), std::string::npos);
  EXPECT_THROW(evaluate({}, {}), ArgumentError);
}

TEST(Evaluate, ConfusionRowsAndAucMatchOracleProperty) {
  Rng rng(31);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 4 + rng.below(40);
    std::vector<CategoryProbs> pred(n);
    std::vector<RoadCategory> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::array<double, 4> z;
      for (auto& v : z) v = static_cast<double>(rng.below(4));  // coarse: plenty of ties
      pred[i] = softmax(z);
      labels[i] = static_cast<RoadCategory>(rng.below(4));
    }
    const auto r = evaluate(pred, labels);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += assign_category(pred[i]) == labels[i];
    EXPECT_DOUBLE_EQ(r.overall_accuracy, static_cast<double>(correct) / static_cast<double>(n));
    for (std::size_t c = 0; c < 4; ++c) {
      if (!r.confusion[c]) continue;
      const auto& row = *r.confusion[c];
      EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
      if (!r.auc[c]) continue;
      std::vector<double> s;
      std::vector<bool> pos;
      for (std::size_t i = 0; i < n; ++i) s.push_back(pred[i].p[c]), pos.push_back(index_of(labels[i]) == c);
      EXPECT_NEAR(*r.auc[c], auc_oracle(s, pos), 1e-12);
    }
  }
}

TEST(Evaluate, LabelsAsPredictionsProperty) {
  Rng rng(41);
  for (int t = 0; t < 100; ++t) {
    std::vector<CategoryProbs> pred;
    std::vector<RoadCategory> labels;
    for (std::size_t i = 0, n = 1 + rng.below(30); i < n; ++i) {
      labels.push_back(static_cast<RoadCategory>(rng.below(4)));
      pred.push_back(one_hot(labels.back()));
    }
    EXPECT_DOUBLE_EQ(evaluate(pred, labels).overall_accuracy, 1.0);
  }
}

TEST(ExternalProbs, RowsRenormalizedAndRejected) {
  std::istringstream in(
      "cell_col,cell_row,p_gridiron,p_organic,p_radial,p_nopattern\n"
      "3,7,1,0,0,0\n"
      "4,7,0.5,0.2,0.2,0.099\n"
      "5,7,-0.1,0.5,0.3,0.3\n"
      "6,7,0,0,0,0\n");
  const auto e = load_external_probs(csv::read(in));
  ASSERT_EQ(e.probs.size(), 2u);
  EXPECT_EQ(e.probs.at({3, 7}).p, (std::array<double, 4>{1, 0, 0, 0}));
  const auto& r = e.probs.at({4, 7});
  EXPECT_NEAR(std::accumulate(r.p.begin(), r.p.end(), 0.0), 1.0, 1e-12);
  EXPECT_NEAR(r.p[0], 0.5 / 0.999, 1e-12);
  EXPECT_EQ(e.renormalized, 1u);
  EXPECT_EQ(e.rejected, 2u);
}

TEST(ExternalProbs, MissingColumn) {
  std::istringstream in("cell_col,cell_row,p_gridiron,p_organic,p_radial\n1,1,1,0,0\n");
  EXPECT_THROW(load_external_probs(csv::read(in)), FormatError);
}

TEST(ExternalProbs, FixtureFile) {
  const auto e = load_external_probs_file((mgtest::fixture_dir() / "probs.csv").string());
  EXPECT_FALSE(e.probs.empty());
  for (const auto& [id, p] : e.probs) EXPECT_TRUE(p.valid());
}
