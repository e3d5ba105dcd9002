#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>
#include <numeric>
#include <set>

#include "morphogrid/road_graph.hpp"
#include "test_support.hpp"

using namespace morphogrid;

namespace {

GridCell covering_cell(const Bbox& b) {
  GridCell c;
  c.bbox = b;
  return c;
}

// Components among nodes with at least one edge.
std::size_t edge_components(const RoadGraph& g) {
  std::vector<std::size_t> parent(g.nodes.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& e : g.edges) parent[find(e.u)] = find(e.v);
  std::set<std::size_t> roots;
  for (const auto& e : g.edges) roots.insert(find(e.u));
  return roots.size();
}

std::size_t active_nodes(const RoadGraph& g) {
  std::size_t n = 0;
  for (const auto& node : g.nodes) n += node.degree > 0;
  return n;
}

}  // namespace

TEST(RegroupHighway, FiveTiers) {
  EXPECT_EQ(regroup_highway("motorway"), RoadTier::Motorway);
  EXPECT_EQ(regroup_highway("trunk_link"), RoadTier::Motorway);
  EXPECT_EQ(regroup_highway("primary_link"), RoadTier::Primary);
  EXPECT_EQ(regroup_highway("secondary"), RoadTier::Secondary);
  EXPECT_EQ(regroup_highway("tertiary_link"), RoadTier::Tertiary);
  for (const char* minor : {"residential", "service", "unclassified", "living_street", "road", "busway"})
    EXPECT_EQ(regroup_highway(minor), RoadTier::Minor) << minor;
}

TEST(RegroupHighway, NonVehicularExcluded) {
  for (const char* tag : {"footway", "path", "cycleway", "steps", "pedestrian", "track"})
    EXPECT_FALSE(regroup_highway(tag).has_value()) << tag;
}

TEST(RegroupHighway, TierOrder) {
  EXPECT_GT(RoadTier::Motorway, RoadTier::Primary);
  EXPECT_GT(RoadTier::Primary, RoadTier::Secondary);
  EXPECT_GT(RoadTier::Secondary, RoadTier::Tertiary);
  EXPECT_GT(RoadTier::Tertiary, RoadTier::Minor);
}

TEST(BuildGraph, SharedEndpoint) {
  const auto g = build_graph({{{{0, 0}, {0.001, 0}}, "residential"}, {{{0.001, 0}, {0.002, 0.001}}, "primary"}});
  EXPECT_EQ(g.nodes.size(), 3u);
  EXPECT_EQ(g.edges.size(), 2u);
  const auto mid = std::find_if(g.nodes.begin(), g.nodes.end(),
                                [](const RoadNode& n) { return n.pos == GeoPoint{0.001, 0}; });
  ASSERT_NE(mid, g.nodes.end());
  EXPECT_EQ(mid->degree, 2);
}

TEST(BuildGraph, CrossingAtSharedVertex) {
  const auto g = build_graph({{{{-0.001, 0}, {0, 0}, {0.001, 0}}, "residential"},
                              {{{0, -0.001}, {0, 0}, {0, 0.001}}, "residential"}});
  int max_degree = 0;
  for (const auto& n : g.nodes) max_degree = std::max(max_degree, n.degree);
  EXPECT_EQ(max_degree, 4);
  EXPECT_EQ(count_intersections(g), 1u);
}

TEST(BuildGraph, CrossingWithoutSharedVertexIsNotNoded) {
  const auto g = build_graph({{{{-0.001, 0}, {0.001, 0}}, "residential"}, {{{0, -0.001}, {0, 0.001}}, "residential"}});
  EXPECT_EQ(count_intersections(g), 0u);
  EXPECT_EQ(g.edges.size(), 2u);
}

TEST(BuildGraph, NearCoincidentVerticesMerge) {
  const auto g = build_graph({{{{0, 0}, {0.001, 0}}, "residential"}, {{{0.001 + 2e-8, 0}, {0.002, 0}}, "residential"}});
  EXPECT_EQ(g.nodes.size(), 3u);
}

TEST(BuildGraph, OneDegreeAtEquator) {
  const auto g = build_graph({{{{0, 0}, {1, 0}}, "primary"}});
  ASSERT_EQ(g.edges.size(), 1u);
  const double closed_form = 6371000.0 * std::numbers::pi / 180.0;
  EXPECT_NEAR(closed_form, 111194.9, 0.05);
  EXPECT_NEAR(g.edges[0].length_m, 111194.9, 1.0);
}

TEST(BuildGraph, ExcludedTagsDropped) {
  const auto g = build_graph({{{{0, 0}, {0.001, 0}}, "footway"}, {{{0, 0}, {0, 0.001}}, "cycleway"}});
  EXPECT_TRUE(g.edges.empty());
}

TEST(CountIntersections, Cases) {
  EXPECT_EQ(count_intersections(build_graph({{{{0, 0}, {0.001, 0}, {0.002, 0.001}}, "residential"}})), 0u);
  EXPECT_EQ(count_intersections(build_graph(mgtest::street_grid(3, 10.0, 50.0, 0.001))), 9u);
}

TEST(TotalLength, ClippedToCell) {
  const auto cell = make_cell(22800, 4799);  // lon [10, 10.00833], lat [50, 50.00833]
  const double mid_lat = 50.004;
  EXPECT_DOUBLE_EQ(total_length(build_graph({{{{11, 51}, {11.001, 51}}, "primary"}}), cell), 0.0);
  const auto inside = build_graph({{{{10.001, mid_lat}, {10.003, mid_lat}}, "primary"}});
  EXPECT_NEAR(total_length(inside, cell), inside.edges[0].length_m, 1e-9);
  // straight edge centred on the west edge: half inside
  const auto half = build_graph({{{{10.0 - 0.002, mid_lat}, {10.0 + 0.002, mid_lat}}, "primary"}});
  EXPECT_NEAR(total_length(half, cell), 0.5 * half.edges[0].length_m, 0.001 * 0.5 * half.edges[0].length_m);
}

TEST(TotalLength, CoveringCellEqualsSumProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = build_graph(mgtest::random_streets(rng, 10.0, 50.0, 0.02));
    double sum = 0;
    for (const auto& e : g.edges) sum += e.length_m;
    const double got = total_length(g, covering_cell({9.9, 49.9, 10.1, 50.1}));
    EXPECT_LE(mgtest::rel_err(got, sum), 1e-9);
  }
}

TEST(BearingHistogram, DueNorthInBinZero) {
  const auto h = bearing_histogram(build_graph({{{{0, 0}, {0, 0.01}}, "primary"}}), 36);
  EXPECT_GT(h[0], 0.0);
  EXPECT_DOUBLE_EQ(std::accumulate(h.begin() + 1, h.end(), 0.0), 0.0);
}

TEST(BearingHistogram, OrthogonalGridTwoBins) {
  const auto g = build_graph(mgtest::street_grid(6, 10.0, 0.0, 0.001));
  const auto h = bearing_histogram(g, 36);
  const double total = std::accumulate(h.begin(), h.end(), 0.0);
  EXPECT_GE((h[0] + h[18]) / total, 0.99);
  EXPECT_NEAR(total, total_length(g), 1e-6 * total);
}

TEST(BearingHistogram, EmptyAndBadBins) {
  const auto h = bearing_histogram(RoadGraph{}, 36);
  EXPECT_EQ(h, std::vector<double>(36, 0.0));
  EXPECT_THROW(bearing_histogram(RoadGraph{}, 1), ArgumentError);
}

TEST(BearingHistogram, FlipInvarianceProperty) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    auto ways = mgtest::random_streets(rng, rng.uniform(-50, 50), rng.uniform(-50, 50), 0.01);
    const auto before = bearing_histogram(build_graph(ways), 36);
    for (auto& w : ways)
      if (rng.uniform() < 0.5) std::reverse(w.line.begin(), w.line.end());
    const auto after = bearing_histogram(build_graph(ways), 36);
    for (std::size_t k = 0; k < before.size(); ++k) EXPECT_NEAR(before[k], after[k], 1e-6);
  }
}

TEST(GraphInvariants, HandshakeProperty) {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = build_graph(mgtest::random_streets(rng, 0.0, 0.0, 0.01));
    long degrees = 0;
    for (const auto& n : g.nodes) degrees += n.degree;
    EXPECT_EQ(degrees, 2 * static_cast<long>(g.edges.size()));
    for (const auto& e : g.edges) EXPECT_GT(e.length_m, 0.0);
  }
}

TEST(GraphInvariants, IntersectionsPermutationAndTranslationProperty) {
  Rng rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    auto ways = mgtest::random_streets(rng, 10.0, 50.0, 0.01);
    const auto base = count_intersections(build_graph(ways));
    rng.shuffle(ways);
    EXPECT_EQ(count_intersections(build_graph(ways)), base);
    for (auto& w : ways)
      for (auto& p : w.line) p = {p.lon + 0.5, p.lat - 0.25};
    EXPECT_EQ(count_intersections(build_graph(ways)), base);
  }
}

TEST(PolygonizeBlocks, SquareLoopTreeAndGrid) {
  const auto loop = build_graph({{{{0, 0}, {0.001, 0}, {0.001, 0.001}, {0, 0.001}, {0, 0}}, "residential"}});
  EXPECT_EQ(polygonize_blocks(loop).size(), 1u);
  const auto tree = build_graph({{{{0, 0}, {0.001, 0}}, "residential"},
                                 {{{0.001, 0}, {0.002, 0.001}}, "residential"},
                                 {{{0.001, 0}, {0.001, -0.001}}, "residential"}});
  EXPECT_TRUE(polygonize_blocks(tree).empty());
  const auto grid = polygonize_blocks(build_graph(mgtest::street_grid(3, 10.0, 50.0, 0.001)));
  ASSERT_EQ(grid.size(), 4u);
  for (const auto& b : grid) {
    EXPECT_EQ(b.ring.front(), b.ring.back());
    double w = 1e9, e = -1e9, s = 1e9, n = -1e9;
    for (const auto& p : b.ring) w = std::min(w, p.lon), e = std::max(e, p.lon), s = std::min(s, p.lat), n = std::max(n, p.lat);
    EXPECT_NEAR(b.area_m2, mgtest::rect_area_oracle_m2(w, s, e, n), 1e-6 * b.area_m2);
  }
}

TEST(PolygonizeBlocks, ClipKeepsBlocksMeetingCell) {
  const auto g = build_graph(mgtest::street_grid(5, 10.0, 50.0, 0.0025));  // 4x4 blocks over [10, 10.01]
  const auto all = polygonize_blocks(g);
  EXPECT_EQ(all.size(), 16u);
  EXPECT_EQ(polygonize_blocks(g, make_cell(22800, 4799)).size(), 16u);
  // north-east neighbour overlaps only the corner block, which keeps its full area
  const auto corner = polygonize_blocks(g, make_cell(22801, 4798));
  ASSERT_EQ(corner.size(), 1u);
  EXPECT_NEAR(corner[0].area_m2, mgtest::rect_area_oracle_m2(10.0075, 50.0075, 10.01, 50.01), 1e-6 * corner[0].area_m2);
  // a cell sharing only an edge with the grid gets nothing
  EXPECT_TRUE(polygonize_blocks(g, make_cell(22799, 4799)).empty());
}

TEST(PolygonizeBlocks, EulerCountProperty) {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = build_graph(mgtest::random_streets(rng, 10.0, 50.0, 0.01));
    const auto blocks = polygonize_blocks(g);
    const long expected = static_cast<long>(g.edges.size()) - static_cast<long>(active_nodes(g)) +
                          static_cast<long>(edge_components(g));
    EXPECT_EQ(static_cast<long>(blocks.size()), expected) << "trial " << trial;
    for (const auto& b : blocks) EXPECT_GT(b.area_m2, 0.0);
  }
}
