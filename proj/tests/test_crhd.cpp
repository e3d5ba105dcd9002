#include <gtest/gtest.h>

#include <set>

#include "morphogrid/crhd.hpp"
#include "test_support.hpp"

using namespace morphogrid;

namespace {

std::size_t count_color(const CrhdImage& img, const Rgb& c) {
  std::size_t n = 0;
  for (int y = 0; y < img.size; ++y)
    for (int x = 0; x < img.size; ++x) n += img.at(x, y) == c;
  return n;
}

bool palette_only(const CrhdImage& img, const Palette& p) {
  std::set<std::tuple<int, int, int>> allowed{{p.background.r, p.background.g, p.background.b}};
  for (const auto& t : p.tiers) allowed.insert({t.color.r, t.color.g, t.color.b});
  for (std::size_t i = 0; i < img.pixels.size(); i += 3)
    if (!allowed.contains({img.pixels[i], img.pixels[i + 1], img.pixels[i + 2]})) return false;
  return true;
}

}  // namespace

TEST(Palette, DefaultIsWellOrdered) {
  const Palette p;
  EXPECT_TRUE(p.well_ordered());
  EXPECT_EQ(p.style(RoadTier::Motorway).color, (Rgb{0, 0, 0}));
  EXPECT_EQ(p.style(RoadTier::Motorway).width, 5);
  EXPECT_EQ(p.style(RoadTier::Minor).color, (Rgb{224, 224, 224}));
  EXPECT_EQ(p.style(RoadTier::Minor).width, 1);
  Palette bad = p;
  bad.tiers[0].color = {0, 0, 0};
  EXPECT_FALSE(bad.well_ordered());
}

TEST(RenderCrhd, EmptyGraphIsBackground) {
  const auto img = render_crhd(RoadGraph{}, {10, 50}, 1000, 128);
  EXPECT_EQ(img.size, 128);
  EXPECT_EQ(count_color(img, Palette{}.background), 128u * 128u);
}

TEST(RenderCrhd, HorizontalMotorwayBand) {
  const GeoPoint c{10.0, 0.0};
  const int size = 256;
  const auto g = build_graph({{{{c.lon - 0.05, c.lat}, {c.lon + 0.05, c.lat}}, "motorway"}});
  const auto img = render_crhd(g, c, 1000, size);
  // the line spans the full width; a 5-px stroke covers 5 rows of it
  EXPECT_EQ(count_color(img, Rgb{0, 0, 0}), 5u * size);
  std::set<int> rows;
  for (int y = 0; y < size; ++y)
    if (img.at(size / 2, y) == Rgb{0, 0, 0}) rows.insert(y);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(*rows.rbegin() - *rows.begin(), 4);
  EXPECT_LE(std::abs(*rows.begin() + 2 - size / 2), 1);
}

TEST(RenderCrhd, ShortSegmentPixelCount) {
  // 400 m east-west segment at scale 0.128 px/m: ~51 px centerline, 5 rows
  const GeoPoint c{0.0, 0.0};
  const double dlon = 200.0 / 111194.93;
  const auto g = build_graph({{{{-dlon, 0}, {dlon, 0}}, "motorway"}});
  const auto img = render_crhd(g, c, 1000, 256);
  const double span = 400.0 * 256 / 2000.0;
  const auto n = static_cast<double>(count_color(img, Rgb{0, 0, 0}));
  EXPECT_NEAR(n, 5.0 * span, 5.0 * 2);  // end caps: one pixel each side
}

TEST(RenderCrhd, RejectsBadArguments) {
  EXPECT_THROW(render_crhd(RoadGraph{}, {0, 0}, 0.0, 128), ArgumentError);
  EXPECT_THROW(render_crhd(RoadGraph{}, {0, 0}, 100.0, 32), ArgumentError);
}

TEST(RenderCrhd, DeterministicAndPaletteOnlyProperty) {
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = build_graph(mgtest::random_streets(rng, 10.0, 50.0, 0.02));
    const auto a = render_crhd(g, {10.01, 50.01}, 1000, 128);
    const auto b = render_crhd(g, {10.01, 50.01}, 1000, 128);
    EXPECT_EQ(a.pixels, b.pixels);
    EXPECT_TRUE(palette_only(a, Palette{}));
  }
}

TEST(RenderCrhd, TranslationConsistencyProperty) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    auto ways = mgtest::random_streets(rng, 10.0, 50.0, 0.02);
    const auto a = render_crhd(build_graph(ways), {10.01, 50.01}, 1000, 128);
    for (auto& w : ways)
      for (auto& p : w.line) p.lon += 1.0;
    const auto b = render_crhd(build_graph(ways), {11.01, 50.01}, 1000, 128);
    EXPECT_EQ(a.pixels, b.pixels);
  }
}

TEST(RenderCrhd, HigherTierWinsOverdrawProperty) {
  Rng rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ways = mgtest::random_streets(rng, 10.0, 50.0, 0.02);
    const auto g = build_graph(ways);
    const auto all = render_crhd(g, {10.01, 50.01}, 1000, 128);
    std::array<CrhdImage, kTierCount> single;
    for (int t = 0; t < kTierCount; ++t) {
      RoadGraph only = g;
      std::erase_if(only.edges, [&](const RoadEdge& e) { return static_cast<int>(e.tier) != t; });
      single[t] = render_crhd(only, {10.01, 50.01}, 1000, 128);
    }
    const Palette p;
    for (int y = 0; y < 128; ++y)
      for (int x = 0; x < 128; ++x) {
        int top = -1;
        for (int t = 0; t < kTierCount; ++t)
          if (single[t].at(x, y) != p.background) top = t;
        const Rgb want = top < 0 ? p.background : p.tiers[top].color;
        ASSERT_EQ(all.at(x, y), want) << "pixel " << x << "," << y;
      }
  }
}

TEST(TruncateMinor, Rules) {
  auto img = blank_crhd(64, {0, 0}, 100, Palette{}.background);
  const auto untouched = truncate_minor(img, 200);
  EXPECT_EQ(untouched.pixels, img.pixels);
  img.set(1, 1, {224, 224, 224});
  img.set(2, 2, {0, 0, 0});
  img.set(3, 3, {199, 250, 250});
  const auto t = truncate_minor(img, 200);
  EXPECT_EQ(t.at(1, 1), Palette{}.background);
  EXPECT_EQ(t.at(2, 2), (Rgb{0, 0, 0}));
  EXPECT_EQ(t.at(3, 3), (Rgb{199, 250, 250}));
}

TEST(TruncateMinor, IdempotentProperty) {
  Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    auto img = blank_crhd(64, {0, 0}, 100, Palette{}.background);
    for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng.below(256));
    const auto floor = static_cast<std::uint8_t>(rng.below(256));
    const auto once = truncate_minor(img, floor);
    EXPECT_EQ(truncate_minor(once, floor).pixels, once.pixels);
  }
}

TEST(RenderForCell, RadiusAndPlacement) {
  const auto cell = make_cell(22800, 4799);
  const double half_m = geo::haversine_m({10.004, cell.bbox.south}, {10.004, cell.bbox.north}) / 2;
  const auto empty = render_for_cell(RoadGraph{}, cell, 128);
  EXPECT_NEAR(empty.radius_m, 2 * half_m, 1e-6);
  EXPECT_EQ(count_color(empty, Palette{}.background), 128u * 128u);
  // a primary road 300 m north of the cell: outside the cell, inside the doubled extent
  const double lat = cell.bbox.north + 300.0 / 111194.93;
  const auto g = build_graph({{{{cell.bbox.west, lat}, {cell.bbox.east, lat}}, "primary"}});
  EXPECT_GT(count_color(render_for_cell(g, cell, 128), Palette{}.style(RoadTier::Primary).color), 0u);
  // minor roads are truncated by default
  const auto minor = build_graph({{{{cell.bbox.west, 50.004}, {cell.bbox.east, 50.004}}, "residential"}});
  EXPECT_EQ(count_color(render_for_cell(minor, cell, 128), Palette{}.background), 128u * 128u);
  EXPECT_GT(count_color(render_for_cell(minor, cell, 128, {}, std::nullopt), Rgb{224, 224, 224}), 0u);
}

TEST(Png, RoundTripAndFilename) {
  Rng rng(3);
  const auto g = build_graph(mgtest::random_streets(rng, 10.0, 50.0, 0.02));
  const auto img = render_crhd(g, {10.01, 50.01}, 1000, 96);
  const auto back = decode_png(encode_png(img));
  EXPECT_EQ(back.size, 96);
  EXPECT_EQ(back.pixels, img.pixels);
  EXPECT_EQ(encode_png(img), encode_png(img));
  EXPECT_EQ(crhd_filename({22800, 4798}), "crhd_22800_4798.png");
  EXPECT_THROW(decode_png({1, 2, 3}), FormatError);
}
