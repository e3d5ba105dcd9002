#pragma once

// Colored Road Hierarchy Diagrams: each tier drawn with its own color and
// stroke width, hard-edged, so every pixel is either background or exactly
// one palette color.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <png.h>

#include "morphogrid/error.hpp"
#include "morphogrid/geo.hpp"
#include "morphogrid/geodata.hpp"
#include "morphogrid/road_graph.hpp"

namespace morphogrid {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// Rec. 709 relative luminance on 8-bit values.
inline double lightness(const Rgb& c) { return 0.2126 * c.r + 0.7152 * c.g + 0.0722 * c.b; }

struct TierStyle {
  Rgb color;
  int width = 1;
};

struct Palette {
  // indexed by RoadTier
  std::array<TierStyle, kTierCount> tiers{{
      {{224, 224, 224}, 1},  // minor
      {{120, 144, 156}, 2},  // tertiary
      {{239, 108, 0}, 3},    // secondary
      {{198, 40, 40}, 4},    // primary
      {{0, 0, 0}, 5},        // motorway
  }};
  Rgb background{255, 255, 255};

  const TierStyle& style(RoadTier t) const { return tiers[static_cast<std::size_t>(t)]; }

  // Lightness strictly rises and width strictly falls from motorway to minor.
  bool well_ordered() const {
    for (int i = 0; i + 1 < kTierCount; ++i) {
      if (!(lightness(tiers[i].color) > lightness(tiers[i + 1].color))) return false;
      if (!(tiers[i].width < tiers[i + 1].width)) return false;
    }
    return tiers[0].width >= 1;
  }
};

inline constexpr int kDefaultCrhdSize = 512;
inline constexpr std::uint8_t kDefaultTruncateFloor = 200;

struct CrhdImage {
  int size = 0;
  std::vector<std::uint8_t> pixels;  // RGB, row-major, row 0 at the top
  GeoPoint center;
  double radius_m = 0.0;

  Rgb at(int x, int y) const {
    const auto i = 3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(size) + static_cast<std::size_t>(x));
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
  void set(int x, int y, const Rgb& c) {
    const auto i = 3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(size) + static_cast<std::size_t>(x));
    pixels[i] = c.r;
    pixels[i + 1] = c.g;
    pixels[i + 2] = c.b;
  }
};

namespace detail {

// Thick Bresenham: every centerline pixel is widened into a run of `width`
// pixels perpendicular to the major axis.
inline void draw_thick_line(CrhdImage& img, int x0, int y0, int x1, int y1, int width,
                            const Rgb& color) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  const bool x_major = dx >= -dy;
  const int lo = -(width - 1) / 2, hi = width / 2;
  auto plot = [&](int x, int y) {
    for (int k = lo; k <= hi; ++k) {
      const int px = x_major ? x : x + k;
      const int py = x_major ? y + k : y;
      if (px >= 0 && py >= 0 && px < img.size && py < img.size) img.set(px, py, color);
    }
  };
  int err = dx + dy;
  for (;;) {
    plot(x0, y0);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace detail

inline CrhdImage blank_crhd(int size_px, const GeoPoint& center, double radius_m, const Rgb& bg) {
  CrhdImage img;
  img.size = size_px;
  img.center = center;
  img.radius_m = radius_m;
  img.pixels.resize(3 * static_cast<std::size_t>(size_px) * static_cast<std::size_t>(size_px));
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    img.pixels[i] = bg.r;
    img.pixels[i + 1] = bg.g;
    img.pixels[i + 2] = bg.b;
  }
  return img;
}

// Renders the network in an azimuthal equidistant frame about `center`,
// covering [-radius, radius] meters on both axes. Tiers are drawn from minor
// up to motorway so higher tiers end on top.
inline CrhdImage render_crhd(const RoadGraph& g, const GeoPoint& center, double radius_m,
                             int size_px = kDefaultCrhdSize, const Palette& palette = {}) {
  if (!(radius_m > 0.0)) throw ArgumentError("render_crhd: radius must be > 0");
  if (size_px < 64) throw ArgumentError("render_crhd: size_px must be >= 64");
  CrhdImage img = blank_crhd(size_px, center, radius_m, palette.background);
  const double scale = size_px / (2.0 * radius_m);
  const double margin = 8.0;
  const Bbox frame{-margin, -margin, size_px + margin, size_px + margin};
  for (int t = 0; t < kTierCount; ++t) {
    const auto tier = static_cast<RoadTier>(t);
    const TierStyle& st = palette.style(tier);
    for (const auto& e : g.edges) {
      if (e.tier != tier) continue;
      GeoPoint prev{};
      for (std::size_t i = 0; i < e.polyline.size(); ++i) {
        const Xy q = geo::aeqd_forward(center, e.polyline[i]);
        const GeoPoint cur{(q.x + radius_m) * scale, (radius_m - q.y) * scale};
        if (i > 0) {
          double t0, t1;
          if (planar::clip_segment(prev, cur, frame, t0, t1)) {
            const GeoPoint a = planar::lerp(prev, cur, t0), b = planar::lerp(prev, cur, t1);
            detail::draw_thick_line(img, static_cast<int>(std::floor(a.lon)), static_cast<int>(std::floor(a.lat)),
                                    static_cast<int>(std::floor(b.lon)), static_cast<int>(std::floor(b.lat)),
                                    st.width, st.color);
          }
        }
        prev = cur;
      }
    }
  }
  return img;
}

// Erases light strokes: any non-background pixel whose channels are all
// >= rgb_floor becomes background.
inline CrhdImage truncate_minor(CrhdImage img, std::uint8_t rgb_floor = kDefaultTruncateFloor,
                                const Rgb& background = Palette{}.background) {
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    const Rgb c{img.pixels[i], img.pixels[i + 1], img.pixels[i + 2]};
    if (c == background) continue;
    if (std::min({c.r, c.g, c.b}) >= rgb_floor) {
      img.pixels[i] = background.r;
      img.pixels[i + 1] = background.g;
      img.pixels[i + 2] = background.b;
    }
  }
  return img;
}

// CRHD radius for a grid cell: twice the cell's north-south half extent, so
// the diagram is concentric with the cell at double its extent.
inline double crhd_radius_for_cell(const GridCell& cell) {
  const double half_height_m =
      geo::deg2rad(cell.bbox.north - cell.bbox.south) * geo::kEarthRadiusM / 2.0;
  return 2.0 * half_height_m;
}

inline CrhdImage render_for_cell(const RoadGraph& g, const GridCell& cell,
                                 int size_px = kDefaultCrhdSize, const Palette& palette = {},
                                 std::optional<std::uint8_t> truncate_floor = kDefaultTruncateFloor) {
  CrhdImage img = render_crhd(g, cell.centroid(), crhd_radius_for_cell(cell), size_px, palette);
  if (truncate_floor) img = truncate_minor(std::move(img), *truncate_floor, palette.background);
  return img;
}

inline CrhdImage render_for_cell(const UrbanExtract& extract, const GridCell& cell,
                                 int size_px = kDefaultCrhdSize, const Palette& palette = {},
                                 std::optional<std::uint8_t> truncate_floor = kDefaultTruncateFloor) {
  return render_for_cell(build_graph(extract.roads), cell, size_px, palette, truncate_floor);
}

// ---------------------------------------------------------------------------
// PNG I/O (8-bit RGB, no alpha)

inline std::vector<std::uint8_t> encode_png(const CrhdImage& img) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.size);
  image.height = static_cast<png_uint_32>(img.size);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t bytes = 0;
  if (!png_image_write_to_memory(&image, nullptr, &bytes, 0, img.pixels.data(), 0, nullptr))
    throw Error(std::string("PNG encode failed: ") + image.message);
  std::vector<std::uint8_t> out(bytes);
  if (!png_image_write_to_memory(&image, out.data(), &bytes, 0, img.pixels.data(), 0, nullptr))
    throw Error(std::string("PNG encode failed: ") + image.message);
  out.resize(bytes);
  return out;
}

inline CrhdImage decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw FormatError(std::string("PNG decode failed: ") + image.message);
  image.format = PNG_FORMAT_RGB;
  if (image.width != image.height) {
    png_image_free(&image);
    throw FormatError("PNG: CRHD must be square");
  }
  CrhdImage img;
  img.size = static_cast<int>(image.width);
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr))
    throw FormatError(std::string("PNG decode failed: ") + image.message);
  return img;
}

inline void write_png_file(const std::string& path, const CrhdImage& img) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline CrhdImage read_png_file(const std::string& path) {
  const std::string s = read_text_file(path);
  return decode_png(std::vector<std::uint8_t>(s.begin(), s.end()));
}

inline std::string crhd_filename(const CellId& id) {
  return "crhd_" + std::to_string(id.col) + "_" + std::to_string(id.row) + ".png";
}

}  // namespace morphogrid
