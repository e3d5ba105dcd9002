#pragma once

// Geographic inputs: OSM XML / GeoJSON extracts, the 30 arc-second grid
// aligned with WorldPop rasters, point assignment and raster zonal means.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "json.hpp"
#include "morphogrid/csv.hpp"
#include "morphogrid/error.hpp"
#include "morphogrid/geo.hpp"
#include "morphogrid/planar.hpp"

namespace morphogrid {

using Ring = std::vector<GeoPoint>;

struct RawWay {
  std::vector<GeoPoint> line;
  std::string highway;
  friend bool operator==(const RawWay&, const RawWay&) = default;
};

struct LandUse {
  Ring ring;
  std::string category;
  friend bool operator==(const LandUse&, const LandUse&) = default;
};

struct UrbanExtract {
  std::vector<RawWay> roads;
  std::vector<Ring> buildings;
  std::vector<LandUse> landuse;
  std::map<std::string, std::vector<GeoPoint>> points;
  // Ways dropped because they referenced missing nodes.
  std::size_t dropped_ways = 0;

  bool same_geometry(const UrbanExtract& o) const {
    return roads == o.roads && buildings == o.buildings && landuse == o.landuse &&
           points == o.points;
  }
};

// Grid pitch: 30 arc-seconds.
inline constexpr double kCellDeg = 1.0 / 120.0;
inline constexpr int kCellsPerDeg = 120;

struct CellId {
  std::int64_t col = 0;
  std::int64_t row = 0;
  friend auto operator<=>(const CellId&, const CellId&) = default;
};

struct GridCell {
  std::int64_t col = 0;
  std::int64_t row = 0;
  Bbox bbox;
  double area_km2 = 0.0;

  CellId id() const { return {col, row}; }
  GeoPoint centroid() const {
    return {0.5 * (bbox.west + bbox.east), 0.5 * (bbox.south + bbox.north)};
  }
};

struct RasterGrid {
  GeoPoint origin;  // upper-left corner
  double cell_size = 0.0;
  std::int64_t ncols = 0;
  std::int64_t nrows = 0;
  double nodata = -9999.0;
  std::vector<double> values;  // row-major, row 0 at the top

  double at(std::int64_t row, std::int64_t col) const {
    return values[static_cast<std::size_t>(row * ncols + col)];
  }
};

// ---------------------------------------------------------------------------
// Grid system

namespace detail {

// x * 120 snapped to the nearest integer when within rounding noise.
inline double grid_units(double x) {
  const double v = x * kCellsPerDeg;
  const double r = std::round(v);
  return std::abs(v - r) < 1e-7 ? r : v;
}

}  // namespace detail

inline GridCell make_cell(std::int64_t col, std::int64_t row) {
  GridCell c;
  c.col = col;
  c.row = row;
  c.bbox.west = static_cast<double>(col) / kCellsPerDeg - 180.0;
  c.bbox.east = static_cast<double>(col + 1) / kCellsPerDeg - 180.0;
  c.bbox.north = 90.0 - static_cast<double>(row) / kCellsPerDeg;
  c.bbox.south = 90.0 - static_cast<double>(row + 1) / kCellsPerDeg;
  c.area_km2 = geo::rect_area_m2(c.bbox.west, c.bbox.south, c.bbox.east, c.bbox.north) / 1e6;
  return c;
}

// Cell containing p; west and south edges are inclusive.
inline CellId cell_of(const GeoPoint& p) {
  const double u = detail::grid_units(p.lon + 180.0);
  const double v = detail::grid_units(90.0 - p.lat);
  return {static_cast<std::int64_t>(std::floor(u)),
          static_cast<std::int64_t>(std::ceil(v)) - 1};
}

// All grid cells whose interior meets bbox, in row-major order. A degenerate
// bbox yields the cell containing it.
inline std::vector<GridCell> make_grid(const Bbox& b) {
  if (!(b.west <= b.east) || !(b.south <= b.north))
    throw ArgumentError("make_grid: inverted bbox");
  const CellId sw = cell_of({b.west, b.south});
  const double uw = detail::grid_units(b.west + 180.0), ue = detail::grid_units(b.east + 180.0);
  const double vn = detail::grid_units(90.0 - b.north), vs = detail::grid_units(90.0 - b.south);
  std::int64_t c0 = static_cast<std::int64_t>(std::floor(uw));
  std::int64_t c1 = static_cast<std::int64_t>(std::ceil(ue)) - 1;
  std::int64_t r0 = static_cast<std::int64_t>(std::floor(vn));
  std::int64_t r1 = static_cast<std::int64_t>(std::ceil(vs)) - 1;
  if (c1 < c0) c0 = c1 = sw.col;
  if (r1 < r0) r0 = r1 = sw.row;
  std::vector<GridCell> cells;
  cells.reserve(static_cast<std::size_t>((c1 - c0 + 1) * (r1 - r0 + 1)));
  for (std::int64_t r = r0; r <= r1; ++r)
    for (std::int64_t c = c0; c <= c1; ++c) cells.push_back(make_cell(c, r));
  return cells;
}

struct PointAssignment {
  std::map<CellId, std::vector<std::size_t>> buckets;
  std::size_t dropped = 0;
};

inline PointAssignment assign_points(const std::vector<GeoPoint>& points,
                                     const std::vector<GridCell>& cells) {
  PointAssignment out;
  std::map<CellId, bool> known;
  for (const auto& c : cells) known[c.id()] = true;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const CellId id = cell_of(points[i]);
    if (known.contains(id))
      out.buckets[id].push_back(i);
    else
      ++out.dropped;
  }
  return out;
}

// Area-weighted mean of raster values over the cell, ignoring nodata. Overlap
// weights are planar in degrees, which is exact to well below 1e-6 relative
// at the 30" scale.
inline std::optional<double> zonal_mean(const RasterGrid& r, const GridCell& cell) {
  if (r.cell_size <= 0.0 || r.ncols <= 0 || r.nrows <= 0) return std::nullopt;
  const Bbox& b = cell.bbox;
  const double cs = r.cell_size;
  const auto c0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor((b.west - r.origin.lon) / cs)));
  const auto c1 = std::min<std::int64_t>(r.ncols - 1, static_cast<std::int64_t>(std::floor((b.east - r.origin.lon) / cs)));
  const auto r0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor((r.origin.lat - b.north) / cs)));
  const auto r1 = std::min<std::int64_t>(r.nrows - 1, static_cast<std::int64_t>(std::floor((r.origin.lat - b.south) / cs)));
  double wsum = 0.0, vsum = 0.0;
  for (std::int64_t i = r0; i <= r1; ++i) {
    const double north = r.origin.lat - static_cast<double>(i) * cs;
    const double south = north - cs;
    const double h = std::min(north, b.north) - std::max(south, b.south);
    if (h <= 0.0) continue;
    for (std::int64_t j = c0; j <= c1; ++j) {
      const double west = r.origin.lon + static_cast<double>(j) * cs;
      const double w = std::min(west + cs, b.east) - std::max(west, b.west);
      if (w <= 0.0) continue;
      const double v = r.at(i, j);
      if (v == r.nodata || std::isnan(v)) continue;
      wsum += w * h;
      vsum += w * h * v;
    }
  }
  if (wsum <= 0.0) return std::nullopt;
  return vsum / wsum;
}

inline std::vector<GridCell> filter_built(const std::vector<GridCell>& cells,
                                          const std::vector<Ring>& buildings) {
  std::vector<GridCell> out;
  for (const auto& c : cells) {
    for (const auto& ring : buildings) {
      if (planar::ring_intersects(ring, c.bbox) && planar::overlaps_interior(ring, c.bbox)) {
        out.push_back(c);
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// ESRI ASCII grid and per-cell CSV sources

inline RasterGrid read_ascii_grid(std::istream& in) {
  RasterGrid r;
  std::optional<double> xll, yll;
  bool x_center = false, y_center = false;
  std::string key;
  for (int i = 0; i < 6; ++i) {
    const auto pos = in.tellg();
    if (!(in >> key)) throw FormatError("ASCII grid: truncated header");
    std::string lower = key;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (!std::isalpha(static_cast<unsigned char>(lower[0]))) {
      in.seekg(pos);
      break;
    }
    double v;
    if (!(in >> v)) throw FormatError("ASCII grid: bad value for " + key);
    if (lower == "ncols") r.ncols = static_cast<std::int64_t>(v);
    else if (lower == "nrows") r.nrows = static_cast<std::int64_t>(v);
    else if (lower == "xllcorner") xll = v;
    else if (lower == "xllcenter") xll = v, x_center = true;
    else if (lower == "yllcorner") yll = v;
    else if (lower == "yllcenter") yll = v, y_center = true;
    else if (lower == "cellsize") r.cell_size = v;
    else if (lower == "nodata_value") r.nodata = v;
    else throw FormatError("ASCII grid: unknown header key " + key);
  }
  if (r.ncols <= 0 || r.nrows <= 0 || r.cell_size <= 0.0 || !xll || !yll)
    throw FormatError("ASCII grid: incomplete header");
  const double west = x_center ? *xll - r.cell_size / 2 : *xll;
  const double south = y_center ? *yll - r.cell_size / 2 : *yll;
  r.origin = {west, south + static_cast<double>(r.nrows) * r.cell_size};
  r.values.resize(static_cast<std::size_t>(r.ncols * r.nrows));
  for (auto& v : r.values)
    if (!(in >> v)) throw FormatError("ASCII grid: expected " + std::to_string(r.values.size()) + " values");
  return r;
}

inline RasterGrid read_ascii_grid_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  return read_ascii_grid(in);
}

inline std::map<CellId, double> read_cell_values(const csv::Table& t) {
  const auto ic = t.column("cell_col"), ir = t.column("cell_row"), iv = t.column("value");
  std::map<CellId, double> out;
  for (const auto& row : t.rows) {
    auto v = csv::parse_double(row[iv]);
    if (v) out[{csv::parse_int(row[ic]), csv::parse_int(row[ir])}] = *v;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Extract parsing

namespace detail {

inline bool keep_line(const std::vector<GeoPoint>& line, const std::optional<Bbox>& bbox) {
  return !bbox || planar::polyline_intersects(line, *bbox);
}

inline bool keep_ring(const Ring& ring, const std::optional<Bbox>& bbox) {
  return !bbox || planar::ring_intersects(ring, *bbox);
}

inline void close_ring(Ring& ring) {
  if (!ring.empty() && !(ring.front() == ring.back())) ring.push_back(ring.front());
}

inline bool is_poi_tag(const std::string& k) {
  return k == "amenity" || k == "shop" || k == "tourism" || k == "leisure" || k == "office";
}

inline UrbanExtract parse_osm(std::string_view doc, const std::optional<Bbox>& bbox) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in{std::string(doc)};
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError("OSM XML: " + e.message(), e.line(), 0);
  }
  const auto osm = tree.get_child_optional("osm");
  if (!osm) throw FormatError("OSM XML: missing <osm> root");

  UrbanExtract out;
  std::unordered_map<std::string, GeoPoint> nodes;
  for (const auto& [name, child] : *osm) {
    if (name != "node") continue;
    const auto id = child.get<std::string>("<xmlattr>.id", "");
    auto coord = [&](const char* attr) {
      const auto v = csv::parse_double(child.get<std::string>(std::string("<xmlattr>.") + attr, ""));
      if (!v) throw FormatError("OSM XML: node " + id + " has a missing or non-numeric " + attr);
      return *v;
    };
    GeoPoint p{coord("lon"), coord("lat")};
    if (!valid(p)) throw FormatError("OSM XML: node " + id + " has out-of-range coordinates");
    nodes[id] = p;
    std::string kind;
    bool poi = false;
    for (const auto& [tname, tag] : child) {
      if (tname != "tag") continue;
      const auto k = tag.get<std::string>("<xmlattr>.k", "");
      if (k == "kind") kind = tag.get<std::string>("<xmlattr>.v", "");
      if (is_poi_tag(k)) poi = true;
    }
    if (kind.empty() && poi) kind = "poi";
    if (!kind.empty() && (!bbox || planar::contains(*bbox, p))) out.points[kind].push_back(p);
  }
  for (const auto& [name, child] : *osm) {
    if (name != "way") continue;
    std::vector<GeoPoint> line;
    bool missing = false;
    std::string highway, landuse;
    bool building = false;
    for (const auto& [cname, c] : child) {
      if (cname == "nd") {
        auto it = nodes.find(c.get<std::string>("<xmlattr>.ref", ""));
        if (it == nodes.end())
          missing = true;
        else
          line.push_back(it->second);
      } else if (cname == "tag") {
        const auto k = c.get<std::string>("<xmlattr>.k", "");
        const auto v = c.get<std::string>("<xmlattr>.v", "");
        if (k == "highway") highway = v;
        else if (k == "landuse") landuse = v;
        else if (k == "building" && v != "no") building = true;
      }
    }
    if (missing) {
      ++out.dropped_ways;
      continue;
    }
    if (!highway.empty() && line.size() >= 2 && keep_line(line, bbox))
      out.roads.push_back({line, highway});
    const bool closed = line.size() >= 4 && line.front() == line.back();
    if (closed && building && keep_ring(line, bbox)) out.buildings.push_back(line);
    if (closed && !landuse.empty() && keep_ring(line, bbox)) out.landuse.push_back({line, landuse});
  }
  return out;
}

inline GeoPoint json_point(const nlohmann::json& j) {
  if (!j.is_array() || j.size() < 2) throw FormatError("GeoJSON: bad position");
  GeoPoint p{j[0].get<double>(), j[1].get<double>()};
  if (!valid(p)) throw FormatError("GeoJSON: position out of range");
  return p;
}

inline std::vector<GeoPoint> json_line(const nlohmann::json& j) {
  std::vector<GeoPoint> out;
  for (const auto& p : j) out.push_back(json_point(p));
  return out;
}

inline UrbanExtract parse_geojson(std::string_view doc, const std::optional<Bbox>& bbox) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(doc);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t off = e.byte > 0 ? e.byte - 1 : 0;
    const auto line = 1 + static_cast<std::size_t>(
                              std::count(doc.begin(), doc.begin() + std::min(off, doc.size()), '\n'));
    throw ParseError("GeoJSON: malformed document", line, off);
  }
  if (!root.is_object() || root.value("type", "") != "FeatureCollection")
    throw FormatError("GeoJSON: expected a FeatureCollection");
  UrbanExtract out;
  for (const auto& f : root.value("features", nlohmann::json::array())) {
    const auto& geom = f.value("geometry", nlohmann::json());
    if (!geom.is_object()) continue;
    const auto props = f.value("properties", nlohmann::json::object());
    const std::string type = geom.value("type", "");
    const auto& coords = geom.value("coordinates", nlohmann::json::array());
    auto prop = [&](const char* key) -> std::string {
      if (!props.is_object() || !props.contains(key)) return {};
      const auto& v = props[key];
      return v.is_string() ? v.get<std::string>() : v.dump();
    };
    if (type == "LineString" || type == "MultiLineString") {
      const std::string hw = prop("highway");
      if (hw.empty()) continue;
      std::vector<nlohmann::json> parts;
      if (type == "LineString") parts.push_back(coords);
      else parts.assign(coords.begin(), coords.end());
      for (const auto& part : parts) {
        auto line = json_line(part);
        if (line.size() >= 2 && keep_line(line, bbox)) out.roads.push_back({std::move(line), hw});
      }
    } else if (type == "Polygon" || type == "MultiPolygon") {
      std::vector<nlohmann::json> polys;
      if (type == "Polygon") polys.push_back(coords);
      else polys.assign(coords.begin(), coords.end());
      const std::string lu = prop("landuse");
      for (const auto& poly : polys) {
        if (poly.empty()) continue;
        Ring ring = json_line(poly[0]);
        close_ring(ring);
        if (ring.size() < 4 || !keep_ring(ring, bbox)) continue;
        if (!lu.empty()) out.landuse.push_back({std::move(ring), lu});
        else out.buildings.push_back(std::move(ring));
      }
    } else if (type == "Point" || type == "MultiPoint") {
      const std::string kind = prop("kind");
      if (kind.empty()) continue;
      std::vector<GeoPoint> pts;
      if (type == "Point") pts.push_back(json_point(coords));
      else pts = json_line(coords);
      for (const auto& p : pts)
        if (!bbox || planar::contains(*bbox, p)) out.points[kind].push_back(p);
    }
  }
  return out;
}

}  // namespace detail

// Parses an OSM XML or GeoJSON document, chosen by its first significant
// character. With a bbox, only geometries intersecting it are kept.
inline UrbanExtract parse_extract(std::string_view doc, const std::optional<Bbox>& bbox = std::nullopt) {
  const auto first = doc.find_first_not_of(" \t\r\n\xEF\xBB\xBF");
  if (first == std::string_view::npos) throw FormatError("empty document");
  if (doc[first] == '<') return detail::parse_osm(doc, bbox);
  if (doc[first] == '{') return detail::parse_geojson(doc, bbox);
  throw FormatError("unrecognized document format");
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline UrbanExtract parse_extract_file(const std::string& path,
                                       const std::optional<Bbox>& bbox = std::nullopt) {
  return parse_extract(read_text_file(path), bbox);
}

// Appends every geometry of `more` to `into`.
inline void merge_into(UrbanExtract& into, UrbanExtract more) {
  for (auto& r : more.roads) into.roads.push_back(std::move(r));
  for (auto& b : more.buildings) into.buildings.push_back(std::move(b));
  for (auto& l : more.landuse) into.landuse.push_back(std::move(l));
  for (auto& [k, v] : more.points) into.points[k].insert(into.points[k].end(), v.begin(), v.end());
  into.dropped_ways += more.dropped_ways;
}

// Serializes an extract as a GeoJSON FeatureCollection that parse_extract
// reads back to an equal extract.
inline std::string to_geojson(const UrbanExtract& e) {
  using nlohmann::json;
  auto pos = [](const GeoPoint& p) { return json::array({p.lon, p.lat}); };
  auto line = [&](const std::vector<GeoPoint>& l) {
    json a = json::array();
    for (const auto& p : l) a.push_back(pos(p));
    return a;
  };
  json features = json::array();
  for (const auto& r : e.roads)
    features.push_back({{"type", "Feature"},
                        {"properties", {{"highway", r.highway}}},
                        {"geometry", {{"type", "LineString"}, {"coordinates", line(r.line)}}}});
  for (const auto& b : e.buildings)
    features.push_back({{"type", "Feature"},
                        {"properties", {{"building", "yes"}}},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", json::array({line(b)})}}}});
  for (const auto& l : e.landuse)
    features.push_back({{"type", "Feature"},
                        {"properties", {{"landuse", l.category}}},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", json::array({line(l.ring)})}}}});
  for (const auto& [kind, pts] : e.points)
    for (const auto& p : pts)
      features.push_back({{"type", "Feature"},
                          {"properties", {{"kind", kind}}},
                          {"geometry", {{"type", "Point"}, {"coordinates", pos(p)}}}});
  json root = {{"type", "FeatureCollection"}, {"features", features}};
  return root.dump();
}

}  // namespace morphogrid
