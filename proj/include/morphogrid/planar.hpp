#pragma once

// Thin adapter over Boost.Geometry for lon/lat polygons treated as planar
// shapes. Topological predicates and clipping run here; areas are measured
// on the ellipsoid through geo::ring_area_m2.

#include <span>
#include <vector>

#include <boost/geometry.hpp>
#include <boost/geometry/geometries/box.hpp>
#include <boost/geometry/geometries/multi_polygon.hpp>
#include <boost/geometry/geometries/point_xy.hpp>
#include <boost/geometry/geometries/polygon.hpp>

#include "morphogrid/geo.hpp"

namespace morphogrid {

struct Bbox {
  double west = 0.0;
  double south = 0.0;
  double east = 0.0;
  double north = 0.0;
  friend bool operator==(const Bbox&, const Bbox&) = default;
};

namespace planar {

namespace bg = boost::geometry;
using Point = bg::model::d2::point_xy<double>;
using Box = bg::model::box<Point>;
using Polygon = bg::model::polygon<Point>;
using MultiPolygon = bg::model::multi_polygon<Polygon>;

inline Box to_box(const Bbox& b) { return Box(Point(b.west, b.south), Point(b.east, b.north)); }

inline Polygon box_polygon(const Bbox& b) {
  Polygon poly;
  bg::convert(to_box(b), poly);
  return poly;
}

inline Polygon to_polygon(std::span<const GeoPoint> ring) {
  Polygon poly;
  for (const auto& p : ring) bg::append(poly.outer(), Point(p.lon, p.lat));
  bg::correct(poly);
  return poly;
}

inline std::vector<GeoPoint> to_ring(const Polygon::ring_type& r) {
  std::vector<GeoPoint> out;
  out.reserve(r.size());
  for (const auto& p : r) out.push_back({p.x(), p.y()});
  return out;
}

// Ellipsoidal area (m^2) of a polygon set, holes subtracted.
inline double area_m2(const MultiPolygon& mp) {
  double total = 0.0;
  for (const auto& poly : mp) {
    total += geo::ring_area_m2(to_ring(poly.outer()));
    for (const auto& hole : poly.inners()) total -= geo::ring_area_m2(to_ring(hole));
  }
  return total;
}

inline MultiPolygon clip(const MultiPolygon& mp, const Bbox& b) {
  MultiPolygon out;
  bg::intersection(mp, box_polygon(b), out);
  return out;
}

inline MultiPolygon union_all(std::span<const Polygon> polys) {
  MultiPolygon acc;
  for (const auto& p : polys) {
    MultiPolygon next;
    bg::union_(acc, p, next);
    acc = std::move(next);
  }
  return acc;
}

// True when the interiors of the ring and the box overlap (touching edges do
// not count).
inline bool overlaps_interior(std::span<const GeoPoint> ring, const Bbox& b) {
  const Polygon poly = to_polygon(ring);
  const Polygon box = box_polygon(b);
  return bg::intersects(poly, box) && !bg::touches(poly, box);
}

inline bool contains(const Bbox& b, const GeoPoint& p) {
  return p.lon >= b.west && p.lon <= b.east && p.lat >= b.south && p.lat <= b.north;
}

// Liang-Barsky clip of segment a-b to box b (closed). Returns false when the
// segment misses the box; otherwise t0 <= t1 are the parameters of the kept
// sub-segment.
inline bool clip_segment(const GeoPoint& a, const GeoPoint& c, const Bbox& b, double& t0,
                         double& t1) {
  t0 = 0.0;
  t1 = 1.0;
  const double dx = c.lon - a.lon, dy = c.lat - a.lat;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.lon - b.west, b.east - a.lon, a.lat - b.south, b.north - a.lat};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
    } else {
      const double t = q[i] / p[i];
      if (p[i] < 0.0) {
        if (t > t1) return false;
        if (t > t0) t0 = t;
      } else {
        if (t < t0) return false;
        if (t < t1) t1 = t;
      }
    }
  }
  return true;
}

inline GeoPoint lerp(const GeoPoint& a, const GeoPoint& b, double t) {
  if (t == 0.0) return a;
  if (t == 1.0) return b;
  return {a.lon + (b.lon - a.lon) * t, a.lat + (b.lat - a.lat) * t};
}

inline bool point_in_ring(std::span<const GeoPoint> ring, const GeoPoint& p) {
  bool inside = false;
  const std::size_t n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& a = ring[i];
    const auto& b = ring[j];
    if ((a.lat > p.lat) != (b.lat > p.lat) &&
        p.lon < (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon)
      inside = !inside;
  }
  return inside;
}

inline bool polyline_intersects(std::span<const GeoPoint> line, const Bbox& b) {
  if (line.size() == 1) return contains(b, line[0]);
  double t0, t1;
  for (std::size_t i = 1; i < line.size(); ++i)
    if (clip_segment(line[i - 1], line[i], b, t0, t1)) return true;
  return false;
}

inline bool ring_intersects(std::span<const GeoPoint> ring, const Bbox& b) {
  if (polyline_intersects(ring, b)) return true;
  return point_in_ring(ring, {b.west, b.south});
}

}  // namespace planar
}  // namespace morphogrid
