#pragma once

// Geodesy helpers: great-circle lengths, ellipsoidal areas and the local
// projections used for rendering and planar topology.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace morphogrid {

struct GeoPoint {
  double lon = 0.0;
  double lat = 0.0;
  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

inline bool valid(const GeoPoint& p) {
  return p.lon >= -180.0 && p.lon <= 180.0 && p.lat >= -90.0 && p.lat <= 90.0;
}

// Local planar coordinates in meters (x east, y north).
struct Xy {
  double x = 0.0;
  double y = 0.0;
};

namespace geo {

inline constexpr double kEarthRadiusM = 6371000.0;
inline constexpr double kWgs84A = 6378137.0;
inline constexpr double kWgs84F = 1.0 / 298.257223563;

inline constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline constexpr double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

inline double haversine_m(const GeoPoint& a, const GeoPoint& b) {
  const double p1 = deg2rad(a.lat), p2 = deg2rad(b.lat);
  const double dp = p2 - p1;
  const double dl = deg2rad(b.lon - a.lon);
  const double s = std::sin(dp / 2), t = std::sin(dl / 2);
  const double h = s * s + std::cos(p1) * std::cos(p2) * t * t;
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

inline double polyline_length_m(std::span<const GeoPoint> line) {
  double total = 0.0;
  for (std::size_t i = 1; i < line.size(); ++i) total += haversine_m(line[i - 1], line[i]);
  return total;
}

namespace detail {

inline double ecc2() { return kWgs84F * (2.0 - kWgs84F); }

// Authalic function q(phi) of the ellipsoid.
inline double authalic_q(double phi) {
  const double e2 = ecc2(), e = std::sqrt(e2);
  const double s = std::sin(phi);
  return (1.0 - e2) * (s / (1.0 - e2 * s * s) - std::log((1.0 - e * s) / (1.0 + e * s)) / (2.0 * e));
}

inline double authalic_qp() { return authalic_q(std::numbers::pi / 2); }

}  // namespace detail

// Radius of the sphere with the WGS84 ellipsoid's surface area.
inline double authalic_radius_m() { return kWgs84A * std::sqrt(detail::authalic_qp() / 2.0); }

// sin of the authalic latitude for a geodetic latitude in degrees.
inline double sin_authalic(double lat_deg) {
  return detail::authalic_q(deg2rad(lat_deg)) / detail::authalic_qp();
}

// Area of a ring on the WGS84 ellipsoid (m^2, unsigned). The ring is mapped to
// the cylindrical equal-area projection on the authalic sphere and measured by
// the shoelace formula there; a latitude/longitude rectangle yields the exact
// ellipsoidal quadrangle area.
inline double ring_area_m2(std::span<const GeoPoint> ring) {
  if (ring.size() < 3) return 0.0;
  const double r = authalic_radius_m();
  double sum = 0.0;
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const GeoPoint& a = ring[i];
    const GeoPoint& b = ring[(i + 1) % n];
    sum += deg2rad(b.lon - a.lon) * (sin_authalic(a.lat) + sin_authalic(b.lat));
  }
  return std::abs(sum) * r * r / 2.0;
}

// Area of the lon/lat rectangle [west,east] x [south,north] in m^2.
inline double rect_area_m2(double west, double south, double east, double north) {
  const double r = authalic_radius_m();
  return r * r * deg2rad(east - west) * (sin_authalic(north) - sin_authalic(south));
}

// Azimuthal equidistant projection on the sphere of radius kEarthRadiusM.
inline Xy aeqd_forward(const GeoPoint& center, const GeoPoint& p) {
  const double p0 = deg2rad(center.lat), p1 = deg2rad(p.lat);
  const double dl = deg2rad(p.lon - center.lon);
  const double cosc = std::sin(p0) * std::sin(p1) + std::cos(p0) * std::cos(p1) * std::cos(dl);
  const double c = std::acos(std::clamp(cosc, -1.0, 1.0));
  if (c == 0.0) return {0.0, 0.0};
  const double k = c / std::sin(c);
  const double x = k * std::cos(p1) * std::sin(dl);
  const double y = k * (std::cos(p0) * std::sin(p1) - std::sin(p0) * std::cos(p1) * std::cos(dl));
  return {kEarthRadiusM * x, kEarthRadiusM * y};
}

inline GeoPoint aeqd_inverse(const GeoPoint& center, const Xy& q) {
  const double x = q.x / kEarthRadiusM, y = q.y / kEarthRadiusM;
  const double c = std::hypot(x, y);
  if (c == 0.0) return center;
  const double p0 = deg2rad(center.lat), l0 = deg2rad(center.lon);
  const double sc = std::sin(c), cc = std::cos(c);
  const double lat = std::asin(std::clamp(cc * std::sin(p0) + y * sc * std::cos(p0) / c, -1.0, 1.0));
  const double lon = l0 + std::atan2(x * sc, c * std::cos(p0) * cc - y * std::sin(p0) * sc);
  return {rad2deg(lon), rad2deg(lat)};
}

// Undirected bearing in [0, 180) degrees of the segment a-b, measured in the
// local east/north frame at the segment midpoint. Reversing the segment gives
// the same value.
inline double undirected_bearing_deg(const GeoPoint& a, const GeoPoint& b) {
  const double mid = deg2rad(0.5 * (a.lat + b.lat));
  double dx = deg2rad(b.lon - a.lon) * std::cos(mid);
  double dy = deg2rad(b.lat - a.lat);
  if (dy < 0.0) {
    dx = -dx;
    dy = -dy;
  }
  double deg = rad2deg(std::atan2(dx, dy));
  // deg now in (-90, 90]; fold to [0, 180)
  if (deg < 0.0) deg += 180.0;
  if (deg >= 180.0) deg -= 180.0;
  return deg;
}

}  // namespace geo
}  // namespace morphogrid
