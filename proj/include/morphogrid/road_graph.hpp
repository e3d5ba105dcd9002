#pragma once

// Tiered road network graph: node merging, lengths, orientation histogram
// and blocks (bounded faces of the planar embedding).

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "morphogrid/geo.hpp"
#include "morphogrid/geodata.hpp"
#include "morphogrid/planar.hpp"

namespace morphogrid {

enum class RoadTier : int { Minor = 0, Tertiary = 1, Secondary = 2, Primary = 3, Motorway = 4 };

inline constexpr int kTierCount = 5;

inline std::string_view tier_name(RoadTier t) {
  switch (t) {
    case RoadTier::Motorway: return "motorway";
    case RoadTier::Primary: return "primary";
    case RoadTier::Secondary: return "secondary";
    case RoadTier::Tertiary: return "tertiary";
    case RoadTier::Minor: return "minor";
  }
  return "minor";
}

inline std::optional<RoadTier> parse_tier(std::string_view s) {
  for (int i = 0; i < kTierCount; ++i)
    if (tier_name(static_cast<RoadTier>(i)) == s) return static_cast<RoadTier>(i);
  return std::nullopt;
}

// Condenses an OSM highway=* value into one of five tiers. Non-vehicular ways
// return nullopt.
inline std::optional<RoadTier> regroup_highway(std::string_view tag) {
  static const std::set<std::string_view> excluded = {
      "footway", "path",     "cycleway",     "steps",    "pedestrian", "track",
      "bridleway", "corridor", "platform",   "elevator", "proposed",   "construction",
      "abandoned", "disused",  "bus_stop",   "crossing", "via_ferrata", "razed"};
  if (tag.empty() || excluded.contains(tag)) return std::nullopt;
  if (tag == "motorway" || tag == "motorway_link" || tag == "trunk" || tag == "trunk_link")
    return RoadTier::Motorway;
  if (tag == "primary" || tag == "primary_link") return RoadTier::Primary;
  if (tag == "secondary" || tag == "secondary_link") return RoadTier::Secondary;
  if (tag == "tertiary" || tag == "tertiary_link") return RoadTier::Tertiary;
  return RoadTier::Minor;
}

struct RoadNode {
  GeoPoint pos;
  int degree = 0;
};

struct RoadEdge {
  std::size_t u = 0;
  std::size_t v = 0;
  RoadTier tier = RoadTier::Minor;
  double length_m = 0.0;
  std::vector<GeoPoint> polyline;  // polyline.front() at u, back() at v
};

struct RoadGraph {
  std::vector<RoadNode> nodes;
  std::vector<RoadEdge> edges;

  bool empty() const { return edges.empty(); }
};

struct Block {
  Ring ring;  // closed
  double area_m2 = 0.0;
};

namespace detail {

using CoordKey = std::pair<long long, long long>;

// Coordinates within 1e-7 degrees share a key.
inline CoordKey coord_key(const GeoPoint& p) {
  return {std::llround(p.lon * 1e7), std::llround(p.lat * 1e7)};
}

}  // namespace detail

// Builds the graph: way endpoints and vertices shared between ways (or
// repeated within one) become nodes; ways are split into edges there. Ways
// that cross without a shared vertex are not connected.
inline RoadGraph build_graph(const std::vector<RawWay>& roads) {
  struct Prepared {
    std::vector<GeoPoint> line;
    std::vector<detail::CoordKey> keys;
    RoadTier tier;
  };
  std::vector<Prepared> ways;
  std::map<detail::CoordKey, int> usage;
  for (const auto& w : roads) {
    const auto tier = regroup_highway(w.highway);
    if (!tier) continue;
    Prepared p{{}, {}, *tier};
    for (const auto& pt : w.line) {
      const auto k = detail::coord_key(pt);
      if (!p.keys.empty() && p.keys.back() == k) continue;
      p.line.push_back(pt);
      p.keys.push_back(k);
    }
    if (p.line.size() < 2) continue;
    for (const auto& k : p.keys) ++usage[k];
    // endpoints always become nodes
    usage[p.keys.front()] += 2;
    usage[p.keys.back()] += 2;
    ways.push_back(std::move(p));
  }

  RoadGraph g;
  std::map<detail::CoordKey, std::size_t> node_ids;
  auto node_for = [&](const detail::CoordKey& k, const GeoPoint& pos) {
    auto [it, inserted] = node_ids.try_emplace(k, g.nodes.size());
    if (inserted) g.nodes.push_back({pos, 0});
    return it->second;
  };
  std::set<std::vector<detail::CoordKey>> seen;
  for (const auto& w : ways) {
    std::size_t start = 0;
    for (std::size_t i = 1; i < w.line.size(); ++i) {
      if (usage[w.keys[i]] < 2 && i + 1 < w.line.size()) continue;
      const std::size_t u = node_for(w.keys[start], w.line[start]);
      const std::size_t v = node_for(w.keys[i], w.line[i]);
      RoadEdge e;
      e.u = u;
      e.v = v;
      e.tier = w.tier;
      e.polyline.assign(w.line.begin() + static_cast<long>(start), w.line.begin() + static_cast<long>(i) + 1);
      e.polyline.front() = g.nodes[u].pos;
      e.polyline.back() = g.nodes[v].pos;
      e.length_m = geo::polyline_length_m(e.polyline);
      std::vector<detail::CoordKey> sig(w.keys.begin() + static_cast<long>(start),
                                        w.keys.begin() + static_cast<long>(i) + 1);
      std::vector<detail::CoordKey> rsig(sig.rbegin(), sig.rend());
      const auto& canon = std::min(sig, rsig);
      start = i;
      if (e.length_m <= 0.0 || !seen.insert(canon).second) continue;
      ++g.nodes[u].degree;
      ++g.nodes[v].degree;
      g.edges.push_back(std::move(e));
    }
  }
  return g;
}

// Keeps the edges of tier >= min_tier; node ids are preserved and degrees
// recomputed.
inline RoadGraph subgraph_min_tier(const RoadGraph& g, RoadTier min_tier) {
  RoadGraph out;
  out.nodes = g.nodes;
  for (auto& n : out.nodes) n.degree = 0;
  for (const auto& e : g.edges) {
    if (e.tier < min_tier) continue;
    ++out.nodes[e.u].degree;
    ++out.nodes[e.v].degree;
    out.edges.push_back(e);
  }
  return out;
}

// Nodes of degree >= 3, optionally restricted to those inside `clip`
// (west/south edges inclusive).
inline std::size_t count_intersections(const RoadGraph& g,
                                       const std::optional<GridCell>& clip = std::nullopt) {
  std::size_t n = 0;
  for (const auto& node : g.nodes) {
    if (node.degree < 3) continue;
    if (clip && !(cell_of(node.pos) == clip->id())) continue;
    ++n;
  }
  return n;
}

inline double total_length(const RoadGraph& g) {
  double total = 0.0;
  for (const auto& e : g.edges) total += e.length_m;
  return total;
}

// Length of the network inside the cell, segments clipped to its bbox.
inline double total_length(const RoadGraph& g, const GridCell& clip) {
  double total = 0.0;
  double t0, t1;
  for (const auto& e : g.edges) {
    for (std::size_t i = 1; i < e.polyline.size(); ++i) {
      const auto& a = e.polyline[i - 1];
      const auto& b = e.polyline[i];
      if (!planar::clip_segment(a, b, clip.bbox, t0, t1) || t1 <= t0) continue;
      total += geo::haversine_m(planar::lerp(a, b, t0), planar::lerp(a, b, t1));
    }
  }
  return total;
}

// Length-weighted histogram of undirected segment bearings over [0, 180).
// Bins are centered on multiples of 180/bins, so bin 0 holds bearings near
// due north (and due south) and, for an even bin count, bin bins/2 holds due
// east-west.
inline std::vector<double> bearing_histogram(const RoadGraph& g, int bins = 36) {
  if (bins < 2) throw ArgumentError("bearing_histogram: bins must be >= 2");
  std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
  const double width = 180.0 / bins;
  for (const auto& e : g.edges) {
    for (std::size_t i = 1; i < e.polyline.size(); ++i) {
      const auto& a = e.polyline[i - 1];
      const auto& b = e.polyline[i];
      const double len = geo::haversine_m(a, b);
      if (len <= 0.0) continue;
      const double deg = geo::undirected_bearing_deg(a, b);
      auto k = static_cast<int>(std::floor((deg + width / 2) / width));
      if (k >= bins) k -= bins;
      hist[static_cast<std::size_t>(k)] += len;
    }
  }
  return hist;
}

// Bounded faces of the planar embedding. Dangling trees are pruned first;
// remaining faces are traced by always taking the next edge clockwise, which
// walks bounded faces counter-clockwise. With `clip`, only blocks whose
// interior meets the cell are returned, each with its full area.
inline std::vector<Block> polygonize_blocks(const RoadGraph& g,
                                            const std::optional<GridCell>& clip = std::nullopt) {
  std::vector<Block> blocks;
  if (g.edges.empty()) return blocks;

  // prune degree-1 chains
  std::vector<int> deg(g.nodes.size(), 0);
  for (const auto& e : g.edges) {
    ++deg[e.u];
    ++deg[e.v];
  }
  std::vector<bool> alive(g.edges.size(), true);
  std::vector<std::vector<std::size_t>> incident(g.nodes.size());
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    incident[g.edges[i].u].push_back(i);
    if (g.edges[i].v != g.edges[i].u) incident[g.edges[i].v].push_back(i);
  }
  std::vector<std::size_t> stack;
  for (std::size_t n = 0; n < g.nodes.size(); ++n)
    if (deg[n] == 1) stack.push_back(n);
  while (!stack.empty()) {
    const std::size_t n = stack.back();
    stack.pop_back();
    if (deg[n] != 1) continue;
    for (const std::size_t ei : incident[n]) {
      if (!alive[ei]) continue;
      alive[ei] = false;
      const auto& e = g.edges[ei];
      --deg[e.u];
      --deg[e.v];
      const std::size_t other = e.u == n ? e.v : e.u;
      if (deg[other] == 1) stack.push_back(other);
      break;
    }
  }

  // local planar frame for angles and orientation
  double lon0 = 0.0, lat0 = 0.0;
  for (const auto& n : g.nodes) {
    lon0 += n.pos.lon;
    lat0 += n.pos.lat;
  }
  lon0 /= static_cast<double>(g.nodes.size());
  lat0 /= static_cast<double>(g.nodes.size());
  const double kx = std::cos(geo::deg2rad(lat0));
  auto proj = [&](const GeoPoint& p) { return Xy{(p.lon - lon0) * kx, p.lat - lat0}; };

  // dart 2i runs u->v along edge i, dart 2i+1 runs v->u
  const std::size_t ndarts = 2 * g.edges.size();
  auto dart_origin = [&](std::size_t d) {
    const auto& e = g.edges[d / 2];
    return d % 2 == 0 ? e.u : e.v;
  };
  auto dart_angle = [&](std::size_t d) {
    const auto& pl = g.edges[d / 2].polyline;
    const Xy a = d % 2 == 0 ? proj(pl[0]) : proj(pl[pl.size() - 1]);
    const Xy b = d % 2 == 0 ? proj(pl[1]) : proj(pl[pl.size() - 2]);
    return std::atan2(b.y - a.y, b.x - a.x);
  };
  std::vector<std::vector<std::size_t>> out_darts(g.nodes.size());
  for (std::size_t d = 0; d < ndarts; ++d)
    if (alive[d / 2]) out_darts[dart_origin(d)].push_back(d);
  std::vector<std::size_t> pos_in_node(ndarts, 0);
  for (auto& list : out_darts) {
    std::vector<std::pair<double, std::size_t>> keyed;
    for (const auto d : list) keyed.emplace_back(dart_angle(d), d);
    std::sort(keyed.begin(), keyed.end());
    for (std::size_t i = 0; i < keyed.size(); ++i) {
      list[i] = keyed[i].second;
      pos_in_node[list[i]] = i;
    }
  }
  auto next_dart = [&](std::size_t d) {
    const std::size_t twin = d ^ 1U;
    const auto& list = out_darts[dart_origin(twin)];
    const std::size_t k = pos_in_node[twin];
    return list[(k + list.size() - 1) % list.size()];
  };

  std::vector<bool> used(ndarts, false);
  for (std::size_t start = 0; start < ndarts; ++start) {
    if (!alive[start / 2] || used[start]) continue;
    Ring ring;
    std::size_t d = start;
    do {
      used[d] = true;
      const auto& pl = g.edges[d / 2].polyline;
      if (d % 2 == 0)
        ring.insert(ring.end(), pl.begin(), pl.end() - 1);
      else
        ring.insert(ring.end(), pl.rbegin(), pl.rend() - 1);
      d = next_dart(d);
    } while (d != start && !used[d]);
    if (ring.size() < 3) continue;
    double twice = 0.0;
    for (std::size_t i = 0; i < ring.size(); ++i) {
      const Xy a = proj(ring[i]);
      const Xy b = proj(ring[(i + 1) % ring.size()]);
      twice += a.x * b.y - b.x * a.y;
    }
    if (twice <= 0.0) continue;
    ring.push_back(ring.front());
    const double area = geo::ring_area_m2(ring);
    if (area <= 1e-6) continue;
    if (clip && !(planar::ring_intersects(ring, clip->bbox) &&
                  planar::overlaps_interior(ring, clip->bbox)))
      continue;
    blocks.push_back({std::move(ring), area});
  }
  return blocks;
}

// Debug dump: one GeoJSON LineString feature per line with a `tier` property.
inline std::string graph_to_geojson_lines(const RoadGraph& g) {
  std::string out;
  for (const auto& e : g.edges) {
    nlohmann::json coords = nlohmann::json::array();
    for (const auto& p : e.polyline) coords.push_back({p.lon, p.lat});
    nlohmann::json f = {{"type", "Feature"},
                        {"properties", {{"tier", tier_name(e.tier)}, {"length_m", e.length_m}}},
                        {"geometry", {{"type", "LineString"}, {"coordinates", coords}}}};
    out += f.dump();
    out += '\n';
  }
  return out;
}

}  // namespace morphogrid
