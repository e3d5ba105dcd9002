#pragma once

// Per-cell morphological indices and the regression feature matrix.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "morphogrid/category.hpp"
#include "morphogrid/csv.hpp"
#include "morphogrid/geodata.hpp"
#include "morphogrid/planar.hpp"
#include "morphogrid/road_graph.hpp"

namespace morphogrid {

struct MorphoVector {
  double prob_r = 0.0, prob_o = 0.0, prob_g = 0.0, prob_n = 0.0;
  double rd = 0.0;    // road length per km^2 (m/km^2)
  double ind = 0.0;   // intersections per km^2
  double bud = 0.0;   // footprint share of the cell
  double abfa = 0.0;  // mean footprint area (m^2)
  double bld = 0.0;   // blocks per km^2
  double aba = 0.0;   // mean block area (m^2)
  double lum = 0.0;   // land-use entropy (nats)

  void set_probs(const CategoryProbs& p) {
    prob_g = p[RoadCategory::Gridiron];
    prob_o = p[RoadCategory::Organic];
    prob_r = p[RoadCategory::Radial];
    prob_n = p[RoadCategory::NoPattern];
  }
};

// Shannon entropy (natural log) of the shares implied by raw areas. Zero
// areas contribute nothing; an all-zero input gives 0.
inline double land_use_mixture(std::span<const double> areas) {
  double total = 0.0;
  for (double a : areas) {
    if (!(a >= 0.0) || !std::isfinite(a)) throw ArgumentError("land_use_mixture: areas must be finite and >= 0");
    total += a;
  }
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (double a : areas) {
    if (a <= 0.0) continue;
    const double p = a / total;
    h -= p * std::log(p);
  }
  return std::max(0.0, h);
}

struct IndexOptions {
  RoadTier min_intersection_tier = RoadTier::Minor;
};

// Geometry shared by every cell of one city, prepared once.
struct CityGeometry {
  RoadGraph graph;
  RoadGraph intersection_graph;  // graph restricted to the intersection tier floor
  std::vector<Block> blocks;
  std::vector<Ring> buildings;
  std::vector<planar::Polygon> building_polys;
  std::vector<double> building_area_m2;
  std::vector<LandUse> landuse;
};

inline CityGeometry prepare_city(const UrbanExtract& e, const IndexOptions& opt = {}) {
  CityGeometry c;
  c.graph = build_graph(e.roads);
  c.intersection_graph = opt.min_intersection_tier == RoadTier::Minor
                             ? c.graph
                             : subgraph_min_tier(c.graph, opt.min_intersection_tier);
  c.blocks = polygonize_blocks(c.graph);
  c.buildings = e.buildings;
  for (const auto& r : e.buildings) {
    c.building_polys.push_back(planar::to_polygon(r));
    c.building_area_m2.push_back(std::abs(geo::ring_area_m2(r)));
  }
  c.landuse = e.landuse;
  return c;
}

inline MorphoVector compute_indices(const GridCell& cell, const CityGeometry& city,
                                    const CategoryProbs& probs) {
  MorphoVector v;
  v.set_probs(probs);
  const double km2 = cell.area_km2;
  if (!(km2 > 0.0)) throw ArgumentError("compute_indices: cell has no area");

  v.rd = total_length(city.graph, cell) / km2;
  v.ind = static_cast<double>(count_intersections(city.intersection_graph, cell)) / km2;

  std::vector<planar::Polygon> inside;
  double full_area = 0.0;
  for (std::size_t i = 0; i < city.buildings.size(); ++i) {
    if (!planar::ring_intersects(city.buildings[i], cell.bbox)) continue;
    if (!planar::overlaps_interior(city.buildings[i], cell.bbox)) continue;
    inside.push_back(city.building_polys[i]);
    full_area += city.building_area_m2[i];
  }
  if (!inside.empty()) {
    const auto covered = planar::area_m2(planar::clip(planar::union_all(inside), cell.bbox));
    v.bud = std::clamp(covered / (km2 * 1e6), 0.0, 1.0);
    v.abfa = full_area / static_cast<double>(inside.size());
  }

  std::size_t nblocks = 0;
  double block_area = 0.0;
  for (const auto& b : city.blocks) {
    if (!planar::ring_intersects(b.ring, cell.bbox) || !planar::overlaps_interior(b.ring, cell.bbox)) continue;
    ++nblocks;
    block_area += b.area_m2;
  }
  if (nblocks > 0) {
    v.bld = static_cast<double>(nblocks) / km2;
    v.aba = block_area / static_cast<double>(nblocks);
  }

  std::map<std::string, double> by_use;
  for (const auto& lu : city.landuse) {
    if (!planar::ring_intersects(lu.ring, cell.bbox)) continue;
    planar::MultiPolygon mp{planar::to_polygon(lu.ring)};
    by_use[lu.category] += planar::area_m2(planar::clip(mp, cell.bbox));
  }
  std::vector<double> areas;
  for (const auto& [_, a] : by_use) areas.push_back(std::max(0.0, a));
  v.lum = land_use_mixture(areas);
  return v;
}

// ---------------------------------------------------------------------------
// Feature matrix

inline const std::vector<std::string>& baseline_columns() {
  static const std::vector<std::string> c = {"rd", "ind", "bud", "abfa", "bld", "aba", "lum"};
  return c;
}

inline const std::vector<std::string>& probability_columns() {
  static const std::vector<std::string> c = {"prob_r", "prob_o", "prob_g", "prob_n"};
  return c;
}

struct FeatureMatrix {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

inline std::vector<double> feature_row(const MorphoVector& v, bool include_probs) {
  std::vector<double> r = {v.rd, v.ind, v.bud, v.abfa, v.bld, v.aba, v.lum};
  if (include_probs) r.insert(r.end(), {v.prob_r, v.prob_o, v.prob_g, v.prob_n});
  return r;
}

// Baseline: the seven traditional indices. Augmented: those plus the four
// category probabilities appended.
inline FeatureMatrix assemble_matrix(const std::vector<MorphoVector>& vectors, bool include_probs) {
  FeatureMatrix m;
  m.columns = baseline_columns();
  if (include_probs) m.columns.insert(m.columns.end(), probability_columns().begin(), probability_columns().end());
  for (const auto& v : vectors) m.rows.push_back(feature_row(v, include_probs));
  return m;
}

// ---------------------------------------------------------------------------
// CSV `city,cell_col,cell_row,prob_g,prob_o,prob_r,prob_n,rd,ind,bud,abfa,bld,aba,lum`

struct CellFeatures {
  std::string city;
  CellId cell;
  MorphoVector v;
};

inline constexpr const char* kFeaturesHeader =
    "city,cell_col,cell_row,prob_g,prob_o,prob_r,prob_n,rd,ind,bud,abfa,bld,aba,lum";

inline void write_features_csv(std::ostream& out, const std::vector<CellFeatures>& rows) {
  out << kFeaturesHeader << '\n';
  for (const auto& r : rows) {
    const auto& v = r.v;
    out << csv::join({r.city, std::to_string(r.cell.col), std::to_string(r.cell.row), csv::fmt(v.prob_g),
                      csv::fmt(v.prob_o), csv::fmt(v.prob_r), csv::fmt(v.prob_n), csv::fmt(v.rd),
                      csv::fmt(v.ind), csv::fmt(v.bud), csv::fmt(v.abfa), csv::fmt(v.bld), csv::fmt(v.aba),
                      csv::fmt(v.lum)})
        << '\n';
  }
}

inline std::vector<CellFeatures> read_features_csv(const csv::Table& t) {
  const auto col = [&](const char* name) { return t.column(name); };
  const std::size_t ic = col("city"), icol = col("cell_col"), irow = col("cell_row");
  const std::array<std::size_t, 11> idx = {col("prob_g"), col("prob_o"), col("prob_r"), col("prob_n"),
                                           col("rd"),     col("ind"),    col("bud"),    col("abfa"),
                                           col("bld"),    col("aba"),    col("lum")};
  std::vector<CellFeatures> out;
  for (const auto& row : t.rows) {
    std::array<double, 11> x{};
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto v = csv::parse_double(row[idx[k]]);
      if (!v) throw FormatError("features: non-numeric value in column '" + t.header[idx[k]] + "'");
      x[k] = *v;
    }
    CellFeatures f{row[ic], {csv::parse_int(row[icol]), csv::parse_int(row[irow])}, {}};
    f.v.prob_g = x[0];
    f.v.prob_o = x[1];
    f.v.prob_r = x[2];
    f.v.prob_n = x[3];
    f.v.rd = x[4];
    f.v.ind = x[5];
    f.v.bud = x[6];
    f.v.abfa = x[7];
    f.v.bld = x[8];
    f.v.aba = x[9];
    f.v.lum = x[10];
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace morphogrid
