#pragma once

// Vitality indicators per cell, standardization and the 0-100 score.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "morphogrid/csv.hpp"
#include "morphogrid/geodata.hpp"

namespace morphogrid {

enum class Indicator : int { PoiKde = 0, TweetCount = 1, Ntl = 2, Population = 3, AirbnbKde = 4 };
inline constexpr std::size_t kIndicatorCount = 5;

inline constexpr std::array<std::string_view, kIndicatorCount> kIndicatorNames = {
    "poi_kde", "tweet_count", "ntl", "population", "airbnb_kde"};

struct VitalityRecord {
  std::string city;
  CellId cell;
  std::array<std::optional<double>, kIndicatorCount> values;  // nullopt = source missing
  std::optional<double> score;

  std::optional<double>& operator[](Indicator i) { return values[static_cast<std::size_t>(i)]; }
  const std::optional<double>& operator[](Indicator i) const { return values[static_cast<std::size_t>(i)]; }
};

enum class StdStrategy { BeforeMerging, AfterMerging };

inline StdStrategy parse_std_strategy(std::string_view s) {
  if (s == "before") return StdStrategy::BeforeMerging;
  if (s == "after") return StdStrategy::AfterMerging;
  throw ArgumentError("std_strategy must be 'before' or 'after', got '" + std::string(s) + "'");
}

inline std::string_view std_strategy_name(StdStrategy s) {
  return s == StdStrategy::BeforeMerging ? "before" : "after";
}

// Gaussian kernel density at the cell centroid, per km^2. Points beyond 4h
// are ignored.
inline double kde_at_cell(const std::vector<GeoPoint>& points, const GridCell& cell, double bandwidth_m) {
  if (!(bandwidth_m > 0.0)) throw ArgumentError("kde_at_cell: bandwidth must be > 0");
  const GeoPoint c = cell.centroid();
  const double h2 = bandwidth_m * bandwidth_m;
  const double cutoff = 4.0 * bandwidth_m;
  double s = 0.0;
  for (const auto& p : points) {
    const double d = geo::haversine_m(c, p);
    if (d > cutoff) continue;
    s += std::exp(-d * d / (2.0 * h2));
  }
  return s / (2.0 * std::numbers::pi * h2) * 1e6;
}

struct VitalitySources {
  std::optional<std::vector<GeoPoint>> poi;
  std::optional<std::vector<GeoPoint>> tweets;
  std::optional<std::vector<GeoPoint>> airbnb;
  std::optional<RasterGrid> ntl;
  std::optional<std::map<CellId, double>> population;
};

inline VitalityRecord indicators_for_cell(const std::string& city, const GridCell& cell,
                                          const VitalitySources& src, double bandwidth_m = 500.0) {
  VitalityRecord r;
  r.city = city;
  r.cell = cell.id();
  if (src.poi) r[Indicator::PoiKde] = kde_at_cell(*src.poi, cell, bandwidth_m);
  if (src.airbnb) r[Indicator::AirbnbKde] = kde_at_cell(*src.airbnb, cell, bandwidth_m);
  if (src.tweets) {
    double n = 0.0;
    for (const auto& p : *src.tweets)
      if (cell_of(p) == cell.id()) n += 1.0;
    r[Indicator::TweetCount] = n;
  }
  if (src.ntl) r[Indicator::Ntl] = zonal_mean(*src.ntl, cell);
  if (src.population) {
    const auto it = src.population->find(cell.id());
    if (it != src.population->end()) r[Indicator::Population] = it->second;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Standardization

using ZRow = std::array<double, kIndicatorCount>;

namespace detail {

// z-scores of `col` over the rows in `members`; missing entries are left out
// of the moments and map to 0, as does a constant column.
inline void zscore_group(const std::vector<VitalityRecord>& recs, const std::vector<std::size_t>& members,
                         std::size_t col, std::vector<ZRow>& out) {
  double sum = 0.0;
  std::size_t n = 0;
  for (auto i : members)
    if (recs[i].values[col]) {
      sum += *recs[i].values[col];
      ++n;
    }
  for (auto i : members) out[i][col] = 0.0;
  if (n == 0) return;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (auto i : members)
    if (recs[i].values[col]) ss += (*recs[i].values[col] - mean) * (*recs[i].values[col] - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd > 0.0)) return;
  for (auto i : members)
    if (recs[i].values[col]) out[i][col] = (*recs[i].values[col] - mean) / sd;
}

}  // namespace detail

// Population z-scores per indicator, within each city (BeforeMerging) or over
// the pooled records (AfterMerging).
inline std::vector<ZRow> standardize(const std::vector<VitalityRecord>& recs, StdStrategy strategy) {
  std::vector<ZRow> out(recs.size(), ZRow{});
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < recs.size(); ++i)
    groups[strategy == StdStrategy::BeforeMerging ? recs[i].city : std::string()].push_back(i);
  for (const auto& [_, members] : groups)
    for (std::size_t c = 0; c < kIndicatorCount; ++c) detail::zscore_group(recs, members, c, out);
  return out;
}

// Same rule for an arbitrary numeric matrix grouped by label.
inline std::vector<std::vector<double>> standardize_columns(const std::vector<std::vector<double>>& x,
                                                            const std::vector<std::string>& group,
                                                            StdStrategy strategy) {
  if (x.size() != group.size()) throw ArgumentError("standardize_columns: row/group count mismatch");
  std::vector<std::vector<double>> out = x;
  if (x.empty()) return out;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < x.size(); ++i)
    groups[strategy == StdStrategy::BeforeMerging ? group[i] : std::string()].push_back(i);
  for (const auto& [_, members] : groups)
    for (std::size_t c = 0; c < x[0].size(); ++c) {
      double sum = 0.0;
      for (auto i : members) sum += x[i][c];
      const double mean = sum / static_cast<double>(members.size());
      double ss = 0.0;
      for (auto i : members) ss += (x[i][c] - mean) * (x[i][c] - mean);
      const double sd = std::sqrt(ss / static_cast<double>(members.size()));
      for (auto i : members) out[i][c] = sd > 0.0 ? (x[i][c] - mean) / sd : 0.0;
    }
  return out;
}

using IndicatorMask = std::array<bool, kIndicatorCount>;

inline IndicatorMask default_score_mask(bool include_tweets = false) {
  IndicatorMask m{true, true, true, true, true};
  m[static_cast<std::size_t>(Indicator::TweetCount)] = include_tweets;
  return m;
}

// Sum of included z-scores, min-max rescaled to [0,100] over all rows.
// With fewer than two distinct sums every score is 0.
inline std::vector<double> vitality_score(const std::vector<ZRow>& z, const IndicatorMask& include = default_score_mask()) {
  std::vector<double> sums(z.size(), 0.0);
  for (std::size_t i = 0; i < z.size(); ++i)
    for (std::size_t c = 0; c < kIndicatorCount; ++c)
      if (include[c]) sums[i] += z[i][c];
  std::vector<double> out(z.size(), 0.0);
  if (z.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(sums.begin(), sums.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < z.size(); ++i)
    out[i] = sums[i] == hi ? 100.0 : std::clamp(100.0 * (sums[i] - lo) / (hi - lo), 0.0, 100.0);
  return out;
}

struct VitalityOptions {
  double bandwidth_m = 500.0;
  StdStrategy strategy = StdStrategy::BeforeMerging;
  bool include_tweets = false;
};

// Standardizes and scores in place.
inline void score_records(std::vector<VitalityRecord>& recs, const VitalityOptions& opt = {}) {
  const auto s = vitality_score(standardize(recs, opt.strategy), default_score_mask(opt.include_tweets));
  for (std::size_t i = 0; i < recs.size(); ++i) recs[i].score = s[i];
}

// ---------------------------------------------------------------------------
// CSV `city,cell_col,cell_row,poi_kde,tweet_count,ntl,population,airbnb_kde,score`

inline constexpr const char* kVitalityHeader =
    "city,cell_col,cell_row,poi_kde,tweet_count,ntl,population,airbnb_kde,score";

inline void write_vitality_csv(std::ostream& out, const std::vector<VitalityRecord>& recs) {
  out << kVitalityHeader << '\n';
  for (const auto& r : recs) {
    std::vector<std::string> f = {r.city, std::to_string(r.cell.col), std::to_string(r.cell.row)};
    for (const auto& v : r.values) f.push_back(csv::fmt(v));
    f.push_back(csv::fmt(r.score));
    out << csv::join(f) << '\n';
  }
}

inline std::vector<VitalityRecord> read_vitality_csv(const csv::Table& t) {
  const std::size_t ic = t.column("city"), icol = t.column("cell_col"), irow = t.column("cell_row");
  std::array<std::size_t, kIndicatorCount> idx{};
  for (std::size_t k = 0; k < kIndicatorCount; ++k) idx[k] = t.column(kIndicatorNames[k]);
  const std::size_t is = t.column("score");
  std::vector<VitalityRecord> out;
  for (const auto& row : t.rows) {
    VitalityRecord r;
    r.city = row[ic];
    r.cell = {csv::parse_int(row[icol]), csv::parse_int(row[irow])};
    for (std::size_t k = 0; k < kIndicatorCount; ++k) r.values[k] = csv::parse_double(row[idx[k]]);
    r.score = csv::parse_double(row[is]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace morphogrid
