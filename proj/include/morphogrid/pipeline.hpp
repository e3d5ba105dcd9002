#pragma once

// Stage-file pipeline: ingest -> grid -> render -> classify -> indices ->
// vitality -> fit -> analyze. Every stage reads the files the previous stage
// left in the output directory, so each can be rerun on its own.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "morphogrid/analysis.hpp"
#include "morphogrid/classifier.hpp"
#include "morphogrid/cnn.hpp"
#include "morphogrid/crhd.hpp"
#include "morphogrid/digest.hpp"
#include "morphogrid/gbm.hpp"
#include "morphogrid/geodata.hpp"
#include "morphogrid/morphoindex.hpp"
#include "morphogrid/road_graph.hpp"
#include "morphogrid/synth.hpp"
#include "morphogrid/vitality.hpp"

namespace morphogrid {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

struct CityConfig {
  std::string name;
  std::vector<fs::path> osm;
  std::optional<Bbox> bbox;
  std::vector<fs::path> buildings;
  std::vector<fs::path> landuse;
  std::vector<fs::path> points;
  std::optional<fs::path> ntl;
  std::optional<fs::path> population;
  std::optional<fs::path> probs;
};

enum class Backend { Cnn, Heuristic, External };

inline Backend parse_backend(std::string_view s) {
  if (s == "cnn") return Backend::Cnn;
  if (s == "heuristic") return Backend::Heuristic;
  if (s == "external") return Backend::External;
  throw ConfigError("backend must be cnn, heuristic or external, got '" + std::string(s) + "'");
}

inline std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::Cnn: return "cnn";
    case Backend::Heuristic: return "heuristic";
    case Backend::External: return "external";
  }
  return "heuristic";
}

struct TrainOptions {
  int n_per_class = 200;
  double max_jitter = 0.1;
  TrainConfig train;
  CnnArch arch;
};

struct PipelineConfig {
  fs::path out = "morphogrid_out";
  std::uint64_t seed = 7;
  Backend backend = Backend::Heuristic;
  std::optional<fs::path> model;
  std::vector<CityConfig> cities;

  int size_px = kDefaultCrhdSize;
  int truncate_floor = kDefaultTruncateFloor;
  Palette palette;
  IndexOptions index;
  VitalityOptions vitality;

  std::vector<GbmParams> gbm_grid{GbmParams{}};
  int cv_folds = 5;
  int clusters = 4;
  std::size_t top_n = 10;
  bool group_by_cluster = false;
  int jobs = 1;
  TrainOptions training;

  std::map<std::string, std::string> raw;  // key/value pairs as read
};

namespace pipeline_detail {

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  for (auto& s : csv::split_line(v)) {
    auto t = csv::trim(s);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  const auto d = csv::parse_double(v);
  if (!d) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return *d;
}

inline long long to_int(const std::string& key, const std::string& v) {
  try {
    return csv::parse_int(v);
  } catch (const Error&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline Bbox to_bbox(const std::string& key, const std::string& v) {
  const auto parts = split_list(v);
  if (parts.size() != 4) throw ConfigError(key + ": expected west,south,east,north");
  Bbox b{to_double(key, parts[0]), to_double(key, parts[1]), to_double(key, parts[2]), to_double(key, parts[3])};
  if (!(b.west < b.east && b.south < b.north)) throw ConfigError(key + ": inverted bbox");
  return b;
}

inline TierStyle to_style(const std::string& key, const std::string& v) {
  const auto parts = split_list(v);
  if (parts.size() != 4) throw ConfigError(key + ": expected r,g,b,width");
  auto channel = [&](const std::string& s) {
    const auto c = to_int(key, s);
    if (c < 0 || c > 255) throw ConfigError(key + ": color channel out of range");
    return static_cast<std::uint8_t>(c);
  };
  const auto w = to_int(key, parts[3]);
  if (w < 1 || w > 64) throw ConfigError(key + ": width out of range");
  return {{channel(parts[0]), channel(parts[1]), channel(parts[2])}, static_cast<int>(w)};
}

}  // namespace pipeline_detail

// Flat `key = value` text; `#` starts a comment line. Relative paths are
// resolved against `base_dir`.
inline PipelineConfig parse_config(std::string_view text, const fs::path& base_dir) {
  using namespace pipeline_detail;
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = csv::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = csv::trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (kv.contains(key)) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv[key] = csv::trim(std::string_view(t).substr(eq + 1));
  }

  PipelineConfig cfg;
  cfg.raw = kv;
  auto path = [&](const std::string& v) {
    fs::path p(v);
    return p.is_absolute() ? p : base_dir / p;
  };
  auto paths = [&](const std::string& v) {
    std::vector<fs::path> out;
    for (const auto& s : split_list(v)) out.push_back(path(s));
    return out;
  };

  std::set<std::string> city_names;
  if (kv.contains("cities"))
    for (const auto& c : split_list(kv["cities"])) {
      if (c.find('.') != std::string::npos || c.find('/') != std::string::npos)
        throw ConfigError("cities: invalid city name '" + c + "'");
      if (!city_names.insert(c).second) throw ConfigError("cities: duplicate city '" + c + "'");
      cfg.cities.push_back(CityConfig{c, {}, {}, {}, {}, {}, {}, {}, {}});
    }

  GbmParams gbm;
  std::vector<int> iters{gbm.num_iterations}, leaves{gbm.num_leaves};
  std::vector<double> rates{gbm.learning_rate};
  std::optional<double> goss_a, goss_b;

  for (const auto& [key, v] : kv) {
    const auto dot = key.find('.');
    const std::string head = key.substr(0, dot);
    const std::string tail = dot == std::string::npos ? "" : key.substr(dot + 1);
    if (dot == std::string::npos) {
      if (key == "cities") continue;
      if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_int(key, v));
      else if (key == "out") cfg.out = path(v);
      else if (key == "backend") cfg.backend = parse_backend(v);
      else if (key == "model") cfg.model = path(v);
      else if (key == "size_px") cfg.size_px = static_cast<int>(to_int(key, v));
      else if (key == "truncate_floor") cfg.truncate_floor = static_cast<int>(to_int(key, v));
      else if (key == "bandwidth_m") cfg.vitality.bandwidth_m = to_double(key, v);
      else if (key == "std_strategy") {
        try {
          cfg.vitality.strategy = parse_std_strategy(v);
        } catch (const ArgumentError& e) {
          throw ConfigError(e.what());
        }
      } else if (key == "include_tweets") cfg.vitality.include_tweets = to_bool(key, v);
      else if (key == "min_tier") {
        const auto tier = parse_tier(v);
        if (!tier) throw ConfigError("min_tier: unknown tier '" + v + "'");
        cfg.index.min_intersection_tier = *tier;
      } else if (key == "cv_folds") cfg.cv_folds = static_cast<int>(to_int(key, v));
      else if (key == "clusters") cfg.clusters = static_cast<int>(to_int(key, v));
      else if (key == "top_n") cfg.top_n = static_cast<std::size_t>(std::max(1LL, to_int(key, v)));
      else if (key == "group_by") {
        if (v != "cluster" && v != "none") throw ConfigError("group_by must be cluster or none");
        cfg.group_by_cluster = v == "cluster";
      } else if (key == "jobs") cfg.jobs = static_cast<int>(to_int(key, v));
      else throw ConfigError("unknown config key '" + key + "'");
    } else if (head == "gbm") {
      if (tail == "num_iterations") {
        iters.clear();
        for (const auto& s : split_list(v)) iters.push_back(static_cast<int>(to_int(key, s)));
      } else if (tail == "learning_rate") {
        rates.clear();
        for (const auto& s : split_list(v)) rates.push_back(to_double(key, s));
      } else if (tail == "num_leaves") {
        leaves.clear();
        for (const auto& s : split_list(v)) leaves.push_back(static_cast<int>(to_int(key, s)));
      } else if (tail == "min_samples_leaf") gbm.min_samples_leaf = static_cast<int>(to_int(key, v));
      else if (tail == "max_bins") gbm.max_bins = static_cast<int>(to_int(key, v));
      else if (tail == "goss_top_rate") goss_a = to_double(key, v);
      else if (tail == "goss_other_rate") goss_b = to_double(key, v);
      else throw ConfigError("unknown config key '" + key + "'");
    } else if (head == "train") {
      auto& t = cfg.training;
      if (tail == "n_per_class") t.n_per_class = static_cast<int>(to_int(key, v));
      else if (tail == "epochs") t.train.epochs = static_cast<int>(to_int(key, v));
      else if (tail == "learning_rate") t.train.learning_rate = to_double(key, v);
      else if (tail == "batch_size") t.train.batch_size = static_cast<int>(to_int(key, v));
      else if (tail == "channels") t.arch.channels = static_cast<int>(to_int(key, v));
      else if (tail == "max_jitter") t.max_jitter = to_double(key, v);
      else throw ConfigError("unknown config key '" + key + "'");
    } else if (head == "palette") {
      const auto tier = parse_tier(tail);
      if (tail == "background") {
        const auto s = to_style(key, v + ",1");
        cfg.palette.background = s.color;
      } else if (tier) {
        cfg.palette.tiers[static_cast<std::size_t>(*tier)] = to_style(key, v);
      } else {
        throw ConfigError("unknown config key '" + key + "'");
      }
    } else if (city_names.contains(head)) {
      auto& c = *std::find_if(cfg.cities.begin(), cfg.cities.end(), [&](const CityConfig& x) { return x.name == head; });
      if (tail == "osm") c.osm = paths(v);
      else if (tail == "bbox") c.bbox = to_bbox(key, v);
      else if (tail == "buildings") c.buildings = paths(v);
      else if (tail == "landuse") c.landuse = paths(v);
      else if (tail == "points") c.points = paths(v);
      else if (tail == "ntl") c.ntl = path(v);
      else if (tail == "population") c.population = path(v);
      else if (tail == "probs") c.probs = path(v);
      else throw ConfigError("unknown config key '" + key + "'");
    } else {
      throw ConfigError("unknown config key '" + key + "' (city not listed in 'cities'?)");
    }
  }

  cfg.gbm_grid.clear();
  for (int it : iters)
    for (double lr : rates)
      for (int nl : leaves) {
        GbmParams p = gbm;
        p.num_iterations = it;
        p.learning_rate = lr;
        p.num_leaves = nl;
        p.seed = cfg.seed;
        if (goss_a || goss_b) p.goss = GossParams{goss_a.value_or(0.2), goss_b.value_or(0.1)};
        try {
          p.validate();
        } catch (const ArgumentError& e) {
          throw ConfigError(e.what());
        }
        cfg.gbm_grid.push_back(p);
      }
  cfg.training.train.seed = cfg.seed;
  if (cfg.size_px < 64) throw ConfigError("size_px must be >= 64");
  if (cfg.truncate_floor < 0 || cfg.truncate_floor > 255) throw ConfigError("truncate_floor must be in [0, 255]");
  if (!(cfg.vitality.bandwidth_m > 0.0)) throw ConfigError("bandwidth_m must be > 0");
  if (cfg.cv_folds < 2) throw ConfigError("cv_folds must be >= 2");
  if (cfg.clusters < 1) throw ConfigError("clusters must be >= 1");
  if (cfg.jobs < 1) throw ConfigError("jobs must be >= 1");
  return cfg;
}

inline PipelineConfig load_config(const fs::path& file) {
  if (!fs::exists(file)) throw ConfigError("config file not found: " + file.string());
  return parse_config(read_text_file(file.string()), file.parent_path());
}

// MORPHOGRID_SEED, when set, replaces the configured seed.
inline void apply_env(PipelineConfig& cfg) {
  if (const char* s = std::getenv("MORPHOGRID_SEED")) {
    const auto seed = static_cast<std::uint64_t>(pipeline_detail::to_int("MORPHOGRID_SEED", s));
    cfg.seed = seed;
    cfg.training.train.seed = seed;
    for (auto& p : cfg.gbm_grid) p.seed = seed;
  }
}

// Checks that the run can start: required keys present, referenced files exist.
inline void validate_config(const PipelineConfig& cfg) {
  if (cfg.cities.empty()) throw ConfigError("missing key 'cities'");
  auto need = [](const std::string& key, const fs::path& p) {
    if (!fs::exists(p)) throw ConfigError(key + ": file not found: " + p.string());
  };
  for (const auto& c : cfg.cities) {
    if (c.osm.empty()) throw ConfigError("missing key '" + c.name + ".osm'");
    for (const auto& p : c.osm) need(c.name + ".osm", p);
    for (const auto& p : c.buildings) need(c.name + ".buildings", p);
    for (const auto& p : c.landuse) need(c.name + ".landuse", p);
    for (const auto& p : c.points) need(c.name + ".points", p);
    if (c.ntl) need(c.name + ".ntl", *c.ntl);
    if (c.population) need(c.name + ".population", *c.population);
    if (c.probs) need(c.name + ".probs", *c.probs);
    if (cfg.backend == Backend::External && !c.probs) throw ConfigError("missing key '" + c.name + ".probs'");
  }
  if (cfg.backend == Backend::Cnn) {
    if (!cfg.model) throw ConfigError("missing key 'model'");
    need("model", *cfg.model);
  }
}

// ---------------------------------------------------------------------------
// Helpers

namespace pipeline_detail {

// Runs fn(0..n-1) on up to `jobs` threads. Callers write results by index, so
// output order never depends on scheduling. The lowest-index failure is
// rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  if (jobs <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr err;
  std::size_t err_index = n;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < err_index) {
          err_index = i;
          err = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  const auto t = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  for (std::size_t k = 0; k < t; ++k) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

inline void write_file(const fs::path& p, std::string_view content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write failed: " + p.string());
}

inline csv::Table read_stage_csv(const fs::path& p) {
  if (!fs::exists(p)) throw FormatError("missing stage file " + p.string() + " (run the earlier stage first)");
  try {
    return csv::read_file(p.string());
  } catch (const FormatError& e) {
    throw FormatError(p.filename().string() + ": " + e.what());
  }
}

inline nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json metrics_json(const Metrics& m) {
  return {{"r2", opt_json(m.r2)},
          {"rmse", m.rmse},
          {"mae", m.mae},
          {"r2_level", r2_level_name(r2_level(m.r2.value_or(0.0)))}};
}

inline nlohmann::json params_json(const GbmParams& p) {
  nlohmann::json j = {{"num_iterations", p.num_iterations},
                      {"learning_rate", p.learning_rate},
                      {"num_leaves", p.num_leaves},
                      {"min_samples_leaf", p.min_samples_leaf},
                      {"max_bins", p.max_bins}};
  if (p.goss) j["goss"] = {{"top_rate", p.goss->top_rate}, {"other_rate", p.goss->other_rate}};
  return j;
}

inline fs::path extract_path(const PipelineConfig& cfg, const std::string& city) {
  return cfg.out / "extract" / (city + ".geojson");
}

inline UrbanExtract load_stage_extract(const PipelineConfig& cfg, const std::string& city) {
  const auto p = extract_path(cfg, city);
  if (!fs::exists(p)) throw FormatError("missing stage file " + p.string() + " (run ingest first)");
  return parse_extract_file(p.string());
}

struct CellRow {
  std::string city;
  GridCell cell;
  bool built = false;
};

inline std::vector<CellRow> read_cells(const PipelineConfig& cfg) {
  const auto t = read_stage_csv(cfg.out / "cells.csv");
  const auto ic = t.column("city"), icol = t.column("cell_col"), irow = t.column("cell_row"), ib = t.column("built");
  std::vector<CellRow> out;
  for (const auto& r : t.rows)
    out.push_back({r[ic], make_cell(csv::parse_int(r[icol]), csv::parse_int(r[irow])), r[ib] == "1"});
  return out;
}

inline std::vector<CellRow> built_cells(const PipelineConfig& cfg, const std::string& city) {
  std::vector<CellRow> out;
  for (auto& c : read_cells(cfg))
    if (c.built && c.city == city) out.push_back(std::move(c));
  return out;
}

using CellKey = std::pair<std::string, CellId>;

struct ClassifiedCell {
  std::string city;
  CellId cell;
  CategoryProbs probs;
};

inline std::vector<ClassifiedCell> read_categories(const PipelineConfig& cfg) {
  const auto t = read_stage_csv(cfg.out / "categories.csv");
  const auto ic = t.column("city"), icol = t.column("cell_col"), irow = t.column("cell_row");
  const std::array<std::size_t, kCategoryCount> ip = {t.column("p_gridiron"), t.column("p_organic"),
                                                      t.column("p_radial"), t.column("p_nopattern")};
  std::vector<ClassifiedCell> out;
  for (const auto& r : t.rows) {
    ClassifiedCell c{r[ic], {csv::parse_int(r[icol]), csv::parse_int(r[irow])}, {}};
    for (std::size_t k = 0; k < kCategoryCount; ++k) {
      const auto v = csv::parse_double(r[ip[k]]);
      if (!v) throw FormatError("categories.csv: non-numeric value in column '" + t.header[ip[k]] + "'");
      c.probs.p[k] = *v;
    }
    out.push_back(c);
  }
  return out;
}

// Road graph restricted to the square window of half-side `half_m` around
// `center`, edges clipped at the window border.
inline RoadGraph window_graph(const RoadGraph& g, const GeoPoint& center, double half_m) {
  const double dlat = geo::rad2deg(half_m / geo::kEarthRadiusM);
  const double dlon = dlat / std::cos(geo::deg2rad(center.lat));
  const Bbox box{center.lon - dlon, center.lat - dlat, center.lon + dlon, center.lat + dlat};
  std::vector<RawWay> ways;
  for (const auto& e : g.edges) {
    RawWay cur{{}, std::string(tier_name(e.tier))};
    for (std::size_t i = 1; i < e.polyline.size(); ++i) {
      double t0, t1;
      const auto& a = e.polyline[i - 1];
      const auto& b = e.polyline[i];
      if (!planar::clip_segment(a, b, box, t0, t1) || !(t1 > t0)) {
        if (cur.line.size() >= 2) ways.push_back(cur);
        cur.line.clear();
        continue;
      }
      const GeoPoint p0 = planar::lerp(a, b, t0), p1 = planar::lerp(a, b, t1);
      if (cur.line.empty() || !(cur.line.back() == p0)) {
        if (cur.line.size() >= 2) ways.push_back(cur);
        cur.line = {p0};
      }
      cur.line.push_back(p1);
    }
    if (cur.line.size() >= 2) ways.push_back(cur);
  }
  return build_graph(ways);
}

}  // namespace pipeline_detail

// ---------------------------------------------------------------------------
// Stages

inline void stage_ingest(const PipelineConfig& cfg) {
  for (const auto& c : cfg.cities) {
    UrbanExtract e;
    std::vector<fs::path> sources = c.osm;
    for (const auto* list : {&c.buildings, &c.landuse, &c.points}) sources.insert(sources.end(), list->begin(), list->end());
    for (const auto& p : sources) merge_into(e, parse_extract_file(p.string(), c.bbox));
    pipeline_detail::write_file(pipeline_detail::extract_path(cfg, c.name), to_geojson(e));
  }
}

inline Bbox extract_extent(const UrbanExtract& e) {
  Bbox b{180, 90, -180, -90};
  bool any = false;
  auto add = [&](const GeoPoint& p) {
    b.west = std::min(b.west, p.lon);
    b.east = std::max(b.east, p.lon);
    b.south = std::min(b.south, p.lat);
    b.north = std::max(b.north, p.lat);
    any = true;
  };
  for (const auto& r : e.roads)
    for (const auto& p : r.line) add(p);
  for (const auto& r : e.buildings)
    for (const auto& p : r) add(p);
  if (!any) throw FormatError("extract has no roads or buildings to take an extent from");
  return b;
}

inline void stage_grid(const PipelineConfig& cfg) {
  std::ostringstream out;
  out << "city,cell_col,cell_row,west,south,east,north,area_km2,built\n";
  for (const auto& c : cfg.cities) {
    const auto e = pipeline_detail::load_stage_extract(cfg, c.name);
    const Bbox b = c.bbox ? *c.bbox : extract_extent(e);
    const auto cells = make_grid(b);
    std::set<CellId> built;
    for (const auto& cell : filter_built(cells, e.buildings)) built.insert(cell.id());
    for (const auto& cell : cells)
      out << csv::join({c.name, std::to_string(cell.col), std::to_string(cell.row), csv::fmt(cell.bbox.west),
                        csv::fmt(cell.bbox.south), csv::fmt(cell.bbox.east), csv::fmt(cell.bbox.north),
                        csv::fmt(cell.area_km2), built.contains(cell.id()) ? "1" : "0"})
          << '\n';
  }
  pipeline_detail::write_file(cfg.out / "cells.csv", out.str());
}

inline fs::path crhd_path(const PipelineConfig& cfg, const std::string& city, const CellId& id) {
  return cfg.out / "crhd" / city / crhd_filename(id);
}

// Renders every built cell, or only `only` when given.
inline std::size_t stage_render(const PipelineConfig& cfg, std::optional<CellId> only = std::nullopt,
                                std::optional<std::string> only_city = std::nullopt) {
  std::size_t written = 0;
  for (const auto& c : cfg.cities) {
    if (only_city && *only_city != c.name) continue;
    auto cells = pipeline_detail::built_cells(cfg, c.name);
    if (only) {
      cells.clear();
      cells.push_back({c.name, make_cell(only->col, only->row), true});
    }
    const RoadGraph g = build_graph(pipeline_detail::load_stage_extract(cfg, c.name).roads);
    pipeline_detail::parallel_for(cells.size(), cfg.jobs, [&](std::size_t i) {
      const auto img = render_for_cell(g, cells[i].cell, cfg.size_px, cfg.palette,
                                       static_cast<std::uint8_t>(cfg.truncate_floor));
      const auto png = encode_png(img);
      pipeline_detail::write_file(crhd_path(cfg, c.name, cells[i].cell.id()),
                                  std::string_view(reinterpret_cast<const char*>(png.data()), png.size()));
    });
    written += cells.size();
  }
  return written;
}

struct ClassifyOverrides {
  std::optional<Backend> backend;
  std::optional<fs::path> probs;  // applies to every city
  std::optional<fs::path> model;
};

inline void stage_classify(const PipelineConfig& cfg, const ClassifyOverrides& ov = {}) {
  const Backend backend = ov.backend.value_or(cfg.backend);
  std::optional<CnnModel> model;
  if (backend == Backend::Cnn) {
    const auto path = ov.model ? ov.model : cfg.model;
    if (!path) throw ConfigError("missing key 'model'");
    model = load_cnn_file(path->string());
  }
  std::ostringstream out;
  out << "city,cell_col,cell_row,p_gridiron,p_organic,p_radial,p_nopattern,category\n";
  for (const auto& c : cfg.cities) {
    const auto cells = pipeline_detail::built_cells(cfg, c.name);
    std::vector<CategoryProbs> probs(cells.size());
    if (backend == Backend::External) {
      const auto path = ov.probs ? ov.probs : c.probs;
      if (!path) throw ConfigError("missing key '" + c.name + ".probs'");
      const auto ext = load_external_probs_file(path->string());
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto it = ext.probs.find(cells[i].cell.id());
        if (it == ext.probs.end())
          throw FormatError("probabilities missing for cell " + std::to_string(cells[i].cell.col) + "," +
                            std::to_string(cells[i].cell.row));
        probs[i] = it->second;
      }
    } else if (backend == Backend::Heuristic) {
      const RoadGraph g = build_graph(pipeline_detail::load_stage_extract(cfg, c.name).roads);
      pipeline_detail::parallel_for(cells.size(), cfg.jobs, [&](std::size_t i) {
        const double half = crhd_radius_for_cell(cells[i].cell);
        probs[i] = classify_heuristic(pipeline_detail::window_graph(g, cells[i].cell.centroid(), half), 2.0 * half);
      });
    } else {
      pipeline_detail::parallel_for(cells.size(), cfg.jobs, [&](std::size_t i) {
        const auto p = crhd_path(cfg, c.name, cells[i].cell.id());
        if (!fs::exists(p)) throw FormatError("missing stage file " + p.string() + " (run render first)");
        probs[i] = cnn_forward(*model, read_png_file(p.string()));
      });
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& p = probs[i];
      out << csv::join({c.name, std::to_string(cells[i].cell.col), std::to_string(cells[i].cell.row),
                        csv::fmt(p.p[0]), csv::fmt(p.p[1]), csv::fmt(p.p[2]), csv::fmt(p.p[3]),
                        std::string(category_name(assign_category(p)))})
          << '\n';
    }
  }
  pipeline_detail::write_file(cfg.out / "categories.csv", out.str());
}

inline void stage_indices(const PipelineConfig& cfg) {
  std::map<pipeline_detail::CellKey, CategoryProbs> probs;
  for (const auto& c : pipeline_detail::read_categories(cfg)) probs[{c.city, c.cell}] = c.probs;
  std::vector<CellFeatures> rows;
  for (const auto& c : cfg.cities) {
    const auto cells = pipeline_detail::built_cells(cfg, c.name);
    const CityGeometry geom = prepare_city(pipeline_detail::load_stage_extract(cfg, c.name), cfg.index);
    std::vector<CellFeatures> out(cells.size());
    pipeline_detail::parallel_for(cells.size(), cfg.jobs, [&](std::size_t i) {
      const auto it = probs.find({c.name, cells[i].cell.id()});
      if (it == probs.end()) throw FormatError("categories.csv: no row for a built cell of " + c.name);
      out[i] = {c.name, cells[i].cell.id(), compute_indices(cells[i].cell, geom, it->second)};
    });
    rows.insert(rows.end(), out.begin(), out.end());
  }
  std::ostringstream s;
  write_features_csv(s, rows);
  pipeline_detail::write_file(cfg.out / "features.csv", s.str());
}

inline void stage_vitality(const PipelineConfig& cfg) {
  std::vector<VitalityRecord> recs;
  for (const auto& c : cfg.cities) {
    const auto e = pipeline_detail::load_stage_extract(cfg, c.name);
    VitalitySources src;
    auto kind = [&](const char* k) -> std::optional<std::vector<GeoPoint>> {
      const auto it = e.points.find(k);
      if (it == e.points.end()) return std::nullopt;
      return it->second;
    };
    src.poi = kind("poi");
    src.tweets = kind("tweet");
    src.airbnb = kind("airbnb");
    if (c.ntl) src.ntl = read_ascii_grid_file(c.ntl->string());
    if (c.population) src.population = read_cell_values(csv::read_file(c.population->string()));
    const auto cells = pipeline_detail::built_cells(cfg, c.name);
    std::vector<VitalityRecord> out(cells.size());
    pipeline_detail::parallel_for(cells.size(), cfg.jobs, [&](std::size_t i) {
      out[i] = indicators_for_cell(c.name, cells[i].cell, src, cfg.vitality.bandwidth_m);
    });
    recs.insert(recs.end(), out.begin(), out.end());
  }
  score_records(recs, cfg.vitality);
  std::ostringstream s;
  write_vitality_csv(s, recs);
  pipeline_detail::write_file(cfg.out / "vitality.csv", s.str());
}

// Feature rows joined with scores, in features.csv order.
struct JoinedRows {
  std::vector<CellFeatures> features;
  std::vector<double> score;
};

inline JoinedRows join_scored(const PipelineConfig& cfg) {
  const auto feats = read_features_csv(pipeline_detail::read_stage_csv(cfg.out / "features.csv"));
  std::map<pipeline_detail::CellKey, double> score;
  for (const auto& r : read_vitality_csv(pipeline_detail::read_stage_csv(cfg.out / "vitality.csv")))
    if (r.score) score[{r.city, r.cell}] = *r.score;
  JoinedRows j;
  for (const auto& f : feats) {
    const auto it = score.find({f.city, f.cell});
    if (it == score.end()) continue;
    j.features.push_back(f);
    j.score.push_back(it->second);
  }
  return j;
}

inline nlohmann::json comparison_json(const Comparison& c) {
  using pipeline_detail::metrics_json;
  return {{"baseline", metrics_json(c.baseline)},
          {"augmented", metrics_json(c.augmented)},
          {"delta", {{"r2", c.delta_r2}, {"rmse", c.delta_rmse}, {"mae", c.delta_mae}}},
          {"train_rows", c.train_rows},
          {"test_rows", c.test_rows}};
}

inline void stage_fit(const PipelineConfig& cfg) {
  using pipeline_detail::metrics_json;
  const auto j = join_scored(cfg);
  std::vector<MorphoVector> vecs;
  for (const auto& f : j.features) vecs.push_back(f.v);
  const auto xb = assemble_matrix(vecs, false), xa = assemble_matrix(vecs, true);
  nlohmann::json report = {{"rows", j.score.size()}, {"seed", cfg.seed}};
  if (j.score.size() < 4) {
    report["skipped"] = "need at least 4 scored cells";
    pipeline_detail::write_file(cfg.out / "fit_report.json", report.dump(1) + "\n");
    return;
  }
  const int k = std::min<int>(cfg.cv_folds, static_cast<int>(j.score.size()));
  const auto gs = cv_grid_search(xa.rows, j.score, cfg.gbm_grid, k, cfg.seed);
  nlohmann::json grid = nlohmann::json::array();
  for (std::size_t i = 0; i < cfg.gbm_grid.size(); ++i)
    grid.push_back({{"params", pipeline_detail::params_json(cfg.gbm_grid[i])},
                    {"cv_rmse", gs.scores[i].rmse},
                    {"cv_mae", gs.scores[i].mae},
                    {"cv_r2", pipeline_detail::opt_json(gs.scores[i].r2)}});
  report["cv_folds"] = k;
  report["grid"] = grid;
  report["best_index"] = gs.best_index;
  report["comparison"] = comparison_json(compare_models(xb.rows, xa.rows, j.score, gs.best, cfg.seed));

  const auto mb = fit(xb.rows, j.score, gs.best), ma = fit(xa.rows, j.score, gs.best);
  auto importance = [](const GbmModel& m, const std::vector<std::string>& cols) {
    nlohmann::json o = nlohmann::json::object();
    const auto imp = feature_importance(m);
    for (std::size_t i = 0; i < cols.size(); ++i) o[cols[i]] = imp[i];
    return o;
  };
  report["importance"] = {{"baseline", importance(mb, xb.columns)}, {"augmented", importance(ma, xa.columns)}};
  report["train_metrics"] = {{"baseline", metrics_json(metrics(j.score, predict(mb, xb.rows)))},
                             {"augmented", metrics_json(metrics(j.score, predict(ma, xa.rows)))}};
  pipeline_detail::write_file(cfg.out / "model_baseline.mgbm", save_gbm(mb));
  pipeline_detail::write_file(cfg.out / "model_augmented.mgbm", save_gbm(ma));
  pipeline_detail::write_file(cfg.out / "fit_report.json", report.dump(1) + "\n");
}

inline void stage_analyze(const PipelineConfig& cfg, std::optional<bool> group_by_cluster = std::nullopt) {
  using nlohmann::json;
  const auto cats = pipeline_detail::read_categories(cfg);
  std::map<pipeline_detail::CellKey, std::optional<double>> score;
  for (const auto& r : read_vitality_csv(pipeline_detail::read_stage_csv(cfg.out / "vitality.csv")))
    score[{r.city, r.cell}] = r.score;
  std::map<pipeline_detail::CellKey, MorphoVector> feats;
  for (const auto& f : read_features_csv(pipeline_detail::read_stage_csv(cfg.out / "features.csv")))
    feats[{f.city, f.cell}] = f.v;

  json report = json::object();

  // shares and clusters
  std::vector<std::pair<std::string, RoadCategory>> labelled;
  for (const auto& c : cats) labelled.push_back({c.city, assign_category(c.probs)});
  const auto shares = category_shares(labelled);
  json js = json::array();
  for (const auto& s : shares.cities)
    js.push_back({{"city", s.city},
                  {"gridiron", s.share[0]},
                  {"organic", s.share[1]},
                  {"radial", s.share[2]},
                  {"patterned_cells", s.patterned_cells}});
  report["shares"] = js;
  report["shares_excluded"] = shares.excluded;
  std::map<std::string, int> cluster_of;
  if (!shares.cities.empty()) {
    const int k = std::min<int>(cfg.clusters, static_cast<int>(shares.cities.size()));
    const auto cl = cluster_cities(shares.cities, k, cfg.seed);
    json jc = {{"k", k}, {"inertia", cl.inertia}, {"best_restart", cl.best_restart}, {"labels", json::object()}};
    for (std::size_t i = 0; i < shares.cities.size(); ++i) {
      jc["labels"][shares.cities[i].city] = cl.labels[i];
      cluster_of[shares.cities[i].city] = cl.labels[i];
    }
    report["clusters"] = jc;
  }

  // score statistics over scored cells
  std::vector<double> scores;
  std::vector<RoadCategory> scats;
  std::vector<ScoredCell> scored;
  for (const auto& c : cats) {
    const auto it = score.find({c.city, c.cell});
    if (it == score.end() || !it->second) continue;
    scores.push_back(*it->second);
    scats.push_back(assign_category(c.probs));
    const auto f = feats.find({c.city, c.cell});
    scored.push_back({c.city, c.cell, scats.back(), f == feats.end() ? MorphoVector{} : f->second, scores.back()});
  }
  json jstats = json::object();
  for (const auto& [cat, st] : stats_by_category(scores, scats))
    jstats[std::string(category_name(cat))] = {
        {"n", st.n}, {"mean", st.mean}, {"median", st.median}, {"std", st.stddev}, {"min", st.min}, {"max", st.max}};
  report["stats_by_category"] = jstats;

  json jr = json::array();
  for (const auto& b : proportion_by_range(scores, scats)) {
    json e = {{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}};
    if (b.proportions) {
      for (auto c : kAllCategories) e[std::string(category_name(c))] = (*b.proportions)[index_of(c)];
    } else {
      e["proportions"] = nullptr;
    }
    jr.push_back(e);
  }
  report["proportion_by_range"] = jr;

  json jt = json::array();
  for (const auto& row : top_n_table(scored, cfg.top_n)) {
    json e = {{"category", category_name(row.category)},
              {"cells", row.used},
              {"fewer_than_n", row.short_of_n},
              {"mean_score", row.mean_score}};
    for (std::size_t i = 0; i < baseline_columns().size(); ++i) e[baseline_columns()[i]] = row.mean_indices[i];
    jt.push_back(e);
  }
  report["top_n"] = {{"n", cfg.top_n}, {"rows", jt}};

  // density curves
  std::ostringstream curves;
  curves << "category,x,density\n";
  for (auto cat : kAllCategories) {
    std::vector<double> v;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scats[i] == cat) v.push_back(scores[i]);
    if (v.size() < 2) continue;
    const auto curve = kde_curve(v);
    for (std::size_t i = 0; i < curve.x.size(); ++i)
      curves << category_name(cat) << ',' << csv::fmt(curve.x[i]) << ',' << csv::fmt(curve.density[i]) << '\n';
  }
  pipeline_detail::write_file(cfg.out / "kde_curves.csv", curves.str());

  // per-cluster model comparison
  if (group_by_cluster.value_or(cfg.group_by_cluster)) {
    const auto j = join_scored(cfg);
    const auto params = cfg.gbm_grid.front();
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < j.features.size(); ++i) {
      const auto it = cluster_of.find(j.features[i].city);
      if (it != cluster_of.end()) members[it->second].push_back(i);
    }
    json jg = json::object();
    for (const auto& [label, idx] : members) {
      Matrix xb, xa;
      std::vector<double> y;
      for (auto i : idx) {
        xb.push_back(feature_row(j.features[i].v, false));
        xa.push_back(feature_row(j.features[i].v, true));
        y.push_back(j.score[i]);
      }
      if (y.size() < 4)
        jg[std::to_string(label)] = {{"rows", y.size()}, {"skipped", "need at least 4 scored cells"}};
      else
        jg[std::to_string(label)] = comparison_json(compare_models(xb, xa, y, params, cfg.seed));
    }
    report["by_cluster"] = jg;
  }
  pipeline_detail::write_file(cfg.out / "analysis.json", report.dump(1) + "\n");

  // categorical maps
  for (const auto& c : cfg.cities) {
    std::vector<MapCell> cells;
    for (const auto& cc : cats) {
      if (cc.city != c.name) continue;
      const auto it = score.find({cc.city, cc.cell});
      cells.push_back({make_cell(cc.cell.col, cc.cell.row), cc.probs,
                       it == score.end() ? std::nullopt : it->second});
    }
    pipeline_detail::write_file(cfg.out / "maps" / (c.name + ".geojson"), export_categorical_map(cells));
  }
}

// ---------------------------------------------------------------------------
// Manifest and the full run

inline constexpr const char* kPartialMarker = ".partial";

inline std::string build_manifest(const PipelineConfig& cfg) {
  using nlohmann::json;
  json inputs = json::array();
  std::set<std::pair<std::string, std::string>> seen;
  auto add_input = [&](const std::string& key, const fs::path& p) {
    if (!seen.insert({key, p.string()}).second) return;
    inputs.push_back({{"key", key}, {"file", p.filename().string()}, {"sha256", sha256_file(p.string())}});
  };
  for (const auto& c : cfg.cities) {
    for (const auto& p : c.osm) add_input(c.name + ".osm", p);
    for (const auto& p : c.buildings) add_input(c.name + ".buildings", p);
    for (const auto& p : c.landuse) add_input(c.name + ".landuse", p);
    for (const auto& p : c.points) add_input(c.name + ".points", p);
    if (c.ntl) add_input(c.name + ".ntl", *c.ntl);
    if (c.population) add_input(c.name + ".population", *c.population);
    if (c.probs) add_input(c.name + ".probs", *c.probs);
  }
  if (cfg.model && cfg.backend == Backend::Cnn) add_input("model", *cfg.model);

  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(cfg.out)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), cfg.out).generic_string();
    if (rel == "manifest.json" || rel == kPartialMarker) continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  json artifacts = json::array();
  for (const auto& f : files)
    artifacts.push_back({{"path", f},
                         {"bytes", fs::file_size(cfg.out / f)},
                         {"sha256", sha256_file((cfg.out / f).string())}});

  // configuration digest over the canonical key order, paths excluded
  std::string canon;
  for (const auto& [k, v] : cfg.raw) canon += k + "=" + v + "\n";
  json m = {{"format", "morphogrid-manifest-1"},
            {"seed", cfg.seed},
            {"backend", backend_name(cfg.backend)},
            {"config_sha256", sha256_hex(canon)},
            {"inputs", inputs},
            {"artifacts", artifacts}};
  return m.dump(1) + "\n";
}

struct RunSummary {
  std::size_t artifacts = 0;
  std::string manifest_sha256;
};

// Full pipeline. On failure the output directory keeps whatever was written
// plus a `.partial` marker holding the error message.
inline RunSummary cmd_run(const PipelineConfig& cfg) {
  validate_config(cfg);
  fs::create_directories(cfg.out);
  const auto marker = cfg.out / kPartialMarker;
  pipeline_detail::write_file(marker, "running\n");
  try {
    stage_ingest(cfg);
    stage_grid(cfg);
    stage_render(cfg);
    stage_classify(cfg);
    stage_indices(cfg);
    stage_vitality(cfg);
    stage_fit(cfg);
    stage_analyze(cfg);
  } catch (const std::exception& e) {
    pipeline_detail::write_file(marker, std::string(e.what()) + "\n");
    throw;
  }
  fs::remove(marker);
  const auto manifest = build_manifest(cfg);
  pipeline_detail::write_file(cfg.out / "manifest.json", manifest);
  RunSummary s;
  s.manifest_sha256 = sha256_hex(manifest);
  s.artifacts = nlohmann::json::parse(manifest).at("artifacts").size();
  return s;
}

// ---------------------------------------------------------------------------
// Training

struct TrainRun {
  TrainResult result;
  EvalReport test_report;
  std::string checkpoint_sha256;
};

// Labelled dataset manifest `path,label,split`, paths relative to the file.
inline std::vector<TrainSample> load_dataset_manifest(const fs::path& manifest, int input_size) {
  const auto t = csv::read_file(manifest.string());
  const auto ip = t.column("path"), il = t.column("label"), is = t.column("split");
  std::vector<TrainSample> out;
  for (const auto& r : t.rows) {
    fs::path p(r[ip]);
    if (!p.is_absolute()) p = manifest.parent_path() / p;
    RoadCategory label;
    Split split;
    try {
      label = parse_category(r[il]);
      split = parse_split(r[is]);
    } catch (const ArgumentError& e) {
      throw FormatError(manifest.filename().string() + ": " + e.what());
    }
    out.push_back(make_sample(read_png_file(p.string()), label, split, input_size));
  }
  return out;
}

inline TrainRun cmd_train(const TrainOptions& opt, const fs::path& checkpoint,
                          const std::optional<fs::path>& dataset = std::nullopt,
                          const std::function<void(int, const EpochStats&)>& on_epoch = {}) {
  std::vector<TrainSample> data;
  if (dataset) {
    data = load_dataset_manifest(*dataset, opt.arch.input_size);
  } else {
    DatasetOptions dopt;
    dopt.max_jitter = opt.max_jitter;
    data = gen_training_samples(opt.n_per_class, opt.train.seed, dopt, opt.arch.input_size);
  }
  TrainRun run;
  run.result = cnn_train(data, opt.train, opt.arch, on_epoch);
  std::vector<CategoryProbs> preds;
  std::vector<RoadCategory> labels;
  for (const auto& s : data) {
    if (s.split != Split::Test) continue;
    preds.push_back(cnn_forward(run.result.model, to_double(s.input)));
    labels.push_back(s.label);
  }
  if (preds.empty()) throw ArgumentError("train: dataset has no test split");
  run.test_report = evaluate(preds, labels);
  const auto bytes = save_cnn(run.result.model);
  pipeline_detail::write_file(checkpoint, bytes);
  run.checkpoint_sha256 = sha256_hex(bytes);
  return run;
}

}  // namespace morphogrid
