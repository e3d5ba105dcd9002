#pragma once

// Procedural road networks for the four road-network categories, used to
// train and check the classifiers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "morphogrid/category.hpp"
#include "morphogrid/crhd.hpp"
#include "morphogrid/geo.hpp"
#include "morphogrid/rng.hpp"
#include "morphogrid/road_graph.hpp"

namespace morphogrid {

struct SynthParams {
  std::uint64_t seed = 1;
  double extent_m = 2000.0;  // side of the square window
  double jitter = 0.0;       // [0, 1)
  GeoPoint center{0.0, 0.0};
  // gridiron
  double spacing_m = 120.0;
  double rotation_deg = 0.0;
  // radial
  int spokes = 8;
  int rings = 3;
  double hub_offset_m = 0.0;
  // organic
  int walkers = 5;
  double walk_step_m = 60.0;
  // no pattern
  int segments = 6;

  void validate() const {
    if (!(extent_m > 0.0)) throw ArgumentError("synth: extent_m must be > 0");
    if (!(jitter >= 0.0 && jitter < 1.0)) throw ArgumentError("synth: jitter must be in [0,1)");
    if (spokes < 4) throw ArgumentError("synth: spoke count must be >= 4");
    if (!(spacing_m > 0.0) || !(walk_step_m > 0.0) || rings < 0 || walkers < 1 || segments < 0)
      throw ArgumentError("synth: invalid density knob");
  }
};

namespace synth_detail {

struct LocalWay {
  std::vector<Xy> pts;
  const char* highway;
};

inline constexpr double kDeg = std::numbers::pi / 180.0;

inline Xy rotate(const Xy& p, double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  return {c * p.x - s * p.y, s * p.x + c * p.y};
}

// Splits ways into maximal runs of vertices inside the square window.
inline std::vector<LocalWay> crop(const std::vector<LocalWay>& ways, double half) {
  std::vector<LocalWay> out;
  for (const auto& w : ways) {
    LocalWay cur{{}, w.highway};
    for (const auto& p : w.pts) {
      if (std::abs(p.x) <= half && std::abs(p.y) <= half) {
        cur.pts.push_back(p);
      } else {
        if (cur.pts.size() >= 2) out.push_back(cur);
        cur.pts.clear();
      }
    }
    if (cur.pts.size() >= 2) out.push_back(cur);
  }
  return out;
}

// Inserts shared vertices at every proper crossing between segments so that
// build_graph joins crossing streets.
inline void node_crossings(std::vector<LocalWay>& ways) {
  struct Hit {
    double t;
    Xy p;
  };
  std::vector<std::vector<std::vector<Hit>>> hits(ways.size());
  for (std::size_t i = 0; i < ways.size(); ++i) hits[i].resize(ways[i].pts.size());
  for (std::size_t i = 0; i < ways.size(); ++i) {
    for (std::size_t a = 1; a < ways[i].pts.size(); ++a) {
      const Xy p = ways[i].pts[a - 1], r{ways[i].pts[a].x - p.x, ways[i].pts[a].y - p.y};
      for (std::size_t j = i; j < ways.size(); ++j) {
        for (std::size_t b = (j == i ? a + 2 : 1); b < ways[j].pts.size(); ++b) {
          const Xy q = ways[j].pts[b - 1], s{ways[j].pts[b].x - q.x, ways[j].pts[b].y - q.y};
          const double den = r.x * s.y - r.y * s.x;
          if (std::abs(den) < 1e-12) continue;
          const double qpx = q.x - p.x, qpy = q.y - p.y;
          const double t = (qpx * s.y - qpy * s.x) / den;
          const double u = (qpx * r.y - qpy * r.x) / den;
          if (t <= 1e-9 || t >= 1 - 1e-9 || u <= 1e-9 || u >= 1 - 1e-9) continue;
          const Xy x{p.x + t * r.x, p.y + t * r.y};
          hits[i][a].push_back({t, x});
          hits[j][b].push_back({u, x});
        }
      }
    }
  }
  for (std::size_t i = 0; i < ways.size(); ++i) {
    std::vector<Xy> pts{ways[i].pts.front()};
    for (std::size_t a = 1; a < ways[i].pts.size(); ++a) {
      auto& h = hits[i][a];
      std::sort(h.begin(), h.end(), [](const Hit& l, const Hit& r) { return l.t < r.t; });
      for (const auto& x : h) pts.push_back(x.p);
      pts.push_back(ways[i].pts[a]);
    }
    ways[i].pts = std::move(pts);
  }
}

inline std::vector<LocalWay> gridiron(const SynthParams& sp, Rng& rng) {
  const double s = sp.spacing_m, half = sp.extent_m / 2;
  const int k = static_cast<int>(std::ceil(0.75 * sp.extent_m / s)) + 1;
  const int n = 2 * k + 1;
  const double rot = sp.rotation_deg * kDeg;
  std::vector<Xy> lattice(static_cast<std::size_t>(n * n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      Xy p{(i - k) * s, (j - k) * s};
      if (sp.jitter > 0.0) {
        p.x += sp.jitter * s * rng.uniform(-0.5, 0.5);
        p.y += sp.jitter * s * rng.uniform(-0.5, 0.5);
      }
      lattice[static_cast<std::size_t>(i * n + j)] = rotate(p, rot);
    }
  auto tier_for = [](int idx) -> const char* {
    if (idx % 8 == 0) return "primary";
    if (idx % 4 == 0) return "secondary";
    if (idx % 2 == 0) return "tertiary";
    return "residential";
  };
  const int phase_x = static_cast<int>(rng.below(8)), phase_y = static_cast<int>(rng.below(8));
  std::vector<LocalWay> ways;
  for (int j = 0; j < n; ++j) {
    LocalWay w{{}, tier_for(j + phase_y)};
    for (int i = 0; i < n; ++i) w.pts.push_back(lattice[static_cast<std::size_t>(i * n + j)]);
    ways.push_back(std::move(w));
  }
  for (int i = 0; i < n; ++i) {
    LocalWay w{{}, tier_for(i + phase_x)};
    for (int j = 0; j < n; ++j) w.pts.push_back(lattice[static_cast<std::size_t>(i * n + j)]);
    ways.push_back(std::move(w));
  }
  return crop(ways, half);
}

inline std::vector<LocalWay> radial(const SynthParams& sp, Rng& rng) {
  const double half = sp.extent_m / 2;
  const double reach = 0.75 * sp.extent_m;
  const int rings = std::max(sp.rings, 0);
  const double ring_gap = half * 0.9 / std::max(rings, 1);
  const Xy hub = rotate({sp.hub_offset_m, 0.0}, rng.uniform(0.0, 2 * std::numbers::pi));
  const double theta0 = rng.uniform(0.0, 2 * std::numbers::pi);
  std::vector<double> angles;
  for (int s = 0; s < sp.spokes; ++s)
    angles.push_back(theta0 + 2 * std::numbers::pi * s / sp.spokes +
                     sp.jitter * 0.3 * (2 * std::numbers::pi / sp.spokes) * rng.uniform(-0.5, 0.5));
  // radii: major rings at k*gap, minor rings half-way between
  std::vector<std::pair<double, const char*>> radii;
  for (int r = 1; r <= rings; ++r) {
    radii.push_back({(r - 0.5) * ring_gap, "residential"});
    radii.push_back({r * ring_gap, r % 2 == 0 ? "secondary" : "tertiary"});
  }
  auto at = [&](double angle, double rad) {
    return Xy{hub.x + rad * std::cos(angle), hub.y + rad * std::sin(angle)};
  };
  // ring/spoke crossing points, shared by both ways
  std::vector<std::vector<Xy>> cross(angles.size());
  for (std::size_t s = 0; s < angles.size(); ++s)
    for (const auto& [rad, hw] : radii) {
      const double wob = sp.jitter > 0 ? 1.0 + 0.1 * sp.jitter * rng.uniform(-1.0, 1.0) : 1.0;
      cross[s].push_back(at(angles[s], rad * wob));
    }
  std::vector<LocalWay> ways;
  for (std::size_t s = 0; s < angles.size(); ++s) {
    LocalWay w{{hub}, s % 2 == 0 ? "primary" : "secondary"};
    for (const auto& p : cross[s]) w.pts.push_back(p);
    w.pts.push_back(at(angles[s], reach));
    ways.push_back(std::move(w));
  }
  const int sub = 6;
  for (std::size_t r = 0; r < radii.size(); ++r) {
    LocalWay w{{}, radii[r].second};
    for (std::size_t s = 0; s < angles.size(); ++s) {
      const double a0 = angles[s];
      double a1 = angles[(s + 1) % angles.size()];
      if (a1 <= a0) a1 += 2 * std::numbers::pi;
      w.pts.push_back(cross[s][r]);
      for (int k = 1; k < sub; ++k) w.pts.push_back(at(a0 + (a1 - a0) * k / sub, radii[r].first));
    }
    w.pts.push_back(cross[0][r]);
    ways.push_back(std::move(w));
  }
  return crop(ways, half);
}

inline std::vector<Xy> random_walk(Rng& rng, Xy start, double heading, double step, int max_steps,
                                   double half) {
  std::vector<Xy> pts{start};
  double turn = 0.0;
  const double max_turn = 25.0 * kDeg;
  for (int i = 0; i < max_steps; ++i) {
    turn = std::clamp(0.7 * turn + rng.uniform(-12.0, 12.0) * kDeg, -max_turn, max_turn);
    heading += turn;
    Xy next{pts.back().x + step * std::cos(heading), pts.back().y + step * std::sin(heading)};
    pts.push_back(next);
    if (std::abs(next.x) > half || std::abs(next.y) > half) break;
  }
  return pts;
}

inline std::vector<LocalWay> organic(const SynthParams& sp, Rng& rng) {
  const double half = sp.extent_m / 2;
  static const char* major_tiers[] = {"primary", "secondary", "tertiary", "secondary", "tertiary"};
  std::vector<LocalWay> ways;
  for (int w = 0; w < sp.walkers; ++w) {
    // enter from a random side, heading roughly inward
    const int side = static_cast<int>(rng.below(4));
    const double along = rng.uniform(-0.8, 0.8) * half;
    const Xy starts[4] = {{-half, along}, {half, along}, {along, -half}, {along, half}};
    const double inward[4] = {0.0, std::numbers::pi, std::numbers::pi / 2, -std::numbers::pi / 2};
    const double heading = inward[side] + rng.uniform(-40.0, 40.0) * kDeg;
    const int steps = static_cast<int>(2.5 * sp.extent_m / sp.walk_step_m);
    ways.push_back({random_walk(rng, starts[side], heading, sp.walk_step_m, steps, half * 1.05),
                    major_tiers[w % 5]});
  }
  const std::size_t majors = ways.size();
  for (int m = 0; m < 3 * sp.walkers; ++m) {
    const auto& base = ways[rng.below(majors)].pts;
    const Xy start = base[rng.below(base.size())];
    const double heading = rng.uniform(0.0, 2 * std::numbers::pi);
    const int steps = 3 + static_cast<int>(rng.below(6));
    ways.push_back({random_walk(rng, start, heading, sp.walk_step_m * 0.6, steps, half),
                    "residential"});
  }
  node_crossings(ways);
  return crop(ways, half);
}

inline std::vector<LocalWay> no_pattern(const SynthParams& sp, Rng& rng) {
  const double half = sp.extent_m / 2;
  std::vector<LocalWay> ways;
  for (int s = 0; s < sp.segments; ++s) {
    const Xy start{rng.uniform(-0.9, 0.9) * half, rng.uniform(-0.9, 0.9) * half};
    const int steps = 2 + static_cast<int>(rng.below(4));
    const char* hw = rng.uniform() < 0.25 ? "service" : "residential";
    ways.push_back({random_walk(rng, start, rng.uniform(0.0, 2 * std::numbers::pi), 70.0, steps, half), hw});
  }
  if (rng.uniform() < 0.5) {
    const Xy start{rng.uniform(-0.9, 0.9) * half, rng.uniform(-0.9, 0.9) * half};
    ways.push_back({random_walk(rng, start, rng.uniform(0.0, 2 * std::numbers::pi), 60.0, 2, half),
                    "tertiary"});
  }
  node_crossings(ways);
  return crop(ways, half);
}

}  // namespace synth_detail

// Raw ways (with OSM highway tags) for one synthetic network.
inline std::vector<RawWay> gen_ways(RoadCategory category, const SynthParams& params) {
  params.validate();
  Rng rng(params.seed);
  std::vector<synth_detail::LocalWay> local;
  switch (category) {
    case RoadCategory::Gridiron: local = synth_detail::gridiron(params, rng); break;
    case RoadCategory::Radial: local = synth_detail::radial(params, rng); break;
    case RoadCategory::Organic: local = synth_detail::organic(params, rng); break;
    case RoadCategory::NoPattern: local = synth_detail::no_pattern(params, rng); break;
    default: throw ArgumentError("gen_category: unknown category");
  }
  std::vector<RawWay> ways;
  ways.reserve(local.size());
  for (const auto& w : local) {
    RawWay rw{{}, w.highway};
    for (const auto& p : w.pts) rw.line.push_back(geo::aeqd_inverse(params.center, p));
    ways.push_back(std::move(rw));
  }
  return ways;
}

inline RoadGraph gen_category(RoadCategory category, const SynthParams& params) {
  return build_graph(gen_ways(category, params));
}

// Randomized parameters for one instance of a category; `max_jitter` caps the
// lattice/spoke jitter.
inline SynthParams random_params(RoadCategory category, std::uint64_t seed, double max_jitter = 0.1) {
  Rng rng(derive_seed(seed, "params"));
  SynthParams p;
  p.seed = derive_seed(seed, "geometry");
  p.jitter = rng.uniform(0.0, max_jitter);
  switch (category) {
    case RoadCategory::Gridiron:
      p.spacing_m = rng.uniform(90.0, 160.0);
      p.rotation_deg = rng.uniform(0.0, 90.0);
      break;
    case RoadCategory::Radial:
      p.spokes = 6 + static_cast<int>(rng.below(7));
      p.rings = 2 + static_cast<int>(rng.below(3));
      p.hub_offset_m = rng.uniform(0.0, 0.05) * p.extent_m;
      break;
    case RoadCategory::Organic:
      p.walkers = 4 + static_cast<int>(rng.below(4));
      p.walk_step_m = rng.uniform(50.0, 80.0);
      break;
    case RoadCategory::NoPattern:
      p.segments = 3 + static_cast<int>(rng.below(6));
      break;
  }
  return p;
}

enum class Split : int { Train = 0, Validation = 1, Test = 2 };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "validation" || s == "val") return Split::Validation;
  if (s == "test") return Split::Test;
  throw FormatError("unknown split '" + std::string(s) + "'");
}

// A dataset entry before rendering.
struct DatasetSpec {
  std::size_t index = 0;
  RoadCategory label = RoadCategory::Gridiron;
  Split split = Split::Train;
  SynthParams params;
};

struct LabelledImage {
  CrhdImage image;
  RoadCategory label;
  Split split;
};

struct DatasetOptions {
  int size_px = kDefaultCrhdSize;
  double max_jitter = 0.1;
  double train_frac = 0.8;
  double validation_frac = 0.1;
};

// 4 * n_per_class specs, class-major, with a stratified seeded split.
inline std::vector<DatasetSpec> gen_dataset_specs(int n_per_class, std::uint64_t seed,
                                                  const DatasetOptions& opt = {}) {
  if (n_per_class < 1) throw ArgumentError("gen_dataset: n_per_class must be >= 1");
  std::vector<DatasetSpec> specs;
  const auto n = static_cast<std::size_t>(n_per_class);
  const auto n_train = static_cast<std::size_t>(std::llround(opt.train_frac * n_per_class));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(opt.validation_frac * n_per_class)));
  for (auto c : kAllCategories) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(seed, "split", index_of(c)));
    rng.shuffle(order);
    std::vector<Split> split_of(n);
    for (std::size_t r = 0; r < n; ++r)
      split_of[order[r]] = r < n_train ? Split::Train : (r < n_train + n_val ? Split::Validation : Split::Test);
    for (std::size_t i = 0; i < n; ++i) {
      DatasetSpec s;
      s.index = specs.size();
      s.label = c;
      s.split = split_of[i];
      s.params = random_params(c, derive_seed(seed, "synth", s.index), opt.max_jitter);
      specs.push_back(s);
    }
  }
  return specs;
}

inline CrhdImage render_spec(const DatasetSpec& spec, int size_px = kDefaultCrhdSize) {
  const RoadGraph g = gen_category(spec.label, spec.params);
  return truncate_minor(render_crhd(g, spec.params.center, spec.params.extent_m / 2, size_px));
}

inline std::vector<LabelledImage> gen_dataset(int n_per_class, std::uint64_t seed,
                                              const DatasetOptions& opt = {}) {
  std::vector<LabelledImage> out;
  for (const auto& s : gen_dataset_specs(n_per_class, seed, opt))
    out.push_back({render_spec(s, opt.size_px), s.label, s.split});
  return out;
}

// Manifest rows `path,label,split`; `path_of` maps a spec to its image path.
template <typename PathFn>
void write_dataset_manifest(std::ostream& out, const std::vector<DatasetSpec>& specs, PathFn path_of) {
  out << "path,label,split\n";
  for (const auto& s : specs)
    out << path_of(s) << ',' << category_name(s.label) << ',' << split_name(s.split) << '\n';
}

}  // namespace morphogrid
