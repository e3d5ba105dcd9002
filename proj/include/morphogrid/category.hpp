#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "morphogrid/error.hpp"

namespace morphogrid {

// Road network category; the numeric order is also the tie-break order.
enum class RoadCategory : int { Gridiron = 0, Organic = 1, Radial = 2, NoPattern = 3 };

inline constexpr int kCategoryCount = 4;

inline constexpr std::array<RoadCategory, kCategoryCount> kAllCategories = {
    RoadCategory::Gridiron, RoadCategory::Organic, RoadCategory::Radial, RoadCategory::NoPattern};

inline std::string_view category_name(RoadCategory c) {
  switch (c) {
    case RoadCategory::Gridiron: return "gridiron";
    case RoadCategory::Organic: return "organic";
    case RoadCategory::Radial: return "radial";
    case RoadCategory::NoPattern: return "nopattern";
  }
  return "nopattern";
}

inline RoadCategory parse_category(std::string_view s) {
  for (auto c : kAllCategories)
    if (category_name(c) == s) return c;
  if (s == "no pattern" || s == "no_pattern") return RoadCategory::NoPattern;
  throw ArgumentError("unknown road category '" + std::string(s) + "'");
}

inline std::size_t index_of(RoadCategory c) { return static_cast<std::size_t>(c); }

struct CategoryProbs {
  std::array<double, kCategoryCount> p{0.25, 0.25, 0.25, 0.25};

  double operator[](RoadCategory c) const { return p[index_of(c)]; }

  bool valid(double tol = 1e-6) const {
    double s = 0.0;
    for (double v : p) {
      if (!(v >= 0.0 && v <= 1.0)) return false;
      s += v;
    }
    return std::abs(s - 1.0) <= tol;
  }
};

// Numerically stable softmax.
inline CategoryProbs softmax(const std::array<double, kCategoryCount>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  CategoryProbs out;
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.p[i] = std::exp(logits[i] - m);
    s += out.p[i];
  }
  for (auto& v : out.p) v /= s;
  return out;
}

// Argmax; ties go to the lowest category index.
inline RoadCategory assign_category(const CategoryProbs& probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.p.size(); ++i)
    if (probs.p[i] > probs.p[best]) best = i;
  return static_cast<RoadCategory>(best);
}

}  // namespace morphogrid
