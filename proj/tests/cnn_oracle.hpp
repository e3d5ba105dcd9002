#pragma once

// Independent CNN references: a naive forward pass written directly from the
// layer definitions, and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <vector>

#include "morphogrid/cnn.hpp"

namespace mgtest {

using morphogrid::CnnModel;

// Weight lookups by name through the model layout, independent of the
// library's tensor index helpers.
inline const double* oracle_tensor(const CnnModel& m, const std::string& name) {
  for (const auto& t : m.layout)
    if (t.name == name) return m.params.data() + t.offset;
  throw std::runtime_error("oracle: no tensor " + name);
}

using Volume = std::vector<std::vector<std::vector<double>>>;  // [c][y][x]

inline Volume oracle_conv(const Volume& in, const double* w, const double* b, int oc, int stride) {
  const int ic = static_cast<int>(in.size()), n = static_cast<int>(in[0].size());
  const int m = (n + 2 - 3) / stride + 1;
  Volume out(oc, std::vector<std::vector<double>>(m, std::vector<double>(m, 0.0)));
  for (int o = 0; o < oc; ++o)
    for (int y = 0; y < m; ++y)
      for (int x = 0; x < m; ++x) {
        double s = b[o];
        for (int i = 0; i < ic; ++i)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = y * stride + ky - 1, sx = x * stride + kx - 1;
              if (sy < 0 || sx < 0 || sy >= n || sx >= n) continue;
              s += w[((o * ic + i) * 3 + ky) * 3 + kx] * in[i][sy][sx];
            }
        out[o][y][x] = s;
      }
  return out;
}

inline Volume oracle_relu(Volume v) {
  for (auto& c : v)
    for (auto& r : c)
      for (auto& x : r) x = std::max(0.0, x);
  return v;
}

inline std::array<double, morphogrid::kCategoryCount> oracle_logits(const CnnModel& m,
                                                                    const std::vector<double>& input) {
  const int s = m.arch.input_size, c = m.arch.channels;
  Volume x(3, std::vector<std::vector<double>>(s, std::vector<double>(s)));
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < s; ++y)
      for (int xx = 0; xx < s; ++xx) x[ch][y][xx] = input[(static_cast<std::size_t>(ch) * s + y) * s + xx];
  Volume h = oracle_relu(oracle_conv(x, oracle_tensor(m, "stem.weight"), oracle_tensor(m, "stem.bias"), c,
                                     m.arch.stem_stride));
  for (int b = 0; b < m.arch.blocks; ++b) {
    const std::string p = "block" + std::to_string(b);
    auto mid = oracle_relu(oracle_conv(h, oracle_tensor(m, p + ".conv1.weight"), oracle_tensor(m, p + ".conv1.bias"), c, 1));
    auto sum = oracle_conv(mid, oracle_tensor(m, p + ".conv2.weight"), oracle_tensor(m, p + ".conv2.bias"), c, 1);
    const int n = static_cast<int>(sum[0].size());
    Volume pooled(c, std::vector<std::vector<double>>(n / 2, std::vector<double>(n / 2)));
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < n / 2; ++y)
        for (int xx = 0; xx < n / 2; ++xx) {
          double a = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) a += sum[ch][2 * y + dy][2 * xx + dx] + h[ch][2 * y + dy][2 * xx + dx];
          pooled[ch][y][xx] = a / 4;
        }
    h = pooled;
  }
  h = oracle_relu(h);
  const double* dw = oracle_tensor(m, "dense.weight");
  const double* db = oracle_tensor(m, "dense.bias");
  std::array<double, morphogrid::kCategoryCount> z{};
  for (int k = 0; k < morphogrid::kCategoryCount; ++k) {
    z[k] = db[k];
    for (int ch = 0; ch < c; ++ch) {
      double g = 0;
      for (const auto& r : h[ch])
        for (double v : r) g += v;
      z[k] += dw[k * c + ch] * g / static_cast<double>(h[ch].size() * h[ch].size());
    }
  }
  return z;
}

inline std::array<double, morphogrid::kCategoryCount> oracle_probs(const CnnModel& m, const std::vector<double>& input) {
  const auto z = oracle_logits(m, input);
  double mx = z[0], s = 0;
  for (double v : z) mx = std::max(mx, v);
  std::array<double, morphogrid::kCategoryCount> p{};
  for (int k = 0; k < morphogrid::kCategoryCount; ++k) s += (p[k] = std::exp(z[k] - mx));
  for (auto& v : p) v /= s;
  return p;
}

inline double oracle_batch_loss(const CnnModel& m, const std::vector<std::vector<double>>& inputs,
                                const std::vector<morphogrid::RoadCategory>& labels) {
  double loss = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    loss -= std::log(oracle_probs(m, inputs[i])[morphogrid::index_of(labels[i])]);
  return loss;
}

struct GradCheck {
  double worst_rel = 0.0;
  std::size_t coords = 0;
};

// Analytic batch gradient from the library vs central differences of the
// oracle loss on `samples` random coordinates. Relative error uses
// max(|a|, |n|, 1e-8) as denominator so exact zeros do not blow up.
inline GradCheck check_gradient(const CnnModel& model, const std::vector<std::vector<double>>& inputs,
                                const std::vector<morphogrid::RoadCategory>& labels, std::size_t samples,
                                std::uint64_t seed, double h = 1e-5) {
  std::vector<double> grad(model.params.size(), 0.0);
  for (std::size_t i = 0; i < inputs.size(); ++i)
    morphogrid::cnn_backward(model, morphogrid::cnn_forward_trace(model, inputs[i]), labels[i], grad);
  morphogrid::Rng rng(seed);
  GradCheck out;
  CnnModel probe = model;
  for (std::size_t k = 0; k < samples; ++k) {
    const auto idx = static_cast<std::size_t>(rng.below(model.params.size()));
    const double orig = probe.params[idx];
    probe.params[idx] = orig + h;
    const double up = oracle_batch_loss(probe, inputs, labels);
    probe.params[idx] = orig - h;
    const double down = oracle_batch_loss(probe, inputs, labels);
    probe.params[idx] = orig;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::abs(grad[idx]), std::abs(numeric), 1e-8});
    out.worst_rel = std::max(out.worst_rel, std::abs(grad[idx] - numeric) / denom);
    ++out.coords;
  }
  return out;
}

// Toy architecture for the checks: 16x16 input, 4 channels, < 5000 params.
inline morphogrid::CnnArch toy_arch() {
  morphogrid::CnnArch a;
  a.input_size = 16;
  a.channels = 4;
  a.stem_stride = 2;
  a.blocks = 3;
  return a;
}

inline std::vector<double> random_input(morphogrid::Rng& rng, int size) {
  std::vector<double> v(3 * static_cast<std::size_t>(size) * size);
  for (auto& x : v) x = rng.uniform();
  return v;
}

}  // namespace mgtest
