#pragma once

// Reduced residual CNN for CRHD classification:
//
//   stem conv3x3 (stride s) -> ReLU
//   N x [ h + conv3x3(ReLU(conv3x3(h))) -> 2x2 average pool ]
//   ReLU -> global average pool -> dense(4) -> softmax
//
// All tensors are CHW, 64-bit. Parameters live in one flat vector so the
// optimizer, checkpoints and gradient checks share a single indexing.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "morphogrid/category.hpp"
#include "morphogrid/crhd.hpp"
#include "morphogrid/error.hpp"
#include "morphogrid/rng.hpp"
#include "morphogrid/synth.hpp"

namespace morphogrid {

struct CnnArch {
  int input_size = 128;
  int channels = 8;
  int stem_stride = 2;
  int blocks = 3;

  int stem_size() const { return (input_size - 1) / stem_stride + 1; }
  int final_size() const { return stem_size() >> blocks; }
  friend bool operator==(const CnnArch&, const CnnArch&) = default;
};

struct TensorShape {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::size_t offset = 0;

  std::size_t size() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

struct CnnModel {
  CnnArch arch;
  std::vector<TensorShape> layout;
  std::vector<double> params;

  std::size_t parameter_count() const { return params.size(); }

  std::span<double> tensor(std::size_t i) { return {params.data() + layout[i].offset, layout[i].size()}; }
  std::span<const double> tensor(std::size_t i) const {
    return {params.data() + layout[i].offset, layout[i].size()};
  }
};

namespace cnn_detail {

// Tensor indices within the layout.
inline std::size_t stem_w() { return 0; }
inline std::size_t stem_b() { return 1; }
inline std::size_t block_w(int block, int conv) { return 2 + 4 * static_cast<std::size_t>(block) + 2 * static_cast<std::size_t>(conv); }
inline std::size_t block_b(int block, int conv) { return block_w(block, conv) + 1; }
inline std::size_t dense_w(const CnnArch& a) { return 2 + 4 * static_cast<std::size_t>(a.blocks); }
inline std::size_t dense_b(const CnnArch& a) { return dense_w(a) + 1; }

inline std::vector<TensorShape> make_layout(const CnnArch& a) {
  const auto c = static_cast<std::uint32_t>(a.channels);
  std::vector<TensorShape> l;
  l.push_back({"stem.weight", {c, 3, 3, 3}});
  l.push_back({"stem.bias", {c}});
  for (int b = 0; b < a.blocks; ++b)
    for (int k = 1; k <= 2; ++k) {
      const std::string p = "block" + std::to_string(b) + ".conv" + std::to_string(k);
      l.push_back({p + ".weight", {c, c, 3, 3}});
      l.push_back({p + ".bias", {c}});
    }
  l.push_back({"dense.weight", {static_cast<std::uint32_t>(kCategoryCount), c}});
  l.push_back({"dense.bias", {static_cast<std::uint32_t>(kCategoryCount)}});
  std::size_t off = 0;
  for (auto& t : l) {
    t.offset = off;
    off += t.size();
  }
  return l;
}

// out (oc x m x m) = conv3x3(in (ic x n x n), pad 1, stride) + bias
inline void conv_forward(std::span<const double> in, int ic, int n, std::span<const double> w,
                         std::span<const double> bias, int oc, int stride, std::span<double> out) {
  const int m = (n - 1) / stride + 1;
  const auto nn = static_cast<std::size_t>(n) * n, mm = static_cast<std::size_t>(m) * m;
  for (int o = 0; o < oc; ++o) {
    double* dst = out.data() + o * mm;
    std::fill(dst, dst + mm, bias[o]);
    for (int i = 0; i < ic; ++i) {
      const double* src = in.data() + i * nn;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = w[((static_cast<std::size_t>(o) * ic + i) * 3 + ky) * 3 + kx];
          for (int y = 0; y < m; ++y) {
            const int sy = y * stride + ky - 1;
            if (sy < 0 || sy >= n) continue;
            double* drow = dst + static_cast<std::size_t>(y) * m;
            const double* srow = src + static_cast<std::size_t>(sy) * n;
            // valid x: 0 <= x*stride + kx - 1 < n
            const int x0 = kx == 0 ? 1 : 0;
            const int x1 = std::min(m, (n - kx) / stride + 1);
            if (stride == 1) {
              const double* s = srow + kx - 1;
              for (int x = x0; x < x1; ++x) drow[x] += wv * s[x];
            } else {
              for (int x = x0; x < x1; ++x) drow[x] += wv * srow[x * stride + kx - 1];
            }
          }
        }
    }
  }
}

// Accumulates dw, db and (optionally) din for conv_forward.
inline void conv_backward(std::span<const double> in, int ic, int n, std::span<const double> w, int oc,
                          int stride, std::span<const double> dout, std::span<double> dw,
                          std::span<double> db, std::span<double> din) {
  const int m = (n - 1) / stride + 1;
  const auto nn = static_cast<std::size_t>(n) * n, mm = static_cast<std::size_t>(m) * m;
  for (int o = 0; o < oc; ++o) {
    const double* g = dout.data() + o * mm;
    double s = 0.0;
    for (std::size_t k = 0; k < mm; ++k) s += g[k];
    db[o] += s;
    for (int i = 0; i < ic; ++i) {
      const double* src = in.data() + i * nn;
      double* dsrc = din.empty() ? nullptr : din.data() + i * nn;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const std::size_t wi = ((static_cast<std::size_t>(o) * ic + i) * 3 + ky) * 3 + kx;
          const double wv = w[wi];
          double a0 = 0, a1 = 0, a2 = 0, a3 = 0;
          const int x0 = kx == 0 ? 1 : 0;
          const int x1 = std::min(m, (n - kx) / stride + 1);
          for (int y = 0; y < m; ++y) {
            const int sy = y * stride + ky - 1;
            if (sy < 0 || sy >= n) continue;
            const double* grow = g + static_cast<std::size_t>(y) * m;
            const double* srow = src + static_cast<std::size_t>(sy) * n;
            if (stride == 1) {
              const double* sp = srow + kx - 1;
              int x = x0;
              for (; x + 3 < x1; x += 4) {
                a0 += grow[x] * sp[x];
                a1 += grow[x + 1] * sp[x + 1];
                a2 += grow[x + 2] * sp[x + 2];
                a3 += grow[x + 3] * sp[x + 3];
              }
              for (; x < x1; ++x) a0 += grow[x] * sp[x];
              if (dsrc) {
                double* dp = dsrc + static_cast<std::size_t>(sy) * n + kx - 1;
                for (int xx = x0; xx < x1; ++xx) dp[xx] += wv * grow[xx];
              }
            } else {
              for (int x = x0; x < x1; ++x) a0 += grow[x] * srow[x * stride + kx - 1];
              if (dsrc) {
                double* drow = dsrc + static_cast<std::size_t>(sy) * n;
                for (int x = x0; x < x1; ++x) drow[x * stride + kx - 1] += wv * grow[x];
              }
            }
          }
          dw[wi] += (a0 + a1) + (a2 + a3);
        }
    }
  }
}

inline void avgpool2(std::span<const double> in, int c, int n, std::span<double> out) {
  const int m = n / 2;
  for (int ch = 0; ch < c; ++ch) {
    const double* s = in.data() + static_cast<std::size_t>(ch) * n * n;
    double* d = out.data() + static_cast<std::size_t>(ch) * m * m;
    for (int y = 0; y < m; ++y)
      for (int x = 0; x < m; ++x) {
        const double* r0 = s + static_cast<std::size_t>(2 * y) * n + 2 * x;
        const double* r1 = r0 + n;
        d[static_cast<std::size_t>(y) * m + x] = 0.25 * ((r0[0] + r0[1]) + (r1[0] + r1[1]));
      }
  }
}

inline void avgpool2_backward(std::span<const double> dout, int c, int n, std::span<double> din) {
  const int m = n / 2;
  for (int ch = 0; ch < c; ++ch) {
    const double* g = dout.data() + static_cast<std::size_t>(ch) * m * m;
    double* d = din.data() + static_cast<std::size_t>(ch) * n * n;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        d[static_cast<std::size_t>(y) * n + x] = 0.25 * g[static_cast<std::size_t>(y / 2) * m + x / 2];
  }
}

}  // namespace cnn_detail

inline CnnModel make_cnn(const CnnArch& arch, std::uint64_t seed) {
  if (arch.input_size < 2 || arch.channels < 1 || arch.blocks < 0 || arch.stem_stride < 1)
    throw ArgumentError("cnn: invalid architecture");
  if (arch.final_size() < 1 || (arch.stem_size() % (1 << arch.blocks)) != 0)
    throw ArgumentError("cnn: input size not divisible through the pooling stages");
  CnnModel m;
  m.arch = arch;
  m.layout = cnn_detail::make_layout(arch);
  m.params.assign(m.layout.back().offset + m.layout.back().size(), 0.0);
  Rng rng(derive_seed(seed, "cnn-init"));
  for (std::size_t t = 0; t < m.layout.size(); ++t) {
    const auto& shape = m.layout[t];
    if (shape.dims.size() == 1) continue;  // biases start at zero
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < shape.dims.size(); ++d) fan_in *= shape.dims[d];
    const double gain = t == cnn_detail::dense_w(arch) ? 1.0 : 2.0;
    const double sd = std::sqrt(gain / static_cast<double>(fan_in));
    for (auto& w : m.tensor(t)) w = sd * rng.normal();
  }
  return m;
}

// Area-average resample of an RGB image to size x size, channels scaled to
// [0,1], CHW layout.
inline std::vector<double> prepare_input(const CrhdImage& img, int size) {
  const int n = img.size;
  // separable overlap weights: w[o] lists (source index, weight)
  std::vector<std::vector<std::pair<int, double>>> wts(static_cast<std::size_t>(size));
  const double f = static_cast<double>(n) / size;
  for (int o = 0; o < size; ++o) {
    const double lo = o * f, hi = (o + 1) * f;
    for (int s = static_cast<int>(std::floor(lo)); s < std::min(n, static_cast<int>(std::ceil(hi))); ++s) {
      const double w = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
      if (w > 0) wts[static_cast<std::size_t>(o)].push_back({s, w / f});
    }
  }
  std::vector<double> out(3 * static_cast<std::size_t>(size) * size, 0.0);
  for (int oy = 0; oy < size; ++oy)
    for (int ox = 0; ox < size; ++ox) {
      double acc[3] = {0, 0, 0};
      for (const auto& [sy, wy] : wts[static_cast<std::size_t>(oy)])
        for (const auto& [sx, wx] : wts[static_cast<std::size_t>(ox)]) {
          const Rgb c = img.at(sx, sy);
          acc[0] += wy * wx * c.r;
          acc[1] += wy * wx * c.g;
          acc[2] += wy * wx * c.b;
        }
      for (int ch = 0; ch < 3; ++ch)
        out[(static_cast<std::size_t>(ch) * size + oy) * size + ox] = acc[ch] / 255.0;
    }
  return out;
}

// Activations kept for the backward pass.
struct CnnTrace {
  std::vector<double> input;
  std::vector<double> stem_pre;                 // before ReLU
  std::vector<std::vector<double>> block_in;    // per block
  std::vector<std::vector<double>> block_mid;   // conv1 output, before ReLU
  std::vector<std::vector<double>> block_sum;   // h + conv2(...)
  std::vector<double> head_in;                  // output of last block, before ReLU
  std::vector<double> pooled;                   // GAP of ReLU(head_in)
  std::array<double, kCategoryCount> logits{};
  CategoryProbs probs;
};

inline CnnTrace cnn_forward_trace(const CnnModel& m, std::vector<double> input) {
  using namespace cnn_detail;
  const CnnArch& a = m.arch;
  const int c = a.channels;
  if (input.size() != 3 * static_cast<std::size_t>(a.input_size) * a.input_size)
    throw ArgumentError("cnn_forward: input has wrong size");
  CnnTrace t;
  t.input = std::move(input);
  int n = a.stem_size();
  t.stem_pre.resize(static_cast<std::size_t>(c) * n * n);
  conv_forward(t.input, 3, a.input_size, m.tensor(stem_w()), m.tensor(stem_b()), c, a.stem_stride, t.stem_pre);
  std::vector<double> h(t.stem_pre.size());
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::max(0.0, t.stem_pre[i]);
  for (int b = 0; b < a.blocks; ++b) {
    const std::size_t sz = static_cast<std::size_t>(c) * n * n;
    std::vector<double> mid(sz), act(sz), sum(sz);
    conv_forward(h, c, n, m.tensor(block_w(b, 0)), m.tensor(block_b(b, 0)), c, 1, mid);
    for (std::size_t i = 0; i < sz; ++i) act[i] = std::max(0.0, mid[i]);
    conv_forward(act, c, n, m.tensor(block_w(b, 1)), m.tensor(block_b(b, 1)), c, 1, sum);
    for (std::size_t i = 0; i < sz; ++i) sum[i] += h[i];
    std::vector<double> next(static_cast<std::size_t>(c) * (n / 2) * (n / 2));
    avgpool2(sum, c, n, next);
    t.block_in.push_back(std::move(h));
    t.block_mid.push_back(std::move(mid));
    t.block_sum.push_back(std::move(sum));
    h = std::move(next);
    n /= 2;
  }
  t.head_in = std::move(h);
  t.pooled.assign(static_cast<std::size_t>(c), 0.0);
  const auto area = static_cast<std::size_t>(n) * n;
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t k = 0; k < area; ++k) s += std::max(0.0, t.head_in[ch * area + k]);
    t.pooled[static_cast<std::size_t>(ch)] = s / static_cast<double>(area);
  }
  const auto dw = m.tensor(dense_w(a));
  const auto db = m.tensor(dense_b(a));
  for (int k = 0; k < kCategoryCount; ++k) {
    double z = db[static_cast<std::size_t>(k)];
    for (int ch = 0; ch < c; ++ch) z += dw[static_cast<std::size_t>(k) * c + ch] * t.pooled[static_cast<std::size_t>(ch)];
    t.logits[static_cast<std::size_t>(k)] = z;
  }
  t.probs = softmax(t.logits);
  return t;
}

inline CategoryProbs cnn_forward(const CnnModel& m, std::vector<double> input) {
  return cnn_forward_trace(m, std::move(input)).probs;
}

inline CategoryProbs cnn_forward(const CnnModel& m, const CrhdImage& img) {
  return cnn_forward(m, prepare_input(img, m.arch.input_size));
}

// Adds d(cross-entropy)/d(params) for one example into `grad`; returns the
// example's loss.
inline double cnn_backward(const CnnModel& m, const CnnTrace& t, RoadCategory label, std::span<double> grad) {
  using namespace cnn_detail;
  const CnnArch& a = m.arch;
  const int c = a.channels;
  auto g = [&](std::size_t idx) { return grad.subspan(m.layout[idx].offset, m.layout[idx].size()); };
  const std::size_t y = index_of(label);
  const double loss = -std::log(std::max(t.probs.p[y], 1e-300));

  std::array<double, kCategoryCount> dlogit{};
  for (std::size_t k = 0; k < kAllCategories.size(); ++k) dlogit[k] = t.probs.p[k] - (k == y ? 1.0 : 0.0);
  const auto dense = m.tensor(dense_w(a));
  auto gdw = g(dense_w(a));
  auto gdb = g(dense_b(a));
  std::vector<double> dpool(static_cast<std::size_t>(c), 0.0);
  for (std::size_t k = 0; k < kAllCategories.size(); ++k) {
    gdb[k] += dlogit[k];
    for (int ch = 0; ch < c; ++ch) {
      gdw[k * c + ch] += dlogit[k] * t.pooled[static_cast<std::size_t>(ch)];
      dpool[static_cast<std::size_t>(ch)] += dlogit[k] * dense[k * c + ch];
    }
  }
  int n = a.final_size();
  auto area = static_cast<std::size_t>(n) * n;
  std::vector<double> dh(t.head_in.size());
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t k = 0; k < area; ++k) {
      const std::size_t i = ch * area + k;
      dh[i] = t.head_in[i] > 0.0 ? dpool[static_cast<std::size_t>(ch)] / static_cast<double>(area) : 0.0;
    }
  for (int b = a.blocks - 1; b >= 0; --b) {
    const int nb = n * 2;
    const std::size_t sz = static_cast<std::size_t>(c) * nb * nb;
    std::vector<double> dsum(sz);
    avgpool2_backward(dh, c, nb, dsum);
    const auto& mid = t.block_mid[static_cast<std::size_t>(b)];
    std::vector<double> act(sz), dact(sz, 0.0);
    for (std::size_t i = 0; i < sz; ++i) act[i] = std::max(0.0, mid[i]);
    conv_backward(act, c, nb, m.tensor(block_w(b, 1)), c, 1, dsum, g(block_w(b, 1)), g(block_b(b, 1)), dact);
    for (std::size_t i = 0; i < sz; ++i)
      if (mid[i] <= 0.0) dact[i] = 0.0;
    std::vector<double> din = dsum;  // identity shortcut
    conv_backward(t.block_in[static_cast<std::size_t>(b)], c, nb, m.tensor(block_w(b, 0)), c, 1, dact,
                  g(block_w(b, 0)), g(block_b(b, 0)), din);
    dh = std::move(din);
    n = nb;
  }
  for (std::size_t i = 0; i < dh.size(); ++i)
    if (t.stem_pre[i] <= 0.0) dh[i] = 0.0;
  conv_backward(t.input, 3, a.input_size, m.tensor(stem_w()), c, a.stem_stride, dh, g(stem_w()),
                g(stem_b()), {});
  return loss;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 0.0005;
  int batch_size = 2;
  int epochs = 30;
  std::uint64_t seed = 7;
  // Adam moments
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // also record the full training-split loss after each epoch (one extra
  // forward pass per example)
  bool track_epoch_loss = false;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw ArgumentError("train: learning_rate must be >= 0");
    if (batch_size < 1) throw ArgumentError("train: batch_size must be >= 1");
    if (epochs < 0) throw ArgumentError("train: epochs must be >= 0");
  }
};

struct TrainSample {
  std::vector<float> input;  // prepared CHW tensor
  RoadCategory label = RoadCategory::Gridiron;
  Split split = Split::Train;
};

inline TrainSample make_sample(const CrhdImage& img, RoadCategory label, Split split, int input_size) {
  const auto in = prepare_input(img, input_size);
  return {std::vector<float>(in.begin(), in.end()), label, split};
}

// Renders the synthetic dataset straight into prepared tensors, so the
// full-size images never have to be held at once.
inline std::vector<TrainSample> gen_training_samples(int n_per_class, std::uint64_t seed,
                                                     const DatasetOptions& opt = {},
                                                     int input_size = CnnArch{}.input_size) {
  std::vector<TrainSample> out;
  for (const auto& s : gen_dataset_specs(n_per_class, seed, opt))
    out.push_back(make_sample(render_spec(s, opt.size_px), s.label, s.split, input_size));
  return out;
}

struct EpochStats {
  double train_loss = 0.0;  // mean loss over the epoch's updates
  std::optional<double> end_loss;  // training-split loss after the epoch
  double selection_accuracy = 0.0;
};

struct TrainResult {
  CnnModel model;
  std::vector<EpochStats> history;
  int best_epoch = 0;  // 1-based; 0 = initial weights
};

inline std::vector<double> to_double(const std::vector<float>& v) { return {v.begin(), v.end()}; }

inline double cnn_accuracy(const CnnModel& m, const std::vector<TrainSample>& data,
                           const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  std::size_t ok = 0;
  for (auto i : idx)
    if (assign_category(cnn_forward(m, to_double(data[i].input))) == data[i].label) ++ok;
  return static_cast<double>(ok) / static_cast<double>(idx.size());
}

// Mini-batch Adam on mean cross-entropy. Returns the weights with the best
// accuracy on the validation split (the training split when there is no
// validation data), ties resolved toward the earlier epoch.
inline TrainResult cnn_train(const std::vector<TrainSample>& data, const TrainConfig& cfg,
                             const CnnArch& arch = {},
                             const std::function<void(int, const EpochStats&)>& on_epoch = {}) {
  cfg.validate();
  std::vector<std::size_t> train, select;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].split == Split::Train) train.push_back(i);
    if (data[i].split == Split::Validation) select.push_back(i);
  }
  if (train.empty()) throw ArgumentError("cnn_train: empty training set");
  if (select.empty()) select = train;

  TrainResult res{make_cnn(arch, cfg.seed), {}, 0};
  CnnModel model = res.model;
  const std::size_t np = model.params.size();
  std::vector<double> mom(np, 0.0), vel(np, 0.0), grad(np);
  double best_acc = -1.0;
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = train;
    Rng rng(derive_seed(cfg.seed, "epoch", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = data[order[k]];
        const auto trace = cnn_forward_trace(model, to_double(s.input));
        loss_sum += cnn_backward(model, trace, s.label, grad);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      ++step;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < np; ++i) {
        const double gi = grad[i] * scale;
        mom[i] = cfg.beta1 * mom[i] + (1.0 - cfg.beta1) * gi;
        vel[i] = cfg.beta2 * vel[i] + (1.0 - cfg.beta2) * gi * gi;
        model.params[i] -= cfg.learning_rate * (mom[i] / c1) / (std::sqrt(vel[i] / c2) + cfg.epsilon);
      }
    }
    EpochStats st;
    st.train_loss = loss_sum / static_cast<double>(order.size());
    st.selection_accuracy = cnn_accuracy(model, data, select);
    if (cfg.track_epoch_loss) {
      double l = 0.0;
      for (auto i : train) l -= std::log(cnn_forward(model, to_double(data[i].input)).p[index_of(data[i].label)]);
      st.end_loss = l / static_cast<double>(train.size());
    }
    res.history.push_back(st);
    if (on_epoch) on_epoch(epoch, st);
    if (st.selection_accuracy > best_acc) {
      best_acc = st.selection_accuracy;
      res.model = model;
      res.best_epoch = epoch;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoint: "MGRD01", architecture, shape table, little-endian f64 weights.

namespace cnn_detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw FormatError("MGRD01: truncated");
  std::uint32_t v;
  std::memcpy(&v, in.data() + pos, 4);
  pos += 4;
  return v;
}

}  // namespace cnn_detail

inline std::string save_cnn(const CnnModel& m) {
  using namespace cnn_detail;
  std::string out = "MGRD01";
  put_u32(out, static_cast<std::uint32_t>(m.arch.input_size));
  put_u32(out, static_cast<std::uint32_t>(m.arch.channels));
  put_u32(out, static_cast<std::uint32_t>(m.arch.stem_stride));
  put_u32(out, static_cast<std::uint32_t>(m.arch.blocks));
  put_u32(out, static_cast<std::uint32_t>(m.layout.size()));
  for (const auto& t : m.layout) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
  }
  const auto* bytes = reinterpret_cast<const char*>(m.params.data());
  out.append(bytes, m.params.size() * sizeof(double));
  return out;
}

inline CnnModel load_cnn(const std::string& in) {
  using namespace cnn_detail;
  if (in.compare(0, 6, "MGRD01") != 0) throw FormatError("not an MGRD01 checkpoint");
  std::size_t pos = 6;
  CnnArch a;
  a.input_size = static_cast<int>(get_u32(in, pos));
  a.channels = static_cast<int>(get_u32(in, pos));
  a.stem_stride = static_cast<int>(get_u32(in, pos));
  a.blocks = static_cast<int>(get_u32(in, pos));
  CnnModel m = make_cnn(a, 0);
  const auto count = get_u32(in, pos);
  if (count != m.layout.size()) throw FormatError("MGRD01: layer table does not match architecture");
  for (auto& t : m.layout) {
    const auto len = get_u32(in, pos);
    if (pos + len > in.size()) throw FormatError("MGRD01: truncated");
    const std::string name = in.substr(pos, len);
    pos += len;
    const auto rank = get_u32(in, pos);
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = get_u32(in, pos);
    if (name != t.name || dims != t.dims) throw FormatError("MGRD01: unexpected tensor " + name);
  }
  if (in.size() - pos != m.params.size() * sizeof(double)) throw FormatError("MGRD01: weight block size mismatch");
  std::memcpy(m.params.data(), in.data() + pos, m.params.size() * sizeof(double));
  return m;
}

inline void save_cnn_file(const std::string& path, const CnnModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  const auto s = save_cnn(m);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline CnnModel load_cnn_file(const std::string& path) { return load_cnn(read_text_file(path)); }

}  // namespace morphogrid
