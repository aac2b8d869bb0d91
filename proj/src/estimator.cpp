#include "ecm/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ecm/detail/kernels.hpp"
#include "ecm/ops.hpp"
#include "ecm/warp.hpp"

namespace ecm {
namespace {

struct Dims {
  std::int64_t n, c, h, w;
};

Dims dims_of(const Tensor& t, const char* what) {
  if (t.rank() != 4) throw ShapeError(std::string(what) + ": expected NCHW, got " + to_string(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

// Valid x range [lo, hi) such that x + d stays inside [0, extent).
std::pair<std::int64_t, std::int64_t> valid_range(std::int64_t d, std::int64_t extent) {
  return {std::max<std::int64_t>(0, -d), std::min(extent, extent - d)};
}

CostStats cost_stats(const Tensor& cost) {
  CostStats s{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(), 0.0};
  std::int64_t count = 0;
  for (std::int64_t i = 0; i < cost.numel(); ++i) {
    const double v = cost.at(i);
    if (v <= kMaskedCorrelation / 2) continue;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
    s.mean += v;
    ++count;
  }
  if (count == 0) return {};
  s.mean /= static_cast<double>(count);
  return s;
}

// Blend weights for the forward volume and the mirrored backward volume: each
// valid side gets an equal share, so a candidate the frame border hides from
// one direction is still scored by the other. `fill` holds the mask value
// where neither side sees the candidate.
struct CostBlend {
  Tensor forward, backward, fill;
};

CostBlend cost_blend(std::int64_t n, std::int64_t h, std::int64_t w, int r, DType dtype) {
  const std::int64_t side = 2 * r + 1;
  const Shape shape{n, side * side, h, w};
  CostBlend b{Tensor(shape, DType::kFloat64), Tensor(shape, DType::kFloat64), Tensor(shape, DType::kFloat64)};
  auto fw = b.forward.data<double>();
  auto bw = b.backward.data<double>();
  auto fill = b.fill.data<double>();
  auto inside = [](std::int64_t v, std::int64_t extent) { return v >= 0 && v < extent; };
  std::size_t i = 0;
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t dy = -r; dy <= r; ++dy)
      for (std::int64_t dx = -r; dx <= r; ++dx)
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t x = 0; x < w; ++x, ++i) {
            const bool f = inside(y + dy, h) && inside(x + dx, w);
            const bool m = inside(y - dy, h) && inside(x - dx, w);
            const double count = static_cast<double>(f) + static_cast<double>(m);
            fw[i] = f ? 1.0 / count : 0.0;
            bw[i] = m ? 1.0 / count : 0.0;
            fill[i] = count > 0 ? 0.0 : kMaskedCorrelation;
          }
  return {b.forward.cast(dtype), b.backward.cast(dtype), b.fill.cast(dtype)};
}

}  // namespace

Var local_correlation(const Var& warped, const Var& target, int r) {
  if (r < 1) throw Error("local_correlation: radius must be >= 1");
  const Dims d = dims_of(warped.value(), "local_correlation");
  if (target.value().shape() != warped.value().shape()) {
    throw ShapeError("local_correlation: shapes " + to_string(warped.value().shape()) + " and " +
                     to_string(target.value().shape()) + " differ");
  }
  kernels::check_same_dtype(warped.value(), target.value(), "local_correlation");
  const std::int64_t side = 2 * r + 1;
  const std::int64_t plane = d.h * d.w;
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(d.c));
  Tensor out(Shape{d.n, side * side, d.h, d.w}, warped.value().dtype());
  dispatch(out.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    const T* a = warped.value().data<T>().data();
    const T* b = target.value().data<T>().data();
    T* o = out.data<T>().data();
    std::vector<double> acc(static_cast<std::size_t>(plane));
    for (std::int64_t n = 0; n < d.n; ++n) {
      for (std::int64_t dy = -r; dy <= r; ++dy) {
        for (std::int64_t dx = -r; dx <= r; ++dx) {
          const std::int64_t k = (dy + r) * side + (dx + r);
          T* ok = o + (n * side * side + k) * plane;
          std::fill(ok, ok + plane, static_cast<T>(kMaskedCorrelation));
          const auto [y0, y1] = valid_range(dy, d.h);
          const auto [x0, x1] = valid_range(dx, d.w);
          std::fill(acc.begin(), acc.end(), 0.0);
          for (std::int64_t c = 0; c < d.c; ++c) {
            const T* ac = a + (n * d.c + c) * plane;
            const T* bc = b + (n * d.c + c) * plane;
            for (std::int64_t y = y0; y < y1; ++y) {
              for (std::int64_t x = x0; x < x1; ++x) {
                acc[static_cast<std::size_t>(y * d.w + x)] +=
                    static_cast<double>(ac[y * d.w + x]) * static_cast<double>(bc[(y + dy) * d.w + x + dx]);
              }
            }
          }
          for (std::int64_t y = y0; y < y1; ++y) {
            for (std::int64_t x = x0; x < x1; ++x) {
              ok[y * d.w + x] = static_cast<T>(acc[static_cast<std::size_t>(y * d.w + x)] * inv_sqrt_c);
            }
          }
        }
      }
    }
  });
  return warped.tape().record(std::move(out), {warped, target}, [warped, target, d, r, inv_sqrt_c](Tape& tape, const Tensor& g) {
    const std::int64_t side = 2 * r + 1;
    const std::int64_t plane = d.h * d.w;
    Tensor ga(warped.value().shape(), g.dtype());
    Tensor gb(target.value().shape(), g.dtype());
    dispatch(g.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      const T* a = warped.value().data<T>().data();
      const T* b = target.value().data<T>().data();
      const T* gy = g.data<T>().data();
      T* da = ga.data<T>().data();
      T* db = gb.data<T>().data();
      const T s = static_cast<T>(inv_sqrt_c);
      for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t dy = -r; dy <= r; ++dy) {
          for (std::int64_t dx = -r; dx <= r; ++dx) {
            const T* gk = gy + (n * side * side + (dy + r) * side + (dx + r)) * plane;
            const auto [y0, y1] = valid_range(dy, d.h);
            const auto [x0, x1] = valid_range(dx, d.w);
            for (std::int64_t c = 0; c < d.c; ++c) {
              const std::int64_t base = (n * d.c + c) * plane;
              for (std::int64_t y = y0; y < y1; ++y) {
                for (std::int64_t x = x0; x < x1; ++x) {
                  const std::int64_t p = y * d.w + x;
                  const std::int64_t q = (y + dy) * d.w + x + dx;
                  const T gs = gk[p] * s;
                  da[base + p] += gs * b[base + q];
                  db[base + q] += gs * a[base + p];
                }
              }
            }
          }
        }
      }
    });
    tape.accumulate(warped, ga);
    tape.accumulate(target, gb);
  });
}

Var soft_argmax_update(const Var& cost, const Var& flow_prev, int r, double tau) {
  const std::int64_t side = 2 * r + 1;
  const Dims d = dims_of(cost.value(), "soft_argmax_update");
  if (d.c != side * side) {
    throw ShapeError("soft_argmax_update: cost has " + std::to_string(d.c) + " channels, radius " + std::to_string(r) +
                     " needs " + std::to_string(side * side));
  }
  if (flow_prev.value().shape() != Shape{d.n, 2, d.h, d.w}) {
    throw ShapeError("soft_argmax_update: flow " + to_string(flow_prev.value().shape()) + " does not match cost " +
                     to_string(cost.value().shape()));
  }
  kernels::check_same_dtype(cost.value(), flow_prev.value(), "soft_argmax_update");
  const std::int64_t plane = d.h * d.w;
  const std::int64_t kk = d.c;
  // Softmax probabilities are kept for the backward pass.
  Tensor probs(cost.value().shape(), DType::kFloat64);
  Tensor out(flow_prev.value().shape(), flow_prev.value().dtype());
  dispatch(out.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    const T* cv = cost.value().data<T>().data();
    const T* fp = flow_prev.value().data<T>().data();
    T* o = out.data<T>().data();
    double* pr = probs.data<double>().data();
    for (std::int64_t n = 0; n < d.n; ++n) {
      for (std::int64_t p = 0; p < plane; ++p) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t k = 0; k < kk; ++k) mx = std::max(mx, tau * cv[(n * kk + k) * plane + p]);
        double z = 0.0;
        for (std::int64_t k = 0; k < kk; ++k) {
          const double e = std::exp(tau * cv[(n * kk + k) * plane + p] - mx);
          pr[(n * kk + k) * plane + p] = e;
          z += e;
        }
        double sx = 0.0;
        double sy = 0.0;
        for (std::int64_t k = 0; k < kk; ++k) {
          double& s = pr[(n * kk + k) * plane + p];
          s /= z;
          sx += s * static_cast<double>(k % side - r);
          sy += s * static_cast<double>(k / side - r);
        }
        o[(2 * n) * plane + p] = static_cast<T>(fp[(2 * n) * plane + p] + sx);
        o[(2 * n + 1) * plane + p] = static_cast<T>(fp[(2 * n + 1) * plane + p] + sy);
      }
    }
  });
  return cost.tape().record(std::move(out), {cost, flow_prev}, [cost, flow_prev, probs, d, r, tau](Tape& tape, const Tensor& g) {
    const std::int64_t side = 2 * r + 1;
    const std::int64_t plane = d.h * d.w;
    const std::int64_t kk = d.c;
    Tensor gc(cost.value().shape(), g.dtype());
    dispatch(g.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      const T* gy = g.data<T>().data();
      const double* pr = probs.data<double>().data();
      T* dc = gc.data<T>().data();
      for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t p = 0; p < plane; ++p) {
          const double gx = gy[(2 * n) * plane + p];
          const double gyv = gy[(2 * n + 1) * plane + p];
          double mean = 0.0;  // g . delta
          for (std::int64_t k = 0; k < kk; ++k) {
            mean += pr[(n * kk + k) * plane + p] *
                    (gx * static_cast<double>(k % side - r) + gyv * static_cast<double>(k / side - r));
          }
          for (std::int64_t k = 0; k < kk; ++k) {
            const double gd = gx * static_cast<double>(k % side - r) + gyv * static_cast<double>(k / side - r);
            dc[(n * kk + k) * plane + p] = static_cast<T>(tau * pr[(n * kk + k) * plane + p] * (gd - mean));
          }
        }
      }
    });
    tape.accumulate(cost, gc);
    tape.accumulate(flow_prev, g);
  });
}

Var rewarp_flow_to_source(const Var& updated, const Var& carrier, const Var& weight, double coverage_eps) {
  const Tensor& cv = carrier.value();
  if (updated.value().shape() != cv.shape()) {
    throw ShapeError("rewarp_flow_to_source: updated flow " + to_string(updated.value().shape()) +
                     " does not match carrier " + to_string(cv.shape()));
  }
  const Dims d = dims_of(cv, "rewarp_flow_to_source");
  const Tensor coverage = splat_coverage(cv, weight.value());
  const Tensor sampled = backward_warp_values(coverage, cv);
  Tensor holes(Shape{d.n, 1, d.h, d.w}, cv.dtype());
  dispatch(cv.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    const T* f = cv.data<T>().data();
    const T* s = sampled.data<T>().data();
    T* hm = holes.data<T>().data();
    const std::int64_t plane = d.h * d.w;
    for (std::int64_t n = 0; n < d.n; ++n) {
      for (std::int64_t y = 0; y < d.h; ++y) {
        for (std::int64_t x = 0; x < d.w; ++x) {
          const std::int64_t p = y * d.w + x;
          const double tx = static_cast<double>(x) + f[(2 * n) * plane + p];
          const double ty = static_cast<double>(y) + f[(2 * n + 1) * plane + p];
          const bool off = tx < 0 || ty < 0 || tx > static_cast<double>(d.w - 1) || ty > static_cast<double>(d.h - 1);
          hm[n * plane + p] = (off || s[n * plane + p] < coverage_eps) ? T(1) : T(0);
        }
      }
    }
  });
  return select(holes, carrier, backward_warp(updated, carrier));
}

std::vector<std::int64_t> search_range(const RunConfig& config) {
  validate(config);
  std::vector<std::int64_t> out;
  std::int64_t range = static_cast<std::int64_t>(config.initial_downsample) * config.radius;
  for (int l = 1; l <= config.levels; ++l) {
    if (l > 1) range = range * config.level_downsample + config.radius;
    out.push_back(range);
  }
  return out;
}

FlowEstimator::FlowEstimator(ParameterSet& params, const RunConfig& config) : config_(config) {
  validate(config_);
  const std::uint64_t seed = config_.seed;
  const DType dt = config_.dtype;
  const std::int64_t c = config_.encoder_width;
  enc_in_ = Conv(params, "flow.enc.in", 3, c, 3, {1, 1, 1}, seed, dt);
  for (int s = config_.initial_downsample, i = 0; s > 1; s /= 2, ++i) {
    enc_down_.emplace_back(params, "flow.enc.down" + std::to_string(i), c, c, 3, Conv2dOptions{2, 1, 1}, seed, dt);
  }
  enc_out_ = Conv(params, "flow.enc.out", c, c, 3, {1, 1, 1}, seed, dt);
  const int half = (config_.level_downsample + 1) / 2;
  down_ = Conv(params, "flow.down", c, c, 2 * half + 1, {config_.level_downsample, 1, half}, seed, dt);
  const std::int64_t u = config_.upscale_width;
  up1_ = Conv(params, "flow.up.conv1", 2 + 1 + 2 * c, u, 3, {1, 1, 1}, seed, dt);
  up2_ = Conv(params, "flow.up.conv2", u, u, 3, {1, 1, 1}, seed, dt);
  up_residual_ = Conv(params, "flow.up.residual", u, 2, 3, {1, 1, 1}, seed, dt, Init::kZero);
  up_weight_ = Conv(params, "flow.up.weight", u, 1, 3, {1, 1, 1}, seed, dt);
}

std::int64_t FlowEstimator::size_multiple() const {
  std::int64_t m = config_.initial_downsample;
  for (int l = 1; l < config_.levels; ++l) m *= config_.level_downsample;
  return m;
}

Var FlowEstimator::encode(const Var& image) const {
  const Dims d = dims_of(image.value(), "encode");
  if (d.c != 3) throw ShapeError("encode: expected 3 channels, got " + std::to_string(d.c));
  if (d.h < config_.initial_downsample || d.w < config_.initial_downsample) {
    throw ShapeError("encode: image " + std::to_string(d.h) + "x" + std::to_string(d.w) +
                     " is smaller than the encoder stride " + std::to_string(config_.initial_downsample));
  }
  // Centred input: raw [0, 1] brightness would dominate every dot product.
  Var x = leaky_relu(enc_in_(add_scalar(image, -0.5)));
  for (const auto& conv : enc_down_) x = leaky_relu(conv(x));
  return enc_out_(x);
}

Var FlowEstimator::downsample_feature(const Var& feature) const {
  const Dims d = dims_of(feature.value(), "downsample_feature");
  if (d.h < config_.level_downsample || d.w < config_.level_downsample) {
    throw ShapeError("downsample_feature: extent " + std::to_string(d.h) + "x" + std::to_string(d.w) +
                     " too small for factor " + std::to_string(config_.level_downsample));
  }
  return down_(feature);
}

FlowEstimator::Upscaled FlowEstimator::upscale_flow(const Var& flow, const Var& weight, const Var& feat_a,
                                                    const Var& feat_b) const {
  const std::int64_t f = config_.level_downsample;
  const Dims fd = dims_of(flow.value(), "upscale_flow");
  const Dims td = dims_of(feat_a.value(), "upscale_flow");
  if (td.h != fd.h * f || td.w != fd.w * f) {
    throw ShapeError("upscale_flow: features " + std::to_string(td.h) + "x" + std::to_string(td.w) +
                     " are not " + std::to_string(f) + "x the flow extents " + std::to_string(fd.h) + "x" +
                     std::to_string(fd.w));
  }
  Var up_flow = scale(resize_bilinear(flow, td.h, td.w), static_cast<double>(f));
  Var up_weight = resize_bilinear(weight, td.h, td.w);
  Var h = leaky_relu(up1_(concat({up_flow, up_weight, feat_a, feat_b}, 1)));
  h = leaky_relu(up2_(h));
  return {add(up_flow, up_residual_(h)), up_weight_(h)};
}

Var FlowEstimator::update_flow(const Var& feat_a, const Var& feat_b, const Var& flow, const Var& weight,
                               CostStats* stats) const {
  const int r = config_.radius;
  const Var warped = softmax_splat(feat_a, flow, weight, config_.splat_eps).output;
  // Matching both ways and mirroring the second volume makes the cost even in
  // d whenever the warped features equal the target, so identical frames give
  // exactly no update.
  Tape& tape = feat_a.tape();
  const Tensor& fv = feat_b.value();
  const CostBlend blend = cost_blend(fv.dim(0), fv.dim(2), fv.dim(3), r, fv.dtype());
  const Var forward = mul(local_correlation(warped, feat_b, r), tape.constant(blend.forward));
  const Var backward = mul(flip(local_correlation(feat_b, warped, r), 1), tape.constant(blend.backward));
  const Var cost = add(add(forward, backward), tape.constant(blend.fill));
  if (stats != nullptr) *stats = cost_stats(cost.value());
  const Var flow_at_target = softmax_splat(flow, flow, weight, config_.splat_eps).output;
  const Var updated = soft_argmax_update(cost, flow_at_target, r, config_.temperature);
  return rewarp_flow_to_source(updated, flow, weight, config_.coverage_eps);
}

BiFlow FlowEstimator::estimate(const Var& image0, const Var& image1, bool keep_trace) const {
  const Dims d = dims_of(image0.value(), "estimate_biflow");
  if (image1.value().shape() != image0.value().shape()) {
    throw ShapeError("estimate_biflow: frames " + to_string(image0.value().shape()) + " and " +
                     to_string(image1.value().shape()) + " differ in shape");
  }
  const std::int64_t m = size_multiple();
  BiFlow out;
  out.padded_height = (d.h + m - 1) / m * m;
  out.padded_width = (d.w + m - 1) / m * m;
  const std::int64_t pad_h = out.padded_height - d.h;
  const std::int64_t pad_w = out.padded_width - d.w;
  const Var x0 = pad_h || pad_w ? pad_reflect(image0, 0, pad_h, 0, pad_w) : image0;
  const Var x1 = pad_h || pad_w ? pad_reflect(image1, 0, pad_h, 0, pad_w) : image1;

  const int levels = config_.levels;
  std::vector<Var> f0(static_cast<std::size_t>(levels));
  std::vector<Var> f1(static_cast<std::size_t>(levels));
  f0.back() = encode(x0);
  f1.back() = encode(x1);
  for (int l = levels - 2; l >= 0; --l) {
    f0[static_cast<std::size_t>(l)] = downsample_feature(f0[static_cast<std::size_t>(l + 1)]);
    f1[static_cast<std::size_t>(l)] = downsample_feature(f1[static_cast<std::size_t>(l + 1)]);
  }
  out.feature0 = f0.back();
  out.feature1 = f1.back();

  Tape& tape = image0.tape();
  const Tensor& coarse = f0.front().value();
  const DType dt = coarse.dtype();
  Var flow01 = tape.constant(Tensor(Shape{d.n, 2, coarse.dim(2), coarse.dim(3)}, dt));
  Var flow10 = flow01;
  Var w0 = tape.constant(Tensor(Shape{d.n, 1, coarse.dim(2), coarse.dim(3)}, dt));
  Var w1 = w0;
  for (int l = 0; l < levels; ++l) {
    const Var& a = f0[static_cast<std::size_t>(l)];
    const Var& b = f1[static_cast<std::size_t>(l)];
    if (l > 0) {
      auto up01 = upscale_flow(flow01, w0, a, b);
      auto up10 = upscale_flow(flow10, w1, b, a);
      flow01 = up01.flow;
      w0 = up01.weight;
      flow10 = up10.flow;
      w1 = up10.weight;
    }
    LevelTrace tr;
    flow01 = update_flow(a, b, flow01, w0, keep_trace ? &tr.cost01 : nullptr);
    flow10 = update_flow(b, a, flow10, w1, keep_trace ? &tr.cost10 : nullptr);
    if (keep_trace) {
      tr.level = l + 1;
      tr.flow01 = flow01.value();
      tr.flow10 = flow10.value();
      out.trace.push_back(std::move(tr));
    }
  }

  auto to_input = [&](const Var& f) {
    Var full = f;
    if (config_.initial_downsample > 1) {
      full = scale(resize_bilinear(f, out.padded_height, out.padded_width), config_.initial_downsample);
    }
    return pad_h || pad_w ? crop(full, 0, 0, d.h, d.w) : full;
  };
  out.flow01 = to_input(flow01);
  out.flow10 = to_input(flow10);
  return out;
}

}  // namespace ecm
