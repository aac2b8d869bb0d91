#include "ecm/synthesis.hpp"

#include <string>

#include "ecm/ops.hpp"
#include "ecm/warp.hpp"

namespace ecm {
namespace {

void require_extents(const Var& v, std::int64_t n, std::int64_t h, std::int64_t w, const char* what, const char* op) {
  const Tensor& t = v.value();
  if (t.rank() != 4 || t.dim(0) != n || t.dim(2) != h || t.dim(3) != w) {
    throw ShapeError(std::string(op) + ": " + what + " " + to_string(t.shape()) + " does not match " +
                     std::to_string(n) + "x?x" + std::to_string(h) + "x" + std::to_string(w));
  }
}

Var time_plane(Tape& tape, std::span<const double> t, std::int64_t h, std::int64_t w, DType dtype) {
  Tensor plane(Shape{static_cast<std::int64_t>(t.size()), 1, h, w}, DType::kFloat64);
  auto d = plane.data<double>();
  for (std::size_t n = 0; n < t.size(); ++n) {
    std::fill(d.begin() + static_cast<std::ptrdiff_t>(n * h * w), d.begin() + static_cast<std::ptrdiff_t>((n + 1) * h * w), t[n]);
  }
  return tape.constant(plane.cast(dtype));
}

// Bilinear upsampling by the encoder stride, cropped to the frame extents.
Var feature_at_input(const Var& feature, int stride, std::int64_t h, std::int64_t w) {
  Var up = feature;
  if (stride > 1) up = resize_bilinear(feature, feature.dim(2) * stride, feature.dim(3) * stride);
  if (up.dim(2) != h || up.dim(3) != w) up = crop(up, 0, 0, h, w);
  return up;
}

void check_times(std::span<const double> t) {
  for (double ti : t) {
    if (!(ti > 0.0 && ti < 1.0)) throw ConfigError("t", "must lie in the open interval (0, 1), got " + std::to_string(ti));
  }
}

}  // namespace

Var mask_mix(const Var& a, const Var& b, const Var& mask) {
  const Tensor& av = a.value();
  if (b.value().shape() != av.shape() || av.rank() != 4) {
    throw ShapeError("mask_mix: images " + to_string(av.shape()) + " and " + to_string(b.value().shape()) +
                     " must be equal NCHW shapes");
  }
  const std::int64_t n = av.dim(0), c = av.dim(1), plane = av.dim(2) * av.dim(3);
  if (mask.value().shape() != Shape{n, 1, av.dim(2), av.dim(3)}) {
    throw ShapeError("mask_mix: mask " + to_string(mask.value().shape()) + " does not match " + to_string(av.shape()));
  }
  Tensor out(av.shape(), av.dtype());
  dispatch(av.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    const T* pa = av.data<T>().data();
    const T* pb = b.value().data<T>().data();
    const T* pm = mask.value().data<T>().data();
    T* po = out.data<T>().data();
    for (std::int64_t s = 0; s < n; ++s)
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t p = 0; p < plane; ++p) {
          const std::int64_t i = (s * c + ch) * plane + p;
          const T m = pm[s * plane + p];
          po[i] = m * pa[i] + (1 - m) * pb[i];
        }
  });
  return a.tape().record(std::move(out), {a, b, mask}, [a, b, mask, n, c, plane](Tape& tape, const Tensor& g) {
    Tensor ga(a.value().shape(), g.dtype());
    Tensor gb(b.value().shape(), g.dtype());
    Tensor gm(mask.value().shape(), g.dtype());
    dispatch(g.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      const T* pa = a.value().data<T>().data();
      const T* pb = b.value().data<T>().data();
      const T* pm = mask.value().data<T>().data();
      const T* pg = g.data<T>().data();
      T* da = ga.data<T>().data();
      T* db = gb.data<T>().data();
      T* dm = gm.data<T>().data();
      for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t ch = 0; ch < c; ++ch)
          for (std::int64_t p = 0; p < plane; ++p) {
            const std::int64_t i = (s * c + ch) * plane + p;
            const T m = pm[s * plane + p];
            da[i] = pg[i] * m;
            db[i] = pg[i] * (1 - m);
            dm[s * plane + p] += pg[i] * (pa[i] - pb[i]);
          }
    });
    tape.accumulate(a, ga);
    tape.accumulate(b, gb);
    tape.accumulate(mask, gm);
  });
}

Blended blend(const Var& image0, const Var& image1, const Var& flow_t0, const Var& flow_t1, const Var& mask) {
  Blended out;
  out.warped0 = backward_warp(image0, flow_t0);
  out.warped1 = backward_warp(image1, flow_t1);
  out.image = mask_mix(out.warped0, out.warped1, mask);
  return out;
}

FrameSynthesizer::FrameSynthesizer(ParameterSet& params, const RunConfig& config) : config_(config) {
  validate(config_);
  const std::uint64_t seed = config_.seed;
  const DType dt = config_.dtype;
  const std::int64_t enc = config_.encoder_width;
  const std::int64_t img = config_.image_feature_width;
  const std::int64_t ctx = config_.context_width;
  const std::int64_t u = config_.unet_width;
  const std::int64_t r = config_.refine_width;
  const Conv2dOptions same{1, 1, 1};

  image_feat_ = Conv(params, "synth.image", 3, img, 3, same, seed, dt);
  context_ = Conv(params, "synth.context", 2 * enc + 2 * img + 6 + 4, ctx, 3, same, seed, dt);

  // flows 0->1 and 1->0, both reversals, the time plane and the context
  const std::int64_t unet_in = 2 + 2 + 2 + 2 + 1 + ctx;
  down_.emplace_back(params, "synth.unet.down0", unet_in, u, 3, same, seed, dt);
  for (int i = 1; i <= 3; ++i) {
    down_.emplace_back(params, "synth.unet.down" + std::to_string(i), u, u, 3, Conv2dOptions{2, 1, 1}, seed, dt);
  }
  for (int i = 0; i < 3; ++i) {
    up_.emplace_back(params, "synth.unet.up" + std::to_string(i), 2 * u, u, 3, same, seed, dt);
  }
  flow_head_ = Conv(params, "synth.unet.head", u, 5, 3, same, seed, dt, Init::kZero);

  const std::int64_t refine_in = 3 + ctx + 3 + 3 + 2 + 2;
  refine_.emplace_back(params, "synth.refine.in", refine_in, r, 3, same, seed, dt);
  for (int d : {2, 4, 8}) {
    refine_.emplace_back(params, "synth.refine.dil" + std::to_string(d), r, r, 3, Conv2dOptions{1, d, d}, seed, dt);
  }
  refine_.emplace_back(params, "synth.refine.out", r, r, 3, same, seed, dt);
  refine_head_ = Conv(params, "synth.refine.head", r, 3, 3, same, seed, dt, Init::kZero);
}

Var FrameSynthesizer::build_context(const Var& image0, const Var& image1, const Var& flow01, const Var& flow10,
                                    const Var& feature0, const Var& feature1) const {
  const Tensor& iv = image0.value();
  if (iv.rank() != 4 || iv.dim(1) != 3) throw ShapeError("build_context: expected [N,3,H,W], got " + to_string(iv.shape()));
  const std::int64_t n = iv.dim(0), h = iv.dim(2), w = iv.dim(3);
  require_extents(image1, n, h, w, "frame 1", "build_context");
  require_extents(flow01, n, h, w, "flow 0->1", "build_context");
  require_extents(flow10, n, h, w, "flow 1->0", "build_context");
  require_extents(feature0, n, h, w, "feature 0", "build_context");
  require_extents(feature1, n, h, w, "feature 1", "build_context");
  const Var v0 = leaky_relu(image_feat_(image0));
  const Var v1 = leaky_relu(image_feat_(image1));
  return leaky_relu(context_(concat({feature0, feature1, v0, v1, image0, image1, flow01, flow10}, 1)));
}

FrameSynthesizer::Intermediate FrameSynthesizer::intermediate_flows(const Var& flow01, const Var& flow10,
                                                                    std::span<const double> t,
                                                                    const Var& context) const {
  const Tensor& fv = flow01.value();
  if (fv.rank() != 4 || fv.dim(1) != 2) throw ShapeError("intermediate_flows: expected [N,2,H,W], got " + to_string(fv.shape()));
  const std::int64_t n = fv.dim(0), h = fv.dim(2), w = fv.dim(3);
  if (static_cast<std::int64_t>(t.size()) != n) {
    throw ShapeError("intermediate_flows: " + std::to_string(t.size()) + " times for " + std::to_string(n) + " samples");
  }
  check_times(t);
  require_extents(flow10, n, h, w, "flow 1->0", "intermediate_flows");
  require_extents(context, n, h, w, "context", "intermediate_flows");

  Tape& tape = flow01.tape();
  std::vector<double> rest(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) rest[i] = 1.0 - t[i];
  // Uniform splat weights for the reversal.
  const Var uniform = tape.constant(Tensor(Shape{n, 1, h, w}, fv.dtype()));
  const Var rev0 = splat_flow(scale_per_sample(flow01, t), 1.0, uniform, config_.splat_eps, config_.coverage_eps).flow;
  const Var rev1 = splat_flow(scale_per_sample(flow10, rest), 1.0, uniform, config_.splat_eps, config_.coverage_eps).flow;

  Var x = concat({flow01, flow10, rev0, rev1, time_plane(tape, t, h, w, fv.dtype()), context}, 1);
  std::vector<Var> skips;
  for (const auto& conv : down_) {
    x = leaky_relu(conv(x));
    skips.push_back(x);
  }
  for (std::size_t i = 0; i < up_.size(); ++i) {
    const Var& skip = skips[skips.size() - 2 - i];
    x = leaky_relu(up_[i](concat({resize_bilinear(x, skip.dim(2), skip.dim(3)), skip}, 1)));
  }
  const Var head = flow_head_(x);
  return {add(rev0, slice(head, 1, 0, 2)), add(rev1, slice(head, 1, 2, 4)), sigmoid(slice(head, 1, 4, 5))};
}

Var FrameSynthesizer::refine(const Var& blended, const Var& context, const Var& image0, const Var& image1,
                             const Var& flow_t0, const Var& flow_t1) const {
  Var x = concat({blended, context, image0, image1, flow_t0, flow_t1}, 1);
  for (const auto& conv : refine_) x = leaky_relu(conv(x));
  return clamp(add(blended, refine_head_(x)), 0.0, 1.0);
}

InterpolationModel::InterpolationModel(const RunConfig& config)
    : config_(config), params_(std::make_unique<ParameterSet>()) {
  estimator_ = std::make_unique<FlowEstimator>(*params_, config_);
  synthesizer_ = std::make_unique<FrameSynthesizer>(*params_, config_);
}

SynthesisBundle InterpolationModel::interpolate(const Var& image0, const Var& image1, std::span<const double> t,
                                                bool keep_trace) const {
  check_times(t);
  BiFlow bi = estimator_->estimate(image0, image1, keep_trace);
  const std::int64_t h = image0.dim(2), w = image0.dim(3);
  const Var e0 = feature_at_input(bi.feature0, config_.initial_downsample, h, w);
  const Var e1 = feature_at_input(bi.feature1, config_.initial_downsample, h, w);
  const Var context = synthesizer_->build_context(image0, image1, bi.flow01, bi.flow10, e0, e1);
  const auto mid = synthesizer_->intermediate_flows(bi.flow01, bi.flow10, t, context);
  const Blended b = blend(image0, image1, mid.flow_t0, mid.flow_t1, mid.mask);

  SynthesisBundle out;
  out.flow01 = bi.flow01;
  out.flow10 = bi.flow10;
  out.flow_t0 = mid.flow_t0;
  out.flow_t1 = mid.flow_t1;
  out.mask = mid.mask;
  out.warped0 = b.warped0;
  out.warped1 = b.warped1;
  out.blend = b.image;
  out.refine = synthesizer_->refine(b.image, context, image0, image1, mid.flow_t0, mid.flow_t1);
  out.trace = std::move(bi.trace);
  return out;
}

SynthesisBundle InterpolationModel::interpolate(const Var& image0, const Var& image1, double t, bool keep_trace) const {
  const std::vector<double> ts(static_cast<std::size_t>(image0.dim(0)), t);
  return interpolate(image0, image1, ts, keep_trace);
}

}  // namespace ecm
