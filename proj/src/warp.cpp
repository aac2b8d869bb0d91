#include "ecm/warp.hpp"

#include <algorithm>
#include <cmath>

#include "ecm/detail/kernels.hpp"
#include "ecm/kink_monitor.hpp"
#include "ecm/ops.hpp"

namespace ecm {
namespace {

struct Geometry {
  std::int64_t n, c, h, w;
};

Geometry check_source_and_flow(const Tensor& source, const Tensor& flow, const char* op) {
  if (source.rank() != 4) throw ShapeError(std::string(op) + ": source must be NCHW, got " + to_string(source.shape()));
  const Geometry g{source.dim(0), source.dim(1), source.dim(2), source.dim(3)};
  if (flow.shape() != Shape{g.n, 2, g.h, g.w}) {
    throw ShapeError(std::string(op) + ": flow " + to_string(flow.shape()) + " does not match source " +
                     to_string(source.shape()));
  }
  kernels::check_same_dtype(source, flow, op);
  return g;
}

// Bilinear sampling and splatting bend wherever a displaced position crosses
// an integer, which also covers the clamp limits 0 and extent - 1.
void note_flow_corners(const Var& flow) {
  if (!KinkMonitor::active() || !flow.tape().requires_grad(flow)) return;
  const Tensor& f = flow.value();
  const std::int64_t plane = f.dim(2) * f.dim(3);
  for (std::int64_t i = 0; i < f.numel(); ++i) {
    const std::int64_t p = i % plane;
    const double base = static_cast<double>((i / plane) % 2 == 0 ? p % f.dim(3) : p / f.dim(3));
    const double pos = base + f.at(i);
    KinkMonitor::note(std::abs(pos - std::round(pos)));
  }
}

// Clamped bilinear tap for backward warping along one axis.
struct Tap {
  std::int64_t i0, i1;
  double a;
  bool inside;  // unclamped coordinate lies within [0, extent - 1]
};

Tap clamped_tap(double coord, std::int64_t extent) {
  const double hi = static_cast<double>(extent - 1);
  const bool inside = coord >= 0.0 && coord <= hi;
  const double s = std::clamp(coord, 0.0, hi);
  const auto i0 = static_cast<std::int64_t>(std::floor(s));
  const std::int64_t i1 = std::min(i0 + 1, extent - 1);
  return {i0, i1, s - static_cast<double>(i0), inside};
}

template <typename T>
void warp_forward(const T* src, const T* flow, const Geometry& g, T* out) {
  const std::int64_t plane = g.h * g.w;
  for (std::int64_t n = 0; n < g.n; ++n) {
    const T* fx = flow + (2 * n) * plane;
    const T* fy = flow + (2 * n + 1) * plane;
    for (std::int64_t y = 0; y < g.h; ++y) {
      for (std::int64_t x = 0; x < g.w; ++x) {
        const std::int64_t p = y * g.w + x;
        const Tap tx = clamped_tap(static_cast<double>(x) + fx[p], g.w);
        const Tap ty = clamped_tap(static_cast<double>(y) + fy[p], g.h);
        const T ax = static_cast<T>(tx.a);
        const T ay = static_cast<T>(ty.a);
        for (std::int64_t c = 0; c < g.c; ++c) {
          const T* s = src + (n * g.c + c) * plane;
          const T top = s[ty.i0 * g.w + tx.i0] * (1 - ax) + s[ty.i0 * g.w + tx.i1] * ax;
          const T bot = s[ty.i1 * g.w + tx.i0] * (1 - ax) + s[ty.i1 * g.w + tx.i1] * ax;
          out[(n * g.c + c) * plane + p] = top * (1 - ay) + bot * ay;
        }
      }
    }
  }
}

// Bilinear splat corner: target index and coefficient with its partials.
struct Corner {
  std::int64_t index;
  double k, dk_dx, dk_dy;
};

// In-frame corners of q + flow(q). Returns the count written to `out`.
int splat_corners(std::int64_t x, std::int64_t y, double fx, double fy, const Geometry& g, Corner* out) {
  const double tx = static_cast<double>(x) + fx;
  const double ty = static_cast<double>(y) + fy;
  const double fx0 = std::floor(tx);
  const double fy0 = std::floor(ty);
  const double ax = tx - fx0;
  const double ay = ty - fy0;
  const auto x0 = static_cast<std::int64_t>(fx0);
  const auto y0 = static_cast<std::int64_t>(fy0);
  const Corner candidates[4] = {
      {0, (1 - ax) * (1 - ay), -(1 - ay), -(1 - ax)},
      {1, ax * (1 - ay), (1 - ay), -ax},
      {2, (1 - ax) * ay, -ay, (1 - ax)},
      {3, ax * ay, ay, ax},
  };
  int count = 0;
  for (const auto& cand : candidates) {
    const std::int64_t cx = x0 + (cand.index & 1);
    const std::int64_t cy = y0 + (cand.index >> 1);
    if (cx < 0 || cx >= g.w || cy < 0 || cy >= g.h) continue;
    out[count++] = {cy * g.w + cx, cand.k, cand.dk_dx, cand.dk_dy};
  }
  return count;
}

}  // namespace

Tensor backward_warp_values(const Tensor& source, const Tensor& flow) {
  const Geometry g = check_source_and_flow(source, flow, "backward_warp");
  Tensor out(source.shape(), source.dtype());
  dispatch(source.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    warp_forward(source.data<T>().data(), flow.data<T>().data(), g, out.data<T>().data());
  });
  return out;
}

Var backward_warp(const Var& source, const Var& flow) {
  const Geometry g = check_source_and_flow(source.value(), flow.value(), "backward_warp");
  Tensor out = backward_warp_values(source.value(), flow.value());
  note_flow_corners(flow);
  return source.tape().record(std::move(out), {source, flow}, [source, flow, g](Tape& tape, const Tensor& go) {
    const Tensor& sv = source.value();
    const Tensor& fv = flow.value();
    Tensor gs(sv.shape(), sv.dtype());
    Tensor gf(fv.shape(), fv.dtype());
    dispatch(sv.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      const T* src = sv.data<T>().data();
      const T* fl = fv.data<T>().data();
      const T* gy = go.data<T>().data();
      T* ds = gs.data<T>().data();
      T* df = gf.data<T>().data();
      const std::int64_t plane = g.h * g.w;
      for (std::int64_t n = 0; n < g.n; ++n) {
        const T* fx = fl + (2 * n) * plane;
        const T* fy = fl + (2 * n + 1) * plane;
        for (std::int64_t y = 0; y < g.h; ++y) {
          for (std::int64_t x = 0; x < g.w; ++x) {
            const std::int64_t p = y * g.w + x;
            const Tap tx = clamped_tap(static_cast<double>(x) + fx[p], g.w);
            const Tap ty = clamped_tap(static_cast<double>(y) + fy[p], g.h);
            const T ax = static_cast<T>(tx.a);
            const T ay = static_cast<T>(ty.a);
            T dfx = 0;
            T dfy = 0;
            for (std::int64_t c = 0; c < g.c; ++c) {
              const std::int64_t base = (n * g.c + c) * plane;
              const T gv = gy[base + p];
              const T v00 = src[base + ty.i0 * g.w + tx.i0];
              const T v01 = src[base + ty.i0 * g.w + tx.i1];
              const T v10 = src[base + ty.i1 * g.w + tx.i0];
              const T v11 = src[base + ty.i1 * g.w + tx.i1];
              ds[base + ty.i0 * g.w + tx.i0] += gv * (1 - ay) * (1 - ax);
              ds[base + ty.i0 * g.w + tx.i1] += gv * (1 - ay) * ax;
              ds[base + ty.i1 * g.w + tx.i0] += gv * ay * (1 - ax);
              ds[base + ty.i1 * g.w + tx.i1] += gv * ay * ax;
              dfx += gv * ((1 - ay) * (v01 - v00) + ay * (v11 - v10));
              dfy += gv * ((1 - ax) * (v10 - v00) + ax * (v11 - v01));
            }
            df[(2 * n) * plane + p] = tx.inside ? dfx : T(0);
            df[(2 * n + 1) * plane + p] = ty.inside ? dfy : T(0);
          }
        }
      }
    });
    tape.accumulate(source, gs);
    tape.accumulate(flow, gf);
  });
}

Tensor splat_coverage(const Tensor& flow, const Tensor& weight) {
  if (flow.rank() != 4 || flow.dim(1) != 2) throw ShapeError("splat_coverage: flow must be [N,2,H,W]");
  const Geometry g{flow.dim(0), 1, flow.dim(2), flow.dim(3)};
  if (weight.shape() != Shape{g.n, 1, g.h, g.w}) throw ShapeError("splat_coverage: weight must be [N,1,H,W]");
  Tensor cov(weight.shape(), flow.dtype());
  dispatch(flow.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    const T* fl = flow.data<T>().data();
    const T* wt = weight.data<T>().data();
    T* out = cov.data<T>().data();
    const std::int64_t plane = g.h * g.w;
    Corner corners[4];
    for (std::int64_t n = 0; n < g.n; ++n) {
      for (std::int64_t y = 0; y < g.h; ++y) {
        for (std::int64_t x = 0; x < g.w; ++x) {
          const std::int64_t q = y * g.w + x;
          const double e = std::exp(static_cast<double>(wt[n * plane + q]));
          const int m = splat_corners(x, y, fl[(2 * n) * plane + q], fl[(2 * n + 1) * plane + q], g, corners);
          for (int i = 0; i < m; ++i) out[n * plane + corners[i].index] += static_cast<T>(e * corners[i].k);
        }
      }
    }
  });
  return cov;
}

SplatResult softmax_splat(const Var& source, const Var& flow, const Var& weight, double eps) {
  const Tensor& sv = source.value();
  const Geometry g = check_source_and_flow(sv, flow.value(), "softmax_splat");
  if (weight.value().shape() != Shape{g.n, 1, g.h, g.w}) {
    throw ShapeError("softmax_splat: weight " + to_string(weight.value().shape()) + " does not match source " +
                     to_string(sv.shape()));
  }
  kernels::check_same_dtype(sv, weight.value(), "softmax_splat");
  note_flow_corners(flow);
  Tensor coverage = splat_coverage(flow.value(), weight.value());
  Tensor out(sv.shape(), sv.dtype());
  dispatch(sv.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    const T* src = sv.data<T>().data();
    const T* fl = flow.value().data<T>().data();
    const T* wt = weight.value().data<T>().data();
    const T* cov = coverage.data<T>().data();
    T* o = out.data<T>().data();
    const std::int64_t plane = g.h * g.w;
    Corner corners[4];
    for (std::int64_t n = 0; n < g.n; ++n) {
      for (std::int64_t y = 0; y < g.h; ++y) {
        for (std::int64_t x = 0; x < g.w; ++x) {
          const std::int64_t q = y * g.w + x;
          const double e = std::exp(static_cast<double>(wt[n * plane + q]));
          const int m = splat_corners(x, y, fl[(2 * n) * plane + q], fl[(2 * n + 1) * plane + q], g, corners);
          for (std::int64_t c = 0; c < g.c; ++c) {
            const std::int64_t base = (n * g.c + c) * plane;
            const double v = src[base + q];
            for (int i = 0; i < m; ++i) o[base + corners[i].index] += static_cast<T>(e * v * corners[i].k);
          }
        }
      }
      for (std::int64_t c = 0; c < g.c; ++c) {
        T* row = o + (n * g.c + c) * plane;
        for (std::int64_t p = 0; p < plane; ++p) row[p] /= std::max(cov[n * plane + p], static_cast<T>(eps));
      }
    }
  });

  Var output = source.tape().record(
      std::move(out), {source, flow, weight}, [source, flow, weight, g, eps, coverage](Tape& tape, const Tensor& go) {
        const Tensor& sv = source.value();
        Tensor gs(sv.shape(), sv.dtype());
        Tensor gf(flow.value().shape(), sv.dtype());
        Tensor gw(weight.value().shape(), sv.dtype());
        dispatch(sv.dtype(), [&](auto tag) {
          using T = typename decltype(tag)::type;
          const T* src = sv.data<T>().data();
          const T* fl = flow.value().data<T>().data();
          const T* wt = weight.value().data<T>().data();
          const T* cov = coverage.data<T>().data();
          const T* gy = go.data<T>().data();
          T* ds = gs.data<T>().data();
          T* df = gf.data<T>().data();
          T* dw = gw.data<T>().data();
          const std::int64_t plane = g.h * g.w;
          // Gradients w.r.t. the splatted numerator and denominator per target.
          std::vector<double> d_num(static_cast<std::size_t>(g.c * plane));
          std::vector<double> d_den(static_cast<std::size_t>(plane));
          Corner corners[4];
          for (std::int64_t n = 0; n < g.n; ++n) {
            // dL/dnum = g / max(den, eps); dL/dden = -g.num / den^2 where den >= eps.
            std::fill(d_den.begin(), d_den.end(), 0.0);
            for (std::int64_t p = 0; p < plane; ++p) {
              const double denom = std::max(static_cast<double>(cov[n * plane + p]), eps);
              for (std::int64_t c = 0; c < g.c; ++c) {
                d_num[static_cast<std::size_t>(c * plane + p)] = gy[(n * g.c + c) * plane + p] / denom;
              }
            }
            std::vector<double> num(static_cast<std::size_t>(g.c * plane), 0.0);
            for (std::int64_t y = 0; y < g.h; ++y) {
              for (std::int64_t x = 0; x < g.w; ++x) {
                const std::int64_t q = y * g.w + x;
                const double e = std::exp(static_cast<double>(wt[n * plane + q]));
                const int m = splat_corners(x, y, fl[(2 * n) * plane + q], fl[(2 * n + 1) * plane + q], g, corners);
                for (std::int64_t c = 0; c < g.c; ++c) {
                  const double v = src[(n * g.c + c) * plane + q];
                  for (int i = 0; i < m; ++i) num[static_cast<std::size_t>(c * plane + corners[i].index)] += e * v * corners[i].k;
                }
              }
            }
            for (std::int64_t p = 0; p < plane; ++p) {
              const double den = cov[n * plane + p];
              if (den < eps) continue;
              double acc = 0.0;
              for (std::int64_t c = 0; c < g.c; ++c) {
                acc += gy[(n * g.c + c) * plane + p] * num[static_cast<std::size_t>(c * plane + p)];
              }
              d_den[static_cast<std::size_t>(p)] = -acc / (den * den);
            }
            for (std::int64_t y = 0; y < g.h; ++y) {
              for (std::int64_t x = 0; x < g.w; ++x) {
                const std::int64_t q = y * g.w + x;
                const double e = std::exp(static_cast<double>(wt[n * plane + q]));
                const int m = splat_corners(x, y, fl[(2 * n) * plane + q], fl[(2 * n + 1) * plane + q], g, corners);
                double gk = 0.0, gkx = 0.0, gky = 0.0;
                for (int i = 0; i < m; ++i) {
                  const auto& cn = corners[i];
                  double a = d_den[static_cast<std::size_t>(cn.index)];
                  for (std::int64_t c = 0; c < g.c; ++c) {
                    const double dn = d_num[static_cast<std::size_t>(c * plane + cn.index)];
                    a += dn * src[(n * g.c + c) * plane + q];
                    ds[(n * g.c + c) * plane + q] += static_cast<T>(e * cn.k * dn);
                  }
                  gk += cn.k * a;
                  gkx += cn.dk_dx * a;
                  gky += cn.dk_dy * a;
                }
                dw[n * plane + q] = static_cast<T>(e * gk);
                df[(2 * n) * plane + q] = static_cast<T>(e * gkx);
                df[(2 * n + 1) * plane + q] = static_cast<T>(e * gky);
              }
            }
          }
        });
        tape.accumulate(source, gs);
        tape.accumulate(flow, gf);
        tape.accumulate(weight, gw);
      });
  return {output, std::move(coverage)};
}

ReversedFlow splat_flow(const Var& flow, double scale_factor, const Var& weight, double eps, double coverage_eps) {
  Var scaled = scale(flow, scale_factor);
  SplatResult splat = softmax_splat(scaled, scaled, weight, eps);
  Tensor holes(splat.coverage.shape(), splat.coverage.dtype());
  for (std::int64_t i = 0; i < holes.numel(); ++i) {
    if (splat.coverage.at(i) < coverage_eps) {
      dispatch(holes.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        holes.data<T>()[static_cast<std::size_t>(i)] = T(1);
      });
    }
  }
  Var zeros = flow.tape().constant(Tensor(flow.shape(), flow.dtype()));
  Var reversed = select(holes, zeros, neg(splat.output));
  return {reversed, std::move(splat.coverage), std::move(holes)};
}

}  // namespace ecm
