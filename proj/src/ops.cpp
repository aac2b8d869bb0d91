#include "ecm/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "ecm/detail/kernels.hpp"
#include "ecm/kink_monitor.hpp"
#include "ecm/parallel.hpp"

namespace ecm {
namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Resolves the broadcast output shape of a binary op.
Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  const auto na = shape_numel(a);
  const auto nb = shape_numel(b);
  if (nb == 1 && b.size() <= a.size()) return a;
  if (na == 1 && a.size() <= b.size()) return b;
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) + " are not broadcast-compatible");
}

// Sums a full-size gradient down to an operand that was broadcast by index
// i % n.
Tensor reduce_to(const Tensor& grad, const Shape& shape) {
  if (grad.shape() == shape) return grad;
  Tensor out(shape, grad.dtype());
  dispatch(grad.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto g = grad.data<T>();
    auto o = out.data<T>();
    const std::size_t n = o.size();
    for (std::size_t i = 0; i < g.size(); ++i) o[i % n] += g[i];
  });
  return out;
}

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

Var binary(const Var& a, const Var& b, BinaryKind kind) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  kernels::check_same_dtype(av, bv, "elementwise");
  const Shape out_shape = broadcast_shape(av.shape(), bv.shape());
  Tensor out(out_shape, av.dtype());
  dispatch(av.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto x = av.data<T>();
    auto y = bv.data<T>();
    auto o = out.data<T>();
    const std::size_t nx = x.size();
    const std::size_t ny = y.size();
    for (std::size_t i = 0; i < o.size(); ++i) {
      const T p = x[i % nx];
      const T q = y[i % ny];
      switch (kind) {
        case BinaryKind::kAdd: o[i] = p + q; break;
        case BinaryKind::kSub: o[i] = p - q; break;
        case BinaryKind::kMul: o[i] = p * q; break;
        case BinaryKind::kDiv: o[i] = p / q; break;
      }
    }
  });
  return a.tape().record(std::move(out), {a, b}, [a, b, kind](Tape& tape, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor ga(g.shape(), g.dtype());
    Tensor gb(g.shape(), g.dtype());
    dispatch(g.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto x = av.data<T>();
      auto y = bv.data<T>();
      auto go = g.data<T>();
      auto da = ga.data<T>();
      auto db = gb.data<T>();
      const std::size_t nx = x.size();
      const std::size_t ny = y.size();
      for (std::size_t i = 0; i < go.size(); ++i) {
        const T p = x[i % nx];
        const T q = y[i % ny];
        switch (kind) {
          case BinaryKind::kAdd: da[i] = go[i]; db[i] = go[i]; break;
          case BinaryKind::kSub: da[i] = go[i]; db[i] = -go[i]; break;
          case BinaryKind::kMul: da[i] = go[i] * q; db[i] = go[i] * p; break;
          case BinaryKind::kDiv: da[i] = go[i] / q; db[i] = -go[i] * p / (q * q); break;
        }
      }
    });
    if (tape.requires_grad(a)) tape.accumulate(a, reduce_to(ga, av.shape()));
    if (tape.requires_grad(b)) tape.accumulate(b, reduce_to(gb, bv.shape()));
  });
}

// Reports the distance from any input to the points in `corners`.
void note_corners(const Var& x, std::initializer_list<double> corners) {
  if (!KinkMonitor::active() || !x.tape().requires_grad(x)) return;
  const Tensor& xv = x.value();
  for (std::int64_t i = 0; i < xv.numel(); ++i) {
    for (double c : corners) KinkMonitor::note(std::abs(xv.at(i) - c));
  }
}

// Elementwise unary op given value and derivative functors of (x, y).
template <typename Fwd, typename Deriv>
Var unary(const Var& x, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape(), xv.dtype());
  dispatch(xv.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto in = xv.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<T>(fwd(static_cast<double>(in[i])));
  });
  Var y;
  y = x.tape().record(std::move(out), {x}, [x, deriv](Tape& tape, const Tensor& g) {
    const Tensor& xv = x.value();
    Tensor gx(xv.shape(), xv.dtype());
    dispatch(xv.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto in = xv.data<T>();
      auto go = g.data<T>();
      auto d = gx.data<T>();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = go[i] * static_cast<T>(deriv(static_cast<double>(in[i])));
    });
    tape.accumulate(x, gx);
  });
  return y;
}

struct Dims4 {
  std::int64_t n, c, h, w;
};

Dims4 dims4(const Tensor& t, const char* op) {
  if (t.rank() != 4) throw ShapeError(std::string(op) + ": expected NCHW tensor, got " + to_string(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) throw ShapeError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  return a;
}

// outer x extent x inner decomposition around `axis`.
struct AxisSplit {
  std::int64_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.extent = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

struct ConvGeometry {
  std::int64_t n, ci, h, w, co, k, ho, wo;
  int stride, dilation, padding;
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.ci; ++c) {
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((c * g.k + ky) * g.k + kx) * plane;
        const std::int64_t dy = ky * g.dilation - g.padding;
        const std::int64_t dx = kx * g.dilation - g.padding;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride + dy;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = x + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride + dx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* x) {
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.ci; ++c) {
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((c * g.k + ky) * g.k + kx) * plane;
        const std::int64_t dy = ky * g.dilation - g.padding;
        const std::int64_t dx = kx * g.dilation - g.padding;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride + dy;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + oy * g.wo;
          T* dst = x + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride + dx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) { return g.k == 1 && g.stride == 1 && g.padding == 0; }

}  // namespace

Var add(const Var& a, const Var& b) { return binary(a, b, BinaryKind::kAdd); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinaryKind::kSub); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinaryKind::kMul); }
Var div(const Var& a, const Var& b) { return binary(a, b, BinaryKind::kDiv); }

Var neg(const Var& x) {
  return unary(x, [](double v) { return -v; }, [](double) { return -1.0; });
}

Var scale(const Var& x, double factor) {
  return unary(x, [factor](double v) { return factor * v; }, [factor](double) { return factor; });
}

Var add_scalar(const Var& x, double offset) {
  return unary(x, [offset](double v) { return v + offset; }, [](double) { return 1.0; });
}

Var exp(const Var& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Var sigmoid(const Var& x) {
  auto s = [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); };
  return unary(x, s, [s](double v) {
    const double y = s(v);
    return y * (1.0 - y);
  });
}

Var leaky_relu(const Var& x, double slope) {
  note_corners(x, {0.0});
  return unary(x, [slope](double v) { return v > 0 ? v : slope * v; },
               [slope](double v) { return v > 0 ? 1.0 : slope; });
}

Var abs(const Var& x) {
  note_corners(x, {0.0});
  return unary(x, [](double v) { return std::abs(v); },
               [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Var square(const Var& x) {
  return unary(x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var clamp(const Var& x, double lo, double hi) {
  note_corners(x, {lo, hi});
  return unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Var sum(const Var& x) {
  const Tensor& xv = x.value();
  double total = 0.0;
  dispatch(xv.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    for (auto v : xv.data<T>()) total += static_cast<double>(v);
  });
  return x.tape().record(Tensor::scalar(total, xv.dtype()), {x}, [x](Tape& tape, const Tensor& g) {
    tape.accumulate(x, Tensor::full(x.shape(), g.item(), g.dtype()));
  });
}

Var mean(const Var& x) {
  const auto n = x.value().numel();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var scale_per_sample(const Var& x, std::span<const double> scales) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || xv.dim(0) != static_cast<std::int64_t>(scales.size())) {
    throw ShapeError("scale_per_sample: " + std::to_string(scales.size()) + " scales for shape " + to_string(xv.shape()));
  }
  std::vector<double> s(scales.begin(), scales.end());
  auto apply = [](const Tensor& in, const std::vector<double>& factors) {
    Tensor out(in.shape(), in.dtype());
    dispatch(in.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto i = in.data<T>();
      auto o = out.data<T>();
      const std::size_t per = factors.empty() ? 0 : i.size() / factors.size();
      for (std::size_t k = 0; k < i.size(); ++k) o[k] = i[k] * static_cast<T>(factors[k / per]);
    });
    return out;
  };
  Tensor out = apply(xv, s);
  return x.tape().record(std::move(out), {x}, [x, s, apply](Tape& tape, const Tensor& g) {
    tape.accumulate(x, apply(g, s));
  });
}

Var conv2d(const Var& input, const Var& kernel, const Var& bias, Conv2dOptions options) {
  const Tensor& xv = input.value();
  const Tensor& wv = kernel.value();
  kernels::check_same_dtype(xv, wv, "conv2d");
  const auto in = dims4(xv, "conv2d input");
  if (wv.rank() != 4 || wv.dim(2) != wv.dim(3)) {
    throw ShapeError("conv2d: kernel must be OIKK, got " + to_string(wv.shape()));
  }
  if (wv.dim(1) != in.c) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(wv.dim(1)) + " input channels, got " +
                     std::to_string(in.c));
  }
  if (options.stride < 1 || options.dilation < 1 || options.padding < 0) {
    throw ShapeError("conv2d: invalid stride/dilation/padding");
  }
  ConvGeometry g{in.n, in.c, in.h, in.w, wv.dim(0), wv.dim(2), 0, 0, options.stride, options.dilation, options.padding};
  const std::int64_t span = g.dilation * (g.k - 1) + 1;
  const std::int64_t ph = g.h + 2 * g.padding;
  const std::int64_t pw = g.w + 2 * g.padding;
  if (span > ph || span > pw) {
    throw ShapeError("conv2d: kernel extent " + std::to_string(span) + " larger than padded input " +
                     std::to_string(ph) + "x" + std::to_string(pw));
  }
  g.ho = (ph - span) / g.stride + 1;
  g.wo = (pw - span) / g.stride + 1;
  const bool has_bias = bias.valid();
  if (has_bias) {
    kernels::check_same_dtype(xv, bias.value(), "conv2d bias");
    if (bias.value().rank() != 1 || bias.value().dim(0) != g.co) {
      throw ShapeError("conv2d: bias must have shape [" + std::to_string(g.co) + "]");
    }
  }

  Tensor out(Shape{g.n, g.co, g.ho, g.wo}, xv.dtype());
  dispatch(xv.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    const T* x = xv.data<T>().data();
    const T* w = wv.data<T>().data();
    T* y = out.data<T>().data();
    const T* b = has_bias ? bias.value().data<T>().data() : nullptr;
    const std::int64_t rows = g.ci * g.k * g.k;
    const std::int64_t plane = g.ho * g.wo;
    Eigen::Map<const MatRM<T>> wm(w, g.co, rows);
    parallel_for(g.n, [&](std::int64_t n) {
      std::vector<T> cols;
      const T* colp = x + n * g.ci * g.h * g.w;
      if (!is_pointwise(g)) {
        cols.resize(static_cast<std::size_t>(rows * plane));
        im2col(colp, g, cols.data());
        colp = cols.data();
      }
      Eigen::Map<const MatRM<T>> cm(colp, rows, plane);
      Eigen::Map<MatRM<T>> ym(y + n * g.co * plane, g.co, plane);
      ym.noalias() = wm * cm;
      if (b != nullptr) {
        for (std::int64_t o = 0; o < g.co; ++o) ym.row(o).array() += b[o];
      }
    });
  });

  std::vector<Var> inputs{input, kernel};
  if (has_bias) inputs.push_back(bias);
  return input.tape().record(std::move(out), inputs, [input, kernel, bias, g, has_bias](Tape& tape, const Tensor& go) {
    const Tensor& xv = input.value();
    const Tensor& wv = kernel.value();
    const bool need_x = tape.requires_grad(input);
    const bool need_w = tape.requires_grad(kernel);
    const bool need_b = has_bias && tape.requires_grad(bias);
    Tensor gx(xv.shape(), xv.dtype());
    Tensor gw(wv.shape(), wv.dtype());
    Tensor gb(Shape{g.co}, xv.dtype());
    dispatch(xv.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      const T* x = xv.data<T>().data();
      const T* w = wv.data<T>().data();
      const T* gy = go.data<T>().data();
      const std::int64_t rows = g.ci * g.k * g.k;
      const std::int64_t plane = g.ho * g.wo;
      Eigen::Map<const MatRM<T>> wm(w, g.co, rows);
      // Per-sample kernel gradients, summed in sample order afterwards.
      std::vector<MatRM<T>> partial(static_cast<std::size_t>(need_w ? g.n : 0));
      T* dx = gx.data<T>().data();
      parallel_for(g.n, [&](std::int64_t n) {
        Eigen::Map<const MatRM<T>> gym(gy + n * g.co * plane, g.co, plane);
        if (need_w) {
          std::vector<T> cols;
          const T* colp = x + n * g.ci * g.h * g.w;
          if (!is_pointwise(g)) {
            cols.resize(static_cast<std::size_t>(rows * plane));
            im2col(colp, g, cols.data());
            colp = cols.data();
          }
          Eigen::Map<const MatRM<T>> cm(colp, rows, plane);
          partial[static_cast<std::size_t>(n)].noalias() = gym * cm.transpose();
        }
        if (need_x) {
          T* dxn = dx + n * g.ci * g.h * g.w;
          if (is_pointwise(g)) {
            Eigen::Map<MatRM<T>> dm(dxn, rows, plane);
            dm.noalias() = wm.transpose() * gym;
          } else {
            MatRM<T> dcols = wm.transpose() * gym;
            col2im_add(dcols.data(), g, dxn);
          }
        }
      });
      if (need_w) {
        Eigen::Map<MatRM<T>> gwm(gw.data<T>().data(), g.co, rows);
        gwm.setZero();
        for (const auto& p : partial) gwm += p;
      }
      if (need_b) {
        T* db = gb.data<T>().data();
        for (std::int64_t n = 0; n < g.n; ++n) {
          for (std::int64_t o = 0; o < g.co; ++o) {
            const T* row = gy + (n * g.co + o) * plane;
            T acc = 0;
            for (std::int64_t i = 0; i < plane; ++i) acc += row[i];
            db[o] += acc;
          }
        }
      }
    });
    if (need_x) tape.accumulate(input, gx);
    if (need_w) tape.accumulate(kernel, gw);
    if (need_b) tape.accumulate(bias, gb);
  });
}

Var softmax(const Var& x, int axis) {
  const Tensor& xv = x.value();
  const int a = normalize_axis(axis, xv.rank());
  const AxisSplit s = split_axis(xv.shape(), a);
  Tensor out(xv.shape(), xv.dtype());
  dispatch(xv.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto in = xv.data<T>();
    auto o = out.data<T>();
    for (std::int64_t p = 0; p < s.outer; ++p) {
      for (std::int64_t q = 0; q < s.inner; ++q) {
        const std::int64_t base = p * s.extent * s.inner + q;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::int64_t k = 0; k < s.extent; ++k) mx = std::max(mx, in[base + k * s.inner]);
        T total = 0;
        for (std::int64_t k = 0; k < s.extent; ++k) {
          const T e = std::exp(in[base + k * s.inner] - mx);
          o[base + k * s.inner] = e;
          total += e;
        }
        for (std::int64_t k = 0; k < s.extent; ++k) o[base + k * s.inner] /= total;
      }
    }
  });
  Var y;
  y = x.tape().record(std::move(out), {x}, [x, s](Tape& tape, const Tensor& g) {
    // Output values are needed; recompute from the input to avoid a self-reference.
    const Tensor& xv = x.value();
    Tensor gx(xv.shape(), xv.dtype());
    dispatch(xv.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto in = xv.data<T>();
      auto go = g.data<T>();
      auto d = gx.data<T>();
      std::vector<T> yv(static_cast<std::size_t>(s.extent));
      for (std::int64_t p = 0; p < s.outer; ++p) {
        for (std::int64_t q = 0; q < s.inner; ++q) {
          const std::int64_t base = p * s.extent * s.inner + q;
          T mx = -std::numeric_limits<T>::infinity();
          for (std::int64_t k = 0; k < s.extent; ++k) mx = std::max(mx, in[base + k * s.inner]);
          T total = 0;
          for (std::int64_t k = 0; k < s.extent; ++k) {
            yv[static_cast<std::size_t>(k)] = std::exp(in[base + k * s.inner] - mx);
            total += yv[static_cast<std::size_t>(k)];
          }
          T dot = 0;
          for (std::int64_t k = 0; k < s.extent; ++k) {
            yv[static_cast<std::size_t>(k)] /= total;
            dot += go[base + k * s.inner] * yv[static_cast<std::size_t>(k)];
          }
          for (std::int64_t k = 0; k < s.extent; ++k) {
            d[base + k * s.inner] = yv[static_cast<std::size_t>(k)] * (go[base + k * s.inner] - dot);
          }
        }
      }
    });
    tape.accumulate(x, gx);
  });
  return y;
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Tensor& first = parts.front().value();
  const int a = normalize_axis(axis, first.rank());
  Shape out_shape = first.shape();
  out_shape[static_cast<std::size_t>(a)] = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    kernels::check_same_dtype(first, v, "concat");
    if (v.rank() != first.rank()) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < v.rank(); ++i) {
      if (i != a && v.dim(i) != first.dim(i)) {
        throw ShapeError("concat: " + to_string(v.shape()) + " incompatible with " + to_string(first.shape()));
      }
    }
    out_shape[static_cast<std::size_t>(a)] += v.dim(a);
  }
  const AxisSplit os = split_axis(out_shape, a);
  Tensor out(out_shape, first.dtype());
  dispatch(first.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto o = out.data<T>();
    std::int64_t offset = 0;
    for (const auto& p : parts) {
      auto in = p.value().data<T>();
      const std::int64_t e = p.value().dim(a);
      for (std::int64_t q = 0; q < os.outer; ++q) {
        std::copy_n(in.begin() + q * e * os.inner, e * os.inner,
                    o.begin() + (q * os.extent + offset) * os.inner);
      }
      offset += e;
    }
  });
  return parts.front().tape().record(std::move(out), parts, [parts, a, os](Tape& tape, const Tensor& g) {
    std::int64_t offset = 0;
    for (const auto& p : parts) {
      const std::int64_t e = p.value().dim(a);
      if (tape.requires_grad(p)) {
        Tensor gp(p.shape(), g.dtype());
        dispatch(g.dtype(), [&](auto tag) {
          using T = typename decltype(tag)::type;
          auto go = g.data<T>();
          auto d = gp.data<T>();
          for (std::int64_t q = 0; q < os.outer; ++q) {
            std::copy_n(go.begin() + (q * os.extent + offset) * os.inner, e * os.inner,
                        d.begin() + q * e * os.inner);
          }
        });
        tape.accumulate(p, gp);
      }
      offset += e;
    }
  });
}

Var slice(const Var& x, int axis, std::int64_t begin, std::int64_t end) {
  const Tensor& xv = x.value();
  const int a = normalize_axis(axis, xv.rank());
  const std::int64_t extent = xv.dim(a);
  if (begin < 0 || end > extent || begin >= end) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for extent " +
                     std::to_string(extent));
  }
  const AxisSplit s = split_axis(xv.shape(), a);
  Shape out_shape = xv.shape();
  out_shape[static_cast<std::size_t>(a)] = end - begin;
  const std::int64_t e = end - begin;
  Tensor out(out_shape, xv.dtype());
  dispatch(xv.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto in = xv.data<T>();
    auto o = out.data<T>();
    for (std::int64_t q = 0; q < s.outer; ++q) {
      std::copy_n(in.begin() + (q * s.extent + begin) * s.inner, e * s.inner, o.begin() + q * e * s.inner);
    }
  });
  return x.tape().record(std::move(out), {x}, [x, s, begin, e](Tape& tape, const Tensor& g) {
    Tensor gx(x.shape(), g.dtype());
    dispatch(g.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto go = g.data<T>();
      auto d = gx.data<T>();
      for (std::int64_t q = 0; q < s.outer; ++q) {
        std::copy_n(go.begin() + q * e * s.inner, e * s.inner, d.begin() + (q * s.extent + begin) * s.inner);
      }
    });
    tape.accumulate(x, gx);
  });
}

Var flip(const Var& x, int axis) {
  const Tensor& xv = x.value();
  const int a = normalize_axis(axis, xv.rank());
  const AxisSplit s = split_axis(xv.shape(), a);
  auto apply = [s](const Tensor& in) {
    Tensor out(in.shape(), in.dtype());
    dispatch(in.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto i = in.data<T>();
      auto o = out.data<T>();
      for (std::int64_t q = 0; q < s.outer; ++q) {
        for (std::int64_t k = 0; k < s.extent; ++k) {
          std::copy_n(i.begin() + (q * s.extent + k) * s.inner, s.inner,
                      o.begin() + (q * s.extent + (s.extent - 1 - k)) * s.inner);
        }
      }
    });
    return out;
  };
  return x.tape().record(apply(xv), {x}, [x, apply](Tape& tape, const Tensor& g) { tape.accumulate(x, apply(g)); });
}

namespace {

// Source taps for one output coordinate of a half-pixel bilinear resize.
struct ResizeTap {
  std::int64_t i0, i1;
  double a;  // weight of i1
};

std::vector<ResizeTap> resize_taps(std::int64_t in, std::int64_t out) {
  std::vector<ResizeTap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::int64_t>(std::floor(src));
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Var resize_bilinear(const Var& x, std::int64_t out_h, std::int64_t out_w) {
  const Tensor& xv = x.value();
  const auto d = dims4(xv, "resize_bilinear");
  if (out_h < 1 || out_w < 1 || d.h < 1 || d.w < 1) throw ShapeError("resize_bilinear: empty extent");
  const auto ty = resize_taps(d.h, out_h);
  const auto tx = resize_taps(d.w, out_w);
  Tensor out(Shape{d.n, d.c, out_h, out_w}, xv.dtype());
  dispatch(xv.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto in = xv.data<T>();
    auto o = out.data<T>();
    for (std::int64_t p = 0; p < d.n * d.c; ++p) {
      const T* src = in.data() + p * d.h * d.w;
      T* dst = o.data() + p * out_h * out_w;
      for (std::int64_t y = 0; y < out_h; ++y) {
        const auto& vy = ty[static_cast<std::size_t>(y)];
        const T ay = static_cast<T>(vy.a);
        for (std::int64_t xo = 0; xo < out_w; ++xo) {
          const auto& vx = tx[static_cast<std::size_t>(xo)];
          const T ax = static_cast<T>(vx.a);
          const T top = src[vy.i0 * d.w + vx.i0] * (1 - ax) + src[vy.i0 * d.w + vx.i1] * ax;
          const T bot = src[vy.i1 * d.w + vx.i0] * (1 - ax) + src[vy.i1 * d.w + vx.i1] * ax;
          dst[y * out_w + xo] = top * (1 - ay) + bot * ay;
        }
      }
    }
  });
  return x.tape().record(std::move(out), {x}, [x, d, ty, tx, out_h, out_w](Tape& tape, const Tensor& g) {
    Tensor gx(x.shape(), g.dtype());
    dispatch(g.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto go = g.data<T>();
      auto dx = gx.data<T>();
      for (std::int64_t p = 0; p < d.n * d.c; ++p) {
        const T* src = go.data() + p * out_h * out_w;
        T* dst = dx.data() + p * d.h * d.w;
        for (std::int64_t y = 0; y < out_h; ++y) {
          const auto& vy = ty[static_cast<std::size_t>(y)];
          const T ay = static_cast<T>(vy.a);
          for (std::int64_t xo = 0; xo < out_w; ++xo) {
            const auto& vx = tx[static_cast<std::size_t>(xo)];
            const T ax = static_cast<T>(vx.a);
            const T v = src[y * out_w + xo];
            dst[vy.i0 * d.w + vx.i0] += v * (1 - ay) * (1 - ax);
            dst[vy.i0 * d.w + vx.i1] += v * (1 - ay) * ax;
            dst[vy.i1 * d.w + vx.i0] += v * ay * (1 - ax);
            dst[vy.i1 * d.w + vx.i1] += v * ay * ax;
          }
        }
      }
    });
    tape.accumulate(x, gx);
  });
}

Var pad_reflect(const Var& x, std::int64_t top, std::int64_t bottom, std::int64_t left, std::int64_t right) {
  const Tensor& xv = x.value();
  const auto d = dims4(xv, "pad_reflect");
  if (top < 0 || bottom < 0 || left < 0 || right < 0) throw ShapeError("pad_reflect: negative padding");
  const std::int64_t oh = d.h + top + bottom;
  const std::int64_t ow = d.w + left + right;
  std::vector<std::int64_t> ry(static_cast<std::size_t>(oh));
  std::vector<std::int64_t> rx(static_cast<std::size_t>(ow));
  for (std::int64_t y = 0; y < oh; ++y) ry[static_cast<std::size_t>(y)] = kernels::reflect_index(y - top, d.h);
  for (std::int64_t c = 0; c < ow; ++c) rx[static_cast<std::size_t>(c)] = kernels::reflect_index(c - left, d.w);
  Tensor out(Shape{d.n, d.c, oh, ow}, xv.dtype());
  dispatch(xv.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto in = xv.data<T>();
    auto o = out.data<T>();
    for (std::int64_t p = 0; p < d.n * d.c; ++p) {
      for (std::int64_t y = 0; y < oh; ++y) {
        for (std::int64_t c = 0; c < ow; ++c) {
          o[(p * oh + y) * ow + c] = in[(p * d.h + ry[static_cast<std::size_t>(y)]) * d.w + rx[static_cast<std::size_t>(c)]];
        }
      }
    }
  });
  return x.tape().record(std::move(out), {x}, [x, d, ry, rx, oh, ow](Tape& tape, const Tensor& g) {
    Tensor gx(x.shape(), g.dtype());
    dispatch(g.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto go = g.data<T>();
      auto dx = gx.data<T>();
      for (std::int64_t p = 0; p < d.n * d.c; ++p) {
        for (std::int64_t y = 0; y < oh; ++y) {
          for (std::int64_t c = 0; c < ow; ++c) {
            dx[(p * d.h + ry[static_cast<std::size_t>(y)]) * d.w + rx[static_cast<std::size_t>(c)]] +=
                go[(p * oh + y) * ow + c];
          }
        }
      }
    });
    tape.accumulate(x, gx);
  });
}

Var crop(const Var& x, std::int64_t top, std::int64_t left, std::int64_t height, std::int64_t width) {
  const Tensor& xv = x.value();
  const auto d = dims4(xv, "crop");
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > d.h || left + width > d.w) {
    throw ShapeError("crop window out of range for " + to_string(xv.shape()));
  }
  if (top == 0 && left == 0 && height == d.h && width == d.w) return x;
  Tensor out(Shape{d.n, d.c, height, width}, xv.dtype());
  dispatch(xv.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto in = xv.data<T>();
    auto o = out.data<T>();
    for (std::int64_t p = 0; p < d.n * d.c; ++p) {
      for (std::int64_t y = 0; y < height; ++y) {
        std::copy_n(in.begin() + (p * d.h + top + y) * d.w + left, width, o.begin() + (p * height + y) * width);
      }
    }
  });
  return x.tape().record(std::move(out), {x}, [x, d, top, left, height, width](Tape& tape, const Tensor& g) {
    Tensor gx(x.shape(), g.dtype());
    dispatch(g.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto go = g.data<T>();
      auto dx = gx.data<T>();
      for (std::int64_t p = 0; p < d.n * d.c; ++p) {
        for (std::int64_t y = 0; y < height; ++y) {
          std::copy_n(go.begin() + (p * height + y) * width, width, dx.begin() + (p * d.h + top + y) * d.w + left);
        }
      }
    });
    tape.accumulate(x, gx);
  });
}

Var select(const Tensor& mask, const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  kernels::check_same_dtype(av, bv, "select");
  if (av.shape() != bv.shape()) throw ShapeError("select: branch shapes differ");
  const auto d = dims4(av, "select");
  if (mask.shape() != Shape{d.n, 1, d.h, d.w}) {
    throw ShapeError("select: mask shape " + to_string(mask.shape()) + " for branches " + to_string(av.shape()));
  }
  std::vector<char> pick(static_cast<std::size_t>(mask.numel()));
  for (std::int64_t i = 0; i < mask.numel(); ++i) pick[static_cast<std::size_t>(i)] = mask.at(i) != 0.0;
  const std::int64_t plane = d.h * d.w;
  auto mask_index = [d, plane](std::int64_t i) { return (i / (d.c * plane)) * plane + i % plane; };
  Tensor out(av.shape(), av.dtype());
  dispatch(av.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto x = av.data<T>();
    auto y = bv.data<T>();
    auto o = out.data<T>();
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(o.size()); ++i) {
      o[i] = pick[static_cast<std::size_t>(mask_index(i))] ? x[i] : y[i];
    }
  });
  return a.tape().record(std::move(out), {a, b}, [a, b, pick, mask_index](Tape& tape, const Tensor& g) {
    Tensor ga(g.shape(), g.dtype());
    Tensor gb(g.shape(), g.dtype());
    dispatch(g.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto go = g.data<T>();
      auto da = ga.data<T>();
      auto db = gb.data<T>();
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(go.size()); ++i) {
        (pick[static_cast<std::size_t>(mask_index(i))] ? da : db)[i] = go[i];
      }
    });
    tape.accumulate(a, ga);
    tape.accumulate(b, gb);
  });
}

}  // namespace ecm
