#include "ecm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ecm/errors.hpp"

namespace ecm {
namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_nchw(const Tensor& a, const char* what) {
  if (a.rank() != 4) throw ShapeError(std::string(what) + ": expected NCHW, got " + to_string(a.shape()));
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const double mid = 0.5 * (size - 1);
  for (int i = 0; i < size; ++i) g[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - mid) * (i - mid) / (sigma * sigma));
  const double total = std::accumulate(g.begin(), g.end(), 0.0);
  for (auto& v : g) v /= total;
  return g;
}

// Mean SSIM of one H x W plane pair.
double ssim_plane(const double* a, const double* b, std::int64_t h, std::int64_t w) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int wy = static_cast<int>(std::min<std::int64_t>(11, h));
  const int wx = static_cast<int>(std::min<std::int64_t>(11, w));
  const auto gy = gaussian_window(wy, 1.5), gx = gaussian_window(wx, 1.5);
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t y0 = 0; y0 + wy <= h; ++y0)
    for (std::int64_t x0 = 0; x0 + wx <= w; ++x0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = 0; dy < wy; ++dy)
        for (int dx = 0; dx < wx; ++dx) {
          const double k = gy[static_cast<std::size_t>(dy)] * gx[static_cast<std::size_t>(dx)];
          const auto i = static_cast<std::size_t>((y0 + dy) * w + x0 + dx);
          ma += k * a[i];
          mb += k * b[i];
          saa += k * a[i] * a[i];
          sbb += k * b[i] * b[i];
          sab += k * a[i] * b[i];
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

}  // namespace

double psnr(const Tensor& pred, const Tensor& target) {
  require_same(pred, target, "psnr");
  if (pred.numel() == 0) throw ShapeError("psnr: empty images");
  double mse = 0.0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const double d = pred.at(i) - target.at(i);
    mse += d * d;
  }
  mse /= static_cast<double>(pred.numel());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor& pred, const Tensor& target) {
  require_same(pred, target, "ssim");
  require_nchw(pred, "ssim");
  const Tensor a = pred.cast(DType::kFloat64), b = target.cast(DType::kFloat64);
  const auto planes = a.dim(0) * a.dim(1), h = a.dim(2), w = a.dim(3);
  if (planes == 0 || h == 0 || w == 0) throw ShapeError("ssim: empty images");
  double total = 0.0;
  for (std::int64_t p = 0; p < planes; ++p) {
    total += ssim_plane(a.data<double>().data() + p * h * w, b.data<double>().data() + p * h * w, h, w);
  }
  return total / static_cast<double>(planes);
}

double epe(const Tensor& flow, const Tensor& target) {
  require_same(flow, target, "epe");
  require_nchw(flow, "epe");
  if (flow.dim(1) != 2) throw ShapeError("epe: flows need two channels, got " + to_string(flow.shape()));
  const auto n = flow.dim(0), plane = flow.dim(2) * flow.dim(3);
  if (n * plane == 0) throw ShapeError("epe: empty flow");
  double total = 0.0;
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t i = 0; i < plane; ++i) {
      const std::int64_t u = s * 2 * plane + i, v = u + plane;
      total += std::hypot(flow.at(u) - target.at(u), flow.at(v) - target.at(v));
    }
  return total / static_cast<double>(n * plane);
}

MetricReport evaluate(const Tensor& pred, const Tensor& target, const std::optional<Tensor>& flow,
                      const std::optional<Tensor>& target_flow) {
  require_same(pred, target, "evaluate");
  require_nchw(pred, "evaluate");
  if (flow.has_value() != target_flow.has_value()) throw ShapeError("evaluate: flow given without its target");
  const Tensor a = pred.cast(DType::kFloat64), b = target.cast(DType::kFloat64);
  auto sample = [](const Tensor& t, std::int64_t n) {
    Shape s = t.shape();
    s[0] = 1;
    const auto size = t.numel() / t.dim(0);
    return Tensor::from_values(s, t.data<double>().subspan(static_cast<std::size_t>(n * size), static_cast<std::size_t>(size)),
                               DType::kFloat64);
  };
  MetricReport r;
  for (std::int64_t n = 0; n < a.dim(0); ++n) {
    const Tensor pa = sample(a, n), pb = sample(b, n);
    r.psnr.push_back(psnr(pa, pb));
    r.ssim.push_back(ssim(pa, pb));
  }
  if (flow) {
    require_same(*flow, *target_flow, "evaluate");
    if (flow->dim(0) != a.dim(0)) throw ShapeError("evaluate: flow batch differs from image batch");
    const Tensor fa = flow->cast(DType::kFloat64), fb = target_flow->cast(DType::kFloat64);
    for (std::int64_t n = 0; n < a.dim(0); ++n) r.epe.push_back(epe(sample(fa, n), sample(fb, n)));
  }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  r.mean_psnr = mean(r.psnr);
  r.mean_ssim = mean(r.ssim);
  r.mean_epe = mean(r.epe);
  return r;
}

}  // namespace ecm
