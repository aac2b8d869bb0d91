#pragma once

#include <optional>
#include <vector>

#include "ecm/tensor.hpp"

namespace ecm {

/// Reported PSNR for identical images.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) over every element of two [0, 1] images, capped.
double psnr(const Tensor& pred, const Tensor& target);

/// Mean SSIM over all channels and samples: 11x11 Gaussian window with
/// sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1, evaluated where the
/// window fits. Frames smaller than the window use one clipped window.
double ssim(const Tensor& pred, const Tensor& target);

/// Mean end-point error over every pixel of [N,2,H,W] flows.
double epe(const Tensor& flow, const Tensor& target);

struct MetricReport {
  std::vector<double> psnr, ssim, epe;  // one entry per sample; epe empty without flows
  double mean_psnr = 0.0, mean_ssim = 0.0, mean_epe = 0.0;
};

/// Per-sample metrics over the batch dimension. Throws ShapeError on mismatch.
MetricReport evaluate(const Tensor& pred, const Tensor& target, const std::optional<Tensor>& flow = std::nullopt,
                      const std::optional<Tensor>& target_flow = std::nullopt);

}  // namespace ecm
