#pragma once

#include "qhnet/graph.hpp"
#include "qhnet/tensor.hpp"

namespace qhnet {

/// Peak signal-to-noise ratio in dB over unit dynamic range:
/// 10*log10(1/MSE), capped at 100 dB for identical images.
double psnr(const Tensor& x, const Tensor& y);

/// Mean structural similarity with the standard 11x11 Gaussian window
/// (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, averaged over all fully-interior
/// windows, channels and batch entries. Inputs are B x C x H x W (or C x H x W)
/// in [0,1]; spatial dims must be at least 11.
double ssim(const Tensor& x, const Tensor& y);

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

namespace ops {

/// Differentiable mean SSIM between two recorded images, identical
/// computation to the ssim() metric.
Var ssim_value(Tape& t, Var pred, Var target);

/// The training loss L = 1 - SSIM(pred, target).
Var ssim_loss(Tape& t, Var pred, Var target);

}  // namespace ops

struct MetricReport {
    int epoch = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    double loss = 0.0;
    double lr = 0.0;
};

}  // namespace qhnet
