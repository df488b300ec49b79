#include "qhnet/metrics.hpp"

#include <cmath>

namespace qhnet {

double psnr(const Tensor& x, const Tensor& y) {
    if (!x.same_shape(y))
        throw std::invalid_argument("psnr: shape mismatch " + shape_str(x.shape()) + " vs " +
                                    shape_str(y.shape()));
    double mse = 0.0;
    for (int64_t n = 0; n < x.numel(); ++n) {
        const double d = x[n] - y[n];
        mse += d * d;
    }
    mse /= static_cast<double>(x.numel());
    if (mse <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::vector<double> gaussian_taps() {
    std::vector<double> g(kSsimWindow);
    double sum = 0.0;
    const double c = static_cast<double>(kSsimWindow - 1) / 2.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = static_cast<double>(i) - c;
        g[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += g[static_cast<size_t>(i)];
    }
    for (double& v : g) v /= sum;
    return g;
}

Tensor to_bchw(const Tensor& x) {
    if (x.rank() == 4) return x;
    if (x.rank() == 3) return x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
    throw std::invalid_argument("ssim: expected C x H x W or B x C x H x W, got " +
                                shape_str(x.shape()));
}

}  // namespace

namespace ops {

namespace {

/// Separable Gaussian blur with valid windows: (B*C,1,H,W) -> (B*C,1,H',W').
Var gaussian_blur(Tape& t, Var x) {
    static const std::vector<double> taps = gaussian_taps();
    Tensor col({1, 1, kSsimWindow, 1}, taps);
    Tensor row({1, 1, 1, kSsimWindow}, taps);
    Var wc = t.leaf(std::move(col), false);
    Var wr = t.leaf(std::move(row), false);
    return conv2d(t, conv2d(t, x, wc, 1, 0), wr, 1, 0);
}

}  // namespace

Var ssim_value(Tape& t, Var pred, Var target) {
    const Tensor& vx = t.value(pred);
    if (!vx.same_shape(t.value(target)))
        throw std::invalid_argument("ssim: shape mismatch");
    Tensor as4 = to_bchw(vx);
    if (as4.dim(2) < kSsimWindow || as4.dim(3) < kSsimWindow)
        throw std::invalid_argument("ssim: spatial dims must be >= " +
                                    std::to_string(kSsimWindow));
    const std::vector<int64_t> flat{as4.dim(0) * as4.dim(1), 1, as4.dim(2), as4.dim(3)};
    Var x = reshape(t, pred, flat);
    Var y = reshape(t, target, flat);

    Var mu_x = gaussian_blur(t, x);
    Var mu_y = gaussian_blur(t, y);
    Var mu_xx = gaussian_blur(t, mul(t, x, x));
    Var mu_yy = gaussian_blur(t, mul(t, y, y));
    Var mu_xy = gaussian_blur(t, mul(t, x, y));

    Var mx2 = mul(t, mu_x, mu_x);
    Var my2 = mul(t, mu_y, mu_y);
    Var mxy = mul(t, mu_x, mu_y);
    Var sx2 = sub(t, mu_xx, mx2);
    Var sy2 = sub(t, mu_yy, my2);
    Var sxy = sub(t, mu_xy, mxy);

    Var num = mul(t, add_const(t, scale(t, mxy, 2.0), kSsimC1),
                  add_const(t, scale(t, sxy, 2.0), kSsimC2));
    Var den = mul(t, add_const(t, add(t, mx2, my2), kSsimC1),
                  add_const(t, add(t, sx2, sy2), kSsimC2));
    return mean_all(t, div(t, num, den));
}

Var ssim_loss(Tape& t, Var pred, Var target) {
    return add_const(t, scale(t, ssim_value(t, pred, target), -1.0), 1.0);
}

}  // namespace ops

double ssim(const Tensor& x, const Tensor& y) {
    Tape t(Mode::Inference);
    Var vx = t.leaf(x, false);
    Var vy = t.leaf(y, false);
    return t.value(ops::ssim_value(t, vx, vy))[0];
}

}  // namespace qhnet
