#include "qhnet/wht.hpp"

#include <cmath>

namespace qhnet {

void wht1d_inplace(std::span<double> x, WhtOpCounter* counter) {
    const int64_t n = static_cast<int64_t>(x.size());
    if (!WhtPlan::is_pow2(n))
        throw std::invalid_argument("wht1d: length must be a power of two, got " +
                                    std::to_string(n));
    for (int64_t h = 1; h < n; h <<= 1) {
        for (int64_t i = 0; i < n; i += h * 2) {
            for (int64_t j = i; j < i + h; ++j) {
                const double a = x[static_cast<size_t>(j)];
                const double b = x[static_cast<size_t>(j + h)];
                x[static_cast<size_t>(j)] = a + b;
                x[static_cast<size_t>(j + h)] = a - b;
            }
        }
        if (counter) counter->add_sub += static_cast<uint64_t>(n);
    }
    const double s = 1.0 / std::sqrt(static_cast<double>(n));
    for (int64_t i = 0; i < n; ++i) x[static_cast<size_t>(i)] *= s;
}

std::vector<double> wht1d(const std::vector<double>& x, const WhtPlan& plan,
                          WhtOpCounter* counter) {
    if (static_cast<int64_t>(x.size()) != plan.size)
        throw std::invalid_argument("wht1d: input length does not match plan");
    std::vector<double> out = x;
    wht1d_inplace(out, counter);
    return out;
}

void wht2d_planes(double* data, int64_t n_planes, int64_t h, int64_t w,
                  WhtOpCounter* counter) {
    if (!WhtPlan::is_pow2(h) || !WhtPlan::is_pow2(w))
        throw std::invalid_argument("wht2d: spatial dims must be powers of two, got " +
                                    std::to_string(h) + "x" + std::to_string(w));
    std::vector<double> col(static_cast<size_t>(h));
    for (int64_t p = 0; p < n_planes; ++p) {
        double* plane = data + p * h * w;
        for (int64_t y = 0; y < h; ++y)
            wht1d_inplace(std::span<double>(plane + y * w, static_cast<size_t>(w)), counter);
        for (int64_t x = 0; x < w; ++x) {
            for (int64_t y = 0; y < h; ++y) col[static_cast<size_t>(y)] = plane[y * w + x];
            wht1d_inplace(col, counter);
            for (int64_t y = 0; y < h; ++y) plane[y * w + x] = col[static_cast<size_t>(y)];
        }
    }
}

Tensor wht2d(const Tensor& x, WhtOpCounter* counter) {
    if (x.rank() != 4)
        throw std::invalid_argument("wht2d: expected B x C x H x W, got " +
                                    shape_str(x.shape()));
    Tensor out = x;
    wht2d_planes(out.data(), x.dim(0) * x.dim(1), x.dim(2), x.dim(3), counter);
    return out;
}

Tensor iwht2d(const Tensor& x, WhtOpCounter* counter) { return wht2d(x, counter); }

}  // namespace qhnet
