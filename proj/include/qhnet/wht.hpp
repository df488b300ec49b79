#pragma once

#include <cstdint>
#include <span>

#include "qhnet/tensor.hpp"

namespace qhnet {

/// Counts butterfly additions/subtractions (scaling multiplies excluded).
struct WhtOpCounter {
    uint64_t add_sub = 0;
};

/// Plan for a 1D orthonormal Walsh-Hadamard transform of power-of-two length.
/// Ordering is natural (Sylvester); every 1D pass scales by 1/sqrt(N), which
/// makes the transform self-inverse and energy preserving.
struct WhtPlan {
    int64_t size = 1;

    explicit WhtPlan(int64_t n) : size(n) {
        if (!is_pow2(n))
            throw std::invalid_argument("WhtPlan: length must be a power of two, got " +
                                        std::to_string(n));
    }

    static bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }
};

/// In-place butterfly over a contiguous span; N*log2(N) adds/subs plus one
/// final 1/sqrt(N) scale.
void wht1d_inplace(std::span<double> x, WhtOpCounter* counter = nullptr);

/// Out-of-place orthonormal 1D WHT per the plan.
std::vector<double> wht1d(const std::vector<double>& x, const WhtPlan& plan,
                          WhtOpCounter* counter = nullptr);

/// 2D orthonormal WHT along the last two axes of a B x C x H x W tensor
/// (rows then columns of every B,C slice; the order does not matter).
Tensor wht2d(const Tensor& x, WhtOpCounter* counter = nullptr);

/// Named alias: the orthonormal WHT is involutory, so the inverse transform
/// is the same computation.
Tensor iwht2d(const Tensor& x, WhtOpCounter* counter = nullptr);

/// Transforms every H x W plane of a raw buffer laid out as n_planes
/// contiguous H*W blocks. Shared by the tensor front-end and the graph node.
void wht2d_planes(double* data, int64_t n_planes, int64_t h, int64_t w,
                  WhtOpCounter* counter = nullptr);

}  // namespace qhnet
