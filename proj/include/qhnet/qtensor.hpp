#pragma once

#include <array>
#include <string>

#include "qhnet/tensor.hpp"

namespace qhnet {

/// One quaternion q = r + i*i + j*j + k*k with Hamilton multiplication.
struct Quaternion {
    double r = 0, i = 0, j = 0, k = 0;

    Quaternion conj() const { return {r, -i, -j, -k}; }
    double norm() const { return std::sqrt(r * r + i * i + j * j + k * k); }
};

/// Hamilton product p (x) q. Basis rules: i^2 = j^2 = k^2 = ijk = -1,
/// ij = k, ji = -k. Non-commutative.
Quaternion hamilton(const Quaternion& p, const Quaternion& q);

Quaternion operator+(const Quaternion& a, const Quaternion& b);
Quaternion operator-(const Quaternion& a, const Quaternion& b);
Quaternion operator*(double s, const Quaternion& q);

/// Batched quaternion feature map: four component arrays of shape B x C x H x W.
struct QTensor {
    Tensor r, i, j, k;

    QTensor() = default;
    QTensor(Tensor r_, Tensor i_, Tensor j_, Tensor k_);

    static QTensor zeros(int64_t b, int64_t c, int64_t h, int64_t w);

    int64_t batch() const { return r.dim(0); }
    int64_t channels() const { return r.dim(1); }
    int64_t height() const { return r.dim(2); }
    int64_t width() const { return r.dim(3); }

    Quaternion at(int64_t b, int64_t c, int64_t y, int64_t x) const {
        return {r.at4(b, c, y, x), i.at4(b, c, y, x), j.at4(b, c, y, x), k.at4(b, c, y, x)};
    }
    void set(int64_t b, int64_t c, int64_t y, int64_t x, const Quaternion& q) {
        r.at4(b, c, y, x) = q.r;
        i.at4(b, c, y, x) = q.i;
        j.at4(b, c, y, x) = q.j;
        k.at4(b, c, y, x) = q.k;
    }
};

/// Quaternion convolution kernel: four component arrays Cout x Cin x kh x kw.
/// Real parameter count is 4 * Cout * Cin * kh * kw (kernels carry no bias).
struct QKernel {
    Tensor r, i, j, k;
    int stride = 1;
    int padding = 0;

    QKernel() = default;
    QKernel(Tensor r_, Tensor i_, Tensor j_, Tensor k_, int stride_ = 1, int padding_ = 0);

    static QKernel zeros(int64_t cout, int64_t cin, int64_t kh, int64_t kw, int stride = 1,
                         int padding = 0);

    /// Uniform init with limit sqrt(6 / (4*fan_in + 4*fan_out)), fans counted
    /// in real parameters per tap.
    static QKernel random(int64_t cout, int64_t cin, int64_t kh, int64_t kw, int stride,
                          int padding, Rng& rng);

    int64_t cout() const { return r.dim(0); }
    int64_t cin() const { return r.dim(1); }
    int64_t kh() const { return r.dim(2); }
    int64_t kw() const { return r.dim(3); }
    int64_t real_param_count() const { return 4 * r.numel(); }

    Quaternion at(int64_t co, int64_t ci, int64_t y, int64_t x) const {
        return {r.at4(co, ci, y, x), i.at4(co, ci, y, x), j.at4(co, ci, y, x),
                k.at4(co, ci, y, x)};
    }
    void set(int64_t co, int64_t ci, int64_t y, int64_t x, const Quaternion& q) {
        r.at4(co, ci, y, x) = q.r;
        i.at4(co, ci, y, x) = q.i;
        j.at4(co, ci, y, x) = q.j;
        k.at4(co, ci, y, x) = q.k;
    }
};

/// Encodes RGB images (values in [0,1], exactly 3 channels) as pure
/// quaternions: r = 0, i <- R, j <- G, k <- B, one quaternion channel.
/// Out-of-range values are rejected, never clamped.
QTensor from_rgb(const Tensor& image);

/// Inverse encoding: drops the real part, clamps i,j,k to [0,1] and returns
/// them as the B x 3 x H x W color array. Requires exactly one quaternion
/// channel.
Tensor to_rgb(const QTensor& q);

/// Quaternion convolution: sliding-window sum of Hamilton products
/// input (x) weight, zero-quaternion padding.
QTensor qconv(const QTensor& x, const QKernel& w);

/// Split activation: the named scalar function (relu | sigmoid | tanh)
/// applied independently to each of the four component arrays.
QTensor split_activation(const QTensor& x, const std::string& phi);

double relu_scalar(double v);
double sigmoid_scalar(double v);

// ---------------------------------------------------------------------------
// Packed layout. The network graph stores a quaternion tensor as one real
// tensor [B, 4C, H, W] with real channel index 4*c + comp, and a kernel as
// [Cout, Cin, kh, kw, 4]. These helpers convert between the two forms.

Tensor pack(const QTensor& q);
QTensor unpack(const Tensor& packed);
Tensor pack_kernel(const QKernel& w);
QKernel unpack_kernel(const Tensor& packed, int stride, int padding);

/// Output spatial size of a convolution pass: floor((n + 2p - k) / s) + 1.
int64_t conv_out_dim(int64_t n, int64_t k, int stride, int padding);

// Low-level kernels over the packed layout. Shared by the eager API and the
// autodiff graph so there is exactly one convolution implementation.
namespace qkernels {

/// y[B,4Cout,H',W'] = qconv(x[B,4Cin,H,W], w[Cout,Cin,kh,kw,4]).
void qconv_forward(const double* x, const double* w, double* y, int64_t b, int64_t cin,
                   int64_t h, int64_t wd, int64_t cout, int64_t kh, int64_t kw, int stride,
                   int pad);

/// dx += sum over output of g (x) conj(w); same geometry as the forward pass.
void qconv_backward_input(const double* g, const double* w, double* dx, int64_t b,
                          int64_t cin, int64_t h, int64_t wd, int64_t cout, int64_t kh,
                          int64_t kw, int stride, int pad);

/// dw += sum over output of conj(x) (x) g.
void qconv_backward_weight(const double* g, const double* x, double* dw, int64_t b,
                           int64_t cin, int64_t h, int64_t wd, int64_t cout, int64_t kh,
                           int64_t kw, int stride, int pad);

/// Pointwise Hamilton product of two packed [B,4C,H,W] tensors of identical
/// shape; planes = B*C quaternion channel slices, hw = H*W.
void qmul_forward(const double* a, const double* bq, double* y, int64_t planes, int64_t hw);
void qmul_backward(const double* g, const double* a, const double* bq, double* da,
                   double* db, int64_t planes, int64_t hw);

}  // namespace qkernels

}  // namespace qhnet
