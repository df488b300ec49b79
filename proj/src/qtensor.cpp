#include "qhnet/qtensor.hpp"

#include <cmath>

namespace qhnet {

Quaternion hamilton(const Quaternion& p, const Quaternion& q) {
    return {p.r * q.r - p.i * q.i - p.j * q.j - p.k * q.k,
            p.r * q.i + p.i * q.r + p.j * q.k - p.k * q.j,
            p.r * q.j - p.i * q.k + p.j * q.r + p.k * q.i,
            p.r * q.k + p.i * q.j - p.j * q.i + p.k * q.r};
}

Quaternion operator+(const Quaternion& a, const Quaternion& b) {
    return {a.r + b.r, a.i + b.i, a.j + b.j, a.k + b.k};
}
Quaternion operator-(const Quaternion& a, const Quaternion& b) {
    return {a.r - b.r, a.i - b.i, a.j - b.j, a.k - b.k};
}
Quaternion operator*(double s, const Quaternion& q) {
    return {s * q.r, s * q.i, s * q.j, s * q.k};
}

static void check_component_shapes(const Tensor& r, const Tensor& i, const Tensor& j,
                                   const Tensor& k, const char* what) {
    if (!r.same_shape(i) || !r.same_shape(j) || !r.same_shape(k))
        throw std::invalid_argument(std::string(what) + ": component arrays must share one shape");
    if (r.rank() != 4)
        throw std::invalid_argument(std::string(what) + ": components must be rank 4, got " +
                                    shape_str(r.shape()));
}

QTensor::QTensor(Tensor r_, Tensor i_, Tensor j_, Tensor k_)
    : r(std::move(r_)), i(std::move(i_)), j(std::move(j_)), k(std::move(k_)) {
    check_component_shapes(r, i, j, k, "QTensor");
}

QTensor QTensor::zeros(int64_t b, int64_t c, int64_t h, int64_t w) {
    std::vector<int64_t> s{b, c, h, w};
    return QTensor(Tensor(s), Tensor(s), Tensor(s), Tensor(s));
}

QKernel::QKernel(Tensor r_, Tensor i_, Tensor j_, Tensor k_, int stride_, int padding_)
    : r(std::move(r_)), i(std::move(i_)), j(std::move(j_)), k(std::move(k_)),
      stride(stride_), padding(padding_) {
    check_component_shapes(r, i, j, k, "QKernel");
    if (stride < 1 || padding < 0)
        throw std::invalid_argument("QKernel: stride must be >= 1 and padding >= 0");
}

QKernel QKernel::zeros(int64_t cout, int64_t cin, int64_t kh, int64_t kw, int stride,
                       int padding) {
    std::vector<int64_t> s{cout, cin, kh, kw};
    return QKernel(Tensor(s), Tensor(s), Tensor(s), Tensor(s), stride, padding);
}

QKernel QKernel::random(int64_t cout, int64_t cin, int64_t kh, int64_t kw, int stride,
                        int padding, Rng& rng) {
    const double fan_in = 4.0 * static_cast<double>(cin * kh * kw);
    const double fan_out = 4.0 * static_cast<double>(cout * kh * kw);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<int64_t> s{cout, cin, kh, kw};
    return QKernel(random_uniform(s, -limit, limit, rng), random_uniform(s, -limit, limit, rng),
                   random_uniform(s, -limit, limit, rng), random_uniform(s, -limit, limit, rng),
                   stride, padding);
}

QTensor from_rgb(const Tensor& image) {
    if (image.rank() != 4 || image.dim(1) != 3)
        throw std::invalid_argument("from_rgb: expected B x 3 x H x W, got " +
                                    shape_str(image.shape()));
    for (int64_t n = 0; n < image.numel(); ++n)
        if (!(image[n] >= 0.0 && image[n] <= 1.0))
            throw std::invalid_argument("from_rgb: pixel value out of [0,1]");
    const int64_t b = image.dim(0), h = image.dim(2), w = image.dim(3), hw = h * w;
    QTensor q = QTensor::zeros(b, 1, h, w);
    for (int64_t n = 0; n < b; ++n) {
        const double* src = image.data() + n * 3 * hw;
        std::copy(src, src + hw, q.i.data() + n * hw);
        std::copy(src + hw, src + 2 * hw, q.j.data() + n * hw);
        std::copy(src + 2 * hw, src + 3 * hw, q.k.data() + n * hw);
    }
    return q;
}

Tensor to_rgb(const QTensor& q) {
    if (q.channels() != 1)
        throw std::invalid_argument("to_rgb: expected a single quaternion channel, got " +
                                    std::to_string(q.channels()));
    const int64_t b = q.batch(), h = q.height(), w = q.width(), hw = h * w;
    Tensor img({b, 3, h, w});
    auto clamp01 = [](double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); };
    for (int64_t n = 0; n < b; ++n) {
        double* dst = img.data() + n * 3 * hw;
        const double* ci = q.i.data() + n * hw;
        const double* cj = q.j.data() + n * hw;
        const double* ck = q.k.data() + n * hw;
        for (int64_t p = 0; p < hw; ++p) {
            dst[p] = clamp01(ci[p]);
            dst[hw + p] = clamp01(cj[p]);
            dst[2 * hw + p] = clamp01(ck[p]);
        }
    }
    return img;
}

int64_t conv_out_dim(int64_t n, int64_t k, int stride, int padding) {
    const int64_t span = n + 2 * padding - k;
    if (span < 0)
        throw std::invalid_argument("qconv: kernel larger than padded input");
    return span / stride + 1;
}

QTensor qconv(const QTensor& x, const QKernel& w) {
    if (x.channels() != w.cin())
        throw std::invalid_argument("qconv: input channels " + std::to_string(x.channels()) +
                                    " do not match kernel Cin " + std::to_string(w.cin()));
    const int64_t ho = conv_out_dim(x.height(), w.kh(), w.stride, w.padding);
    const int64_t wo = conv_out_dim(x.width(), w.kw(), w.stride, w.padding);
    Tensor xp = pack(x);
    Tensor wp = pack_kernel(w);
    Tensor yp({x.batch(), 4 * w.cout(), ho, wo});
    qkernels::qconv_forward(xp.data(), wp.data(), yp.data(), x.batch(), x.channels(),
                            x.height(), x.width(), w.cout(), w.kh(), w.kw(), w.stride,
                            w.padding);
    return unpack(yp);
}

QTensor split_activation(const QTensor& x, const std::string& phi) {
    double (*f)(double) = nullptr;
    if (phi == "relu")
        f = relu_scalar;
    else if (phi == "sigmoid")
        f = sigmoid_scalar;
    else if (phi == "tanh")
        f = [](double v) { return std::tanh(v); };
    else
        throw std::invalid_argument("split_activation: unknown activation '" + phi + "'");
    QTensor out = x;
    for (Tensor* c : {&out.r, &out.i, &out.j, &out.k})
        for (int64_t n = 0; n < c->numel(); ++n) (*c)[n] = f((*c)[n]);
    return out;
}

double relu_scalar(double v) { return v > 0.0 ? v : 0.0; }
double sigmoid_scalar(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Tensor pack(const QTensor& q) {
    const int64_t b = q.batch(), c = q.channels(), hw = q.height() * q.width();
    Tensor out({b, 4 * c, q.height(), q.width()});
    const Tensor* comps[4] = {&q.r, &q.i, &q.j, &q.k};
    for (int64_t n = 0; n < b; ++n)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int comp = 0; comp < 4; ++comp)
                std::copy(comps[comp]->data() + (n * c + ch) * hw,
                          comps[comp]->data() + (n * c + ch + 1) * hw,
                          out.data() + ((n * 4 * c) + 4 * ch + comp) * hw);
    return out;
}

QTensor unpack(const Tensor& packed) {
    if (packed.rank() != 4 || packed.dim(1) % 4 != 0)
        throw std::invalid_argument("unpack: expected B x 4C x H x W, got " +
                                    shape_str(packed.shape()));
    const int64_t b = packed.dim(0), c = packed.dim(1) / 4;
    const int64_t hw = packed.dim(2) * packed.dim(3);
    QTensor q = QTensor::zeros(b, c, packed.dim(2), packed.dim(3));
    Tensor* comps[4] = {&q.r, &q.i, &q.j, &q.k};
    for (int64_t n = 0; n < b; ++n)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int comp = 0; comp < 4; ++comp)
                std::copy(packed.data() + ((n * 4 * c) + 4 * ch + comp) * hw,
                          packed.data() + ((n * 4 * c) + 4 * ch + comp + 1) * hw,
                          comps[comp]->data() + (n * c + ch) * hw);
    return q;
}

Tensor pack_kernel(const QKernel& w) {
    const int64_t taps = w.r.numel();
    Tensor out({w.cout(), w.cin(), w.kh(), w.kw(), 4});
    const Tensor* comps[4] = {&w.r, &w.i, &w.j, &w.k};
    for (int64_t t = 0; t < taps; ++t)
        for (int comp = 0; comp < 4; ++comp) out[t * 4 + comp] = (*comps[comp])[t];
    return out;
}

QKernel unpack_kernel(const Tensor& packed, int stride, int padding) {
    if (packed.rank() != 5 || packed.dim(4) != 4)
        throw std::invalid_argument("unpack_kernel: expected Cout x Cin x kh x kw x 4, got " +
                                    shape_str(packed.shape()));
    std::vector<int64_t> s{packed.dim(0), packed.dim(1), packed.dim(2), packed.dim(3)};
    QKernel w = QKernel::zeros(s[0], s[1], s[2], s[3], stride, padding);
    Tensor* comps[4] = {&w.r, &w.i, &w.j, &w.k};
    for (int64_t t = 0; t < w.r.numel(); ++t)
        for (int comp = 0; comp < 4; ++comp) (*comps[comp])[t] = packed[t * 4 + comp];
    return w;
}

namespace qkernels {

namespace {

// Valid output-column range for a given kernel column: ox*stride + kx - pad in [0, w).
inline void ox_range(int64_t wd, int64_t wo, int64_t kx, int stride, int pad, int64_t& lo,
                     int64_t& hi) {
    const int64_t off = kx - pad;
    lo = 0;
    if (off < 0) lo = (-off + stride - 1) / stride;
    hi = wo - 1;
    const int64_t max_num = wd - 1 - off;
    if (max_num < 0) {
        hi = -1;
        return;
    }
    if (max_num / stride < hi) hi = max_num / stride;
}

}  // namespace

void qconv_forward(const double* x, const double* w, double* y, int64_t b, int64_t cin,
                   int64_t h, int64_t wd, int64_t cout, int64_t kh, int64_t kw, int stride,
                   int pad) {
    const int64_t ho = conv_out_dim(h, kh, stride, pad);
    const int64_t wo = conv_out_dim(wd, kw, stride, pad);
    const int64_t in_hw = h * wd, out_hw = ho * wo;
    std::fill(y, y + b * 4 * cout * out_hw, 0.0);
    for (int64_t n = 0; n < b; ++n) {
        for (int64_t co = 0; co < cout; ++co) {
            double* yr = y + ((n * 4 * cout) + 4 * co + 0) * out_hw;
            double* yi = yr + out_hw;
            double* yj = yi + out_hw;
            double* yk = yj + out_hw;
            for (int64_t ci = 0; ci < cin; ++ci) {
                const double* xr = x + ((n * 4 * cin) + 4 * ci + 0) * in_hw;
                const double* xi = xr + in_hw;
                const double* xj = xi + in_hw;
                const double* xk = xj + in_hw;
                for (int64_t ky = 0; ky < kh; ++ky)
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        const double* wq = w + (((co * cin + ci) * kh + ky) * kw + kx) * 4;
                        const double wr = wq[0], wi = wq[1], wj = wq[2], wk = wq[3];
                        int64_t lo, hi;
                        ox_range(wd, wo, kx, stride, pad, lo, hi);
                        for (int64_t oy = 0; oy < ho; ++oy) {
                            const int64_t iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            const int64_t xrow = iy * wd + kx - pad;
                            const int64_t yrow = oy * wo;
                            for (int64_t ox = lo; ox <= hi; ++ox) {
                                const int64_t xi_idx = xrow + ox * stride;
                                const double ar = xr[xi_idx], ai = xi[xi_idx],
                                             aj = xj[xi_idx], ak = xk[xi_idx];
                                yr[yrow + ox] += ar * wr - ai * wi - aj * wj - ak * wk;
                                yi[yrow + ox] += ar * wi + ai * wr + aj * wk - ak * wj;
                                yj[yrow + ox] += ar * wj - ai * wk + aj * wr + ak * wi;
                                yk[yrow + ox] += ar * wk + ai * wj - aj * wi + ak * wr;
                            }
                        }
                    }
            }
        }
    }
}

void qconv_backward_input(const double* g, const double* w, double* dx, int64_t b,
                          int64_t cin, int64_t h, int64_t wd, int64_t cout, int64_t kh,
                          int64_t kw, int stride, int pad) {
    const int64_t ho = conv_out_dim(h, kh, stride, pad);
    const int64_t wo = conv_out_dim(wd, kw, stride, pad);
    const int64_t in_hw = h * wd, out_hw = ho * wo;
    for (int64_t n = 0; n < b; ++n) {
        for (int64_t co = 0; co < cout; ++co) {
            const double* gr = g + ((n * 4 * cout) + 4 * co + 0) * out_hw;
            const double* gi = gr + out_hw;
            const double* gj = gi + out_hw;
            const double* gk = gj + out_hw;
            for (int64_t ci = 0; ci < cin; ++ci) {
                double* dr = dx + ((n * 4 * cin) + 4 * ci + 0) * in_hw;
                double* di = dr + in_hw;
                double* dj = di + in_hw;
                double* dk = dj + in_hw;
                for (int64_t ky = 0; ky < kh; ++ky)
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        // dx += g (x) conj(w)
                        const double* wq = w + (((co * cin + ci) * kh + ky) * kw + kx) * 4;
                        const double wr = wq[0], wi = -wq[1], wj = -wq[2], wk = -wq[3];
                        int64_t lo, hi;
                        ox_range(wd, wo, kx, stride, pad, lo, hi);
                        for (int64_t oy = 0; oy < ho; ++oy) {
                            const int64_t iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            const int64_t xrow = iy * wd + kx - pad;
                            const int64_t yrow = oy * wo;
                            for (int64_t ox = lo; ox <= hi; ++ox) {
                                const int64_t xi_idx = xrow + ox * stride;
                                const double ar = gr[yrow + ox], ai = gi[yrow + ox],
                                             aj = gj[yrow + ox], ak = gk[yrow + ox];
                                dr[xi_idx] += ar * wr - ai * wi - aj * wj - ak * wk;
                                di[xi_idx] += ar * wi + ai * wr + aj * wk - ak * wj;
                                dj[xi_idx] += ar * wj - ai * wk + aj * wr + ak * wi;
                                dk[xi_idx] += ar * wk + ai * wj - aj * wi + ak * wr;
                            }
                        }
                    }
            }
        }
    }
}

void qconv_backward_weight(const double* g, const double* x, double* dw, int64_t b,
                           int64_t cin, int64_t h, int64_t wd, int64_t cout, int64_t kh,
                           int64_t kw, int stride, int pad) {
    const int64_t ho = conv_out_dim(h, kh, stride, pad);
    const int64_t wo = conv_out_dim(wd, kw, stride, pad);
    const int64_t in_hw = h * wd, out_hw = ho * wo;
    for (int64_t n = 0; n < b; ++n) {
        for (int64_t co = 0; co < cout; ++co) {
            const double* gr = g + ((n * 4 * cout) + 4 * co + 0) * out_hw;
            const double* gi = gr + out_hw;
            const double* gj = gi + out_hw;
            const double* gk = gj + out_hw;
            for (int64_t ci = 0; ci < cin; ++ci) {
                const double* xr = x + ((n * 4 * cin) + 4 * ci + 0) * in_hw;
                const double* xi = xr + in_hw;
                const double* xj = xi + in_hw;
                const double* xk = xj + in_hw;
                for (int64_t ky = 0; ky < kh; ++ky)
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        // dw += conj(x) (x) g, accumulated over all output positions
                        double sr = 0, si = 0, sj = 0, sk = 0;
                        int64_t lo, hi;
                        ox_range(wd, wo, kx, stride, pad, lo, hi);
                        for (int64_t oy = 0; oy < ho; ++oy) {
                            const int64_t iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            const int64_t xrow = iy * wd + kx - pad;
                            const int64_t yrow = oy * wo;
                            for (int64_t ox = lo; ox <= hi; ++ox) {
                                const int64_t xi_idx = xrow + ox * stride;
                                const double pr = xr[xi_idx], pi = -xi[xi_idx],
                                             pj = -xj[xi_idx], pk = -xk[xi_idx];
                                const double qr = gr[yrow + ox], qi = gi[yrow + ox],
                                             qj = gj[yrow + ox], qk = gk[yrow + ox];
                                sr += pr * qr - pi * qi - pj * qj - pk * qk;
                                si += pr * qi + pi * qr + pj * qk - pk * qj;
                                sj += pr * qj - pi * qk + pj * qr + pk * qi;
                                sk += pr * qk + pi * qj - pj * qi + pk * qr;
                            }
                        }
                        double* wq = dw + (((co * cin + ci) * kh + ky) * kw + kx) * 4;
                        wq[0] += sr;
                        wq[1] += si;
                        wq[2] += sj;
                        wq[3] += sk;
                    }
            }
        }
    }
}

void qmul_forward(const double* a, const double* bq, double* y, int64_t planes, int64_t hw) {
    for (int64_t pl = 0; pl < planes; ++pl) {
        const int64_t base = pl * 4 * hw;
        const double *ar = a + base, *ai = ar + hw, *aj = ai + hw, *ak = aj + hw;
        const double *br = bq + base, *bi = br + hw, *bj = bi + hw, *bk = bj + hw;
        double *yr = y + base, *yi = yr + hw, *yj = yi + hw, *yk = yj + hw;
        for (int64_t p = 0; p < hw; ++p) {
            yr[p] = ar[p] * br[p] - ai[p] * bi[p] - aj[p] * bj[p] - ak[p] * bk[p];
            yi[p] = ar[p] * bi[p] + ai[p] * br[p] + aj[p] * bk[p] - ak[p] * bj[p];
            yj[p] = ar[p] * bj[p] - ai[p] * bk[p] + aj[p] * br[p] + ak[p] * bi[p];
            yk[p] = ar[p] * bk[p] + ai[p] * bj[p] - aj[p] * bi[p] + ak[p] * br[p];
        }
    }
}

void qmul_backward(const double* g, const double* a, const double* bq, double* da,
                   double* db, int64_t planes, int64_t hw) {
    for (int64_t pl = 0; pl < planes; ++pl) {
        const int64_t base = pl * 4 * hw;
        const double *gr = g + base, *gi = gr + hw, *gj = gi + hw, *gk = gj + hw;
        const double *ar = a + base, *ai = ar + hw, *aj = ai + hw, *ak = aj + hw;
        const double *br = bq + base, *bi = br + hw, *bj = bi + hw, *bk = bj + hw;
        double *dar = da + base, *dai = dar + hw, *daj = dai + hw, *dak = daj + hw;
        double *dbr = db + base, *dbi = dbr + hw, *dbj = dbi + hw, *dbk = dbj + hw;
        for (int64_t p = 0; p < hw; ++p) {
            // da += g (x) conj(b)
            const double cr = br[p], ci = -bi[p], cj = -bj[p], ck = -bk[p];
            dar[p] += gr[p] * cr - gi[p] * ci - gj[p] * cj - gk[p] * ck;
            dai[p] += gr[p] * ci + gi[p] * cr + gj[p] * ck - gk[p] * cj;
            daj[p] += gr[p] * cj - gi[p] * ck + gj[p] * cr + gk[p] * ci;
            dak[p] += gr[p] * ck + gi[p] * cj - gj[p] * ci + gk[p] * cr;
            // db += conj(a) (x) g
            const double pr = ar[p], pi = -ai[p], pj = -aj[p], pk = -ak[p];
            dbr[p] += pr * gr[p] - pi * gi[p] - pj * gj[p] - pk * gk[p];
            dbi[p] += pr * gi[p] + pi * gr[p] + pj * gk[p] - pk * gj[p];
            dbj[p] += pr * gj[p] - pi * gk[p] + pj * gr[p] + pk * gi[p];
            dbk[p] += pr * gk[p] + pi * gj[p] - pj * gi[p] + pk * gr[p];
        }
    }
}

}  // namespace qkernels

}  // namespace qhnet
