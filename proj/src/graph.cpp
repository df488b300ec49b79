#include "qhnet/graph.hpp"

#include <cmath>

#include "qhnet/qtensor.hpp"
#include "qhnet/wht.hpp"

namespace qhnet {

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.op = "leaf";
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::emit(Tensor value, const std::vector<Var>& inputs, Backprop backprop,
               const char* op, bool barrier) {
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.barrier = barrier;
    for (Var in : inputs)
        if (node(in).requires_grad) n.requires_grad = true;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Tensor Tape::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.numel() == 0) return Tensor::zeros(n.value.shape());
    return n.grad;
}

Tensor& Tape::grad_buffer(Var v) { return node(v).grad; }

void Tape::backward(Var loss) {
    Node& target = node(loss);
    if (target.value.numel() != 1)
        throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                    shape_str(target.value.shape()));
    for (int32_t i = 0; i <= loss.idx; ++i) {
        const Node& n = nodes_[static_cast<size_t>(i)];
        if (n.barrier && n.requires_grad)
            throw NonDifferentiableError(
                "backward: polynomial thresholding is non-differentiable in hard mode");
    }
    for (int32_t i = 0; i <= loss.idx; ++i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.requires_grad)
            n.grad = Tensor::zeros(n.value.shape());
        else
            n.grad = Tensor();
    }
    if (!target.requires_grad) return;  // no trainable leaves upstream
    target.grad[0] = 1.0;
    for (int32_t i = loss.idx; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.requires_grad && n.backprop) n.backprop(*this);
    }
}

Tensor& ParamStore::create(const std::string& name, Tensor init) {
    if (has(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
    index_[name] = params_.size();
    params_.push_back(Param{name, std::move(init), Tensor()});
    Param& p = params_.back();
    p.grad = Tensor::zeros(p.value.shape());
    return p.value;
}

size_t ParamStore::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
        throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
    return it->second;
}

Param& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
        throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
    return params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
        throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
    return params_[it->second];
}

void ParamStore::zero_grads() {
    for (Param& p : params_) std::fill(p.grad.vec().begin(), p.grad.vec().end(), 0.0);
}

int64_t ParamStore::total_parameters() const {
    int64_t n = 0;
    for (const Param& p : params_) n += p.value.numel();
    return n;
}

Var Binding::operator()(Tape& tape, const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return bound_[it->second].second;
    Param& p = store_->at(name);
    Var v = tape.leaf(p.value, trainable_);
    cache_[name] = bound_.size();
    bound_.emplace_back(store_->index_of(name), v);
    return v;
}

void Binding::accumulate_grads(const Tape& tape) {
    for (auto& [pi, v] : bound_) {
        Param& p = store_->all()[pi];
        const Tensor g = tape.grad(v);
        for (int64_t n = 0; n < g.numel(); ++n) p.grad[n] += g[n];
    }
}

namespace ops {

namespace {

void require_same_shape(const Tape& t, Var a, Var b, const char* op) {
    if (!t.value(a).same_shape(t.value(b)))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(t.value(a).shape()) + " vs " +
                                    shape_str(t.value(b).shape()));
}

// Real convolution kernels, same looping discipline as the quaternion ones.
void rconv_forward(const double* x, const double* w, double* y, int64_t b, int64_t cin,
                   int64_t h, int64_t wd, int64_t cout, int64_t kh, int64_t kw, int stride,
                   int pad) {
    const int64_t ho = conv_out_dim(h, kh, stride, pad);
    const int64_t wo = conv_out_dim(wd, kw, stride, pad);
    const int64_t in_hw = h * wd, out_hw = ho * wo;
    std::fill(y, y + b * cout * out_hw, 0.0);
    for (int64_t n = 0; n < b; ++n)
        for (int64_t co = 0; co < cout; ++co) {
            double* yp = y + (n * cout + co) * out_hw;
            for (int64_t ci = 0; ci < cin; ++ci) {
                const double* xp = x + (n * cin + ci) * in_hw;
                for (int64_t ky = 0; ky < kh; ++ky)
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        const double wv = w[((co * cin + ci) * kh + ky) * kw + kx];
                        for (int64_t oy = 0; oy < ho; ++oy) {
                            const int64_t iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            for (int64_t ox = 0; ox < wo; ++ox) {
                                const int64_t ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= wd) continue;
                                yp[oy * wo + ox] += wv * xp[iy * wd + ix];
                            }
                        }
                    }
            }
        }
}

void rconv_backward_input(const double* g, const double* w, double* dx, int64_t b,
                          int64_t cin, int64_t h, int64_t wd, int64_t cout, int64_t kh,
                          int64_t kw, int stride, int pad) {
    const int64_t ho = conv_out_dim(h, kh, stride, pad);
    const int64_t wo = conv_out_dim(wd, kw, stride, pad);
    const int64_t in_hw = h * wd, out_hw = ho * wo;
    for (int64_t n = 0; n < b; ++n)
        for (int64_t co = 0; co < cout; ++co) {
            const double* gp = g + (n * cout + co) * out_hw;
            for (int64_t ci = 0; ci < cin; ++ci) {
                double* dp = dx + (n * cin + ci) * in_hw;
                for (int64_t ky = 0; ky < kh; ++ky)
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        const double wv = w[((co * cin + ci) * kh + ky) * kw + kx];
                        for (int64_t oy = 0; oy < ho; ++oy) {
                            const int64_t iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            for (int64_t ox = 0; ox < wo; ++ox) {
                                const int64_t ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= wd) continue;
                                dp[iy * wd + ix] += wv * gp[oy * wo + ox];
                            }
                        }
                    }
            }
        }
}

void rconv_backward_weight(const double* g, const double* x, double* dw, int64_t b,
                           int64_t cin, int64_t h, int64_t wd, int64_t cout, int64_t kh,
                           int64_t kw, int stride, int pad) {
    const int64_t ho = conv_out_dim(h, kh, stride, pad);
    const int64_t wo = conv_out_dim(wd, kw, stride, pad);
    const int64_t in_hw = h * wd, out_hw = ho * wo;
    for (int64_t n = 0; n < b; ++n)
        for (int64_t co = 0; co < cout; ++co) {
            const double* gp = g + (n * cout + co) * out_hw;
            for (int64_t ci = 0; ci < cin; ++ci) {
                const double* xp = x + (n * cin + ci) * in_hw;
                for (int64_t ky = 0; ky < kh; ++ky)
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        double acc = 0.0;
                        for (int64_t oy = 0; oy < ho; ++oy) {
                            const int64_t iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            for (int64_t ox = 0; ox < wo; ++ox) {
                                const int64_t ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= wd) continue;
                                acc += xp[iy * wd + ix] * gp[oy * wo + ox];
                            }
                        }
                        dw[((co * cin + ci) * kh + ky) * kw + kx] += acc;
                    }
            }
        }
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
    require_same_shape(t, a, b, "add");
    Tensor out = t.value(a);
    const Tensor& vb = t.value(b);
    for (int64_t n = 0; n < out.numel(); ++n) out[n] += vb[n];
    return t.emit(std::move(out), {a, b},
                  [a, b, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      const Tensor& g = tp.grad_buffer(Var{self});
                      if (tp.wants_grad(a)) {
                          Tensor& ga = tp.grad_buffer(a);
                          for (int64_t n = 0; n < g.numel(); ++n) ga[n] += g[n];
                      }
                      if (tp.wants_grad(b)) {
                          Tensor& gb = tp.grad_buffer(b);
                          for (int64_t n = 0; n < g.numel(); ++n) gb[n] += g[n];
                      }
                  },
                  "add");
}

Var sub(Tape& t, Var a, Var b) {
    require_same_shape(t, a, b, "sub");
    Tensor out = t.value(a);
    const Tensor& vb = t.value(b);
    for (int64_t n = 0; n < out.numel(); ++n) out[n] -= vb[n];
    return t.emit(std::move(out), {a, b},
                  [a, b, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      const Tensor& g = tp.grad_buffer(Var{self});
                      if (tp.wants_grad(a)) {
                          Tensor& ga = tp.grad_buffer(a);
                          for (int64_t n = 0; n < g.numel(); ++n) ga[n] += g[n];
                      }
                      if (tp.wants_grad(b)) {
                          Tensor& gb = tp.grad_buffer(b);
                          for (int64_t n = 0; n < g.numel(); ++n) gb[n] -= g[n];
                      }
                  },
                  "sub");
}

Var mul(Tape& t, Var a, Var b) {
    require_same_shape(t, a, b, "mul");
    Tensor out = t.value(a);
    const Tensor& vb = t.value(b);
    for (int64_t n = 0; n < out.numel(); ++n) out[n] *= vb[n];
    return t.emit(std::move(out), {a, b},
                  [a, b, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      const Tensor& g = tp.grad_buffer(Var{self});
                      const Tensor& va = tp.value(a);
                      const Tensor& vb2 = tp.value(b);
                      if (tp.wants_grad(a)) {
                          Tensor& ga = tp.grad_buffer(a);
                          for (int64_t n = 0; n < g.numel(); ++n) ga[n] += g[n] * vb2[n];
                      }
                      if (tp.wants_grad(b)) {
                          Tensor& gb = tp.grad_buffer(b);
                          for (int64_t n = 0; n < g.numel(); ++n) gb[n] += g[n] * va[n];
                      }
                  },
                  "mul");
}

Var div(Tape& t, Var a, Var b) {
    require_same_shape(t, a, b, "div");
    Tensor out = t.value(a);
    const Tensor& vb = t.value(b);
    for (int64_t n = 0; n < out.numel(); ++n) out[n] /= vb[n];
    return t.emit(std::move(out), {a, b},
                  [a, b, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      const Tensor& g = tp.grad_buffer(Var{self});
                      const Tensor& y = tp.value(Var{self});
                      const Tensor& vb2 = tp.value(b);
                      if (tp.wants_grad(a)) {
                          Tensor& ga = tp.grad_buffer(a);
                          for (int64_t n = 0; n < g.numel(); ++n) ga[n] += g[n] / vb2[n];
                      }
                      if (tp.wants_grad(b)) {
                          Tensor& gb = tp.grad_buffer(b);
                          for (int64_t n = 0; n < g.numel(); ++n)
                              gb[n] -= g[n] * y[n] / vb2[n];
                      }
                  },
                  "div");
}

Var scale(Tape& t, Var a, double s) {
    Tensor out = t.value(a);
    for (int64_t n = 0; n < out.numel(); ++n) out[n] *= s;
    return t.emit(std::move(out), {a},
                  [a, s, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      if (!tp.wants_grad(a)) return;
                      const Tensor& g = tp.grad_buffer(Var{self});
                      Tensor& ga = tp.grad_buffer(a);
                      for (int64_t n = 0; n < g.numel(); ++n) ga[n] += s * g[n];
                  },
                  "scale");
}

Var add_const(Tape& t, Var a, double c) {
    Tensor out = t.value(a);
    for (int64_t n = 0; n < out.numel(); ++n) out[n] += c;
    return t.emit(std::move(out), {a},
                  [a, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      if (!tp.wants_grad(a)) return;
                      const Tensor& g = tp.grad_buffer(Var{self});
                      Tensor& ga = tp.grad_buffer(a);
                      for (int64_t n = 0; n < g.numel(); ++n) ga[n] += g[n];
                  },
                  "add_const");
}

Var relu(Tape& t, Var a) {
    Tensor out = t.value(a);
    for (int64_t n = 0; n < out.numel(); ++n) out[n] = out[n] > 0.0 ? out[n] : 0.0;
    return t.emit(std::move(out), {a},
                  [a, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      if (!tp.wants_grad(a)) return;
                      const Tensor& g = tp.grad_buffer(Var{self});
                      const Tensor& x = tp.value(a);
                      Tensor& ga = tp.grad_buffer(a);
                      for (int64_t n = 0; n < g.numel(); ++n)
                          if (x[n] > 0.0) ga[n] += g[n];
                  },
                  "relu");
}

Var sigmoid(Tape& t, Var a) {
    Tensor out = t.value(a);
    for (int64_t n = 0; n < out.numel(); ++n) out[n] = sigmoid_scalar(out[n]);
    return t.emit(std::move(out), {a},
                  [a, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      if (!tp.wants_grad(a)) return;
                      const Tensor& g = tp.grad_buffer(Var{self});
                      const Tensor& y = tp.value(Var{self});
                      Tensor& ga = tp.grad_buffer(a);
                      for (int64_t n = 0; n < g.numel(); ++n)
                          ga[n] += g[n] * y[n] * (1.0 - y[n]);
                  },
                  "sigmoid");
}

Var tanh(Tape& t, Var a) {
    Tensor out = t.value(a);
    for (int64_t n = 0; n < out.numel(); ++n) out[n] = std::tanh(out[n]);
    return t.emit(std::move(out), {a},
                  [a, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      if (!tp.wants_grad(a)) return;
                      const Tensor& g = tp.grad_buffer(Var{self});
                      const Tensor& y = tp.value(Var{self});
                      Tensor& ga = tp.grad_buffer(a);
                      for (int64_t n = 0; n < g.numel(); ++n)
                          ga[n] += g[n] * (1.0 - y[n] * y[n]);
                  },
                  "tanh");
}

Var clamp(Tape& t, Var a, double lo, double hi) {
    Tensor out = t.value(a);
    for (int64_t n = 0; n < out.numel(); ++n)
        out[n] = out[n] < lo ? lo : (out[n] > hi ? hi : out[n]);
    return t.emit(std::move(out), {a},
                  [a, lo, hi, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      if (!tp.wants_grad(a)) return;
                      const Tensor& g = tp.grad_buffer(Var{self});
                      const Tensor& x = tp.value(a);
                      Tensor& ga = tp.grad_buffer(a);
                      for (int64_t n = 0; n < g.numel(); ++n)
                          if (x[n] >= lo && x[n] <= hi) ga[n] += g[n];
                  },
                  "clamp");
}

Var reshape(Tape& t, Var a, std::vector<int64_t> shape) {
    Tensor out = t.value(a).reshaped(shape);
    return t.emit(std::move(out), {a},
                  [a, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      if (!tp.wants_grad(a)) return;
                      const Tensor& g = tp.grad_buffer(Var{self});
                      Tensor& ga = tp.grad_buffer(a);
                      for (int64_t n = 0; n < g.numel(); ++n) ga[n] += g[n];
                  },
                  "reshape");
}

Var conv2d(Tape& t, Var x, Var w, int stride, int pad) {
    const Tensor& vx = t.value(x);
    const Tensor& vw = t.value(w);
    if (vx.rank() != 4 || vw.rank() != 4)
        throw std::invalid_argument("conv2d: expected rank-4 input and kernel");
    if (vx.dim(1) != vw.dim(1))
        throw std::invalid_argument("conv2d: input channels " + std::to_string(vx.dim(1)) +
                                    " do not match kernel Cin " + std::to_string(vw.dim(1)));
    const int64_t b = vx.dim(0), cin = vx.dim(1), h = vx.dim(2), wd = vx.dim(3);
    const int64_t cout = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
    Tensor out({b, cout, conv_out_dim(h, kh, stride, pad), conv_out_dim(wd, kw, stride, pad)});
    rconv_forward(vx.data(), vw.data(), out.data(), b, cin, h, wd, cout, kh, kw, stride, pad);
    return t.emit(std::move(out), {x, w},
                  [x, w, b, cin, h, wd, cout, kh, kw, stride, pad,
                   self = static_cast<int32_t>(t.size())](Tape& tp) {
                      const Tensor& g = tp.grad_buffer(Var{self});
                      if (tp.wants_grad(x))
                          rconv_backward_input(g.data(), tp.value(w).data(),
                                               tp.grad_buffer(x).data(), b, cin, h, wd, cout,
                                               kh, kw, stride, pad);
                      if (tp.wants_grad(w))
                          rconv_backward_weight(g.data(), tp.value(x).data(),
                                                tp.grad_buffer(w).data(), b, cin, h, wd, cout,
                                                kh, kw, stride, pad);
                  },
                  "conv2d");
}

Var bias_add(Tape& t, Var x, Var b) {
    const Tensor& vx = t.value(x);
    const Tensor& vb = t.value(b);
    if (vx.rank() != 4 || vb.rank() != 1 || vb.dim(0) != vx.dim(1))
        throw std::invalid_argument("bias_add: bias must be [C] matching input channels");
    Tensor out = vx;
    const int64_t bb = vx.dim(0), c = vx.dim(1), hw = vx.dim(2) * vx.dim(3);
    for (int64_t n = 0; n < bb; ++n)
        for (int64_t ci = 0; ci < c; ++ci) {
            double* p = out.data() + (n * c + ci) * hw;
            const double bv = vb[ci];
            for (int64_t e = 0; e < hw; ++e) p[e] += bv;
        }
    return t.emit(std::move(out), {x, b},
                  [x, b, bb, c, hw, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      const Tensor& g = tp.grad_buffer(Var{self});
                      if (tp.wants_grad(x)) {
                          Tensor& gx = tp.grad_buffer(x);
                          for (int64_t n = 0; n < g.numel(); ++n) gx[n] += g[n];
                      }
                      if (tp.wants_grad(b)) {
                          Tensor& gb = tp.grad_buffer(b);
                          for (int64_t n = 0; n < bb; ++n)
                              for (int64_t ci = 0; ci < c; ++ci) {
                                  const double* p = g.data() + (n * c + ci) * hw;
                                  double acc = 0.0;
                                  for (int64_t e = 0; e < hw; ++e) acc += p[e];
                                  gb[ci] += acc;
                              }
                      }
                  },
                  "bias_add");
}

Var qconv(Tape& t, Var x, Var w, int stride, int pad) {
    const Tensor& vx = t.value(x);
    const Tensor& vw = t.value(w);
    if (vx.rank() != 4 || vx.dim(1) % 4 != 0)
        throw std::invalid_argument("qconv: input must be packed [B,4C,H,W], got " +
                                    shape_str(vx.shape()));
    if (vw.rank() != 5 || vw.dim(4) != 4)
        throw std::invalid_argument("qconv: kernel must be packed [Cout,Cin,kh,kw,4], got " +
                                    shape_str(vw.shape()));
    const int64_t b = vx.dim(0), cin = vx.dim(1) / 4, h = vx.dim(2), wd = vx.dim(3);
    const int64_t cout = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
    if (cin != vw.dim(1))
        throw std::invalid_argument("qconv: input quaternion channels " + std::to_string(cin) +
                                    " do not match kernel Cin " + std::to_string(vw.dim(1)));
    Tensor out({b, 4 * cout, conv_out_dim(h, kh, stride, pad),
                conv_out_dim(wd, kw, stride, pad)});
    qkernels::qconv_forward(vx.data(), vw.data(), out.data(), b, cin, h, wd, cout, kh, kw,
                            stride, pad);
    return t.emit(std::move(out), {x, w},
                  [x, w, b, cin, h, wd, cout, kh, kw, stride, pad,
                   self = static_cast<int32_t>(t.size())](Tape& tp) {
                      const Tensor& g = tp.grad_buffer(Var{self});
                      if (tp.wants_grad(x))
                          qkernels::qconv_backward_input(g.data(), tp.value(w).data(),
                                                         tp.grad_buffer(x).data(), b, cin, h,
                                                         wd, cout, kh, kw, stride, pad);
                      if (tp.wants_grad(w))
                          qkernels::qconv_backward_weight(g.data(), tp.value(x).data(),
                                                          tp.grad_buffer(w).data(), b, cin, h,
                                                          wd, cout, kh, kw, stride, pad);
                  },
                  "qconv");
}

Var qmul(Tape& t, Var a, Var b) {
    require_same_shape(t, a, b, "qmul");
    const Tensor& va = t.value(a);
    if (va.rank() != 4 || va.dim(1) % 4 != 0)
        throw std::invalid_argument("qmul: expected packed [B,4C,H,W]");
    const int64_t planes = va.dim(0) * (va.dim(1) / 4), hw = va.dim(2) * va.dim(3);
    Tensor out(va.shape());
    qkernels::qmul_forward(va.data(), t.value(b).data(), out.data(), planes, hw);
    return t.emit(std::move(out), {a, b},
                  [a, b, planes, hw, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      const Tensor& g = tp.grad_buffer(Var{self});
                      // qmul_backward writes both sides; route through scratch
                      // when only one input needs gradients.
                      Tensor scratch_a, scratch_b;
                      double* da;
                      double* db;
                      if (tp.wants_grad(a)) {
                          da = tp.grad_buffer(a).data();
                      } else {
                          scratch_a = Tensor(tp.value(a).shape());
                          da = scratch_a.data();
                      }
                      if (tp.wants_grad(b)) {
                          db = tp.grad_buffer(b).data();
                      } else {
                          scratch_b = Tensor(tp.value(b).shape());
                          db = scratch_b.data();
                      }
                      qkernels::qmul_backward(g.data(), tp.value(a).data(),
                                              tp.value(b).data(), da, db, planes, hw);
                  },
                  "qmul");
}

Var wht2d(Tape& t, Var x) {
    Tensor out = qhnet::wht2d(t.value(x));
    return t.emit(std::move(out), {x},
                  [x, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      if (!tp.wants_grad(x)) return;
                      // Orthonormal WHT is self-adjoint: the gradient is the
                      // transform of the upstream gradient.
                      Tensor gt = qhnet::wht2d(tp.grad_buffer(Var{self}));
                      Tensor& gx = tp.grad_buffer(x);
                      for (int64_t n = 0; n < gt.numel(); ++n) gx[n] += gt[n];
                  },
                  "wht2d");
}

Var pt(Tape& t, Var x, Var delta, Var coeffs, int degree_terms, double steepness,
       int comps) {
    const Tensor& vx = t.value(x);
    const Tensor& vd = t.value(delta);
    const Tensor& va = t.value(coeffs);
    if (vx.rank() != 4) throw std::invalid_argument("pt: expected B x C x H x W input");
    if (comps < 1 || vx.dim(1) % comps != 0 || vx.dim(1) / comps != vd.numel())
        throw std::invalid_argument("pt: delta length " + std::to_string(vd.numel()) +
                                    " does not cover " + std::to_string(vx.dim(1)) +
                                    " channels in groups of " + std::to_string(comps));
    if (va.numel() != degree_terms + 1)
        throw std::invalid_argument("pt: coefficient vector must have N+1 entries");
    const int n = degree_terms;
    const int64_t b = vx.dim(0), c = vx.dim(1), hw = vx.dim(2) * vx.dim(3);
    const bool hard = t.mode() == Mode::Inference;
    Tensor out = vx;
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
            const double dv = vd[ci / comps];
            double* p = out.data() + (bi * c + ci) * hw;
            if (hard)
                for (int64_t e = 0; e < hw; ++e)
                    p[e] = ptk::hard_value(p[e], dv, va.data(), n);
            else
                for (int64_t e = 0; e < hw; ++e)
                    p[e] = ptk::surrogate_value(p[e], dv, va.data(), n, steepness);
        }
    if (hard) return t.emit(std::move(out), {x, delta, coeffs}, nullptr, "pt_hard", true);
    return t.emit(
        std::move(out), {x, delta, coeffs},
        [x, delta, coeffs, n, steepness, comps, b, c, hw,
         self = static_cast<int32_t>(t.size())](Tape& tp) {
            const Tensor& g = tp.grad_buffer(Var{self});
            const Tensor& vx2 = tp.value(x);
            const Tensor& vd2 = tp.value(delta);
            const Tensor& va2 = tp.value(coeffs);
            const bool wx = tp.wants_grad(x), wdl = tp.wants_grad(delta),
                       wa = tp.wants_grad(coeffs);
            std::vector<double> da(static_cast<size_t>(n) + 1, 0.0);
            Tensor* gx = wx ? &tp.grad_buffer(x) : nullptr;
            Tensor* gd = wdl ? &tp.grad_buffer(delta) : nullptr;
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t ci = 0; ci < c; ++ci) {
                    const double dv = vd2[ci / comps];
                    const int64_t base = (bi * c + ci) * hw;
                    double ddelta_acc = 0.0;
                    for (int64_t e = 0; e < hw; ++e) {
                        const auto parts = ptk::surrogate_partials(
                            vx2[base + e], dv, va2.data(), n, steepness, g[base + e],
                            da.data());
                        if (wx) (*gx)[base + e] += parts.dx;
                        ddelta_acc += parts.ddelta;
                    }
                    if (wdl) (*gd)[ci / comps] += ddelta_acc;
                }
            if (wa) {
                Tensor& ga = tp.grad_buffer(coeffs);
                for (int64_t m = 0; m <= n; ++m) ga[m] += da[static_cast<size_t>(m)];
            }
        },
        "pt_surrogate");
}

Var gap(Tape& t, Var x) {
    const Tensor& vx = t.value(x);
    if (vx.rank() != 4) throw std::invalid_argument("gap: expected B x C x H x W");
    const int64_t b = vx.dim(0), c = vx.dim(1), hw = vx.dim(2) * vx.dim(3);
    Tensor out({b, c, 1, 1});
    for (int64_t n = 0; n < b * c; ++n) {
        const double* p = vx.data() + n * hw;
        double acc = 0.0;
        for (int64_t e = 0; e < hw; ++e) acc += p[e];
        out[n] = acc / static_cast<double>(hw);
    }
    return t.emit(std::move(out), {x},
                  [x, b, c, hw, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      if (!tp.wants_grad(x)) return;
                      const Tensor& g = tp.grad_buffer(Var{self});
                      Tensor& gx = tp.grad_buffer(x);
                      const double inv = 1.0 / static_cast<double>(hw);
                      for (int64_t n = 0; n < b * c; ++n) {
                          const double gv = g[n] * inv;
                          double* p = gx.data() + n * hw;
                          for (int64_t e = 0; e < hw; ++e) p[e] += gv;
                      }
                  },
                  "gap");
}

Var comp_mean(Tape& t, Var x) {
    const Tensor& vx = t.value(x);
    if (vx.rank() != 4 || vx.dim(1) % 4 != 0)
        throw std::invalid_argument("comp_mean: expected packed [B,4C,H,W]");
    const int64_t b = vx.dim(0), c = vx.dim(1) / 4, hw = vx.dim(2) * vx.dim(3);
    Tensor out({b, c, vx.dim(2), vx.dim(3)});
    for (int64_t n = 0; n < b; ++n)
        for (int64_t ci = 0; ci < c; ++ci) {
            const double* p0 = vx.data() + ((n * 4 * c) + 4 * ci) * hw;
            double* o = out.data() + (n * c + ci) * hw;
            for (int64_t e = 0; e < hw; ++e)
                o[e] = 0.25 * (p0[e] + p0[hw + e] + p0[2 * hw + e] + p0[3 * hw + e]);
        }
    return t.emit(std::move(out), {x},
                  [x, b, c, hw, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      if (!tp.wants_grad(x)) return;
                      const Tensor& g = tp.grad_buffer(Var{self});
                      Tensor& gx = tp.grad_buffer(x);
                      for (int64_t n = 0; n < b; ++n)
                          for (int64_t ci = 0; ci < c; ++ci) {
                              double* p0 = gx.data() + ((n * 4 * c) + 4 * ci) * hw;
                              const double* go = g.data() + (n * c + ci) * hw;
                              for (int64_t e = 0; e < hw; ++e) {
                                  const double gv = 0.25 * go[e];
                                  p0[e] += gv;
                                  p0[hw + e] += gv;
                                  p0[2 * hw + e] += gv;
                                  p0[3 * hw + e] += gv;
                              }
                          }
                  },
                  "comp_mean");
}

Var qscale(Tape& t, Var x, Var gate) {
    const Tensor& vx = t.value(x);
    const Tensor& vg = t.value(gate);
    if (vx.rank() != 4 || vx.dim(1) % 4 != 0)
        throw std::invalid_argument("qscale: expected packed [B,4C,H,W]");
    const int64_t b = vx.dim(0), c = vx.dim(1) / 4, h = vx.dim(2), w = vx.dim(3);
    const bool pooled = vg.dim(2) == 1 && vg.dim(3) == 1;
    if (vg.rank() != 4 || vg.dim(0) != b || vg.dim(1) != c ||
        (!pooled && (vg.dim(2) != h || vg.dim(3) != w)))
        throw std::invalid_argument("qscale: gate must be [B,C,1,1] or [B,C,H,W], got " +
                                    shape_str(vg.shape()));
    const int64_t hw = h * w;
    Tensor out = vx;
    for (int64_t n = 0; n < b; ++n)
        for (int64_t ci = 0; ci < c; ++ci) {
            const double* gp = vg.data() + (n * c + ci) * (pooled ? 1 : hw);
            for (int comp = 0; comp < 4; ++comp) {
                double* p = out.data() + ((n * 4 * c) + 4 * ci + comp) * hw;
                for (int64_t e = 0; e < hw; ++e) p[e] *= gp[pooled ? 0 : e];
            }
        }
    return t.emit(
        std::move(out), {x, gate},
        [x, gate, b, c, hw, pooled, self = static_cast<int32_t>(t.size())](Tape& tp) {
            const Tensor& g = tp.grad_buffer(Var{self});
            const Tensor& vx2 = tp.value(x);
            const Tensor& vg2 = tp.value(gate);
            const bool wx = tp.wants_grad(x), wg = tp.wants_grad(gate);
            Tensor* gx = wx ? &tp.grad_buffer(x) : nullptr;
            Tensor* gg = wg ? &tp.grad_buffer(gate) : nullptr;
            for (int64_t n = 0; n < b; ++n)
                for (int64_t ci = 0; ci < c; ++ci) {
                    const int64_t gbase = (n * c + ci) * (pooled ? 1 : hw);
                    for (int comp = 0; comp < 4; ++comp) {
                        const int64_t base = ((n * 4 * c) + 4 * ci + comp) * hw;
                        for (int64_t e = 0; e < hw; ++e) {
                            const int64_t gi = gbase + (pooled ? 0 : e);
                            if (wx) (*gx)[base + e] += g[base + e] * vg2[gi];
                            if (wg) (*gg)[gi] += g[base + e] * vx2[base + e];
                        }
                    }
                }
        },
        "qscale");
}

Var upsample2(Tape& t, Var x) {
    const Tensor& vx = t.value(x);
    if (vx.rank() != 4) throw std::invalid_argument("upsample2: expected B x C x H x W");
    const int64_t b = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
    Tensor out({b, c, 2 * h, 2 * w});
    for (int64_t n = 0; n < b * c; ++n) {
        const double* p = vx.data() + n * h * w;
        double* o = out.data() + n * 4 * h * w;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < w; ++xx) {
                const double v = p[y * w + xx];
                o[(2 * y) * 2 * w + 2 * xx] = v;
                o[(2 * y) * 2 * w + 2 * xx + 1] = v;
                o[(2 * y + 1) * 2 * w + 2 * xx] = v;
                o[(2 * y + 1) * 2 * w + 2 * xx + 1] = v;
            }
    }
    return t.emit(std::move(out), {x},
                  [x, b, c, h, w, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      if (!tp.wants_grad(x)) return;
                      const Tensor& g = tp.grad_buffer(Var{self});
                      Tensor& gx = tp.grad_buffer(x);
                      for (int64_t n = 0; n < b * c; ++n) {
                          double* p = gx.data() + n * h * w;
                          const double* o = g.data() + n * 4 * h * w;
                          for (int64_t y = 0; y < h; ++y)
                              for (int64_t xx = 0; xx < w; ++xx)
                                  p[y * w + xx] += o[(2 * y) * 2 * w + 2 * xx] +
                                                   o[(2 * y) * 2 * w + 2 * xx + 1] +
                                                   o[(2 * y + 1) * 2 * w + 2 * xx] +
                                                   o[(2 * y + 1) * 2 * w + 2 * xx + 1];
                      }
                  },
                  "upsample2");
}

Var sum_all(Tape& t, Var a) {
    const Tensor& va = t.value(a);
    double acc = 0.0;
    for (int64_t n = 0; n < va.numel(); ++n) acc += va[n];
    return t.emit(Tensor::scalar(acc), {a},
                  [a, self = static_cast<int32_t>(t.size())](Tape& tp) {
                      if (!tp.wants_grad(a)) return;
                      const double g = tp.grad_buffer(Var{self})[0];
                      Tensor& ga = tp.grad_buffer(a);
                      for (int64_t n = 0; n < ga.numel(); ++n) ga[n] += g;
                  },
                  "sum_all");
}

Var mean_all(Tape& t, Var a) {
    const int64_t n = t.value(a).numel();
    return scale(t, sum_all(t, a), 1.0 / static_cast<double>(n));
}

Var half_sse(Tape& t, Var a, Var b) {
    Var d = sub(t, a, b);
    return scale(t, sum_all(t, mul(t, d, d)), 0.5);
}

Var mse(Tape& t, Var a, Var b) {
    Var d = sub(t, a, b);
    return mean_all(t, mul(t, d, d));
}

}  // namespace ops

Tensor input_gradient(const DifferentiableModel& model, const Tensor& x,
                      const Tensor& loss_target, Mode mode) {
    Tape tape(mode);
    Var vx = tape.leaf(x, true);
    Var out = model.record(tape, vx);
    Var target = tape.leaf(loss_target, false);
    Var loss = ops::half_sse(tape, out, target);
    tape.backward(loss);
    return tape.grad(vx);
}

GradCheckReport grad_check(const std::function<Var(Tape&, Var)>& build, const Tensor& x,
                           double fd_eps, Mode mode, double denom_floor) {
    Tape tape(mode);
    Var vx = tape.leaf(x, true);
    Var loss = build(tape, vx);
    tape.backward(loss);
    const Tensor analytic = tape.grad(vx);

    auto eval = [&](const Tensor& pt) {
        Tape t2(mode);
        Var v = t2.leaf(pt, false);
        return t2.value(build(t2, v))[0];
    };

    GradCheckReport report;
    Tensor probe = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + fd_eps;
        const double up = eval(probe);
        probe[i] = orig - fd_eps;
        const double dn = eval(probe);
        probe[i] = orig;
        const double fd = (up - dn) / (2.0 * fd_eps);
        const double an = analytic[i];
        const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), denom_floor});
        if (err > report.max_rel_err) {
            report.max_rel_err = err;
            report.worst_coord = i;
            report.tape_grad = an;
            report.fd_grad = fd;
        }
    }
    return report;
}

}  // namespace qhnet
