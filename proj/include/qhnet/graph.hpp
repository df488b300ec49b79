#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "qhnet/polythresh.hpp"
#include "qhnet/tensor.hpp"

namespace qhnet {

enum class Mode { Train, Inference };

/// Raised when a gradient is requested through a hard-mode polynomial
/// thresholding node. Hard thresholding is non-differentiable; the network
/// relies on this to resist gradient-based attacks at inference time.
struct NonDifferentiableError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Var {
    int32_t idx = -1;
    bool valid() const { return idx >= 0; }
};

/// Reverse-mode differentiation tape. Nodes are recorded in program order and
/// the backward pass visits them in exact reverse order, which makes gradient
/// accumulation deterministic. One tape per forward pass; tapes are not
/// shared across threads.
class Tape {
public:
    explicit Tape(Mode mode = Mode::Train) : mode_(mode) {}

    Mode mode() const { return mode_; }

    Var leaf(Tensor value, bool requires_grad = false);

    const Tensor& value(Var v) const { return node(v).value; }
    /// Gradient of the last backward()'s loss w.r.t. this node. Zero tensor
    /// if the node was not on a differentiable path.
    Tensor grad(Var v) const;
    bool requires_grad(Var v) const { return node(v).requires_grad; }
    size_t size() const { return nodes_.size(); }

    /// Seeds the scalar loss with 1 and propagates gradients to every leaf.
    /// Throws NonDifferentiableError if a hard-threshold barrier lies on a
    /// differentiable path.
    void backward(Var loss);

    // -- primitive-author interface -------------------------------------
    using Backprop = std::function<void(Tape&)>;
    Var emit(Tensor value, const std::vector<Var>& inputs, Backprop backprop,
             const char* op, bool barrier = false);
    Tensor& grad_buffer(Var v);
    bool wants_grad(Var v) const { return node(v).requires_grad; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool barrier = false;
        const char* op = "leaf";
        Backprop backprop;
    };

    Node& node(Var v) {
        if (!v.valid() || static_cast<size_t>(v.idx) >= nodes_.size())
            throw std::invalid_argument("Tape: invalid Var");
        return nodes_[static_cast<size_t>(v.idx)];
    }
    const Node& node(Var v) const {
        if (!v.valid() || static_cast<size_t>(v.idx) >= nodes_.size())
            throw std::invalid_argument("Tape: invalid Var");
        return nodes_[static_cast<size_t>(v.idx)];
    }

    std::vector<Node> nodes_;
    Mode mode_;
};

/// Trainable parameter registry: named arrays paired with gradient buffers
/// of identical shape.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
};

class ParamStore {
public:
    Tensor& create(const std::string& name, Tensor init);
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    size_t index_of(const std::string& name) const;
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    std::vector<Param>& all() { return params_; }
    const std::vector<Param>& all() const { return params_; }
    void zero_grads();
    int64_t total_parameters() const;

private:
    std::vector<Param> params_;
    std::unordered_map<std::string, size_t> index_;
};

/// Associates store parameters with tape leaves for one forward pass.
/// Binding the same name twice returns the same leaf, so fan-out gradients
/// accumulate correctly.
class Binding {
public:
    Binding(ParamStore& store, bool trainable) : store_(&store), trainable_(trainable) {}

    Var operator()(Tape& tape, const std::string& name);

    /// After backward: adds each bound leaf's gradient into the store's
    /// gradient buffers.
    void accumulate_grads(const Tape& tape);

private:
    ParamStore* store_;
    bool trainable_;
    std::vector<std::pair<size_t, Var>> bound_;
    std::unordered_map<std::string, size_t> cache_;
};

/// Anything that can record an image-to-image forward pass on a tape.
/// Parameters are bound internally as non-trainable leaves.
class DifferentiableModel {
public:
    virtual ~DifferentiableModel() = default;
    virtual Var record(Tape& tape, Var input) const = 0;
};

/// d(half-SSE restoration loss)/d(input); the gradient used by FGSM/I-FGSM.
/// Propagates NonDifferentiableError for hard-threshold models.
Tensor input_gradient(const DifferentiableModel& model, const Tensor& x,
                      const Tensor& loss_target, Mode mode = Mode::Inference);

struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t worst_coord = -1;
    double tape_grad = 0.0;
    double fd_grad = 0.0;
};

/// Central-finite-difference check of the tape gradient of a scalar-valued
/// builder. Per-coordinate error is |g_t - g_fd| / max(|g_t|, |g_fd|, floor);
/// the floor keeps near-zero gradients from amplifying FD noise.
GradCheckReport grad_check(const std::function<Var(Tape&, Var)>& build, const Tensor& x,
                           double fd_eps = 1e-5, Mode mode = Mode::Train,
                           double denom_floor = 1e-6);

namespace ops {

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var div(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var add_const(Tape& t, Var a, double c);
Var relu(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var tanh(Tape& t, Var a);
Var clamp(Tape& t, Var a, double lo, double hi);
Var reshape(Tape& t, Var a, std::vector<int64_t> shape);

/// Real convolution, zero padding: [B,Cin,H,W] x [Cout,Cin,kh,kw].
Var conv2d(Tape& t, Var x, Var w, int stride, int pad);
/// Per-channel bias: b has shape [C].
Var bias_add(Tape& t, Var x, Var b);

/// Quaternion convolution over the packed layout ([B,4Cin,H,W] x
/// [Cout,Cin,kh,kw,4] -> [B,4Cout,H',W']), zero-quaternion padding.
Var qconv(Tape& t, Var x, Var w, int stride, int pad);
/// Pointwise Hamilton product of two packed tensors.
Var qmul(Tape& t, Var a, Var b);

/// Orthonormal 2D Walsh-Hadamard transform; the adjoint is the transform
/// itself, recorded as a single linear primitive.
Var wht2d(Tape& t, Var x);

/// Polynomial thresholding over [B,C,H,W]-like tensors. delta has one entry
/// per channel group of `comps` consecutive channels (comps=4 for packed
/// quaternion tensors, 1 for plain ones); coeffs has degree_terms+1 entries.
/// Train-mode tapes record the differentiable sigmoid surrogate; inference
/// tapes record the hard operator as a gradient barrier.
Var pt(Tape& t, Var x, Var delta, Var coeffs, int degree_terms, double steepness,
       int comps);

/// Global average pool to [B,C,1,1].
Var gap(Tape& t, Var x);
/// Mean over the four components of a packed tensor: [B,4C,H,W] -> [B,C,H,W].
Var comp_mean(Tape& t, Var x);
/// Multiplies every component of packed x by a real gate of shape [B,C,1,1]
/// (broadcast spatially) or [B,C,H,W].
Var qscale(Tape& t, Var x, Var gate);
/// Nearest-neighbour 2x upsampling.
Var upsample2(Tape& t, Var x);

Var sum_all(Tape& t, Var a);
Var mean_all(Tape& t, Var a);
/// 0.5 * sum((a-b)^2); the restoration loss used by the attack harness.
Var half_sse(Tape& t, Var a, Var b);
/// mean((a-b)^2)
Var mse(Tape& t, Var a, Var b);

}  // namespace ops

}  // namespace qhnet
