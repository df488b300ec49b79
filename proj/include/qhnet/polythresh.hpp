#pragma once

#include <vector>

#include "qhnet/tensor.hpp"

namespace qhnet {

/// Polynomial thresholding operator T_{delta,a}. Above the per-channel
/// threshold it acts as the affine shrinkage a[N-1]*x - a[N]*sgn(x)*delta;
/// at or below it, as the odd polynomial sum_{k=0}^{N-2} a[k]*x^(2k+1).
/// The boundary |x| == delta takes the polynomial branch (strict '>').
///
/// Hard mode is the inference operator (non-differentiable by design).
/// Surrogate mode blends the two branches with sigmoid(steepness*(|x|-delta))
/// and is differentiable everywhere, with the convention sgn(0) = 0.
struct PolyThreshold {
    enum class Mode { Hard, Surrogate };

    std::vector<double> delta;   ///< per-channel thresholds, each >= 0
    std::vector<double> coeffs;  ///< a_0 .. a_N (length degree_terms + 1)
    int degree_terms = 0;        ///< N >= 2
    double steepness = 1.0;      ///< surrogate sharpness k > 0
    Mode mode = Mode::Hard;

    PolyThreshold(std::vector<double> delta_, std::vector<double> coeffs_,
                  double steepness_ = 1.0, Mode mode_ = Mode::Hard);

    /// Tied-coefficient form: the caller passes N values a_0..a_{N-1} and the
    /// above-threshold subtrahend coefficient a_N is tied to a_{N-1}. This is
    /// the collapsed x - delta*sgn(x) presentation; it cannot express a pure
    /// hard threshold, the full form can.
    static PolyThreshold tied(std::vector<double> delta_, std::vector<double> first_n,
                              double steepness_ = 1.0, Mode mode_ = Mode::Hard);

    /// Classical soft threshold: a = [0,...,0,1,1].
    static PolyThreshold soft(std::vector<double> delta_, int degree_terms_);

    /// Acts as the identity map: delta = 0 and a = [0,...,0,1,0].
    static PolyThreshold identity(int64_t channels, int degree_terms_);

    int64_t channels() const { return static_cast<int64_t>(delta.size()); }
};

inline double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

double apply_hard(double x, const PolyThreshold& t, int64_t channel);
double apply_surrogate(double x, const PolyThreshold& t, int64_t channel);

/// f(x) with apply_hard(x) == dot(feature_vector(x), coeffs) exactly:
/// above threshold [0,...,0, x, -sgn(x)*delta], below [x, x^3, ..., x^(2N-3), 0, 0].
std::vector<double> feature_vector(double x, const PolyThreshold& t, int64_t channel);

/// MMSE coefficient fit: solves the normal equations of
/// min_a sum_i |d_i - f(y_i) . a|^2 over paired transform-domain samples.
/// Falls back to the pseudo-inverse (singular values below 1e-12 * sigma_max
/// dropped) when the Gram matrix is singular. Throws if there are fewer
/// samples than N+1 coefficients.
std::vector<double> fit_mmse(const std::vector<double>& noisy_coeffs,
                             const std::vector<double>& clean_coeffs, int degree_terms,
                             double delta);

/// Elementwise operator over B x C x H x W in the active mode; channel c uses
/// delta[c]. Exactly equal to the scalar loop.
Tensor apply_tensor(const Tensor& x, const PolyThreshold& t);

/// Scalar kernels shared with the autodiff graph node.
namespace ptk {

double hard_value(double x, double delta, const double* a, int n);
double surrogate_value(double x, double delta, const double* a, int n, double k);

/// Chain-rule pieces of the surrogate at one point, each already multiplied
/// by the upstream gradient g: returns d/dx and d/ddelta, accumulates the
/// N+1 coefficient derivatives into da.
struct SurrogatePartials {
    double dx = 0.0;
    double ddelta = 0.0;
};
SurrogatePartials surrogate_partials(double x, double delta, const double* a, int n,
                                     double k, double g, double* da);

}  // namespace ptk

}  // namespace qhnet
