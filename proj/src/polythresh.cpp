#include "qhnet/polythresh.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>

namespace qhnet {

PolyThreshold::PolyThreshold(std::vector<double> delta_, std::vector<double> coeffs_,
                             double steepness_, Mode mode_)
    : delta(std::move(delta_)), coeffs(std::move(coeffs_)),
      degree_terms(static_cast<int>(coeffs.size()) - 1), steepness(steepness_), mode(mode_) {
    if (degree_terms < 2)
        throw std::invalid_argument("PolyThreshold: need at least 3 coefficients (N >= 2)");
    if (delta.empty()) throw std::invalid_argument("PolyThreshold: empty threshold vector");
    for (double d : delta)
        if (!(d >= 0.0)) throw std::invalid_argument("PolyThreshold: thresholds must be >= 0");
    if (!(steepness > 0.0))
        throw std::invalid_argument("PolyThreshold: steepness must be > 0");
}

PolyThreshold PolyThreshold::tied(std::vector<double> delta_, std::vector<double> first_n,
                                  double steepness_, Mode mode_) {
    if (first_n.size() < 2)
        throw std::invalid_argument("PolyThreshold::tied: need at least N=2 coefficients");
    first_n.push_back(first_n.back());
    return PolyThreshold(std::move(delta_), std::move(first_n), steepness_, mode_);
}

PolyThreshold PolyThreshold::soft(std::vector<double> delta_, int degree_terms_) {
    std::vector<double> a(static_cast<size_t>(degree_terms_) + 1, 0.0);
    a[a.size() - 2] = 1.0;
    a[a.size() - 1] = 1.0;
    return PolyThreshold(std::move(delta_), std::move(a));
}

PolyThreshold PolyThreshold::identity(int64_t channels, int degree_terms_) {
    std::vector<double> a(static_cast<size_t>(degree_terms_) + 1, 0.0);
    a[a.size() - 2] = 1.0;
    return PolyThreshold(std::vector<double>(static_cast<size_t>(channels), 0.0), std::move(a));
}

namespace ptk {

double hard_value(double x, double delta, const double* a, int n) {
    if (std::abs(x) > delta) return a[n - 1] * x - a[n] * sgn(x) * delta;
    double acc = 0.0;
    double xp = x;  // x^(2k+1)
    const double x2 = x * x;
    for (int k = 0; k <= n - 2; ++k) {
        acc += a[k] * xp;
        xp *= x2;
    }
    return acc;
}

double surrogate_value(double x, double delta, const double* a, int n, double k) {
    const double s = 1.0 / (1.0 + std::exp(-k * (std::abs(x) - delta)));
    const double above = a[n - 1] * x - a[n] * sgn(x) * delta;
    double below = 0.0;
    double xp = x;
    const double x2 = x * x;
    for (int m = 0; m <= n - 2; ++m) {
        below += a[m] * xp;
        xp *= x2;
    }
    return s * above + (1.0 - s) * below;
}

SurrogatePartials surrogate_partials(double x, double delta, const double* a, int n,
                                     double k, double g, double* da) {
    const double sg = sgn(x);
    const double s = 1.0 / (1.0 + std::exp(-k * (std::abs(x) - delta)));
    const double sp = s * (1.0 - s);  // sigma'
    const double above = a[n - 1] * x - a[n] * sg * delta;
    double below = 0.0, dbelow = 0.0;
    double xp = x;          // x^(2m+1)
    double xpd = 1.0;       // x^(2m)
    const double x2 = x * x;
    for (int m = 0; m <= n - 2; ++m) {
        below += a[m] * xp;
        dbelow += a[m] * static_cast<double>(2 * m + 1) * xpd;
        da[m] += g * (1.0 - s) * xp;
        xp *= x2;
        xpd *= x2;
    }
    da[n - 1] += g * s * x;
    da[n] += g * (-s * sg * delta);
    // sgn and the branch condition are piecewise constant; their derivative
    // contribution is zero by convention.
    SurrogatePartials out;
    out.dx = g * (sp * k * sg * (above - below) + s * a[n - 1] + (1.0 - s) * dbelow);
    out.ddelta = g * (-sp * k * (above - below) - s * a[n] * sg);
    return out;
}

}  // namespace ptk

static void check_channel(const PolyThreshold& t, int64_t channel) {
    if (channel < 0 || channel >= t.channels())
        throw std::invalid_argument("PolyThreshold: channel index out of range");
}

double apply_hard(double x, const PolyThreshold& t, int64_t channel) {
    check_channel(t, channel);
    return ptk::hard_value(x, t.delta[static_cast<size_t>(channel)], t.coeffs.data(),
                           t.degree_terms);
}

double apply_surrogate(double x, const PolyThreshold& t, int64_t channel) {
    check_channel(t, channel);
    return ptk::surrogate_value(x, t.delta[static_cast<size_t>(channel)], t.coeffs.data(),
                                t.degree_terms, t.steepness);
}

std::vector<double> feature_vector(double x, const PolyThreshold& t, int64_t channel) {
    check_channel(t, channel);
    const int n = t.degree_terms;
    std::vector<double> f(static_cast<size_t>(n) + 1, 0.0);
    const double delta = t.delta[static_cast<size_t>(channel)];
    if (std::abs(x) > delta) {
        f[static_cast<size_t>(n - 1)] = x;
        f[static_cast<size_t>(n)] = -sgn(x) * delta;
    } else {
        double xp = x;
        const double x2 = x * x;
        for (int k = 0; k <= n - 2; ++k) {
            f[static_cast<size_t>(k)] = xp;
            xp *= x2;
        }
    }
    return f;
}

std::vector<double> fit_mmse(const std::vector<double>& noisy_coeffs,
                             const std::vector<double>& clean_coeffs, int degree_terms,
                             double delta) {
    if (noisy_coeffs.size() != clean_coeffs.size())
        throw std::invalid_argument("fit_mmse: sample counts differ");
    const int n = degree_terms;
    if (n < 2) throw std::invalid_argument("fit_mmse: degree_terms must be >= 2");
    const size_t dim = static_cast<size_t>(n) + 1;
    if (noisy_coeffs.size() < dim)
        throw std::invalid_argument("fit_mmse: underdetermined, need at least " +
                                    std::to_string(dim) + " samples");

    PolyThreshold probe({delta}, std::vector<double>(dim, 0.0));
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim),
                                                 static_cast<Eigen::Index>(dim));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    for (size_t i = 0; i < noisy_coeffs.size(); ++i) {
        const std::vector<double> f = feature_vector(noisy_coeffs[i], probe, 0);
        for (size_t r = 0; r < dim; ++r) {
            if (f[r] == 0.0) continue;
            rhs[static_cast<Eigen::Index>(r)] += f[r] * clean_coeffs[i];
            for (size_t c = 0; c < dim; ++c)
                gram(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) += f[r] * f[c];
        }
    }
    const double inv_n = 1.0 / static_cast<double>(noisy_coeffs.size());
    gram *= inv_n;
    rhs *= inv_n;

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram, Eigen::ComputeFullU | Eigen::ComputeFullV);
    svd.setThreshold(1e-12);  // relative to sigma_max
    Eigen::VectorXd a = svd.solve(rhs);
    return std::vector<double>(a.data(), a.data() + dim);
}

Tensor apply_tensor(const Tensor& x, const PolyThreshold& t) {
    if (x.rank() != 4)
        throw std::invalid_argument("apply_tensor: expected B x C x H x W, got " +
                                    shape_str(x.shape()));
    if (x.dim(1) != t.channels())
        throw std::invalid_argument("apply_tensor: tensor has " + std::to_string(x.dim(1)) +
                                    " channels but threshold vector has " +
                                    std::to_string(t.channels()));
    Tensor out = x;
    const int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const double* a = t.coeffs.data();
    const int n = t.degree_terms;
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
            const double delta = t.delta[static_cast<size_t>(ci)];
            double* p = out.data() + (bi * c + ci) * hw;
            if (t.mode == PolyThreshold::Mode::Hard) {
                for (int64_t e = 0; e < hw; ++e) p[e] = ptk::hard_value(p[e], delta, a, n);
            } else {
                for (int64_t e = 0; e < hw; ++e)
                    p[e] = ptk::surrogate_value(p[e], delta, a, n, t.steepness);
            }
        }
    return out;
}

}  // namespace qhnet
