#include "runmax/kernel.hpp"

#include <cmath>

namespace runmax::kernel {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

// Exponent clamp: anything below -745 underflows to subnormal noise; return
// exact zero instead so quadrature sums stay clean.
inline double exp_clamped(double x) { return x < -745.0 ? 0.0 : std::exp(x); }

inline void check_time(double t) {
    if (!(t > 0.0)) throw std::invalid_argument("wedge kernel requires t > 0");
}

// Gaussian factor of the coordinates a^2..a^d with variance t.
inline double tail_gauss(std::span<const double> a, double t) {
    double q = 0.0;
    for (std::size_t k = 1; k < a.size(); ++k) q += a[k] * a[k];
    double norm = std::pow(kTwoPi * t, -0.5 * static_cast<double>(a.size() - 1));
    return norm * exp_clamped(-q / (2.0 * t));
}

inline bool on_wedge(double b, double a1) { return b >= 0.0 && b >= a1; }

} // namespace

double norm_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

double norm_pdf(double x) { return kInvSqrt2Pi * exp_clamped(-0.5 * x * x); }

double norm_quantile_upper(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("tail probability must be in (0,1)");
    // Bisection then Newton on norm_cdf(-r) = p; monotone, well conditioned.
    double lo = 0.0, hi = 40.0;
    for (int i = 0; i < 60; ++i) {
        double mid = 0.5 * (lo + hi);
        (norm_cdf(-mid) > p ? lo : hi) = mid;
    }
    double r = 0.5 * (lo + hi);
    for (int i = 0; i < 4; ++i) {
        double f = norm_cdf(-r) - p;
        double fp = -norm_pdf(r);
        if (fp == 0.0) break;
        r -= f / fp;
    }
    return r;
}

double wedge_kernel(double b, std::span<const double> a, double t) {
    check_time(t);
    if (a.empty()) throw std::invalid_argument("dimension must be >= 1");
    double a1 = a[0];
    if (!on_wedge(b, a1)) return 0.0;
    double u = 2.0 * b - a1;
    double core = 2.0 * u / std::sqrt(kTwoPi * t * t * t) * exp_clamped(-u * u / (2.0 * t));
    return core * tail_gauss(a, t);
}

double wedge_kernel(const WedgePoint& p) { return wedge_kernel(p.b, p.a, p.t); }

double wedge_kernel_partial(Slot which, double b, std::span<const double> a, double t) {
    check_time(t);
    if (a.empty()) throw std::invalid_argument("dimension must be >= 1");
    double a1 = a[0];
    if (!(b > 0.0 && b > a1))
        throw std::invalid_argument("kernel partial requested on or outside the wedge boundary");
    double u = 2.0 * b - a1;
    double e = exp_clamped(-u * u / (2.0 * t));
    double inv = 1.0 / std::sqrt(kTwoPi * t * t * t);
    double gp = 2.0 * inv * (1.0 - u * u / t) * e; // d/du of 2u e^{-u^2/2t}/sqrt(2 pi t^3)
    double g = 2.0 * u * inv * e;
    double tg = tail_gauss(a, t);
    int k = static_cast<int>(which);
    if (which == Slot::b) return 2.0 * gp * tg;
    if (k == 0) return -gp * tg; // a^1 slot
    // a^k slot, k >= 2: derivative of the Gaussian factor.
    double ak = a[static_cast<std::size_t>(k)];
    return g * tg * (-ak / t);
}

Partials1d wedge_kernel_all_1d(double b, double a, double t) {
    if (!on_wedge(b, a)) return {0.0, 0.0, 0.0};
    double u = 2.0 * b - a;
    double e = exp_clamped(-u * u / (2.0 * t));
    double inv = 1.0 / std::sqrt(kTwoPi * t * t * t);
    double g = 2.0 * u * inv * e;
    double gp = 2.0 * inv * (1.0 - u * u / t) * e;
    return {g, 2.0 * gp, -gp};
}

double kernel_partial_mass_b(double m, std::span<const double> a, double t) {
    check_time(t);
    if (a.empty()) throw std::invalid_argument("dimension must be >= 1");
    double a1 = a[0];
    if (m <= std::max(a1, 0.0)) return 0.0;
    double e1 = exp_clamped(-a1 * a1 / (2.0 * t));
    double u = 2.0 * m - a1;
    double e2 = exp_clamped(-u * u / (2.0 * t));
    return (e1 - e2) / std::sqrt(kTwoPi * t) * tail_gauss(a, t);
}

double kernel_partial_mass_b_da1(double m, double a1, double t) {
    // evaluated on the closure: quadrature sweeps need the interior limit on
    // the edge m = a1, where it cancels the kernel value exactly
    if (m < std::max(a1, 0.0)) return 0.0;
    double e1 = exp_clamped(-a1 * a1 / (2.0 * t));
    double u = 2.0 * m - a1;
    double e2 = exp_clamped(-u * u / (2.0 * t));
    return (-(a1 / t) * e1 - (u / t) * e2) / std::sqrt(kTwoPi * t);
}

double h_function(double theta) {
    double v = kInvSqrt2Pi * exp_clamped(-0.5 * theta * theta) - theta * norm_cdf(-theta);
    return v < 0.0 ? 0.0 : v; // tiny negative round-off in the far tail
}

double gaussian_envelope(double b, double u, std::span<const double> v, double t) {
    check_time(t);
    if (!(b >= 0.0 && u >= 0.0)) return 0.0;
    double q = b * b + u * u;
    for (double vk : v) q += vk * vk;
    double d = static_cast<double>(v.size()) + 1.0;
    return std::pow(kTwoPi * t, -0.5 * (d + 1.0)) * exp_clamped(-q / (4.0 * t));
}

} // namespace runmax::kernel
