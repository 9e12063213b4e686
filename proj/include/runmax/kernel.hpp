#pragma once

#include <span>
#include <stdexcept>
#include <vector>

namespace runmax::kernel {

/// Point in the closed wedge {(b, a) : b >= max(a^1, 0)} at time t.
/// Callers may pass any point; evaluation returns 0 off-support.
struct WedgePoint {
    double b;               // running-max coordinate
    std::vector<double> a;  // endpoint coordinates, length d
    double t;               // time > 0
};

/// Standard normal CDF via erfc; relative error <= 1e-14 into the far tail.
double norm_cdf(double x);

/// Standard normal density.
double norm_pdf(double x);

/// One-sided Gaussian quantile: returns r with norm_cdf(-r) = p.
double norm_quantile_upper(double p);

/// Joint density of (max of W^1, W) for a d-dimensional Brownian motion:
///   2(2b-a^1)/sqrt((2pi)^d t^(d+2)) exp(-(2b-a^1)^2/2t - sum_{k>=2}(a^k)^2/2t)
/// on {b >= 0, b >= a^1}, 0 elsewhere.
double wedge_kernel(double b, std::span<const double> a, double t);
double wedge_kernel(const WedgePoint& p);

enum class Slot { b = -1, a1 = 0 }; // a_k is Slot(k-1)

/// Analytic partial derivative of wedge_kernel in the given slot, at a point
/// strictly inside the wedge.  Evaluation on the boundary is rejected: the
/// derivative is only one-sided there.
double wedge_kernel_partial(Slot which, double b, std::span<const double> a, double t);

/// Unchecked slot derivatives for interior quadrature sweeps: return the
/// smooth extension's derivative on the open wedge, 0 off the closed wedge.
/// d=1 fast path used by the series operators.
struct Partials1d {
    double value;   // kernel value
    double db;      // d/db
    double da;      // d/da
};
Partials1d wedge_kernel_all_1d(double b, double a, double t);

/// Partial mass in b:  integral_{-infty}^{m} p_{W1*,W}(b, a; t) db.
/// Closed form (e^{-a1^2/2t} - e^{-(2m-a1)^2/2t})/sqrt(2 pi t) times the
/// Gaussian factor in the remaining coordinates; 0 for m <= max(a^1, 0).
double kernel_partial_mass_b(double m, std::span<const double> a, double t);

/// d/d(a^1) of the partial mass, a-slot only (the m argument held fixed).
double kernel_partial_mass_b_da1(double m, double a1, double t);

/// H(theta) = exp(-theta^2/2)/sqrt(2 pi) - theta * norm_cdf(-theta).
/// Nonnegative, nonincreasing, integral over (0, inf) equals 1/4.
double h_function(double theta);

/// Gaussian envelope phi_{d+1}(b, u, v; 2t) =
///   (2 pi t)^{-(d+1)/2} exp(-(b^2 + u^2 + |v|^2)/(4t)) on {b >= 0, u >= 0},
/// 0 otherwise (u = b - a^1, v = a-tilde).
double gaussian_envelope(double b, double u, std::span<const double> v, double t);

} // namespace runmax::kernel
