#pragma once

#include <cmath>
#include <utility>
#include <vector>

namespace runmax::quad {

/// Gauss-Legendre nodes and weights on [0, 1].
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
    std::vector<double> x(n), w(n);
    for (int i = 0; i < n; ++i) {
        // Newton from the Chebyshev-based initial guess.
        double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
            }
            double dp = n * (z * p0 - p1) / (z * z - 1.0);
            double dz = p0 / dp;
            z -= dz;
            if (std::fabs(dz) < 1e-15) break;
        }
        double p0 = 1.0, p1 = 0.0;
        for (int j = 0; j < n; ++j) {
            double p2 = p1;
            p1 = p0;
            p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
        }
        double dp = n * (z * p0 - p1) / (z * z - 1.0);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[n - 1 - i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    return {x, w};
}

/// Adaptive Simpson on [a, b]; small independent oracle helper.
template <typename F>
double adaptive_simpson(F&& f, double a, double b, double tol, int depth = 24) {
    auto simpson = [](double fa, double fm, double fb, double h) {
        return h / 6.0 * (fa + 4.0 * fm + fb);
    };
    struct Rec {
        double a, b, fa, fm, fb, whole;
        int depth;
    };
    double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    double whole = simpson(fa, fm, fb, b - a);
    std::vector<Rec> stack{{a, b, fa, fm, fb, whole, depth}};
    double total = 0.0;
    while (!stack.empty()) {
        Rec r = stack.back();
        stack.pop_back();
        double m = 0.5 * (r.a + r.b);
        double lm = 0.5 * (r.a + m), rm = 0.5 * (m + r.b);
        double flm = f(lm), frm = f(rm);
        double left = simpson(r.fa, flm, r.fm, m - r.a);
        double right = simpson(r.fm, frm, r.fb, r.b - m);
        double delta = left + right - r.whole;
        if (r.depth <= 0 || std::fabs(delta) <= 15.0 * tol) {
            total += left + right + delta / 15.0;
        } else {
            stack.push_back({r.a, m, r.fa, flm, r.fm, left, r.depth - 1});
            stack.push_back({m, r.b, r.fm, frm, r.fb, right, r.depth - 1});
        }
    }
    return total;
}

} // namespace runmax::quad
