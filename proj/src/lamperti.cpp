#include "runmax/lamperti.hpp"

#include "runmax/quadrature.hpp"

#include <algorithm>
#include <cmath>

namespace runmax::lamperti {

LampertiMap::LampertiMap(expr::CoeffExpr A, double lo, double hi, double tol)
    : A_(std::move(A)), Ap_(A_.differentiate(0)) {
    if (!(lo < hi)) throw LampertiError("empty domain");
    if (!(tol > 0.0)) throw LampertiError("tolerance must be positive");
    lo = std::min(lo, 0.0);
    hi = std::max(hi, 0.0);

    auto inv_A = [&](double x) {
        double a = A_.eval({x});
        if (!(a > 0.0) || !std::isfinite(a)) throw LampertiError("ellipticity violation: A <= 0");
        return 1.0 / a;
    };

    // sample the fourth derivative of phi = third of 1/A to size the step so
    // the cubic Hermite interpolation error stays below tol
    double sup_d3 = 0.0;
    {
        const double hfd = 1e-3 * (hi - lo) / 256.0 + 1e-6;
        for (int s = 0; s <= 256; ++s) {
            double x = lo + (hi - lo) * s / 256.0;
            double d3 = (inv_A(x + 2 * hfd) - 2 * inv_A(x + hfd) + 2 * inv_A(x - hfd) -
                         inv_A(x - 2 * hfd)) /
                        (2 * hfd * hfd * hfd);
            sup_d3 = std::max(sup_d3, std::fabs(d3));
        }
    }
    double step = sup_d3 > 0.0 ? std::pow(384.0 * tol * 0.1 / sup_d3, 0.25) : 0.05;
    step = std::clamp(step, 1e-4, 0.05);

    // lattice anchored at 0 so phi(0) = 0 is exact
    long k_lo = static_cast<long>(std::floor(lo / step));
    long k_hi = static_cast<long>(std::ceil(hi / step));
    lo_ = k_lo * step;
    hi_ = k_hi * step;
    step_ = step;
    long n = k_hi - k_lo;
    if (n < 4) throw LampertiError("domain too small for requested grid");

    // per-interval Gauss-Legendre, accumulated away from the anchor node 0
    auto [gln, glw] = quad::gauss_legendre(8);
    auto seg = [&, gln = gln, glw = glw](double a, double b) {
        double acc = 0.0;
        for (std::size_t q = 0; q < gln.size(); ++q)
            acc += glw[q] * inv_A(a + gln[q] * (b - a));
        return acc * (b - a);
    };
    table_.assign(n + 1, 0.0);
    long anchor = -k_lo;
    for (long i = anchor + 1; i <= n; ++i)
        table_[i] = table_[i - 1] + seg(lo_ + (i - 1) * step, lo_ + i * step);
    for (long i = anchor - 1; i >= 0; --i)
        table_[i] = table_[i + 1] - seg(lo_ + i * step, lo_ + (i + 1) * step);
}

double LampertiMap::A_at(double x) const { return A_.eval({x}); }
double LampertiMap::Ap_at(double x) const { return Ap_.eval({x}); }

double LampertiMap::forward(double x) const {
    if (x < lo_ - 1e-12 || x > hi_ + 1e-12) throw LampertiError("point outside tabulated domain");
    double u = (x - lo_) / step_;
    int i = std::clamp(static_cast<int>(u), 0, static_cast<int>(table_.size()) - 2);
    double s = u - i;
    double x0 = lo_ + i * step_, x1 = x0 + step_;
    // cubic Hermite: phi' = 1/A is known exactly at the nodes
    double p0 = table_[i], p1 = table_[i + 1];
    double d0 = step_ / A_.eval({x0}), d1 = step_ / A_.eval({x1});
    double s2 = s * s, s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * p0 + (s3 - 2 * s2 + s) * d0 + (-2 * s3 + 3 * s2) * p1 +
           (s3 - s2) * d1;
}

double LampertiMap::inverse(double y) const {
    if (y < table_.front() - 1e-12 || y > table_.back() + 1e-12)
        throw LampertiError("value outside tabulated range");
    // monotone table bisection for the bracket, then Newton with phi' = 1/A
    auto it = std::upper_bound(table_.begin(), table_.end(), y);
    int i = std::clamp(static_cast<int>(it - table_.begin()) - 1, 0,
                       static_cast<int>(table_.size()) - 2);
    double a = lo_ + i * step_, b = a + step_;
    double x = 0.5 * (a + b);
    for (int it2 = 0; it2 < 60; ++it2) {
        double f = forward(x) - y;
        if (std::fabs(f) < 1e-14) break;
        double xn = x - f * A_.eval({x});
        if (xn < a || xn > b) { // fall back to bisection inside the bracket
            if (f > 0)
                b = x;
            else
                a = x;
            xn = 0.5 * (a + b);
        } else if (f > 0)
            b = x;
        else
            a = x;
        x = xn;
    }
    return x;
}

LampertiMap build_map(const expr::CoeffExpr& A, double lo, double hi, double tol) {
    return LampertiMap(A, lo, hi, tol);
}

model::DiffusionModel transform_model(const model::DiffusionModel& m, const LampertiMap& map) {
    m.check_consistent();
    if (m.d != 1 || m.identity_diffusion())
        throw LampertiError("transformation applies to d = 1 models with a diffusion expression");
    for (double x : {map.lo() * 0.9, 0.0, map.hi() * 0.9}) {
        if (std::fabs(m.diffusion->eval({x}) - map.A_at(x)) > 1e-12)
            throw LampertiError("map was built for a different diffusion coefficient");
    }

    auto shared = std::make_shared<LampertiMap>(map);
    auto B = m.drift[0];
    auto drift_y = [shared, B](const std::vector<double>& y) {
        double x = shared->inverse(y[0]);
        double a = shared->A_at(x);
        return B.eval({x}) / a - 0.5 * shared->Ap_at(x);
    };

    model::DiffusionModel out;
    out.d = 1;
    out.diffusion_kind = model::DiffusionKind::Identity;
    for (const auto& pt : m.initial) out.initial.push_back({{map.forward(pt.x[0])}, pt.weight});

    // sample the new drift; constant-A zero-drift models reduce to exprless
    // zero drift, which the series engine can exploit
    double y0 = map.forward(map.lo()), y1 = map.forward(map.hi());
    double sup = 0.0, sup_grad = 0.0;
    for (int s = 0; s <= 400; ++s) {
        double y = y0 + (y1 - y0) * s / 400.0;
        double v = drift_y({y});
        if (!std::isfinite(v)) throw LampertiError("transformed drift is not finite");
        sup = std::max(sup, std::fabs(v));
        if (s > 0 && s < 400) {
            double h = (y1 - y0) / 4000.0;
            double g = (drift_y({y + h}) - drift_y({y - h})) / (2.0 * h);
            if (!std::isfinite(g)) throw LampertiError("transformed drift gradient is not finite");
            sup_grad = std::max(sup_grad, std::fabs(g));
        }
    }
    if (sup < 1e-14) {
        out.drift.push_back(expr::parse("0"));
    } else {
        out.drift_override.push_back(drift_y);
    }
    (void)sup_grad;
    return out;
}

model::DensityField pullback_density(const model::DensityField& pY, const LampertiMap& map,
                                     std::shared_ptr<const model::WedgeGrid> x_grid) {
    const auto& gy = *pY.grid;
    const auto& gx = *x_grid;
    if (gy.d != 1 || gx.d != 1) throw LampertiError("pull-back implemented for d = 1");
    if (gy.times != gx.times) throw LampertiError("time grids must coincide");

    // bilinear sampler with linear extension across the diagonal, so cells
    // straddling m = x1 do not mix in off-wedge zeros
    auto node = [&](const std::vector<double>& sl, int i, int j) -> double {
        if (i < 0 || i >= gy.nm || j < 0) return 0.0;
        if (j >= gy.nx) j = gy.nx - 1;
        int jd = i + gy.diag_offset();
        if (j <= jd) return sl[gy.idx(i, j)];
        if (jd >= 1)
            return std::max(0.0, (1.0 + (j - jd)) * sl[gy.idx(i, jd)] -
                                     static_cast<double>(j - jd) * sl[gy.idx(i, jd - 1)]);
        return 0.0;
    };
    auto sample = [&](const std::vector<double>& sl, double b, double a) -> double {
        double ui = (b - gy.m_lo) / gy.delta;
        double uj = (a - gy.x_lo) / gy.delta;
        if (ui < -1e-9 || uj < -1e-9 || ui > gy.nm - 1 + 1e-9 || uj > gy.nx - 1 + 1e-9)
            return 0.0; // beyond the truncation padding of the Y grid
        int i = std::clamp(static_cast<int>(ui), 0, gy.nm - 2);
        int j = std::clamp(static_cast<int>(uj), 0, gy.nx - 2);
        double fi = ui - i, fj = uj - j;
        return (1 - fi) * ((1 - fj) * node(sl, i, j) + fj * node(sl, i, j + 1)) +
               fi * ((1 - fj) * node(sl, i + 1, j) + fj * node(sl, i + 1, j + 1));
    };

    model::DensityField out;
    out.grid = x_grid;
    out.tag = pY.tag;
    out.term_index = pY.term_index;
    out.slices.resize(gx.times.size());
    for (int s = 1; s < gx.n_slices(); ++s) {
        if (pY.slices[s].empty()) continue;
        out.slices[s].assign(gx.slice_size(), 0.0);
        for (int i = 0; i < gx.nm; ++i) {
            double bx = gx.m(i);
            double by = map.forward(bx);
            double Ab = map.A_at(bx);
            for (int j = 0; j < gx.nx; ++j) {
                if (!gx.in_wedge(i, j)) continue;
                double ax = gx.x(j);
                double ay = gx.on_diagonal(i, j) ? by : map.forward(ax);
                out.slices[s][gx.idx(i, j)] =
                    sample(pY.slices[s], by, ay) / (Ab * map.A_at(ax));
            }
        }
    }
    return out;
}

} // namespace runmax::lamperti
