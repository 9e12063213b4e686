#include "runmax/analysis.hpp"

#include "runmax/kernel.hpp"
#include "runmax/mc.hpp"
#include "runmax/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace runmax::analysis {

double TraceCurve::at(double m) const {
    const auto& g = *grid;
    if (g.d != 1) throw AnalysisError("scalar trace lookup needs d = 1");
    double u = (m - g.m_lo) / g.delta;
    if (u < 0.0 || u > g.nm - 1) throw AnalysisError("level outside grid");
    int i = std::min(static_cast<int>(u), g.nm - 2);
    double f = u - i;
    return (1.0 - f) * values[i] + f * values[i + 1];
}

TraceCurve boundary_trace(const model::DensityField& field, int t_index) {
    const auto& g = *field.grid;
    if (field.slices[t_index].empty()) throw AnalysisError("slice not populated");
    TraceCurve c;
    c.grid = field.grid;
    c.t = g.times[t_index];
    c.values.assign(static_cast<std::size_t>(g.nm) * g.ny, 0.0);
    for (int i = 0; i < g.nm; ++i) {
        int j = i + g.diag_offset();
        if (j - 3 < 0 || j >= g.nx) continue;
        for (int k = 0; k < g.ny; ++k) {
            // quadratic extrapolation from offsets delta, 2 delta, 3 delta:
            // third-order accurate one-sided limit
            double v = 3.0 * field.value(t_index, i, j - 1, k) -
                       3.0 * field.value(t_index, i, j - 2, k) +
                       field.value(t_index, i, j - 3, k);
            c.values[static_cast<std::size_t>(i) * g.ny + k] = v;
        }
    }
    return c;
}

double hitting_density(const model::DensityField& field, double a, int t_index) {
    auto c = boundary_trace(field, t_index);
    const auto& g = *field.grid;
    if (g.d == 1) return 0.5 * c.at(a);
    double u = (a - g.m_lo) / g.delta;
    if (u < 0.0 || u > g.nm - 1) throw AnalysisError("level outside grid");
    int i = std::min(static_cast<int>(u), g.nm - 2);
    double f = u - i;
    double acc = 0.0;
    for (int k = 0; k < g.ny; ++k) {
        double w = g.delta * (k == 0 || k == g.ny - 1 ? 0.5 : 1.0);
        acc += w * ((1.0 - f) * c.values[static_cast<std::size_t>(i) * g.ny + k] +
                    f * c.values[static_cast<std::size_t>(i + 1) * g.ny + k]);
    }
    return 0.5 * acc;
}

std::string ResidualReport::to_json() const {
    std::ostringstream out;
    out.precision(17);
    out << "{\"delta\":" << delta << ",\"dt\":" << dt << ",\"t\":" << t
        << ",\"sup_interior\":" << sup_interior << ",\"l1_interior\":" << l1_interior
        << ",\"sup_boundary\":" << sup_boundary << ",\"l1_boundary\":" << l1_boundary << "}";
    return out.str();
}

void ResidualReport::interior_to_csv(const model::WedgeGrid& g, const std::string& path) const {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw AnalysisError("cannot open for writing: " + path);
    std::fprintf(f, g.d == 1 ? "m,x1,residual\n" : "m,x1,x2,residual\n");
    for (int i = 0; i < g.nm; ++i)
        for (int j = 0; j < g.nx; ++j)
            for (int k = 0; k < g.ny; ++k) {
                double v = interior[g.idx(i, j, k)];
                if (v == 0.0) continue;
                if (g.d == 1)
                    std::fprintf(f, "%.17g,%.17g,%.17g\n", g.m(i), g.x(j), v);
                else
                    std::fprintf(f, "%.17g,%.17g,%.17g,%.17g\n", g.m(i), g.x(j), g.y(k), v);
            }
    std::fclose(f);
}

ResidualReport fp_interior_residual(const model::DensityField& field, int t_index,
                                    const model::DiffusionModel& m) {
    m.check_consistent();
    if (!m.identity_diffusion())
        throw AnalysisError("residuals are computed in unit-diffusion coordinates");
    const auto& g = *field.grid;
    const int d = g.d;
    const int N = g.n_slices() - 1;
    if (t_index < 1 || t_index > N) throw AnalysisError("bad time index");
    if (N < 3) throw AnalysisError("need at least 3 time slices");
    const double dt = g.times[1] - g.times[0];
    const double dl = g.delta;

    if (!m.drift_override.empty())
        throw AnalysisError("interior residual needs symbolically differentiable drift");
    std::vector<expr::CoeffExpr> divB;
    for (int k = 0; k < d; ++k) divB.push_back(m.drift[k].differentiate(k));

    ResidualReport rep;
    rep.delta = dl;
    rep.dt = dt;
    rep.t = g.times[t_index];
    rep.interior.assign(g.slice_size(), 0.0);

    // time stencil: central inside, second-order one-sided at the ends
    // (slice 0 is empty, so the earliest usable index is 1)
    int ta, tb, tc;
    double ca, cb, cc;
    if (t_index >= 2 && t_index <= N - 1) {
        ta = t_index - 1, tb = t_index, tc = t_index + 1;
        ca = -0.5 / dt, cb = 0.0, cc = 0.5 / dt;
    } else if (t_index == 1) {
        ta = 1, tb = 2, tc = 3;
        ca = -1.5 / dt, cb = 2.0 / dt, cc = -0.5 / dt;
    } else {
        ta = N - 2, tb = N - 1, tc = N;
        ca = 0.5 / dt, cb = -2.0 / dt, cc = 1.5 / dt;
    }

    std::vector<double> x(d);
    for (int i = 1; i < g.nm - 1; ++i) {
        int jmax = std::min(g.nx - 2, i + g.diag_offset() - 2);
        for (int j = 1; j <= jmax; ++j) {
            x[0] = g.x(j);
            for (int k = (d == 2 ? 1 : 0); k < (d == 2 ? g.ny - 1 : 1); ++k) {
                if (d == 2) x[1] = g.y(k);
                auto v = [&](int s, int di, int dj, int dk) {
                    return field.value(s, i + di, j + dj, k + dk);
                };
                double pt = ca * v(ta, 0, 0, 0) + cb * v(tb, 0, 0, 0) + cc * v(tc, 0, 0, 0);
                int s = t_index;
                double p = v(s, 0, 0, 0);
                double lap = (v(s, 0, 1, 0) - 2.0 * p + v(s, 0, -1, 0)) / (dl * dl);
                double adv = m.drift[0].eval(x) * (v(s, 0, 1, 0) - v(s, 0, -1, 0)) / (2.0 * dl);
                double div = divB[0].eval(x);
                if (d == 2) {
                    lap += (v(s, 0, 0, 1) - 2.0 * p + v(s, 0, 0, -1)) / (dl * dl);
                    adv += m.drift[1].eval(x) * (v(s, 0, 0, 1) - v(s, 0, 0, -1)) / (2.0 * dl);
                    div += divB[1].eval(x);
                }
                double r = pt - (0.5 * lap - adv - div * p);
                rep.interior[g.idx(i, j, k)] = r;
                rep.sup_interior = std::max(rep.sup_interior, std::fabs(r));
                rep.l1_interior += g.weight(i, j, k) * std::fabs(r);
            }
        }
    }
    return rep;
}

ResidualReport boundary_residual(const model::DensityField& field, int t_index,
                                 const model::DiffusionModel& m) {
    m.check_consistent();
    if (!m.identity_diffusion())
        throw AnalysisError("residuals are computed in unit-diffusion coordinates");
    const auto& g = *field.grid;
    const int d = g.d;
    ResidualReport rep;
    rep.delta = g.delta;
    rep.dt = g.times[1] - g.times[0];
    rep.t = g.times[t_index];
    rep.boundary.assign(static_cast<std::size_t>(g.nm) * g.ny, 0.0);

    const double dl = g.delta;
    std::vector<double> x(d);
    int n_eval = 0;
    for (int i = 0; i + 2 < g.nm; ++i) {
        int j = i + g.diag_offset();
        if (j - 2 < 0 || j >= g.nx) continue;
        x[0] = g.x(j);
        for (int k = (d == 2 ? 1 : 0); k < (d == 2 ? g.ny - 1 : 1); ++k) {
            if (d == 2) x[1] = g.y(k);
            auto v = [&](int di, int dj) { return field.value(t_index, i + di, j + dj, k); };
            double p = v(0, 0);
            // one-sided stencils pointing into the wedge: decreasing x1 at
            // fixed m, increasing m at fixed x1
            double px = (3.0 * p - 4.0 * v(0, -1) + v(0, -2)) / (2.0 * dl);
            double pm = (-3.0 * p + 4.0 * v(1, 0) - v(2, 0)) / (2.0 * dl);
            double r = m.drift_at(0, x) * p - px - 0.5 * pm;
            rep.boundary[static_cast<std::size_t>(i) * g.ny + k] = r;
            rep.sup_boundary = std::max(rep.sup_boundary, std::fabs(r));
            rep.l1_boundary += dl * (d == 2 ? dl : 1.0) * std::fabs(r);
            ++n_eval;
        }
    }
    if (n_eval == 0) throw AnalysisError("no evaluable diagonal stations");
    return rep;
}

SlopeReport local_slope(const model::DiffusionModel& m, const std::string& psi_expr, double t,
                        const std::vector<double>& h_list, const model::DensityField& series,
                        std::int64_t n_paths, double dt, std::uint64_t seed, int threads) {
    if (h_list.empty()) throw AnalysisError("empty h list");
    const int d = m.d;
    auto psi = expr::parse(psi_expr);
    if (psi.max_var() > 1 + d) throw AnalysisError("test function uses too many variables");
    const bool scalar_A = !m.identity_diffusion();

    auto ens = mc::simulate(m, t, n_paths, dt, seed, true, {}, threads);

    SlopeReport rep;
    for (double h : h_list) {
        double sqh = std::sqrt(h);
        auto [mean, se] = mc::estimate_expectation(ens, [&](double M, const double* x) {
            double sig = 1.0;
            if (scalar_A) {
                std::vector<double> st(x, x + d);
                sig = m.diffusion->eval(st);
            }
            std::vector<double> args(1 + d);
            args[0] = M;
            for (int k = 0; k < d; ++k) args[1 + k] = x[k];
            return psi.eval(args) * sig * kernel::h_function((M - x[0]) / (sqh * sig));
        });
        rep.rows.push_back({h, 2.0 / sqh * mean, 2.0 / sqh * se});
    }

    // limit target: half the Psi-weighted trace integral of the series field
    const auto& g = *series.grid;
    int t_index = -1;
    for (int s = 1; s < g.n_slices(); ++s)
        if (std::fabs(g.times[s] - t) < 1e-12) t_index = s;
    if (t_index < 0) throw AnalysisError("t is not a series time node");
    auto trace = boundary_trace(series, t_index);
    double acc = 0.0;
    for (int i = 0; i < g.nm; ++i) {
        double wm = g.delta * (i == 0 || i == g.nm - 1 ? 0.5 : 1.0);
        double mi = g.m(i);
        if (scalar_A) wm *= m.diffusion->eval({mi}) * m.diffusion->eval({mi});
        for (int k = 0; k < g.ny; ++k) {
            double wy = 1.0;
            std::vector<double> args{mi, mi};
            if (d == 2) {
                args.push_back(g.y(k));
                wy = g.delta * (k == 0 || k == g.ny - 1 ? 0.5 : 1.0);
            }
            acc += wm * wy * psi.eval(args) * trace.values[static_cast<std::size_t>(i) * g.ny + k];
        }
    }
    rep.target = 0.5 * acc;
    return rep;
}

std::vector<ConditionalCheckRow> conditional_window_check(const model::DiffusionModel& m, double t,
                                                          double h, int n_states,
                                                          std::int64_t n_inner,
                                                          std::uint64_t seed) {
    const int d = m.d;
    auto ens = mc::simulate(m, t, n_states, 1e-3, seed, true, {}, 1);
    const bool scalar_A = !m.identity_diffusion();
    double sqh = std::sqrt(h);

    std::vector<ConditionalCheckRow> rows;
    for (int s = 0; s < n_states; ++s) {
        double M = ens.m[s];
        std::vector<double> x(ens.x.begin() + s * d, ens.x.begin() + (s + 1) * d);
        double sig = scalar_A ? m.diffusion->eval(x) : 1.0;
        double gapmx = M - x[0];

        // inner draw: one Euler step of the frozen proxy with the bridge
        // maximum, an independent mechanism from the H-function closed form
        mc::PhiloxStream rng(seed + 1, static_cast<std::uint64_t>(s) + (1ull << 40));
        double sum = 0.0, sumsq = 0.0;
        for (std::int64_t i = 0; i < n_inner; ++i) {
            double y1 = sig * sqh * rng.normal();
            double u = rng.uniform();
            double mb = 0.5 * (y1 + std::sqrt(y1 * y1 - 2.0 * sig * sig * h * std::log(u)));
            double v = std::max(0.0, mb - gapmx);
            sum += v;
            sumsq += v * v;
        }
        double nn = static_cast<double>(n_inner);
        double mean = sum / nn;
        double se = std::sqrt(std::max(0.0, sumsq / nn - mean * mean) / nn);
        rows.push_back({M, x[0], mean, se,
                        2.0 * sig * sqh * kernel::h_function(gapmx / (sig * sqh))});
    }
    return rows;
}

} // namespace runmax::analysis
