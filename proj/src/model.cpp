#include "runmax/model.hpp"

#include "runmax/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace runmax::model {

namespace {

// Additive golden-ratio lattice: cheap quasi-random fill of a box.
std::vector<double> qr_point(int i, int d) {
    static const double alphas[] = {0.6180339887498949, 0.7548776662466927,
                                    0.8191725133961645, 0.8566748838545029};
    std::vector<double> u(d);
    for (int k = 0; k < d; ++k) u[k] = std::fmod((i + 1) * alphas[k % 4], 1.0);
    return u;
}

} // namespace

void DiffusionModel::check_consistent() const {
    if (d < 1) throw ModelError("dimension must be >= 1");
    if (!drift_override.empty() && static_cast<int>(drift_override.size()) != d)
        throw ModelError("drift override must have exactly d entries");
    if (drift_override.empty() && static_cast<int>(drift.size()) != d)
        throw ModelError("drift must have exactly d entries");
    if (diffusion_kind == DiffusionKind::Identity && diffusion.has_value())
        throw ModelError("identity diffusion must not carry an expression");
    if (diffusion_kind == DiffusionKind::ScalarExpr) {
        if (d != 1) throw ModelError("scalar diffusion expression requires d = 1");
        if (!diffusion.has_value()) throw ModelError("scalar diffusion expression missing");
    }
    if (initial.empty()) throw ModelError("initial law needs at least one point");
    double wsum = 0.0;
    for (const auto& pt : initial) {
        if (static_cast<int>(pt.x.size()) != d)
            throw ModelError("initial point has wrong dimension");
        if (!(pt.weight > 0.0)) throw ModelError("mixture weights must be positive");
        wsum += pt.weight;
    }
    if (std::fabs(wsum - 1.0) > 1e-12) throw ModelError("mixture weights must sum to 1");
}

std::string Certificate::to_json() const {
    std::ostringstream out;
    out.precision(17);
    out << "{\"n_samples\":" << n_samples << ",\"box_lo\":[";
    for (std::size_t i = 0; i < box_lo.size(); ++i) out << (i ? "," : "") << box_lo[i];
    out << "],\"box_hi\":[";
    for (std::size_t i = 0; i < box_hi.size(); ++i) out << (i ? "," : "") << box_hi[i];
    out << "],\"sup_B\":" << sup_B << ",\"sup_gradB\":" << sup_gradB
        << ",\"inf_A\":" << inf_A << ",\"sup_A\":" << sup_A
        << ",\"sup_Ap\":" << sup_Ap << ",\"sup_App\":" << sup_App << "}";
    return out.str();
}

Certificate validate_model(const DiffusionModel& model, const std::vector<double>& box_lo,
                           const std::vector<double>& box_hi, int n_samples, double cap) {
    model.check_consistent();
    if (n_samples < 1000) throw ModelError("certificate needs at least 1000 samples");
    if (static_cast<int>(box_lo.size()) != model.d || static_cast<int>(box_hi.size()) != model.d)
        throw ModelError("sample box has wrong dimension");

    Certificate cert;
    cert.box_lo = box_lo;
    cert.box_hi = box_hi;
    cert.n_samples = n_samples;

    const bool fd_grad = !model.drift_override.empty();
    std::vector<expr::CoeffExpr> gradB;
    if (!fd_grad)
        for (int i = 0; i < model.d; ++i)
            for (int j = 0; j < model.d; ++j) gradB.push_back(model.drift[i].differentiate(j));

    expr::CoeffExpr A, Ap, App;
    bool scalar = !model.identity_diffusion();
    if (scalar) {
        A = *model.diffusion;
        Ap = A.differentiate(0);
        App = Ap.differentiate(0);
        cert.inf_A = std::numeric_limits<double>::infinity();
        cert.sup_A = 0.0;
    }

    std::vector<double> x(model.d);
    try {
    for (int s = 0; s < n_samples; ++s) {
        auto u = qr_point(s, model.d);
        for (int k = 0; k < model.d; ++k) x[k] = box_lo[k] + u[k] * (box_hi[k] - box_lo[k]);
        for (int i = 0; i < model.d; ++i) {
            double b = model.drift_at(i, x);
            if (!std::isfinite(b)) throw ModelError("drift evaluated to a non-finite value");
            cert.sup_B = std::max(cert.sup_B, std::fabs(b));
        }
        if (fd_grad) {
            for (int i = 0; i < model.d; ++i)
                for (int j = 0; j < model.d; ++j) {
                    double hfd = 1e-5 * std::max(1.0, std::fabs(x[j]));
                    auto xp = x, xm = x;
                    xp[j] += hfd;
                    xm[j] -= hfd;
                    double gfd = (model.drift_at(i, xp) - model.drift_at(i, xm)) / (2.0 * hfd);
                    cert.sup_gradB = std::max(cert.sup_gradB, std::fabs(gfd));
                }
        } else {
            for (auto& g : gradB) cert.sup_gradB = std::max(cert.sup_gradB, std::fabs(g.eval(x)));
        }
        if (scalar) {
            double a = A.eval(x);
            cert.inf_A = std::min(cert.inf_A, a);
            cert.sup_A = std::max(cert.sup_A, std::fabs(a));
            cert.sup_Ap = std::max(cert.sup_Ap, std::fabs(Ap.eval(x)));
            cert.sup_App = std::max(cert.sup_App, std::fabs(App.eval(x)));
        }
    }
    } catch (const expr::EvalError& e) {
        // overflow on the box is unboundedness for certification purposes
        throw ModelError(std::string("coefficient evaluation failed on the sample box: ") +
                         e.what());
    }
    if (cert.sup_B > cap || cert.sup_gradB > cap)
        throw ModelError("drift appears unbounded on the sample box (cap exceeded)");
    if (scalar && !(cert.inf_A > 0.0))
        throw ModelError("ellipticity violation: sampled A <= 0");
    if (scalar && (cert.sup_A > cap || cert.sup_Ap > cap || cert.sup_App > cap))
        throw ModelError("diffusion appears unbounded on the sample box (cap exceeded)");
    return cert;
}

double WedgeGrid::weight(int i, int j, int k) const {
    if (!in_wedge(i, j)) return 0.0;
    double w = delta * (i == 0 || i == nm - 1 ? 0.5 : 1.0);
    w *= delta * (j == 0 || j == nx - 1 ? 0.5 : 1.0);
    if (d == 2) w *= delta * (k == 0 || k == ny - 1 ? 0.5 : 1.0);
    if (on_diagonal(i, j)) w *= 0.5; // wedge covers half the node cell
    return w;
}

WedgeGrid build_grid(const GridSpec& spec, const DiffusionModel& model, double T,
                     double eps_trunc) {
    model.check_consistent();
    if (!(T > 0.0)) throw ModelError("T must be positive");
    if (!(eps_trunc > 0.0 && eps_trunc < 0.1))
        throw ModelError("eps_trunc out of range (0, 0.1)");
    if (!(spec.delta > 0.0) || spec.time_steps < 1) throw ModelError("inconsistent grid spec");
    if (model.d > 2) throw ModelError("dimension > 2 unsupported");

    WedgeGrid g;
    g.d = model.d;
    g.delta = spec.delta;
    g.eps_trunc = eps_trunc;

    double r = kernel::norm_quantile_upper(eps_trunc / 2.0);
    g.pad = r * std::sqrt(2.0 * T);

    double x1_min = 1e300, x1_max = -1e300, x2_min = 1e300, x2_max = -1e300;
    for (const auto& pt : model.initial) {
        x1_min = std::min(x1_min, pt.x[0]);
        x1_max = std::max(x1_max, pt.x[0]);
        if (model.d == 2) {
            x2_min = std::min(x2_min, pt.x[1]);
            x2_max = std::max(x2_max, pt.x[1]);
        }
    }

    // m lattice anchored at the lowest initial x^1 (support edge of M).
    g.m_lo = x1_min;
    double m_hi = x1_max + g.pad;
    g.nm = static_cast<int>(std::ceil((m_hi - g.m_lo) / g.delta)) + 1;

    double x_lo_raw = x1_min - g.pad;
    // keep x1 on the m lattice so the diagonal passes through nodes
    int down = static_cast<int>(std::ceil((g.m_lo - x_lo_raw) / g.delta - 1e-12));
    g.diag_k0 = down;
    g.x_lo = g.m_lo - down * g.delta;
    double x_hi = x1_max + g.pad;
    g.nx = static_cast<int>(std::ceil((x_hi - g.x_lo) / g.delta - 1e-12)) + 1;

    if (model.d == 2) {
        g.y_lo = x2_min - g.pad;
        g.ny = static_cast<int>(std::ceil((x2_max + g.pad - g.y_lo) / g.delta)) + 1;
    }

    if (g.nm < 3 || g.nx < 3) throw ModelError("empty or degenerate grid");

    g.times.resize(spec.time_steps + 1);
    for (int i = 0; i <= spec.time_steps; ++i)
        g.times[i] = T * static_cast<double>(i) / spec.time_steps;
    return g;
}

double DensityField::integral(int s) const {
    const auto& v = slices[s];
    double acc = 0.0;
    for (int i = 0; i < grid->nm; ++i)
        for (int j = 0; j < grid->nx; ++j)
            for (int k = 0; k < grid->ny; ++k) acc += grid->weight(i, j, k) * v[grid->idx(i, j, k)];
    return acc;
}

double DensityField::l1_norm(int s) const {
    const auto& v = slices[s];
    double acc = 0.0;
    for (int i = 0; i < grid->nm; ++i)
        for (int j = 0; j < grid->nx; ++j)
            for (int k = 0; k < grid->ny; ++k)
                acc += grid->weight(i, j, k) * std::fabs(v[grid->idx(i, j, k)]);
    return acc;
}

DensityField DensityField::clipped_renormalized() const {
    DensityField out = *this;
    for (std::size_t s = 1; s < slices.size(); ++s) {
        if (slices[s].empty()) continue;
        double mass_before = integral(static_cast<int>(s));
        for (auto& v : out.slices[s]) v = std::max(v, 0.0);
        double mass_after = out.integral(static_cast<int>(s));
        if (mass_after > 0.0 && mass_before > 0.0)
            for (auto& v : out.slices[s]) v *= mass_before / mass_after;
    }
    return out;
}

double p0_point(const DiffusionModel& model, double m, const double* x, int d, double t) {
    double acc = 0.0;
    double a[2];
    for (const auto& pt : model.initial) {
        for (int k = 0; k < d; ++k) a[k] = x[k] - pt.x[k];
        acc += pt.weight * kernel::wedge_kernel(m - pt.x[0], std::span<const double>(a, d), t);
    }
    return acc;
}

double p0_cumulative(const DiffusionModel& model, double m, const double* x, int d, double t) {
    double acc = 0.0;
    double a[2];
    for (const auto& pt : model.initial) {
        for (int k = 0; k < d; ++k) a[k] = x[k] - pt.x[k];
        acc += pt.weight *
               kernel::kernel_partial_mass_b(m - pt.x[0], std::span<const double>(a, d), t);
    }
    return acc;
}

DensityField assemble_p0(const DiffusionModel& model, std::shared_ptr<const WedgeGrid> grid) {
    model.check_consistent();
    if (!model.identity_diffusion())
        throw ModelError("p0 assembly requires identity diffusion (use the Lamperti route)");
    DensityField f;
    f.grid = grid;
    f.tag = DensityField::Tag::SeriesTerm;
    f.term_index = 0;
    f.slices.resize(grid->times.size());
    double xv[2];
    for (int s = 1; s < grid->n_slices(); ++s) {
        double t = grid->times[s];
        auto& sl = f.slices[s];
        sl.assign(grid->slice_size(), 0.0);
        for (int i = 0; i < grid->nm; ++i)
            for (int j = 0; j < grid->nx; ++j) {
                if (!grid->in_wedge(i, j)) continue;
                xv[0] = grid->x(j);
                for (int k = 0; k < grid->ny; ++k) {
                    if (grid->d == 2) xv[1] = grid->y(k);
                    sl[grid->idx(i, j, k)] = p0_point(model, grid->m(i), xv, grid->d, t);
                }
            }
    }
    return f;
}

} // namespace runmax::model
