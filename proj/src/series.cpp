#include "runmax/series.hpp"

#include "runmax/kernel.hpp"
#include "runmax/parallel.hpp"
#include "runmax/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace runmax::series {

using model::DensityField;
using model::DiffusionModel;
using model::WedgeGrid;

namespace {

struct CompMask {
    bool alpha[3] = {false, false, false}; // index 0 = m slot, 1..2 = space slots
    bool beta[3] = {false, false, false};
    static CompMask full(int d) {
        CompMask m;
        for (int k = 0; k <= d; ++k) m.alpha[k] = m.beta[k] = true;
        return m;
    }
};

/// Supplies p(m, a; s) and its b-cumulative int_{b<m} p db on the grid node
/// lattice, for arbitrary s inside the time range.
class Source {
  public:
    virtual ~Source() = default;
    virtual void eval_at(double s, std::vector<double>& P, std::vector<double>& C) const = 0;
};

/// Closed-form source for the zeroth term: exact in s, no interpolation.
class ExactP0Source : public Source {
  public:
    ExactP0Source(const DiffusionModel& m, const WedgeGrid& g) : m_(m), g_(g) {}

    void eval_at(double s, std::vector<double>& P, std::vector<double>& C) const override {
        P.assign(g_.slice_size(), 0.0);
        C.assign(g_.slice_size(), 0.0);
        double a[2];
        for (int i = 0; i < g_.nm; ++i)
            for (int j = 0; j < g_.nx; ++j) {
                if (!g_.in_wedge(i, j)) continue;
                a[0] = g_.x(j);
                for (int k = 0; k < g_.ny; ++k) {
                    if (g_.d == 2) a[1] = g_.y(k);
                    std::size_t id = g_.idx(i, j, k);
                    P[id] = model::p0_point(m_, g_.m(i), a, g_.d, s);
                    C[id] = model::p0_cumulative(m_, g_.m(i), a, g_.d, s);
                }
            }
    }

    const DiffusionModel& diffusion_model() const { return m_; }

  private:
    const DiffusionModel& m_;
    const WedgeGrid& g_;
};

/// Stored-field source: linear interpolation between slices; on (0, t_1) the
/// field is scaled down as (s/t_1)^alpha matching the term's small-time rate.
class FieldSource : public Source {
  public:
    FieldSource(const DensityField& f, double small_time_exponent, int max_slice = -1)
        : f_(f), g_(*f.grid), alpha_(small_time_exponent) {
        int last = max_slice < 0 ? g_.n_slices() - 1 : max_slice;
        cums_.resize(last + 1);
        for (int s = 1; s <= last; ++s) {
            if (f.slices[s].empty()) continue;
            cums_[s] = build_cum(f.slices[s]);
        }
        last_ = last;
    }

    void eval_at(double s, std::vector<double>& P, std::vector<double>& C) const override {
        const auto& times = g_.times;
        double t1 = times[1];
        if (s <= t1) {
            double w = alpha_ > 0.0 ? std::pow(s / t1, alpha_) : s / t1;
            scale_into(f_.slices[1], w, P);
            scale_into(cums_[1], w, C);
            return;
        }
        int hi = 1;
        while (hi < last_ && times[hi] < s) ++hi;
        int lo = hi - 1;
        double w = (s - times[lo]) / (times[hi] - times[lo]);
        lerp_into(f_.slices[lo], f_.slices[hi], w, P);
        lerp_into(cums_[lo], cums_[hi], w, C);
    }

  private:
    std::vector<double> build_cum(const std::vector<double>& slice) const {
        std::vector<double> c(g_.slice_size(), 0.0);
        for (int j = 0; j < g_.nx; ++j)
            for (int k = 0; k < g_.ny; ++k) {
                double acc = 0.0;
                for (int i = 1; i < g_.nm; ++i) {
                    // skip the cell straddling the wedge edge: support starts
                    // at the node, not inside the cell
                    if (g_.in_wedge(i - 1, j))
                        acc += 0.5 * g_.delta *
                               (slice[g_.idx(i - 1, j, k)] + slice[g_.idx(i, j, k)]);
                    c[g_.idx(i, j, k)] = acc;
                }
            }
        return c;
    }

    void scale_into(const std::vector<double>& a, double w, std::vector<double>& out) const {
        out.resize(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = w * a[i];
    }

    void lerp_into(const std::vector<double>& a, const std::vector<double>& b, double w,
                   std::vector<double>& out) const {
        out.resize(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - w) * a[i] + w * b[i];
    }

    const DensityField& f_;
    const WedgeGrid& g_;
    double alpha_;
    int last_ = 0;
    std::vector<std::vector<double>> cums_;
};

// All d = 1 operator kernels reduce to the heat density phi_tau and its
// derivative at lattice-valued arguments z = l*delta:
//   dK/db = -4 phi'', dK/da1 = 2 phi''   (argument xi = 2m - x - a)
//   K = -2 phi'(xi),  dQ/da1 = phi'(w) + phi'(xi)   (w = x - a)
// so a cell [a_jp, a_jp+1] can be integrated exactly against linearly
// interpolated data using the antiderivatives
//   int phi'' = phi',  int z phi'' = z phi' - phi,
//   int phi'  = phi,   int z phi'  = z phi - Phi.
struct Moments1d {
    int zmax = 0; // arrays cover z indices [-zmax, zmax]
    std::vector<double> phi, phip, phipp;
    std::vector<double> g1, g2; // g1 = z phi - Phi, g2 = z phi' - phi
    double at(const std::vector<double>& v, int z) const { return v[z + zmax]; }
};

Moments1d build_moments_1d(const WedgeGrid& g, double tau) {
    Moments1d M;
    M.zmax = 2 * (g.nm + g.diag_offset()) + g.nx + 2;
    int n = 2 * M.zmax + 1;
    M.phi.resize(n);
    M.phip.resize(n);
    M.phipp.resize(n);
    M.g1.resize(n);
    M.g2.resize(n);
    double rt = std::sqrt(tau);
    for (int z = -M.zmax; z <= M.zmax; ++z) {
        double zz = z * g.delta;
        double ph = kernel::norm_pdf(zz / rt) / rt;
        double php = -zz / tau * ph;
        double Ph = kernel::norm_cdf(zz / rt);
        M.phi[z + M.zmax] = ph;
        M.phip[z + M.zmax] = php;
        M.phipp[z + M.zmax] = (zz * zz / tau - 1.0) / tau * ph;
        M.g1[z + M.zmax] = zz * ph - Ph;
        M.g2[z + M.zmax] = zz * php - ph;
    }
    return M;
}

/// Exact per-cell moments of the zeroth-term data at time s: for each row i
/// and cell [a_jp, a_jp+1],
///   ip0 = int P da,  ip1 = int (a - a_jp) P da,  likewise ic* for the
/// b-cumulative.  Used when sqrt(s) is below the lattice resolution, where
/// the data cannot be interpolated but its primitives are in closed form.
struct DataMoments {
    int ncell = 0;
    std::vector<double> ip0, ip1, ic0, ic1;         // [i * ncell + jp]
    std::vector<int> lo, hi;                        // nonzero cell range per row
};

DataMoments build_data_moments(const DiffusionModel& m, const WedgeGrid& g, double s) {
    DataMoments D;
    D.ncell = g.nx - 1;
    std::size_t n = static_cast<std::size_t>(g.nm) * D.ncell;
    D.ip0.assign(n, 0.0);
    D.ip1.assign(n, 0.0);
    D.ic0.assign(n, 0.0);
    D.ic1.assign(n, 0.0);
    D.lo.assign(g.nm, D.ncell);
    D.hi.assign(g.nm, -1);

    int k0 = g.diag_offset();
    double delta = g.delta;
    double rs = std::sqrt(s);
    int zmax = 2 * (g.nm + k0) + g.nx + 2;
    std::vector<double> phis(2 * zmax + 1), Ns(2 * zmax + 1);

    for (const auto& pt : m.initial) {
        double x0 = pt.x[0];
        double off = g.m_lo - x0; // y and beta live on the lattice shifted by off
        for (int z = -zmax; z <= zmax; ++z) {
            double zz = off + z * delta;
            phis[z + zmax] = kernel::norm_pdf(zz / rs) / rs;
            Ns[z + zmax] = kernel::norm_cdf(zz / rs);
        }
        for (int i = 0; i < g.nm; ++i) {
            double mi = g.m(i);
            if (mi < x0) continue; // row outside the kernel support
            int jp_end = std::min(D.ncell - 1, i + k0 - 1);
            for (int jp = 0; jp <= jp_end; ++jp) {
                double a0 = g.x(jp);
                int ly0 = jp - k0 + zmax, ly1 = ly0 + 1;          // y = a - x0
                int lb0 = 2 * i + k0 - jp + zmax, lb1 = lb0 - 1;  // beta = 2m - x0 - a
                double y0 = off + (jp - k0) * delta;
                double b0 = off + (2 * i + k0 - jp) * delta;
                double dNy = Ns[ly1] - Ns[ly0];
                double dNb = Ns[lb0] - Ns[lb1];
                double ip0 = 2.0 * (phis[lb1] - phis[lb0]);
                double ip1 = 2.0 * delta * phis[lb1] - 2.0 * dNb;
                double ic0 = dNy - dNb;
                double ic1 = s * (phis[ly0] - phis[ly1]) - y0 * dNy -
                             (b0 * dNb + s * (phis[lb0] - phis[lb1]));
                std::size_t id = static_cast<std::size_t>(i) * D.ncell + jp;
                D.ip0[id] += pt.weight * ip0;
                D.ip1[id] += pt.weight * ip1;
                D.ic0[id] += pt.weight * ic0;
                D.ic1[id] += pt.weight * ic1;
                if (std::fabs(ip0) + std::fabs(ic0) + std::fabs(ip1) + std::fabs(ic1) >
                    1e-300) {
                    D.lo[i] = std::min(D.lo[i], jp);
                    D.hi[i] = std::max(D.hi[i], jp);
                }
            }
        }
    }
    return D;
}

class Engine {
  public:
    Engine(const DiffusionModel& m, std::shared_ptr<const WedgeGrid> grid, int threads)
        : m_(m), gp_(std::move(grid)), g_(*gp_), threads_(threads) {
        m_.check_consistent();
        if (!m_.identity_diffusion())
            throw model::ModelError("series operators require identity diffusion");
        if (g_.d > 2) throw model::ModelError("dimension > 2 unsupported");
        std::vector<double> x(g_.d);
        if (g_.d == 1) {
            B1_.resize(g_.nx);
            for (int j = 0; j < g_.nx; ++j) B1_[j] = m_.drift_at(0, {g_.x(j)});
        } else {
            B1_.resize(static_cast<std::size_t>(g_.nx) * g_.ny);
            B2_.resize(B1_.size());
            for (int j = 0; j < g_.nx; ++j)
                for (int k = 0; k < g_.ny; ++k) {
                    x = {g_.x(j), g_.y(k)};
                    B1_[static_cast<std::size_t>(j) * g_.ny + k] = m_.drift_at(0, x);
                    B2_[static_cast<std::size_t>(j) * g_.ny + k] = m_.drift_at(1, x);
                }
        }
        zero_drift_ = m_.drift_is_zero();
    }

    bool zero_drift() const { return zero_drift_; }
    const WedgeGrid& grid() const { return g_; }

    std::vector<double> apply_slice(const Source& src, int t_index, const CompMask& mask) const {
        if (t_index < 1 || t_index >= g_.n_slices())
            throw std::invalid_argument("operator needs a positive time index with history");
        std::vector<double> out(g_.slice_size(), 0.0);
        if (zero_drift_) return out;
        double t = g_.times[t_index];

        int n_theta = std::clamp(
            static_cast<int>(std::ceil(0.8 * std::sqrt(t) / g_.delta)), 6, 28);

        // With the closed-form source, split off the early-time range where
        // the data is narrower than the lattice and use its exact cell
        // moments against the linearized kernel instead.
        const auto* exact = dynamic_cast<const ExactP0Source*>(&src);
        double s_cut = 0.0;
        if (exact != nullptr && g_.d == 1)
            s_cut = std::min(4.0 * g_.delta * g_.delta, 0.5 * t);
        double theta_cut = std::asin(std::sqrt(s_cut / t));

        if (s_cut > 0.0) {
            auto [xs, ws] = quad::gauss_legendre(6);
            for (int q = 0; q < 6; ++q) {
                double theta = xs[q] * theta_cut;
                double sn = std::sin(theta), cs = std::cos(theta);
                double s = t * sn * sn;
                double tau = t * cs * cs;
                if (s <= 0.0) continue;
                double wq = ws[q] * theta_cut * t * 2.0 * sn * cs;
                accumulate_d1_dual(exact->diffusion_model(), s, tau, wq, mask, out);
            }
        }

        auto [xs, ws] = quad::gauss_legendre(n_theta);
        std::vector<double> P, C;
        for (int q = 0; q < n_theta; ++q) {
            double theta = theta_cut + xs[q] * (M_PI_2 - theta_cut);
            double sn = std::sin(theta), cs = std::cos(theta);
            double s = t * sn * sn;
            double tau = t * cs * cs;
            if (tau < 1e-14 || s <= 0.0) continue;
            src.eval_at(s, P, C);
            double wq = ws[q] * (M_PI_2 - theta_cut) * t * 2.0 * sn * cs; // ds weight
            if (g_.d == 1)
                accumulate_d1(P, C, tau, wq, mask, out);
            else
                accumulate_d2(P, C, tau, wq, mask, out);
        }
        return out;
    }

  private:
    void accumulate_d1(const std::vector<double>& P, const std::vector<double>& C, double tau,
                       double wq, const CompMask& mask, std::vector<double>& out) const {
        Moments1d M = build_moments_1d(g_, tau);
        int k0 = g_.diag_offset();
        double delta = g_.delta;
        double lam1 = 2.0 * (mask.alpha[1] ? 1.0 : 0.0) - 4.0 * (mask.alpha[0] ? 1.0 : 0.0);
        double lam2 = (mask.beta[1] ? 1.0 : 0.0) - 2.0 * (mask.beta[0] ? 1.0 : 0.0);
        double lamw = mask.beta[1] ? 1.0 : 0.0;

        parallel_for(static_cast<std::size_t>(g_.nm), threads_, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t ii = lo; ii < hi; ++ii) {
                int i = static_cast<int>(ii);
                int jp_max = std::min(g_.nx - 1, i + k0); // a <= m
                if (jp_max < 1) continue;
                for (int j = 0; j < g_.nx; ++j) {
                    if (!g_.in_wedge(i, j)) continue;
                    int zc = 2 * (i + k0) - j; // xi index at a_jp is zc - jp
                    double acc = 0.0;
                    std::size_t id0 = g_.idx(i, 0);
                    double fC1 = B1_[0] * C[id0], fP1 = B1_[0] * P[id0];
                    for (int jp = 0; jp < jp_max; ++jp) {
                        double fC0 = fC1, fP0 = fP1;
                        std::size_t id1 = g_.idx(i, jp + 1);
                        fC1 = B1_[jp + 1] * C[id1];
                        fP1 = B1_[jp + 1] * P[id1];
                        if (fC0 == 0.0 && fC1 == 0.0 && fP0 == 0.0 && fP1 == 0.0) continue;
                        int zx0 = zc - jp, zx1 = zx0 - 1;   // xi at a_jp, a_jp+1
                        int zw0 = j - jp, zw1 = zw0 - 1;    // w at a_jp, a_jp+1
                        double xi0 = zx0 * delta, w0 = zw0 * delta;
                        double sC = (fC1 - fC0) / delta, sP = (fP1 - fP0) / delta;
                        // alpha part: lam1 * int phi''(xi) fC(a) da
                        double dphip = M.at(M.phip, zx0) - M.at(M.phip, zx1);
                        double dg2 = M.at(M.g2, zx0) - M.at(M.g2, zx1);
                        acc += lam1 * ((fC0 + sC * xi0) * dphip - sC * dg2);
                        // beta part: int (lam2 phi'(xi) + lamw phi'(w)) fP(a) da
                        double dphix = M.at(M.phi, zx0) - M.at(M.phi, zx1);
                        double dg1x = M.at(M.g1, zx0) - M.at(M.g1, zx1);
                        acc += lam2 * ((fP0 + sP * xi0) * dphix - sP * dg1x);
                        if (lamw != 0.0) {
                            double dphiw = M.at(M.phi, zw0) - M.at(M.phi, zw1);
                            double dg1w = M.at(M.g1, zw0) - M.at(M.g1, zw1);
                            acc += lamw * ((fP0 + sP * w0) * dphiw - sP * dg1w);
                        }
                    }
                    out[g_.idx(i, j)] += wq * acc;
                }
            }
        });
    }

    // Early-time counterpart of accumulate_d1: data moments exact per cell,
    // kernel linear between nodes.
    void accumulate_d1_dual(const DiffusionModel& m, double s, double tau, double wq,
                            const CompMask& mask, std::vector<double>& out) const {
        Moments1d M = build_moments_1d(g_, tau);
        DataMoments D = build_data_moments(m, g_, s);
        int k0 = g_.diag_offset();
        double delta = g_.delta;
        double lam1 = 2.0 * (mask.alpha[1] ? 1.0 : 0.0) - 4.0 * (mask.alpha[0] ? 1.0 : 0.0);
        double lam2 = (mask.beta[1] ? 1.0 : 0.0) - 2.0 * (mask.beta[0] ? 1.0 : 0.0);
        double lamw = mask.beta[1] ? 1.0 : 0.0;

        parallel_for(static_cast<std::size_t>(g_.nm), threads_, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t ii = lo; ii < hi; ++ii) {
                int i = static_cast<int>(ii);
                if (D.hi[i] < D.lo[i]) continue;
                for (int j = 0; j < g_.nx; ++j) {
                    if (!g_.in_wedge(i, j)) continue;
                    int zc = 2 * (i + k0) - j;
                    double acc = 0.0;
                    for (int jp = D.lo[i]; jp <= D.hi[i]; ++jp) {
                        std::size_t id = static_cast<std::size_t>(i) * D.ncell + jp;
                        int zx0 = zc - jp, zx1 = zx0 - 1;
                        int zw0 = j - jp, zw1 = zw0 - 1;
                        double t1a = lam1 * M.at(M.phipp, zx0) * B1_[jp];
                        double t1b = lam1 * M.at(M.phipp, zx1) * B1_[jp + 1];
                        double t2a =
                            (lam2 * M.at(M.phip, zx0) + lamw * M.at(M.phip, zw0)) * B1_[jp];
                        double t2b =
                            (lam2 * M.at(M.phip, zx1) + lamw * M.at(M.phip, zw1)) * B1_[jp + 1];
                        acc += t1a * D.ic0[id] + (t1b - t1a) / delta * D.ic1[id];
                        acc += t2a * D.ip0[id] + (t2b - t2a) / delta * D.ip1[id];
                    }
                    out[g_.idx(i, j)] += wq * acc;
                }
            }
        });
    }

    void accumulate_d2(const std::vector<double>& P, const std::vector<double>& C, double tau,
                       double wq, const CompMask& mask, std::vector<double>& out) const {
        int k0 = g_.diag_offset();
        double delta = g_.delta;
        // 2D tables in (u, w1) for the first-coordinate factor
        int L = k0 + g_.nm, W = 2 * g_.nx - 1, Wy = 2 * g_.ny - 1;
        std::vector<double> tK(static_cast<std::size_t>(L) * W), tD1(tK.size()), tQ(tK.size()),
            tdQ(tK.size());
        for (int l = 0; l < L; ++l) {
            double u = l * delta;
            for (int dj = -(g_.nx - 1); dj <= g_.nx - 1; ++dj) {
                double w = dj * delta;
                std::size_t id = static_cast<std::size_t>(l) * W + dj + (W - 1) / 2;
                auto pc = kernel::wedge_kernel_all_1d(u, w, tau);
                tK[id] = pc.value;
                tD1[id] = (mask.alpha[0] ? pc.db : 0.0) + (mask.alpha[1] ? pc.da : 0.0);
                double q1 = 0.0;
                if (u > std::max(w, 0.0)) {
                    double e1 = std::exp(-w * w / (2.0 * tau));
                    double uu = 2.0 * u - w;
                    double e2 = std::exp(-uu * uu / (2.0 * tau));
                    q1 = (e1 - e2) / std::sqrt(2.0 * M_PI * tau);
                }
                tQ[id] = q1;
                tdQ[id] = mask.beta[1] ? kernel::kernel_partial_mass_b_da1(u, w, tau) : 0.0;
            }
        }
        // 1D Gaussian factor in the second coordinate
        std::vector<double> gphi(Wy), gphip(Wy);
        for (int dk = -(g_.ny - 1); dk <= g_.ny - 1; ++dk) {
            double w2 = dk * delta;
            double ph = std::exp(-w2 * w2 / (2.0 * tau)) / std::sqrt(2.0 * M_PI * tau);
            gphi[dk + (Wy - 1) / 2] = ph;
            gphip[dk + (Wy - 1) / 2] = -w2 / tau * ph;
        }

        parallel_for(static_cast<std::size_t>(g_.nm), threads_, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t ii = lo; ii < hi; ++ii) {
                int i = static_cast<int>(ii);
                int jp_max = std::min(g_.nx - 1, i + k0);
                if (jp_max < 0) continue;
                for (int j = 0; j < g_.nx; ++j) {
                    if (!g_.in_wedge(i, j)) continue;
                    for (int k = 0; k < g_.ny; ++k) {
                        double acc = 0.0;
                        for (int jp = 0; jp <= jp_max; ++jp) {
                            double wt1 = (jp == 0 || jp == jp_max) ? 0.5 * delta : delta;
                            std::size_t tid = static_cast<std::size_t>(k0 + i - jp) * W + (j - jp) +
                                              (W - 1) / 2;
                            double kv = tK[tid], d1 = tD1[tid], qv = tQ[tid], dq = tdQ[tid];
                            for (int kp = 0; kp < g_.ny; ++kp) {
                                double wt = wt1 * ((kp == 0 || kp == g_.ny - 1) ? 0.5 * delta : delta);
                                std::size_t id = g_.idx(i, jp, kp);
                                double cv = C[id], pv = P[id];
                                if (cv == 0.0 && pv == 0.0) continue;
                                double ph = gphi[k - kp + (Wy - 1) / 2];
                                double php = gphip[k - kp + (Wy - 1) / 2];
                                std::size_t bid = static_cast<std::size_t>(jp) * g_.ny + kp;
                                double v = B1_[bid] * (d1 * ph * cv +
                                                       ((mask.beta[0] ? kv : 0.0) * ph + dq * ph) * pv);
                                if (mask.alpha[2]) v += B2_[bid] * kv * php * cv;
                                if (mask.beta[2]) v += B2_[bid] * qv * php * pv;
                                acc += wt * v;
                            }
                        }
                        out[g_.idx(i, j, k)] += wq * acc;
                    }
                }
            }
        });
    }

    const DiffusionModel& m_;
    std::shared_ptr<const WedgeGrid> gp_;
    const WedgeGrid& g_;
    int threads_;
    std::vector<double> B1_, B2_;
    bool zero_drift_ = false;
};

std::unique_ptr<Source> make_source(const DensityField& p, const DiffusionModel& m) {
    // the zeroth term concentrates on the diagonal as s -> 0; use its closed
    // form instead of interpolating stored slices
    if (p.tag == DensityField::Tag::SeriesTerm && p.term_index == 0)
        return std::make_unique<ExactP0Source>(m, *p.grid);
    // exponent of the small-time rate ||p_n(.;s)|| ~ s^{n/2}
    if (p.tag == DensityField::Tag::SeriesTerm && p.term_index >= 1)
        return std::make_unique<FieldSource>(p, 0.5 * p.term_index);
    return std::make_unique<FieldSource>(p, 0.5);
}

CompMask single(Comp k, bool alpha, int d) {
    int ki = static_cast<int>(k);
    if (ki < 0 || ki > d) throw std::invalid_argument("operator component out of range");
    CompMask m;
    (alpha ? m.alpha : m.beta)[ki] = true;
    return m;
}

void check_history(const DensityField& p, int t_index) {
    if (t_index < 1 || t_index >= p.grid->n_slices() || p.slices.size() < 2 ||
        p.slices[1].empty())
        throw std::invalid_argument("operator requires populated history slices");
}

DensityField zero_field(std::shared_ptr<const WedgeGrid> grid, int term_index) {
    DensityField f;
    f.grid = std::move(grid);
    f.tag = DensityField::Tag::SeriesTerm;
    f.term_index = term_index;
    f.slices.resize(f.grid->times.size());
    for (int s = 1; s < f.grid->n_slices(); ++s) f.slices[s].assign(f.grid->slice_size(), 0.0);
    return f;
}

} // namespace

std::vector<double> apply_operator_alpha(Comp k, const DensityField& p, const DiffusionModel& m,
                                         int t_index, int threads) {
    check_history(p, t_index);
    Engine eng(m, p.grid, threads);
    return eng.apply_slice(*make_source(p, m), t_index, single(k, true, p.grid->d));
}

std::vector<double> apply_operator_beta(Comp k, const DensityField& p, const DiffusionModel& m,
                                        int t_index, int threads) {
    check_history(p, t_index);
    Engine eng(m, p.grid, threads);
    return eng.apply_slice(*make_source(p, m), t_index, single(k, false, p.grid->d));
}

model::DensityField picard_step(const DensityField& p_n, const DiffusionModel& m, int threads) {
    check_history(p_n, 1);
    Engine eng(m, p_n.grid, threads);
    DensityField out = zero_field(p_n.grid, p_n.term_index >= 0 ? p_n.term_index + 1 : -1);
    if (eng.zero_drift()) return out;
    auto src = make_source(p_n, m);
    CompMask mask = CompMask::full(p_n.grid->d);
    for (int s = 1; s < p_n.grid->n_slices(); ++s) {
        auto slice = eng.apply_slice(*src, s, mask);
        for (auto& v : slice) v = -v; // p_{n+1} = -sum I^{k,j}[p_n]
        out.slices[s] = std::move(slice);
    }
    return out;
}

double term_norm_bound(double fitted_C, double p0_norm, int d, int n, double t) {
    if (n == 0) return p0_norm;
    double c = 2.0 * (d + 1) * fitted_C;
    return p0_norm * std::pow(c, n) * std::pow(t, 0.5 * n) *
           std::pow(std::tgamma(0.5), n) / std::tgamma(1.0 + 0.5 * n);
}

SeriesSolution solve_series(const DiffusionModel& m, std::shared_ptr<const WedgeGrid> grid,
                            int n_terms, int threads) {
    if (n_terms < 1) throw std::invalid_argument("n_terms must be >= 1");
    SeriesSolution sol;
    sol.grid = grid;
    sol.terms.push_back(model::assemble_p0(m, grid));
    for (int n = 0; n < n_terms; ++n)
        sol.terms.push_back(picard_step(sol.terms.back(), m, threads));

    int N = grid->n_slices();
    for (const auto& term : sol.terms) {
        std::vector<double> norms(N, 0.0);
        for (int s = 1; s < N; ++s) norms[s] = term.l1_norm(s);
        sol.term_norms.push_back(std::move(norms));
    }

    sol.partial_sum = zero_field(grid, -1);
    sol.partial_sum.tag = DensityField::Tag::PartialSum;
    for (int s = 1; s < N; ++s)
        for (std::size_t i = 0; i < grid->slice_size(); ++i)
            for (const auto& term : sol.terms)
                sol.partial_sum.slices[s][i] += term.slices[s][i];

    // Fit the smallest continuity constant whose Gamma-rate bound
    //   ||p_n(.;t)||_1 <= M0 (2(d+1)C)^n t^(n/2) Gamma(1/2)^n / Gamma(n/2+1)
    // dominates every computed term on every slice.  The constant is
    // existential, so the fit has to cover all transitions, not just n = 1:
    // the factorial decay only bites for large n and a first-transition fit
    // would under-report the truncation tail.
    double M0 = 0.0;
    for (int s = 1; s < N; ++s) M0 = std::max(M0, sol.term_norms[0][s]);
    double C = 0.0;
    for (int n = 1; n <= n_terms; ++n)
        for (int s = 1; s < N; ++s) {
            double t = grid->times[s];
            if (!(M0 > 0.0) || !(t > 0.0) || !(sol.term_norms[n][s] > 0.0)) continue;
            double c_needed = std::pow(sol.term_norms[n][s] * std::tgamma(1.0 + 0.5 * n) /
                                           (M0 * std::pow(t, 0.5 * n) *
                                            std::pow(std::tgamma(0.5), n)),
                                       1.0 / n);
            C = std::max(C, c_needed / (2.0 * (grid->d + 1)));
        }
    sol.report.fitted_C = C;
    sol.report.n_terms = n_terms;
    double T = grid->T();
    for (int n = 0; n <= n_terms; ++n)
        sol.report.term_bounds.push_back(term_norm_bound(C, M0, grid->d, n, T));
    sol.report.next_term_bound = term_norm_bound(C, M0, grid->d, n_terms + 1, T);
    double tail = 0.0;
    for (int n = n_terms + 1; n < n_terms + 200; ++n) {
        double b = term_norm_bound(C, M0, grid->d, n, T);
        tail += b;
        if (b < 1e-16 * (tail + 1e-300)) break;
    }
    sol.report.tail_bound = tail;
    return sol;
}

model::DensityField solve_volterra(const DiffusionModel& m,
                                   std::shared_ptr<const WedgeGrid> grid, int threads) {
    Engine eng(m, grid, threads);
    DensityField p0 = model::assemble_p0(m, grid);
    if (eng.zero_drift()) return p0;

    // March the correction q = I[p_0] + I[q]; the I[p_0] part is evaluated
    // with the closed-form source, exact in s.
    DensityField p1 = picard_step(p0, m, threads);
    DensityField q = zero_field(grid, -1);
    q.tag = DensityField::Tag::PartialSum;
    int N = grid->n_slices();
    CompMask mask = CompMask::full(grid->d);
    for (int I = 1; I < N; ++I) {
        // predictor: extrapolate the last computed slices
        if (I == 1) {
            q.slices[1] = p1.slices[1];
        } else if (I == 2) {
            q.slices[2] = q.slices[1];
        } else {
            q.slices[I].resize(grid->slice_size());
            for (std::size_t i = 0; i < grid->slice_size(); ++i)
                q.slices[I][i] = 2.0 * q.slices[I - 1][i] - q.slices[I - 2][i];
        }
        for (int iter = 0; iter < 2; ++iter) {
            FieldSource src(q, 0.5, I);
            auto corr = eng.apply_slice(src, I, mask);
            for (std::size_t i = 0; i < grid->slice_size(); ++i)
                q.slices[I][i] = p1.slices[I][i] - corr[i];
        }
    }

    DensityField out = p0;
    out.tag = DensityField::Tag::PartialSum;
    out.term_index = -1;
    for (int s = 1; s < N; ++s)
        for (std::size_t i = 0; i < grid->slice_size(); ++i) out.slices[s][i] += q.slices[s][i];
    return out;
}

} // namespace runmax::series
