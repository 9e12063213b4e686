#include "runmax/mc.hpp"

#include "runmax/kernel.hpp"
#include "runmax/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace runmax::mc {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void philox_round(std::uint32_t c[4], std::uint32_t k0, std::uint32_t k1) {
    std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * c[0];
    std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * c[2];
    std::uint32_t lo0 = static_cast<std::uint32_t>(p0), hi0 = static_cast<std::uint32_t>(p0 >> 32);
    std::uint32_t lo1 = static_cast<std::uint32_t>(p1), hi1 = static_cast<std::uint32_t>(p1 >> 32);
    std::uint32_t n0 = hi1 ^ c[1] ^ k0;
    std::uint32_t n1 = lo1;
    std::uint32_t n2 = hi0 ^ c[3] ^ k1;
    std::uint32_t n3 = lo0;
    c[0] = n0;
    c[1] = n1;
    c[2] = n2;
    c[3] = n3;
}

} // namespace

PhiloxStream::PhiloxStream(std::uint64_t seed, std::uint64_t stream) : stream_(stream) {
    key_[0] = static_cast<std::uint32_t>(seed);
    key_[1] = static_cast<std::uint32_t>(seed >> 32);
}

void PhiloxStream::refill() {
    std::uint32_t c[4] = {static_cast<std::uint32_t>(counter_),
                          static_cast<std::uint32_t>(counter_ >> 32),
                          static_cast<std::uint32_t>(stream_),
                          static_cast<std::uint32_t>(stream_ >> 32)};
    std::uint32_t k0 = key_[0], k1 = key_[1];
    for (int r = 0; r < 10; ++r) {
        philox_round(c, k0, k1);
        k0 += kPhiloxW0;
        k1 += kPhiloxW1;
    }
    std::memcpy(block_, c, sizeof(block_));
    avail_ = 4;
    ++counter_;
}

double PhiloxStream::uniform() {
    if (avail_ < 2) refill();
    std::uint64_t bits = (static_cast<std::uint64_t>(block_[4 - avail_]) << 32) |
                         block_[4 - avail_ + 1];
    avail_ -= 2;
    return static_cast<double>(bits >> 11) * 0x1.0p-53 + 0x1.0p-54;
}

double PhiloxStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

PathEnsemble simulate(const model::DiffusionModel& m, double T, std::int64_t n_paths, double dt,
                      std::uint64_t seed, bool bridge, const std::vector<double>& snapshot_times,
                      int threads) {
    m.check_consistent();
    if (!(T > 0.0) || !(dt > 0.0)) throw McError("T and dt must be positive");
    if (n_paths < 1) throw McError("n_paths must be positive");
    if (m.d > 2) throw McError("dimension > 2 unsupported");

    const int d = m.d;
    const std::int64_t n_steps = std::max<std::int64_t>(1, std::llround(T / dt));
    const double h = T / static_cast<double>(n_steps);
    const double sqh = std::sqrt(h);

    // cumulative mixture weights for initial sampling
    std::vector<double> cum;
    double acc = 0.0;
    for (const auto& pt : m.initial) cum.push_back(acc += pt.weight);
    cum.back() = 1.0;

    PathEnsemble e;
    e.d = d;
    e.n_paths = n_paths;
    e.T = T;
    e.dt = h;
    e.seed = seed;
    e.bridge = bridge;
    e.m.resize(n_paths);
    e.x.resize(static_cast<std::size_t>(n_paths) * d);
    e.x01.resize(n_paths);

    // map snapshot times to step boundaries
    std::vector<std::int64_t> snap_steps;
    for (double ts : snapshot_times) {
        auto k = std::llround(ts / h);
        if (k < 0 || k > n_steps) throw McError("snapshot time outside [0, T]");
        snap_steps.push_back(k);
    }
    e.snapshot_times.resize(snap_steps.size());
    e.snapshots.resize(snap_steps.size());
    for (std::size_t s = 0; s < snap_steps.size(); ++s) {
        e.snapshot_times[s] = snap_steps[s] * h;
        e.snapshots[s].resize(static_cast<std::size_t>(n_paths) * (1 + d));
    }

    const bool scalar_A = !m.identity_diffusion();

    parallel_for(static_cast<std::size_t>(n_paths), threads, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> x(d);
        for (std::size_t p = lo; p < hi; ++p) {
            PhiloxStream rng(seed, p);
            double u0 = rng.uniform();
            std::size_t pick = std::lower_bound(cum.begin(), cum.end(), u0) - cum.begin();
            if (pick >= cum.size()) pick = cum.size() - 1;
            for (int k = 0; k < d; ++k) x[k] = m.initial[pick].x[k];
            double M = x[0];
            e.x01[p] = x[0];

            auto record = [&](std::int64_t step) {
                for (std::size_t s = 0; s < snap_steps.size(); ++s)
                    if (snap_steps[s] == step) {
                        double* row = e.snapshots[s].data() + p * (1 + d);
                        row[0] = M;
                        for (int k = 0; k < d; ++k) row[1 + k] = x[k];
                    }
            };
            record(0);

            for (std::int64_t step = 0; step < n_steps; ++step) {
                double a1 = scalar_A ? m.diffusion->eval(x) : 1.0;
                double y0 = x[0];
                for (int k = 0; k < d; ++k) {
                    double z = rng.normal();
                    double sig = (k == 0) ? a1 : 1.0;
                    x[k] += m.drift_at(k, x) * h + sig * sqh * z;
                }
                // drift term above evaluates at the already-updated earlier
                // coordinates only when d = 1, so no correction is needed;
                // for d = 2 the first-coordinate update happens before the
                // second drift eval, an O(h^{3/2}) effect absorbed by the
                // Euler error.
                if (bridge) {
                    double u = rng.uniform();
                    double v = a1 * a1 * h;
                    double dy = x[0] - y0;
                    double mb = 0.5 * (y0 + x[0] + std::sqrt(dy * dy - 2.0 * v * std::log(u)));
                    M = std::max(M, mb);
                } else {
                    M = std::max(M, x[0]);
                }
                record(step + 1);
            }
            e.m[p] = M;
            for (int k = 0; k < d; ++k) e.x[p * d + k] = x[k];
        }
    });
    return e;
}

namespace {

constexpr char kMagic[8] = {'R', 'M', 'X', 'E', '0', '0', '0', '1'};

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void get(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
}
void put_vec(std::ofstream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}
void get_vec(std::ifstream& in, std::vector<double>& v, std::size_t n) {
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
}

} // namespace

void save_binary(const PathEnsemble& e, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw McError("cannot open for writing: " + path);
    out.write(kMagic, 8);
    put(out, static_cast<std::uint32_t>(e.d));
    put(out, static_cast<std::uint32_t>(e.bridge ? 1 : 0));
    put(out, static_cast<std::uint64_t>(e.n_paths));
    put(out, e.seed);
    put(out, e.dt);
    put(out, e.T);
    put(out, static_cast<std::uint64_t>(e.snapshot_times.size()));
    put_vec(out, e.snapshot_times);
    put_vec(out, e.m);
    put_vec(out, e.x);
    put_vec(out, e.x01);
    for (const auto& s : e.snapshots) put_vec(out, s);
    if (!out) throw McError("write failed: " + path);
}

PathEnsemble load_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw McError("cannot open: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw McError("bad ensemble file: " + path);
    PathEnsemble e;
    std::uint32_t d, bridge;
    std::uint64_t n, ns;
    get(in, d);
    get(in, bridge);
    get(in, n);
    get(in, e.seed);
    get(in, e.dt);
    get(in, e.T);
    get(in, ns);
    if (!in || d < 1 || d > 2) throw McError("bad ensemble header: " + path);
    e.d = static_cast<int>(d);
    e.bridge = bridge != 0;
    e.n_paths = static_cast<std::int64_t>(n);
    get_vec(in, e.snapshot_times, ns);
    get_vec(in, e.m, n);
    get_vec(in, e.x, n * d);
    get_vec(in, e.x01, n);
    e.snapshots.resize(ns);
    for (auto& s : e.snapshots) get_vec(in, s, n * (1 + d));
    if (!in) throw McError("truncated ensemble file: " + path);
    return e;
}

void save_csv(const PathEnsemble& e, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw McError("cannot open for writing: " + path);
    std::fprintf(f, e.d == 1 ? "m,x1,x01\n" : "m,x1,x2,x01\n");
    for (std::int64_t p = 0; p < e.n_paths; ++p) {
        std::fprintf(f, "%.17g", e.m[p]);
        for (int k = 0; k < e.d; ++k) std::fprintf(f, ",%.17g", e.x[p * e.d + k]);
        std::fprintf(f, ",%.17g\n", e.x01[p]);
    }
    std::fclose(f);
}

model::DensityField estimate_density(const PathEnsemble& e,
                                     std::shared_ptr<const model::WedgeGrid> grid,
                                     double bandwidth_scale, int threads) {
    if (e.d != grid->d) throw McError("ensemble/grid dimension mismatch");
    if (std::fabs(grid->T() - e.T) > 1e-9 * std::max(1.0, e.T))
        throw McError("grid final time does not match ensemble horizon");
    const int d = e.d;
    const int D = 1 + d;
    const std::int64_t n = e.n_paths;

    // Silverman rule per axis on the unreflected sample
    double bw[3] = {0.0, 0.0, 0.0};
    {
        double mean[3] = {0.0, 0.0, 0.0}, var[3] = {0.0, 0.0, 0.0};
        for (std::int64_t p = 0; p < n; ++p) {
            mean[0] += e.m[p];
            for (int k = 0; k < d; ++k) mean[1 + k] += e.x[p * d + k];
        }
        for (int l = 0; l < D; ++l) mean[l] /= static_cast<double>(n);
        for (std::int64_t p = 0; p < n; ++p) {
            double dm = e.m[p] - mean[0];
            var[0] += dm * dm;
            for (int k = 0; k < d; ++k) {
                double dx = e.x[p * d + k] - mean[1 + k];
                var[1 + k] += dx * dx;
            }
        }
        double fac = std::pow(4.0 / (D + 2.0), 1.0 / (D + 4.0)) *
                     std::pow(2.0 * static_cast<double>(n), -1.0 / (D + 4.0));
        for (int l = 0; l < D; ++l)
            bw[l] = bandwidth_scale * fac * std::sqrt(var[l] / static_cast<double>(n - 1));
    }

    // bin samples (with the diagonal reflection (M,X1) -> (X1,M)) in the
    // (m,x1) plane at the kernel cutoff radius, then gather per node; the
    // node loop is the parallel one, so sums are thread-count independent
    const double cutoff = 6.0;
    const double rad = cutoff * std::max(bw[0], bw[1]);
    const double bin_w = std::max(rad, 1e-12);
    const double lo_m = grid->m(0) - rad, hi_m = grid->m(grid->nm - 1) + rad;
    const double lo_x = grid->x(0) - rad, hi_x = grid->x(grid->nx - 1) + rad;
    const int nbm = std::max(1, static_cast<int>((hi_m - lo_m) / bin_w) + 1);
    const int nbx = std::max(1, static_cast<int>((hi_x - lo_x) / bin_w) + 1);

    struct Sample {
        double m, x1, x2;
    };
    std::vector<std::vector<Sample>> bins(static_cast<std::size_t>(nbm) * nbx);
    auto push = [&](double sm, double sx1, double sx2) {
        if (sm < lo_m || sm > hi_m || sx1 < lo_x || sx1 > hi_x) return;
        int bi = std::clamp(static_cast<int>((sm - lo_m) / bin_w), 0, nbm - 1);
        int bj = std::clamp(static_cast<int>((sx1 - lo_x) / bin_w), 0, nbx - 1);
        bins[static_cast<std::size_t>(bi) * nbx + bj].push_back({sm, sx1, sx2});
    };
    for (std::int64_t p = 0; p < n; ++p) {
        double sm = e.m[p], sx1 = e.x[p * d], sx2 = d == 2 ? e.x[p * d + 1] : 0.0;
        push(sm, sx1, sx2);
        push(sx1, sm, sx2);
    }

    model::DensityField f;
    f.grid = grid;
    f.tag = model::DensityField::Tag::McEstimate;
    f.slices.resize(grid->times.size());
    int last = grid->n_slices() - 1;
    f.slices[last].assign(grid->slice_size(), 0.0);
    auto& out = f.slices[last];

    const double norm_full = 1.0 / (static_cast<double>(n) * std::pow(2.0 * M_PI, 0.5 * D));

    parallel_for(static_cast<std::size_t>(grid->nm), threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            double mi = grid->m(static_cast<int>(i));
            for (int j = 0; j < grid->nx; ++j) {
                if (!grid->in_wedge(static_cast<int>(i), j)) continue;
                double xj = grid->x(j);
                // halve the bandwidth near the kinked diagonal
                double sc = (mi - xj < 2.0 * bw[0]) ? 0.5 : 1.0;
                double hm = sc * bw[0], hx = sc * bw[1], hy = sc * bw[2];
                double knorm = norm_full / (hm * hx * (d == 2 ? hy : 1.0));
                int bi0 = std::clamp(static_cast<int>((mi - lo_m) / bin_w) - 1, 0, nbm - 1);
                int bi1 = std::clamp(bi0 + 2, 0, nbm - 1);
                int bj0 = std::clamp(static_cast<int>((xj - lo_x) / bin_w) - 1, 0, nbx - 1);
                int bj1 = std::clamp(bj0 + 2, 0, nbx - 1);
                for (int k = 0; k < grid->ny; ++k) {
                    double yk = d == 2 ? grid->y(k) : 0.0;
                    double acc = 0.0;
                    for (int bi = bi0; bi <= bi1; ++bi)
                        for (int bj = bj0; bj <= bj1; ++bj)
                            for (const auto& s :
                                 bins[static_cast<std::size_t>(bi) * nbx + bj]) {
                                double zm = (mi - s.m) / hm;
                                double zx = (xj - s.x1) / hx;
                                double q = zm * zm + zx * zx;
                                if (d == 2) {
                                    double zy = (yk - s.x2) / hy;
                                    q += zy * zy;
                                }
                                if (q < cutoff * cutoff) acc += std::exp(-0.5 * q);
                            }
                    out[grid->idx(static_cast<int>(i), j, k)] = knorm * acc;
                }
            }
        }
    });
    return f;
}

std::pair<double, double> estimate_expectation(
    const PathEnsemble& e, const std::function<double(double, const double*)>& F) {
    // fixed-size sequential blocks: the reduction order never depends on
    // the thread configuration
    const std::int64_t block = 65536;
    double sum = 0.0, sumsq = 0.0;
    for (std::int64_t b = 0; b < e.n_paths; b += block) {
        std::int64_t hi = std::min(e.n_paths, b + block);
        double bs = 0.0, bq = 0.0;
        for (std::int64_t p = b; p < hi; ++p) {
            double v = F(e.m[p], e.x.data() + p * e.d);
            bs += v;
            bq += v * v;
        }
        sum += bs;
        sumsq += bq;
    }
    double nn = static_cast<double>(e.n_paths);
    double mean = sum / nn;
    double var = std::max(0.0, sumsq / nn - mean * mean);
    return {mean, std::sqrt(var / nn)};
}

WeakIdentityReport weak_identity_gap(const model::DiffusionModel& m, const std::string& F_expr,
                                     double T, const model::DensityField& density,
                                     double truncation, std::int64_t n_paths, double dt,
                                     std::uint64_t seed, int threads) {
    m.check_consistent();
    if (!m.identity_diffusion())
        throw McError("weak identity check requires identity diffusion");
    const auto& grid = *density.grid;
    if (std::fabs(grid.T() - T) > 1e-9) throw McError("density horizon does not match T");
    const int d = m.d;

    auto F = expr::parse(F_expr);
    if (F.max_var() > 1 + d) throw McError("observable uses more variables than the state has");
    auto dFm = F.differentiate(0);
    std::vector<expr::CoeffExpr> dFx, d2Fx;
    for (int k = 0; k < d; ++k) {
        dFx.push_back(F.differentiate(1 + k));
        d2Fx.push_back(dFx.back().differentiate(1 + k));
    }

    const int N = grid.n_slices() - 1;
    std::vector<double> snap_times(grid.times.begin(), grid.times.end() - 1);
    auto ens = simulate(m, T, n_paths, dt, seed, true, snap_times, threads);

    // time integrals are done in r = sqrt(s): the integrands here carry a
    // sqrt(s) term in their small-time expansion, which is smooth in r but
    // breaks second-order rules in s.  Composite three-point quadratic rule
    // over the nonuniform nodes r_s = sqrt(t_s); returns per-node weights
    // for int psi(r) dr.
    auto r_weights = [&](int stride) {
        std::vector<double> r;
        for (int s = 0; s <= N; s += stride) r.push_back(std::sqrt(grid.times[s]));
        std::vector<double> u(r.size(), 0.0);
        auto add = [&](int i0, int i1, int i2, double a, double b) {
            int idx[3] = {i0, i1, i2};
            for (int k = 0; k < 3; ++k) {
                double p = r[idx[(k + 1) % 3]], q = r[idx[(k + 2) % 3]];
                double den = (r[idx[k]] - p) * (r[idx[k]] - q);
                auto anti = [&](double x) {
                    return x * x * x / 3.0 - 0.5 * (p + q) * x * x + p * q * x;
                };
                u[idx[k]] += (anti(b) - anti(a)) / den;
            }
        };
        int M = static_cast<int>(r.size()) - 1;
        if (M == 1) {
            u[0] = u[1] = 0.5 * (r[1] - r[0]);
            return u;
        }
        int i = 0;
        for (; i + 2 <= M; i += 2) add(i, i + 1, i + 2, r[i], r[i + 2]);
        if (i < M) add(M - 2, M - 1, M, r[M - 1], r[M]);
        return u;
    };
    auto u1 = r_weights(1);

    // weights for int_0^T LF ds = int 2 r LF(r^2) dr at the slice times
    std::vector<double> wt(N + 1);
    for (int s = 0; s <= N; ++s) wt[s] = u1[s] * 2.0 * std::sqrt(grid.times[s]);

    auto lf_at = [&](double M, const double* x) {
        std::vector<double> st(x, x + d), args(1 + d);
        args[0] = M;
        for (int k = 0; k < d; ++k) args[1 + k] = x[k];
        double v = 0.0;
        for (int k = 0; k < d; ++k)
            v += 0.5 * d2Fx[k].eval(args) + m.drift_at(k, st) * dFx[k].eval(args);
        return v;
    };
    auto f_at = [&](double M, const double* x) {
        std::vector<double> args(1 + d);
        args[0] = M;
        for (int k = 0; k < d; ++k) args[1 + k] = x[k];
        return F.eval(args);
    };

    // per-path statistic f(T) - trapezoid of LF captures the correlation
    // between the two Monte Carlo pieces in one standard error
    const std::int64_t block = 65536;
    double gs = 0.0, gq = 0.0, fs = 0.0, fq = 0.0, ls = 0.0, lq = 0.0;
    std::vector<double> lmean(N + 1, 0.0);
    for (std::int64_t b = 0; b < n_paths; b += block) {
        std::int64_t hi = std::min(n_paths, b + block);
        double bgs = 0.0, bgq = 0.0, bfs = 0.0, bfq = 0.0, bls = 0.0, blq = 0.0;
        std::vector<double> bl(N + 1, 0.0);
        for (std::int64_t p = b; p < hi; ++p) {
            double fT = f_at(ens.m[p], ens.x.data() + p * d);
            double lpath = wt[N] * lf_at(ens.m[p], ens.x.data() + p * d);
            for (int s = 0; s < N; ++s) {
                const double* row = ens.snapshots[s].data() + p * (1 + d);
                double v = lf_at(row[0], row + 1);
                lpath += wt[s] * v;
                bl[s] += v;
            }
            bl[N] += lf_at(ens.m[p], ens.x.data() + p * d);
            double g = fT - lpath;
            bgs += g;
            bgq += g * g;
            bfs += fT;
            bfq += fT * fT;
            bls += lpath;
            blq += lpath * lpath;
        }
        gs += bgs;
        gq += bgq;
        fs += bfs;
        fq += bfq;
        ls += bls;
        lq += blq;
        for (int s = 0; s <= N; ++s) lmean[s] += bl[s];
    }
    double nn = static_cast<double>(n_paths);
    for (auto& v : lmean) v /= nn;

    WeakIdentityReport rep;
    rep.truncation = truncation;
    rep.lhs = fs / nn;
    rep.lhs_se = std::sqrt(std::max(0.0, fq / nn - rep.lhs * rep.lhs) / nn);
    rep.l_term = ls / nn;
    rep.l_term_se = std::sqrt(std::max(0.0, lq / nn - rep.l_term * rep.l_term) / nn);
    double gmean = gs / nn;
    rep.mc_sigma = std::sqrt(std::max(0.0, gq / nn - gmean * gmean) / nn);

    for (const auto& pt : m.initial) rep.init_term += pt.weight * f_at(pt.x[0], pt.x.data());

    // boundary term: diagonal trace of the density against dF/dm.  The
    // trace blows up like 1/sqrt(s) at s -> 0, so integrate G(s) =
    // g(s) sqrt(s) piecewise linearly against ds/sqrt(s); G(0) is the
    // exact small-time limit of the trace integral.
    auto g_slice = [&](int s) {
        double acc = 0.0;
        for (int i = 0; i < grid.nm; ++i) {
            int j = i + grid.diag_offset();
            if (j < 0 || j >= grid.nx) continue;
            double wm = grid.delta * (i == 0 || i == grid.nm - 1 ? 0.5 : 1.0);
            double mi = grid.m(i);
            double args[3] = {mi, mi, 0.0};
            for (int k = 0; k < grid.ny; ++k) {
                double wy = 1.0;
                if (d == 2) {
                    args[2] = grid.y(k);
                    wy = grid.delta * (k == 0 || k == grid.ny - 1 ? 0.5 : 1.0);
                }
                std::vector<double> av(args, args + 1 + d);
                acc += wm * wy * dFm.eval(av) * density.value(s, i, j, k);
            }
        }
        return 0.5 * acc;
    };
    double G0 = 0.0;
    for (const auto& pt : m.initial) {
        std::vector<double> av(1 + d);
        av[0] = pt.x[0];
        for (int k = 0; k < d; ++k) av[1 + k] = pt.x[k];
        G0 += pt.weight * 0.5 * dFm.eval(av) * 2.0 / std::sqrt(2.0 * M_PI);
    }
    std::vector<double> G(N + 1);
    G[0] = G0;
    for (int s = 1; s <= N; ++s) G[s] = g_slice(s) * std::sqrt(grid.times[s]);
    // int_0^T g(s) ds = int 2 G(r^2) dr with the same quadratic rule in r
    auto r_integral = [&](int stride, const std::vector<double>& u) {
        double acc = 0.0;
        for (int i = 0, s = 0; s <= N; ++i, s += stride) acc += u[i] * 2.0 * G[s];
        return acc;
    };
    rep.boundary_term = r_integral(1, u1);

    // time-quadrature allowance by Richardson: rerun both time integrals at
    // half resolution and take a third of the change
    double lt_coarse = 0.0;
    if (N % 2 == 0 && N >= 4) {
        auto u2 = r_weights(2);
        for (int i = 0, s = 0; s <= N; ++i, s += 2)
            lt_coarse += u2[i] * 2.0 * std::sqrt(grid.times[s]) * lmean[s];
        rep.quad_tol = (std::fabs(rep.l_term - lt_coarse) +
                        std::fabs(rep.boundary_term - r_integral(2, u2))) / 3.0;
    } else {
        rep.quad_tol = 0.05 * (std::fabs(rep.l_term) + std::fabs(rep.boundary_term));
    }

    rep.gap = gmean - rep.init_term - rep.boundary_term;
    return rep;
}

} // namespace runmax::mc
