#pragma once

#include "runmax/model.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace runmax::mc {

struct McError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Philox4x32-10 counter-based generator.  Streams are indexed by (seed,
/// stream, counter), so the sample set is independent of any parallel
/// partitioning of paths.
struct PhiloxStream {
    PhiloxStream(std::uint64_t seed, std::uint64_t stream);

    double uniform();        // (0, 1)
    double normal();         // standard normal, Box-Muller pairs

  private:
    void refill();
    std::uint32_t key_[2];
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::uint32_t block_[4];
    int avail_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Terminal samples of (M_T, X_T) plus the initial first coordinate, with
/// optional snapshots of (M, X) at intermediate times.
struct PathEnsemble {
    int d = 1;
    std::int64_t n_paths = 0;
    double T = 0.0;
    double dt = 0.0;
    std::uint64_t seed = 0;
    bool bridge = true;

    std::vector<double> m;    // n_paths
    std::vector<double> x;    // n_paths * d
    std::vector<double> x01;  // n_paths, initial first coordinate

    std::vector<double> snapshot_times;
    // snapshots[k] holds n_paths * (1 + d) doubles: (M, X) at snapshot k
    std::vector<std::vector<double>> snapshots;
};

/// Euler-Maruyama with running-maximum tracking; bridge=true adds the
/// frozen-coefficient Brownian-bridge maximum sample per step.
PathEnsemble simulate(const model::DiffusionModel& m, double T, std::int64_t n_paths, double dt,
                      std::uint64_t seed, bool bridge,
                      const std::vector<double>& snapshot_times = {}, int threads = 0);

void save_binary(const PathEnsemble& e, const std::string& path);
PathEnsemble load_binary(const std::string& path);
void save_csv(const PathEnsemble& e, const std::string& path);

/// Product-Gaussian KDE on the wedge nodes of `grid` at its final slice,
/// with samples reflected across the diagonal m = x1 so boundary mass is
/// not halved.  bandwidth_scale multiplies the per-axis Silverman rule.
model::DensityField estimate_density(const PathEnsemble& e,
                                     std::shared_ptr<const model::WedgeGrid> grid,
                                     double bandwidth_scale = 1.0, int threads = 0);

/// Sample mean and standard error of F(M_T, X_T).
std::pair<double, double> estimate_expectation(
    const PathEnsemble& e, const std::function<double(double, const double*)>& F);

struct WeakIdentityReport {
    double lhs = 0.0;          // E[F(M_T, X_T)], Monte Carlo
    double lhs_se = 0.0;
    double init_term = 0.0;    // E[F(X0^1, X0)], exact over the mixture
    double l_term = 0.0;       // int_0^T E[LF(M_s, X_s)] ds, Monte Carlo
    double l_term_se = 0.0;
    double boundary_term = 0.0; // 1/2 int int dF/dm |A1|^2 trace dm ds, series
    double gap = 0.0;          // lhs - (init + l + boundary)
    double mc_sigma = 0.0;     // combined MC standard error of the gap
    double truncation = 0.0;   // series truncation bound used
    double quad_tol = 0.0;     // time-quadrature allowance
};

/// Both sides of the weak identity
///   E[F(M_T,X_T)] = E[F(X0^1,X0)] + int_0^T E[LF] ds
///                   + 1/2 int_0^T int dF/dm(m,m,xt) |A1|^2 p(m,m,xt;s) dm dxt ds
/// with F(x1 = m, x2 = x^1[, x3 = x^2]) given as an expression.  The
/// boundary term uses the diagonal trace of `density`; `truncation` is the
/// reported series tail bound for the confidence radius.
WeakIdentityReport weak_identity_gap(const model::DiffusionModel& m, const std::string& F_expr,
                                     double T, const model::DensityField& density,
                                     double truncation, std::int64_t n_paths, double dt,
                                     std::uint64_t seed, int threads = 0);

} // namespace runmax::mc
