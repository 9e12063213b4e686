#pragma once

#include "runmax/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace runmax::analysis {

struct AnalysisError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Diagonal trace p(m, m, y; t) per station, Richardson-extrapolated from
/// the two nearest interior offsets.  d = 1: values[i]; d = 2: values[i*ny+k].
struct TraceCurve {
    std::shared_ptr<const model::WedgeGrid> grid;
    double t = 0.0;
    std::vector<double> values;

    /// Linear interpolation in m (d = 1 only).
    double at(double m) const;
};

TraceCurve boundary_trace(const model::DensityField& field, int t_index);

/// First-passage density f_{tau_a}(t) = 1/2 * integral of the trace at level
/// a over the remaining coordinates (d = 1: half the trace itself).
double hitting_density(const model::DensityField& field, double a, int t_index);

/// Interior Fokker-Planck and diagonal boundary residuals of a field slice.
struct ResidualReport {
    double delta = 0.0;
    double dt = 0.0;
    double t = 0.0;
    double sup_interior = 0.0, l1_interior = 0.0;
    double sup_boundary = 0.0, l1_boundary = 0.0;
    std::vector<double> interior; // full slice layout, 0 where not evaluated
    std::vector<double> boundary; // per diagonal station (d=2: station*ny+k)
    std::string to_json() const;
    void interior_to_csv(const model::WedgeGrid& g, const std::string& path) const;
};

/// |d/dt p - L* p| at interior nodes at least two cells off the diagonal,
/// central differences in space, central (one-sided at the ends) in time.
ResidualReport fp_interior_residual(const model::DensityField& field, int t_index,
                                    const model::DiffusionModel& m);

/// Residual of the diagonal flux condition B^1 p = d/dx1 p + 1/2 d/dm p
/// (unit diffusion), one-sided second-order stencils into the wedge.
ResidualReport boundary_residual(const model::DensityField& field, int t_index,
                                 const model::DiffusionModel& m);

struct SlopeRow {
    double h = 0.0;
    double estimate = 0.0;
    double se = 0.0;
};

/// Small-window slope estimator (2/sqrt(h)) E[Psi |A1| H((M-X1)/(sqrt(h)|A1|))]
/// against its h -> 0 limit, half the Psi-weighted trace integral.  Psi is an
/// expression in x1 = m, x2 = x^1 (, x3 = x^2).
struct SlopeReport {
    std::vector<SlopeRow> rows;
    double target = 0.0;
};

SlopeReport local_slope(const model::DiffusionModel& m, const std::string& psi_expr, double t,
                        const std::vector<double>& h_list, const model::DensityField& series,
                        std::int64_t n_paths, double dt, std::uint64_t seed, int threads = 0);

/// Nested-MC check of the conditional window-maximum law: at a sampled state
/// the inner mean of (sigma sqrt(h)|G| - (M - X1))_+ must match
/// 2 sigma sqrt(h) H((M - X1)/(sigma sqrt(h))).  The inner draw simulates one
/// bridge-corrected Euler step rather than using the target law itself.
struct ConditionalCheckRow {
    double m_state = 0.0, x1_state = 0.0;
    double lhs = 0.0, lhs_se = 0.0, rhs = 0.0;
};

std::vector<ConditionalCheckRow> conditional_window_check(const model::DiffusionModel& m, double t,
                                                          double h, int n_states,
                                                          std::int64_t n_inner,
                                                          std::uint64_t seed);

} // namespace runmax::analysis
