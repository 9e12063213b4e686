#pragma once

#include "runmax/exprlang.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace runmax::model {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class DiffusionKind { Identity, ScalarExpr };

/// One initial point with weight; weights of a mixture sum to 1.
struct InitialPoint {
    std::vector<double> x;
    double weight = 1.0;
};

/// Empirical assumption certificate: sampled sup-norms of the coefficients
/// over an explicit box.  Sample-based, not symbolic.
struct Certificate {
    std::vector<double> box_lo, box_hi;
    int n_samples = 0;
    double sup_B = 0.0;
    double sup_gradB = 0.0;
    double inf_A = 1.0;   // identity: 1
    double sup_A = 1.0;
    double sup_Ap = 0.0;  // |A'|
    double sup_App = 0.0; // |A''|
    std::string to_json() const;
};

struct DiffusionModel {
    int d = 1;
    std::vector<expr::CoeffExpr> drift;          // B^i, i=1..d
    DiffusionKind diffusion_kind = DiffusionKind::Identity;
    std::optional<expr::CoeffExpr> diffusion;    // A, d=1 only
    std::vector<InitialPoint> initial;
    std::optional<Certificate> certificate;
    // numeric drift override (coordinate-changed models whose drift has no
    // closed expression); entries shadow `drift` when present
    std::vector<std::function<double(const std::vector<double>&)>> drift_override;

    bool identity_diffusion() const { return diffusion_kind == DiffusionKind::Identity; }
    double drift_at(int i, const std::vector<double>& x) const {
        return drift_override.empty() ? drift[i].eval(x) : drift_override[i](x);
    }
    bool drift_is_zero() const {
        if (!drift_override.empty()) return false;
        for (const auto& b : drift)
            if (!b.is_constant_zero()) return false;
        return true;
    }
    void check_consistent() const;
};

/// Samples coefficient bounds on a quasi-random point set; fails if a value
/// exceeds `cap` (unboundedness) or ellipticity is violated.
Certificate validate_model(const DiffusionModel& model,
                           const std::vector<double>& box_lo,
                           const std::vector<double>& box_hi,
                           int n_samples,
                           double cap = 1e6);

/// Tensor grid over the truncated wedge {m >= x^1} plus a uniform time grid.
/// The m-axis and x1-axis share one lattice so the diagonal passes through
/// nodes.
struct WedgeGrid {
    int d = 1;
    double delta = 0.0;   // shared step of m and x axes
    double m_lo = 0.0;
    int nm = 0;
    double x_lo = 0.0;
    int nx = 0;
    double y_lo = 0.0;    // second space axis (d = 2)
    int ny = 1;
    int diag_k0 = 0;      // m_i == x_j exactly when j = i + diag_k0
    std::vector<double> times; // t_0 = 0 < ... < t_N = T
    double eps_trunc = 0.0;
    double pad = 0.0;     // truncation padding radius actually used

    double m(int i) const { return m_lo + i * delta; }
    // evaluated relative to the m lattice so diagonal nodes compare equal
    double x(int j) const { return m_lo + (j - diag_k0) * delta; }
    double y(int k) const { return y_lo + k * delta; }
    double T() const { return times.back(); }
    int n_slices() const { return static_cast<int>(times.size()); }
    int diag_offset() const { return diag_k0; } // m_i >= x_j  <=>  i + k0 >= j
    bool in_wedge(int i, int j) const { return i + diag_offset() >= j; }
    bool on_diagonal(int i, int j) const { return i + diag_offset() == j; }
    std::size_t slice_size() const {
        return static_cast<std::size_t>(nm) * nx * ny;
    }
    std::size_t idx(int i, int j, int k = 0) const {
        return (static_cast<std::size_t>(i) * nx + j) * ny + k;
    }
    /// Quadrature weight of node (i,j,k): tensor trapezoid with half weight
    /// on the diagonal (the wedge covers half the node's cell there), zero
    /// off-wedge.
    double weight(int i, int j, int k = 0) const;
};

struct GridSpec {
    double delta = 0.05;
    int time_steps = 16;
};

WedgeGrid build_grid(const GridSpec& spec, const DiffusionModel& model, double T,
                     double eps_trunc);

/// Values of a density (or series term) on every positive-time slice of a
/// grid.  Slice 0 (t = 0) is left empty: the initial condition is a surface
/// measure, not a function.
struct DensityField {
    enum class Tag { SeriesTerm, PartialSum, McEstimate, ClosedForm };
    std::shared_ptr<const WedgeGrid> grid;
    Tag tag = Tag::ClosedForm;
    int term_index = -1; // series term number when applicable
    std::vector<std::vector<double>> slices; // [0] empty, [1..N] populated

    const std::vector<double>& slice(int i) const { return slices[i]; }
    double value(int s, int i, int j, int k = 0) const { return slices[s][grid->idx(i, j, k)]; }

    /// Grid-quadrature integral of the slice (signed).
    double integral(int s) const;
    /// Grid-quadrature L1 norm of the slice.
    double l1_norm(int s) const;
    /// Clipped-to-nonnegative copy, renormalized to the original mass.
    DensityField clipped_renormalized() const;
};

/// Mixture of shifted wedge kernels: the zeroth Picard term p0.
/// Identity diffusion only; general d = 1 models go through the Lamperti
/// route first.
DensityField assemble_p0(const DiffusionModel& model, std::shared_ptr<const WedgeGrid> grid);

/// p0 and its b-cumulative at an arbitrary time (closed forms), used by the
/// first Picard step where the time dependence is steepest.
double p0_point(const DiffusionModel& model, double m, const double* x, int d, double t);
double p0_cumulative(const DiffusionModel& model, double m, const double* x, int d, double t);

} // namespace runmax::model
