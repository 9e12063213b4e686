#pragma once

#include "runmax/model.hpp"

#include <utility>

namespace runmax::lamperti {

struct LampertiError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Strictly increasing change of coordinates phi with phi(0) = 0 and
/// phi' = 1/A, tabulated densely with local cubic interpolation.
class LampertiMap {
  public:
    LampertiMap(expr::CoeffExpr A, double lo, double hi, double tol);

    double forward(double x) const;     // phi(x)
    double inverse(double y) const;     // phi^{-1}(y)
    double A_at(double x) const;
    double Ap_at(double x) const;

    double lo() const { return lo_; }
    double hi() const { return hi_; }
    double y_lo() const { return table_.front(); }
    double y_hi() const { return table_.back(); }

  private:
    expr::CoeffExpr A_, Ap_;
    double lo_, hi_, step_;
    std::vector<double> table_; // phi at the nodes lo + i*step
};

LampertiMap build_map(const expr::CoeffExpr& A, double lo, double hi, double tol = 1e-10);

/// Unit-diffusion model for Y = phi(X): drift (B/A)(phi^{-1}(y)) -
/// (1/2) A'(phi^{-1}(y)), initial points mapped through phi.  The inverse
/// map has no closed expression, so the drift is installed as a numeric
/// override on the returned model; boundedness of the new drift and its
/// derivative is checked by sampling.
model::DiffusionModel transform_model(const model::DiffusionModel& m, const LampertiMap& map);

/// p_V(b, a; t) = p_Y(phi(b), phi(a); t) / (A(b) A(a)): evaluate the
/// Y-density bilinearly at mapped coordinates of the X-grid nodes.
model::DensityField pullback_density(const model::DensityField& pY, const LampertiMap& map,
                                     std::shared_ptr<const model::WedgeGrid> x_grid);

} // namespace runmax::lamperti
