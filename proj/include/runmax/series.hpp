#pragma once

#include "runmax/model.hpp"

#include <memory>
#include <vector>

namespace runmax::series {

/// Operator component index: 0 is the running-max slot (k = m), 1..d are the
/// space slots.  B^m = B^1.
enum class Comp : int { m = 0, x1 = 1, x2 = 2 };

/// One slice of I^{k,alpha}[p] at time grid index t_index (positive sign,
/// no summation).  History slices of p strictly before t_index must be
/// populated.
std::vector<double> apply_operator_alpha(Comp k, const model::DensityField& p,
                                         const model::DiffusionModel& m, int t_index,
                                         int threads = 0);
std::vector<double> apply_operator_beta(Comp k, const model::DensityField& p,
                                        const model::DiffusionModel& m, int t_index,
                                        int threads = 0);

/// Full Picard step p_{n+1} = -sum_{k,j} I^{k,j}[p_n] on all slices.
model::DensityField picard_step(const model::DensityField& p_n, const model::DiffusionModel& m,
                                int threads = 0);

struct TruncationReport {
    double fitted_C = 0.0;        // continuity constant fitted from the n=1 term
    int n_terms = 0;
    double next_term_bound = 0.0; // Gamma-rate bound on ||p_{n+1}(.;T)||_1
    double tail_bound = 0.0;      // sum of the bounds over all dropped terms
    std::vector<double> term_bounds; // bound on ||p_n(.;T)||_1, n = 0..n_terms
};

struct SeriesSolution {
    std::shared_ptr<const model::WedgeGrid> grid;
    std::vector<model::DensityField> terms; // p_0 .. p_n
    model::DensityField partial_sum;        // P_n, node-wise sum of terms
    std::vector<std::vector<double>> term_norms; // [n][slice] L1 norms
    TruncationReport report;
};

SeriesSolution solve_series(const model::DiffusionModel& m,
                            std::shared_ptr<const model::WedgeGrid> grid, int n_terms,
                            int threads = 0);

/// Direct Volterra time-march of p_V = p_0 + I(p_V); agrees with the series
/// partial sum within the truncation bound.
model::DensityField solve_volterra(const model::DiffusionModel& m,
                                   std::shared_ptr<const model::WedgeGrid> grid,
                                   int threads = 0);

/// Gamma-rate bound on ||p_n(.;t)||_1 given the fitted constant.
double term_norm_bound(double fitted_C, double p0_norm, int d, int n, double t);

} // namespace runmax::series
