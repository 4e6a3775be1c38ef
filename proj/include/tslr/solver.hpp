#ifndef TSLR_SOLVER_HPP
#define TSLR_SOLVER_HPP

#include <vector>

#include "tslr/nnls.hpp"
#include "tslr/types.hpp"

namespace tslr {

// Interior second-order difference: out[k] = c[k+2] - 2 c[k+1] + c[k].
// Empty result for inputs shorter than 3.
VectorXd second_difference(const VectorXd& c);

// Dense (m-2) x m stencil matrix, the oracle form of second_difference.
MatrixXd second_difference_matrix(int m);

struct FitOptions {
    int max_outer = 200;
    double rel_tol = 1e-5;
    std::uint64_t seed = 0;
    int nmf_init_iterations = 200;
    // Coefficient subproblems up to this many unknowns use the dense
    // active-set engine; larger ones the banded projected-Newton engine.
    int qp_dense_cap = 1000;
    int threads = 0;  // 0 = hardware concurrency
};

// Exact minimizer of one subject's convex coefficient subproblem: the fit
// term over observed rows plus lambda * sum_j |D C_j|^2 with D applied to
// the compacted observed sequence. One stacked nonnegative QP over all
// r * |T_n| unknowns; smoothing couples days within a component, the fit
// term couples components within a day.
CoefficientSet update_coefficients(const SeriesMatrix& y, const BasisSet& basis,
                                   double lambda, const FitOptions& opts = {},
                                   const CoefficientSet* warm = nullptr);

// Global fit-term minimizer over F >= 0 (decoupled per grid column), then
// each function rescaled to unit norm. A component that collapses to zero
// is reseeded from the observed row with the largest residual.
BasisSet update_basis(const Dataset& d, const std::vector<CoefficientSet>& coeffs,
                      const BasisSet* warm = nullptr);

// Value of the fitting objective: squared reconstruction error over observed
// rows plus lambda times the second-difference smoothness penalty.
double objective(const Dataset& d, const FactorModel& m);

// NMF initialization: multiplicative updates on the stacked observed rows,
// fixed iteration count, seeded uniform-positive start, returned basis
// normalized to unit columns.
BasisSet init_basis(const Dataset& d, int r, std::uint64_t seed,
                    int iterations = 200);

// Alternating minimization of the full model.
FactorModel fit(const Dataset& d, int r, double lambda, const FitOptions& opts = {});

// Top-k singular values of the stacked observed-rows matrix, descending.
std::vector<double> singular_spectrum(const Dataset& d, int k);

} // namespace tslr

#endif
