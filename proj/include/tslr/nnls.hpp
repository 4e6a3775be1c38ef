#ifndef TSLR_NNLS_HPP
#define TSLR_NNLS_HPP

#include <Eigen/Dense>
#include <vector>

namespace tslr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct NnlsOptions {
    double tol = 1e-8;       // KKT tolerance, scaled by the problem magnitude
    int max_pivots = 0;      // 0 = 50*d
    const VectorXd* warm = nullptr;  // optional warm start (clipped to >= 0)
};

// Minimize 1/2 x'Qx - b'x subject to x >= 0 for symmetric positive
// (semi)definite Q, by primal active-set pivoting with an incrementally
// updated Cholesky factor of the passive block. Ties in pivot selection
// break toward the lowest index. Throws ill-posed-subproblem on negative
// curvature along a working direction.
VectorXd nnls_solve(const MatrixXd& Q, const VectorXd& b, const NnlsOptions& opts = {});

// KKT residual used as the common exit test by both engines:
//   x >= 0,  g = Qx - b >= -tol*s,  x'g <= tol*s*(1 + |b'x|)
// with s = 1 + |b|_inf + |Q|_inf * |x|_inf the natural problem scale.
// Returns the largest violation relative to tol*s (<= 1 means satisfied).
double nnls_kkt_violation(const MatrixXd& Q, const VectorXd& b, const VectorXd& x,
                          double tol = 1e-8);

// Symmetric banded matrix with half-bandwidth hb, stored by diagonals:
// band(k, i) = A(i, i+k) for k = 0..hb. Used for the stacked coefficient
// subproblem whose Hessian couples only nearby unknowns.
class BandedMatrix {
public:
    BandedMatrix(int dim, int half_bandwidth)
        : dim_(dim), hb_(half_bandwidth), band_(MatrixXd::Zero(half_bandwidth + 1, dim)) {}

    int dim() const { return dim_; }
    int half_bandwidth() const { return hb_; }

    double operator()(int i, int j) const {
        int k = j - i;
        if (k < 0) { std::swap(i, j); k = -k; }
        return k > hb_ ? 0.0 : band_(k, i);
    }

    void add(int i, int j, double v) {
        int k = j - i;
        if (k < 0) { std::swap(i, j); k = -k; }
        band_(k, i) += v;
    }

    VectorXd multiply(const VectorXd& x) const;

    // dense copy, for small problems and tests
    MatrixXd to_dense() const;

private:
    int dim_;
    int hb_;
    MatrixXd band_;
};

// Same minimization contract and KKT exit test as nnls_solve, for large
// banded Q: projected Newton with Armijo backtracking; the free-set Newton
// system is solved by banded Cholesky. Intended for problems past the dense
// active-set size cap.
VectorXd nnls_solve_banded(const BandedMatrix& Q, const VectorXd& b,
                           const NnlsOptions& opts = {});

double nnls_kkt_violation(const BandedMatrix& Q, const VectorXd& b, const VectorXd& x,
                          double tol = 1e-8);

} // namespace tslr

#endif
