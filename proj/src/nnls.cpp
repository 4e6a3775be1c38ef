#include "tslr/nnls.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tslr/error.hpp"

namespace tslr {

namespace {

// Cholesky factor R (upper triangular, row-major growth) of Q restricted to
// an ordered passive set, updated incrementally as variables enter and leave.
class PassiveCholesky {
public:
    explicit PassiveCholesky(const MatrixXd& Q) : Q_(Q) {
        int d = static_cast<int>(Q.rows());
        R_ = MatrixXd::Zero(d, d);
        members_.reserve(d);
    }

    const std::vector<int>& members() const { return members_; }
    int size() const { return static_cast<int>(members_.size()); }

    // Try to append variable j. Returns false when the new column is
    // numerically dependent on the current passive block. Throws on
    // negative curvature.
    bool push(int j) {
        int p = size();
        VectorXd col(p);
        for (int i = 0; i < p; ++i) col[i] = Q_(members_[i], j);
        VectorXd w = R_.topLeftCorner(p, p)
                         .transpose()
                         .triangularView<Eigen::Lower>()
                         .solve(col);
        double qjj = Q_(j, j);
        double d2 = qjj - w.squaredNorm();
        // the cancellation above carries absolute error ~eps*scale; anything
        // clearly beyond that is trustworthy curvature even on badly scaled
        // problems (large smoothing weights)
        double noise = 64.0 * std::numeric_limits<double>::epsilon() *
                       std::max(1.0, std::abs(qjj) + w.squaredNorm());
        if (d2 < -noise)
            throw Error(ErrorCode::ill_posed_subproblem, "negative curvature in passive block");
        if (d2 <= noise) return false;  // dependent
        R_.block(0, p, p, 1) = w;
        R_(p, p) = std::sqrt(d2);
        members_.push_back(j);
        return true;
    }

    // Remove the k-th member; re-triangularize the trailing block with
    // Givens rotations.
    void remove(int k) {
        int p = size();
        for (int c = k; c + 1 < p; ++c) R_.col(c).head(p) = R_.col(c + 1).head(p);
        members_.erase(members_.begin() + k);
        --p;
        for (int i = k; i < p; ++i) {
            double a = R_(i, i), b = R_(i + 1, i);
            double r = std::hypot(a, b);
            if (r == 0.0) continue;
            double c = a / r, s = b / r;
            for (int col = i; col < p; ++col) {
                double t1 = R_(i, col), t2 = R_(i + 1, col);
                R_(i, col) = c * t1 + s * t2;
                R_(i + 1, col) = -s * t1 + c * t2;
            }
        }
        R_.row(p).head(p + 1).setZero();
    }

    // Solve Q_PP z = rhs with one step of iterative refinement; rhs indexed
    // by passive position.
    VectorXd solve(const VectorXd& rhs) const {
        int p = size();
        VectorXd z = backsolve(rhs);
        // refinement guards accuracy when Q is badly scaled (large lambda)
        VectorXd r = rhs;
        for (int i = 0; i < p; ++i)
            for (int l = 0; l < p; ++l) r[i] -= Q_(members_[i], members_[l]) * z[l];
        z += backsolve(r);
        return z;
    }

private:
    VectorXd backsolve(const VectorXd& rhs) const {
        int p = size();
        VectorXd y = R_.topLeftCorner(p, p)
                         .transpose()
                         .triangularView<Eigen::Lower>()
                         .solve(rhs);
        return R_.topLeftCorner(p, p).triangularView<Eigen::Upper>().solve(y);
    }

    const MatrixXd& Q_;
    MatrixXd R_;
    std::vector<int> members_;
};

// The gradient Qx - b carries floating-point noise of order eps*|Q|*|x|, so
// the working tolerance is the requested tol plus that noise floor. On O(1)
// problems this reduces to tol itself.
double effective_tol(double tol, double b_inf, double q_inf, double x_inf) {
    return tol * (1.0 + b_inf) +
           64.0 * std::numeric_limits<double>::epsilon() * q_inf * std::max(1.0, x_inf);
}

} // namespace

double nnls_kkt_violation(const MatrixXd& Q, const VectorXd& b, const VectorXd& x,
                          double tol) {
    VectorXd g = Q * x - b;
    double eff = effective_tol(tol, b.lpNorm<Eigen::Infinity>(),
                               Q.cwiseAbs().rowwise().sum().maxCoeff(),
                               x.size() ? x.lpNorm<Eigen::Infinity>() : 0.0);
    double viol = 0.0;
    for (int i = 0; i < x.size(); ++i) {
        viol = std::max(viol, -x[i] / eff);
        viol = std::max(viol, -g[i] / eff);
    }
    viol = std::max(viol, x.dot(g) / (eff * (1.0 + std::abs(b.dot(x)))));
    return viol;
}

VectorXd nnls_solve(const MatrixXd& Q, const VectorXd& b, const NnlsOptions& opts) {
    const int d = static_cast<int>(Q.rows());
    if (d == 0) return VectorXd();
    if (Q.cols() != d || b.size() != d)
        throw Error(ErrorCode::shape_mismatch, "nnls dimensions disagree");

    const double q_inf = Q.cwiseAbs().rowwise().sum().maxCoeff();
    const double b_inf = b.lpNorm<Eigen::Infinity>();
    const int max_pivots = opts.max_pivots > 0 ? opts.max_pivots : 50 * d + 100;

    VectorXd x = VectorXd::Zero(d);
    PassiveCholesky chol(Q);
    std::vector<char> rejected(d, 0);  // dependent columns, cleared on any removal

    // Warm start: admit the support of the previous solution, then run the
    // feasibility inner loop below before looking at dual values.
    if (opts.warm && opts.warm->size() == d) {
        for (int j = 0; j < d; ++j)
            if ((*opts.warm)[j] > 0.0) chol.push(j);
    }

    int pivots = 0;
    bool need_inner = chol.size() > 0;
    while (pivots++ < max_pivots) {
        if (!need_inner) {
            // dual step: pick the most negative gradient among free variables
            VectorXd g = Q * x - b;
            int best = -1;
            double best_w = effective_tol(opts.tol, b_inf, q_inf, x.lpNorm<Eigen::Infinity>());
            std::vector<char> in_passive(d, 0);
            for (int m : chol.members()) in_passive[m] = 1;
            for (int j = 0; j < d; ++j) {
                if (in_passive[j] || rejected[j]) continue;
                double w = -g[j];
                if (w > best_w) {
                    best_w = w;
                    best = j;
                }
            }
            if (best < 0) break;  // KKT satisfied
            if (!chol.push(best)) {
                rejected[best] = 1;
                continue;
            }
        }
        need_inner = false;

        // inner loop: restore primal feasibility on the passive set
        while (true) {
            int p = chol.size();
            if (p == 0) break;
            VectorXd rhs(p);
            for (int i = 0; i < p; ++i) rhs[i] = b[chol.members()[i]];
            VectorXd z = chol.solve(rhs);
            if ((z.array() > 0.0).all()) {
                x.setZero();
                for (int i = 0; i < p; ++i) x[chol.members()[i]] = z[i];
                std::fill(rejected.begin(), rejected.end(), 0);
                break;
            }
            // step from x toward z until the first passive variable hits zero;
            // ties break toward the lowest variable index
            double alpha = std::numeric_limits<double>::infinity();
            int blocker = -1;
            for (int i = 0; i < p; ++i) {
                int j = chol.members()[i];
                if (z[i] <= 0.0) {
                    double denom = x[j] - z[i];
                    double t = denom > 0.0 ? x[j] / denom : 0.0;
                    if (t < alpha - 1e-15 ||
                        (t < alpha + 1e-15 && (blocker < 0 || j < chol.members()[blocker]))) {
                        alpha = std::min(alpha, t);
                        blocker = i;
                    }
                }
            }
            for (int i = 0; i < p; ++i) {
                int j = chol.members()[i];
                x[j] += alpha * (z[i] - x[j]);
                if (x[j] < 0.0) x[j] = 0.0;
            }
            x[chol.members()[blocker]] = 0.0;
            chol.remove(blocker);
            std::fill(rejected.begin(), rejected.end(), 0);
        }
    }
    return x;
}

VectorXd BandedMatrix::multiply(const VectorXd& x) const {
    VectorXd y = VectorXd::Zero(dim_);
    for (int i = 0; i < dim_; ++i) {
        double acc = band_(0, i) * x[i];
        for (int k = 1; k <= hb_ && i + k < dim_; ++k) {
            acc += band_(k, i) * x[i + k];
            y[i + k] += band_(k, i) * x[i];
        }
        y[i] += acc;
    }
    return y;
}

MatrixXd BandedMatrix::to_dense() const {
    MatrixXd A = MatrixXd::Zero(dim_, dim_);
    for (int i = 0; i < dim_; ++i)
        for (int k = 0; k <= hb_ && i + k < dim_; ++k) {
            A(i, i + k) = band_(k, i);
            A(i + k, i) = band_(k, i);
        }
    return A;
}

namespace {

// Cholesky of a banded symmetric matrix restricted to an index subset.
// Restriction cannot grow the bandwidth, so the factor stays banded.
class BandedSubsetCholesky {
public:
    // idx must be sorted ascending
    BandedSubsetCholesky(const BandedMatrix& Q, const std::vector<int>& idx)
        : n_(static_cast<int>(idx.size())), hb_(Q.half_bandwidth()) {
        L_ = MatrixXd::Zero(hb_ + 1, n_);
        for (int jc = 0; jc < n_; ++jc)
            for (int ir = jc; ir <= std::min(n_ - 1, jc + hb_); ++ir) {
                if (idx[ir] - idx[jc] > hb_) break;
                L_(ir - jc, jc) = Q(idx[ir], idx[jc]);
            }
        for (int j = 0; j < n_; ++j) {
            double diag = L_(0, j);
            if (!(diag > 0.0))
                throw Error(ErrorCode::ill_posed_subproblem,
                            "banded subproblem not positive definite");
            diag = std::sqrt(diag);
            L_(0, j) = diag;
            int last = std::min(n_ - 1, j + hb_);
            for (int i = j + 1; i <= last; ++i) L_(i - j, j) /= diag;
            for (int k = j + 1; k <= last; ++k) {
                double ljk = L_(k - j, j);
                if (ljk == 0.0) continue;
                for (int i = k; i <= last; ++i) L_(i - k, k) -= L_(i - j, j) * ljk;
            }
        }
    }

    VectorXd solve(VectorXd rhs) const {
        for (int j = 0; j < n_; ++j) {
            rhs[j] /= L_(0, j);
            int last = std::min(n_ - 1, j + hb_);
            for (int i = j + 1; i <= last; ++i) rhs[i] -= L_(i - j, j) * rhs[j];
        }
        for (int j = n_ - 1; j >= 0; --j) {
            int last = std::min(n_ - 1, j + hb_);
            for (int i = j + 1; i <= last; ++i) rhs[j] -= L_(i - j, j) * rhs[i];
            rhs[j] /= L_(0, j);
        }
        return rhs;
    }

private:
    int n_;
    int hb_;
    MatrixXd L_;  // L(i-j, j) holds the factor entry (i, j)
};

double quad_value(const BandedMatrix& Q, const VectorXd& b, const VectorXd& x) {
    return 0.5 * x.dot(Q.multiply(x)) - b.dot(x);
}

} // namespace

double nnls_kkt_violation(const BandedMatrix& Q, const VectorXd& b, const VectorXd& x,
                          double tol) {
    VectorXd g = Q.multiply(x) - b;
    double q_inf = 0.0;
    for (int i = 0; i < Q.dim(); ++i) {
        double row_sum = 0.0;
        for (int k = -Q.half_bandwidth(); k <= Q.half_bandwidth(); ++k) {
            int j = i + k;
            if (j < 0 || j >= Q.dim()) continue;
            row_sum += std::abs(Q(i, j));
        }
        q_inf = std::max(q_inf, row_sum);
    }
    double eff = effective_tol(tol, b.lpNorm<Eigen::Infinity>(), q_inf,
                               x.size() ? x.lpNorm<Eigen::Infinity>() : 0.0);
    double viol = 0.0;
    for (int i = 0; i < x.size(); ++i) {
        viol = std::max(viol, -x[i] / eff);
        viol = std::max(viol, -g[i] / eff);
    }
    viol = std::max(viol, x.dot(g) / (eff * (1.0 + std::abs(b.dot(x)))));
    return viol;
}

VectorXd nnls_solve_banded(const BandedMatrix& Q, const VectorXd& b,
                           const NnlsOptions& opts) {
    const int d = Q.dim();
    if (b.size() != d) throw Error(ErrorCode::shape_mismatch, "nnls dimensions disagree");

    VectorXd x = VectorXd::Zero(d);
    if (opts.warm && opts.warm->size() == d) x = opts.warm->cwiseMax(0.0);

    const int max_iter = opts.max_pivots > 0 ? opts.max_pivots : 200;
    double fx = quad_value(Q, b, x);

    for (int it = 0; it < max_iter; ++it) {
        if (nnls_kkt_violation(Q, b, x, opts.tol) <= 1.0) break;

        VectorXd g = Q.multiply(x) - b;
        double xscale = std::max(1.0, x.lpNorm<Eigen::Infinity>());
        std::vector<int> free_idx;
        free_idx.reserve(d);
        for (int i = 0; i < d; ++i)
            if (x[i] > 1e-12 * xscale || g[i] < 0.0) free_idx.push_back(i);
        if (free_idx.empty()) break;

        BandedSubsetCholesky chol(Q, free_idx);
        VectorXd rhs(static_cast<int>(free_idx.size()));
        for (std::size_t i = 0; i < free_idx.size(); ++i) rhs[static_cast<int>(i)] = -g[free_idx[i]];
        VectorXd dn = chol.solve(rhs);

        VectorXd dir = VectorXd::Zero(d);
        for (std::size_t i = 0; i < free_idx.size(); ++i) dir[free_idx[i]] = dn[static_cast<int>(i)];

        // projected backtracking on the quadratic
        double alpha = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            VectorXd cand = (x + alpha * dir).cwiseMax(0.0);
            double fc = quad_value(Q, b, cand);
            if (fc <= fx + 1e-4 * g.dot(cand - x) || fc < fx) {
                x = cand;
                fx = fc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) break;  // stalled at numerical precision
    }
    return x;
}

} // namespace tslr
