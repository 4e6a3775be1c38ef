#include "tslr/solver.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <thread>

#include "tslr/rng.hpp"

namespace tslr {

VectorXd second_difference(const VectorXd& c) {
    const int m = static_cast<int>(c.size());
    if (m < 3) return VectorXd();
    VectorXd out(m - 2);
    for (int k = 0; k + 2 < m; ++k) out[k] = c[k + 2] - 2.0 * c[k + 1] + c[k];
    return out;
}

MatrixXd second_difference_matrix(int m) {
    if (m < 3) return MatrixXd::Zero(0, std::max(m, 0));
    MatrixXd D = MatrixXd::Zero(m - 2, m);
    for (int k = 0; k + 2 < m; ++k) {
        D(k, k) = 1.0;
        D(k, k + 1) = -2.0;
        D(k, k + 2) = 1.0;
    }
    return D;
}

namespace {

// Pentadiagonal D'D entry for a length-m compacted sequence; |t-s| <= 2.
double dtd_entry(int m, int t, int s) {
    if (m < 3) return 0.0;
    int k = std::abs(t - s);
    if (k > 2) return 0.0;
    if (k == 2) return 1.0;
    auto in_range = [m](int row) { return row >= 0 && row <= m - 3; };
    if (k == 1) {
        int lo = std::min(t, s);
        double v = 0.0;
        // rows of D touching both columns lo and lo+1
        for (int row = lo - 1; row <= lo; ++row) {
            if (!in_range(row)) continue;
            double a = lo - row == 0 ? 1.0 : (lo - row == 1 ? -2.0 : 1.0);
            double b = lo + 1 - row == 0 ? 1.0 : (lo + 1 - row == 1 ? -2.0 : 1.0);
            v += a * b;
        }
        return v;
    }
    double v = 0.0;
    for (int row = t - 2; row <= t; ++row) {
        if (!in_range(row)) continue;
        double a = t - row == 0 ? 1.0 : (t - row == 1 ? -2.0 : 1.0);
        v += a * a;
    }
    return v;
}

void run_parallel(int jobs, int threads, const std::function<void(int)>& work) {
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, jobs));
    if (threads == 1) {
        for (int i = 0; i < jobs; ++i) work(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    std::atomic<int> next{0};
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < jobs; i = next.fetch_add(1)) work(i);
        });
    for (auto& th : pool) th.join();
}

} // namespace

CoefficientSet update_coefficients(const SeriesMatrix& y, const BasisSet& basis,
                                   double lambda, const FitOptions& opts,
                                   const CoefficientSet* warm) {
    y.validate();
    if (basis.row_len() != y.row_len)
        throw Error(ErrorCode::shape_mismatch, "basis length does not match series");
    const int r = basis.rank();
    const int m = y.observed_count();
    const MatrixXd& F = basis.functions;
    const MatrixXd FtF = F.transpose() * F;

    // Stacked unknowns in day-major order: x[t*r + j] = C_j(day t).
    // Fit term contributes FtF per day block; smoothing couples days within
    // one component through D'D. QP written as 1/2 x'Qx - b'x with Q = 2H.
    const int dim = r * m;
    const int hb = 2 * r;

    BandedMatrix Q(dim, hb);
    VectorXd b(dim);
    for (int t = 0; t < m; ++t) {
        VectorXd fy = F.transpose() * y.values.row(t).transpose();
        for (int j = 0; j < r; ++j) {
            b[t * r + j] = 2.0 * fy[j];
            for (int k = j; k < r; ++k) Q.add(t * r + j, t * r + k, 2.0 * FtF(j, k));
        }
    }
    if (lambda > 0.0 && m >= 3) {
        for (int t = 0; t < m; ++t)
            for (int s = t; s <= std::min(m - 1, t + 2); ++s) {
                double v = dtd_entry(m, t, s);
                if (v == 0.0) continue;
                for (int j = 0; j < r; ++j) Q.add(t * r + j, s * r + j, 2.0 * lambda * v);
            }
    }

    VectorXd warm_x;
    NnlsOptions nopts;
    if (warm && warm->rank() == r && warm->observed_count() == m) {
        warm_x.resize(dim);
        for (int t = 0; t < m; ++t)
            for (int j = 0; j < r; ++j) warm_x[t * r + j] = warm->values(t, j);
        nopts.warm = &warm_x;
    }

    VectorXd x;
    if (dim <= opts.qp_dense_cap) {
        x = nnls_solve(Q.to_dense(), b, nopts);
    } else {
        nopts.max_pivots = 500;
        x = nnls_solve_banded(Q, b, nopts);
    }

    CoefficientSet c;
    c.subject_id = y.subject_id;
    c.days = y.days;
    c.values.resize(m, r);
    for (int t = 0; t < m; ++t)
        for (int j = 0; j < r; ++j) c.values(t, j) = x[t * r + j];
    return c;
}

BasisSet update_basis(const Dataset& d, const std::vector<CoefficientSet>& coeffs,
                      const BasisSet* warm) {
    if (d.series.empty()) throw Error(ErrorCode::empty_dataset, "no subjects");
    if (coeffs.size() != d.series.size())
        throw Error(ErrorCode::shape_mismatch, "coefficients misaligned with dataset");
    const int l = d.row_len();
    const int r = coeffs.front().rank();

    // Normal equations share one Gram matrix across grid columns.
    MatrixXd G = MatrixXd::Zero(r, r);
    MatrixXd B = MatrixXd::Zero(l, r);  // per-column right-hand sides
    for (std::size_t n = 0; n < d.series.size(); ++n) {
        const auto& y = d.series[n];
        const auto& c = coeffs[n];
        if (c.observed_count() != y.observed_count())
            throw Error(ErrorCode::shape_mismatch, "coefficient days misaligned");
        G.noalias() += c.values.transpose() * c.values;
        B.noalias() += y.values.transpose() * c.values;
    }

    const MatrixXd Q = 2.0 * G;
    MatrixXd F(l, r);
    NnlsOptions nopts;
    VectorXd warm_col;
    for (int i = 0; i < l; ++i) {
        VectorXd bi = 2.0 * B.row(i).transpose();
        if (warm && warm->rank() == r) {
            warm_col = warm->functions.row(i).transpose();
            nopts.warm = &warm_col;
        }
        F.row(i) = nnls_solve(Q, bi, nopts).transpose();
    }

    std::vector<int> collapsed;
    for (int j = 0; j < r; ++j)
        if (F.col(j).norm() <= 1e-12) collapsed.push_back(j);

    if (!collapsed.empty()) {
        // reseed from the observed row with the largest residual under the
        // pre-normalization reconstruction, which pairs with the coefficients
        double best = -1.0;
        VectorXd best_row;
        for (std::size_t n = 0; n < d.series.size(); ++n) {
            const auto& y = d.series[n];
            const auto& c = coeffs[n];
            for (int t = 0; t < y.observed_count(); ++t) {
                double res =
                    (y.values.row(t).transpose() - F * c.values.row(t).transpose()).squaredNorm();
                if (res > best) {
                    best = res;
                    best_row = y.values.row(t).transpose();
                }
            }
        }
        double rn = best_row.size() ? best_row.norm() : 0.0;
        if (rn <= 0.0)
            throw Error(ErrorCode::degenerate_component,
                        "cannot reseed component from all-zero data");
        for (int j : collapsed) F.col(j) = best_row / rn;
    }

    BasisSet out;
    out.functions = F;
    for (int j = 0; j < r; ++j) out.functions.col(j) /= out.functions.col(j).norm();
    return out;
}

double objective(const Dataset& d, const FactorModel& m) {
    if (m.coeffs.size() != d.series.size())
        throw Error(ErrorCode::shape_mismatch, "model misaligned with dataset");
    if (m.basis.row_len() != d.row_len())
        throw Error(ErrorCode::shape_mismatch, "basis length does not match dataset");
    const MatrixXd& F = m.basis.functions;
    double fit = 0.0, smooth = 0.0;
    for (std::size_t n = 0; n < d.series.size(); ++n) {
        const auto& y = d.series[n];
        const auto& c = m.coeffs[n];
        if (c.observed_count() != y.observed_count() || c.days != y.days)
            throw Error(ErrorCode::shape_mismatch, "coefficient days misaligned");
        fit += (y.values - c.values * F.transpose()).squaredNorm();
        for (int j = 0; j < c.rank(); ++j) smooth += second_difference(c.values.col(j)).squaredNorm();
    }
    return fit + m.lambda * smooth;
}

namespace {

MatrixXd stack_observed_rows(const Dataset& d) {
    int total = 0;
    for (const auto& s : d.series) total += s.observed_count();
    MatrixXd stacked(total, d.row_len());
    int at = 0;
    for (const auto& s : d.series) {
        stacked.middleRows(at, s.observed_count()) = s.values;
        at += s.observed_count();
    }
    return stacked;
}

} // namespace

BasisSet init_basis(const Dataset& d, int r, std::uint64_t seed, int iterations) {
    if (d.series.empty()) throw Error(ErrorCode::empty_dataset, "no subjects");
    d.validate();
    const int l = d.row_len();
    MatrixXd M = stack_observed_rows(d);
    const int rows = static_cast<int>(M.rows());
    if (r < 1 || r > l || r > rows)
        throw Error(ErrorCode::rank_exceeds_data, "rank exceeds stacked data dimensions");

    const double floor = 1e-9;
    Rng rng(seed);
    MatrixXd W(rows, r), H(r, l);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < r; ++j) W(i, j) = rng.uniform() + floor;
    for (int j = 0; j < r; ++j)
        for (int i = 0; i < l; ++i) H(j, i) = rng.uniform() + floor;

    for (int it = 0; it < iterations; ++it) {
        MatrixXd WtM = W.transpose() * M;
        MatrixXd WtWH = (W.transpose() * W) * H;
        H.array() *= WtM.array() / (WtWH.array() + floor);
        MatrixXd MHt = M * H.transpose();
        MatrixXd WHHt = W * (H * H.transpose());
        W.array() *= MHt.array() / (WHHt.array() + floor);
    }

    BasisSet basis;
    basis.functions.resize(l, r);
    for (int j = 0; j < r; ++j) {
        VectorXd f = H.row(j).transpose();
        double norm = f.norm();
        if (norm <= 0.0) f = VectorXd::Constant(l, 1.0 / std::sqrt(double(l)));
        else f /= norm;
        basis.functions.col(j) = f;
    }
    return basis;
}

FactorModel fit(const Dataset& d, int r, double lambda, const FitOptions& opts) {
    if (d.series.empty()) throw Error(ErrorCode::empty_dataset, "no subjects");
    d.validate();
    if (r < 1) throw Error(ErrorCode::rank_exceeds_data, "rank must be >= 1");
    if (lambda < 0) throw Error(ErrorCode::invalid_config, "lambda must be >= 0");

    FactorModel model;
    model.lambda = lambda;
    model.basis = init_basis(d, r, opts.seed, opts.nmf_init_iterations);
    model.coeffs.resize(d.series.size());

    const int n = static_cast<int>(d.series.size());
    double prev = std::numeric_limits<double>::infinity();
    for (int outer = 0; outer < opts.max_outer; ++outer) {
        BasisSet current = model.basis;
        run_parallel(n, opts.threads, [&](int i) {
            const CoefficientSet* warm =
                model.coeffs[i].values.size() ? &model.coeffs[i] : nullptr;
            model.coeffs[i] = update_coefficients(d.series[i], current, lambda, opts, warm);
        });
        model.basis = update_basis(d, model.coeffs, &current);

        double obj = objective(d, model);
        model.objective_trace.push_back(obj);
        model.iterations = outer + 1;
        if (std::isfinite(prev)) {
            double rel = (prev - obj) / std::max(prev, 1e-30);
            if (rel < opts.rel_tol) {
                model.converged = true;
                break;
            }
        }
        prev = obj;
    }
    return model;
}

std::vector<double> singular_spectrum(const Dataset& d, int k) {
    if (d.series.empty()) throw Error(ErrorCode::empty_dataset, "no subjects");
    MatrixXd M = stack_observed_rows(d);
    const int maxk = static_cast<int>(std::min(M.rows(), M.cols()));
    if (k < 1 || k > maxk)
        throw Error(ErrorCode::rank_exceeds_data, "k exceeds stacked data dimensions");

    // QR first: singular values of the triangular factor equal those of the
    // stack, and the small SVD is cheap and accurate.
    VectorXd sv;
    if (M.rows() > M.cols()) {
        Eigen::HouseholderQR<MatrixXd> qr(M);
        MatrixXd R = qr.matrixQR()
                         .topRows(M.cols())
                         .triangularView<Eigen::Upper>();
        sv = Eigen::JacobiSVD<MatrixXd>(R).singularValues();
    } else {
        sv = Eigen::JacobiSVD<MatrixXd>(M).singularValues();
    }
    std::vector<double> out(sv.data(), sv.data() + k);
    return out;
}

} // namespace tslr
