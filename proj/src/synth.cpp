#include "tslr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "tslr/rng.hpp"

namespace tslr {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// raised-cosine bump over [lo, hi) within a length-l grid
VectorXd bump(int l, int lo, int hi) {
    VectorXd f = VectorXd::Zero(l);
    const double width = hi - lo;
    for (int i = lo; i < hi; ++i) {
        double u = (i - lo + 0.5) / width;
        f[i] = 0.5 * (1.0 - std::cos(kTwoPi * u));
    }
    return f;
}

std::string subject_name(int n) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%03d", n);
    return buf;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

GroundTruth generate(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const int l = spec.row_len, r = spec.rank, T = spec.periods, N = spec.subjects;

    // disjoint support blocks with a one-sample margin between them
    const int block = l / r;
    if (!spec.overlapping_supports && block < spec.min_support)
        throw Error(ErrorCode::infeasible_spec,
                    "cannot place " + std::to_string(r) + " separated bumps in " +
                        std::to_string(l) + " samples");

    GroundTruth gt;
    gt.basis.functions.resize(l, r);
    for (int j = 0; j < r; ++j) {
        int lo, hi;
        if (spec.overlapping_supports) {
            int width = spec.min_support +
                        static_cast<int>(rng.below(std::max(1, l - spec.min_support)));
            lo = static_cast<int>(rng.below(std::max(1, l - width)));
            hi = std::min(l, lo + width);
        } else {
            lo = j * block;
            hi = lo + block - 1;  // margin keeps supports disjoint
            if (j == r - 1) hi = std::max(hi, l - 1);
        }
        VectorXd f = bump(l, lo, hi);
        gt.basis.functions.col(j) = f / f.norm();
    }

    // Piecewise-smooth nonnegative activity bumps: logistic ramp/decay
    // products with the far tails clamped to exact zero. Windows are
    // stratified per component (the first opens at the start, the last never
    // closes) so components occupy distinct eras while subjects vary in
    // timing, width and amplitude.
    std::vector<MatrixXd> all_coeffs(N);
    double peak = 0.0;
    const double tail_clip = 0.02;
    for (int n = 0; n < N; ++n) {
        MatrixXd C(T, r);
        for (int j = 0; j < r; ++j) {
            double stratum = r > 1 ? static_cast<double>(j) / (r - 1) : 0.5;
            double center = (0.15 + 0.7 * stratum + rng.uniform(-0.05, 0.05)) * T;
            double half = rng.uniform(0.09, 0.14) * T;
            double rise = rng.uniform(0.02, 0.04) * T;
            double amp = rng.uniform(0.5, 1.0);
            bool open_start = j == 0;
            bool open_end = j == r - 1;
            for (int t = 0; t < T; ++t) {
                double up = open_start ? 1.0 : logistic((t + 1 - (center - half)) / rise);
                double down = open_end ? 1.0 : 1.0 - logistic((t + 1 - (center + half)) / rise);
                C(t, j) = amp * std::max(0.0, up * down - tail_clip) / (1.0 - tail_clip);
            }
        }
        all_coeffs[n] = C;
        for (int t = 0; t < T; ++t)
            peak = std::max(peak, (gt.basis.functions * C.row(t).transpose()).maxCoeff());
    }
    // scale the whole cohort so clean values stay inside [0, 1)
    const double scale = peak > 0.0 ? 0.95 / peak : 1.0;
    for (auto& C : all_coeffs) C *= scale;

    std::vector<int> full_days(T);
    std::iota(full_days.begin(), full_days.end(), 1);

    for (int n = 0; n < N; ++n) {
        const std::string id = subject_name(n + 1);

        SeriesMatrix clean;
        clean.subject_id = id;
        clean.num_rows = T;
        clean.row_len = l;
        clean.days = full_days;
        clean.values = all_coeffs[n] * gt.basis.functions.transpose();
        gt.clean.series.push_back(clean);

        // independent row drops; one uniformly chosen row is kept when the
        // draw would leave the subject empty
        std::vector<int> days;
        for (int t = 1; t <= T; ++t)
            if (rng.uniform() >= spec.missing_fraction) days.push_back(t);
        if (days.empty()) days.push_back(1 + static_cast<int>(rng.below(T)));

        SeriesMatrix obs;
        obs.subject_id = id;
        obs.num_rows = T;
        obs.row_len = l;
        obs.days = days;
        obs.values.resize(static_cast<int>(days.size()), l);
        CoefficientSet c;
        c.subject_id = id;
        c.days = days;
        c.values.resize(static_cast<int>(days.size()), r);
        for (std::size_t i = 0; i < days.size(); ++i) {
            int t = days[i] - 1;
            c.values.row(static_cast<int>(i)) = all_coeffs[n].row(t);
            for (int col = 0; col < l; ++col) {
                double v = clean.values(t, col);
                if (spec.noise_std > 0.0) v += spec.noise_std * rng.normal();
                obs.values(static_cast<int>(i), col) = std::clamp(v, 0.0, 1.0);
            }
        }
        gt.observed.series.push_back(std::move(obs));
        gt.coeffs.push_back(std::move(c));
    }
    return gt;
}

double RecoveryError::max_basis_err() const {
    return basis_err.empty() ? 0.0 : *std::max_element(basis_err.begin(), basis_err.end());
}

double RecoveryError::max_coeff_err() const {
    return coeff_err.empty() ? 0.0 : *std::max_element(coeff_err.begin(), coeff_err.end());
}

RecoveryError recovery_error(const FactorModel& m, const GroundTruth& gt) {
    const int r = gt.basis.rank();
    if (m.rank() != r) throw Error(ErrorCode::shape_mismatch, "ranks disagree");

    // greedy maximal inner product; nonnegativity makes signs irrelevant
    MatrixXd sim = m.basis.functions.transpose() * gt.basis.functions;  // learned x true
    std::vector<int> match(r, -1);
    std::vector<char> used(r, 0);
    for (int step = 0; step < r; ++step) {
        int bi = -1, bj = -1;
        double best = -1.0;
        for (int i = 0; i < r; ++i) {
            if (match[i] >= 0) continue;
            for (int j = 0; j < r; ++j) {
                if (used[j]) continue;
                if (sim(i, j) > best) {
                    best = sim(i, j);
                    bi = i;
                    bj = j;
                }
            }
        }
        match[bi] = bj;
        used[bj] = 1;
    }

    RecoveryError err;
    err.basis_err.assign(r, 0.0);
    err.coeff_err.assign(r, 0.0);
    for (int i = 0; i < r; ++i)
        err.basis_err[match[i]] =
            (m.basis.functions.col(i) - gt.basis.functions.col(match[i])).norm();

    for (int i = 0; i < r; ++i) {
        const int j = match[i];
        // least-squares scale: the unit-norm convention fixes scale only up
        // to the coefficient side
        double num = 0.0, den = 0.0, ref = 0.0;
        for (std::size_t n = 0; n < gt.coeffs.size(); ++n) {
            const auto& truth = gt.coeffs[n];
            const auto& fitted = m.coeffs[n];
            if (fitted.days != truth.days)
                throw Error(ErrorCode::shape_mismatch, "model days misaligned with truth");
            num += fitted.values.col(i).dot(truth.values.col(j));
            den += fitted.values.col(i).squaredNorm();
            ref += truth.values.col(j).squaredNorm();
        }
        double s = den > 0.0 ? num / den : 0.0;
        double diff = 0.0;
        for (std::size_t n = 0; n < gt.coeffs.size(); ++n)
            diff += (s * m.coeffs[n].values.col(i) - gt.coeffs[n].values.col(j)).squaredNorm();
        err.coeff_err[j] = ref > 0.0 ? std::sqrt(diff / ref) : std::sqrt(diff);
    }
    return err;
}

VectorXd affine_fit_oracle(const VectorXd& y, bool nonneg) {
    const int m = static_cast<int>(y.size());
    if (m < 2) throw Error(ErrorCode::shape_mismatch, "affine fit needs length >= 2");

    auto fit_constrained = [&](bool pin_first, bool pin_last) -> std::pair<VectorXd, double> {
        // minimize |a + b t - y|^2 with optional c_1 = 0 / c_m = 0
        Eigen::Matrix2d A = Eigen::Matrix2d::Zero();
        Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
        for (int t = 0; t < m; ++t) {
            Eigen::Vector2d x(1.0, static_cast<double>(t + 1));
            A += x * x.transpose();
            rhs += x * y[t];
        }
        Eigen::Vector2d beta;
        if (pin_first && pin_last) {
            beta.setZero();  // both endpoints zero forces the zero sequence
        } else if (pin_first || pin_last) {
            // substitute a = -b * t_pin
            double tp = pin_first ? 1.0 : static_cast<double>(m);
            double num = 0.0, den = 0.0;
            for (int t = 0; t < m; ++t) {
                double g = (t + 1) - tp;
                num += g * y[t];
                den += g * g;
            }
            double b = den > 0.0 ? num / den : 0.0;
            beta << -b * tp, b;
        } else {
            beta = A.ldlt().solve(rhs);
        }
        VectorXd c(m);
        for (int t = 0; t < m; ++t) c[t] = beta[0] + beta[1] * (t + 1);
        double cost = (c - y).squaredNorm();
        return {c, cost};
    };

    auto [c, cost] = fit_constrained(false, false);
    if (!nonneg || (c[0] >= 0.0 && c[m - 1] >= 0.0)) return c;

    // an affine sequence is nonnegative iff both endpoints are; enumerate
    // the active endpoint sets and keep the feasible minimum
    VectorXd best;
    double best_cost = std::numeric_limits<double>::infinity();
    for (int mask = 1; mask < 4; ++mask) {
        auto [cc, cst] = fit_constrained(mask & 1, mask & 2);
        if (cc[0] >= -1e-12 && cc[m - 1] >= -1e-12 && cst < best_cost) {
            best = cc.cwiseMax(0.0);
            best_cost = cst;
        }
    }
    return best;
}

} // namespace tslr
