#include <doctest.h>

#include "oracles.hpp"
#include "tslr/rng.hpp"
#include "tslr/solver.hpp"
#include "tslr/synth.hpp"

using namespace tslr;

TEST_CASE("noise-free rank-1 generation is exactly rank one") {
    SynthSpec spec;
    spec.subjects = 3;
    spec.periods = 20;
    spec.row_len = 12;
    spec.rank = 1;
    spec.seed = 1;
    GroundTruth gt = generate(spec);
    for (const auto& s : gt.observed.series) {
        // every row is proportional to the single basis function
        for (int t = 0; t < s.observed_count(); ++t) {
            VectorXd row = s.values.row(t).transpose();
            double scale = row.dot(gt.basis.functions.col(0));
            CHECK((row - scale * gt.basis.functions.col(0)).lpNorm<Eigen::Infinity>() < 1e-12);
        }
    }
}

TEST_CASE("clean data equals the factor synthesis to machine precision") {
    SynthSpec spec;
    spec.subjects = 4;
    spec.periods = 15;
    spec.row_len = 10;
    spec.rank = 3;
    spec.noise_std = 0.1;
    spec.missing_fraction = 0.2;
    spec.seed = 2;
    GroundTruth gt = generate(spec);
    for (std::size_t n = 0; n < gt.clean.series.size(); ++n) {
        const auto& clean = gt.clean.series[n];
        const auto& c = gt.coeffs[n];
        for (int idx = 0; idx < c.observed_count(); ++idx) {
            int row = clean.row_of(c.days[idx]);
            for (int i = 0; i < clean.row_len; ++i) {
                double recon = 0.0;
                for (int j = 0; j < 3; ++j)
                    recon += c.values(idx, j) * gt.basis.functions(i, j);
                CHECK(clean.values(row, i) == doctest::Approx(recon).epsilon(1e-14));
            }
        }
        CHECK((clean.values.array() >= 0.0).all());
        CHECK((clean.values.array() <= 1.0).all());
    }
}

TEST_CASE("row drops hit the requested missing fraction") {
    SynthSpec spec;
    spec.subjects = 5;
    spec.periods = 1000;
    spec.row_len = 6;
    spec.rank = 2;
    spec.missing_fraction = 0.5;
    spec.seed = 3;
    GroundTruth gt = generate(spec);
    for (const auto& s : gt.observed.series) {
        double frac = static_cast<double>(s.observed_count()) / s.num_rows;
        CHECK(frac > 0.45);
        CHECK(frac < 0.55);
    }
}

TEST_CASE("sleep-shaped preset dimensions are accepted") {
    SynthSpec spec;
    spec.subjects = 3;  // cohort size trimmed for test runtime
    spec.periods = 700;
    spec.row_len = 144;
    spec.rank = 5;
    spec.missing_fraction = 0.5;
    spec.seed = 4;
    GroundTruth gt = generate(spec);
    CHECK(gt.observed.row_len() == 144);
    CHECK(gt.observed.series[0].num_rows == 700);
    gt.basis.validate();
}

TEST_CASE("generation is deterministic per seed") {
    SynthSpec spec;
    spec.subjects = 3;
    spec.periods = 25;
    spec.row_len = 9;
    spec.rank = 3;
    spec.noise_std = 0.05;
    spec.missing_fraction = 0.3;
    spec.seed = 5;
    GroundTruth a = generate(spec);
    GroundTruth b = generate(spec);
    CHECK((a.basis.functions - b.basis.functions).lpNorm<Eigen::Infinity>() == 0.0);
    for (std::size_t n = 0; n < a.observed.series.size(); ++n) {
        CHECK(a.observed.series[n].days == b.observed.series[n].days);
        CHECK((a.observed.series[n].values - b.observed.series[n].values)
                  .lpNorm<Eigen::Infinity>() == 0.0);
    }
}

TEST_CASE("an infeasible bump layout is rejected") {
    SynthSpec spec;
    spec.subjects = 1;
    spec.periods = 5;
    spec.row_len = 6;
    spec.rank = 3;  // 2 samples per block < min_support
    CHECK_THROWS_AS(generate(spec), Error);
}

TEST_CASE("recovery error vanishes for the truth and its permutations") {
    SynthSpec spec;
    spec.subjects = 4;
    spec.periods = 30;
    spec.row_len = 15;
    spec.rank = 3;
    spec.missing_fraction = 0.2;
    spec.seed = 6;
    GroundTruth gt = generate(spec);

    FactorModel exact;
    exact.basis = gt.basis;
    exact.coeffs = gt.coeffs;
    RecoveryError e = recovery_error(exact, gt);
    CHECK(e.max_basis_err() == 0.0);
    CHECK(e.max_coeff_err() == 0.0);

    // permute the components
    FactorModel permuted = exact;
    std::vector<int> perm{2, 0, 1};
    for (int j = 0; j < 3; ++j)
        permuted.basis.functions.col(j) = gt.basis.functions.col(perm[j]);
    for (std::size_t n = 0; n < permuted.coeffs.size(); ++n)
        for (int j = 0; j < 3; ++j)
            permuted.coeffs[n].values.col(j) = gt.coeffs[n].values.col(perm[j]);
    RecoveryError p = recovery_error(permuted, gt);
    CHECK(p.max_basis_err() == 0.0);
    CHECK(p.max_coeff_err() == 0.0);
}

TEST_CASE("greedy matching agrees with exhaustive search on perturbed models") {
    Rng rng(7);
    SynthSpec spec;
    spec.subjects = 3;
    spec.periods = 20;
    spec.row_len = 15;
    spec.rank = 3;
    spec.seed = 8;
    GroundTruth gt = generate(spec);

    for (int trial = 0; trial < 20; ++trial) {
        FactorModel m;
        m.basis = gt.basis;
        m.coeffs = gt.coeffs;
        // random perturbation and a random relabeling of the components
        std::vector<int> perm{0, 1, 2};
        for (int i = 2; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
        MatrixXd F(15, 3);
        for (int j = 0; j < 3; ++j) {
            VectorXd f = gt.basis.functions.col(perm[j]);
            for (int i = 0; i < 15; ++i) f[i] = std::max(0.0, f[i] + rng.uniform(-0.1, 0.1));
            F.col(j) = f / f.norm();
        }
        m.basis.functions = F;
        for (auto& c : m.coeffs) {
            MatrixXd v = c.values;
            for (int j = 0; j < 3; ++j) c.values.col(j) = v.col(perm[j]);
        }
        RecoveryError got = recovery_error(m, gt);

        // exhaustive best-permutation oracle on total squared basis error
        double best_total = std::numeric_limits<double>::infinity();
        std::vector<double> best_errs;
        std::vector<int> idx{0, 1, 2};
        do {
            double total = 0.0;
            std::vector<double> errs(3);
            for (int i = 0; i < 3; ++i) {
                errs[idx[i]] =
                    (m.basis.functions.col(i) - gt.basis.functions.col(idx[i])).norm();
                total += errs[idx[i]] * errs[idx[i]];
            }
            if (total < best_total) {
                best_total = total;
                best_errs = errs;
            }
        } while (std::next_permutation(idx.begin(), idx.end()));

        for (int j = 0; j < 3; ++j)
            CHECK(got.basis_err[j] == doctest::Approx(best_errs[j]).epsilon(1e-12));
    }
}

TEST_CASE("affine oracle basics") {
    VectorXd ramp(5);
    for (int t = 0; t < 5; ++t) ramp[t] = 2.0 - 0.3 * (t + 1);
    CHECK((affine_fit_oracle(ramp, false) - ramp).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((affine_fit_oracle(ramp, true) - ramp).lpNorm<Eigen::Infinity>() < 1e-12);

    VectorXd spike(3);
    spike << 0.0, 1.0, 0.0;
    VectorXd flat = affine_fit_oracle(spike, false);
    for (int t = 0; t < 3; ++t) CHECK(flat[t] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    // a steep decay whose unconstrained fit dips negative gets clipped
    VectorXd decay(6);
    decay << 5.0, 2.0, 0.5, 0.0, 0.0, 0.0;
    VectorXd nn = affine_fit_oracle(decay, true);
    CHECK(nn.minCoeff() >= 0.0);
    VectorXd un = affine_fit_oracle(decay, false);
    CHECK(un.minCoeff() < 0.0);
    // the constrained fit cannot beat the unconstrained one
    CHECK((nn - decay).squaredNorm() >= (un - decay).squaredNorm() - 1e-12);
}

TEST_CASE("noiseless fit recovers the planted factors") {
    SynthSpec spec;
    spec.subjects = 8;
    spec.periods = 40;
    spec.row_len = 18;
    spec.rank = 3;
    spec.seed = 9;
    GroundTruth gt = generate(spec);

    FitOptions opts;
    opts.seed = 9;
    opts.rel_tol = 1e-12;
    FactorModel m = fit(gt.observed, 3, 0.0, opts);
    RecoveryError err = recovery_error(m, gt);
    CHECK(err.max_basis_err() < 1e-3);
}

TEST_CASE("larger lambda yields smoother fitted coefficients") {
    SynthSpec spec;
    spec.subjects = 6;
    spec.periods = 40;
    spec.row_len = 16;
    spec.rank = 2;
    spec.noise_std = 0.05;
    spec.missing_fraction = 0.3;
    spec.seed = 10;
    GroundTruth gt = generate(spec);

    // refits are separate nonconvex problems, so the trend check carries a
    // small slack rather than the exact-subproblem tolerance
    double prev = std::numeric_limits<double>::infinity();
    for (double lambda : {0.0, 10.0, 1e3, 1e5}) {
        FitOptions opts;
        opts.seed = 10;
        FactorModel m = fit(gt.observed, 2, lambda, opts);
        double smooth = 0.0;
        for (const auto& c : m.coeffs)
            for (int j = 0; j < 2; ++j)
                smooth += second_difference(c.values.col(j)).squaredNorm();
        CHECK(smooth <= prev * 1.01);
        prev = smooth;
    }
}
