#ifndef TSLR_SYNTH_HPP
#define TSLR_SYNTH_HPP

#include <cstdint>
#include <vector>

#include "tslr/types.hpp"

namespace tslr {

struct SynthSpec {
    int subjects = 20;          // N
    int periods = 200;          // T
    int row_len = 48;           // l
    int rank = 3;               // r
    double noise_std = 0.0;
    double missing_fraction = 0.0;
    std::uint64_t seed = 0;
    // supports separated by construction keep recovery identifiable;
    // overlapping supports exist for stress runs without a pass contract
    bool overlapping_supports = false;
    int min_support = 3;  // samples per bump, incl. separation margin

    void validate() const {
        if (subjects < 1 || periods < 1) throw Error(ErrorCode::infeasible_spec, "empty shape");
        if (rank < 1 || rank > row_len) throw Error(ErrorCode::infeasible_spec, "rank outside [1, l]");
        if (missing_fraction < 0.0 || missing_fraction >= 1.0)
            throw Error(ErrorCode::infeasible_spec, "missing_fraction outside [0,1)");
        if (noise_std < 0.0) throw Error(ErrorCode::infeasible_spec, "negative noise");
    }
};

struct GroundTruth {
    BasisSet basis;
    std::vector<CoefficientSet> coeffs;  // over each subject's observed days
    Dataset clean;                       // exact rank-r synthesis, fully observed
    Dataset observed;                    // noisy, clamped to [0,1], rows dropped
};

// Basis functions are unimodal bumps on disjoint support blocks (separated
// mode), coefficients are smooth logistic ramps or decays, observations are
// clamp01(sum_j C_j(t) F_j(i) + noise) with rows dropped independently.
// Deterministic per seed.
GroundTruth generate(const SynthSpec& spec);

struct RecoveryError {
    std::vector<double> basis_err;  // per true component, after matching
    std::vector<double> coeff_err;  // relative, after per-component scale alignment
    double max_basis_err() const;
    double max_coeff_err() const;
};

// Greedy inner-product matching of learned to true components, then basis
// distance and scale-aligned relative coefficient error on observed days.
RecoveryError recovery_error(const FactorModel& m, const GroundTruth& gt);

// Least-squares affine sequence fit; with nonneg set, clips and refits by
// enumerating active boundary sets (the endpoints are the only candidates,
// since an affine sequence attains its minimum at an end).
VectorXd affine_fit_oracle(const VectorXd& y, bool nonneg);

} // namespace tslr

#endif
