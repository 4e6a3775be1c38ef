#ifndef TSLR_ERROR_HPP
#define TSLR_ERROR_HPP

#include <stdexcept>
#include <string>

namespace tslr {

// Error codes carried by every exception thrown from the library.
// The CLI prints the code name on stderr and exits nonzero.
enum class ErrorCode {
    invalid_period,
    empty_series,
    malformed_log,
    ill_posed_subproblem,
    degenerate_component,
    rank_exceeds_data,
    empty_dataset,
    shape_mismatch,
    no_overlap,
    too_many_clusters,
    no_ground_truth,
    infeasible_spec,
    invalid_config,
    io_failure,
};

inline const char* error_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::invalid_period:        return "invalid-period";
        case ErrorCode::empty_series:          return "empty-series";
        case ErrorCode::malformed_log:         return "malformed-log";
        case ErrorCode::ill_posed_subproblem:  return "ill-posed-subproblem";
        case ErrorCode::degenerate_component:  return "degenerate-component";
        case ErrorCode::rank_exceeds_data:     return "rank-exceeds-data";
        case ErrorCode::empty_dataset:         return "empty-dataset";
        case ErrorCode::shape_mismatch:        return "shape-mismatch";
        case ErrorCode::no_overlap:            return "no-overlap";
        case ErrorCode::too_many_clusters:     return "too-many-clusters";
        case ErrorCode::no_ground_truth:       return "no-ground-truth";
        case ErrorCode::infeasible_spec:       return "infeasible-spec";
        case ErrorCode::invalid_config:        return "invalid-config";
        case ErrorCode::io_failure:            return "io-failure";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(error_name(code)) + ": " + detail), code_(code) {}

    ErrorCode code() const { return code_; }
    const char* name() const { return error_name(code_); }

private:
    ErrorCode code_;
};

} // namespace tslr

#endif
