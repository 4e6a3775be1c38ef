#ifndef TSLR_TYPES_HPP
#define TSLR_TYPES_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "tslr/error.hpp"

namespace tslr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// One subject's period-aligned data. Rows of `values` hold only the observed
// periods, aligned with `days` (1-based period indices, strictly increasing).
// `num_rows` is the nominal number of periods T, including missing ones.
struct SeriesMatrix {
    std::string subject_id;
    int num_rows = 0;              // T
    int row_len = 0;               // l, samples per period
    std::vector<int> days;         // observed set, sorted, in [1, T]
    MatrixXd values;               // |days| x l, each entry in [0, 1]

    int observed_count() const { return static_cast<int>(days.size()); }

    bool is_observed(int day) const {
        return std::binary_search(days.begin(), days.end(), day);
    }

    // index into `values` rows for an observed day, -1 otherwise
    int row_of(int day) const {
        auto it = std::lower_bound(days.begin(), days.end(), day);
        if (it == days.end() || *it != day) return -1;
        return static_cast<int>(it - days.begin());
    }

    void validate() const {
        if (row_len < 2) throw Error(ErrorCode::invalid_period, "row length must be >= 2");
        if (days.empty()) throw Error(ErrorCode::empty_series, "no observed rows for " + subject_id);
        if (values.rows() != observed_count() || values.cols() != row_len)
            throw Error(ErrorCode::shape_mismatch, "values grid does not match observed set");
        for (std::size_t i = 0; i < days.size(); ++i) {
            if (days[i] < 1 || days[i] > num_rows)
                throw Error(ErrorCode::shape_mismatch, "observed day outside [1, T]");
            if (i > 0 && days[i] <= days[i - 1])
                throw Error(ErrorCode::shape_mismatch, "observed days must be strictly increasing");
        }
    }
};

struct GridInfo {
    double period_minutes = 1440.0;  // real-unit length of one period
    double sample_minutes = 10.0;    // real-unit length of one sample
};

struct Dataset {
    std::vector<SeriesMatrix> series;
    GridInfo grid;

    int row_len() const { return series.empty() ? 0 : series.front().row_len; }

    const SeriesMatrix* find(const std::string& id) const {
        for (const auto& s : series)
            if (s.subject_id == id) return &s;
        return nullptr;
    }

    void validate() const {
        for (const auto& s : series) {
            s.validate();
            if (s.row_len != row_len())
                throw Error(ErrorCode::shape_mismatch, "subjects disagree on row length");
        }
        for (std::size_t i = 0; i < series.size(); ++i)
            for (std::size_t j = i + 1; j < series.size(); ++j)
                if (series[i].subject_id == series[j].subject_id)
                    throw Error(ErrorCode::shape_mismatch,
                                "duplicate subject id " + series[i].subject_id);
    }
};

// Thresholds for the implausible-day and sparse-subject filters.
// Night window is a clock interval [start, end) in minutes from midnight;
// it may wrap past midnight (start > end), default 21:00-07:00.
struct FilterRules {
    double max_sleep_hours = 16.0;
    double max_awake_hours = 20.0;
    double night_start_minutes = 21.0 * 60.0;
    double night_end_minutes = 7.0 * 60.0;
    int isolation_gap_days = 5;
    double max_missing_fraction = 0.9;

    void validate() const {
        if (max_sleep_hours <= 0 || max_awake_hours <= 0)
            throw Error(ErrorCode::invalid_config, "run-length thresholds must be positive");
        if (isolation_gap_days <= 0)
            throw Error(ErrorCode::invalid_config, "isolation gap must be positive");
        if (max_missing_fraction < 0 || max_missing_fraction > 1)
            throw Error(ErrorCode::invalid_config, "max_missing_fraction outside [0,1]");
        if (night_start_minutes == night_end_minutes)
            throw Error(ErrorCode::invalid_config, "night window is empty");
    }
};

// r shared nonnegative basis functions of length l, one per column,
// each with unit Euclidean norm.
struct BasisSet {
    MatrixXd functions;  // l x r

    int rank() const { return static_cast<int>(functions.cols()); }
    int row_len() const { return static_cast<int>(functions.rows()); }

    void validate(double norm_tol = 1e-9) const {
        if (functions.size() == 0)
            throw Error(ErrorCode::shape_mismatch, "empty basis");
        if ((functions.array() < 0).any())
            throw Error(ErrorCode::shape_mismatch, "basis has negative entries");
        for (int j = 0; j < rank(); ++j) {
            double n = functions.col(j).norm();
            if (std::abs(n - 1.0) > norm_tol)
                throw Error(ErrorCode::shape_mismatch, "basis function not unit norm");
        }
    }
};

// Per-subject coefficient trajectories over that subject's observed days.
// Row t of `values` holds the r coefficients for days[t].
struct CoefficientSet {
    std::string subject_id;
    std::vector<int> days;  // same observed set as the source series
    MatrixXd values;        // |days| x r, nonnegative

    int rank() const { return static_cast<int>(values.cols()); }
    int observed_count() const { return static_cast<int>(days.size()); }

    int row_of(int day) const {
        auto it = std::lower_bound(days.begin(), days.end(), day);
        if (it == days.end() || *it != day) return -1;
        return static_cast<int>(it - days.begin());
    }

    // component-j trajectory over the observed sequence
    VectorXd trajectory(int j) const { return values.col(j); }
};

struct FactorModel {
    BasisSet basis;
    std::vector<CoefficientSet> coeffs;  // aligned with Dataset order
    double lambda = 0.0;
    std::vector<double> objective_trace;
    int iterations = 0;
    bool converged = false;

    int rank() const { return basis.rank(); }

    const CoefficientSet* find(const std::string& id) const {
        for (const auto& c : coeffs)
            if (c.subject_id == id) return &c;
        return nullptr;
    }
};

} // namespace tslr

#endif
