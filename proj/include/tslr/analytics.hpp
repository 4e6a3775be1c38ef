#ifndef TSLR_ANALYTICS_HPP
#define TSLR_ANALYTICS_HPP

#include <optional>
#include <vector>

#include "tslr/solver.hpp"
#include "tslr/types.hpp"

namespace tslr {

// Trajectory defined only on the listed days (sorted, 1-based); rows of
// `values` align with `days`. Used for medians, centroids and predictions.
struct MaskedSeries {
    std::vector<int> days;
    MatrixXd values;

    int row_of(int day) const {
        auto it = std::lower_bound(days.begin(), days.end(), day);
        if (it == days.end() || *it != day) return -1;
        return static_cast<int>(it - days.begin());
    }
};

// Component indices are 0-based throughout the library; the CLI converts
// from the 1-based numbering used in flags and output files.

struct TrendStats {
    std::vector<double> percentiles;        // {10, 25, 50, 75, 90}
    std::vector<MaskedSeries> components;   // one per component, cols = percentiles
};

struct OutlierReport {
    int component = 0;
    double percentile = 98.0;
    double threshold = 0.0;
    std::vector<std::string> subject_ids;
    std::vector<double> distances;
    std::vector<int> flagged;  // indices into subject_ids, distance > threshold
};

struct ClusterAssignment {
    int k = 0;
    std::vector<int> labels;              // per subject, in [0, k)
    std::vector<MaskedSeries> centroids;  // per-day mean over observing members
    double cost = 0.0;                    // sum of squared masked distances
};

// Train/test windows are half-open day ranges [begin, end).
struct ForecastTask {
    int past_begin = 1;
    int past_end = 0;
    int future_begin = 0;
    int future_end = 0;
    double min_observed_fraction = 0.7;
    double sigma = 0.0;  // 0 = select by cross-validation

    void validate() const {
        if (past_begin < 1 || past_begin >= past_end || past_end > future_begin ||
            future_begin >= future_end)
            throw Error(ErrorCode::invalid_config, "forecast windows must be ordered and disjoint");
        if (min_observed_fraction <= 0 || min_observed_fraction > 1)
            throw Error(ErrorCode::invalid_config, "min_observed_fraction outside (0,1]");
    }
};

// ---- window helpers -------------------------------------------------------

SeriesMatrix restrict_window(const SeriesMatrix& m, int begin_day, int end_day);
CoefficientSet restrict_window(const CoefficientSet& c, int begin_day, int end_day);
double window_observed_fraction(const std::vector<int>& days, int begin_day, int end_day);

// C * F' over the coefficient days, optionally clipped to [0, 1].
SeriesMatrix reconstruct(const BasisSet& basis, const CoefficientSet& coeffs,
                         int num_rows, bool clip = true);

// Percentile with linear interpolation between order statistics (sorts a copy).
double percentile_interpolated(std::vector<double> values, double pct);

// ---- cohort statistics ----------------------------------------------------

// Per component and per day, the {10,25,50,75,90} percentiles of the
// coefficients across subjects observed that day.
TrendStats trend_stats(const FactorModel& m);

// Per-day median coefficient trajectory of one component.
MaskedSeries component_median(const FactorModel& m, int component);

// Root-mean-square difference over the days both sides observe:
//   sqrt( 1/|T∩T'| * sum_{j in cols} sum_{t in T∩T'} (a_j(t) - b_j(t))^2 ).
// Throws no-overlap when the intersection is empty.
double masked_distance(const std::vector<int>& days_a, const MatrixXd& a,
                       const std::vector<int>& days_b, const MatrixXd& b,
                       const std::vector<int>& cols_a, const std::vector<int>& cols_b);

// Coefficient form; `components` empty means the first min(3, r) components.
double masked_distance(const CoefficientSet& a, const CoefficientSet& b,
                       std::vector<int> components = {});

// Distance of one subject's component trajectory to a single-column series
// (typically the component median).
double masked_distance(const CoefficientSet& a, int component, const MaskedSeries& b);

OutlierReport detect_outliers(const FactorModel& m, int component, double percentile = 98.0);

// ---- clustering -----------------------------------------------------------

struct KmeansOptions {
    int restarts = 10;
    int max_iterations = 100;
    std::uint64_t seed = 0;
};

// Lloyd iterations under the masked metric; centroids are per-day means over
// members observed that day. Distances use only the listed columns.
ClusterAssignment kmeans_masked(const std::vector<MaskedSeries>& subjects, int k,
                                const std::vector<int>& cols, const KmeansOptions& opts);

// Coefficient-space clustering; `components` empty means first min(3, r).
ClusterAssignment kmeans_coefficients(const FactorModel& m, int k,
                                      std::vector<int> components, const KmeansOptions& opts);

// Raw-data clustering with the same masked metric applied to matrix rows.
ClusterAssignment kmeans_raw(const Dataset& d, int k, const KmeansOptions& opts);

// ---- forecasting ----------------------------------------------------------

// Coefficients of a window of `y` under a frozen basis; same subproblem
// contract as update_coefficients.
CoefficientSet fit_coefficients_fixed_basis(const SeriesMatrix& y, const BasisSet& basis,
                                            double lambda, int begin_day, int end_day,
                                            const FitOptions& opts = {});

struct TrainPair {
    CoefficientSet past;
    CoefficientSet future;
};

struct KrForecast {
    CoefficientSet prediction;  // per future day over observing train subjects
    bool fallback = false;      // some day fell back to the unweighted mean
};

// Nadaraya-Watson on coefficients: per component, Gaussian weights of std
// sigma on the masked past distance restricted to that component.
KrForecast kr_forecast(const std::vector<TrainPair>& train, const CoefficientSet& test_past,
                       double sigma);

// Per-(day,column) mean of the training futures, over subjects observed
// that day.
MaskedSeries mean_baseline(const std::vector<const SeriesMatrix*>& train_future);

// Nadaraya-Watson on raw rows: weights from the masked row distance between
// past windows, prediction per future day and column.
MaskedSeries kr_raw_forecast(const std::vector<const SeriesMatrix*>& train_past,
                             const std::vector<const SeriesMatrix*>& train_future,
                             const SeriesMatrix& test_past, double sigma,
                             bool* fallback = nullptr);

// ---- evaluation -----------------------------------------------------------

// Mean absolute (or root-mean-square) error per entry over the truth's
// observed days inside [begin, end) that the prediction covers.
double evaluate_forecast(const MaskedSeries& pred, const SeriesMatrix& truth,
                         int begin_day, int end_day, bool use_rmse = false);

struct CvOptions {
    int folds = 5;
    int grid_size = 10;
    double lo_factor = 0.1;
    double hi_factor = 10.0;
    bool use_rmse = false;
};

// Bandwidth selection: k-fold over training subjects on a log-spaced grid
// around the median pairwise past distance, minimizing validation error of
// the reconstructed prediction.
double select_sigma_coefficients(const std::vector<TrainPair>& pairs, const BasisSet& basis,
                                 const std::vector<const SeriesMatrix*>& train_future_truth,
                                 int future_begin, int future_end, const CvOptions& opts = {});

double select_sigma_raw(const std::vector<const SeriesMatrix*>& train_past,
                        const std::vector<const SeriesMatrix*>& train_future,
                        int future_begin, int future_end, const CvOptions& opts = {});

} // namespace tslr

#endif
