#include "tslr/analytics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "tslr/rng.hpp"

namespace tslr {

SeriesMatrix restrict_window(const SeriesMatrix& m, int begin_day, int end_day) {
    SeriesMatrix out;
    out.subject_id = m.subject_id;
    out.num_rows = m.num_rows;
    out.row_len = m.row_len;
    for (int idx = 0; idx < m.observed_count(); ++idx)
        if (m.days[idx] >= begin_day && m.days[idx] < end_day) out.days.push_back(m.days[idx]);
    out.values.resize(static_cast<int>(out.days.size()), m.row_len);
    for (std::size_t i = 0; i < out.days.size(); ++i)
        out.values.row(static_cast<int>(i)) = m.values.row(m.row_of(out.days[i]));
    return out;
}

CoefficientSet restrict_window(const CoefficientSet& c, int begin_day, int end_day) {
    CoefficientSet out;
    out.subject_id = c.subject_id;
    for (int idx = 0; idx < c.observed_count(); ++idx)
        if (c.days[idx] >= begin_day && c.days[idx] < end_day) out.days.push_back(c.days[idx]);
    out.values.resize(static_cast<int>(out.days.size()), c.rank());
    for (std::size_t i = 0; i < out.days.size(); ++i)
        out.values.row(static_cast<int>(i)) = c.values.row(c.row_of(out.days[i]));
    return out;
}

double window_observed_fraction(const std::vector<int>& days, int begin_day, int end_day) {
    if (end_day <= begin_day) return 0.0;
    auto lo = std::lower_bound(days.begin(), days.end(), begin_day);
    auto hi = std::lower_bound(days.begin(), days.end(), end_day);
    return static_cast<double>(hi - lo) / (end_day - begin_day);
}

SeriesMatrix reconstruct(const BasisSet& basis, const CoefficientSet& coeffs,
                         int num_rows, bool clip) {
    SeriesMatrix out;
    out.subject_id = coeffs.subject_id;
    out.num_rows = num_rows;
    out.row_len = basis.row_len();
    out.days = coeffs.days;
    out.values = coeffs.values * basis.functions.transpose();
    if (clip) out.values = out.values.cwiseMax(0.0).cwiseMin(1.0);
    return out;
}

double percentile_interpolated(std::vector<double> values, double pct) {
    if (values.empty()) throw Error(ErrorCode::shape_mismatch, "percentile of empty set");
    std::sort(values.begin(), values.end());
    const double h = (values.size() - 1) * pct / 100.0;
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= values.size()) return values.back();
    const double frac = h - lo;
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

TrendStats trend_stats(const FactorModel& m) {
    TrendStats stats;
    stats.percentiles = {10.0, 25.0, 50.0, 75.0, 90.0};
    const int r = m.rank();

    int max_day = 0;
    for (const auto& c : m.coeffs)
        if (!c.days.empty()) max_day = std::max(max_day, c.days.back());

    stats.components.resize(r);
    std::vector<double> pool;
    for (int j = 0; j < r; ++j) {
        std::vector<int> days;
        std::vector<std::array<double, 5>> rows;
        for (int day = 1; day <= max_day; ++day) {
            pool.clear();
            for (const auto& c : m.coeffs) {
                int idx = c.row_of(day);
                if (idx >= 0) pool.push_back(c.values(idx, j));
            }
            if (pool.empty()) continue;
            std::array<double, 5> row;
            for (std::size_t p = 0; p < stats.percentiles.size(); ++p)
                row[p] = percentile_interpolated(pool, stats.percentiles[p]);
            days.push_back(day);
            rows.push_back(row);
        }
        auto& comp = stats.components[j];
        comp.days = std::move(days);
        comp.values.resize(static_cast<int>(rows.size()), 5);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (int p = 0; p < 5; ++p) comp.values(static_cast<int>(i), p) = rows[i][p];
    }
    return stats;
}

MaskedSeries component_median(const FactorModel& m, int component) {
    if (component < 0 || component >= m.rank())
        throw Error(ErrorCode::shape_mismatch, "component index out of range");
    MaskedSeries med;
    int max_day = 0;
    for (const auto& c : m.coeffs)
        if (!c.days.empty()) max_day = std::max(max_day, c.days.back());

    std::vector<double> pool;
    std::vector<double> values;
    for (int day = 1; day <= max_day; ++day) {
        pool.clear();
        for (const auto& c : m.coeffs) {
            int idx = c.row_of(day);
            if (idx >= 0) pool.push_back(c.values(idx, component));
        }
        if (pool.empty()) continue;
        med.days.push_back(day);
        values.push_back(percentile_interpolated(pool, 50.0));
    }
    med.values.resize(static_cast<int>(values.size()), 1);
    for (std::size_t i = 0; i < values.size(); ++i) med.values(static_cast<int>(i), 0) = values[i];
    return med;
}

double masked_distance(const std::vector<int>& days_a, const MatrixXd& a,
                       const std::vector<int>& days_b, const MatrixXd& b,
                       const std::vector<int>& cols_a, const std::vector<int>& cols_b) {
    if (cols_a.size() != cols_b.size())
        throw Error(ErrorCode::shape_mismatch, "column subsets disagree");
    double sum = 0.0;
    int common = 0;
    std::size_t ia = 0, ib = 0;
    while (ia < days_a.size() && ib < days_b.size()) {
        if (days_a[ia] < days_b[ib]) ++ia;
        else if (days_b[ib] < days_a[ia]) ++ib;
        else {
            for (std::size_t c = 0; c < cols_a.size(); ++c) {
                double diff = a(static_cast<int>(ia), cols_a[c]) - b(static_cast<int>(ib), cols_b[c]);
                sum += diff * diff;
            }
            ++common;
            ++ia;
            ++ib;
        }
    }
    if (common == 0) throw Error(ErrorCode::no_overlap, "no common observed days");
    return std::sqrt(sum / common);
}

namespace {

std::vector<int> default_components(int r, std::vector<int> components) {
    if (components.empty())
        for (int j = 0; j < std::min(3, r); ++j) components.push_back(j);
    for (int j : components)
        if (j < 0 || j >= r) throw Error(ErrorCode::shape_mismatch, "component index out of range");
    return components;
}

} // namespace

double masked_distance(const CoefficientSet& a, const CoefficientSet& b,
                       std::vector<int> components) {
    if (a.rank() != b.rank()) throw Error(ErrorCode::shape_mismatch, "ranks disagree");
    components = default_components(a.rank(), std::move(components));
    return masked_distance(a.days, a.values, b.days, b.values, components, components);
}

double masked_distance(const CoefficientSet& a, int component, const MaskedSeries& b) {
    if (component < 0 || component >= a.rank())
        throw Error(ErrorCode::shape_mismatch, "component index out of range");
    return masked_distance(a.days, a.values, b.days, b.values, {component}, {0});
}

OutlierReport detect_outliers(const FactorModel& m, int component, double percentile) {
    if (percentile <= 0.0 || percentile >= 100.0)
        throw Error(ErrorCode::invalid_config, "percentile outside (0, 100)");
    MaskedSeries med = component_median(m, component);

    OutlierReport report;
    report.component = component;
    report.percentile = percentile;
    for (const auto& c : m.coeffs) {
        report.subject_ids.push_back(c.subject_id);
        report.distances.push_back(masked_distance(c, component, med));
    }
    report.threshold = percentile_interpolated(report.distances, percentile);
    for (std::size_t i = 0; i < report.distances.size(); ++i)
        if (report.distances[i] > report.threshold) report.flagged.push_back(static_cast<int>(i));
    return report;
}

namespace {

double subject_centroid_distance(const MaskedSeries& subject, const MaskedSeries& centroid,
                                 const std::vector<int>& cols) {
    try {
        return masked_distance(subject.days, subject.values, centroid.days, centroid.values,
                               cols, cols);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::no_overlap) return std::numeric_limits<double>::infinity();
        throw;
    }
}

MaskedSeries per_day_mean(const std::vector<MaskedSeries>& subjects,
                          const std::vector<int>& member_idx, int dim) {
    std::vector<int> all_days;
    for (int n : member_idx) all_days.insert(all_days.end(), subjects[n].days.begin(),
                                             subjects[n].days.end());
    std::sort(all_days.begin(), all_days.end());
    all_days.erase(std::unique(all_days.begin(), all_days.end()), all_days.end());

    MaskedSeries c;
    c.days = all_days;
    c.values = MatrixXd::Zero(static_cast<int>(all_days.size()), dim);
    for (std::size_t i = 0; i < all_days.size(); ++i) {
        int count = 0;
        for (int n : member_idx) {
            int idx = subjects[n].row_of(all_days[i]);
            if (idx < 0) continue;
            c.values.row(static_cast<int>(i)) += subjects[n].values.row(idx);
            ++count;
        }
        c.values.row(static_cast<int>(i)) /= count;  // every listed day has >=1 observer
    }
    return c;
}

} // namespace

ClusterAssignment kmeans_masked(const std::vector<MaskedSeries>& subjects, int k,
                                const std::vector<int>& cols, const KmeansOptions& opts) {
    const int n = static_cast<int>(subjects.size());
    if (k < 1) throw Error(ErrorCode::too_many_clusters, "k must be >= 1");
    if (k > n) throw Error(ErrorCode::too_many_clusters, "k exceeds subject count");
    const int dim = n ? static_cast<int>(subjects.front().values.cols()) : 0;

    Rng rng(opts.seed);
    ClusterAssignment best;
    best.cost = std::numeric_limits<double>::infinity();

    for (int restart = 0; restart < std::max(1, opts.restarts); ++restart) {
        auto picks = rng.sample_without_replacement(n, k);
        std::vector<MaskedSeries> centroids;
        for (std::size_t c = 0; c < picks.size(); ++c)
            centroids.push_back(subjects[picks[c]]);

        std::vector<int> labels(n, 0);
        for (int iter = 0; iter < opts.max_iterations; ++iter) {
            bool changed = false;
            for (int i = 0; i < n; ++i) {
                int arg = labels[i];
                double best_d = std::numeric_limits<double>::infinity();
                for (int c = 0; c < k; ++c) {
                    double d = subject_centroid_distance(subjects[i], centroids[c], cols);
                    if (d < best_d) {
                        best_d = d;
                        arg = c;
                    }
                }
                if (arg != labels[i]) {
                    labels[i] = arg;
                    changed = true;
                }
            }

            std::vector<std::vector<int>> members(k);
            for (int i = 0; i < n; ++i) members[labels[i]].push_back(i);
            for (int c = 0; c < k; ++c) {
                if (members[c].empty()) {
                    // reseed an empty cluster from the subject farthest
                    // from its own centroid
                    int far = 0;
                    double far_d = -1.0;
                    for (int i = 0; i < n; ++i) {
                        double d = subject_centroid_distance(subjects[i], centroids[labels[i]], cols);
                        if (std::isfinite(d) && d > far_d) {
                            far_d = d;
                            far = i;
                        }
                    }
                    centroids[c] = subjects[far];
                    labels[far] = c;
                    changed = true;
                } else {
                    centroids[c] = per_day_mean(subjects, members[c], dim);
                }
            }
            if (!changed) break;
        }

        double cost = 0.0;
        for (int i = 0; i < n; ++i) {
            double d = subject_centroid_distance(subjects[i], centroids[labels[i]], cols);
            if (std::isfinite(d)) cost += d * d;
        }
        if (cost < best.cost) {
            best.k = k;
            best.labels = labels;
            best.centroids = centroids;
            best.cost = cost;
        }
    }
    return best;
}

ClusterAssignment kmeans_coefficients(const FactorModel& m, int k,
                                      std::vector<int> components, const KmeansOptions& opts) {
    components = default_components(m.rank(), std::move(components));
    std::vector<MaskedSeries> subjects;
    subjects.reserve(m.coeffs.size());
    for (const auto& c : m.coeffs) subjects.push_back({c.days, c.values});
    return kmeans_masked(subjects, k, components, opts);
}

ClusterAssignment kmeans_raw(const Dataset& d, int k, const KmeansOptions& opts) {
    std::vector<MaskedSeries> subjects;
    subjects.reserve(d.series.size());
    std::vector<int> cols;
    for (int i = 0; i < d.row_len(); ++i) cols.push_back(i);
    for (const auto& s : d.series) subjects.push_back({s.days, s.values});
    return kmeans_masked(subjects, k, cols, opts);
}

CoefficientSet fit_coefficients_fixed_basis(const SeriesMatrix& y, const BasisSet& basis,
                                            double lambda, int begin_day, int end_day,
                                            const FitOptions& opts) {
    return update_coefficients(restrict_window(y, begin_day, end_day), basis, lambda, opts);
}

KrForecast kr_forecast(const std::vector<TrainPair>& train, const CoefficientSet& test_past,
                       double sigma) {
    if (sigma <= 0.0) throw Error(ErrorCode::invalid_config, "sigma must be positive");
    const int r = test_past.rank();
    const int n = static_cast<int>(train.size());

    // per component: Gaussian weight per training subject, or -1 when the
    // past windows share no observed day
    MatrixXd weights(n, r);
    bool any_overlap = false;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < r; ++j) {
            try {
                double d = masked_distance(train[i].past.days, train[i].past.values,
                                           test_past.days, test_past.values, {j}, {j});
                weights(i, j) = std::exp(-d * d / (2.0 * sigma * sigma));
                any_overlap = true;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::no_overlap) throw;
                weights(i, j) = -1.0;
            }
        }
    if (!any_overlap)
        throw Error(ErrorCode::no_overlap, "no training pair overlaps the test past window");

    std::vector<int> future_days;
    for (const auto& p : train)
        future_days.insert(future_days.end(), p.future.days.begin(), p.future.days.end());
    std::sort(future_days.begin(), future_days.end());
    future_days.erase(std::unique(future_days.begin(), future_days.end()), future_days.end());

    KrForecast out;
    out.prediction.subject_id = test_past.subject_id;
    out.prediction.days = future_days;
    out.prediction.values = MatrixXd::Zero(static_cast<int>(future_days.size()), r);

    for (std::size_t t = 0; t < future_days.size(); ++t) {
        for (int j = 0; j < r; ++j) {
            double num = 0.0, den = 0.0, mean = 0.0;
            int observers = 0;
            for (int i = 0; i < n; ++i) {
                int idx = train[i].future.row_of(future_days[t]);
                if (idx < 0 || weights(i, j) < 0.0) continue;
                num += weights(i, j) * train[i].future.values(idx, j);
                den += weights(i, j);
                mean += train[i].future.values(idx, j);
                ++observers;
            }
            if (observers == 0) continue;
            if (den < 1e-300) {
                out.prediction.values(static_cast<int>(t), j) = mean / observers;
                out.fallback = true;
            } else {
                out.prediction.values(static_cast<int>(t), j) = num / den;
            }
        }
    }
    return out;
}

MaskedSeries mean_baseline(const std::vector<const SeriesMatrix*>& train_future) {
    std::vector<MaskedSeries> rows;
    std::vector<int> members;
    rows.reserve(train_future.size());
    for (std::size_t i = 0; i < train_future.size(); ++i) {
        rows.push_back({train_future[i]->days, train_future[i]->values});
        members.push_back(static_cast<int>(i));
    }
    if (rows.empty()) throw Error(ErrorCode::empty_dataset, "no training subjects");
    return per_day_mean(rows, members, static_cast<int>(train_future.front()->row_len));
}

MaskedSeries kr_raw_forecast(const std::vector<const SeriesMatrix*>& train_past,
                             const std::vector<const SeriesMatrix*>& train_future,
                             const SeriesMatrix& test_past, double sigma, bool* fallback) {
    if (sigma <= 0.0) throw Error(ErrorCode::invalid_config, "sigma must be positive");
    if (train_past.size() != train_future.size())
        throw Error(ErrorCode::shape_mismatch, "past/future lists disagree");
    const int n = static_cast<int>(train_past.size());
    const int l = test_past.row_len;
    std::vector<int> all_cols;
    for (int i = 0; i < l; ++i) all_cols.push_back(i);

    VectorXd weights(n);
    bool any_overlap = false;
    for (int i = 0; i < n; ++i) {
        try {
            double d = masked_distance(train_past[i]->days, train_past[i]->values,
                                       test_past.days, test_past.values, all_cols, all_cols);
            weights[i] = std::exp(-d * d / (2.0 * sigma * sigma));
            any_overlap = true;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::no_overlap) throw;
            weights[i] = -1.0;
        }
    }
    if (!any_overlap)
        throw Error(ErrorCode::no_overlap, "no training subject overlaps the test past window");

    std::vector<int> future_days;
    for (const auto* f : train_future)
        future_days.insert(future_days.end(), f->days.begin(), f->days.end());
    std::sort(future_days.begin(), future_days.end());
    future_days.erase(std::unique(future_days.begin(), future_days.end()), future_days.end());

    MaskedSeries pred;
    pred.days = future_days;
    pred.values = MatrixXd::Zero(static_cast<int>(future_days.size()), l);
    if (fallback) *fallback = false;

    for (std::size_t t = 0; t < future_days.size(); ++t) {
        double den = 0.0;
        int observers = 0;
        VectorXd num = VectorXd::Zero(l), mean = VectorXd::Zero(l);
        for (int i = 0; i < n; ++i) {
            int idx = train_future[i]->row_of(future_days[t]);
            if (idx < 0 || weights[i] < 0.0) continue;
            num += weights[i] * train_future[i]->values.row(idx).transpose();
            mean += train_future[i]->values.row(idx).transpose();
            den += weights[i];
            ++observers;
        }
        if (observers == 0) continue;
        if (den < 1e-300) {
            pred.values.row(static_cast<int>(t)) = mean.transpose() / observers;
            if (fallback) *fallback = true;
        } else {
            pred.values.row(static_cast<int>(t)) = num.transpose() / den;
        }
    }
    return pred;
}

double evaluate_forecast(const MaskedSeries& pred, const SeriesMatrix& truth,
                         int begin_day, int end_day, bool use_rmse) {
    double acc = 0.0;
    long entries = 0;
    for (int idx = 0; idx < truth.observed_count(); ++idx) {
        int day = truth.days[idx];
        if (day < begin_day || day >= end_day) continue;
        int p = pred.row_of(day);
        if (p < 0) continue;
        for (int i = 0; i < truth.row_len; ++i) {
            double diff = pred.values(p, i) - truth.values(idx, i);
            acc += use_rmse ? diff * diff : std::abs(diff);
            ++entries;
        }
    }
    if (entries == 0)
        throw Error(ErrorCode::no_ground_truth, "no observed truth in the window");
    return use_rmse ? std::sqrt(acc / entries) : acc / entries;
}

namespace {

std::vector<double> sigma_grid(std::vector<double> pairwise, const CvOptions& opts) {
    if (pairwise.empty())
        throw Error(ErrorCode::no_overlap, "no overlapping training pairs for bandwidth selection");
    double med = percentile_interpolated(pairwise, 50.0);
    if (med <= 0.0) med = 1.0;
    std::vector<double> grid;
    for (int g = 0; g < opts.grid_size; ++g) {
        double f = opts.grid_size == 1
                       ? 1.0
                       : std::pow(opts.hi_factor / opts.lo_factor,
                                  static_cast<double>(g) / (opts.grid_size - 1)) * opts.lo_factor;
        grid.push_back(f * med);
    }
    return grid;
}

std::vector<std::vector<int>> make_folds(int n, int folds) {
    std::vector<std::vector<int>> out(std::min(folds, n));
    for (int i = 0; i < n; ++i) out[i % out.size()].push_back(i);
    return out;
}

} // namespace

double select_sigma_coefficients(const std::vector<TrainPair>& pairs, const BasisSet& basis,
                                 const std::vector<const SeriesMatrix*>& train_future_truth,
                                 int future_begin, int future_end, const CvOptions& opts) {
    const int n = static_cast<int>(pairs.size());
    if (n < 2) throw Error(ErrorCode::empty_dataset, "need at least two training subjects");
    const int r = pairs.front().past.rank();

    std::vector<double> pairwise;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            for (int c = 0; c < r; ++c) {
                try {
                    pairwise.push_back(masked_distance(pairs[i].past.days, pairs[i].past.values,
                                                       pairs[j].past.days, pairs[j].past.values,
                                                       {c}, {c}));
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::no_overlap) throw;
                }
            }
    auto grid = sigma_grid(std::move(pairwise), opts);
    auto folds = make_folds(n, opts.folds);

    double best_sigma = grid.front();
    double best_err = std::numeric_limits<double>::infinity();
    for (double sigma : grid) {
        double err = 0.0;
        int count = 0;
        for (const auto& fold : folds) {
            std::vector<char> held(n, 0);
            for (int i : fold) held[i] = 1;
            std::vector<TrainPair> rest;
            for (int i = 0; i < n; ++i)
                if (!held[i]) rest.push_back(pairs[i]);
            for (int i : fold) {
                try {
                    KrForecast f = kr_forecast(rest, pairs[i].past, sigma);
                    SeriesMatrix recon = reconstruct(basis, f.prediction,
                                                     train_future_truth[i]->num_rows);
                    err += evaluate_forecast({recon.days, recon.values}, *train_future_truth[i],
                                             future_begin, future_end, opts.use_rmse);
                    ++count;
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::no_overlap &&
                        e.code() != ErrorCode::no_ground_truth)
                        throw;
                }
            }
        }
        if (count == 0) continue;
        err /= count;
        if (err < best_err) {
            best_err = err;
            best_sigma = sigma;
        }
    }
    return best_sigma;
}

double select_sigma_raw(const std::vector<const SeriesMatrix*>& train_past,
                        const std::vector<const SeriesMatrix*>& train_future,
                        int future_begin, int future_end, const CvOptions& opts) {
    const int n = static_cast<int>(train_past.size());
    if (n < 2) throw Error(ErrorCode::empty_dataset, "need at least two training subjects");
    const int l = train_past.front()->row_len;
    std::vector<int> all_cols;
    for (int i = 0; i < l; ++i) all_cols.push_back(i);

    std::vector<double> pairwise;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            try {
                pairwise.push_back(masked_distance(train_past[i]->days, train_past[i]->values,
                                                   train_past[j]->days, train_past[j]->values,
                                                   all_cols, all_cols));
            } catch (const Error& e) {
                if (e.code() != ErrorCode::no_overlap) throw;
            }
        }
    auto grid = sigma_grid(std::move(pairwise), opts);
    auto folds = make_folds(n, opts.folds);

    double best_sigma = grid.front();
    double best_err = std::numeric_limits<double>::infinity();
    for (double sigma : grid) {
        double err = 0.0;
        int count = 0;
        for (const auto& fold : folds) {
            std::vector<char> held(n, 0);
            for (int i : fold) held[i] = 1;
            std::vector<const SeriesMatrix*> rest_past, rest_future;
            for (int i = 0; i < n; ++i)
                if (!held[i]) {
                    rest_past.push_back(train_past[i]);
                    rest_future.push_back(train_future[i]);
                }
            for (int i : fold) {
                try {
                    MaskedSeries pred =
                        kr_raw_forecast(rest_past, rest_future, *train_past[i], sigma);
                    err += evaluate_forecast(pred, *train_future[i], future_begin, future_end,
                                             opts.use_rmse);
                    ++count;
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::no_overlap &&
                        e.code() != ErrorCode::no_ground_truth)
                        throw;
                }
            }
        }
        if (count == 0) continue;
        err /= count;
        if (err < best_err) {
            best_err = err;
            best_sigma = sigma;
        }
    }
    return best_sigma;
}

} // namespace tslr
