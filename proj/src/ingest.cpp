#include "tslr/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace tslr {

std::vector<Interval> sanitize_events(const EventLog& log) {
    for (const auto& e : log.events)
        if (!std::isfinite(e.timestamp_minutes) || e.timestamp_minutes < 0.0)
            throw Error(ErrorCode::malformed_log,
                        "bad timestamp in log for " + log.subject_id);

    std::vector<SleepEvent> events = log.events;
    std::stable_sort(events.begin(), events.end(),
                     [](const SleepEvent& a, const SleepEvent& b) {
                         return a.timestamp_minutes < b.timestamp_minutes;
                     });

    std::vector<Interval> intervals;
    double pending = -1.0;
    bool have_pending = false;
    for (const auto& e : events) {
        if (e.is_start) {
            pending = e.timestamp_minutes;  // an older unmatched start is dropped
            have_pending = true;
        } else if (have_pending && e.timestamp_minutes > pending) {
            intervals.push_back({pending, e.timestamp_minutes});
            have_pending = false;
        }
        // an end with no open start is dropped
    }

    // merge overlapping or touching intervals
    std::vector<Interval> merged;
    for (const auto& iv : intervals) {
        if (!merged.empty() && iv.start <= merged.back().end)
            merged.back().end = std::max(merged.back().end, iv.end);
        else
            merged.push_back(iv);
    }
    return merged;
}

SeriesMatrix reshape_series(const std::vector<std::pair<long, double>>& samples, int l,
                            const std::string& subject_id) {
    if (l < 2) throw Error(ErrorCode::invalid_period, "row length must be >= 2");
    if (samples.empty()) throw Error(ErrorCode::empty_series, "no samples");

    std::map<long, double> by_index;
    long max_index = 0;
    for (const auto& [idx, v] : samples) {
        if (idx < 1) throw Error(ErrorCode::invalid_period, "sample indices must be positive");
        by_index[idx] = v;
        max_index = std::max(max_index, idx);
    }

    const int T = static_cast<int>((max_index + l - 1) / l);
    SeriesMatrix m;
    m.subject_id = subject_id;
    m.num_rows = T;
    m.row_len = l;

    std::vector<VectorXd> rows;
    for (int t = 1; t <= T; ++t) {
        VectorXd row(l);
        bool complete = true;
        for (int i = 0; i < l; ++i) {
            auto it = by_index.find(static_cast<long>(t - 1) * l + i + 1);
            if (it == by_index.end()) {
                complete = false;
                break;
            }
            row[i] = it->second;
        }
        if (complete) {
            m.days.push_back(t);
            rows.push_back(row);
        }
    }
    if (rows.empty()) throw Error(ErrorCode::empty_series, "no complete rows");
    m.values.resize(static_cast<int>(rows.size()), l);
    for (std::size_t i = 0; i < rows.size(); ++i) m.values.row(static_cast<int>(i)) = rows[i];
    return m;
}

SeriesMatrix rasterize_events(const EventLog& log, int sample_minutes,
                              double period_minutes) {
    if (sample_minutes < 1 ||
        std::abs(period_minutes / sample_minutes - std::round(period_minutes / sample_minutes)) > 1e-9)
        throw Error(ErrorCode::invalid_period, "sample length must divide the period");
    const int l = static_cast<int>(std::round(period_minutes / sample_minutes));
    if (l < 2) throw Error(ErrorCode::invalid_period, "row length must be >= 2");
    if (log.events.empty()) throw Error(ErrorCode::empty_series, "no events for " + log.subject_id);

    std::vector<Interval> intervals = sanitize_events(log);

    // a day is observed iff at least one raw report falls on it
    std::set<int> observed;
    int T = 0;
    for (const auto& e : log.events) {
        int day = static_cast<int>(std::floor(e.timestamp_minutes / period_minutes)) + 1;
        observed.insert(day);
        T = std::max(T, day);
    }

    SeriesMatrix m;
    m.subject_id = log.subject_id;
    m.num_rows = T;
    m.row_len = l;
    m.days.assign(observed.begin(), observed.end());
    m.values = MatrixXd::Zero(static_cast<int>(m.days.size()), l);

    for (const auto& iv : intervals) {
        int first_day = static_cast<int>(std::floor(iv.start / period_minutes)) + 1;
        int last_day = static_cast<int>(std::ceil(iv.end / period_minutes));
        for (int day = first_day; day <= last_day && day <= T; ++day) {
            int row = m.row_of(day);
            if (row < 0) continue;  // interval mass on unobserved days is discarded
            double day_start = (day - 1) * period_minutes;
            double lo = std::max(iv.start, day_start);
            double hi = std::min(iv.end, day_start + period_minutes);
            if (hi <= lo) continue;
            int c0 = static_cast<int>(std::floor((lo - day_start) / sample_minutes));
            int c1 = static_cast<int>(std::ceil((hi - day_start) / sample_minutes));
            for (int c = c0; c < c1 && c < l; ++c) {
                double w0 = day_start + c * sample_minutes;
                double overlap = std::min(hi, w0 + sample_minutes) - std::max(lo, w0);
                if (overlap > 0) m.values(row, c) += overlap / sample_minutes;
            }
        }
    }
    m.values = m.values.cwiseMin(1.0);  // guards roundoff at window seams
    return m;
}

namespace {

// minutes of a clock window [a, b) (possibly wrapping midnight) that lie
// inside [lo, hi) expressed in day-local minutes
double clock_window_overlap(double lo, double hi, double a, double b, double period) {
    auto seg = [&](double s, double e) {
        double o = std::min(hi, e) - std::max(lo, s);
        return o > 0 ? o : 0.0;
    };
    if (a < b) return seg(a, b);
    return seg(0.0, b) + seg(a, period);  // wrapping window
}

std::vector<int> isolation_fixpoint(std::vector<int> days, int num_rows, int gap) {
    bool changed = true;
    while (changed) {
        changed = false;
        std::vector<int> kept;
        for (std::size_t i = 0; i < days.size(); ++i) {
            int before = i == 0 ? days[i] - 1 : days[i] - days[i - 1] - 1;
            int after = i + 1 == days.size() ? num_rows - days[i] : days[i + 1] - days[i] - 1;
            // gaps reaching past the series boundary count only in-range days
            if (before >= gap && after >= gap)
                changed = true;
            else
                kept.push_back(days[i]);
        }
        days.swap(kept);
    }
    return days;
}

SeriesMatrix keep_days(const SeriesMatrix& m, const std::vector<int>& days) {
    SeriesMatrix out;
    out.subject_id = m.subject_id;
    out.num_rows = m.num_rows;
    out.row_len = m.row_len;
    out.days = days;
    out.values.resize(static_cast<int>(days.size()), m.row_len);
    for (std::size_t i = 0; i < days.size(); ++i)
        out.values.row(static_cast<int>(i)) = m.values.row(m.row_of(days[i]));
    return out;
}

} // namespace

SeriesMatrix filter_implausible_days(const SeriesMatrix& m, const std::vector<Interval>& intervals,
                                     const FilterRules& rules, double period_minutes) {
    m.validate();
    rules.validate();
    const double max_sleep = rules.max_sleep_hours * 60.0;
    const double max_awake = rules.max_awake_hours * 60.0;

    std::vector<int> kept;
    for (int day : m.days) {
        double day_start = (day - 1) * period_minutes;
        double day_end = day_start + period_minutes;
        bool drop = false;

        for (const auto& iv : intervals) {
            if (iv.length() > max_sleep && iv.start < day_end && iv.end > day_start) {
                drop = true;
                break;
            }
        }
        if (!drop) {
            for (std::size_t k = 0; k + 1 < intervals.size(); ++k) {
                double gap_lo = intervals[k].end, gap_hi = intervals[k + 1].start;
                if (gap_hi - gap_lo <= max_awake || gap_lo >= day_end || gap_hi <= day_start)
                    continue;
                // a gap crossing unobserved days is a logging hole, not an
                // awake claim; only gaps inside contiguously observed days count
                int gd0 = static_cast<int>(std::floor(gap_lo / period_minutes)) + 1;
                int gd1 = static_cast<int>(std::ceil(gap_hi / period_minutes));
                bool all_observed = true;
                for (int gd = gd0; gd <= gd1 && all_observed; ++gd)
                    if (!m.is_observed(gd)) all_observed = false;
                if (all_observed) {
                    drop = true;
                    break;
                }
            }
        }
        if (!drop) {
            double night_sleep = 0.0;
            for (const auto& iv : intervals) {
                double lo = std::max(iv.start, day_start) - day_start;
                double hi = std::min(iv.end, day_end) - day_start;
                if (hi > lo)
                    night_sleep += clock_window_overlap(lo, hi, rules.night_start_minutes,
                                                        rules.night_end_minutes, period_minutes);
            }
            if (night_sleep <= 0.0) drop = true;
        }
        if (!drop) kept.push_back(day);
    }

    kept = isolation_fixpoint(kept, m.num_rows, rules.isolation_gap_days);
    return keep_days(m, kept);
}

SeriesMatrix filter_implausible_days(const SeriesMatrix& m, const FilterRules& rules,
                                     double period_minutes) {
    m.validate();
    rules.validate();
    const double sample_minutes = period_minutes / m.row_len;
    const double eps = 1e-9;
    const int max_sleep_cells = static_cast<int>(std::floor(rules.max_sleep_hours * 60.0 / sample_minutes));
    const int max_awake_cells = static_cast<int>(std::floor(rules.max_awake_hours * 60.0 / sample_minutes));

    std::vector<int> kept;
    for (int idx = 0; idx < m.observed_count(); ++idx) {
        const auto row = m.values.row(idx);
        bool drop = false;

        int run_sleep = 0, run_awake = 0;
        double night_sleep = 0.0;
        for (int c = 0; c < m.row_len; ++c) {
            double v = row[c];
            run_sleep = v >= 1.0 - eps ? run_sleep + 1 : 0;
            run_awake = v <= eps ? run_awake + 1 : 0;
            if (run_sleep > max_sleep_cells || run_awake > max_awake_cells) {
                drop = true;
                break;
            }
            double w0 = c * sample_minutes;
            night_sleep += v * clock_window_overlap(w0, w0 + sample_minutes,
                                                    rules.night_start_minutes,
                                                    rules.night_end_minutes, period_minutes);
        }
        if (!drop && night_sleep <= 0.0) drop = true;
        if (!drop) kept.push_back(m.days[idx]);
    }

    kept = isolation_fixpoint(kept, m.num_rows, rules.isolation_gap_days);
    return keep_days(m, kept);
}

Dataset filter_sparse_subjects(const Dataset& d, const FilterRules& rules) {
    rules.validate();
    Dataset out;
    out.grid = d.grid;
    for (const auto& s : d.series) {
        double frac = s.num_rows > 0
                          ? static_cast<double>(s.observed_count()) / s.num_rows
                          : 0.0;
        if (frac >= 1.0 - rules.max_missing_fraction) out.series.push_back(s);
    }
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

} // namespace

std::vector<EventLog> read_event_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line))
        throw Error(ErrorCode::malformed_log, "empty event file");
    if (split_csv_line(line) != std::vector<std::string>{"subject_id", "timestamp_minutes", "kind"})
        throw Error(ErrorCode::malformed_log, "unexpected event header: " + line);

    std::vector<EventLog> logs;
    std::map<std::string, std::size_t> index;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 3)
            throw Error(ErrorCode::malformed_log, "bad field count at line " + std::to_string(line_no));
        SleepEvent ev;
        try {
            ev.timestamp_minutes = std::stod(fields[1]);
        } catch (const std::exception&) {
            throw Error(ErrorCode::malformed_log, "bad timestamp at line " + std::to_string(line_no));
        }
        if (fields[2] == "start") ev.is_start = true;
        else if (fields[2] == "end") ev.is_start = false;
        else throw Error(ErrorCode::malformed_log, "unknown kind at line " + std::to_string(line_no));

        auto [it, fresh] = index.try_emplace(fields[0], logs.size());
        if (fresh) logs.push_back({fields[0], {}});
        logs[it->second].events.push_back(ev);
    }
    return logs;
}

std::vector<EventLog> read_event_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path);
    return read_event_csv(in);
}

} // namespace tslr
