#ifndef TSLR_INGEST_HPP
#define TSLR_INGEST_HPP

#include <iosfwd>
#include <utility>
#include <vector>

#include "tslr/types.hpp"

namespace tslr {

struct SleepEvent {
    double timestamp_minutes = 0.0;  // minutes since subject epoch
    bool is_start = true;
};

// Raw caregiver log: ordered begin/end reports for one subject.
struct EventLog {
    std::string subject_id;
    std::vector<SleepEvent> events;
};

// Half-open sleep interval [start, end) in minutes since subject epoch.
struct Interval {
    double start = 0.0;
    double end = 0.0;
    double length() const { return end - start; }
};

// Pair starts with ends and merge overlaps. Unmatched reports are dropped:
// a start superseded by a later start loses, an end with no open start is
// ignored. Throws malformed-log on negative or non-finite timestamps.
std::vector<Interval> sanitize_events(const EventLog& log);

// Reshape sparse samples (1-based index, value) into period-aligned rows of
// length l. A row is observed only when all l of its samples are present.
SeriesMatrix reshape_series(const std::vector<std::pair<long, double>>& samples, int l,
                            const std::string& subject_id = "");

// Fraction-asleep grid from an event log: entry (t, i) is the overlap of the
// sanitized sleep intervals with sample window i of day t, divided by the
// window length. Days carrying no raw event report are unobserved; interval
// mass falling on them is discarded.
SeriesMatrix rasterize_events(const EventLog& log, int sample_minutes,
                              double period_minutes = 1440.0);

// Implausible-day filter, interval-aware: run lengths come from the sanitized
// interval list so day boundaries and sampling do not distort them.
// Removes a day when a sleep interval longer than max_sleep_hours touches it,
// an awake gap longer than max_awake_hours touches it (only gaps lying within
// contiguously observed days count; gaps across unlogged days are logging
// holes, not awake claims), its own night window holds no sleep, or it is
// isolated by >= isolation_gap_days of missing days on both sides (applied
// repeatedly until stable, so the filter is idempotent). Values of surviving
// days are untouched.
SeriesMatrix filter_implausible_days(const SeriesMatrix& m, const std::vector<Interval>& intervals,
                                     const FilterRules& rules,
                                     double period_minutes = 1440.0);

// Grid-only variant for series without an event log. Runs are measured
// within each row from fully-asleep / fully-awake samples, which undercounts
// runs crossing midnight; the interval-aware overload is preferred when the
// log is available.
SeriesMatrix filter_implausible_days(const SeriesMatrix& m, const FilterRules& rules,
                                     double period_minutes = 1440.0);

// Drop subjects whose observed fraction |T|/T falls below
// 1 - max_missing_fraction. Order is preserved.
Dataset filter_sparse_subjects(const Dataset& d, const FilterRules& rules);

// Event log CSV: header `subject_id,timestamp_minutes,kind`, kind in
// {start, end}. Subjects appear in first-occurrence order.
std::vector<EventLog> read_event_csv(std::istream& in);
std::vector<EventLog> read_event_csv_file(const std::string& path);

} // namespace tslr

#endif
