#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "tslr/ingest.hpp"
#include "tslr/rng.hpp"

using namespace tslr;

namespace {

EventLog make_log(const std::string& id,
                  const std::vector<std::pair<double, double>>& sleeps) {
    EventLog log;
    log.subject_id = id;
    for (auto [s, e] : sleeps) {
        log.events.push_back({s, true});
        log.events.push_back({e, false});
    }
    return log;
}

double grid_sum_minutes(const SeriesMatrix& m, double sample_minutes) {
    return m.values.sum() * sample_minutes;
}

double interval_minutes_on_observed_days(const std::vector<Interval>& ivs,
                                         const SeriesMatrix& m, double period = 1440.0) {
    double total = 0.0;
    for (const auto& iv : ivs)
        for (int day : m.days) {
            double lo = std::max(iv.start, (day - 1) * period);
            double hi = std::min(iv.end, day * period);
            if (hi > lo) total += hi - lo;
        }
    return total;
}

} // namespace

TEST_CASE("reshape lays out consecutive samples row by row") {
    std::vector<std::pair<long, double>> samples;
    const double vals[6] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    for (long i = 0; i < 6; ++i) samples.push_back({i + 1, vals[i]});
    SeriesMatrix m = reshape_series(samples, 3);
    CHECK(m.num_rows == 2);
    CHECK(m.days == std::vector<int>{1, 2});
    CHECK(m.values(0, 0) == 0.1);
    CHECK(m.values(0, 2) == 0.3);
    CHECK(m.values(1, 0) == 0.4);
    CHECK(m.values(1, 2) == 0.6);
}

TEST_CASE("a gap in the samples becomes a missing row") {
    std::vector<std::pair<long, double>> samples;
    for (long i : {1, 2, 3, 7, 8, 9}) samples.push_back({i, 0.5});
    SeriesMatrix m = reshape_series(samples, 3);
    CHECK(m.num_rows == 3);
    CHECK(m.days == std::vector<int>{1, 3});
}

TEST_CASE("a partially present row is treated as missing") {
    std::vector<std::pair<long, double>> samples{{1, 0.1}, {2, 0.2}, {3, 0.3}, {4, 0.4}};
    SeriesMatrix m = reshape_series(samples, 3);
    CHECK(m.days == std::vector<int>{1});  // row 2 has only one of three samples
    CHECK(m.num_rows == 2);
}

TEST_CASE("diary-scale reshape round-trips the observed samples") {
    Rng rng(44);
    std::vector<std::pair<long, double>> samples;
    const int T = 730, l = 144;
    std::vector<char> present(T, 1);
    for (int t = 0; t < T; ++t)
        if (rng.uniform() < 0.3) present[t] = 0;
    for (int t = 0; t < T; ++t) {
        if (!present[t]) continue;
        for (int i = 0; i < l; ++i)
            samples.push_back({static_cast<long>(t) * l + i + 1, rng.uniform()});
    }
    SeriesMatrix m = reshape_series(samples, l);
    CHECK(m.num_rows == T);

    // flattening observed rows reproduces the input samples
    std::size_t at = 0;
    for (int idx = 0; idx < m.observed_count(); ++idx)
        for (int i = 0; i < l; ++i, ++at) {
            REQUIRE(at < samples.size());
            CHECK(samples[at].first == static_cast<long>(m.days[idx] - 1) * l + i + 1);
            CHECK(samples[at].second == m.values(idx, i));
        }
    CHECK(at == samples.size());
}

TEST_CASE("reshape rejects bad inputs") {
    CHECK_THROWS_AS(reshape_series({{1, 0.5}}, 1), Error);
    CHECK_THROWS_AS(reshape_series({}, 3), Error);
    try {
        reshape_series({}, 3);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::empty_series);
    }
}

TEST_CASE("event sanitization pairs starts with ends and drops strays") {
    EventLog log;
    log.subject_id = "x";
    log.events = {{100, true},  {50, false},   // stray end before any start
                  {200, false},                 // pairs with 100
                  {300, true},  {350, true},    // 300 superseded
                  {400, false}};
    auto ivs = sanitize_events(log);
    REQUIRE(ivs.size() == 2);
    CHECK(ivs[0].start == 100);
    CHECK(ivs[0].end == 200);
    CHECK(ivs[1].start == 350);
    CHECK(ivs[1].end == 400);

    EventLog bad;
    bad.subject_id = "y";
    bad.events = {{-5, true}, {10, false}};
    CHECK_THROWS_AS(sanitize_events(bad), Error);
}

TEST_CASE("full overlap of one sample window") {
    // window 5 of day 1 covers minutes [40, 50) at 10-minute sampling
    EventLog log = make_log("a", {{40, 50}});
    SeriesMatrix m = rasterize_events(log, 10);
    REQUIRE(m.days == std::vector<int>{1});
    for (int i = 0; i < m.row_len; ++i)
        CHECK(m.values(0, i) == (i == 4 ? 1.0 : 0.0));
}

TEST_CASE("half overlap gives a 0.5 fraction") {
    EventLog log = make_log("a", {{40, 45}});
    SeriesMatrix m = rasterize_events(log, 10);
    CHECK(m.values(0, 4) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(m.values.sum() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("a midnight-spanning interval lands its tail on the next row") {
    // 23:00 day 1 to 01:00 day 2; both days carry events so both observed
    EventLog log = make_log("a", {{23 * 60, 25 * 60}});
    SeriesMatrix m = rasterize_events(log, 10);
    REQUIRE(m.days == std::vector<int>{1, 2});
    double total = grid_sum_minutes(m, 10.0);
    CHECK(total == doctest::Approx(120.0).epsilon(1e-9));
    CHECK(m.values(1, 0) == 1.0);  // 00:00-00:10 of day 2
}

TEST_CASE("rasterization conserves logged sleep mass on observed days") {
    Rng rng(15);
    for (int trial = 0; trial < 20; ++trial) {
        EventLog log;
        log.subject_id = "m";
        double t = rng.uniform(0.0, 300.0);
        for (int k = 0; k < 40; ++k) {
            double sleep = rng.uniform(5.0, 600.0);
            double wake = rng.uniform(5.0, 900.0);
            log.events.push_back({t, true});
            log.events.push_back({t + sleep, false});
            t += sleep + wake;
        }
        SeriesMatrix m = rasterize_events(log, 10);
        auto ivs = sanitize_events(log);
        double expected = interval_minutes_on_observed_days(ivs, m);
        CHECK(grid_sum_minutes(m, 10.0) == doctest::Approx(expected).epsilon(1e-9));
        CHECK((m.values.array() >= 0.0).all());
        CHECK((m.values.array() <= 1.0).all());
    }
}

namespace {

// A self-contained plausible day: early-morning night sleep, an afternoon
// nap, and a late-evening sleep. No event spills into the neighboring days
// and inter-day awake gaps stay short when days are adjacent.
void add_plausible_day(EventLog& log, int day) {
    double base = (day - 1) * 1440.0;
    log.events.push_back({base + 30, true});             // 00:30
    log.events.push_back({base + 6 * 60 + 30, false});   // 06:30
    log.events.push_back({base + 13 * 60, true});        // 13:00 nap
    log.events.push_back({base + 14 * 60, false});       // 14:00
    log.events.push_back({base + 21 * 60 + 30, true});   // 21:30
    log.events.push_back({base + 23 * 60, false});       // 23:00
}

} // namespace

TEST_CASE("a 17-hour sleep run removes the days it touches") {
    EventLog log;
    log.subject_id = "s";
    add_plausible_day(log, 1);
    add_plausible_day(log, 2);
    // day 3: ordinary morning, then sleep 20:00 day 3 to 13:00 day 4 (17h)
    double base3 = 2 * 1440.0;
    log.events.push_back({base3 + 30, true});
    log.events.push_back({base3 + 6 * 60 + 30, false});
    log.events.push_back({base3 + 20 * 60, true});
    log.events.push_back({base3 + 1440 + 13 * 60, false});
    // day 4 evening, then a normal day 5
    log.events.push_back({3 * 1440 + 21 * 60 + 30.0, true});
    log.events.push_back({3 * 1440 + 23 * 60.0, false});
    add_plausible_day(log, 5);

    SeriesMatrix m = rasterize_events(log, 10);
    auto ivs = sanitize_events(log);
    SeriesMatrix f = filter_implausible_days(m, ivs, FilterRules{});
    CHECK(!f.is_observed(3));
    CHECK(!f.is_observed(4));
    CHECK(f.is_observed(1));
    CHECK(f.is_observed(2));
    CHECK(f.is_observed(5));
}

TEST_CASE("a day with night sleep and two naps survives the filter") {
    EventLog log;
    log.subject_id = "s";
    double base = 0.0;
    log.events.push_back({base + 10 * 60, true});
    log.events.push_back({base + 11 * 60, false});
    log.events.push_back({base + 15 * 60, true});
    log.events.push_back({base + 16 * 60, false});
    log.events.push_back({base + 22 * 60, true});
    log.events.push_back({base + 30 * 60, false});
    add_plausible_day(log, 2);

    SeriesMatrix m = rasterize_events(log, 10);
    SeriesMatrix f = filter_implausible_days(m, sanitize_events(log), FilterRules{});
    CHECK(f.is_observed(1));
}

TEST_CASE("a sleepless night removes the day") {
    EventLog log;
    log.subject_id = "s";
    // day 1: only a mid-day nap, nothing in [21:00, 07:00)
    log.events.push_back({12 * 60.0, true});
    log.events.push_back({14 * 60.0, false});
    add_plausible_day(log, 2);
    SeriesMatrix m = rasterize_events(log, 10);
    SeriesMatrix f = filter_implausible_days(m, sanitize_events(log), FilterRules{});
    CHECK(!f.is_observed(1));
    CHECK(f.is_observed(2));
}

TEST_CASE("isolation requires the gap on both sides") {
    // observed day 10 with 4 missing before and 6 after: kept
    EventLog log;
    log.subject_id = "s";
    for (int day : {1, 2, 3, 4, 5, 10, 17, 18, 19, 20}) add_plausible_day(log, day);
    SeriesMatrix m = rasterize_events(log, 10);
    SeriesMatrix f = filter_implausible_days(m, sanitize_events(log), FilterRules{});
    CHECK(f.is_observed(10));

    // 5 missing on both sides: removed
    EventLog log2;
    log2.subject_id = "s2";
    for (int day : {1, 2, 3, 4, 5, 11, 17, 18, 19, 20}) add_plausible_day(log2, day);
    SeriesMatrix m2 = rasterize_events(log2, 10);
    SeriesMatrix f2 = filter_implausible_days(m2, sanitize_events(log2), FilterRules{});
    CHECK(!f2.is_observed(11));
}

TEST_CASE("isolation matches the bitmask oracle across gap patterns") {
    Rng rng(61);
    FilterRules rules;
    for (int trial = 0; trial < 40; ++trial) {
        const int T = 30;
        EventLog log;
        log.subject_id = "s";
        for (int day = 1; day <= T; ++day)
            if (rng.uniform() < 0.4) add_plausible_day(log, day);
        if (log.events.empty()) continue;
        SeriesMatrix m = rasterize_events(log, 10);
        std::vector<char> obs_mask(m.num_rows, 0);
        for (int day : m.days) obs_mask[day - 1] = 1;

        SeriesMatrix f = filter_implausible_days(m, sanitize_events(log), rules);
        auto want = oracles::isolation_oracle(obs_mask, rules.isolation_gap_days);
        CHECK(f.days == want);
    }
}

TEST_CASE("the implausible-day filter is idempotent") {
    Rng rng(62);
    FilterRules rules;
    EventLog log;
    log.subject_id = "s";
    for (int day = 1; day <= 40; ++day)
        if (rng.uniform() < 0.5) add_plausible_day(log, day);
    log.events.push_back({10 * 1440 + 20 * 60.0, true});
    log.events.push_back({11 * 1440 + 14 * 60.0, false});  // 18h run

    SeriesMatrix m = rasterize_events(log, 10);
    auto ivs = sanitize_events(log);
    SeriesMatrix once = filter_implausible_days(m, ivs, rules);
    SeriesMatrix twice = filter_implausible_days(once, ivs, rules);
    CHECK(once.days == twice.days);
    CHECK((once.values - twice.values).lpNorm<Eigen::Infinity>() == 0.0);

    SeriesMatrix g_once = filter_implausible_days(m, rules);
    SeriesMatrix g_twice = filter_implausible_days(g_once, rules);
    CHECK(g_once.days == g_twice.days);
}

TEST_CASE("grid-only filter catches within-row extremes") {
    FilterRules rules;
    const int l = 144;
    MatrixXd values = MatrixXd::Zero(3, l);
    // day 1: 17h continuous sleep starting at 02:00
    for (int i = 12; i < 12 + 102; ++i) values(0, i) = 1.0;
    // day 2: plausible: sleep 22:00-24:00 and 00:00-02:00 plus naps
    for (int i = 132; i < 144; ++i) values(1, i) = 1.0;
    for (int i = 0; i < 12; ++i) values(1, i) = 1.0;
    for (int i = 80; i < 86; ++i) values(1, i) = 1.0;
    // day 3: sleep only 10:00-12:00, nothing at night
    for (int i = 60; i < 72; ++i) values(2, i) = 1.0;

    SeriesMatrix m;
    m.subject_id = "g";
    m.num_rows = 3;
    m.row_len = l;
    m.days = {1, 2, 3};
    m.values = values;
    SeriesMatrix f = filter_implausible_days(m, rules);
    CHECK(!f.is_observed(1));
    CHECK(f.is_observed(2));
    CHECK(!f.is_observed(3));
}

TEST_CASE("sparse subjects are dropped by observed fraction") {
    auto make_subject = [](const std::string& id, int observed, int total) {
        SeriesMatrix m;
        m.subject_id = id;
        m.num_rows = total;
        m.row_len = 4;
        for (int t = 1; t <= observed; ++t) m.days.push_back(t);
        m.values = MatrixXd::Constant(observed, 4, 0.5);
        return m;
    };
    Dataset d;
    d.series.push_back(make_subject("a", 50, 700));   // ~7%: dropped
    d.series.push_back(make_subject("b", 80, 700));   // ~11.4%: kept
    d.series.push_back(make_subject("c", 70, 700));   // exactly 10%: kept
    Dataset out = filter_sparse_subjects(d, FilterRules{});
    REQUIRE(out.series.size() == 2);
    CHECK(out.series[0].subject_id == "b");
    CHECK(out.series[1].subject_id == "c");
}

TEST_CASE("event csv parsing and error reporting") {
    std::istringstream good(
        "subject_id,timestamp_minutes,kind\n"
        "a,100,start\n"
        "a,200,end\n"
        "b,50,start\n"
        "a,300,start\n"
        "b,90,end\n");
    auto logs = read_event_csv(good);
    REQUIRE(logs.size() == 2);
    CHECK(logs[0].subject_id == "a");
    CHECK(logs[0].events.size() == 3);
    CHECK(logs[1].events.size() == 2);

    std::istringstream bad_kind(
        "subject_id,timestamp_minutes,kind\n"
        "a,100,sleep\n");
    CHECK_THROWS_AS(read_event_csv(bad_kind), Error);

    std::istringstream bad_header("id,time,kind\n");
    try {
        read_event_csv(bad_header);
        FAIL("expected malformed-log");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::malformed_log);
    }
}
