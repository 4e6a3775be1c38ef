#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tslr/analytics.hpp"
#include "tslr/config.hpp"
#include "tslr/ingest.hpp"
#include "tslr/model_io.hpp"
#include "tslr/solver.hpp"
#include "tslr/synth.hpp"

namespace fs = std::filesystem;
using namespace tslr;

namespace {

constexpr const char* kVersion = "tslr 0.1.0";

std::string digest_path(const std::string& path) {
    if (!fs::exists(path)) return "missing";
    if (fs::is_directory(path)) {
        std::vector<std::string> files;
        for (const auto& e : fs::recursive_directory_iterator(path))
            if (e.is_regular_file()) files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& f : files) {
            for (char ch : file_digest(f)) {
                h ^= static_cast<unsigned char>(ch);
                h *= 0x100000001b3ULL;
            }
        }
        char out[17];
        std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
        return out;
    }
    return file_digest(path);
}

void write_manifest(const std::string& out_path, const std::string& command,
                    const RunConfig& cfg,
                    const std::vector<std::pair<std::string, std::string>>& inputs) {
    std::ostringstream m;
    m << "version=" << kVersion << "\n"
      << "command=" << command << "\n";
    for (const auto& [name, path] : inputs)
        m << "input." << name << "=" << digest_path(path) << "\n";
    m << cfg.echo();
    std::string path = fs::is_directory(out_path) ? out_path + "/manifest.txt"
                                                  : out_path + ".manifest.txt";
    atomic_write(path, m.str());
}

void echo_config(const RunConfig& cfg) {
    std::istringstream lines(cfg.echo());
    std::string line;
    std::cout << "config:";
    while (std::getline(lines, line)) std::cout << " " << line;
    std::cout << "\n";
}

std::pair<int, int> parse_window(const std::string& s) {
    auto colon = s.find(':');
    if (colon == std::string::npos)
        throw Error(ErrorCode::invalid_config, "window must be begin:end, got '" + s + "'");
    try {
        return {std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
    } catch (const std::exception&) {
        throw Error(ErrorCode::invalid_config, "bad window '" + s + "'");
    }
}

std::string format_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Flags {
    std::string config_file;
    std::string events, data, out, model, train, test, matrix, spec;
    std::string past, future, components;
    int rank = -1, k = -1, svd_k = -1, component = -1, sample_minutes = -1;
    int threads = -1, restarts = -1;
    double lambda = -1.0, percentile = -1.0, sigma = -1.0;
    long long seed = -1;
    bool raw = false, rmse = false;
};

RunConfig resolve_config(const Flags& f) {
    RunConfig cfg;
    if (const char* env = std::getenv("TSLR_THREADS")) cfg.apply("threads", env);
    if (!f.config_file.empty()) cfg.apply_file(f.config_file);
    if (f.threads >= 0) cfg.apply("threads", std::to_string(f.threads));
    if (f.seed >= 0) cfg.apply("seed", std::to_string(f.seed));
    if (f.rank >= 0) cfg.apply("rank", std::to_string(f.rank));
    if (f.lambda >= 0) cfg.apply("lambda", format_g(f.lambda));
    if (f.k >= 0) cfg.apply("cluster_k", std::to_string(f.k));
    if (f.restarts >= 0) cfg.apply("kmeans_restarts", std::to_string(f.restarts));
    if (f.percentile >= 0) cfg.apply("outlier_percentile", format_g(f.percentile));
    if (f.sigma >= 0) cfg.apply("sigma", format_g(f.sigma));
    if (f.sample_minutes >= 0) cfg.apply("sample_minutes", std::to_string(f.sample_minutes));
    if (!f.components.empty()) cfg.apply("components", f.components);
    if (f.rmse) cfg.apply("error_metric", "rmse");
    cfg.fit.threads = cfg.threads;
    cfg.fit.seed = cfg.seed;
    return cfg;
}

int run_ingest(const Flags& f) {
    RunConfig cfg = resolve_config(f);
    echo_config(cfg);
    auto logs = read_event_csv_file(f.events);

    Dataset d;
    d.grid.sample_minutes = cfg.sample_minutes;
    int dropped_days = 0, empty_subjects = 0;
    for (const auto& log : logs) {
        SeriesMatrix m = rasterize_events(log, cfg.sample_minutes);
        auto intervals = sanitize_events(log);
        SeriesMatrix filtered = filter_implausible_days(m, intervals, cfg.rules);
        dropped_days += m.observed_count() - filtered.observed_count();
        if (filtered.days.empty()) {
            ++empty_subjects;
            continue;
        }
        d.series.push_back(std::move(filtered));
    }
    Dataset kept = filter_sparse_subjects(d, cfg.rules);
    save_dataset(kept, f.out);
    write_manifest(f.out, "ingest", cfg, {{"events", f.events}});
    std::cout << "ingest: subjects " << logs.size() << " -> " << kept.series.size()
              << " (" << empty_subjects << " emptied, "
              << d.series.size() - kept.series.size() << " sparse), days dropped "
              << dropped_days << "\n";
    return 0;
}

int run_fit(const Flags& f) {
    RunConfig cfg = resolve_config(f);
    echo_config(cfg);
    Dataset d = load_dataset(f.data);
    FactorModel m = fit(d, cfg.rank, cfg.lambda, cfg.fit);
    save_model(m, f.out);
    write_manifest(f.out, "fit", cfg, {{"data", f.data}});
    std::cout << "fit: rank=" << cfg.rank << " lambda=" << cfg.lambda << " iterations="
              << m.iterations << " converged=" << (m.converged ? 1 : 0)
              << " objective=" << format_g(m.objective_trace.back()) << "\n";
    return 0;
}

int run_svd(const Flags& f) {
    RunConfig cfg = resolve_config(f);
    echo_config(cfg);
    Dataset d = load_dataset(f.data);
    auto sv = singular_spectrum(d, f.svd_k);
    std::ostringstream out;
    out << "index,singular_value\n";
    for (std::size_t i = 0; i < sv.size(); ++i)
        out << i + 1 << "," << format_g(sv[i]) << "\n";
    if (!f.out.empty()) {
        atomic_write(f.out, out.str());
        write_manifest(f.out, "svd", cfg, {{"data", f.data}});
    }
    std::cout << out.str();
    return 0;
}

int run_trends(const Flags& f) {
    RunConfig cfg = resolve_config(f);
    echo_config(cfg);
    FactorModel m = load_model(f.model);
    TrendStats stats = trend_stats(m);
    std::ostringstream out;
    out << "component,day,p10,p25,p50,p75,p90\n";
    for (std::size_t j = 0; j < stats.components.size(); ++j) {
        const auto& comp = stats.components[j];
        for (std::size_t i = 0; i < comp.days.size(); ++i) {
            out << j + 1 << "," << comp.days[i];
            for (int p = 0; p < 5; ++p) out << "," << format_g(comp.values(static_cast<int>(i), p));
            out << "\n";
        }
    }
    atomic_write(f.out, out.str());
    write_manifest(f.out, "trends", cfg, {{"model", f.model}});
    std::cout << "trends: " << stats.components.size() << " components -> " << f.out << "\n";
    return 0;
}

int run_outliers(const Flags& f) {
    RunConfig cfg = resolve_config(f);
    echo_config(cfg);
    FactorModel m = load_model(f.model);
    if (f.component < 1 || f.component > m.rank())
        throw Error(ErrorCode::invalid_config, "component outside 1..rank");
    OutlierReport report = detect_outliers(m, f.component - 1, cfg.outlier_percentile);
    std::ostringstream out;
    out << "subject,distance,flagged\n";
    std::vector<char> is_flagged(report.subject_ids.size(), 0);
    for (int idx : report.flagged) is_flagged[idx] = 1;
    for (std::size_t i = 0; i < report.subject_ids.size(); ++i)
        out << report.subject_ids[i] << "," << format_g(report.distances[i]) << ","
            << int(is_flagged[i]) << "\n";
    atomic_write(f.out, out.str());
    write_manifest(f.out, "outliers", cfg, {{"model", f.model}});
    std::cout << "outliers: component " << f.component << " threshold "
              << format_g(report.threshold) << " flagged " << report.flagged.size() << "/"
              << report.subject_ids.size() << "\n";
    return 0;
}

int run_cluster(const Flags& f) {
    RunConfig cfg = resolve_config(f);
    echo_config(cfg);
    KmeansOptions opts;
    opts.seed = cfg.seed;
    opts.restarts = cfg.kmeans_restarts;

    ClusterAssignment result;
    std::vector<std::string> ids;
    if (f.raw) {
        Dataset d = load_dataset(f.data);
        for (const auto& s : d.series) ids.push_back(s.subject_id);
        result = kmeans_raw(d, cfg.cluster_k, opts);
    } else {
        FactorModel m = load_model(f.model);
        for (const auto& c : m.coeffs) ids.push_back(c.subject_id);
        result = kmeans_coefficients(m, cfg.cluster_k, cfg.component_indices(m.rank()), opts);
    }

    std::ostringstream out;
    out << "subject,cluster\n";
    for (std::size_t i = 0; i < ids.size(); ++i)
        out << ids[i] << "," << result.labels[i] + 1 << "\n";
    atomic_write(f.out, out.str());

    std::ostringstream cent;
    cent << "cluster,day";
    for (int j = 1; j <= static_cast<int>(result.centroids.front().values.cols()); ++j)
        cent << ",v" << j;
    cent << "\n";
    for (int c = 0; c < result.k; ++c) {
        const auto& ms = result.centroids[c];
        for (std::size_t i = 0; i < ms.days.size(); ++i) {
            cent << c + 1 << "," << ms.days[i];
            for (int j = 0; j < ms.values.cols(); ++j)
                cent << "," << format_g(ms.values(static_cast<int>(i), j));
            cent << "\n";
        }
    }
    std::string cent_path = f.out + ".centroids.csv";
    atomic_write(cent_path, cent.str());
    write_manifest(f.out, "cluster", cfg,
                   {{f.raw ? "data" : "model", f.raw ? f.data : f.model}});
    std::cout << "cluster: k=" << cfg.cluster_k << " cost=" << format_g(result.cost) << " -> "
              << f.out << "\n";
    return 0;
}

int run_forecast(const Flags& f) {
    RunConfig cfg = resolve_config(f);
    echo_config(cfg);
    auto [past_begin, past_end] = parse_window(f.past);
    auto [future_begin, future_end] = parse_window(f.future);
    ForecastTask task;
    task.past_begin = past_begin;
    task.past_end = past_end;
    task.future_begin = future_begin;
    task.future_end = future_end;
    task.min_observed_fraction = cfg.min_observed_fraction;
    task.sigma = cfg.sigma;
    task.validate();

    FactorModel model = load_model(f.model);
    Dataset train = load_dataset(f.train);
    Dataset test = load_dataset(f.test);

    // training subjects with adequately observed past and future windows
    std::vector<TrainPair> pairs;
    std::vector<const SeriesMatrix*> train_past, train_future;
    std::vector<SeriesMatrix> train_past_store, train_future_store;
    train_past_store.reserve(train.series.size());
    train_future_store.reserve(train.series.size());
    for (const auto& s : train.series) {
        const CoefficientSet* c = model.find(s.subject_id);
        if (!c) continue;
        if (window_observed_fraction(s.days, task.past_begin, task.past_end) <
                task.min_observed_fraction ||
            window_observed_fraction(s.days, task.future_begin, task.future_end) <
                task.min_observed_fraction)
            continue;
        pairs.push_back({restrict_window(*c, task.past_begin, task.past_end),
                         restrict_window(*c, task.future_begin, task.future_end)});
        train_past_store.push_back(restrict_window(s, task.past_begin, task.past_end));
        train_future_store.push_back(restrict_window(s, task.future_begin, task.future_end));
    }
    for (std::size_t i = 0; i < train_past_store.size(); ++i) {
        train_past.push_back(&train_past_store[i]);
        train_future.push_back(&train_future_store[i]);
    }
    if (pairs.empty()) throw Error(ErrorCode::empty_dataset, "no eligible training subjects");

    double sigma_coeff = task.sigma, sigma_raw = task.sigma;
    if (task.sigma <= 0.0) {
        CvOptions cv = cfg.cv;
        cv.use_rmse = cfg.use_rmse;
        sigma_coeff = select_sigma_coefficients(pairs, model.basis, train_future,
                                                task.future_begin, task.future_end, cv);
        sigma_raw = select_sigma_raw(train_past, train_future, task.future_begin,
                                     task.future_end, cv);
    }

    MaskedSeries mean_pred = mean_baseline(train_future);

    fs::create_directories(f.out);
    std::ostringstream per_subject;
    per_subject << "subject,mean,kr_raw,kr_nmfts,rank_gt\n";
    std::vector<double> e_mean, e_raw, e_kr, e_gt;
    int skipped = 0;
    for (const auto& s : test.series) {
        if (window_observed_fraction(s.days, task.past_begin, task.past_end) <
                task.min_observed_fraction ||
            window_observed_fraction(s.days, task.future_begin, task.future_end) <
                task.min_observed_fraction) {
            ++skipped;
            continue;
        }
        CoefficientSet past_coeffs = fit_coefficients_fixed_basis(
            s, model.basis, model.lambda, task.past_begin, task.past_end, cfg.fit);
        KrForecast kr = kr_forecast(pairs, past_coeffs, sigma_coeff);
        SeriesMatrix kr_recon = reconstruct(model.basis, kr.prediction, s.num_rows);
        MaskedSeries raw_pred = kr_raw_forecast(train_past, train_future,
                                                restrict_window(s, task.past_begin, task.past_end),
                                                sigma_raw);
        CoefficientSet gt_coeffs = fit_coefficients_fixed_basis(
            s, model.basis, model.lambda, task.future_begin, task.future_end, cfg.fit);
        SeriesMatrix gt_recon = reconstruct(model.basis, gt_coeffs, s.num_rows);

        double em = evaluate_forecast(mean_pred, s, task.future_begin, task.future_end, cfg.use_rmse);
        double er = evaluate_forecast(raw_pred, s, task.future_begin, task.future_end, cfg.use_rmse);
        double ek = evaluate_forecast({kr_recon.days, kr_recon.values}, s, task.future_begin,
                                      task.future_end, cfg.use_rmse);
        double eg = evaluate_forecast({gt_recon.days, gt_recon.values}, s, task.future_begin,
                                      task.future_end, cfg.use_rmse);
        e_mean.push_back(em);
        e_raw.push_back(er);
        e_kr.push_back(ek);
        e_gt.push_back(eg);
        per_subject << s.subject_id << "," << format_g(em) << "," << format_g(er) << ","
                    << format_g(ek) << "," << format_g(eg) << "\n";
        atomic_write(f.out + "/" + s.subject_id + ".csv", matrix_to_csv(kr_recon));
    }
    if (e_mean.empty()) throw Error(ErrorCode::no_ground_truth, "no eligible test subjects");

    auto mean_std = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= v.size();
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        return std::pair<double, double>(mean, v.size() > 1 ? std::sqrt(var / (v.size() - 1)) : 0.0);
    };
    std::ostringstream summary;
    summary << "method,error,std\n";
    const char* names[4] = {"mean", "kr_raw", "kr_nmfts", "rank_gt"};
    const std::vector<double>* cols[4] = {&e_mean, &e_raw, &e_kr, &e_gt};
    for (int i = 0; i < 4; ++i) {
        auto [m, s] = mean_std(*cols[i]);
        summary << names[i] << "," << format_g(m) << "," << format_g(s) << "\n";
    }
    atomic_write(f.out + "/summary.csv", summary.str());
    atomic_write(f.out + "/per_subject.csv", per_subject.str());
    write_manifest(f.out, "forecast", cfg,
                   {{"model", f.model}, {"train", f.train}, {"test", f.test}});
    std::cout << "forecast: " << e_mean.size() << " test subjects (" << skipped
              << " skipped), sigma_nmfts=" << format_g(sigma_coeff)
              << " sigma_raw=" << format_g(sigma_raw) << " -> " << f.out << "/summary.csv\n";
    std::cout << summary.str();
    return 0;
}

int run_synth(const Flags& f) {
    RunConfig cfg = resolve_config(f);
    echo_config(cfg);
    SynthSpec spec;
    for (const auto& [key, value] : read_key_value_file(f.spec)) {
        if (key == "subjects") spec.subjects = std::stoi(value);
        else if (key == "periods") spec.periods = std::stoi(value);
        else if (key == "row_len") spec.row_len = std::stoi(value);
        else if (key == "rank") spec.rank = std::stoi(value);
        else if (key == "noise_std") spec.noise_std = std::stod(value);
        else if (key == "missing_fraction") spec.missing_fraction = std::stod(value);
        else if (key == "seed") spec.seed = std::stoull(value);
        else if (key == "overlapping_supports") spec.overlapping_supports = value == "1";
        else throw Error(ErrorCode::invalid_config, "unknown synth key '" + key + "'");
    }
    GroundTruth gt = generate(spec);
    save_dataset(gt.observed, f.out);
    FactorModel truth;
    truth.basis = gt.basis;
    truth.coeffs = gt.coeffs;
    truth.lambda = 0.0;
    save_model(truth, f.out + "/truth");
    write_manifest(f.out, "synth", cfg, {{"spec", f.spec}});
    std::cout << "synth: " << spec.subjects << " subjects, " << spec.periods << "x"
              << spec.row_len << " rank " << spec.rank << " -> " << f.out << "\n";
    return 0;
}

int run_render(const Flags& f) {
    RunConfig cfg = resolve_config(f);
    echo_config(cfg);
    std::ifstream in(f.matrix);
    if (!in) throw Error(ErrorCode::io_failure, "cannot open " + f.matrix);
    SeriesMatrix m = matrix_from_csv(in, fs::path(f.matrix).stem().string());
    atomic_write(f.out, matrix_to_pgm(m));
    write_manifest(f.out, "render", cfg, {{"matrix", f.matrix}});
    std::cout << "render: " << m.num_rows << "x" << m.row_len << " -> " << f.out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Time-smoothed nonnegative factor models for cohorts of time series"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    Flags f;
    app.add_option("--threads", f.threads, "worker thread cap (env TSLR_THREADS)");
    app.add_option("--seed", f.seed, "random seed");
    app.add_option("--config", f.config_file, "key=value config file");

    auto* ingest = app.add_subcommand("ingest", "events CSV -> filtered matrix dataset");
    ingest->add_option("--events", f.events, "event log CSV")->required();
    ingest->add_option("--sample-minutes", f.sample_minutes, "sample window minutes");
    ingest->add_option("--rules", f.config_file, "filter rules config file");
    ingest->add_option("--out", f.out, "output dataset directory")->required();

    auto* fitc = app.add_subcommand("fit", "fit the factor model");
    fitc->add_option("--data", f.data, "dataset directory")->required();
    fitc->add_option("--rank", f.rank, "number of basis functions");
    fitc->add_option("--lambda", f.lambda, "smoothing weight");
    fitc->add_option("--out", f.out, "output model directory")->required();

    auto* svd = app.add_subcommand("svd", "singular spectrum of the stacked rows");
    svd->add_option("--data", f.data, "dataset directory")->required();
    svd->add_option("-k", f.svd_k, "number of singular values")->required();
    svd->add_option("--out", f.out, "optional output CSV");

    auto* trends = app.add_subcommand("trends", "cohort percentile curves per component");
    trends->add_option("--model", f.model, "model directory")->required();
    trends->add_option("--out", f.out, "output CSV")->required();

    auto* outliers = app.add_subcommand("outliers", "distances to the component median");
    outliers->add_option("--model", f.model, "model directory")->required();
    outliers->add_option("--component", f.component, "component (1-based)")->required();
    outliers->add_option("--percentile", f.percentile, "flag threshold percentile");
    outliers->add_option("--out", f.out, "output CSV")->required();

    auto* cluster = app.add_subcommand("cluster", "k-means under the masked metric");
    cluster->add_option("--model", f.model, "model directory");
    cluster->add_option("--data", f.data, "dataset directory (raw mode)");
    cluster->add_option("-k", f.k, "number of clusters");
    cluster->add_option("--components", f.components, "e.g. 1,2,3 (1-based)");
    cluster->add_option("--restarts", f.restarts, "seeded restarts");
    cluster->add_flag("--raw", f.raw, "cluster raw rows instead of coefficients");
    cluster->add_option("--out", f.out, "output CSV")->required();

    auto* forecast = app.add_subcommand("forecast", "kernel-regression forecasts and baselines");
    forecast->add_option("--model", f.model, "model directory (fit on train)")->required();
    forecast->add_option("--train", f.train, "training dataset directory")->required();
    forecast->add_option("--test", f.test, "test dataset directory")->required();
    forecast->add_option("--past", f.past, "past window begin:end")->required();
    forecast->add_option("--future", f.future, "future window begin:end")->required();
    forecast->add_option("--sigma", f.sigma, "kernel bandwidth (default: cross-validated)");
    forecast->add_flag("--rmse", f.rmse, "report RMSE instead of MAE");
    forecast->add_option("--out", f.out, "output directory")->required();

    auto* synth = app.add_subcommand("synth", "seeded synthetic cohort with ground truth");
    synth->add_option("--spec", f.spec, "synth spec file")->required();
    synth->add_option("--out", f.out, "output directory")->required();

    auto* render = app.add_subcommand("render", "matrix CSV -> grayscale PGM");
    render->add_option("--matrix", f.matrix, "matrix CSV")->required();
    render->add_option("--out", f.out, "output PGM")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage problems exit 2, --help exits 0
    }

    try {
        if (app.got_subcommand(ingest)) return run_ingest(f);
        if (app.got_subcommand(fitc)) return run_fit(f);
        if (app.got_subcommand(svd)) return run_svd(f);
        if (app.got_subcommand(trends)) return run_trends(f);
        if (app.got_subcommand(outliers)) return run_outliers(f);
        if (app.got_subcommand(cluster)) return run_cluster(f);
        if (app.got_subcommand(forecast)) return run_forecast(f);
        if (app.got_subcommand(synth)) return run_synth(f);
        if (app.got_subcommand(render)) return run_render(f);
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
