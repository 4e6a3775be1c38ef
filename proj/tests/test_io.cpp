#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "tslr/config.hpp"
#include "tslr/model_io.hpp"
#include "tslr/solver.hpp"
#include "tslr/synth.hpp"

using namespace tslr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("tslr_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

} // namespace

TEST_CASE("matrix csv round trip") {
    SynthSpec spec;
    spec.subjects = 2;
    spec.periods = 12;
    spec.row_len = 6;
    spec.rank = 2;
    spec.missing_fraction = 0.3;
    spec.seed = 11;
    GroundTruth gt = generate(spec);
    const auto& m = gt.observed.series[0];

    std::string csv = matrix_to_csv(m);
    std::istringstream in(csv);
    SeriesMatrix back = matrix_from_csv(in, m.subject_id);
    CHECK(back.days == m.days);
    CHECK(back.row_len == m.row_len);
    // values survive at the six-digit precision of the format
    CHECK((back.values - m.values).lpNorm<Eigen::Infinity>() < 5e-7);

    // header line matches the declared format
    CHECK(csv.rfind("day,c1,c2,c3,c4,c5,c6\n", 0) == 0);
}

TEST_CASE("dataset directory round trip keeps num_rows") {
    TempDir dir;
    SynthSpec spec;
    spec.subjects = 3;
    spec.periods = 14;
    spec.row_len = 6;
    spec.rank = 2;
    spec.missing_fraction = 0.5;
    spec.seed = 12;
    GroundTruth gt = generate(spec);
    save_dataset(gt.observed, dir.str());
    Dataset back = load_dataset(dir.str());
    REQUIRE(back.series.size() == gt.observed.series.size());
    for (std::size_t n = 0; n < back.series.size(); ++n) {
        CHECK(back.series[n].subject_id == gt.observed.series[n].subject_id);
        CHECK(back.series[n].days == gt.observed.series[n].days);
        CHECK(back.series[n].num_rows == gt.observed.series[n].num_rows);
    }
}

TEST_CASE("model directory round trip is lossless") {
    TempDir dir;
    SynthSpec spec;
    spec.subjects = 3;
    spec.periods = 20;
    spec.row_len = 8;
    spec.rank = 2;
    spec.noise_std = 0.02;
    spec.seed = 13;
    GroundTruth gt = generate(spec);
    FitOptions opts;
    opts.seed = 13;
    opts.max_outer = 5;
    FactorModel m = fit(gt.observed, 2, 10.0, opts);

    save_model(m, dir.str());
    FactorModel back = load_model(dir.str());
    CHECK(back.lambda == m.lambda);
    CHECK(back.iterations == m.iterations);
    CHECK((back.basis.functions - m.basis.functions).lpNorm<Eigen::Infinity>() == 0.0);
    REQUIRE(back.coeffs.size() == m.coeffs.size());
    for (std::size_t n = 0; n < m.coeffs.size(); ++n) {
        CHECK(back.coeffs[n].days == m.coeffs[n].days);
        CHECK((back.coeffs[n].values - m.coeffs[n].values).lpNorm<Eigen::Infinity>() == 0.0);
    }
}

TEST_CASE("atomic write leaves no temp file and replaces content") {
    TempDir dir;
    std::string path = dir.str() + "/out.txt";
    atomic_write(path, "one");
    atomic_write(path, "two");
    std::ifstream in(path);
    std::string content;
    std::getline(in, content);
    CHECK(content == "two");
    CHECK(!fs::exists(path + ".tmp"));
}

TEST_CASE("pgm rendering maps values and missing rows") {
    SeriesMatrix m;
    m.subject_id = "p";
    m.num_rows = 3;
    m.row_len = 2;
    m.days = {1, 3};
    m.values.resize(2, 2);
    m.values << 0.0, 1.0, 0.5, 0.25;
    std::string pgm = matrix_to_pgm(m);
    CHECK(pgm.rfind("P5\n2 3\n255\n", 0) == 0);
    const unsigned char* px =
        reinterpret_cast<const unsigned char*>(pgm.data() + pgm.size() - 6);
    CHECK(px[0] == 255);  // day 1, awake
    CHECK(px[1] == 0);    // day 1, asleep
    CHECK(px[2] == 128);  // day 2 missing
    CHECK(px[3] == 128);
    CHECK(px[4] == 128);  // day 3, 0.5
    CHECK(px[5] == 191);  // day 3, 0.25 -> round(255*0.75)
}

TEST_CASE("config parsing, precedence and rejection") {
    TempDir dir;
    std::string path = dir.str() + "/run.cfg";
    {
        std::ofstream out(path);
        out << "# comment\n"
            << "rank = 4\n"
            << "lambda = 125\n"
            << "rules.night_start = 20:30\n";
    }
    RunConfig cfg;
    CHECK(cfg.rank == 5);
    CHECK(cfg.lambda == 1e5);
    cfg.apply_file(path);
    CHECK(cfg.rank == 4);
    CHECK(cfg.lambda == 125.0);
    CHECK(cfg.rules.night_start_minutes == 20 * 60 + 30);
    cfg.apply("rank", "7");  // flag-level override
    CHECK(cfg.rank == 7);

    CHECK_THROWS_AS(cfg.apply("no_such_key", "1"), Error);
    CHECK_THROWS_AS(cfg.apply("rank", "zero"), Error);
    CHECK_THROWS_AS(cfg.apply("rank", "0"), Error);
    CHECK_THROWS_AS(cfg.apply("error_metric", "mse"), Error);

    // resolved echo reflects the applied values
    std::string echo = cfg.echo();
    CHECK(echo.find("rank=7\n") != std::string::npos);
    CHECK(echo.find("lambda=125\n") != std::string::npos);

    CHECK(cfg.component_indices(5) == std::vector<int>{0, 1, 2});
    cfg.apply("components", "2,4");
    CHECK(cfg.component_indices(5) == std::vector<int>{1, 3});
    CHECK_THROWS_AS(cfg.component_indices(3), Error);
}

TEST_CASE("file digest is stable and content sensitive") {
    TempDir dir;
    std::string a = dir.str() + "/a", b = dir.str() + "/b";
    atomic_write(a, "payload");
    atomic_write(b, "payload");
    CHECK(file_digest(a) == file_digest(b));
    atomic_write(b, "payload!");
    CHECK(file_digest(a) != file_digest(b));
}
