#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

namespace fs = std::filesystem;

namespace {

#ifndef TSLR_BIN
#error "TSLR_BIN must point at the built CLI"
#endif

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("tslr_cli_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

int run(const std::string& args) {
    std::string cmd = std::string(TSLR_BIN) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_synth_spec(const std::string& path) {
    std::ofstream out(path);
    out << "subjects=6\nperiods=30\nrow_len=12\nrank=2\n"
        << "noise_std=0.05\nmissing_fraction=0.2\nseed=17\n";
}

bool dirs_equal(const fs::path& a, const fs::path& b) {
    std::vector<std::string> rel_a, rel_b;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) rel_a.push_back(fs::relative(e.path(), a).string());
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) rel_b.push_back(fs::relative(e.path(), b).string());
    std::sort(rel_a.begin(), rel_a.end());
    std::sort(rel_b.begin(), rel_b.end());
    if (rel_a != rel_b) return false;
    for (const auto& rel : rel_a)
        if (slurp((a / rel).string()) != slurp((b / rel).string())) return false;
    return true;
}

} // namespace

TEST_CASE("synth, fit and analytics subcommands produce their files") {
    TempDir dir;
    write_synth_spec(dir.str() + "/spec.cfg");
    REQUIRE(run("synth --spec " + dir.str() + "/spec.cfg --out " + dir.str() + "/data") == 0);
    CHECK(fs::exists(dir.str() + "/data/s001.csv"));
    CHECK(fs::exists(dir.str() + "/data/truth/basis.csv"));
    CHECK(fs::exists(dir.str() + "/data/manifest.txt"));

    REQUIRE(run("--seed 5 fit --data " + dir.str() + "/data --rank 2 --lambda 10 --out " +
                dir.str() + "/model") == 0);
    CHECK(fs::exists(dir.str() + "/model/basis.csv"));
    CHECK(fs::exists(dir.str() + "/model/meta.txt"));
    std::string meta = slurp(dir.str() + "/model/meta.txt");
    CHECK(meta.find("rank=2") != std::string::npos);
    CHECK(meta.find("lambda=10") != std::string::npos);

    REQUIRE(run("trends --model " + dir.str() + "/model --out " + dir.str() + "/trends.csv") == 0);
    std::string trends = slurp(dir.str() + "/trends.csv");
    CHECK(trends.rfind("component,day,p10,p25,p50,p75,p90\n", 0) == 0);

    REQUIRE(run("outliers --model " + dir.str() + "/model --component 1 --percentile 90 --out " +
                dir.str() + "/outliers.csv") == 0);
    CHECK(slurp(dir.str() + "/outliers.csv").rfind("subject,distance,flagged\n", 0) == 0);

    REQUIRE(run("--seed 7 cluster --model " + dir.str() + "/model -k 2 --components 1,2 --out " +
                dir.str() + "/clusters.csv") == 0);
    std::string clusters = slurp(dir.str() + "/clusters.csv");
    CHECK(clusters.rfind("subject,cluster\n", 0) == 0);
    CHECK(fs::exists(dir.str() + "/clusters.csv.centroids.csv"));

    REQUIRE(run("svd --data " + dir.str() + "/data -k 3 --out " + dir.str() + "/svd.csv") == 0);
    std::string svd = slurp(dir.str() + "/svd.csv");
    CHECK(svd.rfind("index,singular_value\n", 0) == 0);
}

TEST_CASE("fit reruns are byte-identical") {
    TempDir dir;
    write_synth_spec(dir.str() + "/spec.cfg");
    REQUIRE(run("synth --spec " + dir.str() + "/spec.cfg --out " + dir.str() + "/data") == 0);
    REQUIRE(run("--seed 9 fit --data " + dir.str() + "/data --rank 2 --lambda 100 --out " +
                dir.str() + "/m1") == 0);
    REQUIRE(run("--seed 9 fit --data " + dir.str() + "/data --rank 2 --lambda 100 --out " +
                dir.str() + "/m2") == 0);
    CHECK(dirs_equal(dir.str() + "/m1", dir.str() + "/m2"));
}

TEST_CASE("render writes a binary graymap") {
    TempDir dir;
    write_synth_spec(dir.str() + "/spec.cfg");
    REQUIRE(run("synth --spec " + dir.str() + "/spec.cfg --out " + dir.str() + "/data") == 0);
    REQUIRE(run("render --matrix " + dir.str() + "/data/s001.csv --out " + dir.str() +
                "/s1.pgm") == 0);
    std::string pgm = slurp(dir.str() + "/s1.pgm");
    CHECK(pgm.rfind("P5\n12 30\n255\n", 0) == 0);
    CHECK(pgm.size() == std::string("P5\n12 30\n255\n").size() + 12 * 30);
}

TEST_CASE("ingest pipeline runs on an event file") {
    TempDir dir;
    {
        std::ofstream out(dir.str() + "/events.csv");
        out << "subject_id,timestamp_minutes,kind\n";
        for (int day = 1; day <= 12; ++day) {
            double base = (day - 1) * 1440.0;
            out << "a," << base + 30 << ",start\n";
            out << "a," << base + 390 << ",end\n";
            out << "a," << base + 1290 << ",start\n";
            out << "a," << base + 1380 << ",end\n";
        }
        // subject with a single implausible day only
        out << "b,720,start\n";
        out << "b,840,end\n";
    }
    REQUIRE(run("ingest --events " + dir.str() + "/events.csv --sample-minutes 10 --out " +
                dir.str() + "/out") == 0);
    CHECK(fs::exists(dir.str() + "/out/a.csv"));
    CHECK(!fs::exists(dir.str() + "/out/b.csv"));  // sleepless night removed it
    CHECK(fs::exists(dir.str() + "/out/manifest.txt"));
}

TEST_CASE("exit codes distinguish usage and module errors") {
    TempDir dir;
    CHECK(run("fit --no-such-flag") == 2);
    CHECK(run("no-such-command") == 2);
    CHECK(run("fit --data " + dir.str() + "/missing --out " + dir.str() + "/m") == 1);
    CHECK(run("--version") == 0);

    // module errors name the failing contract on stderr
    std::string cmd = std::string(TSLR_BIN) + " fit --data " + dir.str() + "/missing --out " +
                      dir.str() + "/m 2>" + dir.str() + "/err.txt >/dev/null";
    int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == 1);
    CHECK(slurp(dir.str() + "/err.txt").find("io-failure") != std::string::npos);
}
