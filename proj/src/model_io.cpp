#include "tslr/model_io.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "tslr/error.hpp"

namespace fs = std::filesystem;

namespace tslr {

void atomic_write(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error(ErrorCode::io_failure, "cannot write " + tmp);
        out << contents;
        if (!out) throw Error(ErrorCode::io_failure, "short write to " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::io_failure, "cannot rename " + tmp + ": " + ec.message());
}

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    char out[17];
    std::snprintf(out, sizeof out, "%016" PRIx64, h);
    return out;
}

namespace {

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    std::string s(buf);
    // trim trailing zeros but keep one digit after the point
    auto dot = s.find('.');
    auto last = s.find_last_not_of('0');
    s.erase(std::max(dot + 1, last) + 1);
    return s;
}

std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorCode::io_failure, "bad number '" + s + "' in " + what);
    }
}

} // namespace

std::string matrix_to_csv(const SeriesMatrix& m) {
    std::ostringstream out;
    out << "day";
    for (int i = 1; i <= m.row_len; ++i) out << ",c" << i;
    out << "\n";
    for (int idx = 0; idx < m.observed_count(); ++idx) {
        out << m.days[idx];
        for (int i = 0; i < m.row_len; ++i) out << "," << format_value(m.values(idx, i));
        out << "\n";
    }
    return out.str();
}

SeriesMatrix matrix_from_csv(std::istream& in, const std::string& subject_id) {
    std::string line;
    if (!std::getline(in, line))
        throw Error(ErrorCode::io_failure, "empty matrix file for " + subject_id);
    auto header = split(line, ',');
    if (header.size() < 3 || header[0] != "day")
        throw Error(ErrorCode::io_failure, "unexpected matrix header for " + subject_id);
    const int l = static_cast<int>(header.size()) - 1;

    SeriesMatrix m;
    m.subject_id = subject_id;
    m.row_len = l;
    std::vector<VectorXd> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split(line, ',');
        if (static_cast<int>(fields.size()) != l + 1)
            throw Error(ErrorCode::io_failure, "bad column count in " + subject_id);
        int day = static_cast<int>(parse_double(fields[0], subject_id));
        VectorXd row(l);
        for (int i = 0; i < l; ++i) row[i] = parse_double(fields[i + 1], subject_id);
        m.days.push_back(day);
        rows.push_back(row);
        m.num_rows = std::max(m.num_rows, day);
    }
    m.values.resize(static_cast<int>(rows.size()), l);
    for (std::size_t i = 0; i < rows.size(); ++i) m.values.row(static_cast<int>(i)) = rows[i];
    return m;
}

void save_dataset(const Dataset& d, const std::string& dir) {
    fs::create_directories(dir);
    std::ostringstream grid;
    grid << "period_minutes=" << format_full(d.grid.period_minutes) << "\n"
         << "sample_minutes=" << format_full(d.grid.sample_minutes) << "\n";
    for (const auto& s : d.series) {
        atomic_write(dir + "/" + s.subject_id + ".csv", matrix_to_csv(s));
        grid << "num_rows." << s.subject_id << "=" << s.num_rows << "\n";
    }
    atomic_write(dir + "/grid.txt", grid.str());
}

Dataset load_dataset(const std::string& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::io_failure, dir + " is not a directory");

    std::map<std::string, int> num_rows;
    Dataset d;
    {
        std::ifstream grid(dir + "/grid.txt");
        if (grid) {
            std::string line;
            while (std::getline(grid, line)) {
                auto eq = line.find('=');
                if (eq == std::string::npos) continue;
                std::string key = line.substr(0, eq), value = line.substr(eq + 1);
                if (key == "period_minutes") d.grid.period_minutes = parse_double(value, "grid.txt");
                else if (key == "sample_minutes") d.grid.sample_minutes = parse_double(value, "grid.txt");
                else if (key.rfind("num_rows.", 0) == 0)
                    num_rows[key.substr(9)] = static_cast<int>(parse_double(value, "grid.txt"));
            }
        }
    }

    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".csv") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw Error(ErrorCode::empty_dataset, "no matrix files in " + dir);

    for (const auto& path : files) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path);
        std::string id = fs::path(path).stem().string();
        SeriesMatrix m = matrix_from_csv(in, id);
        auto it = num_rows.find(id);
        if (it != num_rows.end()) m.num_rows = std::max(m.num_rows, it->second);
        d.series.push_back(std::move(m));
    }
    d.validate();
    return d;
}

void save_model(const FactorModel& m, const std::string& dir) {
    fs::create_directories(dir + "/coeffs");

    std::ostringstream basis;
    for (int j = 1; j <= m.rank(); ++j) basis << (j > 1 ? "," : "") << "F" << j;
    basis << "\n";
    for (int i = 0; i < m.basis.row_len(); ++i) {
        for (int j = 0; j < m.rank(); ++j)
            basis << (j > 0 ? "," : "") << format_full(m.basis.functions(i, j));
        basis << "\n";
    }
    atomic_write(dir + "/basis.csv", basis.str());

    for (const auto& c : m.coeffs) {
        std::ostringstream out;
        out << "day";
        for (int j = 1; j <= c.rank(); ++j) out << ",C" << j;
        out << "\n";
        for (int t = 0; t < c.observed_count(); ++t) {
            out << c.days[t];
            for (int j = 0; j < c.rank(); ++j) out << "," << format_full(c.values(t, j));
            out << "\n";
        }
        atomic_write(dir + "/coeffs/" + c.subject_id + ".csv", out.str());
    }

    std::ostringstream meta;
    meta << "rank=" << m.rank() << "\n"
         << "lambda=" << format_full(m.lambda) << "\n"
         << "iterations=" << m.iterations << "\n"
         << "converged=" << (m.converged ? 1 : 0) << "\n"
         << "final_objective="
         << (m.objective_trace.empty() ? "nan" : format_full(m.objective_trace.back())) << "\n";
    atomic_write(dir + "/meta.txt", meta.str());
}

FactorModel load_model(const std::string& dir) {
    FactorModel m;
    {
        std::ifstream in(dir + "/basis.csv");
        if (!in) throw Error(ErrorCode::io_failure, "cannot open " + dir + "/basis.csv");
        std::string line;
        if (!std::getline(in, line)) throw Error(ErrorCode::io_failure, "empty basis file");
        const int r = static_cast<int>(split(line, ',').size());
        std::vector<VectorXd> rows;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto fields = split(line, ',');
            if (static_cast<int>(fields.size()) != r)
                throw Error(ErrorCode::io_failure, "bad basis row");
            VectorXd row(r);
            for (int j = 0; j < r; ++j) row[j] = parse_double(fields[j], "basis.csv");
            rows.push_back(row);
        }
        m.basis.functions.resize(static_cast<int>(rows.size()), r);
        for (std::size_t i = 0; i < rows.size(); ++i)
            m.basis.functions.row(static_cast<int>(i)) = rows[i];
    }

    {
        std::ifstream meta(dir + "/meta.txt");
        if (!meta) throw Error(ErrorCode::io_failure, "cannot open " + dir + "/meta.txt");
        std::string line;
        while (std::getline(meta, line)) {
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(0, eq), value = line.substr(eq + 1);
            if (key == "lambda") m.lambda = parse_double(value, "meta.txt");
            else if (key == "iterations") m.iterations = static_cast<int>(parse_double(value, "meta.txt"));
            else if (key == "converged") m.converged = value == "1";
            else if (key == "final_objective" && value != "nan")
                m.objective_trace.push_back(parse_double(value, "meta.txt"));
        }
    }

    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir + "/coeffs"))
        if (entry.path().extension() == ".csv") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path);
        std::string line;
        std::getline(in, line);  // header
        CoefficientSet c;
        c.subject_id = fs::path(path).stem().string();
        std::vector<VectorXd> rows;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto fields = split(line, ',');
            if (static_cast<int>(fields.size()) != m.rank() + 1)
                throw Error(ErrorCode::io_failure, "bad coefficient row in " + path);
            c.days.push_back(static_cast<int>(parse_double(fields[0], path)));
            VectorXd row(m.rank());
            for (int j = 0; j < m.rank(); ++j) row[j] = parse_double(fields[j + 1], path);
            rows.push_back(row);
        }
        c.values.resize(static_cast<int>(rows.size()), m.rank());
        for (std::size_t i = 0; i < rows.size(); ++i)
            c.values.row(static_cast<int>(i)) = rows[i];
        m.coeffs.push_back(std::move(c));
    }
    return m;
}

std::string matrix_to_pgm(const SeriesMatrix& m) {
    std::ostringstream out;
    out << "P5\n" << m.row_len << " " << m.num_rows << "\n255\n";
    for (int day = 1; day <= m.num_rows; ++day) {
        int row = m.row_of(day);
        for (int i = 0; i < m.row_len; ++i) {
            unsigned char px = 128;
            if (row >= 0) {
                double v = std::clamp(m.values(row, i), 0.0, 1.0);
                px = static_cast<unsigned char>(std::lround(255.0 * (1.0 - v)));
            }
            out.put(static_cast<char>(px));
        }
    }
    return out.str();
}

} // namespace tslr
