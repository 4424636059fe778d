#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcuniv/seqspace.hpp"

namespace rcuniv {

/// Shortest exact decimal form of a double; round-trips bit-identically.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// Writes via a temporary file in the same directory followed by a rename, so
/// readers never observe a partially written file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
        out << content;
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::filesystem::path signal_meta_path(const std::filesystem::path& csv_path) {
    std::filesystem::path p = csv_path;
    p.replace_extension(".meta.json");
    return p;
}

/// Signal CSV: header row `t,x1,...,xn`, rows in increasing t ending at t=0.
/// The sidecar (same basename, .meta.json) declares M, padding and dimension.
inline void save_signal_csv(const std::filesystem::path& csv_path, const BoundedSignal& z) {
    std::ostringstream csv;
    csv << "t";
    for (Eigen::Index i = 0; i < z.dim(); ++i) csv << ",x" << (i + 1);
    csv << "\n";
    for (long c = 0; c < z.length(); ++c) {
        csv << (z.first_index() + c);
        for (Eigen::Index i = 0; i < z.dim(); ++i) csv << "," << format_double(z.window()(i, c));
        csv << "\n";
    }
    write_file_atomic(csv_path, csv.str());

    nlohmann::json meta;
    meta["dimension"] = z.dim();
    meta["M"] = z.bound();
    meta["padding"] = to_string(z.padding());
    write_file_atomic(signal_meta_path(csv_path), meta.dump(2) + "\n");
}

inline BoundedSignal load_signal_csv(const std::filesystem::path& csv_path) {
    const auto meta_path = signal_meta_path(csv_path);
    std::ifstream meta_in(meta_path);
    if (!meta_in) throw std::runtime_error("missing signal metadata sidecar: " + meta_path.string());
    nlohmann::json meta = nlohmann::json::parse(meta_in);
    const auto n = meta.at("dimension").get<Eigen::Index>();
    const double M = meta.at("M").get<double>();
    const Padding padding = padding_from_string(meta.at("padding").get<std::string>());

    std::ifstream in(csv_path);
    if (!in) throw std::runtime_error("cannot open signal CSV: " + csv_path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty signal CSV: " + csv_path.string());

    std::vector<Eigen::VectorXd> rows;
    long expected_t = 0;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        if (!std::getline(ss, cell, ',')) throw std::runtime_error("malformed CSV row: " + line);
        long t = std::stol(cell);
        if (first) {
            expected_t = t;
            first = false;
        }
        if (t != expected_t)
            throw std::runtime_error("signal CSV rows must have consecutive t values");
        ++expected_t;
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!std::getline(ss, cell, ','))
                throw std::runtime_error("signal CSV row has too few columns: " + line);
            v[i] = std::stod(cell);
        }
        rows.push_back(std::move(v));
    }
    if (rows.empty()) throw std::runtime_error("signal CSV has no data rows: " + csv_path.string());
    if (expected_t != 1)
        throw std::runtime_error("signal CSV must end at t=0 (last row t=" +
                                 std::to_string(expected_t - 1) + ")");
    Eigen::MatrixXd window(n, static_cast<Eigen::Index>(rows.size()));
    for (std::size_t c = 0; c < rows.size(); ++c) window.col(static_cast<Eigen::Index>(c)) = rows[c];
    return BoundedSignal(std::move(window), M, padding);
}

}  // namespace rcuniv
