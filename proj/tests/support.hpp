#pragma once

// Helpers shared by the unit and acceptance suites. The oracles here are
// written independently of the library code they check.

#include "specenc/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

namespace testsupport {

namespace fs = std::filesystem;

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("specenc_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Brute-force metrics in long double, straight from the textbook formulas.
struct OracleMetrics {
    long double mae, rmse, r, r2;
};

inline OracleMetrics oracle_metrics(const std::vector<double>& y, const std::vector<double>& p) {
    const std::size_t n = y.size();
    long double abs_sum = 0, sq_sum = 0, my = 0, mp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        abs_sum += std::fabs(static_cast<long double>(y[i]) - p[i]);
        sq_sum += (static_cast<long double>(y[i]) - p[i]) * (static_cast<long double>(y[i]) - p[i]);
        my += y[i];
        mp += p[i];
    }
    my /= n;
    mp /= n;
    long double cov = 0, vy = 0, vp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (y[i] - my) * (p[i] - mp);
        vy += (y[i] - my) * (y[i] - my);
        vp += (p[i] - mp) * (p[i] - mp);
    }
    OracleMetrics m;
    m.mae = abs_sum / n;
    m.rmse = std::sqrt(sq_sum / n);
    m.r = (cov / n) / (std::sqrt(vy / n) * std::sqrt(vp / n));
    m.r2 = 1 - sq_sum / vy;
    return m;
}

// Label of a synthetic spectrum recomputed from its peaks.
inline double oracle_label(const std::vector<specenc::Peak>& peaks) {
    const std::size_t n = peaks.size();
    long double total = 0;
    for (const auto& p : peaks) total += p.intensity;
    long double h = 0;
    for (const auto& p : peaks) {
        const long double q = p.intensity / total;
        if (q > 0) h -= q * std::log(q);
    }
    std::size_t hits = 0;
    for (std::size_t i = 1; i < n; ++i) {
        const double gap = peaks[i].mz - peaks[i - 1].mz;
        if (gap >= 13.5 && gap <= 14.5) ++hits;
    }
    const long double h_norm = h / std::log(static_cast<long double>(n));
    const long double f = static_cast<long double>(hits) / (n - 1);
    return static_cast<double>(0.5L * h_norm + 0.5L * f);
}

inline std::vector<specenc::Spectrum> shuffled_peaks(std::vector<specenc::Spectrum> spectra, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    for (auto& s : spectra) std::shuffle(s.peaks.begin(), s.peaks.end(), g);
    return spectra;
}

}  // namespace testsupport
