#include "specenc/spectrum.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <string_view>

namespace specenc {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() &&
           std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::toupper(static_cast<unsigned char>(x)) ==
                      std::toupper(static_cast<unsigned char>(y));
           });
}

std::optional<double> parse_double(std::string_view tok) {
    // std::from_chars rejects a leading '+', which some writers emit.
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    double v = 0.0;
    const auto* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, v);
    if (ec != std::errc{} || ptr != end) return std::nullopt;
    return v;
}

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        const std::size_t start = i;
        while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
        if (i > start) out.push_back(s.substr(start, i - start));
    }
    return out;
}

std::string format_number(double v) { return fmt::format("{:.6g}", v); }

}  // namespace

void sort_peaks(std::vector<Peak>& peaks) {
    std::stable_sort(peaks.begin(), peaks.end(),
                     [](const Peak& a, const Peak& b) { return a.mz < b.mz; });
}

bool is_valid_peak(const Peak& p) {
    return std::isfinite(p.mz) && p.mz > 0.0 && std::isfinite(p.intensity) &&
           p.intensity >= 0.0;
}

MgfError::MgfError(std::size_t block, std::size_t line, const std::string& what)
    : std::runtime_error(fmt::format("MGF block {} line {}: {}", block, line, what)),
      block_(block),
      line_(line) {}

std::vector<Spectrum> parse_mgf(std::istream& in) {
    std::vector<Spectrum> out;
    std::string raw;
    std::size_t line_no = 0;
    std::size_t block_no = 0;
    std::size_t block_start = 0;
    bool in_block = false;
    bool have_pepmass = false;
    Spectrum cur;

    while (std::getline(in, raw)) {
        ++line_no;
        const std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#' || line.front() == ';' ||
            line.front() == '!') {
            continue;
        }

        if (iequals(line, "BEGIN IONS")) {
            if (in_block) {
                throw MgfError(block_no, line_no,
                               fmt::format("BEGIN IONS inside block opened at line {}",
                                           block_start));
            }
            in_block = true;
            have_pepmass = false;
            ++block_no;
            block_start = line_no;
            cur = Spectrum{};
            continue;
        }

        if (iequals(line, "END IONS")) {
            if (!in_block) throw MgfError(0, line_no, "END IONS without BEGIN IONS");
            if (!have_pepmass) {
                throw MgfError(block_no, line_no,
                               fmt::format("missing PEPMASS in block opened at line {}",
                                           block_start));
            }
            if (cur.id.empty()) cur.id = fmt::format("spectrum_{}", block_no);
            sort_peaks(cur.peaks);
            out.push_back(std::move(cur));
            cur = Spectrum{};
            in_block = false;
            continue;
        }

        const auto eq = line.find('=');
        const bool starts_numeric =
            std::isdigit(static_cast<unsigned char>(line.front())) || line.front() == '.' ||
            line.front() == '-' || line.front() == '+';
        if (eq != std::string_view::npos && !starts_numeric) {
            if (!in_block) continue;  // global parameters
            const auto key = trim(line.substr(0, eq));
            const auto value = trim(line.substr(eq + 1));
            if (iequals(key, "PEPMASS")) {
                const auto toks = split_ws(value);
                const auto mz = toks.empty() ? std::nullopt : parse_double(toks.front());
                if (!mz || !std::isfinite(*mz) || *mz <= 0.0) {
                    throw MgfError(block_no, line_no,
                                   fmt::format("invalid PEPMASS value '{}'", value));
                }
                cur.precursor_mz = *mz;
                have_pepmass = true;
            } else if (iequals(key, "TITLE")) {
                cur.id = std::string(value);
            }
            continue;
        }

        if (!in_block) {
            throw MgfError(0, line_no, fmt::format("unexpected content outside block: '{}'", line));
        }
        const auto toks = split_ws(line);
        if (toks.size() < 2) {
            throw MgfError(block_no, line_no, fmt::format("peak line needs m/z and intensity: '{}'", line));
        }
        const auto mz = parse_double(toks[0]);
        const auto inten = parse_double(toks[1]);
        if (!mz || !inten) {
            throw MgfError(block_no, line_no, fmt::format("non-numeric peak token in '{}'", line));
        }
        const Peak p{*mz, *inten};
        if (!is_valid_peak(p)) {
            throw MgfError(block_no, line_no,
                           fmt::format("peak out of range (m/z must be > 0, intensity >= 0): '{}'", line));
        }
        cur.peaks.push_back(p);
    }

    if (in_block) {
        throw MgfError(block_no, line_no,
                       fmt::format("unterminated block opened at line {}", block_start));
    }
    return out;
}

std::vector<Spectrum> parse_mgf_string(const std::string& text) {
    std::istringstream in(text);
    return parse_mgf(in);
}

std::string serialize_mgf(const std::vector<Spectrum>& spectra) {
    std::string out;
    for (const auto& s : spectra) {
        out += "BEGIN IONS\n";
        out += fmt::format("TITLE={}\n", s.id);
        out += fmt::format("PEPMASS={}\n", format_number(s.precursor_mz));
        for (const auto& p : s.peaks) {
            out += fmt::format("{} {}\n", format_number(p.mz), format_number(p.intensity));
        }
        out += "END IONS\n";
    }
    return out;
}

}  // namespace specenc
