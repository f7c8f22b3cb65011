#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace specenc {

/// Rejected user input: bad config, inconsistent labels or splits.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Peak {
    double mz = 0.0;
    double intensity = 0.0;

    friend bool operator==(const Peak&, const Peak&) = default;
};

struct Spectrum {
    std::string id;
    double precursor_mz = 0.0;
    std::vector<Peak> peaks;  // nondecreasing mz
    std::optional<double> label;

    friend bool operator==(const Spectrum&, const Spectrum&) = default;
};

/// Stable sort of peaks by m/z.
void sort_peaks(std::vector<Peak>& peaks);

bool is_valid_peak(const Peak& p);

// ---------------------------------------------------------------------------
// MGF

/// A malformed MGF block. `block` is the 1-based block ordinal (0 when the
/// problem is outside any block) and `line` the 1-based line number.
class MgfError : public std::runtime_error {
public:
    MgfError(std::size_t block, std::size_t line, const std::string& what);
    std::size_t block() const { return block_; }
    std::size_t line() const { return line_; }

private:
    std::size_t block_;
    std::size_t line_;
};

std::vector<Spectrum> parse_mgf(std::istream& in);
std::vector<Spectrum> parse_mgf_string(const std::string& text);
std::string serialize_mgf(const std::vector<Spectrum>& spectra);

// ---------------------------------------------------------------------------
// Labels and splits

class CsvError : public ValidationError {
public:
    CsvError(std::size_t row, const std::string& what);
    std::size_t row() const { return row_; }

private:
    std::size_t row_;
};

/// Reads a CSV with header "id,qed". Row numbers in errors count the header
/// as row 1.
std::map<std::string, double> load_labels(std::istream& in);
std::map<std::string, double> load_labels_string(const std::string& text);

struct DatasetSplit {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
};

/// Parses {"train": [...], "val": [...], "test": [...]}.
DatasetSplit parse_splits_json(const std::string& text);

/// Spectra partitioned into the three splits, each holding a label.
struct LabeledDataset {
    std::vector<Spectrum> train;
    std::vector<Spectrum> val;
    std::vector<Spectrum> test;
};

/// Attaches labels and partitions by split. Throws ValidationError when the
/// splits overlap, reference unknown ids, or an id lacks a label.
LabeledDataset assemble_dataset(const std::vector<Spectrum>& spectra,
                                const std::map<std::string, double>& labels,
                                const DatasetSplit& split);

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticConfig {
    std::uint64_t seed = 0;
    std::size_t n_spectra = 100;
    std::size_t peaks_min = 5;
    std::size_t peaks_max = 60;
    double mz_max = 1000.0;
    double gap_signal_prob = 0.5;

    void validate() const;
};

inline constexpr double kSignalGapLo = 13.5;
inline constexpr double kSignalGapHi = 14.5;
inline constexpr double kNoiseGapLo = 20.0;
inline constexpr double kNoiseGapHi = 80.0;

/// Ground-truth label of a synthetic spectrum:
///   0.5 * entropy(intensities / sum) / ln(n) + 0.5 * fraction of consecutive
///   gaps inside [13.5, 14.5].
/// Peaks must be sorted and contain at least two entries with positive total
/// intensity.
double synthetic_label(const std::vector<Peak>& peaks);

/// Generates spectra whose i-th element depends only on (seed, i), so a longer
/// run extends a shorter one.
std::vector<Spectrum> generate_synthetic(const SyntheticConfig& cfg);
Spectrum generate_synthetic_one(const SyntheticConfig& cfg, std::size_t index);

}  // namespace specenc
