#pragma once

#include "specenc/config_json.hpp"
#include "specenc/models.hpp"
#include "specenc/spectrum.hpp"
#include "specenc/train.hpp"

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace specenc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Raised for unreadable or unwritable files (exit code 2).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A parsed run spec file. Relative paths are resolved against the
/// directory holding the spec file.
struct RunSpec {
    std::optional<std::filesystem::path> mgf_path;
    std::optional<std::filesystem::path> labels_path;
    std::optional<std::filesystem::path> splits_path;
    std::optional<SyntheticConfig> synthetic;
    std::array<std::size_t, 3> split_counts{};  // synthetic only: train, val, test

    RepresentationConfig representation;
    models::ModelConfig model;
    TrainConfig train;
    std::filesystem::path output_dir;
    std::vector<std::uint64_t> seeds;
};

/// Validates and resolves a spec document. Throws ValidationError.
RunSpec parse_runspec(const Json& j, const std::filesystem::path& base_dir);
RunSpec load_runspec(const std::filesystem::path& file);

/// The spec with every path made absolute; parse_runspec of the result
/// reproduces the spec from any working directory.
Json runspec_to_json(const RunSpec& spec);

/// Default split sizes for `n` synthetic spectra: 15% val, 15% test, the
/// rest train.
std::array<std::size_t, 3> default_split_counts(std::size_t n);

/// Spectra plus whatever labels and split the spec provides. Synthetic data
/// always carries both.
struct SourceData {
    std::vector<Spectrum> spectra;
    std::map<std::string, double> labels;
    std::optional<DatasetSplit> split;
};

SourceData load_source(const RunSpec& spec);

/// Train/val/test encodings for a spec. Throws ValidationError when labels or
/// splits are missing or inconsistent.
struct EncodedSplits {
    EncodedDataset train, val, test;
    std::vector<std::string> warnings;
};

EncodedSplits prepare_splits(const RunSpec& spec);

/// Per-tensor parameter listing: {"model", "total", "tensors": [{name, shape,
/// count, init}]}. Checkpoint manifests extend this with file names.
Json params_json(const models::ModelConfig& cfg);

/// Writes `params` as one tensor file per parameter plus manifest.json.
void save_checkpoint(const std::filesystem::path& dir, const RunSpec& spec, std::uint64_t seed,
                     const models::ModelParams<float>& params);

struct Checkpoint {
    RunSpec spec;
    std::uint64_t seed = 0;
    models::ModelParams<float> params;
};

/// Accepts the checkpoint directory or its manifest.json.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Entry point shared by the executable and the tests. Returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace specenc::cli
