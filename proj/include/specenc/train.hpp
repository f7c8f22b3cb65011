#pragma once

#include "specenc/encoders.hpp"
#include "specenc/models.hpp"
#include "specenc/spectrum.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace specenc {

// ---------------------------------------------------------------------------
// Metrics

/// Regression metrics matching the comparison table's columns. Pearson's r
/// uses population (1/n) moments. r is undefined when either vector has zero
/// variance; R^2 is undefined when the targets have zero variance. Undefined
/// values are NaN with the matching flag cleared.
struct RegressionMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    double pearson_r = 0.0;
    double r2 = 0.0;
    bool r_defined = true;
    bool r2_defined = true;
};

/// Throws std::invalid_argument when sizes differ or n < 2.
RegressionMetrics compute_metrics(std::span<const double> y, std::span<const double> yhat);

// ---------------------------------------------------------------------------
// Encoded datasets and batching

enum class Representation { Binned, Set, Graph };

std::string_view representation_name(Representation r);
Representation parse_representation(std::string_view name);
/// binned -> mlp, set -> set_transformer, graph -> gat
models::ModelKind model_for(Representation r);

struct RepresentationConfig {
    Representation kind = Representation::Graph;
    BinConfig bins;  // binned only
};

using Encoding = std::variant<BinnedVector, PeakSet, PeakGraph>;

struct EncodedSample {
    std::string id;
    double label = 0.0;
    Encoding data;
};

struct EncodedDataset {
    Representation kind = Representation::Graph;
    std::vector<EncodedSample> samples;
    std::vector<std::string> skipped_ids;  // no peaks or no positive intensity
    std::size_t dropped_peaks = 0;         // outside the bin range

    std::size_t size() const { return samples.size(); }
};

Encoding encode(const Spectrum& preprocessed, const RepresentationConfig& cfg);

/// Preprocesses and encodes every spectrum. Spectra that cannot be normalized
/// are skipped and listed. Unlabeled spectra get label 0 when
/// `require_labels` is false; otherwise they are rejected.
EncodedDataset encode_dataset(const std::vector<Spectrum>& spectra, const RepresentationConfig& cfg,
                              bool require_labels = true);

struct LabeledBatch {
    models::Batch inputs;
    std::vector<double> labels;
    std::vector<std::size_t> indices;  // positions in the dataset
};

/// Collates the given samples: binned vectors stacked, sets padded to the
/// largest set with masks, graphs concatenated with vertex offsets.
LabeledBatch collate(const EncodedDataset& data, std::span<const std::size_t> indices);

/// Splits the dataset into batches of at most batch_size. With shuffle, the
/// order is a permutation drawn from (seed, epoch).
std::vector<LabeledBatch> make_batches(const EncodedDataset& data, std::size_t batch_size, std::uint64_t seed,
                                       std::size_t epoch, bool shuffle = true);

// ---------------------------------------------------------------------------
// Optimization

enum class LossKind { Mse, Mae };

struct TrainConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    std::uint64_t seed = 0;
    LossKind loss = LossKind::Mse;

    void validate() const;
};

class Adam {
public:
    Adam(const models::ModelParams<float>& params, const TrainConfig& cfg);

    /// Applies one update; returns the number of scalars updated.
    std::uint64_t step(models::ModelParams<float>& params, const std::vector<ad::Tensor<float>>& grads);
    std::uint64_t steps_taken() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    RegressionMetrics val;
    double wall_seconds = 0.0;
};

struct RunHistory {
    std::string model;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::uint64_t param_count = 0;
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    bool early_stopped = false;
    RegressionMetrics train_metrics;  // at the best epoch
    RegressionMetrics val_metrics;
    RegressionMetrics test_metrics;
    bool has_test = false;
};

struct TrainResult {
    models::ModelParams<float> params;  // best-validation checkpoint
    RunHistory history;
};

/// Trains with Adam on the chosen loss, keeping the parameters with the lowest
/// validation MAE and stopping after `patience` epochs without improvement.
/// Deterministic for a fixed config and seed.
TrainResult train_model(const models::ModelConfig& model, const EncodedDataset& train, const EncodedDataset& val,
                        const EncodedDataset* test, const TrainConfig& cfg);

/// One optimizer step on one batch; returns the batch loss. Exposed for tests.
double train_step(const models::ModelConfig& model, models::ModelParams<float>& params, Adam& opt,
                  const LabeledBatch& batch, LossKind loss, Rng& dropout_rng);

std::vector<double> predict_dataset(const models::ModelConfig& model, const models::ModelParams<float>& params,
                                    const EncodedDataset& data, std::size_t batch_size = 64);

RegressionMetrics evaluate(const models::ModelConfig& model, const models::ModelParams<float>& params,
                           const EncodedDataset& data, std::size_t batch_size = 64);

}  // namespace specenc
