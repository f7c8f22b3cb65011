#pragma once

#include "specenc/ops.hpp"
#include "specenc/rng.hpp"
#include "specenc/tensor.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace specenc::models {

using ad::Shape;
using ad::Tensor;
using ad::Var;

struct MlpConfig {
    std::size_t input_dim = 10000;
    std::vector<std::size_t> hidden_dims{1024, 512};
    double dropout_p = 0.5;

    void validate() const;
    friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

/// Self-attention blocks at each width of block_dims (a linear projection
/// bridges differing widths), then pooling by attention from num_seeds
/// learnable seeds, then a linear head.
struct SetTransformerConfig {
    std::vector<std::size_t> block_dims{32, 16};
    std::size_t num_heads = 4;
    std::size_t num_seeds = 1;
    double mz_scale = 1000.0;
    double layer_norm_eps = 1e-5;

    void validate() const;
    friend bool operator==(const SetTransformerConfig&, const SetTransformerConfig&) = default;
};

struct GatConfig {
    std::size_t num_layers = 8;
    std::size_t hidden_channels = 1024;
    std::size_t num_heads = 1;
    double leaky_relu_slope = 0.2;
    double mz_scale = 1000.0;
    bool residual = true;

    void validate() const;
    friend bool operator==(const GatConfig&, const GatConfig&) = default;
};

using ModelConfig = std::variant<MlpConfig, SetTransformerConfig, GatConfig>;

enum class ModelKind { Mlp, SetTransformer, Gat };

ModelKind kind_of(const ModelConfig& cfg);
std::string_view kind_name(ModelKind kind);  // "mlp", "set_transformer", "gat"
ModelKind parse_kind(std::string_view name);
void validate(const ModelConfig& cfg);

enum class InitScheme { KaimingUniform, Zeros, Ones, SmallUniform };
std::string_view init_name(InitScheme s);

struct ParamSpec {
    std::string name;
    Shape shape;
    InitScheme init;
    std::size_t fan_in = 0;  // KaimingUniform bound is 1/sqrt(fan_in)
};

/// Every trainable tensor of the architecture, in initialization order.
std::vector<ParamSpec> param_specs(const ModelConfig& cfg);

/// Trainable scalar count from the closed-form per-layer sums. Independent of
/// param_specs so the two can check each other.
std::uint64_t param_count(const ModelConfig& cfg);

/// Named parameter tensors in a fixed order.
template <typename T>
class ModelParams {
public:
    void add(std::string name, Tensor<T> value, InitScheme init);

    std::size_t size() const { return names_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    InitScheme init(std::size_t i) const { return init_[i]; }
    Tensor<T>& tensor(std::size_t i) { return *tensors_[i]; }
    const Tensor<T>& tensor(std::size_t i) const { return *tensors_[i]; }
    std::shared_ptr<Tensor<T>> shared(std::size_t i) const { return tensors_[i]; }
    const Tensor<T>& at(const std::string& name) const;
    std::uint64_t total_size() const;

    /// Deep copy converted to another scalar type.
    template <typename U>
    ModelParams<U> cast() const {
        ModelParams<U> out;
        for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tensors_[i]->template cast<U>(), init_[i]);
        return out;
    }
    ModelParams clone() const { return cast<T>(); }

private:
    std::vector<std::string> names_;
    std::vector<std::shared_ptr<Tensor<T>>> tensors_;
    std::vector<InitScheme> init_;
    std::map<std::string, std::size_t> index_;
};

/// Draws every parameter per param_specs. Values are drawn in double and cast,
/// so float and double parameter sets from one seed agree up to rounding.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Batched inputs

/// Stacked binned vectors, row-major [rows, cols].
struct DenseBatch {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> x;
};

/// Sets padded to max_len: pairs [batch, max_len, 2] as (m/z, intensity) and
/// keep [batch, max_len] with 1 for real entries. m/z is unscaled.
struct SetBatch {
    std::size_t batch = 0;
    std::size_t max_len = 0;
    std::vector<double> pairs;
    std::vector<std::uint8_t> keep;
};

/// Graphs concatenated into one vertex array. vertex_graph holds the graph
/// index of every vertex (nondecreasing); arcs use batched vertex indices.
struct GraphBatch {
    std::size_t num_graphs = 0;
    std::vector<double> vertex_attr;
    std::vector<std::uint32_t> vertex_graph;
    std::vector<std::uint32_t> src;
    std::vector<std::uint32_t> dst;
    std::vector<double> edge_attr;  // unscaled m/z differences
};

using Batch = std::variant<DenseBatch, SetBatch, GraphBatch>;

std::size_t batch_size(const Batch& b);

/// Parameters recorded on a tape.
template <typename T>
class BoundParams {
public:
    BoundParams(ad::Tape<T>& tape, const ModelParams<T>& params, bool requires_grad);
    /// Binds already-recorded variables, one per parameter in order.
    BoundParams(ad::Tape<T>& tape, const ModelParams<T>& params, std::vector<Var<T>> vars);
    Var<T> operator[](const std::string& name) const;
    ad::Tape<T>& tape() const { return *tape_; }
    const std::vector<Var<T>>& vars() const { return vars_; }

private:
    ad::Tape<T>* tape_;
    std::map<std::string, std::size_t> index_;
    std::vector<Var<T>> vars_;
};

/// Predictions [B] for a batch matching the config's representation.
/// `rng` drives dropout when train is true.
template <typename T>
Var<T> forward(const ModelConfig& cfg, const BoundParams<T>& params, const Batch& batch, bool train, Rng& rng);

template <typename T>
Var<T> mlp_forward(const MlpConfig& cfg, const BoundParams<T>& p, const DenseBatch& batch, bool train, Rng& rng);
template <typename T>
Var<T> set_transformer_forward(const SetTransformerConfig& cfg, const BoundParams<T>& p, const SetBatch& batch,
                               bool train, Rng& rng);
template <typename T>
Var<T> gat_forward(const GatConfig& cfg, const BoundParams<T>& p, const GraphBatch& batch, bool train, Rng& rng);

/// Eval-mode predictions without keeping a tape around.
std::vector<double> predict(const ModelConfig& cfg, const ModelParams<float>& params, const Batch& batch);

}  // namespace specenc::models
