#include "specenc/models.hpp"

#include "specenc/spectrum.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace specenc::models {

using namespace specenc::ad;

void MlpConfig::validate() const {
    if (input_dim < 1) throw ValidationError("mlp input_dim must be >= 1");
    for (auto d : hidden_dims)
        if (d < 1) throw ValidationError("mlp hidden dims must be >= 1");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ValidationError("mlp dropout_p must lie in [0, 1)");
}

void SetTransformerConfig::validate() const {
    if (block_dims.empty()) throw ValidationError("set_transformer needs at least one block");
    if (num_heads < 1) throw ValidationError("set_transformer num_heads must be >= 1");
    for (auto d : block_dims) {
        if (d < 1 || d % num_heads != 0) {
            throw ValidationError(fmt::format("set_transformer block width {} not divisible by {} heads", d, num_heads));
        }
    }
    if (num_seeds < 1) throw ValidationError("set_transformer num_seeds must be >= 1");
    if (!(mz_scale > 0.0)) throw ValidationError("set_transformer mz_scale must be > 0");
    if (!(layer_norm_eps > 0.0)) throw ValidationError("set_transformer layer_norm_eps must be > 0");
}

void GatConfig::validate() const {
    if (num_layers < 1) throw ValidationError("gat num_layers must be >= 1");
    if (num_heads < 1 || hidden_channels < 1 || hidden_channels % num_heads != 0) {
        throw ValidationError(fmt::format("gat hidden_channels {} not divisible by {} heads", hidden_channels, num_heads));
    }
    if (!(mz_scale > 0.0)) throw ValidationError("gat mz_scale must be > 0");
    if (!(leaky_relu_slope >= 0.0)) throw ValidationError("gat leaky_relu_slope must be >= 0");
}

ModelKind kind_of(const ModelConfig& cfg) { return static_cast<ModelKind>(cfg.index()); }

std::string_view kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::Mlp: return "mlp";
        case ModelKind::SetTransformer: return "set_transformer";
        case ModelKind::Gat: return "gat";
    }
    return "unknown";
}

ModelKind parse_kind(std::string_view name) {
    if (name == "mlp") return ModelKind::Mlp;
    if (name == "set_transformer") return ModelKind::SetTransformer;
    if (name == "gat") return ModelKind::Gat;
    throw ValidationError(fmt::format("unknown model kind '{}' (expected mlp, set_transformer or gat)", name));
}

void validate(const ModelConfig& cfg) {
    std::visit([](const auto& c) { c.validate(); }, cfg);
}

std::string_view init_name(InitScheme s) {
    switch (s) {
        case InitScheme::KaimingUniform: return "kaiming_uniform_fan_in";
        case InitScheme::Zeros: return "zeros";
        case InitScheme::Ones: return "ones";
        case InitScheme::SmallUniform: return "uniform_0.1";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Parameter layout

namespace {

void linear_specs(std::vector<ParamSpec>& out, const std::string& name, std::size_t in, std::size_t outd) {
    out.push_back({name + ".weight", {in, outd}, InitScheme::KaimingUniform, in});
    out.push_back({name + ".bias", {outd}, InitScheme::Zeros, 0});
}

void mab_specs(std::vector<ParamSpec>& out, const std::string& p, std::size_t d) {
    linear_specs(out, p + ".q", d, d);
    // A key bias only shifts every score of a query by the same amount, which
    // the softmax cancels; it would never receive a gradient.
    out.push_back({p + ".k.weight", {d, d}, InitScheme::KaimingUniform, d});
    linear_specs(out, p + ".v", d, d);
    linear_specs(out, p + ".o", d, d);
    out.push_back({p + ".ln1.gamma", {d}, InitScheme::Ones, 0});
    out.push_back({p + ".ln1.beta", {d}, InitScheme::Zeros, 0});
    linear_specs(out, p + ".ff1", d, d);
    linear_specs(out, p + ".ff2", d, d);
    out.push_back({p + ".ln2.gamma", {d}, InitScheme::Ones, 0});
    out.push_back({p + ".ln2.beta", {d}, InitScheme::Zeros, 0});
}

std::vector<ParamSpec> specs_for(const MlpConfig& c) {
    std::vector<ParamSpec> out;
    std::size_t in = c.input_dim;
    for (std::size_t l = 0; l < c.hidden_dims.size(); ++l) {
        linear_specs(out, fmt::format("fc{}", l), in, c.hidden_dims[l]);
        in = c.hidden_dims[l];
    }
    linear_specs(out, "out", in, 1);
    return out;
}

std::vector<ParamSpec> specs_for(const SetTransformerConfig& c) {
    std::vector<ParamSpec> out;
    linear_specs(out, "input", 2, c.block_dims.front());
    for (std::size_t b = 0; b < c.block_dims.size(); ++b) {
        if (b > 0 && c.block_dims[b] != c.block_dims[b - 1]) {
            linear_specs(out, fmt::format("proj{}", b), c.block_dims[b - 1], c.block_dims[b]);
        }
        mab_specs(out, fmt::format("sab{}", b), c.block_dims[b]);
    }
    const std::size_t d = c.block_dims.back();
    out.push_back({"pma.seeds", {c.num_seeds, d}, InitScheme::SmallUniform, 0});
    mab_specs(out, "pma", d);
    linear_specs(out, "out", c.num_seeds * d, 1);
    return out;
}

std::vector<ParamSpec> specs_for(const GatConfig& c) {
    std::vector<ParamSpec> out;
    const std::size_t ch = c.hidden_channels;
    const std::size_t dh = ch / c.num_heads;
    linear_specs(out, "input", 1, ch);
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        const std::string p = fmt::format("gat{}", l);
        out.push_back({p + ".weight", {ch, ch}, InitScheme::KaimingUniform, ch});
        out.push_back({p + ".edge_weight", {1, ch}, InitScheme::KaimingUniform, 1});
        // Column h holds head h's attention vector over [W h_src, W h_dst, W_e e].
        out.push_back({p + ".att", {3 * dh, c.num_heads}, InitScheme::SmallUniform, 0});
    }
    linear_specs(out, "out", ch, 1);
    return out;
}

}  // namespace

std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
    validate(cfg);
    return std::visit([](const auto& c) { return specs_for(c); }, cfg);
}

std::uint64_t param_count(const ModelConfig& cfg) {
    validate(cfg);
    struct Counter {
        std::uint64_t operator()(const MlpConfig& c) const {
            std::uint64_t n = 0, in = c.input_dim;
            for (std::uint64_t h : c.hidden_dims) {
                n += (in + 1) * h;
                in = h;
            }
            return n + (in + 1) * 1;
        }
        std::uint64_t operator()(const SetTransformerConfig& c) const {
            // attention block at width d: 4 d^2 + 3 d (no key bias), feed-forward
            // 2 (d^2 + d), two layer norms 4d
            auto mab = [](std::uint64_t d) { return 6 * d * d + 9 * d; };
            std::uint64_t n = 3 * c.block_dims.front();
            for (std::size_t b = 0; b < c.block_dims.size(); ++b) {
                const std::uint64_t d = c.block_dims[b];
                if (b > 0 && d != c.block_dims[b - 1]) n += (c.block_dims[b - 1] + 1) * d;
                n += mab(d);
            }
            const std::uint64_t d = c.block_dims.back();
            const std::uint64_t k = c.num_seeds;
            return n + k * d + mab(d) + k * d + 1;
        }
        std::uint64_t operator()(const GatConfig& c) const {
            const std::uint64_t ch = c.hidden_channels;
            return 2 * ch + c.num_layers * (ch * ch + 4 * ch) + ch + 1;
        }
    };
    return std::visit(Counter{}, cfg);
}

// ---------------------------------------------------------------------------
// ModelParams

template <typename T>
void ModelParams<T>::add(std::string name, Tensor<T> value, InitScheme init) {
    if (!index_.emplace(name, names_.size()).second) {
        throw std::invalid_argument(fmt::format("duplicate parameter name '{}'", name));
    }
    names_.push_back(std::move(name));
    tensors_.push_back(std::make_shared<Tensor<T>>(std::move(value)));
    init_.push_back(init);
}

template <typename T>
const Tensor<T>& ModelParams<T>::at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range(fmt::format("no parameter named '{}'", name));
    return *tensors_[it->second];
}

template <typename T>
std::uint64_t ModelParams<T>::total_size() const {
    std::uint64_t n = 0;
    for (const auto& t : tensors_) n += t->size();
    return n;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, Rng& rng) {
    ModelParams<T> params;
    for (const auto& spec : param_specs(cfg)) {
        Tensor<double> t(spec.shape);
        switch (spec.init) {
            case InitScheme::KaimingUniform: {
                const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
                for (auto& x : t.data()) x = rng.uniform(-bound, bound);
                break;
            }
            case InitScheme::SmallUniform:
                for (auto& x : t.data()) x = rng.uniform(-0.1, 0.1);
                break;
            case InitScheme::Ones:
                for (auto& x : t.data()) x = 1.0;
                break;
            case InitScheme::Zeros:
                break;
        }
        params.add(spec.name, t.template cast<T>(), spec.init);
    }
    return params;
}

template <typename T>
BoundParams<T>::BoundParams(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad) : tape_(&tape) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        index_.emplace(params.name(i), i);
        vars_.push_back(requires_grad ? tape.variable(std::shared_ptr<const Tensor<T>>(params.shared(i)))
                                      : tape.constant(params.tensor(i)));
    }
}

template <typename T>
BoundParams<T>::BoundParams(Tape<T>& tape, const ModelParams<T>& params, std::vector<Var<T>> vars)
    : tape_(&tape), vars_(std::move(vars)) {
    if (vars_.size() != params.size()) throw std::invalid_argument("BoundParams: one variable per parameter");
    for (std::size_t i = 0; i < params.size(); ++i) index_.emplace(params.name(i), i);
}

template <typename T>
Var<T> BoundParams<T>::operator[](const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range(fmt::format("model has no parameter '{}'", name));
    return vars_[it->second];
}

std::size_t batch_size(const Batch& b) {
    struct V {
        std::size_t operator()(const DenseBatch& d) const { return d.rows; }
        std::size_t operator()(const SetBatch& s) const { return s.batch; }
        std::size_t operator()(const GraphBatch& g) const { return g.num_graphs; }
    };
    return std::visit(V{}, b);
}

// ---------------------------------------------------------------------------
// Forward passes

namespace {

template <typename T>
Tensor<T> to_tensor(Shape shape, const std::vector<double>& values, double divisor = 1.0) {
    std::vector<T> v(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) v[i] = static_cast<T>(values[i] / divisor);
    return Tensor<T>(std::move(shape), std::move(v));
}

template <typename T>
Var<T> linear(const BoundParams<T>& p, const std::string& name, Var<T> x) {
    return add(matmul(x, p[name + ".weight"]), p[name + ".bias"]);
}

template <typename T>
Var<T> affine_norm(const BoundParams<T>& p, const std::string& name, Var<T> x, T eps) {
    return add(mul(layer_norm(x, eps), p[name + ".gamma"]), p[name + ".beta"]);
}

/// Multi-head attention block with residuals:
///   h = LN(q + MHA(q, kv)); out = LN(h + FF(h)).
/// q [B, Nq, d], kv [B, Nk, d]; key_keep [B, Nk].
template <typename T>
Var<T> attention_block(const BoundParams<T>& p, const std::string& prefix, Var<T> q, Var<T> kv,
                       const std::vector<std::uint8_t>& key_keep, std::size_t heads, T eps) {
    const Shape& qs = q.shape();
    const std::size_t b = qs[0], nq = qs[1], d = qs[2];
    const std::size_t nk = kv.shape()[1];
    const std::size_t dh = d / heads;

    // Key mask expanded to the [B, Nq, Nk] score layout.
    std::vector<std::uint8_t> keep(b * nq * nk);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t r = 0; r < nq; ++r)
            std::copy_n(key_keep.begin() + i * nk, nk, keep.begin() + (i * nq + r) * nk);

    auto query = linear(p, prefix + ".q", q);
    auto key = matmul(kv, p[prefix + ".k.weight"]);
    auto value = linear(p, prefix + ".v", kv);
    const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(dh));
    std::vector<Var<T>> head_out;
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = slice_last(query, h * dh, dh);
        auto kh = slice_last(key, h * dh, dh);
        auto vh = slice_last(value, h * dh, dh);
        auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        auto weights = masked_softmax(scores, std::span<const std::uint8_t>(keep));
        head_out.push_back(matmul(weights, vh));
    }
    auto attended = linear(p, prefix + ".o", heads == 1 ? head_out.front() : concat(head_out));
    auto h1 = affine_norm(p, prefix + ".ln1", add(q, attended), eps);
    auto ff = linear(p, prefix + ".ff2", relu(linear(p, prefix + ".ff1", h1)));
    return affine_norm(p, prefix + ".ln2", add(h1, ff), eps);
}

}  // namespace

template <typename T>
Var<T> mlp_forward(const MlpConfig& cfg, const BoundParams<T>& p, const DenseBatch& batch, bool train, Rng& rng) {
    if (batch.cols != cfg.input_dim) {
        throw ShapeError(fmt::format("mlp_forward: batch has {} features, config expects {}", batch.cols, cfg.input_dim));
    }
    auto& tape = p.tape();
    auto h = tape.constant(to_tensor<T>({batch.rows, batch.cols}, batch.x));
    for (std::size_t l = 0; l < cfg.hidden_dims.size(); ++l) {
        h = relu(linear(p, fmt::format("fc{}", l), h));
        h = dropout(h, cfg.dropout_p, train, rng);
    }
    return reshape(linear(p, "out", h), {batch.rows});
}

template <typename T>
Var<T> set_transformer_forward(const SetTransformerConfig& cfg, const BoundParams<T>& p, const SetBatch& batch,
                               bool /*train*/, Rng& /*rng*/) {
    const std::size_t b = batch.batch, n = batch.max_len;
    if (batch.pairs.size() != b * n * 2 || batch.keep.size() != b * n) {
        throw ShapeError("set_transformer_forward: pair/mask arrays do not match [batch, max_len]");
    }
    for (std::size_t i = 0; i < b; ++i) {
        if (std::none_of(batch.keep.begin() + i * n, batch.keep.begin() + (i + 1) * n, [](auto k) { return k != 0; })) {
            throw std::invalid_argument(fmt::format("set_transformer_forward: row {} has no real pairs", i));
        }
    }
    auto& tape = p.tape();
    const T eps = static_cast<T>(cfg.layer_norm_eps);

    std::vector<T> feats(b * n * 2);
    for (std::size_t i = 0; i < b * n; ++i) {
        feats[2 * i] = static_cast<T>(batch.pairs[2 * i] / cfg.mz_scale);
        feats[2 * i + 1] = static_cast<T>(batch.pairs[2 * i + 1]);
    }
    auto h = linear(p, "input", tape.constant(Tensor<T>({b, n, 2}, std::move(feats))));
    for (std::size_t k = 0; k < cfg.block_dims.size(); ++k) {
        if (k > 0 && cfg.block_dims[k] != cfg.block_dims[k - 1]) h = linear(p, fmt::format("proj{}", k), h);
        h = attention_block(p, fmt::format("sab{}", k), h, h, batch.keep, cfg.num_heads, eps);
    }

    const std::size_t d = cfg.block_dims.back();
    const std::size_t k = cfg.num_seeds;
    auto seeds = add(tape.constant(Tensor<T>({b, k, d})), p["pma.seeds"]);
    auto pooled = attention_block(p, "pma", seeds, h, batch.keep, cfg.num_heads, eps);
    return reshape(linear(p, "out", reshape(pooled, {b, k * d})), {b});
}

template <typename T>
Var<T> gat_forward(const GatConfig& cfg, const BoundParams<T>& p, const GraphBatch& batch, bool /*train*/,
                   Rng& /*rng*/) {
    const std::size_t v = batch.vertex_attr.size();
    const std::size_t arcs = batch.src.size();
    if (batch.vertex_graph.size() != v || batch.dst.size() != arcs || batch.edge_attr.size() != arcs) {
        throw ShapeError("gat_forward: inconsistent graph batch arrays");
    }
    for (std::size_t a = 0; a < arcs; ++a) {
        if (batch.src[a] >= v || batch.dst[a] >= v) {
            throw std::out_of_range(fmt::format("gat_forward: arc {} ({} -> {}) references a vertex outside [0, {})", a,
                                                batch.src[a], batch.dst[a], v));
        }
    }
    for (std::size_t i = 0; i < v; ++i) {
        if (batch.vertex_graph[i] >= batch.num_graphs || (i > 0 && batch.vertex_graph[i] < batch.vertex_graph[i - 1])) {
            throw std::invalid_argument("gat_forward: vertex graph ids must be sorted and below num_graphs");
        }
    }

    // Attention normalizes over the incoming arcs of each vertex, so arcs are
    // grouped by destination.
    std::vector<std::uint32_t> order(arcs);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return batch.dst[x] < batch.dst[y]; });
    std::vector<std::uint32_t> src(arcs), dst(arcs);
    std::vector<double> eattr(arcs);
    for (std::size_t a = 0; a < arcs; ++a) {
        src[a] = batch.src[order[a]];
        dst[a] = batch.dst[order[a]];
        eattr[a] = batch.edge_attr[order[a]];
    }

    auto& tape = p.tape();
    const std::size_t ch = cfg.hidden_channels;
    const std::size_t heads = cfg.num_heads;
    const std::size_t dh = ch / heads;
    const T slope = static_cast<T>(cfg.leaky_relu_slope);

    auto h = linear(p, "input", tape.constant(to_tensor<T>({v, 1}, batch.vertex_attr)));
    auto edges = tape.constant(to_tensor<T>({arcs, 1}, eattr, cfg.mz_scale));

    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const std::string prefix = fmt::format("gat{}", l);
        auto wh = matmul(h, p[prefix + ".weight"]);
        auto wh_src = gather_rows(wh, src);
        auto wh_dst = gather_rows(wh, dst);
        auto we = matmul(edges, p[prefix + ".edge_weight"]);
        auto att = p[prefix + ".att"];

        std::vector<Var<T>> head_msgs;
        for (std::size_t hd = 0; hd < heads; ++hd) {
            auto src_h = heads == 1 ? wh_src : slice_last(wh_src, hd * dh, dh);
            auto dst_h = heads == 1 ? wh_dst : slice_last(wh_dst, hd * dh, dh);
            auto edge_h = heads == 1 ? we : slice_last(we, hd * dh, dh);
            auto att_h = heads == 1 ? att : slice_last(att, hd, 1);
            auto score = leaky_relu(matmul(concat<T>({src_h, dst_h, edge_h}), att_h), slope);
            auto alpha = segment_softmax(score, dst, v);
            auto msg = mul(src_h, broadcast_last(alpha, dh));
            head_msgs.push_back(segment_sum(msg, dst, v));
        }
        auto update = relu(heads == 1 ? head_msgs.front() : concat(head_msgs));
        h = cfg.residual ? add(h, update) : update;
    }

    auto pooled = segment_mean(h, batch.vertex_graph, batch.num_graphs);
    return reshape(linear(p, "out", pooled), {batch.num_graphs});
}

template <typename T>
Var<T> forward(const ModelConfig& cfg, const BoundParams<T>& params, const Batch& batch, bool train, Rng& rng) {
    if (cfg.index() != batch.index()) {
        throw ShapeError(fmt::format("model '{}' cannot consume this batch representation", kind_name(kind_of(cfg))));
    }
    switch (kind_of(cfg)) {
        case ModelKind::Mlp:
            return mlp_forward(std::get<MlpConfig>(cfg), params, std::get<DenseBatch>(batch), train, rng);
        case ModelKind::SetTransformer:
            return set_transformer_forward(std::get<SetTransformerConfig>(cfg), params, std::get<SetBatch>(batch),
                                           train, rng);
        case ModelKind::Gat:
            return gat_forward(std::get<GatConfig>(cfg), params, std::get<GraphBatch>(batch), train, rng);
    }
    throw std::logic_error("unreachable");
}

std::vector<double> predict(const ModelConfig& cfg, const ModelParams<float>& params, const Batch& batch) {
    Tape<float> tape;
    BoundParams<float> bound(tape, params, false);
    Rng unused(0);
    const auto out = forward(cfg, bound, batch, false, unused);
    return std::vector<double>(out.value().data().begin(), out.value().data().end());
}

#define SPECENC_INSTANTIATE_MODELS(T)                                                                      \
    template class ModelParams<T>;                                                                         \
    template class BoundParams<T>;                                                                         \
    template ModelParams<T> init_params<T>(const ModelConfig&, Rng&);                                      \
    template Var<T> forward<T>(const ModelConfig&, const BoundParams<T>&, const Batch&, bool, Rng&);       \
    template Var<T> mlp_forward<T>(const MlpConfig&, const BoundParams<T>&, const DenseBatch&, bool, Rng&); \
    template Var<T> set_transformer_forward<T>(const SetTransformerConfig&, const BoundParams<T>&,         \
                                               const SetBatch&, bool, Rng&);                               \
    template Var<T> gat_forward<T>(const GatConfig&, const BoundParams<T>&, const GraphBatch&, bool, Rng&);

SPECENC_INSTANTIATE_MODELS(float)
SPECENC_INSTANTIATE_MODELS(double)
SPECENC_INSTANTIATE_MODELS(long double)

#undef SPECENC_INSTANTIATE_MODELS

}  // namespace specenc::models
