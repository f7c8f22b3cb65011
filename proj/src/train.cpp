#include "specenc/train.hpp"

#include "specenc/config_json.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace specenc {

using models::ModelParams;

std::string_view representation_name(Representation r) {
    switch (r) {
        case Representation::Binned: return "binned";
        case Representation::Set: return "set";
        case Representation::Graph: return "graph";
    }
    return "unknown";
}

Representation parse_representation(std::string_view name) {
    if (name == "binned") return Representation::Binned;
    if (name == "set") return Representation::Set;
    if (name == "graph") return Representation::Graph;
    throw ValidationError(fmt::format("unknown representation '{}' (expected binned, set or graph)", name));
}

models::ModelKind model_for(Representation r) {
    switch (r) {
        case Representation::Binned: return models::ModelKind::Mlp;
        case Representation::Set: return models::ModelKind::SetTransformer;
        case Representation::Graph: return models::ModelKind::Gat;
    }
    throw std::logic_error("unreachable");
}

Encoding encode(const Spectrum& s, const RepresentationConfig& cfg) {
    switch (cfg.kind) {
        case Representation::Binned: return encode_binned(s, cfg.bins);
        case Representation::Set: return encode_set(s);
        case Representation::Graph: return encode_graph(s);
    }
    throw std::logic_error("unreachable");
}

EncodedDataset encode_dataset(const std::vector<Spectrum>& spectra, const RepresentationConfig& cfg,
                              bool require_labels) {
    if (cfg.kind == Representation::Binned) cfg.bins.validate();
    EncodedDataset out;
    out.kind = cfg.kind;
    for (const auto& s : spectra) {
        if (require_labels && !s.label) throw ValidationError(fmt::format("spectrum '{}' has no label", s.id));
        const bool usable = std::any_of(s.peaks.begin(), s.peaks.end(), [](const Peak& p) { return p.intensity > 0.0; });
        if (!usable) {
            out.skipped_ids.push_back(s.id);
            continue;
        }
        EncodedSample sample{s.id, s.label.value_or(0.0), encode(preprocess(s), cfg)};
        if (const auto* b = std::get_if<BinnedVector>(&sample.data)) out.dropped_peaks += b->dropped_peaks;
        out.samples.push_back(std::move(sample));
    }
    return out;
}

LabeledBatch collate(const EncodedDataset& data, std::span<const std::size_t> indices) {
    LabeledBatch out;
    out.indices.assign(indices.begin(), indices.end());
    for (auto i : indices) out.labels.push_back(data.samples.at(i).label);

    switch (data.kind) {
        case Representation::Binned: {
            models::DenseBatch b;
            b.rows = indices.size();
            b.cols = indices.empty() ? 0 : std::get<BinnedVector>(data.samples[indices[0]].data).values.size();
            b.x.reserve(b.rows * b.cols);
            for (auto i : indices) {
                const auto& v = std::get<BinnedVector>(data.samples[i].data).values;
                if (v.size() != b.cols) throw std::invalid_argument("collate: binned vectors differ in length");
                b.x.insert(b.x.end(), v.begin(), v.end());
            }
            out.inputs = std::move(b);
            break;
        }
        case Representation::Set: {
            models::SetBatch b;
            b.batch = indices.size();
            for (auto i : indices) b.max_len = std::max(b.max_len, std::get<PeakSet>(data.samples[i].data).size());
            b.pairs.assign(b.batch * b.max_len * 2, 0.0);
            b.keep.assign(b.batch * b.max_len, 0);
            for (std::size_t r = 0; r < indices.size(); ++r) {
                const auto& s = std::get<PeakSet>(data.samples[indices[r]].data);
                for (std::size_t k = 0; k < s.size(); ++k) {
                    b.pairs[(r * b.max_len + k) * 2] = s.mz[k];
                    b.pairs[(r * b.max_len + k) * 2 + 1] = s.intensity[k];
                    b.keep[r * b.max_len + k] = 1;
                }
            }
            out.inputs = std::move(b);
            break;
        }
        case Representation::Graph: {
            models::GraphBatch b;
            b.num_graphs = indices.size();
            for (std::size_t r = 0; r < indices.size(); ++r) {
                const auto& g = std::get<PeakGraph>(data.samples[indices[r]].data);
                const auto offset = static_cast<std::uint32_t>(b.vertex_attr.size());
                b.vertex_attr.insert(b.vertex_attr.end(), g.vertex_attr.begin(), g.vertex_attr.end());
                b.vertex_graph.insert(b.vertex_graph.end(), g.num_vertices(), static_cast<std::uint32_t>(r));
                for (std::size_t a = 0; a < g.num_arcs(); ++a) {
                    b.src.push_back(g.src[a] + offset);
                    b.dst.push_back(g.dst[a] + offset);
                }
                b.edge_attr.insert(b.edge_attr.end(), g.edge_attr.begin(), g.edge_attr.end());
            }
            out.inputs = std::move(b);
            break;
        }
    }
    return out;
}

std::vector<LabeledBatch> make_batches(const EncodedDataset& data, std::size_t batch_size, std::uint64_t seed,
                                       std::size_t epoch, bool shuffle) {
    if (batch_size == 0) throw std::invalid_argument("make_batches: batch_size must be >= 1");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) {
        Rng rng(derive_seed(derive_seed(seed, 1), epoch));
        rng.shuffle(order);
    }
    std::vector<LabeledBatch> out;
    for (std::size_t lo = 0; lo < order.size(); lo += batch_size) {
        const std::size_t hi = std::min(order.size(), lo + batch_size);
        out.push_back(collate(data, std::span<const std::size_t>(order).subspan(lo, hi - lo)));
    }
    return out;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ValidationError("train.learning_rate must be a finite non-negative number");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ValidationError("train.beta1 and train.beta2 must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ValidationError("train.adam_eps must be > 0");
    if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
    if (max_epochs < 1) throw ValidationError("train.max_epochs must be >= 1");
}

Adam::Adam(const ModelParams<float>& params, const TrainConfig& cfg)
    : lr_(cfg.learning_rate), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_.emplace_back(params.tensor(i).size(), 0.0f);
        v_.emplace_back(params.tensor(i).size(), 0.0f);
    }
}

std::uint64_t Adam::step(ModelParams<float>& params, const std::vector<ad::Tensor<float>>& grads) {
    if (grads.size() != params.size()) throw std::invalid_argument("Adam::step: gradient count mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const auto b1 = static_cast<float>(beta1_);
    const auto b2 = static_cast<float>(beta2_);
    const auto step_size = static_cast<float>(lr_ / c1);
    const auto inv_sqrt_c2 = static_cast<float>(1.0 / std::sqrt(c2));
    const auto eps = static_cast<float>(eps_);
    std::uint64_t touched = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params.tensor(i);
        const auto& g = grads[i];
        if (g.size() != p.size()) throw std::invalid_argument("Adam::step: gradient shape mismatch");
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = b1 * m[k] + (1.0f - b1) * g[k];
            v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
            p[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_c2 + eps);
        }
        touched += p.size();
    }
    return touched;
}

double train_step(const models::ModelConfig& model, ModelParams<float>& params, Adam& opt, const LabeledBatch& batch,
                  LossKind loss, Rng& dropout_rng) {
    ad::Tape<float> tape;
    models::BoundParams<float> bound(tape, params, true);
    auto pred = models::forward(model, bound, batch.inputs, true, dropout_rng);
    ad::Tensor<float> target({batch.labels.size()});
    for (std::size_t i = 0; i < batch.labels.size(); ++i) target[i] = static_cast<float>(batch.labels[i]);
    auto l = loss == LossKind::Mse ? ad::mse_loss(pred, target) : ad::mae_loss(pred, target);
    const double value = l.value().item();
    tape.backward(l);
    std::vector<ad::Tensor<float>> grads;
    grads.reserve(params.size());
    for (const auto& v : bound.vars()) grads.push_back(tape.grad(v));
    opt.step(params, grads);
    return value;
}

std::vector<double> predict_dataset(const models::ModelConfig& model, const ModelParams<float>& params,
                                    const EncodedDataset& data, std::size_t batch_size) {
    std::vector<double> out;
    out.reserve(data.size());
    for (const auto& b : make_batches(data, batch_size, 0, 0, false)) {
        const auto p = models::predict(model, params, b.inputs);
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

RegressionMetrics evaluate(const models::ModelConfig& model, const ModelParams<float>& params,
                           const EncodedDataset& data, std::size_t batch_size) {
    const auto pred = predict_dataset(model, params, data, batch_size);
    std::vector<double> y;
    y.reserve(data.size());
    for (const auto& s : data.samples) y.push_back(s.label);
    return compute_metrics(y, pred);
}

TrainResult train_model(const models::ModelConfig& model, const EncodedDataset& train, const EncodedDataset& val,
                        const EncodedDataset* test, const TrainConfig& cfg) {
    cfg.validate();
    models::validate(model);
    if (model_for(train.kind) != models::kind_of(model) || val.kind != train.kind ||
        (test && test->kind != train.kind)) {
        throw ValidationError(fmt::format("model '{}' does not match the '{}' representation",
                                          models::kind_name(models::kind_of(model)), representation_name(train.kind)));
    }
    if (train.size() == 0) throw ValidationError("training split is empty");
    if (val.size() < 2) throw ValidationError("validation split needs at least 2 spectra");

    Rng init_rng(derive_seed(cfg.seed, 0));
    Rng dropout_rng(derive_seed(cfg.seed, 2));
    auto params = models::init_params<float>(model, init_rng);
    Adam opt(params, cfg);

    TrainResult result{params.clone(), {}};
    auto& hist = result.history;
    hist.model = std::string(models::kind_name(models::kind_of(model)));
    hist.seed = cfg.seed;
    hist.param_count = models::param_count(model);
    hist.config_hash = config_hash(Json{{"model", to_json(model)}, {"train", to_json(cfg)}});

    double best_mae = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        for (const auto& batch : make_batches(train, cfg.batch_size, cfg.seed, epoch)) {
            loss_sum += train_step(model, params, opt, batch, cfg.loss, dropout_rng) *
                        static_cast<double>(batch.labels.size());
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train.size());
        rec.val = evaluate(model, params, val);
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        hist.epochs.push_back(rec);

        if (rec.val.mae < best_mae) {
            best_mae = rec.val.mae;
            hist.best_epoch = epoch;
            result.params = params.clone();
            since_best = 0;
        } else if (++since_best >= cfg.patience && cfg.patience > 0) {
            hist.early_stopped = true;
            break;
        }
    }

    if (train.size() >= 2) hist.train_metrics = evaluate(model, result.params, train);
    hist.val_metrics = evaluate(model, result.params, val);
    if (test) {
        hist.test_metrics = evaluate(model, result.params, *test);
        hist.has_test = true;
    }
    return result;
}

}  // namespace specenc
