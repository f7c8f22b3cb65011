#include "specenc/config_json.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <set>

namespace specenc {

namespace {

/// Typed field access over one JSON object that rejects unknown keys.
class Fields {
public:
    Fields(const Json& j, std::string context) : j_(j), context_(std::move(context)) {
        if (!j.is_object()) throw ValidationError(fmt::format("{} must be a JSON object", context_));
    }

    template <typename V>
    void read(const char* key, V& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const auto& v = j_.at(key);
        try {
            if constexpr (std::is_same_v<V, bool>) {
                if (!v.is_boolean()) throw ValidationError("expected boolean");
            } else if constexpr (std::is_integral_v<V>) {
                if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
                    throw ValidationError("expected non-negative integer");
                }
            } else if constexpr (std::is_floating_point_v<V>) {
                if (!v.is_number()) throw ValidationError("expected number");
            } else if constexpr (std::is_same_v<V, std::string>) {
                if (!v.is_string()) throw ValidationError("expected string");
            }
            out = v.get<V>();
        } catch (const ValidationError& e) {
            throw ValidationError(fmt::format("{}.{}: {}", context_, key, e.what()));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(fmt::format("{}.{}: {}", context_, key, e.what()));
        }
    }

    void read_dims(const char* key, std::vector<std::size_t>& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const auto& v = j_.at(key);
        if (!v.is_array()) throw ValidationError(fmt::format("{}.{}: expected array of integers", context_, key));
        out.clear();
        for (const auto& e : v) {
            if (!e.is_number_unsigned()) {
                throw ValidationError(fmt::format("{}.{}: expected array of non-negative integers", context_, key));
            }
            out.push_back(e.get<std::size_t>());
        }
    }

    void skip(const char* key) { seen_.insert(key); }

    void finish() const {
        for (const auto& [k, _] : j_.items()) {
            if (!seen_.count(k)) throw ValidationError(fmt::format("{}: unknown key '{}'", context_, k));
        }
    }

private:
    const Json& j_;
    std::string context_;
    std::set<std::string> seen_;
};

Json number_or_null(double v) {
    return std::isfinite(v) ? Json(v) : Json(nullptr);
}

double number_or_nan(const Json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

Json to_json(const models::ModelConfig& cfg) {
    using namespace models;
    Json j;
    j["kind"] = std::string(kind_name(kind_of(cfg)));
    if (const auto* m = std::get_if<MlpConfig>(&cfg)) {
        j["input_dim"] = m->input_dim;
        j["hidden_dims"] = m->hidden_dims;
        j["dropout_p"] = m->dropout_p;
    } else if (const auto* s = std::get_if<SetTransformerConfig>(&cfg)) {
        j["block_dims"] = s->block_dims;
        j["num_heads"] = s->num_heads;
        j["num_seeds"] = s->num_seeds;
        j["mz_scale"] = s->mz_scale;
        j["layer_norm_eps"] = s->layer_norm_eps;
    } else if (const auto* g = std::get_if<GatConfig>(&cfg)) {
        j["num_layers"] = g->num_layers;
        j["hidden_channels"] = g->hidden_channels;
        j["num_heads"] = g->num_heads;
        j["leaky_relu_slope"] = g->leaky_relu_slope;
        j["mz_scale"] = g->mz_scale;
        j["residual"] = g->residual;
    }
    return j;
}

models::ModelConfig model_config_from_json(const Json& j) {
    using namespace models;
    Fields f(j, "model");
    std::string kind;
    f.read("kind", kind);
    if (kind.empty()) throw ValidationError("model.kind is required");
    ModelConfig cfg;
    switch (parse_kind(kind)) {
        case ModelKind::Mlp: {
            MlpConfig m;
            f.read("input_dim", m.input_dim);
            f.read_dims("hidden_dims", m.hidden_dims);
            f.read("dropout_p", m.dropout_p);
            cfg = m;
            break;
        }
        case ModelKind::SetTransformer: {
            SetTransformerConfig s;
            f.read_dims("block_dims", s.block_dims);
            f.read("num_heads", s.num_heads);
            f.read("num_seeds", s.num_seeds);
            f.read("mz_scale", s.mz_scale);
            f.read("layer_norm_eps", s.layer_norm_eps);
            cfg = s;
            break;
        }
        case ModelKind::Gat: {
            GatConfig g;
            f.read("num_layers", g.num_layers);
            f.read("hidden_channels", g.hidden_channels);
            f.read("num_heads", g.num_heads);
            f.read("leaky_relu_slope", g.leaky_relu_slope);
            f.read("mz_scale", g.mz_scale);
            f.read("residual", g.residual);
            cfg = g;
            break;
        }
    }
    f.finish();
    validate(cfg);
    return cfg;
}

Json to_json(const TrainConfig& c) {
    return Json{{"learning_rate", c.learning_rate},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"adam_eps", c.adam_eps},
                {"batch_size", c.batch_size},
                {"max_epochs", c.max_epochs},
                {"patience", c.patience},
                {"seed", c.seed},
                {"loss", c.loss == LossKind::Mse ? "mse" : "mae"}};
}

TrainConfig train_config_from_json(const Json& j) {
    Fields f(j, "train");
    TrainConfig c;
    f.read("learning_rate", c.learning_rate);
    f.read("beta1", c.beta1);
    f.read("beta2", c.beta2);
    f.read("adam_eps", c.adam_eps);
    f.read("batch_size", c.batch_size);
    f.read("max_epochs", c.max_epochs);
    f.read("patience", c.patience);
    f.read("seed", c.seed);
    std::string loss = "mse";
    f.read("loss", loss);
    if (loss == "mse") {
        c.loss = LossKind::Mse;
    } else if (loss == "mae") {
        c.loss = LossKind::Mae;
    } else {
        throw ValidationError(fmt::format("train.loss must be 'mse' or 'mae', got '{}'", loss));
    }
    f.finish();
    c.validate();
    return c;
}

Json to_json(const RepresentationConfig& c) {
    Json j{{"kind", std::string(representation_name(c.kind))}};
    if (c.kind == Representation::Binned) {
        j["min_mz"] = c.bins.min_mz;
        j["max_mz"] = c.bins.max_mz;
        j["bin_width"] = c.bins.bin_width;
        j["aggregation"] = c.bins.aggregation == BinAggregation::Sum ? "sum" : "max";
    }
    return j;
}

RepresentationConfig representation_config_from_json(const Json& j) {
    RepresentationConfig c;
    if (j.is_string()) {
        c.kind = parse_representation(j.get<std::string>());
        return c;
    }
    Fields f(j, "representation");
    std::string kind;
    f.read("kind", kind);
    if (kind.empty()) throw ValidationError("representation.kind is required");
    c.kind = parse_representation(kind);
    if (c.kind == Representation::Binned) {
        f.read("min_mz", c.bins.min_mz);
        f.read("max_mz", c.bins.max_mz);
        f.read("bin_width", c.bins.bin_width);
        std::string agg = "sum";
        f.read("aggregation", agg);
        if (agg == "sum") {
            c.bins.aggregation = BinAggregation::Sum;
        } else if (agg == "max") {
            c.bins.aggregation = BinAggregation::Max;
        } else {
            throw ValidationError(fmt::format("representation.aggregation must be 'sum' or 'max', got '{}'", agg));
        }
        c.bins.validate();
    }
    f.finish();
    return c;
}

Json to_json(const SyntheticConfig& c) {
    return Json{{"seed", c.seed},
                {"n_spectra", c.n_spectra},
                {"peaks_min", c.peaks_min},
                {"peaks_max", c.peaks_max},
                {"mz_max", c.mz_max},
                {"gap_signal_prob", c.gap_signal_prob}};
}

SyntheticConfig synthetic_config_from_json(const Json& j) {
    Fields f(j, "data.synthetic");
    SyntheticConfig c;
    f.read("seed", c.seed);
    f.read("n_spectra", c.n_spectra);
    f.read("peaks_min", c.peaks_min);
    f.read("peaks_max", c.peaks_max);
    f.read("mz_max", c.mz_max);
    f.read("gap_signal_prob", c.gap_signal_prob);
    f.skip("split_counts");
    f.finish();
    c.validate();
    return c;
}

Json to_json(const RegressionMetrics& m) {
    return Json{{"mae", m.mae},
                {"rmse", m.rmse},
                {"pearson_r", number_or_null(m.pearson_r)},
                {"r2", number_or_null(m.r2)},
                {"r_defined", m.r_defined},
                {"r2_defined", m.r2_defined}};
}

RegressionMetrics metrics_from_json(const Json& j) {
    RegressionMetrics m;
    m.mae = j.at("mae").get<double>();
    m.rmse = j.at("rmse").get<double>();
    m.pearson_r = number_or_nan(j.at("pearson_r"));
    m.r2 = number_or_nan(j.at("r2"));
    m.r_defined = j.at("r_defined").get<bool>();
    m.r2_defined = j.at("r2_defined").get<bool>();
    return m;
}

Json to_json(const RunHistory& h, bool include_timing) {
    Json epochs = Json::array();
    for (const auto& e : h.epochs) {
        Json r{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val", to_json(e.val)}};
        if (include_timing) r["wall_seconds"] = e.wall_seconds;
        epochs.push_back(std::move(r));
    }
    Json j{{"model", h.model},
           {"seed", h.seed},
           {"config_hash", h.config_hash},
           {"param_count", h.param_count},
           {"epochs", std::move(epochs)},
           {"best_epoch", h.best_epoch},
           {"early_stopped", h.early_stopped},
           {"train_metrics", to_json(h.train_metrics)},
           {"val_metrics", to_json(h.val_metrics)}};
    if (h.has_test) j["test_metrics"] = to_json(h.test_metrics);
    return j;
}

RunHistory run_history_from_json(const Json& j) {
    RunHistory h;
    h.model = j.at("model").get<std::string>();
    h.seed = j.at("seed").get<std::uint64_t>();
    h.config_hash = j.at("config_hash").get<std::string>();
    h.param_count = j.at("param_count").get<std::uint64_t>();
    for (const auto& e : j.at("epochs")) {
        EpochRecord r;
        r.epoch = e.at("epoch").get<std::size_t>();
        r.train_loss = e.at("train_loss").get<double>();
        r.val = metrics_from_json(e.at("val"));
        r.wall_seconds = e.value("wall_seconds", 0.0);
        h.epochs.push_back(r);
    }
    h.best_epoch = j.at("best_epoch").get<std::size_t>();
    h.early_stopped = j.at("early_stopped").get<bool>();
    h.train_metrics = metrics_from_json(j.at("train_metrics"));
    h.val_metrics = metrics_from_json(j.at("val_metrics"));
    if (j.contains("test_metrics")) {
        h.has_test = true;
        h.test_metrics = metrics_from_json(j.at("test_metrics"));
    }
    return h;
}

std::string config_hash(const Json& j) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : j.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

}  // namespace specenc
