#include "specenc/cli.hpp"

#include "specenc/encoders.hpp"
#include "specenc/gradcheck_suite.hpp"
#include "specenc/tensor_io.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace specenc::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-6;

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot read '{}'", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    out << text;
    if (!out) throw IoError(fmt::format("error writing '{}'", path.string()));
}

void make_dirs(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(fmt::format("cannot create directory '{}': {}", dir.string(), ec.message()));
}

Json parse_json(const std::string& text, const std::string& what) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ValidationError(fmt::format("{} is not valid JSON: {}", what, e.what()));
    }
}

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return fs::absolute(path.is_absolute() ? path : base / path).lexically_normal();
}

std::string path_field(const Json& j, const char* key, const char* context) {
    const auto& v = j.at(key);
    if (!v.is_string() || v.get<std::string>().empty()) {
        throw ValidationError(fmt::format("{}.{} must be a non-empty string", context, key));
    }
    return v.get<std::string>();
}

void reject_unknown(const Json& j, std::initializer_list<const char*> keys, const char* context) {
    if (!j.is_object()) throw ValidationError(fmt::format("{} must be a JSON object", context));
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, _] : j.items()) {
        if (!allowed.count(k)) throw ValidationError(fmt::format("{}: unknown key '{}'", context, k));
    }
}

// ---------------------------------------------------------------------------
// Output helpers

enum class Format { Text, Csv, Json };

Format parse_format(const std::string& s) {
    if (s == "text") return Format::Text;
    if (s == "csv") return Format::Csv;
    if (s == "json") return Format::Json;
    throw ValidationError(fmt::format("unknown format '{}'", s));
}

std::string metric_cell(double v) {
    return std::isfinite(v) ? fmt::format("{:.4f}", v) : "nan";
}

struct MeanStd {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double std = std::numeric_limits<double>::quiet_NaN();
};

/// Mean and sample standard deviation; NaN values make the result NaN.
MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd r;
    if (xs.empty()) return r;
    const double n = static_cast<double>(xs.size());
    r.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    if (xs.size() == 1) {
        r.std = std::isfinite(r.mean) ? 0.0 : r.mean;
        return r;
    }
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / (n - 1.0));
    return r;
}

std::string mean_std_cell(const MeanStd& m) {
    if (!std::isfinite(m.mean)) return "nan";
    return fmt::format("{:.4f}±{:.4f}", m.mean, m.std);
}

Json mean_std_json(const MeanStd& m) {
    auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
    return Json{{"mean", num(m.mean)}, {"std", num(m.std)}};
}

constexpr const char* kTableHeader = "model,params,mae,rmse,pearson_r,r2";

void print_table(std::ostream& out, const std::vector<std::array<std::string, 6>>& rows) {
    std::array<std::size_t, 6> width{};
    const std::array<std::string, 6> head{"model", "params", "mae", "rmse", "pearson_r", "r2"};
    for (std::size_t c = 0; c < 6; ++c) width[c] = head[c].size();
    for (const auto& r : rows)
        for (std::size_t c = 0; c < 6; ++c) width[c] = std::max(width[c], r[c].size());
    auto line = [&](const std::array<std::string, 6>& r) {
        std::string s;
        for (std::size_t c = 0; c < 6; ++c) {
            // "±" is two bytes but one column.
            const std::size_t shown = r[c].size() - (r[c].find("±") != std::string::npos ? 1 : 0);
            const std::size_t w = width[c] - (std::any_of(rows.begin(), rows.end(), [&](const auto& x) {
                                                  return x[c].find("±") != std::string::npos;
                                              })
                                                  ? 1
                                                  : 0);
            s += r[c] + std::string(w > shown ? w - shown : 0, ' ');
            if (c + 1 < 6) s += "  ";
        }
        while (!s.empty() && s.back() == ' ') s.pop_back();
        out << s << '\n';
    };
    line(head);
    for (const auto& r : rows) line(r);
}

unsigned thread_cap() {
    if (const char* env = std::getenv("SPECENC_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
        throw ValidationError(fmt::format("SPECENC_THREADS must be a positive integer, got '{}'", env));
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------------------
// Commands

struct CommonOptions {
    std::string spec_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string format = "text";
};

RunSpec spec_with_overrides(const CommonOptions& o) {
    if (o.spec_path.empty()) throw ValidationError("--spec is required");
    RunSpec spec = load_runspec(o.spec_path);
    if (o.seed) spec.seeds = {*o.seed};
    if (!o.out_dir.empty()) spec.output_dir = fs::absolute(o.out_dir).lexically_normal();
    return spec;
}

std::vector<TensorRecord> encoding_records(const Encoding& e) {
    struct V {
        std::vector<TensorRecord> operator()(const BinnedVector& b) const { return {to_tensor(b)}; }
        std::vector<TensorRecord> operator()(const PeakSet& s) const { return {to_tensor(s)}; }
        std::vector<TensorRecord> operator()(const PeakGraph& g) const { return to_tensors(g); }
    };
    return std::visit(V{}, e);
}

int cmd_encode(const CommonOptions& o, std::ostream& out, std::ostream& err) {
    const Format format = parse_format(o.format);
    RunSpec spec = load_runspec(o.spec_path.empty() ? throw ValidationError("--spec is required") : o.spec_path);
    const fs::path dir = o.out_dir.empty() ? spec.output_dir / "encoded" : fs::absolute(o.out_dir);
    const SourceData src = load_source(spec);

    Json warnings = Json::array();
    auto warn = [&](const std::string& msg) {
        err << "warning: " << msg << '\n';
        warnings.push_back(msg);
    };
    if (src.spectra.empty()) warn("input contains no spectra");

    make_dirs(dir);
    Json entries = Json::array();
    Json skipped = Json::array();
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < src.spectra.size(); ++i) {
        const Spectrum& s = src.spectra[i];
        Spectrum pre;
        try {
            pre = preprocess(s);
        } catch (const std::invalid_argument&) {
            warn(fmt::format("spectrum '{}' has no peak with positive intensity; skipped", s.id));
            skipped.push_back(s.id);
            continue;
        }
        const Encoding enc = encode(pre, spec.representation);
        if (const auto* b = std::get_if<BinnedVector>(&enc); b && b->dropped_peaks > 0) {
            dropped += b->dropped_peaks;
            warn(fmt::format("spectrum '{}': {} peak(s) outside [{}, {}) dropped from the binned vector", s.id,
                             b->dropped_peaks, spec.representation.bins.min_mz, spec.representation.bins.max_mz));
        }
        const auto records = encoding_records(enc);
        const std::string file = fmt::format("{:06d}.tnsr", i);
        save_tensor_file((dir / file).string(), std::span<const TensorRecord>(records));
        Json shapes = Json::array();
        for (const auto& r : records) shapes.push_back(r.shape);
        Json entry{{"id", s.id}, {"file", file}, {"shapes", shapes}};
        if (const auto it = src.labels.find(s.id); it != src.labels.end()) {
            entry["label"] = it->second;
        } else if (s.label) {
            entry["label"] = *s.label;
        }
        entries.push_back(std::move(entry));
    }

    const Json index{{"representation", specenc::to_json(spec.representation)},
                     {"model", std::string(models::kind_name(models::kind_of(spec.model)))},
                     {"count", entries.size()},
                     {"entries", entries},
                     {"skipped", skipped},
                     {"dropped_peaks", dropped},
                     {"warnings", warnings}};
    write_file(dir / "index.json", index.dump(2) + "\n");

    if (format == Format::Json) {
        out << Json{{"output_dir", dir.string()}, {"count", entries.size()}, {"skipped", skipped.size()}}.dump(2)
            << '\n';
    } else if (format == Format::Csv) {
        out << "output_dir,count,skipped\n" << dir.string() << ',' << entries.size() << ',' << skipped.size() << '\n';
    } else {
        out << fmt::format("encoded {} spectra into {} ({} skipped)\n", entries.size(), dir.string(), skipped.size());
    }
    return kExitOk;
}

struct SeedOutcome {
    RunHistory history;
    std::exception_ptr error;
};

int cmd_train(const CommonOptions& o, std::ostream& out, std::ostream& err) {
    const Format format = parse_format(o.format);
    const RunSpec spec = spec_with_overrides(o);
    if (spec.seeds.empty()) throw ValidationError("seeds must list at least one seed");
    if (std::set<std::uint64_t>(spec.seeds.begin(), spec.seeds.end()).size() != spec.seeds.size()) {
        throw ValidationError("seeds must be distinct");
    }

    const EncodedSplits data = prepare_splits(spec);
    for (const auto& w : data.warnings) err << "warning: " << w << '\n';
    make_dirs(spec.output_dir);
    write_file(spec.output_dir / "runspec.json", runspec_to_json(spec).dump(2) + "\n");

    const EncodedDataset* test = data.test.size() >= 2 ? &data.test : nullptr;
    std::vector<SeedOutcome> outcomes(spec.seeds.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto worker = [&] {
        for (std::size_t k; (k = next.fetch_add(1)) < spec.seeds.size();) {
            try {
                TrainConfig cfg = spec.train;
                cfg.seed = spec.seeds[k];
                auto result = train_model(spec.model, data.train, data.val, test, cfg);
                const fs::path run_dir = spec.output_dir / fmt::format("seed_{}", cfg.seed);
                make_dirs(run_dir);
                write_file(run_dir / "history.json", specenc::to_json(result.history).dump(2) + "\n");
                save_checkpoint(run_dir / "checkpoint", spec, cfg.seed, result.params);
                {
                    std::lock_guard lock(log_mutex);
                    err << fmt::format("seed {}: {} epochs, best epoch {}, val mae {:.6f}\n", cfg.seed,
                                       result.history.epochs.size(), result.history.best_epoch,
                                       result.history.val_metrics.mae);
                }
                outcomes[k].history = std::move(result.history);
            } catch (...) {
                outcomes[k].error = std::current_exception();
            }
        }
    };
    const unsigned n_threads = std::min<unsigned>(thread_cap(), static_cast<unsigned>(spec.seeds.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (const auto& oc : outcomes) {
        if (oc.error) std::rethrow_exception(oc.error);
    }

    // Aggregate on the test split when there is one, else validation.
    const std::string split_name = test ? "test" : "val";
    std::vector<double> mae, rmse, r, r2;
    Json per_seed = Json::array();
    for (const auto& oc : outcomes) {
        const auto& h = oc.history;
        const auto& m = test ? h.test_metrics : h.val_metrics;
        mae.push_back(m.mae);
        rmse.push_back(m.rmse);
        r.push_back(m.pearson_r);
        r2.push_back(m.r2);
        Json s{{"seed", h.seed},
               {"epochs_run", h.epochs.size()},
               {"best_epoch", h.best_epoch},
               {"early_stopped", h.early_stopped},
               {"train", specenc::to_json(h.train_metrics)},
               {"val", specenc::to_json(h.val_metrics)}};
        if (h.has_test) s["test"] = specenc::to_json(h.test_metrics);
        per_seed.push_back(std::move(s));
    }
    const std::string model_name(models::kind_name(models::kind_of(spec.model)));
    const std::uint64_t params = models::param_count(spec.model);
    const std::array<std::string, 6> row{model_name,
                                         std::to_string(params),
                                         mean_std_cell(mean_std(mae)),
                                         mean_std_cell(mean_std(rmse)),
                                         mean_std_cell(mean_std(r)),
                                         mean_std_cell(mean_std(r2))};
    std::string csv = std::string(kTableHeader) + "\n";
    for (std::size_t c = 0; c < row.size(); ++c) csv += row[c] + (c + 1 < row.size() ? "," : "\n");
    write_file(spec.output_dir / "summary.csv", csv);

    const Json summary{{"model", model_name},
                       {"params", params},
                       {"config_hash", outcomes.front().history.config_hash},
                       {"split", split_name},
                       {"seeds", per_seed},
                       {"aggregate",
                        {{"mae", mean_std_json(mean_std(mae))},
                         {"rmse", mean_std_json(mean_std(rmse))},
                         {"pearson_r", mean_std_json(mean_std(r))},
                         {"r2", mean_std_json(mean_std(r2))}}},
                       {"warnings", data.warnings}};
    write_file(spec.output_dir / "summary.json", summary.dump(2) + "\n");

    if (format == Format::Json) {
        out << summary.dump(2) << '\n';
    } else if (format == Format::Csv) {
        out << csv;
    } else {
        out << fmt::format("{} split, {} seed(s), outputs in {}\n", split_name, spec.seeds.size(),
                           spec.output_dir.string());
        print_table(out, {row});
    }
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& split, const std::string& format_name,
             std::ostream& out, std::ostream& err) {
    const Format format = parse_format(format_name);
    if (checkpoint.empty()) throw ValidationError("--checkpoint is required");
    const Checkpoint ck = load_checkpoint(checkpoint);
    const EncodedSplits data = prepare_splits(ck.spec);
    for (const auto& w : data.warnings) err << "warning: " << w << '\n';
    const EncodedDataset* d = split == "train" ? &data.train : split == "val" ? &data.val : &data.test;
    if (d->size() < 2) throw ValidationError(fmt::format("the {} split has fewer than 2 usable spectra", split));
    const RegressionMetrics m = evaluate(ck.spec.model, ck.params, *d);

    const std::string model_name(models::kind_name(models::kind_of(ck.spec.model)));
    const std::uint64_t params = ck.params.total_size();
    if (format == Format::Json) {
        out << Json{{"model", model_name},
                    {"params", params},
                    {"seed", ck.seed},
                    {"split", split},
                    {"n", d->size()},
                    {"metrics", specenc::to_json(m)}}
                   .dump(2)
            << '\n';
        return kExitOk;
    }
    const std::array<std::string, 6> row{model_name,         std::to_string(params), metric_cell(m.mae),
                                         metric_cell(m.rmse), metric_cell(m.pearson_r), metric_cell(m.r2)};
    if (format == Format::Csv) {
        out << kTableHeader << '\n';
        for (std::size_t c = 0; c < row.size(); ++c) out << row[c] << (c + 1 < row.size() ? "," : "\n");
    } else {
        out << fmt::format("{} split, n = {}\n", split, d->size());
        print_table(out, {row});
    }
    return kExitOk;
}

models::ModelConfig toy_with_dims(models::ModelKind kind, const std::vector<std::size_t>& dims) {
    using namespace models;
    ModelConfig cfg = ad::toy_config(kind);
    if (dims.empty()) return cfg;
    switch (kind) {
        case ModelKind::Mlp: std::get<MlpConfig>(cfg).hidden_dims = dims; break;
        case ModelKind::SetTransformer: std::get<SetTransformerConfig>(cfg).block_dims = dims; break;
        case ModelKind::Gat: {
            if (dims.size() != 2) throw ValidationError("gat --dims takes two values: layers,channels");
            auto& g = std::get<GatConfig>(cfg);
            g.num_layers = dims[0];
            g.hidden_channels = dims[1];
            break;
        }
    }
    validate(cfg);
    return cfg;
}

int cmd_gradcheck(const std::string& target, std::uint64_t seed, std::size_t cases,
                  const std::vector<std::size_t>& dims, bool corrupt, const std::string& format_name,
                  std::ostream& out) {
    const Format format = parse_format(format_name);
    if (cases == 0) throw ValidationError("--cases must be positive");
    const bool primitives = target == "primitives" || target == "all";
    std::vector<models::ModelKind> kinds;
    if (target == "all" || target == "models") {
        kinds = {models::ModelKind::Mlp, models::ModelKind::SetTransformer, models::ModelKind::Gat};
    } else if (!primitives) {
        kinds = {models::parse_kind(target)};
    }
    if (!dims.empty() && kinds.size() != 1) throw ValidationError("--dims applies to a single model kind");

    struct Line {
        std::string kind, name;
        std::size_t checked;
        ad::GradCheckReport r;
    };
    std::vector<Line> lines;
    ad::testing::set_corrupt_matmul_backward(corrupt);
    struct Reset {
        ~Reset() { ad::testing::set_corrupt_matmul_backward(false); }
    } reset;
    if (primitives) {
        for (auto& p : ad::check_primitives(seed, cases)) lines.push_back({"primitive", p.name, p.cases, p.worst});
    }
    for (auto k : kinds) {
        const auto cfg = toy_with_dims(k, dims);
        auto r = ad::check_model(cfg, seed);
        lines.push_back({"model", std::string(models::kind_name(k)), r.checked, r});
    }

    double worst = 0.0;
    for (const auto& l : lines) worst = std::max(worst, l.r.max_rel_error);
    const bool pass = worst < kGradTolerance;

    if (format == Format::Json) {
        Json items = Json::array();
        for (const auto& l : lines) {
            items.push_back({{"kind", l.kind},
                             {"name", l.name},
                             {"checked", l.checked},
                             {"max_rel_error", l.r.max_rel_error},
                             {"analytic", l.r.analytic},
                             {"numeric", l.r.numeric},
                             {"pass", l.r.max_rel_error < kGradTolerance}});
        }
        out << Json{{"seed", seed}, {"tolerance", kGradTolerance}, {"checks", items}, {"worst", worst}, {"pass", pass}}
                   .dump(2)
            << '\n';
    } else if (format == Format::Csv) {
        out << "kind,name,checked,max_rel_error,pass\n";
        for (const auto& l : lines) {
            out << fmt::format("{},{},{},{:.3e},{}\n", l.kind, l.name, l.checked, l.r.max_rel_error,
                               l.r.max_rel_error < kGradTolerance ? "true" : "false");
        }
    } else {
        for (const auto& l : lines) {
            out << fmt::format("{:<9} {:<16} {:>6}  max rel error {:.3e}  {}\n", l.kind, l.name, l.checked,
                               l.r.max_rel_error, l.r.max_rel_error < kGradTolerance ? "ok" : "FAIL");
        }
        out << fmt::format("worst relative error {:.3e} ({})\n", worst, pass ? "pass" : "fail");
    }
    return pass ? kExitOk : kExitRuntime;
}

int cmd_params(const std::string& spec_path, const std::string& model_path, const std::string& kind,
               const std::string& format_name, std::ostream& out) {
    const Format format = parse_format(format_name);
    const int given = !spec_path.empty() + !model_path.empty() + !kind.empty();
    if (given != 1) throw ValidationError("params takes exactly one of --spec, --model or --kind");
    models::ModelConfig cfg;
    if (!spec_path.empty()) {
        cfg = load_runspec(spec_path).model;
    } else if (!model_path.empty()) {
        // A bare model section, or any document holding one under "model"
        // (params JSON output, checkpoint manifests).
        Json j = parse_json(read_file(model_path), model_path);
        if (j.is_object() && j.contains("model") && j["model"].is_object()) j = j["model"];
        cfg = model_config_from_json(j);
    } else {
        switch (models::parse_kind(kind)) {
            case models::ModelKind::Mlp: cfg = models::MlpConfig{}; break;
            case models::ModelKind::SetTransformer: cfg = models::SetTransformerConfig{}; break;
            case models::ModelKind::Gat: cfg = models::GatConfig{}; break;
        }
    }
    const Json listing = params_json(cfg);
    if (format == Format::Json) {
        out << listing.dump(2) << '\n';
    } else if (format == Format::Csv) {
        out << "name,shape,count,init\n";
        for (const auto& t : listing["tensors"]) {
            std::string shape;
            for (const auto& d : t["shape"]) shape += (shape.empty() ? "" : "x") + std::to_string(d.get<std::uint64_t>());
            out << fmt::format("{},{},{},{}\n", t["name"].get<std::string>(), shape, t["count"].get<std::uint64_t>(),
                               t["init"].get<std::string>());
        }
        out << fmt::format("total,,{},\n", listing["total"].get<std::uint64_t>());
    } else {
        std::size_t w = 5;
        for (const auto& t : listing["tensors"]) w = std::max(w, t["name"].get<std::string>().size());
        out << fmt::format("{} parameters\n", listing["model"]["kind"].get<std::string>());
        for (const auto& t : listing["tensors"]) {
            std::string shape;
            for (const auto& d : t["shape"]) shape += (shape.empty() ? "" : " x ") + std::to_string(d.get<std::uint64_t>());
            out << fmt::format("  {:<{}}  {:>14}  {:>12}\n", t["name"].get<std::string>(), w, "[" + shape + "]",
                               t["count"].get<std::uint64_t>());
        }
        out << fmt::format("  {:<{}}  {:>14}  {:>12}\n", "total", w, "", listing["total"].get<std::uint64_t>());
    }
    return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------
// Run specs

std::array<std::size_t, 3> default_split_counts(std::size_t n) {
    const std::size_t val = n * 15 / 100;
    const std::size_t test = n * 15 / 100;
    return {n - val - test, val, test};
}

RunSpec parse_runspec(const Json& j, const fs::path& base_dir) {
    reject_unknown(j, {"data", "representation", "model", "train", "output_dir", "seeds"}, "runspec");
    RunSpec spec;

    if (!j.contains("data")) throw ValidationError("runspec.data is required");
    const Json& data = j.at("data");
    reject_unknown(data, {"mgf_path", "synthetic", "labels_path", "splits_path"}, "data");
    const bool has_mgf = data.contains("mgf_path");
    const bool has_syn = data.contains("synthetic");
    if (has_mgf == has_syn) throw ValidationError("data must contain exactly one of 'mgf_path' and 'synthetic'");
    if (has_mgf) {
        spec.mgf_path = resolve(base_dir, path_field(data, "mgf_path", "data"));
        if (data.contains("labels_path")) spec.labels_path = resolve(base_dir, path_field(data, "labels_path", "data"));
        if (data.contains("splits_path")) spec.splits_path = resolve(base_dir, path_field(data, "splits_path", "data"));
    } else {
        if (data.contains("labels_path") || data.contains("splits_path")) {
            throw ValidationError("synthetic data generates its own labels and splits; drop labels_path/splits_path");
        }
        const Json& syn = data.at("synthetic");
        Json gen = syn;
        if (gen.is_object()) gen.erase("split_counts");
        spec.synthetic = synthetic_config_from_json(gen);
        spec.split_counts = default_split_counts(spec.synthetic->n_spectra);
        if (syn.contains("split_counts")) {
            const auto& sc = syn.at("split_counts");
            if (!sc.is_array() || sc.size() != 3 ||
                !std::all_of(sc.begin(), sc.end(), [](const Json& x) { return x.is_number_unsigned(); })) {
                throw ValidationError("data.synthetic.split_counts must be three non-negative integers");
            }
            for (std::size_t i = 0; i < 3; ++i) spec.split_counts[i] = sc[i].get<std::size_t>();
            const std::size_t total = spec.split_counts[0] + spec.split_counts[1] + spec.split_counts[2];
            if (total > spec.synthetic->n_spectra) {
                throw ValidationError(fmt::format("data.synthetic.split_counts sum to {} but n_spectra is {}", total,
                                                  spec.synthetic->n_spectra));
            }
        }
    }

    if (!j.contains("representation")) throw ValidationError("runspec.representation is required");
    spec.representation = representation_config_from_json(j.at("representation"));

    if (!j.contains("model")) throw ValidationError("runspec.model is required");
    Json model = j.at("model");
    if (model.is_object() && model.value("kind", "") == "mlp" && spec.representation.kind == Representation::Binned) {
        const std::size_t n_bins = spec.representation.bins.n_bins();
        if (!model.contains("input_dim")) {
            model["input_dim"] = n_bins;
        } else if (model["input_dim"].is_number_unsigned() && model["input_dim"].get<std::size_t>() != n_bins) {
            throw ValidationError(fmt::format("model.input_dim is {} but the binning yields {} bins",
                                              model["input_dim"].get<std::size_t>(), n_bins));
        }
    }
    spec.model = model_config_from_json(model);
    if (model_for(spec.representation.kind) != models::kind_of(spec.model)) {
        throw ValidationError(fmt::format("representation '{}' requires model '{}', got '{}'",
                                          representation_name(spec.representation.kind),
                                          models::kind_name(model_for(spec.representation.kind)),
                                          models::kind_name(models::kind_of(spec.model))));
    }

    if (j.contains("train")) spec.train = train_config_from_json(j.at("train"));
    spec.output_dir = resolve(base_dir, j.contains("output_dir") ? path_field(j, "output_dir", "runspec") : "runs");
    if (j.contains("seeds")) {
        const auto& s = j.at("seeds");
        if (!s.is_array()) throw ValidationError("runspec.seeds must be an array of non-negative integers");
        for (const auto& x : s) {
            if (!x.is_number_unsigned()) throw ValidationError("runspec.seeds must be an array of non-negative integers");
            spec.seeds.push_back(x.get<std::uint64_t>());
        }
    } else {
        spec.seeds = {spec.train.seed};
    }
    return spec;
}

RunSpec load_runspec(const fs::path& file) {
    const Json j = parse_json(read_file(file), file.string());
    return parse_runspec(j, fs::absolute(file).parent_path());
}

Json runspec_to_json(const RunSpec& spec) {
    Json data = Json::object();
    if (spec.mgf_path) data["mgf_path"] = spec.mgf_path->string();
    if (spec.labels_path) data["labels_path"] = spec.labels_path->string();
    if (spec.splits_path) data["splits_path"] = spec.splits_path->string();
    if (spec.synthetic) {
        Json syn = specenc::to_json(*spec.synthetic);
        syn["split_counts"] = spec.split_counts;
        data["synthetic"] = syn;
    }
    return Json{{"data", data},
                {"representation", specenc::to_json(spec.representation)},
                {"model", specenc::to_json(spec.model)},
                {"train", specenc::to_json(spec.train)},
                {"output_dir", spec.output_dir.string()},
                {"seeds", spec.seeds}};
}

SourceData load_source(const RunSpec& spec) {
    SourceData src;
    if (spec.synthetic) {
        src.spectra = generate_synthetic(*spec.synthetic);
        DatasetSplit split;
        const auto& c = spec.split_counts;
        for (std::size_t i = 0; i < c[0] + c[1] + c[2]; ++i) {
            auto& ids = i < c[0] ? split.train_ids : i < c[0] + c[1] ? split.val_ids : split.test_ids;
            ids.push_back(src.spectra[i].id);
        }
        for (const auto& s : src.spectra) src.labels.emplace(s.id, *s.label);
        src.split = std::move(split);
        return src;
    }
    {
        std::ifstream in(*spec.mgf_path, std::ios::binary);
        if (!in) throw IoError(fmt::format("cannot read '{}'", spec.mgf_path->string()));
        src.spectra = parse_mgf(in);
    }
    if (spec.labels_path) {
        std::ifstream in(*spec.labels_path, std::ios::binary);
        if (!in) throw IoError(fmt::format("cannot read '{}'", spec.labels_path->string()));
        src.labels = load_labels(in);
    }
    if (spec.splits_path) src.split = parse_splits_json(read_file(*spec.splits_path));
    return src;
}

EncodedSplits prepare_splits(const RunSpec& spec) {
    const SourceData src = load_source(spec);
    if (!src.split) throw ValidationError("training and evaluation need data.splits_path");
    if (!spec.synthetic && !spec.labels_path) {
        // Labels may also come from the MGF itself; assemble_dataset checks.
    }
    const LabeledDataset ds = assemble_dataset(src.spectra, src.labels, *src.split);
    EncodedSplits out;
    auto enc = [&](const std::vector<Spectrum>& part, const char* name) {
        EncodedDataset e = encode_dataset(part, spec.representation, true);
        for (const auto& id : e.skipped_ids) {
            out.warnings.push_back(fmt::format("{} spectrum '{}' has no peak with positive intensity; skipped", name, id));
        }
        if (e.dropped_peaks > 0) {
            out.warnings.push_back(
                fmt::format("{} split: {} peak(s) outside the bin range were dropped", name, e.dropped_peaks));
        }
        return e;
    };
    out.train = enc(ds.train, "train");
    out.val = enc(ds.val, "val");
    out.test = enc(ds.test, "test");
    if (out.train.size() == 0) throw ValidationError("the train split has no usable spectra");
    if (out.val.size() < 2) throw ValidationError("the val split needs at least 2 usable spectra");
    if (out.test.size() == 1) throw ValidationError("the test split needs 0 or at least 2 usable spectra");
    return out;
}

Json params_json(const models::ModelConfig& cfg) {
    Json tensors = Json::array();
    std::uint64_t total = 0;
    for (const auto& p : models::param_specs(cfg)) {
        std::uint64_t count = 1;
        for (auto d : p.shape) count *= d;
        total += count;
        tensors.push_back({{"name", p.name},
                           {"shape", p.shape},
                           {"count", count},
                           {"init", std::string(models::init_name(p.init))}});
    }
    return Json{{"model", specenc::to_json(cfg)}, {"total", total}, {"tensors", tensors}};
}

void save_checkpoint(const fs::path& dir, const RunSpec& spec, std::uint64_t seed,
                     const models::ModelParams<float>& params) {
    make_dirs(dir);
    Json manifest = params_json(spec.model);
    if (manifest["total"].get<std::uint64_t>() != params.total_size()) {
        throw std::logic_error("checkpoint parameters do not match the model config");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& t = params.tensor(i);
        const std::string file = params.name(i) + ".tnsr";
        TensorRecord rec;
        rec.shape.assign(t.shape().begin(), t.shape().end());
        rec.data.assign(t.data().begin(), t.data().end());
        save_tensor_file((dir / file).string(), rec);
        manifest["tensors"][i]["file"] = file;
    }
    manifest["seed"] = seed;
    manifest["runspec"] = runspec_to_json(spec);
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& path) {
    const fs::path manifest_path = fs::is_directory(path) ? path / "manifest.json" : path;
    if (!fs::exists(manifest_path)) throw IoError(fmt::format("no checkpoint at '{}'", path.string()));
    const fs::path dir = manifest_path.parent_path();
    const Json m = parse_json(read_file(manifest_path), manifest_path.string());
    if (!m.is_object() || !m.contains("runspec") || !m.contains("tensors") || !m.contains("model")) {
        throw ValidationError(fmt::format("'{}' is not a checkpoint manifest", manifest_path.string()));
    }
    Checkpoint ck;
    ck.spec = parse_runspec(m.at("runspec"), dir);
    if (specenc::to_json(ck.spec.model) != specenc::to_json(model_config_from_json(m.at("model")))) {
        throw ValidationError("checkpoint manifest model does not match its runspec");
    }
    ck.seed = m.value("seed", std::uint64_t{0});
    std::map<std::string, std::string> files;
    for (const auto& t : m.at("tensors")) files[t.at("name").get<std::string>()] = t.at("file").get<std::string>();
    for (const auto& p : models::param_specs(ck.spec.model)) {
        const auto it = files.find(p.name);
        if (it == files.end()) throw ValidationError(fmt::format("checkpoint lacks tensor '{}'", p.name));
        TensorRecord rec;
        try {
            rec = load_tensor_file((dir / it->second).string());
        } catch (const TensorFormatError& e) {
            throw IoError(fmt::format("{}: {}", (dir / it->second).string(), e.what()));
        }
        const std::vector<std::uint64_t> want(p.shape.begin(), p.shape.end());
        if (rec.shape != want) throw ValidationError(fmt::format("checkpoint tensor '{}' has the wrong shape", p.name));
        ck.params.add(p.name, ad::Tensor<float>(ad::Shape(p.shape.begin(), p.shape.end()), std::move(rec.data)), p.init);
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Entry point

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Mass-spectrum representations for property regression", "specenc"};
    app.require_subcommand(1);

    CommonOptions common;
    auto add_common = [&](CLI::App* sub, bool with_seed) {
        sub->add_option("--spec", common.spec_path, "run spec (JSON)");
        if (with_seed) sub->add_option("--seed", common.seed, "run this seed only");
        sub->add_option("--out", common.out_dir, "output directory");
        sub->add_option("--format", common.format, "text, csv or json")->check(CLI::IsMember({"text", "csv", "json"}));
    };

    auto* encode = app.add_subcommand("encode", "parse, preprocess and encode spectra into tensor files");
    add_common(encode, false);

    auto* train = app.add_subcommand("train", "train one model per seed and write histories and checkpoints");
    add_common(train, true);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
    std::string checkpoint, split = "test";
    eval->add_option("--checkpoint", checkpoint, "checkpoint directory or manifest")->required();
    eval->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_option("--format", common.format, "text, csv or json")->check(CLI::IsMember({"text", "csv", "json"}));

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    std::string target = "all";
    std::uint64_t gc_seed = 0;
    std::size_t cases = 100;
    std::vector<std::size_t> dims;
    bool corrupt = false;
    gradcheck->add_option("target", target, "primitives, models, all, or a model kind");
    gradcheck->add_option("--seed", gc_seed, "seed for random cases and parameters");
    gradcheck->add_option("--cases", cases, "random cases per primitive");
    gradcheck->add_option("--dims", dims, "toy dims: mlp hidden widths, set_transformer block widths, or gat layers,channels")
        ->delimiter(',');
    gradcheck->add_flag("--corrupt-matmul", corrupt, "perturb matmul's backward rule (test hook)");
    gradcheck->add_option("--format", common.format, "text, csv or json")->check(CLI::IsMember({"text", "csv", "json"}));

    auto* params = app.add_subcommand("params", "parameter counts per named tensor");
    std::string model_path, kind;
    params->add_option("--spec", common.spec_path, "run spec (JSON)");
    params->add_option("--model", model_path, "model config JSON, params listing or checkpoint manifest");
    params->add_option("--kind", kind, "default config of mlp, set_transformer or gat");
    params->add_option("--format", common.format, "text, csv or json")->check(CLI::IsMember({"text", "csv", "json"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    }

    try {
        if (*encode) return cmd_encode(common, out, err);
        if (*train) return cmd_train(common, out, err);
        if (*eval) return cmd_eval(checkpoint, split, common.format, out, err);
        if (*gradcheck) return cmd_gradcheck(target, gc_seed, cases, dims, corrupt, common.format, out);
        if (*params) return cmd_params(common.spec_path, model_path, kind, common.format, out);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const MgfError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitRuntime;
}

}  // namespace specenc::cli
