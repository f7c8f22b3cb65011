#include "specenc/gradcheck_suite.hpp"
#include "specenc/models.hpp"
#include "specenc/train.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace specenc;
using namespace specenc::models;

namespace {

std::uint64_t spec_total(const ModelConfig& cfg) {
    std::uint64_t total = 0;
    for (const auto& p : param_specs(cfg)) {
        std::uint64_t n = 1;
        for (auto d : p.shape) n *= d;
        total += n;
    }
    return total;
}

ModelParams<float> zeroed(const ModelConfig& cfg) {
    Rng rng(0);
    auto p = init_params<float>(cfg, rng);
    for (std::size_t i = 0; i < p.size(); ++i)
        for (auto& v : p.tensor(i).vec()) v = 0.0f;
    return p;
}

SetBatch set_batch(const std::vector<std::vector<std::pair<double, double>>>& rows, std::size_t pad = 0) {
    SetBatch b;
    b.batch = rows.size();
    for (const auto& r : rows) b.max_len = std::max(b.max_len, r.size());
    b.max_len += pad;
    b.pairs.assign(b.batch * b.max_len * 2, 0.0);
    b.keep.assign(b.batch * b.max_len, 0);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t k = 0; k < rows[i].size(); ++k) {
            b.pairs[(i * b.max_len + k) * 2] = rows[i][k].first;
            b.pairs[(i * b.max_len + k) * 2 + 1] = rows[i][k].second;
            b.keep[i * b.max_len + k] = 1;
        }
    return b;
}

std::vector<std::vector<std::pair<double, double>>> random_sets(Rng& rng, std::size_t n) {
    std::vector<std::vector<std::pair<double, double>>> rows(n);
    for (auto& r : rows) {
        const std::size_t len = 2 + rng.uniform_int(0, 10);
        for (std::size_t k = 0; k < len; ++k) r.emplace_back(rng.uniform(50, 1000), rng.uniform(0.01, 1.0));
        r.back().second = 2.0;
    }
    return rows;
}

GraphBatch chain_graph(const std::vector<double>& intensity, const std::vector<double>& mz) {
    GraphBatch g;
    g.num_graphs = 1;
    g.vertex_attr = intensity;
    g.vertex_graph.assign(intensity.size(), 0);
    for (std::uint32_t k = 0; k + 1 < intensity.size(); ++k) {
        const double d = mz[k + 1] - mz[k];
        g.src.insert(g.src.end(), {k, k + 1});
        g.dst.insert(g.dst.end(), {k + 1, k});
        g.edge_attr.insert(g.edge_attr.end(), {d, d});
    }
    return g;
}

GraphBatch concat_graphs(const std::vector<GraphBatch>& gs) {
    GraphBatch out;
    for (const auto& g : gs) {
        const auto off = static_cast<std::uint32_t>(out.vertex_attr.size());
        out.vertex_attr.insert(out.vertex_attr.end(), g.vertex_attr.begin(), g.vertex_attr.end());
        out.vertex_graph.insert(out.vertex_graph.end(), g.vertex_attr.size(), static_cast<std::uint32_t>(out.num_graphs));
        for (std::size_t a = 0; a < g.src.size(); ++a) {
            out.src.push_back(g.src[a] + off);
            out.dst.push_back(g.dst[a] + off);
        }
        out.edge_attr.insert(out.edge_attr.end(), g.edge_attr.begin(), g.edge_attr.end());
        ++out.num_graphs;
    }
    return out;
}

GraphBatch random_chain(Rng& rng) {
    const std::size_t n = 3 + rng.uniform_int(0, 8);
    std::vector<double> inten{0.0}, mz{0.0};
    double m = rng.uniform(50, 100);
    for (std::size_t k = 0; k < n; ++k) {
        mz.push_back(m);
        inten.push_back(rng.uniform(0.01, 1.0));
        m += rng.uniform(13, 80);
    }
    inten.back() = 2.0;
    return chain_graph(inten, mz);
}

}  // namespace

TEST_SUITE("models") {

TEST_CASE("parameter counts") {
    CHECK(param_count(MlpConfig{}) == 10'766'337);
    CHECK(param_count(MlpConfig{2, {2}, 0.5}) == 9);
    CHECK(param_count(SetTransformerConfig{}) == 10'449);
    CHECK(param_count(GatConfig{}) == 8'424'449);
    for (const ModelConfig& cfg : {ModelConfig{MlpConfig{}}, ModelConfig{MlpConfig{7, {3, 5, 2}, 0.1}},
                                   ModelConfig{SetTransformerConfig{}},
                                   ModelConfig{SetTransformerConfig{{8, 4, 4}, 2, 3, 1000.0, 1e-5}},
                                   ModelConfig{GatConfig{}}, ModelConfig{GatConfig{3, 6, 2, 0.2, 1000.0, true}}}) {
        CHECK(param_count(cfg) == spec_total(cfg));
    }
}

TEST_CASE("zero parameters predict zero") {
    const MlpConfig cfg{16, {8, 4}, 0.5};
    DenseBatch b{3, 16, std::vector<double>(48, 0.7)};
    CHECK(predict(cfg, zeroed(cfg), b) == std::vector<double>{0, 0, 0});
}

TEST_CASE("eval forward is deterministic and train forward is seed-reproducible") {
    Rng rng(4);
    for (auto kind : {ModelKind::Mlp, ModelKind::SetTransformer, ModelKind::Gat}) {
        const auto cfg = ad::toy_config(kind);
        Rng init(1);
        const auto params = init_params<float>(cfg, init);
        const auto batch = ad::toy_batch(cfg, rng);
        CHECK(predict(cfg, params, batch) == predict(cfg, params, batch));

        auto train_out = [&](std::uint64_t seed) {
            ad::Tape<float> tape;
            BoundParams<float> bound(tape, params, false);
            Rng r(seed);
            return forward(cfg, bound, batch, true, r).value();
        };
        CHECK(train_out(9) == train_out(9));
    }
}

TEST_CASE("set transformer is invariant to pair order and padding") {
    const SetTransformerConfig cfg{{8, 8}, 2, 1, 1000.0, 1e-5};
    Rng init(3);
    const auto params = init_params<float>(cfg, init);
    Rng rng(5);
    auto rows = random_sets(rng, 6);
    const auto base = predict(cfg, params, set_batch(rows));
    CHECK(predict(cfg, params, set_batch(rows, 4)) == base);

    std::mt19937_64 g(1);
    for (auto& r : rows) std::shuffle(r.begin(), r.end(), g);
    const auto shuffled = predict(cfg, params, set_batch(rows));
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(std::abs(base[i] - shuffled[i]) < 1e-5);
}

TEST_CASE("set transformer rejects an all-masked row") {
    const SetTransformerConfig cfg{{4}, 1, 1, 1000.0, 1e-5};
    Rng init(3);
    const auto params = init_params<float>(cfg, init);
    auto b = set_batch({{{100, 1.0}}, {{200, 1.0}}});
    b.keep[1] = 0;
    CHECK_THROWS(predict(cfg, params, b));
}

TEST_CASE("GAT is invariant to vertex relabeling and batching") {
    const GatConfig cfg{3, 8, 2, 0.2, 1000.0, true};
    Rng init(6);
    const auto params = init_params<float>(cfg, init);
    Rng rng(8);
    std::vector<GraphBatch> graphs;
    for (int i = 0; i < 5; ++i) graphs.push_back(random_chain(rng));
    const auto batched = predict(cfg, params, concat_graphs(graphs));
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        const double single = predict(cfg, params, graphs[i])[0];
        CHECK(std::abs(single - batched[i]) < 1e-5);

        // Relabel vertices with a random permutation.
        const auto& g = graphs[i];
        std::vector<std::uint32_t> perm(g.vertex_attr.size());
        std::iota(perm.begin(), perm.end(), 0u);
        std::mt19937_64 shuffle_rng(i);
        std::shuffle(perm.begin(), perm.end(), shuffle_rng);
        GraphBatch r = g;
        for (std::size_t v = 0; v < perm.size(); ++v) r.vertex_attr[perm[v]] = g.vertex_attr[v];
        for (std::size_t a = 0; a < g.src.size(); ++a) {
            r.src[a] = perm[g.src[a]];
            r.dst[a] = perm[g.dst[a]];
        }
        CHECK(std::abs(predict(cfg, params, r)[0] - single) < 1e-5);
    }
}

TEST_CASE("single-vertex graph reduces to the head of the input projection") {
    const GatConfig cfg{2, 4, 1, 0.2, 1000.0, true};
    Rng init(2);
    const auto params = init_params<float>(cfg, init);
    GraphBatch g;
    g.num_graphs = 1;
    g.vertex_attr = {0.6};
    g.vertex_graph = {0};
    const double got = predict(cfg, params, g)[0];

    const auto& wi = params.at("input.weight");
    const auto& bi = params.at("input.bias");
    const auto& wo = params.at("out.weight");
    const auto& bo = params.at("out.bias");
    double expected = bo[0];
    for (std::size_t c = 0; c < 4; ++c) expected += (0.6 * wi[c] + bi[c]) * wo[c];
    CHECK(got == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("model gradients pass the finite-difference check at toy sizes") {
    for (auto kind : {ModelKind::Mlp, ModelKind::SetTransformer, ModelKind::Gat}) {
        INFO(kind_name(kind));
        const auto r = ad::check_model(ad::toy_config(kind), 17);
        CHECK(r.checked == param_count(ad::toy_config(kind)));
        CHECK(r.max_rel_error < 1e-6);
    }
}

TEST_CASE("param_count equals scalars touched by one Adam step") {
    for (auto kind : {ModelKind::Mlp, ModelKind::SetTransformer, ModelKind::Gat}) {
        const auto cfg = ad::toy_config(kind);
        Rng init(1);
        auto params = init_params<float>(cfg, init);
        TrainConfig tc;
        tc.learning_rate = 1e-2;
        Adam opt(params, tc);

        Rng rng(2);
        const auto batch = ad::toy_batch(cfg, rng);
        ad::Tape<float> tape;
        BoundParams<float> bound(tape, params, true);
        Rng drop(3);
        auto pred = forward(cfg, bound, batch, true, drop);
        Tensor<float> target(pred.shape(), 0.3f);
        tape.backward(ad::mse_loss(pred, target));
        std::vector<Tensor<float>> grads;
        for (const auto& v : bound.vars()) grads.push_back(tape.grad(v));
        std::uint64_t grad_entries = 0;
        for (std::size_t i = 0; i < grads.size(); ++i) {
            CHECK(grads[i].shape() == params.tensor(i).shape());
            grad_entries += grads[i].size();
        }
        CHECK(grad_entries == param_count(cfg));
        CHECK(opt.step(params, grads) == param_count(cfg));
    }
}

TEST_CASE("config validation") {
    CHECK_THROWS(validate(ModelConfig{MlpConfig{0, {4}, 0.5}}));
    CHECK_THROWS(validate(ModelConfig{MlpConfig{4, {4}, 1.0}}));
    CHECK_THROWS(validate(ModelConfig{SetTransformerConfig{{6}, 4, 1, 1000.0, 1e-5}}));
    CHECK_THROWS(validate(ModelConfig{GatConfig{0, 8, 1, 0.2, 1000.0, true}}));
}

}  // TEST_SUITE
