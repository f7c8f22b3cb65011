#include "specenc/gradcheck_suite.hpp"

#include "specenc/ops.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <functional>

namespace specenc::ad {

namespace {

using TensorPtr = std::shared_ptr<Tensor<double>>;

struct Step {
    double eps;
    int extrapolation;
};

// Central differences are exact, up to rounding, for functions that are
// linear, quadratic or piecewise linear away from their kinks in the perturbed
// entry, so those take a large step. Smooth nonlinear ones use extrapolation.
const Step kExact{1e-2, 0};
const Step kSmooth{1e-3, 2};
const Step kModel{1e-3, 2};

Shape random_shape(Rng& rng, std::size_t min_rank = 1, std::size_t max_rank = 3, std::size_t min_dim = 1) {
    const auto rank = static_cast<std::size_t>(rng.uniform_int(min_rank, max_rank));
    Shape s(rank);
    for (auto& d : s) d = static_cast<std::size_t>(rng.uniform_int(min_dim, 8));
    return s;
}

TensorPtr random_tensor(Rng& rng, const Shape& s, double lo = -1.0, double hi = 1.0) {
    auto t = std::make_shared<Tensor<double>>(s);
    for (auto& x : t->data()) x = rng.uniform(lo, hi);
    return t;
}

/// Entries with magnitude in [0.05, 1] and random sign, so a finite-difference
/// step never crosses a kink at 0.
TensorPtr signed_tensor(Rng& rng, const Shape& s) {
    auto t = std::make_shared<Tensor<double>>(s);
    for (auto& x : t->data()) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.05, 1.0);
    return t;
}

/// Scalar probe: sum(y * w) with fixed random weights w.
template <typename T>
Var<T> probe(Var<T> y, const Tensor<double>& w) {
    return sum(mul(y, y.tape->constant(w.cast<T>())));
}

/// A double constant converted to the scalar type of `v`.
template <typename T>
T like(const Var<T>&, double x) {
    return static_cast<T>(x);
}

template <typename T>
Tensor<T> like(const Var<T>&, const Tensor<double>& x) {
    return x.cast<T>();
}

SegmentIds random_segments(Rng& rng, std::size_t rows, std::size_t num_segments) {
    SegmentIds ids(rows);
    for (auto& i : ids) i = static_cast<std::uint32_t>(rng.uniform_int(0, num_segments - 1));
    std::sort(ids.begin(), ids.end());
    return ids;
}

using CaseFn = std::function<GradCheckReport(Rng&)>;

/// Checks f(inputs) = probe(op(inputs)) with a weight tensor drawn lazily to
/// the op's output shape.
template <typename Op>
GradCheckReport check_op(Rng& rng, Step step, std::vector<TensorPtr> inputs, const Op& op) {
    Tensor<double> w;
    {
        Tape<double> tape;
        std::vector<Var<double>> vars;
        for (const auto& in : inputs) vars.push_back(tape.constant(*in));
        w = *random_tensor(rng, op(vars).shape());
    }
    return grad_check([&](Tape<double>&, const std::vector<Var<double>>& v) { return probe(op(v), w); },
                      [&](Tape<long double>&, const std::vector<Var<long double>>& v) { return probe(op(v), w); },
                      inputs, step.eps, step.extrapolation);
}

std::vector<std::pair<std::string, CaseFn>> primitive_cases() {
    std::vector<std::pair<std::string, CaseFn>> cases;

    cases.emplace_back("matmul", [](Rng& rng) {
        const auto m = rng.uniform_int(1, 8), k = rng.uniform_int(1, 8), n = rng.uniform_int(1, 8);
        const auto mode = rng.uniform_int(0, 2);  // shared 2-D, shared with batch, batched
        const auto b = rng.uniform_int(1, 4);
        Shape as = mode == 0 ? Shape{m, k} : Shape{b, m, k};
        Shape bs = mode == 2 ? Shape{b, k, n} : Shape{k, n};
        return check_op(rng, kExact, {random_tensor(rng, as), random_tensor(rng, bs)},
                        [](const auto& v) { return matmul(v[0], v[1]); });
    });
    cases.emplace_back("transpose", [](Rng& rng) {
        return check_op(rng, kExact, {random_tensor(rng, random_shape(rng, 2, 3))}, [](const auto& v) { return transpose(v[0]); });
    });
    cases.emplace_back("reshape", [](Rng& rng) {
        return check_op(rng, kExact, {random_tensor(rng, random_shape(rng))}, [](const auto& v) {
            return reshape(v[0], Shape{v[0].value().size()});
        });
    });
    cases.emplace_back("add", [](Rng& rng) {
        const Shape s = random_shape(rng);
        const auto keep = rng.uniform_int(0, s.size());
        const Shape suffix(s.end() - static_cast<std::ptrdiff_t>(keep), s.end());
        return check_op(rng, kExact, {random_tensor(rng, s), random_tensor(rng, suffix)},
                        [](const auto& v) { return add(v[0], v[1]); });
    });
    cases.emplace_back("mul", [](Rng& rng) {
        const Shape s = random_shape(rng);
        const auto keep = rng.uniform_int(0, s.size());
        const Shape suffix(s.end() - static_cast<std::ptrdiff_t>(keep), s.end());
        return check_op(rng, kExact, {random_tensor(rng, s), random_tensor(rng, suffix)},
                        [](const auto& v) { return mul(v[0], v[1]); });
    });
    cases.emplace_back("scale", [](Rng& rng) {
        const double f = rng.uniform(-2.0, 2.0);
        return check_op(rng, kExact, {random_tensor(rng, random_shape(rng))}, [f](const auto& v) { return scale(v[0], like(v[0], f)); });
    });
    cases.emplace_back("concat", [](Rng& rng) {
        Shape s = random_shape(rng);
        const auto parts = rng.uniform_int(1, 3);
        std::vector<TensorPtr> in;
        for (std::uint64_t p = 0; p < parts; ++p) {
            s.back() = rng.uniform_int(1, 8);
            in.push_back(random_tensor(rng, s));
        }
        return check_op(rng, kExact, in, [](const auto& v) { return concat(v); });
    });
    cases.emplace_back("slice_last", [](Rng& rng) {
        const Shape s = random_shape(rng);
        const auto start = rng.uniform_int(0, s.back() - 1);
        const auto len = rng.uniform_int(1, s.back() - start);
        return check_op(rng, kExact, {random_tensor(rng, s)}, [=](const auto& v) { return slice_last(v[0], start, len); });
    });
    cases.emplace_back("broadcast_last", [](Rng& rng) {
        Shape s = random_shape(rng);
        s.back() = 1;
        const auto n = rng.uniform_int(1, 8);
        return check_op(rng, kExact, {random_tensor(rng, s)}, [=](const auto& v) { return broadcast_last(v[0], n); });
    });
    cases.emplace_back("relu", [](Rng& rng) {
        return check_op(rng, kExact, {signed_tensor(rng, random_shape(rng))}, [](const auto& v) { return relu(v[0]); });
    });
    cases.emplace_back("leaky_relu", [](Rng& rng) {
        const double slope = rng.uniform(0.01, 0.5);
        return check_op(rng, kExact, {signed_tensor(rng, random_shape(rng))},
                        [=](const auto& v) { return leaky_relu(v[0], like(v[0], slope)); });
    });
    cases.emplace_back("sigmoid", [](Rng& rng) {
        return check_op(rng, kSmooth, {random_tensor(rng, random_shape(rng), -3.0, 3.0)}, [](const auto& v) { return sigmoid(v[0]); });
    });
    cases.emplace_back("softmax", [](Rng& rng) {
        return check_op(rng, kSmooth, {random_tensor(rng, random_shape(rng), -2.0, 2.0)}, [](const auto& v) { return softmax(v[0]); });
    });
    cases.emplace_back("masked_softmax", [](Rng& rng) {
        const Shape s = random_shape(rng);
        std::vector<std::uint8_t> keep(shape_numel(s));
        for (std::size_t r = 0; r < keep.size() / s.back(); ++r) {
            for (std::size_t j = 0; j < s.back(); ++j) keep[r * s.back() + j] = rng.bernoulli(0.6) ? 1 : 0;
            keep[r * s.back() + rng.uniform_int(0, s.back() - 1)] = 1;
        }
        return check_op(rng, kSmooth, {random_tensor(rng, s, -2.0, 2.0)},
                        [keep](const auto& v) { return masked_softmax(v[0], std::span<const std::uint8_t>(keep)); });
    });
    cases.emplace_back("dropout", [](Rng& rng) {
        const double p = rng.uniform(0.0, 0.9);
        const auto mask_seed = rng.next_u64();
        return check_op(rng, kExact, {random_tensor(rng, random_shape(rng))}, [=](const auto& v) {
            Rng mask_rng(mask_seed);  // same mask on every evaluation
            return dropout(v[0], p, true, mask_rng);
        });
    });
    cases.emplace_back("layer_norm", [](Rng& rng) {
        return check_op(rng, kSmooth, {random_tensor(rng, random_shape(rng, 1, 3, 3), -2.0, 2.0)},
                        [](const auto& v) { return layer_norm(v[0], like(v[0], 1e-5)); });
    });
    cases.emplace_back("mean", [](Rng& rng) {
        const Shape s = random_shape(rng);
        const auto axis = rng.uniform_int(0, s.size() - 1);
        return check_op(rng, kExact, {random_tensor(rng, s)}, [=](const auto& v) { return mean(v[0], axis); });
    });
    cases.emplace_back("sum", [](Rng& rng) {
        return check_op(rng, kExact, {random_tensor(rng, random_shape(rng))}, [](const auto& v) { return sum(v[0]); });
    });
    auto segment_case = [](auto op, Step step) {
        return [op, step](Rng& rng) {
            Shape s = random_shape(rng, 1, 2);
            const auto num = rng.uniform_int(1, 6);
            const auto ids = random_segments(rng, s[0], num);
            return check_op(rng, step, {random_tensor(rng, s, -2.0, 2.0)}, [=](const auto& v) { return op(v[0], ids, num); });
        };
    };
    cases.emplace_back("segment_sum", segment_case([](auto x, const auto& ids, auto n) { return segment_sum(x, ids, n); }, kExact));
    cases.emplace_back("segment_mean", segment_case([](auto x, const auto& ids, auto n) { return segment_mean(x, ids, n); }, kExact));
    cases.emplace_back("segment_softmax",
                       segment_case([](auto x, const auto& ids, auto n) { return segment_softmax(x, ids, n); }, kSmooth));
    cases.emplace_back("gather_rows", [](Rng& rng) {
        const Shape s = random_shape(rng);
        std::vector<std::uint32_t> idx(rng.uniform_int(1, 8));
        for (auto& i : idx) i = static_cast<std::uint32_t>(rng.uniform_int(0, s[0] - 1));
        return check_op(rng, kExact, {random_tensor(rng, s)}, [idx](const auto& v) { return gather_rows(v[0], idx); });
    });
    cases.emplace_back("mse_loss", [](Rng& rng) {
        const Shape s = random_shape(rng);
        const auto target = *random_tensor(rng, s);
        auto pred = random_tensor(rng, s);
        return check_op(rng, kExact, {pred}, [target](const auto& v) { return mse_loss(v[0], like(v[0], target)); });
    });
    cases.emplace_back("mae_loss", [](Rng& rng) {
        const Shape s = random_shape(rng);
        auto target = random_tensor(rng, s);
        auto offset = signed_tensor(rng, s);
        auto pred = std::make_shared<Tensor<double>>(s);
        for (std::size_t i = 0; i < pred->size(); ++i) (*pred)[i] = (*target)[i] + (*offset)[i];
        const Tensor<double> t = *target;
        return check_op(rng, kExact, {pred}, [t](const auto& v) { return mae_loss(v[0], like(v[0], t)); });
    });
    return cases;
}

}  // namespace

std::vector<PrimitiveCheck> check_primitives(std::uint64_t seed, std::size_t cases) {
    std::vector<PrimitiveCheck> out;
    std::uint64_t stream = 0;
    for (const auto& [name, fn] : primitive_cases()) {
        Rng rng(derive_seed(seed, stream++));
        PrimitiveCheck pc{name, 0, {}};
        for (std::size_t c = 0; c < cases; ++c) {
            const auto r = fn(rng);
            ++pc.cases;
            if (c == 0 || r.max_rel_error > pc.worst.max_rel_error) pc.worst = r;
        }
        out.push_back(std::move(pc));
    }
    return out;
}

models::ModelConfig toy_config(models::ModelKind kind) {
    using namespace models;
    switch (kind) {
        case ModelKind::Mlp: return MlpConfig{16, {4}, 0.5};
        case ModelKind::SetTransformer: {
            SetTransformerConfig c;
            c.block_dims = {4, 4};
            c.num_heads = 1;
            return c;
        }
        case ModelKind::Gat: {
            GatConfig c;
            c.num_layers = 2;
            c.hidden_channels = 8;
            return c;
        }
    }
    throw std::logic_error("unreachable");
}

models::Batch toy_batch(const models::ModelConfig& cfg, Rng& rng) {
    using namespace models;
    switch (kind_of(cfg)) {
        case ModelKind::Mlp: {
            DenseBatch b;
            b.rows = 4;
            b.cols = std::get<MlpConfig>(cfg).input_dim;
            b.x.resize(b.rows * b.cols);
            for (auto& x : b.x) x = rng.uniform(0.0, 1.0);
            return b;
        }
        case ModelKind::SetTransformer: {
            SetBatch b;
            b.batch = 3;
            b.max_len = 5;
            b.pairs.assign(b.batch * b.max_len * 2, 0.0);
            b.keep.assign(b.batch * b.max_len, 0);
            for (std::size_t r = 0; r < b.batch; ++r) {
                const auto len = r == 0 ? b.max_len : rng.uniform_int(1, b.max_len);
                for (std::size_t k = 0; k < len; ++k) {
                    b.pairs[(r * b.max_len + k) * 2] = rng.uniform(50.0, 1000.0);
                    b.pairs[(r * b.max_len + k) * 2 + 1] = rng.uniform(0.0, 1.0);
                    b.keep[r * b.max_len + k] = 1;
                }
            }
            return b;
        }
        case ModelKind::Gat: {
            // Denser than a peak chain so the attention weights matter: every
            // vertex receives 3 or 4 arcs from random other vertices.
            GraphBatch b;
            b.num_graphs = 3;
            for (std::uint32_t g = 0; g < 3; ++g) {
                const auto offset = static_cast<std::uint32_t>(b.vertex_attr.size());
                const auto v = static_cast<std::uint32_t>(rng.uniform_int(6, 10));
                for (std::uint32_t i = 0; i < v; ++i) {
                    b.vertex_attr.push_back(rng.uniform(-2.0, 2.0));
                    b.vertex_graph.push_back(g);
                }
                for (std::uint32_t j = 0; j < v; ++j) {
                    const auto in = rng.uniform_int(3, 4);
                    for (std::uint64_t k = 0; k < in; ++k) {
                        auto i = static_cast<std::uint32_t>(rng.uniform_int(0, v - 2));
                        if (i >= j) ++i;
                        b.src.push_back(offset + i);
                        b.dst.push_back(offset + j);
                        b.edge_attr.push_back(rng.uniform(100.0, 1000.0));
                    }
                }
            }
            return b;
        }
    }
    throw std::logic_error("unreachable");
}

GradCheckReport check_model(const models::ModelConfig& cfg, std::uint64_t seed) {
    using namespace models;
    Rng rng(derive_seed(seed, 100));
    auto params = init_params<double>(cfg, rng);
    // Nonzero biases and norms exercise every gradient path.
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto scheme = params.init(i);
        if (scheme == InitScheme::Zeros || scheme == InitScheme::Ones) {
            for (auto& x : params.tensor(i).data()) x += rng.uniform(-0.2, 0.2);
        } else if (scheme == InitScheme::SmallUniform) {
            for (auto& x : params.tensor(i).data()) x *= 5.0;
        }
    }
    const Batch batch = toy_batch(cfg, rng);
    Tensor<double> target({batch_size(batch)});
    for (auto& y : target.data()) y = rng.uniform(0.0, 1.0);
    const auto dropout_seed = rng.next_u64();

    std::vector<TensorPtr> inputs;
    for (std::size_t i = 0; i < params.size(); ++i) inputs.push_back(params.shared(i));
    const auto names = params.cast<long double>();
    auto loss = [&](auto& tape, const auto& vars, const auto& named) {
        const BoundParams bound(tape, named, vars);
        Rng mask_rng(dropout_seed);
        const auto pred = forward(cfg, bound, batch, true, mask_rng);
        return mse_loss(pred, like(pred, target));
    };
    return grad_check([&](Tape<double>& tape, const std::vector<Var<double>>& vars) { return loss(tape, vars, params); },
                      [&](Tape<long double>& tape, const std::vector<Var<long double>>& vars) {
                          return loss(tape, vars, names);
                      },
                      inputs, kModel.eps, kModel.extrapolation);
}

}  // namespace specenc::ad
