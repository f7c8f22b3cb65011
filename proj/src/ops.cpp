#include "specenc/ops.hpp"

#include <algorithm>
#include <cmath>

namespace specenc::ad {

namespace {

template <typename T>
Tensor<T>* grad_target(Tape<T>& tape, std::size_t id) {
    return tape.requires_grad(id) ? &tape.grad_buffer(id) : nullptr;
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const std::string& why) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(a) + " " + why);
}

/// Inner size of a broadcast operand: b's shape must equal a trailing suffix
/// of a's shape.
std::size_t suffix_inner(const char* op, const Shape& a, const Shape& b) {
    if (b.size() > a.size() || !std::equal(b.rbegin(), b.rend(), a.rbegin())) shape_fail(op, a, b);
    return shape_numel(b);
}

std::size_t last_dim(const char* op, const Shape& s) {
    if (s.empty()) shape_fail(op, s, "needs rank >= 1");
    return s.back();
}

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// dA[M,K] += dC[M,N] * B[K,N]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* dc, const T* b, T* da) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* grow = dc + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T* brow = b + p * n;
            T acc{0};
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            da[i * k + p] += acc;
        }
    }
}

// dB[K,N] += A[M,K]^T * dC[M,N]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* dc, T* db) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* grow = dc + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            T* drow = db + p * n;
            for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
        }
    }
}

void check_segments(const char* op, const SegmentIds& seg, std::size_t rows, std::size_t num_segments) {
    if (seg.size() != rows) {
        throw ShapeError(std::string(op) + ": " + std::to_string(seg.size()) + " segment ids for " +
                         std::to_string(rows) + " rows");
    }
    for (std::size_t i = 0; i < seg.size(); ++i) {
        if (seg[i] >= num_segments) {
            throw std::out_of_range(std::string(op) + ": segment id " + std::to_string(seg[i]) +
                                    " >= num_segments " + std::to_string(num_segments));
        }
        if (i > 0 && seg[i] < seg[i - 1]) {
            throw std::invalid_argument(std::string(op) + ": segment ids must be sorted nondecreasing");
        }
    }
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2) shape_fail("matmul", as, bs);
    const std::size_t m = as[as.size() - 2];
    const std::size_t k = as.back();
    const std::size_t n = bs.back();
    if (bs[bs.size() - 2] != k) shape_fail("matmul", as, bs);
    const bool shared = bs.size() == 2;
    if (!shared && (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin()))) {
        shape_fail("matmul", as, bs);
    }
    const std::size_t batch = shape_numel(as) / (m * k == 0 ? 1 : m * k);

    Shape os(as.begin(), as.end() - 1);
    os.push_back(n);
    Tensor<T> out(os);
    const T* ad = a.value().data().data();
    const T* bd = b.value().data().data();
    T* od = out.data().data();
    for (std::size_t i = 0; i < batch; ++i) {
        gemm_nn(m, k, n, ad + i * m * k, bd + (shared ? 0 : i * k * n), od + i * m * n);
    }

    return a.tape->record(std::move(out), {a, b}, [=, ai = a.id, bi = b.id](Tape<T>& t, std::size_t self) {
        const T* g = t.grad_of(self)->data().data();
        const T* av = t.value(ai).data().data();
        const T* bv = t.value(bi).data().data();
        Tensor<T>* ga = grad_target(t, ai);
        Tensor<T>* gb = grad_target(t, bi);
        for (std::size_t i = 0; i < batch; ++i) {
            if (ga) gemm_nt(m, k, n, g + i * m * n, bv + (shared ? 0 : i * k * n), ga->data().data() + i * m * k);
            if (gb) gemm_tn(m, k, n, av + i * m * k, g + i * m * n, gb->data().data() + (shared ? 0 : i * k * n));
        }
        if (testing::corrupt_matmul_backward() && ga) {
            for (auto& x : ga->data()) x *= T(1.001);
        }
    });
}

template <typename T>
Var<T> transpose(Var<T> a) {
    const Shape& s = a.shape();
    if (s.size() < 2) shape_fail("transpose", s, "needs rank >= 2");
    const std::size_t r = s[s.size() - 2], c = s.back();
    const std::size_t batch = shape_numel(s) / std::max<std::size_t>(r * c, 1);
    Shape os = s;
    std::swap(os[os.size() - 2], os[os.size() - 1]);
    Tensor<T> out(os);
    const auto& in = a.value();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = in[b * r * c + i * c + j];
    return a.tape->record(std::move(out), {a}, [=, ai = a.id](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        auto& ga = t.grad_buffer(ai);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) ga[b * r * c + i * c + j] += g[b * r * c + j * r + i];
    });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
    Tensor<T> out = a.value();
    out.reshape(std::move(shape));
    return a.tape->record(std::move(out), {a}, [ai = a.id](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        auto& ga = t.grad_buffer(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    const std::size_t inner = suffix_inner("add", a.shape(), b.shape());
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % inner];
    return a.tape->record(std::move(out), {a, b}, [=, ai = a.id, bi = b.id](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        if (auto* ga = grad_target(t, ai))
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        if (auto* gb = grad_target(t, bi))
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % inner] += g[i];
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    const std::size_t inner = suffix_inner("mul", a.shape(), b.shape());
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i % inner];
    return a.tape->record(std::move(out), {a, b}, [=, ai = a.id, bi = b.id](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        const auto& av = t.value(ai);
        const auto& bv2 = t.value(bi);
        if (auto* ga = grad_target(t, ai))
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv2[i % inner];
        if (auto* gb = grad_target(t, bi))
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % inner] += g[i] * av[i];
    });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
    Tensor<T> out = a.value();
    for (auto& x : out.data()) x *= factor;
    return a.tape->record(std::move(out), {a}, [=, ai = a.id](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        auto& ga = t.grad_buffer(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts.front().shape();
    last_dim("concat", s0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size() || !std::equal(s0.begin(), s0.end() - 1, s.begin())) {
            shape_fail("concat", s0, s);
        }
        widths.push_back(s.back());
        total += s.back();
    }
    const std::size_t rows = shape_numel(s0) / std::max<std::size_t>(s0.back(), 1);
    Shape os = s0;
    os.back() = total;
    Tensor<T> out(os);
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto& v = parts[p].value();
        const std::size_t w = widths[p];
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) out[r * total + off + j] = v[r * w + j];
        off += w;
    }
    std::vector<std::size_t> ids;
    for (const auto& p : parts) ids.push_back(p.id);
    return parts.front().tape->record(std::move(out), parts, [=](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        std::size_t o = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
            const std::size_t w = widths[p];
            if (auto* gp = grad_target(t, ids[p])) {
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < w; ++j) (*gp)[r * w + j] += g[r * total + o + j];
            }
            o += w;
        }
    });
}

template <typename T>
Var<T> slice_last(Var<T> a, std::size_t start, std::size_t len) {
    const Shape& s = a.shape();
    const std::size_t w = last_dim("slice_last", s);
    if (start + len > w) shape_fail("slice_last", s, "cannot slice [" + std::to_string(start) + ", " +
                                                         std::to_string(start + len) + ")");
    const std::size_t rows = shape_numel(s) / std::max<std::size_t>(w, 1);
    Shape os = s;
    os.back() = len;
    Tensor<T> out(os);
    const auto& v = a.value();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < len; ++j) out[r * len + j] = v[r * w + start + j];
    return a.tape->record(std::move(out), {a}, [=, ai = a.id](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        auto& ga = t.grad_buffer(ai);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < len; ++j) ga[r * w + start + j] += g[r * len + j];
    });
}

template <typename T>
Var<T> broadcast_last(Var<T> a, std::size_t n) {
    const Shape& s = a.shape();
    if (last_dim("broadcast_last", s) != 1) shape_fail("broadcast_last", s, "needs last dim 1");
    const std::size_t rows = shape_numel(s);
    Shape os = s;
    os.back() = n;
    Tensor<T> out(os);
    const auto& v = a.value();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = v[r];
    return a.tape->record(std::move(out), {a}, [=, ai = a.id](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        auto& ga = t.grad_buffer(ai);
        for (std::size_t r = 0; r < rows; ++r) {
            T acc{0};
            for (std::size_t j = 0; j < n; ++j) acc += g[r * n + j];
            ga[r] += acc;
        }
    });
}

template <typename T>
Var<T> leaky_relu(Var<T> a, T slope) {
    Tensor<T> out = a.value();
    if (auto* log = testing::kink_log()) {
        for (const auto x : out.data()) log->push_back(x > T{0});
    }
    for (auto& x : out.data()) x = x > T{0} ? x : slope * x;
    return a.tape->record(std::move(out), {a}, [=, ai = a.id](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        const auto& x = t.value(ai);
        auto& ga = t.grad_buffer(ai);
        // At exactly 0 the left-limit slope applies.
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > T{0} ? g[i] : slope * g[i];
    });
}

template <typename T>
Var<T> relu(Var<T> a) {
    return leaky_relu(a, T{0});
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
    Tensor<T> out = a.value();
    for (auto& x : out.data()) {
        if (x >= T{0}) {
            x = T{1} / (T{1} + std::exp(-x));
        } else {
            const T e = std::exp(x);
            x = e / (T{1} + e);
        }
    }
    return a.tape->record(std::move(out), {a}, [ai = a.id](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        const auto& y = t.value(self);
        auto& ga = t.grad_buffer(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T{1} - y[i]);
    });
}

namespace {

template <typename T>
Var<T> softmax_impl(const char* op, Var<T> a, std::vector<std::uint8_t> keep) {
    const Shape& s = a.shape();
    const std::size_t w = last_dim(op, s);
    const std::size_t rows = shape_numel(s) / std::max<std::size_t>(w, 1);
    const bool masked = !keep.empty();
    if (masked && keep.size() != shape_numel(s)) {
        throw ShapeError(std::string(op) + ": mask has " + std::to_string(keep.size()) +
                         " entries for shape " + shape_str(s));
    }
    Tensor<T> out(s);
    const auto& x = a.value();
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * w;
        T mx{0};
        bool any = false;
        for (std::size_t j = 0; j < w; ++j) {
            if (masked && !keep[base + j]) continue;
            mx = any ? std::max(mx, x[base + j]) : x[base + j];
            any = true;
        }
        if (!any) throw std::invalid_argument(std::string(op) + ": row " + std::to_string(r) + " is fully masked");
        T total{0};
        for (std::size_t j = 0; j < w; ++j) {
            if (masked && !keep[base + j]) continue;
            out[base + j] = std::exp(x[base + j] - mx);
            total += out[base + j];
        }
        for (std::size_t j = 0; j < w; ++j) out[base + j] /= total;
    }
    return a.tape->record(std::move(out), {a}, [=, ai = a.id](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        const auto& y = t.value(self);
        auto& ga = t.grad_buffer(ai);
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t base = r * w;
            T dot{0};
            for (std::size_t j = 0; j < w; ++j) dot += g[base + j] * y[base + j];
            for (std::size_t j = 0; j < w; ++j) ga[base + j] += y[base + j] * (g[base + j] - dot);
        }
    });
}

}  // namespace

template <typename T>
Var<T> softmax(Var<T> a) {
    return softmax_impl<T>("softmax", a, {});
}

template <typename T>
Var<T> masked_softmax(Var<T> a, std::span<const std::uint8_t> keep) {
    if (keep.empty() && a.value().size() > 0) throw ShapeError("masked_softmax: empty mask");
    return softmax_impl<T>("masked_softmax", a, std::vector<std::uint8_t>(keep.begin(), keep.end()));
}

template <typename T>
Var<T> dropout(Var<T> a, double p, bool train, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw std::invalid_argument("dropout: p = " + std::to_string(p) + " outside [0, 1)");
    }
    if (!train || p == 0.0) return a;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    std::vector<T> factor(a.value().size());
    for (auto& f : factor) f = rng.uniform() < p ? T{0} : keep_scale;
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
    return a.tape->record(std::move(out), {a}, [ai = a.id, factor = std::move(factor)](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        auto& ga = t.grad_buffer(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor[i];
    });
}

template <typename T>
Var<T> layer_norm(Var<T> a, T eps) {
    const Shape& s = a.shape();
    const std::size_t w = last_dim("layer_norm", s);
    if (w == 0) shape_fail("layer_norm", s, "has empty last axis");
    const std::size_t rows = shape_numel(s) / w;
    Tensor<T> out(s);
    std::vector<T> rstd(rows);
    const auto& x = a.value();
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * w;
        T mu{0};
        for (std::size_t j = 0; j < w; ++j) mu += x[base + j];
        mu /= static_cast<T>(w);
        T var{0};
        for (std::size_t j = 0; j < w; ++j) {
            const T d = x[base + j] - mu;
            var += d * d;
        }
        var /= static_cast<T>(w);
        rstd[r] = T{1} / std::sqrt(var + eps);
        for (std::size_t j = 0; j < w; ++j) out[base + j] = (x[base + j] - mu) * rstd[r];
    }
    return a.tape->record(std::move(out), {a}, [=, ai = a.id, rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        const auto& y = t.value(self);
        auto& ga = t.grad_buffer(ai);
        const T inv_w = T{1} / static_cast<T>(w);
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t base = r * w;
            T mg{0}, mgy{0};
            for (std::size_t j = 0; j < w; ++j) {
                mg += g[base + j];
                mgy += g[base + j] * y[base + j];
            }
            mg *= inv_w;
            mgy *= inv_w;
            for (std::size_t j = 0; j < w; ++j) {
                ga[base + j] += rstd[r] * (g[base + j] - mg - y[base + j] * mgy);
            }
        }
    });
}

template <typename T>
Var<T> mean(Var<T> a, std::size_t axis) {
    const Shape& s = a.shape();
    if (axis >= s.size()) shape_fail("mean", s, "has no axis " + std::to_string(axis));
    const std::size_t n = s[axis];
    if (n == 0) shape_fail("mean", s, "has empty axis " + std::to_string(axis));
    std::size_t pre = 1, post = 1;
    for (std::size_t i = 0; i < axis; ++i) pre *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) post *= s[i];
    Shape os;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) os.push_back(s[i]);
    Tensor<T> out(os);
    const auto& x = a.value();
    const T inv = T{1} / static_cast<T>(n);
    for (std::size_t p = 0; p < pre; ++p)
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t q = 0; q < post; ++q) out[p * post + q] += x[(p * n + k) * post + q];
    for (auto& v : out.data()) v *= inv;
    return a.tape->record(std::move(out), {a}, [=, ai = a.id](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        auto& ga = t.grad_buffer(ai);
        for (std::size_t p = 0; p < pre; ++p)
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t q = 0; q < post; ++q) ga[(p * n + k) * post + q] += g[p * post + q] * inv;
    });
}

template <typename T>
Var<T> sum(Var<T> a) {
    T acc{0};
    for (const T& x : a.value().data()) acc += x;
    return a.tape->record(Tensor<T>::scalar(acc), {a}, [ai = a.id](Tape<T>& t, std::size_t self) {
        const T g = (*t.grad_of(self))[0];
        for (auto& x : t.grad_buffer(ai).data()) x += g;
    });
}

template <typename T>
Var<T> segment_sum(Var<T> a, const SegmentIds& segments, std::size_t num_segments) {
    const Shape& s = a.shape();
    if (s.empty()) shape_fail("segment_sum", s, "needs rank >= 1");
    check_segments("segment_sum", segments, s[0], num_segments);
    const std::size_t inner = s[0] ? shape_numel(s) / s[0] : 0;
    Shape os = s;
    os[0] = num_segments;
    Tensor<T> out(os);
    const auto& x = a.value();
    for (std::size_t e = 0; e < segments.size(); ++e)
        for (std::size_t c = 0; c < inner; ++c) out[segments[e] * inner + c] += x[e * inner + c];
    return a.tape->record(std::move(out), {a}, [=, ai = a.id](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        auto& ga = t.grad_buffer(ai);
        for (std::size_t e = 0; e < segments.size(); ++e)
            for (std::size_t c = 0; c < inner; ++c) ga[e * inner + c] += g[segments[e] * inner + c];
    });
}

template <typename T>
Var<T> segment_mean(Var<T> a, const SegmentIds& segments, std::size_t num_segments) {
    const Shape& s = a.shape();
    if (s.empty()) shape_fail("segment_mean", s, "needs rank >= 1");
    check_segments("segment_mean", segments, s[0], num_segments);
    const std::size_t inner = s[0] ? shape_numel(s) / s[0] : 0;
    std::vector<T> inv(num_segments, T{0});
    {
        std::vector<std::size_t> counts(num_segments, 0);
        for (auto id : segments) ++counts[id];
        for (std::size_t k = 0; k < num_segments; ++k)
            if (counts[k]) inv[k] = T{1} / static_cast<T>(counts[k]);
    }
    Shape os = s;
    os[0] = num_segments;
    Tensor<T> out(os);
    const auto& x = a.value();
    for (std::size_t e = 0; e < segments.size(); ++e)
        for (std::size_t c = 0; c < inner; ++c) out[segments[e] * inner + c] += x[e * inner + c];
    for (std::size_t k = 0; k < num_segments; ++k)
        for (std::size_t c = 0; c < inner; ++c) out[k * inner + c] *= inv[k];
    return a.tape->record(std::move(out), {a}, [=, ai = a.id](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        auto& ga = t.grad_buffer(ai);
        for (std::size_t e = 0; e < segments.size(); ++e)
            for (std::size_t c = 0; c < inner; ++c)
                ga[e * inner + c] += g[segments[e] * inner + c] * inv[segments[e]];
    });
}

template <typename T>
Var<T> segment_softmax(Var<T> a, const SegmentIds& segments, std::size_t num_segments) {
    const Shape& s = a.shape();
    if (s.empty() || s.size() > 2) shape_fail("segment_softmax", s, "must be [E] or [E, C]");
    check_segments("segment_softmax", segments, s[0], num_segments);
    const std::size_t cols = s.size() == 2 ? s[1] : 1;
    const std::size_t rows = s[0];
    Tensor<T> out(s);
    const auto& x = a.value();
    // Segments are contiguous runs because ids are sorted.
    for (std::size_t lo = 0; lo < rows;) {
        std::size_t hi = lo;
        while (hi < rows && segments[hi] == segments[lo]) ++hi;
        for (std::size_t c = 0; c < cols; ++c) {
            T mx = x[lo * cols + c];
            for (std::size_t e = lo + 1; e < hi; ++e) mx = std::max(mx, x[e * cols + c]);
            T total{0};
            for (std::size_t e = lo; e < hi; ++e) {
                out[e * cols + c] = std::exp(x[e * cols + c] - mx);
                total += out[e * cols + c];
            }
            for (std::size_t e = lo; e < hi; ++e) out[e * cols + c] /= total;
        }
        lo = hi;
    }
    return a.tape->record(std::move(out), {a}, [=, ai = a.id](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        const auto& y = t.value(self);
        auto& ga = t.grad_buffer(ai);
        for (std::size_t lo = 0; lo < rows;) {
            std::size_t hi = lo;
            while (hi < rows && segments[hi] == segments[lo]) ++hi;
            for (std::size_t c = 0; c < cols; ++c) {
                T dot{0};
                for (std::size_t e = lo; e < hi; ++e) dot += g[e * cols + c] * y[e * cols + c];
                for (std::size_t e = lo; e < hi; ++e) ga[e * cols + c] += y[e * cols + c] * (g[e * cols + c] - dot);
            }
            lo = hi;
        }
    });
}

template <typename T>
Var<T> gather_rows(Var<T> a, const std::vector<std::uint32_t>& index) {
    const Shape& s = a.shape();
    if (s.empty()) shape_fail("gather_rows", s, "needs rank >= 1");
    const std::size_t rows = s[0];
    const std::size_t inner = rows ? shape_numel(s) / rows : 0;
    for (auto i : index) {
        if (i >= rows) {
            throw std::out_of_range("gather_rows: index " + std::to_string(i) + " out of range for " +
                                    shape_str(s));
        }
    }
    Shape os = s;
    os[0] = index.size();
    Tensor<T> out(os);
    const auto& x = a.value();
    for (std::size_t r = 0; r < index.size(); ++r)
        std::copy_n(x.data().begin() + index[r] * inner, inner, out.data().begin() + r * inner);
    return a.tape->record(std::move(out), {a}, [=, ai = a.id](Tape<T>& t, std::size_t self) {
        const auto& g = *t.grad_of(self);
        auto& ga = t.grad_buffer(ai);
        for (std::size_t r = 0; r < index.size(); ++r)
            for (std::size_t c = 0; c < inner; ++c) ga[index[r] * inner + c] += g[r * inner + c];
    });
}

template <typename T>
Var<T> mse_loss(Var<T> pred, const Tensor<T>& target) {
    const auto& p = pred.value();
    if (p.shape() != target.shape()) shape_fail("mse_loss", p.shape(), target.shape());
    if (p.size() == 0) shape_fail("mse_loss", p.shape(), "is empty");
    const T inv = T{1} / static_cast<T>(p.size());
    T acc{0};
    for (std::size_t i = 0; i < p.size(); ++i) {
        const T d = p[i] - target[i];
        acc += d * d;
    }
    return pred.tape->record(Tensor<T>::scalar(acc * inv), {pred},
                             [=, pi = pred.id](Tape<T>& t, std::size_t self) {
                                 const T g = (*t.grad_of(self))[0];
                                 const auto& pv = t.value(pi);
                                 auto& gp = t.grad_buffer(pi);
                                 for (std::size_t i = 0; i < pv.size(); ++i)
                                     gp[i] += g * T{2} * (pv[i] - target[i]) * inv;
                             });
}

template <typename T>
Var<T> mae_loss(Var<T> pred, const Tensor<T>& target) {
    const auto& p = pred.value();
    if (p.shape() != target.shape()) shape_fail("mae_loss", p.shape(), target.shape());
    if (p.size() == 0) shape_fail("mae_loss", p.shape(), "is empty");
    const T inv = T{1} / static_cast<T>(p.size());
    T acc{0};
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - target[i]);
    if (auto* log = testing::kink_log()) {
        for (std::size_t i = 0; i < p.size(); ++i) log->push_back(p[i] > target[i]);
    }
    return pred.tape->record(Tensor<T>::scalar(acc * inv), {pred},
                             [=, pi = pred.id](Tape<T>& t, std::size_t self) {
                                 const T g = (*t.grad_of(self))[0];
                                 const auto& pv = t.value(pi);
                                 auto& gp = t.grad_buffer(pi);
                                 for (std::size_t i = 0; i < pv.size(); ++i) {
                                     const T d = pv[i] - target[i];
                                     const T sgn = d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0});
                                     gp[i] += g * sgn * inv;
                                 }
                             });
}

#define SPECENC_INSTANTIATE_OPS(T)                                                              \
    template Var<T> matmul(Var<T>, Var<T>);                                                     \
    template Var<T> transpose(Var<T>);                                                          \
    template Var<T> reshape(Var<T>, Shape);                                                     \
    template Var<T> add(Var<T>, Var<T>);                                                        \
    template Var<T> mul(Var<T>, Var<T>);                                                        \
    template Var<T> scale(Var<T>, T);                                                           \
    template Var<T> concat(const std::vector<Var<T>>&);                                         \
    template Var<T> slice_last(Var<T>, std::size_t, std::size_t);                               \
    template Var<T> broadcast_last(Var<T>, std::size_t);                                        \
    template Var<T> relu(Var<T>);                                                               \
    template Var<T> leaky_relu(Var<T>, T);                                                      \
    template Var<T> sigmoid(Var<T>);                                                            \
    template Var<T> softmax(Var<T>);                                                            \
    template Var<T> masked_softmax(Var<T>, std::span<const std::uint8_t>);                      \
    template Var<T> dropout(Var<T>, double, bool, Rng&);                                        \
    template Var<T> layer_norm(Var<T>, T);                                                      \
    template Var<T> mean(Var<T>, std::size_t);                                                  \
    template Var<T> sum(Var<T>);                                                                \
    template Var<T> segment_sum(Var<T>, const SegmentIds&, std::size_t);                        \
    template Var<T> segment_mean(Var<T>, const SegmentIds&, std::size_t);                       \
    template Var<T> segment_softmax(Var<T>, const SegmentIds&, std::size_t);                    \
    template Var<T> gather_rows(Var<T>, const std::vector<std::uint32_t>&);                     \
    template Var<T> mse_loss(Var<T>, const Tensor<T>&);                                         \
    template Var<T> mae_loss(Var<T>, const Tensor<T>&);

SPECENC_INSTANTIATE_OPS(float)
SPECENC_INSTANTIATE_OPS(double)
SPECENC_INSTANTIATE_OPS(long double)

#undef SPECENC_INSTANTIATE_OPS

}  // namespace specenc::ad
