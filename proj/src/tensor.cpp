#include "specenc/tensor.hpp"

#include <cassert>
#include <cmath>

namespace specenc::ad {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
bool Tensor<T>::all_finite() const {
    for (const T& x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

template <typename T>
void Tape<T>::check_open() const {
    if (consumed_) throw std::logic_error("tape already consumed by backward()");
}

template <typename T>
Var<T> Tape<T>::push(Node n) {
    check_open();
    assert(n.value->all_finite() && "non-finite value recorded on tape");
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> t) {
    return push(Node{std::make_shared<const Tensor<T>>(std::move(t)), std::nullopt, false, {}});
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> t) {
    return push(Node{std::make_shared<const Tensor<T>>(std::move(t)), std::nullopt, true, {}});
}

template <typename T>
Var<T> Tape<T>::variable(std::shared_ptr<const Tensor<T>> t) {
    return push(Node{std::move(t), std::nullopt, true, {}});
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& v : inputs) {
        if (v.tape != this) throw std::logic_error("op mixes variables from different tapes");
        needs = needs || nodes_.at(v.id).requires_grad;
    }
    return push(Node{std::make_shared<const Tensor<T>>(std::move(value)), std::nullopt, needs,
                     needs ? std::move(fn) : BackwardFn{}});
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
    auto& n = nodes_.at(id);
    if (!n.grad) n.grad.emplace(n.value->shape(), T{0});
    return *n.grad;
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad) return *n.grad;
    return Tensor<T>(n.value->shape(), T{0});
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
    check_open();
    if (loss.tape != this) throw std::logic_error("backward() on a variable from another tape");
    const auto& root = nodes_.at(loss.id);
    if (root.value->size() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(root.value->shape()));
    }
    consumed_ = true;
    if (!root.requires_grad) return;
    grad_buffer(loss.id)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (n.backward && n.grad) n.backward(*this, i);
    }
}

namespace testing {
namespace {
thread_local bool g_corrupt_matmul = false;
thread_local std::vector<std::uint8_t>* g_kink_log = nullptr;
}
void set_corrupt_matmul_backward(bool on) { g_corrupt_matmul = on; }
bool corrupt_matmul_backward() { return g_corrupt_matmul; }
void set_kink_log(std::vector<std::uint8_t>* log) { g_kink_log = log; }
std::vector<std::uint8_t>* kink_log() { return g_kink_log; }
}  // namespace testing

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
// Extended precision backs the finite-difference reference in gradient checks.
template class Tensor<long double>;
template class Tape<long double>;

}  // namespace specenc::ad
