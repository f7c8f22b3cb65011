#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace specenc::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Shape incompatibility in a primitive; the message names the op and shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major array. Rank 0 holds a single scalar.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() : data_(1, T{0}) {}
    explicit Tensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    const std::vector<T>& vec() const { return data_; }
    std::vector<T>& vec() { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }
    T item() const {
        if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    void reshape(Shape s) {
        if (shape_numel(s) != data_.size()) {
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s));
        }
        shape_ = std::move(s);
    }

    template <typename U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Record of executed primitives for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the node vector is already a
/// topological order. backward() walks it once in reverse; a tape cannot be
/// differentiated twice or extended afterwards.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that does not require a gradient.
    Var<T> constant(Tensor<T> t);
    /// Leaf that requires a gradient. The shared overload keeps the caller's
    /// storage (used for model parameters).
    Var<T> variable(Tensor<T> t);
    Var<T> variable(std::shared_ptr<const Tensor<T>> t);

    /// Appends an op output. `fn` runs during backward only when some input
    /// requires a gradient.
    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);
    Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn);

    void backward(Var<T> loss);

    const Tensor<T>& value(std::size_t id) const { return *nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    /// Gradient flowing into `id` during backward; nullptr when none reached it.
    const Tensor<T>* grad_of(std::size_t id) const {
        const auto& g = nodes_.at(id).grad;
        return g ? &*g : nullptr;
    }
    /// Gradient of a variable after backward(); zeros when none reached it.
    Tensor<T> grad(Var<T> v) const;

    /// Zero-initialized accumulation buffer for `id`.
    Tensor<T>& grad_buffer(std::size_t id);

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

private:
    struct Node {
        std::shared_ptr<const Tensor<T>> value;
        std::optional<Tensor<T>> grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Var<T> push(Node n);
    void check_open() const;

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return tape->value(id);
}

namespace testing {
/// Test hook: when enabled, matmul's backward rule is perturbed by a factor
/// of (1 + 1e-3) so gradient checks must fail. Thread-local.
void set_corrupt_matmul_backward(bool on);
bool corrupt_matmul_backward();

/// While set, piecewise-linear ops (relu, leaky_relu, mae_loss) append one
/// byte per input entry saying which side of the kink it is on. Gradient
/// checks use it to keep finite-difference stencils off kinks. Thread-local.
void set_kink_log(std::vector<std::uint8_t>* log);
std::vector<std::uint8_t>* kink_log();
}  // namespace testing

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;
extern template class Tensor<long double>;
extern template class Tape<long double>;

}  // namespace specenc::ad
