#pragma once

#include "specenc/rng.hpp"
#include "specenc/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

// Differentiable primitives. Each records one node on the tape of its first
// argument. Broadcasting is limited to a second operand whose shape is a
// trailing suffix of the first operand's shape (batch over leading dims);
// anything else needs an explicit reshape or broadcast_last.
namespace specenc::ad {

using SegmentIds = std::vector<std::uint32_t>;

/// a [..., M, K] x b [K, N] -> [..., M, N]; or batched when b is [..., K, N]
/// with the same leading dims as a.
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// Swaps the last two axes.
template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> reshape(Var<T> a, Shape shape);

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);

/// Concatenation along the last axis; leading dims must agree.
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts);
/// Columns [start, start + len) of the last axis.
template <typename T> Var<T> slice_last(Var<T> a, std::size_t start, std::size_t len);
/// [..., 1] -> [..., n] by repetition.
template <typename T> Var<T> broadcast_last(Var<T> a, std::size_t n);

template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> leaky_relu(Var<T> a, T slope);
template <typename T> Var<T> sigmoid(Var<T> a);

/// Softmax over the last axis.
template <typename T> Var<T> softmax(Var<T> a);
/// Softmax over the last axis restricted to entries whose mask byte is
/// nonzero; masked entries get probability exactly 0. `keep` has one byte per
/// element of `a`, and every row needs at least one kept entry.
template <typename T> Var<T> masked_softmax(Var<T> a, std::span<const std::uint8_t> keep);

/// Inverted dropout: in training, zeroes each entry with probability p and
/// scales survivors by 1/(1-p). Identity when `train` is false.
template <typename T> Var<T> dropout(Var<T> a, double p, bool train, Rng& rng);

/// Normalization over the last axis, without affine parameters.
template <typename T> Var<T> layer_norm(Var<T> a, T eps);

/// Mean over one axis; the axis is removed from the shape.
template <typename T> Var<T> mean(Var<T> a, std::size_t axis);
/// Sum of all entries as a rank-0 scalar.
template <typename T> Var<T> sum(Var<T> a);

/// Row-segment reductions over axis 0. `segments` has one id per row, sorted
/// nondecreasing, each below num_segments. Empty segments produce zeros.
template <typename T> Var<T> segment_sum(Var<T> a, const SegmentIds& segments, std::size_t num_segments);
template <typename T> Var<T> segment_mean(Var<T> a, const SegmentIds& segments, std::size_t num_segments);
/// Softmax of a [E] or [E, C] within each segment, independently per column.
template <typename T> Var<T> segment_softmax(Var<T> a, const SegmentIds& segments, std::size_t num_segments);

/// Rows of a [R, ...] picked by index; repeats allowed.
template <typename T> Var<T> gather_rows(Var<T> a, const std::vector<std::uint32_t>& index);

/// mean((pred - target)^2) as a rank-0 scalar; target is a constant.
template <typename T> Var<T> mse_loss(Var<T> pred, const Tensor<T>& target);
/// mean(|pred - target|); subgradient 0 at equality.
template <typename T> Var<T> mae_loss(Var<T> pred, const Tensor<T>& target);

}  // namespace specenc::ad
