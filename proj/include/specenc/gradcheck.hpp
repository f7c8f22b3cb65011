#pragma once

#include "specenc/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace specenc::ad {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_tensor = 0;  // index into the checked inputs
    std::size_t worst_index = 0;   // flat index within that tensor
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;       // number of scalars compared
};

/// |a - n| / max(|a|, |n|, 1e-12)
double relative_error(double analytic, double numeric);

using ScalarFn = std::function<Var<double>(Tape<double>&, Var<double>)>;
using MultiScalarFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Compares backward() against central differences
/// (f(x + eps) - f(x - eps)) / (2 eps) for every entry of x.
GradCheckReport grad_check(const ScalarFn& f, const Tensor<double>& x, double eps = 1e-6);

/// Same, over several inputs at once (e.g. every parameter of a model). The
/// tensors are perturbed in place during the check and restored afterwards.
///
/// With `extrapolation` = L > 0 the central differences at eps, eps/2, ...,
/// eps/2^L are combined by Richardson extrapolation, cancelling the truncation
/// terms up to eps^(2L). This lets a larger step be used on smooth functions,
/// so rounding in f matters less. If any ReLU-like op changes side inside the
/// stencil, the step is divided by 8 and the entry retried (up to 6 times).
GradCheckReport grad_check(const MultiScalarFn& f,
                           const std::vector<std::shared_ptr<Tensor<double>>>& inputs,
                           double eps = 1e-6, int extrapolation = 0);

using ExtendedScalarFn =
    std::function<Var<long double>(Tape<long double>&, const std::vector<Var<long double>>&)>;

/// As above, but the finite differences come from `reference`, the same
/// function evaluated in extended precision. Rounding in double limits plain
/// differences to roughly 1e-12 absolute, which is too coarse for the small
/// gradient entries attention layers produce; backward() is still checked in
/// double.
GradCheckReport grad_check(const MultiScalarFn& f, const ExtendedScalarFn& reference,
                           const std::vector<std::shared_ptr<Tensor<double>>>& inputs, double eps = 1e-6,
                           int extrapolation = 0);

}  // namespace specenc::ad
