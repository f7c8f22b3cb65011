#include "specenc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace specenc::ad {

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const ScalarFn& f, const Tensor<double>& x, double eps) {
    auto input = std::make_shared<Tensor<double>>(x);
    return grad_check(
        [&](Tape<double>& tape, const std::vector<Var<double>>& v) { return f(tape, v.front()); },
        {input}, eps);
}

namespace {

std::vector<Tensor<double>> analytic_gradients(const MultiScalarFn& f,
                                               const std::vector<std::shared_ptr<Tensor<double>>>& inputs) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& in : inputs) vars.push_back(tape.variable(std::shared_ptr<const Tensor<double>>(in)));
    auto loss = f(tape, vars);
    tape.backward(loss);
    std::vector<Tensor<double>> out;
    for (const auto& v : vars) out.push_back(tape.grad(v));
    return out;
}

/// Finite differences of f over copies of the inputs held in precision R.
template <typename R>
GradCheckReport compare(const std::function<Var<R>(Tape<R>&, const std::vector<Var<R>>&)>& f,
                        const std::vector<Tensor<double>>& analytic,
                        const std::vector<std::shared_ptr<Tensor<double>>>& inputs, double eps, int extrapolation) {
    if (extrapolation < 0) throw std::invalid_argument("grad_check: extrapolation must be >= 0");
    std::vector<Tensor<R>> xs;
    for (const auto& in : inputs) xs.push_back(in->template cast<R>());
    // Evaluates f, recording on which side of every kink the inputs fall.
    auto evaluate = [&](std::vector<std::uint8_t>& sides) {
        sides.clear();
        testing::set_kink_log(&sides);
        struct Reset {
            ~Reset() { testing::set_kink_log(nullptr); }
        } reset;
        Tape<R> tape;
        std::vector<Var<R>> vars;
        for (const auto& x : xs) vars.push_back(tape.constant(x));
        return f(tape, vars).value().item();
    };

    GradCheckReport report;
    std::vector<std::uint8_t> base_sides, sides;
    for (std::size_t t = 0; t < xs.size(); ++t) {
        auto& x = xs[t];
        for (std::size_t i = 0; i < x.size(); ++i) {
            const R orig = x[i];
            evaluate(base_sides);
            bool crossed = false;
            auto central = [&](R h) {
                x[i] = orig + h;
                const R fp = evaluate(sides);
                crossed = crossed || sides != base_sides;
                x[i] = orig - h;
                const R fm = evaluate(sides);
                crossed = crossed || sides != base_sides;
                x[i] = orig;
                return (fp - fm) / (R{2} * h);
            };
            // Row k of the Richardson table; the last entry is the estimate.
            auto extrapolate = [&](R h) {
                std::vector<R> row{central(h)};
                for (int k = 1; k <= extrapolation; ++k) {
                    h /= 2;
                    std::vector<R> next{central(h)};
                    R factor = 4;
                    for (int j = 1; j <= k; ++j, factor *= 4) {
                        next.push_back(next[j - 1] + (next[j - 1] - row[j - 1]) / (factor - 1));
                    }
                    row = std::move(next);
                }
                return row.back();
            };
            // A stencil that straddles a kink measures neither one-sided
            // slope, so shrink it until every kinked op stays on one side.
            R h = static_cast<R>(eps);
            R estimate = extrapolate(h);
            for (int retry = 0; crossed && retry < 6; ++retry) {
                crossed = false;
                h /= 8;
                estimate = extrapolate(h);
            }
            const auto numeric = static_cast<double>(estimate);
            const double err = relative_error(analytic[t][i], numeric);
            ++report.checked;
            if (err > report.max_rel_error || report.checked == 1) {
                report.max_rel_error = std::max(report.max_rel_error, err);
                report.worst_tensor = t;
                report.worst_index = i;
                report.analytic = analytic[t][i];
                report.numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace

GradCheckReport grad_check(const MultiScalarFn& f, const std::vector<std::shared_ptr<Tensor<double>>>& inputs,
                           double eps, int extrapolation) {
    return compare<double>(f, analytic_gradients(f, inputs), inputs, eps, extrapolation);
}

GradCheckReport grad_check(const MultiScalarFn& f, const ExtendedScalarFn& reference,
                           const std::vector<std::shared_ptr<Tensor<double>>>& inputs, double eps,
                           int extrapolation) {
    return compare<long double>(reference, analytic_gradients(f, inputs), inputs, eps, extrapolation);
}

}  // namespace specenc::ad
