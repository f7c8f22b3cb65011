#include "specenc/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace specenc {

RegressionMetrics compute_metrics(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size()) throw std::invalid_argument("compute_metrics: size mismatch");
    const std::size_t n = y.size();
    if (n < 2) throw std::invalid_argument("compute_metrics: need at least 2 samples");
    const double inv_n = 1.0 / static_cast<double>(n);

    double abs_err = 0.0, sq_err = 0.0, sum_y = 0.0, sum_p = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = y[i] - yhat[i];
        abs_err += std::abs(d);
        sq_err += d * d;
        sum_y += y[i];
        sum_p += yhat[i];
    }
    const double mean_y = sum_y * inv_n;
    const double mean_p = sum_p * inv_n;

    double cov = 0.0, var_y = 0.0, var_p = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dy = y[i] - mean_y;
        const double dp = yhat[i] - mean_p;
        cov += dy * dp;
        var_y += dy * dy;
        var_p += dp * dp;
    }

    RegressionMetrics m;
    m.mae = abs_err * inv_n;
    m.rmse = std::sqrt(sq_err * inv_n);
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    if (var_y > 0.0 && var_p > 0.0) {
        // The 1/n factors cancel.
        m.pearson_r = std::clamp(cov / std::sqrt(var_y * var_p), -1.0, 1.0);
    } else {
        m.pearson_r = nan;
        m.r_defined = false;
    }
    if (var_y > 0.0) {
        m.r2 = 1.0 - sq_err / var_y;
    } else {
        m.r2 = nan;
        m.r2_defined = false;
    }
    return m;
}

}  // namespace specenc
