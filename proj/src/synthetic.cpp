#include "specenc/spectrum.hpp"

#include "specenc/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace specenc {

void SyntheticConfig::validate() const {
    if (peaks_min < 2) throw ValidationError("synthetic peaks_min must be >= 2");
    if (peaks_min > peaks_max) throw ValidationError("synthetic peaks_min must not exceed peaks_max");
    if (!(gap_signal_prob >= 0.0 && gap_signal_prob <= 1.0)) {
        throw ValidationError("synthetic gap_signal_prob must lie in [0, 1]");
    }
    if (!(std::isfinite(mz_max) && mz_max > 0.0)) throw ValidationError("synthetic mz_max must be > 0");
}

double synthetic_label(const std::vector<Peak>& peaks) {
    const std::size_t n = peaks.size();
    if (n < 2) throw std::invalid_argument("synthetic_label needs at least two peaks");
    double total = 0.0;
    for (const auto& p : peaks) total += p.intensity;
    if (!(total > 0.0)) throw std::invalid_argument("synthetic_label needs positive total intensity");

    double entropy = 0.0;
    for (const auto& p : peaks) {
        if (p.intensity > 0.0) {
            const double q = p.intensity / total;
            entropy -= q * std::log(q);
        }
    }
    const double h_norm = std::clamp(entropy / std::log(static_cast<double>(n)), 0.0, 1.0);

    std::size_t signal = 0;
    for (std::size_t i = 1; i < n; ++i) {
        const double gap = peaks[i].mz - peaks[i - 1].mz;
        if (gap >= kSignalGapLo && gap <= kSignalGapHi) ++signal;
    }
    const double f_gap = static_cast<double>(signal) / static_cast<double>(n - 1);
    return 0.5 * h_norm + 0.5 * f_gap;
}

Spectrum generate_synthetic_one(const SyntheticConfig& cfg, std::size_t index) {
    Rng rng(derive_seed(cfg.seed, index));
    const auto n = static_cast<std::size_t>(rng.uniform_int(cfg.peaks_min, cfg.peaks_max));

    std::vector<double> gaps(n - 1);
    double span = 0.0;
    for (auto& g : gaps) {
        g = rng.bernoulli(cfg.gap_signal_prob) ? rng.uniform(kSignalGapLo, kSignalGapHi)
                                               : rng.uniform(kNoiseGapLo, kNoiseGapHi);
        span += g;
    }

    // The chain starts low enough that it and the precursor margin fit below
    // mz_max when possible; longer chains run past it.
    constexpr double kPrecursorMargin = 50.0;
    const double start_hi = std::max(2.0, cfg.mz_max - span - kPrecursorMargin);
    double mz = rng.uniform(1.0, start_hi);

    Spectrum s;
    s.id = fmt::format("syn_{:06d}", index);
    s.peaks.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0) mz += gaps[i - 1];
        s.peaks.push_back(Peak{mz, rng.uniform_open_closed()});
    }
    s.precursor_mz = s.peaks.back().mz + rng.uniform(1.0, kPrecursorMargin);
    s.label = synthetic_label(s.peaks);
    return s;
}

std::vector<Spectrum> generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    std::vector<Spectrum> out;
    out.reserve(cfg.n_spectra);
    for (std::size_t i = 0; i < cfg.n_spectra; ++i) out.push_back(generate_synthetic_one(cfg, i));
    return out;
}

}  // namespace specenc
