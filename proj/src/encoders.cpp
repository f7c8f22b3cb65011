#include "specenc/encoders.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace specenc {

Spectrum normalize_intensities(const Spectrum& s) {
    if (s.peaks.empty()) {
        throw std::invalid_argument(fmt::format("spectrum '{}' has no peaks to normalize", s.id));
    }
    double max_intensity = 0.0;
    for (const auto& p : s.peaks) max_intensity = std::max(max_intensity, p.intensity);
    if (!(max_intensity > 0.0)) {
        throw std::invalid_argument(fmt::format("spectrum '{}' has all-zero intensities", s.id));
    }
    Spectrum out = s;
    for (auto& p : out.peaks) p.intensity /= max_intensity;
    // Full (m/z, intensity) order makes every encoding independent of the
    // input order, ties included.
    std::sort(out.peaks.begin(), out.peaks.end(), [](const Peak& a, const Peak& b) {
        return a.mz < b.mz || (a.mz == b.mz && a.intensity < b.intensity);
    });
    return out;
}

Spectrum insert_precursor(const Spectrum& s) {
    Spectrum out = s;
    const auto pos = std::upper_bound(out.peaks.begin(), out.peaks.end(), s.precursor_mz,
                                      [](double mz, const Peak& p) { return mz < p.mz; });
    out.peaks.insert(pos, Peak{s.precursor_mz, kPrecursorIntensity});
    return out;
}

Spectrum preprocess(const Spectrum& s) { return insert_precursor(normalize_intensities(s)); }

void BinConfig::validate() const {
    if (!(std::isfinite(min_mz) && std::isfinite(max_mz) && min_mz < max_mz)) {
        throw ValidationError("bin range requires min_mz < max_mz");
    }
    if (!(std::isfinite(bin_width) && bin_width > 0.0)) throw ValidationError("bin_width must be > 0");
}

std::size_t BinConfig::n_bins() const {
    const double q = (max_mz - min_mz) / bin_width;
    const double r = std::round(q);
    // Absorb representation error, e.g. 10000 / 0.1.
    if (std::abs(q - r) <= 1e-9 * std::max(1.0, q)) return static_cast<std::size_t>(r);
    return static_cast<std::size_t>(std::ceil(q));
}

BinnedVector encode_binned(const Spectrum& s, const BinConfig& cfg) {
    const std::size_t n = cfg.n_bins();
    std::vector<double> acc(n, 0.0);
    BinnedVector out;
    for (const auto& p : s.peaks) {
        if (!(p.mz >= cfg.min_mz && p.mz < cfg.max_mz)) {
            ++out.dropped_peaks;
            out.dropped_intensity += p.intensity;
            continue;
        }
        auto idx = static_cast<std::size_t>(std::floor((p.mz - cfg.min_mz) / cfg.bin_width));
        idx = std::min(idx, n - 1);
        if (cfg.aggregation == BinAggregation::Sum) {
            acc[idx] += p.intensity;
        } else {
            acc[idx] = std::max(acc[idx], p.intensity);
        }
    }
    out.values.assign(acc.begin(), acc.end());
    return out;
}

PeakSet encode_set(const Spectrum& s) {
    PeakSet out;
    out.mz.reserve(s.peaks.size());
    out.intensity.reserve(s.peaks.size());
    for (const auto& p : s.peaks) {
        out.mz.push_back(p.mz);
        out.intensity.push_back(p.intensity);
    }
    return out;
}

PeakGraph encode_graph(const Spectrum& s) {
    PeakGraph g;
    const std::size_t v = s.peaks.size() + 1;
    g.vertex_attr.reserve(v);
    g.vertex_attr.push_back(0.0);
    std::vector<double> mz;
    mz.reserve(v);
    mz.push_back(0.0);
    for (const auto& p : s.peaks) {
        g.vertex_attr.push_back(p.intensity);
        mz.push_back(p.mz);
    }
    const std::size_t arcs = 2 * (v - 1);
    g.src.reserve(arcs);
    g.dst.reserve(arcs);
    g.edge_attr.reserve(arcs);
    for (std::uint32_t k = 0; k + 1 < v; ++k) {
        const double delta = std::abs(mz[k + 1] - mz[k]);
        g.src.push_back(k);
        g.dst.push_back(k + 1);
        g.edge_attr.push_back(delta);
        g.src.push_back(k + 1);
        g.dst.push_back(k);
        g.edge_attr.push_back(delta);
    }
    return g;
}

TensorRecord to_tensor(const BinnedVector& v) {
    return TensorRecord{{v.values.size()}, v.values};
}

TensorRecord to_tensor(const PeakSet& s) {
    TensorRecord t{{s.size(), 2}, {}};
    t.data.reserve(2 * s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        t.data.push_back(static_cast<float>(s.mz[i]));
        t.data.push_back(static_cast<float>(s.intensity[i]));
    }
    return t;
}

std::vector<TensorRecord> to_tensors(const PeakGraph& g) {
    const std::size_t a = g.num_arcs();
    TensorRecord vertices{{g.num_vertices()}, {}};
    for (double x : g.vertex_attr) vertices.data.push_back(static_cast<float>(x));
    TensorRecord index{{2, a}, {}};
    index.data.reserve(2 * a);
    for (auto i : g.src) index.data.push_back(static_cast<float>(i));
    for (auto i : g.dst) index.data.push_back(static_cast<float>(i));
    TensorRecord edges{{a}, {}};
    for (double x : g.edge_attr) edges.data.push_back(static_cast<float>(x));
    return {std::move(vertices), std::move(index), std::move(edges)};
}

}  // namespace specenc
