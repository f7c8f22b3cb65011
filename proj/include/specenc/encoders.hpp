#pragma once

#include "specenc/spectrum.hpp"
#include "specenc/tensor_io.hpp"

#include <cstdint>
#include <vector>

namespace specenc {

/// Intensity assigned to the precursor pseudo-peak. Fragment intensities are
/// max-normalized to at most 1, so this value marks the precursor.
inline constexpr double kPrecursorIntensity = 2.0;

/// Max-normalizes intensities to 1.0 and orders peaks by (m/z, intensity).
/// Throws std::invalid_argument on zero peaks or all-zero intensity.
Spectrum normalize_intensities(const Spectrum& s);

/// Inserts (precursor_mz, 2.0) after any peak with an equal m/z.
Spectrum insert_precursor(const Spectrum& s);

/// normalize_intensities followed by insert_precursor. The order matters: the
/// precursor marker must not be rescaled.
Spectrum preprocess(const Spectrum& s);

enum class BinAggregation { Sum, Max };

struct BinConfig {
    double min_mz = 0.0;
    double max_mz = 10000.0;
    double bin_width = 1.0;
    BinAggregation aggregation = BinAggregation::Sum;

    void validate() const;
    std::size_t n_bins() const;
};

struct BinnedVector {
    std::vector<float> values;
    std::size_t dropped_peaks = 0;     // peaks outside [min_mz, max_mz)
    double dropped_intensity = 0.0;
};

/// Multiset of (m/z, intensity) pairs as parallel arrays. m/z is unscaled.
struct PeakSet {
    std::vector<double> mz;
    std::vector<double> intensity;

    std::size_t size() const { return mz.size(); }
};

/// Chain graph over peaks in m/z order, headed by a sentinel vertex at m/z 0
/// with intensity 0. Arc 2k is k -> k+1 and arc 2k+1 is k+1 -> k; both carry
/// the m/z difference of their endpoints.
struct PeakGraph {
    std::vector<double> vertex_attr;
    std::vector<std::uint32_t> src;
    std::vector<std::uint32_t> dst;
    std::vector<double> edge_attr;

    std::size_t num_vertices() const { return vertex_attr.size(); }
    std::size_t num_arcs() const { return src.size(); }
};

// The encoders expect a preprocessed spectrum.
BinnedVector encode_binned(const Spectrum& s, const BinConfig& cfg);
PeakSet encode_set(const Spectrum& s);
PeakGraph encode_graph(const Spectrum& s);

// Tensor export. Graphs export as vertex_attr [V], edge_index [2, A] and
// edge_attr [A].
TensorRecord to_tensor(const BinnedVector& v);
TensorRecord to_tensor(const PeakSet& s);
std::vector<TensorRecord> to_tensors(const PeakGraph& g);

}  // namespace specenc
