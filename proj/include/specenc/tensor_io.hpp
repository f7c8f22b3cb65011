#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace specenc {

/// Binary tensor container:
///   "SPECTNSR" | u32 rank | rank x u64 dims | f32 payload (row-major)
/// All integers and floats little-endian.
struct TensorRecord {
    std::vector<std::uint64_t> shape;
    std::vector<float> data;

    std::uint64_t numel() const;
    friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

class TensorFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void write_tensor(std::ostream& out, const TensorRecord& t);
TensorRecord read_tensor(std::istream& in);

void save_tensor_file(const std::string& path, const TensorRecord& t);
void save_tensor_file(const std::string& path, std::span<const TensorRecord> ts);
TensorRecord load_tensor_file(const std::string& path);
/// Reads consecutive records until end of file.
std::vector<TensorRecord> load_tensor_records(const std::string& path);

}  // namespace specenc
