#include "specenc/tensor_io.hpp"

#include <fmt/format.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace specenc {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'P', 'E', 'C', 'T', 'N', 'S', 'R'};
constexpr std::uint32_t kMaxRank = 16;

template <typename U>
void put_le(std::ostream& out, U v) {
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    }
    out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
    std::array<unsigned char, sizeof(U)> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw TensorFormatError("truncated tensor header");
    }
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
    return v;
}

}  // namespace

std::uint64_t TensorRecord::numel() const {
    std::uint64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

void write_tensor(std::ostream& out, const TensorRecord& t) {
    if (t.numel() != t.data.size()) {
        throw std::invalid_argument(
            fmt::format("tensor payload has {} values but shape implies {}", t.data.size(), t.numel()));
    }
    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_le<std::uint64_t>(out, d);
    for (float f : t.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    if (!out) throw std::runtime_error("failed writing tensor");
}

TensorRecord read_tensor(std::istream& in) {
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (in.gcount() != static_cast<std::streamsize>(magic.size()) || magic != kMagic) {
        throw TensorFormatError("bad tensor magic (expected SPECTNSR)");
    }
    TensorRecord t;
    const auto rank = get_le<std::uint32_t>(in);
    if (rank > kMaxRank) throw TensorFormatError(fmt::format("tensor rank {} too large", rank));
    t.shape.resize(rank);
    for (auto& d : t.shape) d = get_le<std::uint64_t>(in);
    const auto n = t.numel();
    t.data.resize(n);
    for (auto& f : t.data) {
        try {
            f = std::bit_cast<float>(get_le<std::uint32_t>(in));
        } catch (const TensorFormatError&) {
            throw TensorFormatError("truncated tensor payload");
        }
    }
    return t;
}

void save_tensor_file(const std::string& path, const TensorRecord& t) {
    save_tensor_file(path, std::span<const TensorRecord>(&t, 1));
}

void save_tensor_file(const std::string& path, std::span<const TensorRecord> ts) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path));
    for (const auto& t : ts) write_tensor(out, t);
}

TensorRecord load_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
    return read_tensor(in);
}

std::vector<TensorRecord> load_tensor_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
    std::vector<TensorRecord> out;
    while (in.peek() != std::char_traits<char>::eof()) out.push_back(read_tensor(in));
    return out;
}

}  // namespace specenc
