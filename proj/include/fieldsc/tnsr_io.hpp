#pragma once

// TNSR tensor file format.
//
//   magic   "TNSR" (4 bytes)
//   version u32 little-endian, currently 1
//   dtype   u8, 0 = little-endian float32
//   rank    u8
//   extents rank * u32 little-endian
//   payload row-major float32 values
//
// Round trips are bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "fieldsc/error.hpp"
#include "fieldsc/tensor.hpp"

namespace fieldsc::io {

static_assert(std::endian::native == std::endian::little,
              "TNSR serialization assumes a little-endian host");

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}
inline std::uint32_t get_u32(std::istream& is, const char* what) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4))
        throw IoError(std::string("TNSR: truncated while reading ") + what);
    return v;
}
inline std::uint8_t get_u8(std::istream& is, const char* what) {
    char c = 0;
    if (!is.read(&c, 1)) throw IoError(std::string("TNSR: truncated while reading ") + what);
    return static_cast<std::uint8_t>(c);
}
}  // namespace detail

inline constexpr std::uint32_t kTnsrVersion = 1;

inline void write_tnsr(std::ostream& os, const ad::Tensor& t) {
    if (!t.defined()) throw IoError("TNSR: cannot write an undefined tensor");
    if (t.rank() > 255) throw IoError("TNSR: rank exceeds format limit");
    os.write("TNSR", 4);
    detail::put_u32(os, kTnsrVersion);
    char dtype = 0, rank = static_cast<char>(t.rank());
    os.write(&dtype, 1);
    os.write(&rank, 1);
    for (int e : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(e));
    os.write(reinterpret_cast<const char*>(t.values().data()),
             static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!os) throw IoError("TNSR: write failed");
}

inline void write_tnsr(const std::filesystem::path& path, const ad::Tensor& t) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("TNSR: cannot open " + path.string() + " for writing");
    write_tnsr(f, t);
    f.close();
    if (!f) throw IoError("TNSR: failed writing " + path.string());
}

inline ad::Tensor read_tnsr(std::istream& is) {
    char magic[4] = {};
    if (!is.read(magic, 4) || std::memcmp(magic, "TNSR", 4) != 0)
        throw IoError("TNSR: bad magic bytes (not a TNSR stream)");
    std::uint32_t version = detail::get_u32(is, "version");
    if (version != kTnsrVersion)
        throw IoError("TNSR: unsupported version " + std::to_string(version));
    std::uint8_t dtype = detail::get_u8(is, "dtype");
    if (dtype != 0) throw IoError("TNSR: unsupported dtype " + std::to_string(dtype));
    std::uint8_t rank = detail::get_u8(is, "rank");
    ad::Shape shape(rank);
    std::size_t n = 1;
    for (int d = 0; d < rank; ++d) {
        std::uint32_t e = detail::get_u32(is, "extent");
        shape[static_cast<std::size_t>(d)] = static_cast<int>(e);
        n *= e;
    }
    std::vector<float> values(n);
    if (n > 0 && !is.read(reinterpret_cast<char*>(values.data()),
                          static_cast<std::streamsize>(n * sizeof(float))))
        throw IoError("TNSR: truncated payload");
    return ad::Tensor(std::move(shape), std::move(values));
}

inline ad::Tensor read_tnsr(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("TNSR: cannot open " + path.string());
    ad::Tensor t = read_tnsr(f);
    if (f.peek() != std::char_traits<char>::eof())
        throw IoError("TNSR: trailing bytes in " + path.string());
    return t;
}

}  // namespace fieldsc::io
