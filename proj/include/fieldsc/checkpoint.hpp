// Checkpoint container: named tensors plus the resolved configuration the
// run used, the build id, and the step count. One binary file:
//
//   magic    "FCKP" (4 bytes)
//   version  u32 little-endian, currently 1
//   step     u64 little-endian
//   config   u32 length + bytes (resolved key=value text)
//   build    u32 length + bytes (git describe of the producing build)
//   count    u32 number of entries
//   entry*   u32 name length + name bytes + one TNSR stream
//
// Saves go through a temporary file and a rename, so a checkpoint path
// either holds a complete checkpoint or the previous one.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "fieldsc/error.hpp"
#include "fieldsc/tensor.hpp"
#include "fieldsc/tnsr_io.hpp"

#ifndef FIELDSC_GIT_DESC
#define FIELDSC_GIT_DESC "unknown"
#endif

namespace fieldsc::ckpt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline const char* build_id() { return FIELDSC_GIT_DESC; }

struct Checkpoint {
    std::vector<std::pair<std::string, ad::Tensor>> entries;  // insertion order preserved
    std::string config_echo;
    std::string build = build_id();
    std::uint64_t step = 0;

    void add(const std::string& name, const ad::Tensor& t) {
        if (name.empty()) throw IoError("checkpoint: entry names must be nonempty");
        for (const auto& [n, v] : entries)
            if (n == name) throw IoError("checkpoint: duplicate entry '" + name + "'");
        entries.emplace_back(name, t);
    }

    bool has(const std::string& name) const {
        for (const auto& [n, v] : entries)
            if (n == name) return true;
        return false;
    }

    const ad::Tensor& get(const std::string& name) const {
        for (const auto& [n, v] : entries)
            if (n == name) return v;
        throw IoError("checkpoint: no entry named '" + name + "'");
    }
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), 8);
}

inline void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4))
        throw IoError(std::string("checkpoint: truncated while reading ") + what);
    return v;
}

inline std::uint64_t get_u64(std::istream& is, const char* what) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8))
        throw IoError(std::string("checkpoint: truncated while reading ") + what);
    return v;
}

inline std::string get_string(std::istream& is, const char* what) {
    std::uint32_t len = get_u32(is, what);
    if (len > (1u << 28)) throw IoError(std::string("checkpoint: implausible length for ") + what);
    std::string s(len, '\0');
    if (len && !is.read(s.data(), len))
        throw IoError(std::string("checkpoint: truncated while reading ") + what);
    return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& c) {
    os.write("FCKP", 4);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_u64(os, c.step);
    detail::put_string(os, c.config_echo);
    detail::put_string(os, c.build);
    detail::put_u32(os, static_cast<std::uint32_t>(c.entries.size()));
    for (const auto& [name, t] : c.entries) {
        detail::put_string(os, name);
        io::write_tnsr(os, t);
    }
    if (!os) throw IoError("checkpoint: write failed");
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("checkpoint: cannot open " + tmp.string() + " for writing");
        write_checkpoint(os, c);
        os.close();
        if (!os) throw IoError("checkpoint: failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("checkpoint: cannot move " + tmp.string() + " into place: " +
                          ec.message());
}

inline Checkpoint read_checkpoint(std::istream& is) {
    char magic[4] = {};
    if (!is.read(magic, 4) || std::memcmp(magic, "FCKP", 4) != 0)
        throw IoError("checkpoint: bad magic bytes (not a checkpoint)");
    std::uint32_t version = detail::get_u32(is, "version");
    if (version != kCheckpointVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint c;
    c.step = detail::get_u64(is, "step");
    c.config_echo = detail::get_string(is, "config echo");
    c.build = detail::get_string(is, "build id");
    std::uint32_t count = detail::get_u32(is, "entry count");
    c.entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = detail::get_string(is, "entry name");
        ad::Tensor t = io::read_tnsr(is);
        c.entries.emplace_back(std::move(name), std::move(t));
    }
    return c;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open " + path.string());
    return read_checkpoint(is);
}

}  // namespace fieldsc::ckpt
