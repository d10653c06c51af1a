#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "advgen/tensor.hpp"

namespace advgen {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary named-tensor archive:
//   magic | u32 n_meta | (key, value) strings | u32 n_tensors |
//   (name, 4 x i32 dims, raw float payload) ...
// Strings are u32 length + bytes. Round-trips are bit-exact.
namespace detail {
inline constexpr char kCkptMagic[8] = {'A', 'D', 'V', 'C', 'K', 'P', 'T', '1'};

inline void write_u32(std::ostream& os, uint32_t x) { os.write(reinterpret_cast<const char*>(&x), 4); }
inline void write_i32(std::ostream& os, int32_t x) { os.write(reinterpret_cast<const char*>(&x), 4); }
inline void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline uint32_t read_u32(std::istream& is) {
    uint32_t x = 0;
    if (!is.read(reinterpret_cast<char*>(&x), 4)) throw CheckpointError("truncated checkpoint");
    return x;
}
inline int32_t read_i32(std::istream& is) {
    int32_t x = 0;
    if (!is.read(reinterpret_cast<char*>(&x), 4)) throw CheckpointError("truncated checkpoint");
    return x;
}
inline std::string read_str(std::istream& is) {
    uint32_t n = read_u32(is);
    if (n > (1u << 20)) throw CheckpointError("corrupt checkpoint: oversized string");
    std::string s(n, '\0');
    if (!is.read(s.data(), n)) throw CheckpointError("truncated checkpoint");
    return s;
}
}  // namespace detail

struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const {
        for (auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open for write: " + path);
    os.write(detail::kCkptMagic, 8);
    detail::write_u32(os, static_cast<uint32_t>(ckpt.meta.size()));
    for (auto& [k, v] : ckpt.meta) {
        detail::write_str(os, k);
        detail::write_str(os, v);
    }
    detail::write_u32(os, static_cast<uint32_t>(ckpt.tensors.size()));
    for (auto& [name, t] : ckpt.tensors) {
        detail::write_str(os, name);
        detail::write_i32(os, t.b);
        detail::write_i32(os, t.c);
        detail::write_i32(os, t.h);
        detail::write_i32(os, t.w);
        os.write(reinterpret_cast<const char*>(t.v.data()),
                 static_cast<std::streamsize>(t.v.size() * sizeof(float)));
    }
    if (!os) throw CheckpointError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("missing checkpoint: " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
        throw CheckpointError("corrupt checkpoint: bad magic in " + path);
    Checkpoint ckpt;
    uint32_t n_meta = detail::read_u32(is);
    for (uint32_t i = 0; i < n_meta; ++i) {
        std::string k = detail::read_str(is);
        ckpt.meta[k] = detail::read_str(is);
    }
    uint32_t n_tensors = detail::read_u32(is);
    for (uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = detail::read_str(is);
        int32_t b = detail::read_i32(is), c = detail::read_i32(is);
        int32_t h = detail::read_i32(is), w = detail::read_i32(is);
        if (b < 0 || c < 0 || h < 0 || w < 0) throw CheckpointError("corrupt checkpoint: bad dims");
        Tensor t(b, c, h, w);
        if (!is.read(reinterpret_cast<char*>(t.v.data()),
                     static_cast<std::streamsize>(t.v.size() * sizeof(float))))
            throw CheckpointError("truncated checkpoint: " + path);
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

}  // namespace advgen
