#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace advgen {

// Dense float tensor, NCHW. Classification logits/probs use h = w = 1.
struct Tensor {
    int b = 0, c = 0, h = 0, w = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int b_, int c_, int h_, int w_)
        : b(b_), c(c_), h(h_), w(w_), v(static_cast<size_t>(b_) * c_ * h_ * w_, 0.f) {}

    size_t size() const { return v.size(); }
    size_t sample_size() const { return static_cast<size_t>(c) * h * w; }

    float& at(int bi, int ci, int y, int x) {
        return v[((static_cast<size_t>(bi) * c + ci) * h + y) * w + x];
    }
    float at(int bi, int ci, int y, int x) const {
        return v[((static_cast<size_t>(bi) * c + ci) * h + y) * w + x];
    }
    float* sample(int bi) { return v.data() + static_cast<size_t>(bi) * sample_size(); }
    const float* sample(int bi) const { return v.data() + static_cast<size_t>(bi) * sample_size(); }

    bool same_shape(const Tensor& o) const { return b == o.b && c == o.c && h == o.h && w == o.w; }

    std::string shape_str() const {
        return "(" + std::to_string(b) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

// Integer label tensor, (B,H,W); classification uses h = w = 1.
struct LabelTensor {
    int b = 0, h = 0, w = 0;
    std::vector<int32_t> v;

    LabelTensor() = default;
    LabelTensor(int b_, int h_, int w_) : b(b_), h(h_), w(w_), v(static_cast<size_t>(b_) * h_ * w_, 0) {}

    size_t size() const { return v.size(); }
    size_t sample_size() const { return static_cast<size_t>(h) * w; }
    int32_t& at(int bi, int y, int x) { return v[(static_cast<size_t>(bi) * h + y) * w + x]; }
    int32_t at(int bi, int y, int x) const { return v[(static_cast<size_t>(bi) * h + y) * w + x]; }
};

// Named sub-seed derivation: one root seed reproduces every random stream.
inline uint64_t sub_seed(uint64_t root, std::string_view name) {
    uint64_t hash = 14695981039346656037ull;
    for (char ch : name) {
        hash ^= static_cast<uint8_t>(ch);
        hash *= 1099511628211ull;
    }
    hash ^= root + 0x9e3779b97f4a7c15ull + (hash << 6) + (hash >> 2);
    // splitmix64 finalizer
    hash ^= hash >> 30;
    hash *= 0xbf58476d1ce4e5b9ull;
    hash ^= hash >> 27;
    hash *= 0x94d049bb133111ebull;
    hash ^= hash >> 31;
    return hash;
}

inline Tensor uniform_tensor(int b, int c, int h, int w, uint64_t seed, float lo = 0.f, float hi = 1.f) {
    Tensor t(b, c, h, w);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(lo, hi);
    for (auto& x : t.v) x = dist(rng);
    return t;
}

inline Tensor normal_tensor(int b, int c, int h, int w, uint64_t seed, float stddev = 1.f) {
    Tensor t(b, c, h, w);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.f, stddev);
    for (auto& x : t.v) x = dist(rng);
    return t;
}

enum class NormP { L2, LInf };

inline double lp_norm(const float* p, size_t n, NormP norm) {
    if (norm == NormP::L2) {
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) acc += static_cast<double>(p[i]) * p[i];
        return std::sqrt(acc);
    }
    double m = 0.0;
    for (size_t i = 0; i < n; ++i) m = std::max(m, static_cast<double>(std::fabs(p[i])));
    return m;
}

inline double sample_norm(const Tensor& t, int bi, NormP norm) {
    return lp_norm(t.sample(bi), t.sample_size(), norm);
}

inline bool all_finite(const Tensor& t) {
    for (float x : t.v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace advgen
