#pragma once

#include <optional>
#include <stdexcept>

#include "advgen/tensor.hpp"

namespace advgen {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct RangeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValueError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Image batch in canonical [0,1] pixel units.
struct ImageBatch {
    Tensor data;
};

struct NormBudget {
    NormP p = NormP::LInf;
    double epsilon = 0.0;  // canonical [0,1] units
};

// Additive perturbation with its budget; universal attacks carry b = 1.
struct Perturbation {
    Tensor data;
    NormBudget budget;
};

// Seeded uniform pattern, the fixed generator input for universal attacks.
struct FixedPattern {
    Tensor data;
    uint64_t seed = 0;
};

inline FixedPattern make_fixed_pattern(int c, int h, int w, uint64_t seed) {
    return FixedPattern{uniform_tensor(1, c, h, w, seed), seed};
}

// Softmax outputs; (B,C,1,1) for classification, (B,C,H,W) for segmentation.
struct PredictionDistribution {
    Tensor probs;
};

inline const ImageBatch& validate_image_batch(const ImageBatch& batch) {
    if (batch.data.b < 1) throw ShapeError("image batch must contain at least one sample");
    for (float x : batch.data.v) {
        if (!(x >= 0.f && x <= 1.f))
            throw RangeError("image value " + std::to_string(x) + " outside [0,1]");
    }
    return batch;
}

inline void validate_distribution(const PredictionDistribution& d, double tol = 1e-5) {
    const Tensor& p = d.probs;
    for (float x : p.v)
        if (x < 0.f) throw RangeError("negative probability");
    for (int bi = 0; bi < p.b; ++bi)
        for (int y = 0; y < p.h; ++y)
            for (int x = 0; x < p.w; ++x) {
                double s = 0.0;
                for (int ci = 0; ci < p.c; ++ci) s += p.at(bi, ci, y, x);
                if (std::fabs(s - 1.0) > tol) throw RangeError("probabilities do not sum to 1");
            }
}

// Converts a budget quoted in 0-255 pixel units to canonical units.
// L2 budgets are rescaled by sqrt(n_pixels/n_ref) so the per-pixel RMS
// magnitude matches the reference resolution.
inline NormBudget budget_from_paper_units(NormP p, double epsilon_255, int64_t n_pixels, int64_t n_ref) {
    if (epsilon_255 <= 0.0) throw ValueError("epsilon must be positive");
    if (n_pixels <= 0 || n_ref <= 0) throw ValueError("pixel counts must be positive");
    double eps = epsilon_255 / 255.0;
    if (p == NormP::L2) eps *= std::sqrt(static_cast<double>(n_pixels) / static_cast<double>(n_ref));
    return NormBudget{p, eps};
}

}  // namespace advgen
