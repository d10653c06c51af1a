#pragma once

#include "advgen/core.hpp"
#include "advgen/tensor.hpp"

namespace advgen {

constexpr double kZeroNormGuard = 1e-12;

// Per-sample norm projection: raw[i] * min(1, eps / ||raw[i]||_p).
// Zero-norm samples pass through unchanged.
inline Perturbation scale_to_budget(const Tensor& raw, const NormBudget& budget) {
    Perturbation out{raw, budget};
    for (int bi = 0; bi < raw.b; ++bi) {
        double norm = sample_norm(raw, bi, budget.p);
        if (norm < kZeroNormGuard) continue;
        double factor = std::min(1.0, budget.epsilon / norm);
        if (factor < 1.0) {
            float* p = out.data.sample(bi);
            for (size_t j = 0; j < raw.sample_size(); ++j)
                p[j] = static_cast<float>(p[j] * factor);
        }
    }
    return out;
}

// Gradient of scale_to_budget with respect to `raw`, given the upstream
// gradient at its output. Inside the budget the map is the identity; on the
// scaled branch r -> eps * r / ||r||_p:
//   L2:   g - r (r . g) / ||r||^2, all times eps/||r||
//   Linf: g everywhere except the max-magnitude entry, which absorbs
//         -sign(r_m) * sum_j g_j r_j / ||r||, times eps/||r||
inline Tensor scale_to_budget_backward(const Tensor& raw, const NormBudget& budget, const Tensor& gy) {
    Tensor gx = gy;
    for (int bi = 0; bi < raw.b; ++bi) {
        double norm = sample_norm(raw, bi, budget.p);
        if (norm < kZeroNormGuard || norm <= budget.epsilon) continue;
        const float* r = raw.sample(bi);
        const float* g = gy.sample(bi);
        float* o = gx.sample(bi);
        const size_t n = raw.sample_size();
        const double s = budget.epsilon / norm;
        if (budget.p == NormP::L2) {
            double dot = 0;
            for (size_t j = 0; j < n; ++j) dot += static_cast<double>(r[j]) * g[j];
            for (size_t j = 0; j < n; ++j)
                o[j] = static_cast<float>(s * (g[j] - r[j] * dot / (norm * norm)));
        } else {
            size_t arg = 0;
            for (size_t j = 1; j < n; ++j)
                if (std::fabs(r[j]) > std::fabs(r[arg])) arg = j;
            double dot = 0;
            for (size_t j = 0; j < n; ++j) dot += static_cast<double>(r[j]) * g[j];
            double sign = r[arg] >= 0 ? 1.0 : -1.0;
            for (size_t j = 0; j < n; ++j) o[j] = static_cast<float>(s * g[j]);
            o[arg] = static_cast<float>(s * (g[arg] - sign * dot / norm));
        }
    }
    return gx;
}

inline ImageBatch clip_to_valid(const Tensor& perturbed) {
    ImageBatch out{perturbed};
    for (auto& x : out.data.v) x = std::clamp(x, 0.f, 1.f);
    return out;
}

// Straight-through interior gradient; zero where the input was clamped.
inline Tensor clip_to_valid_backward(const Tensor& pre_clip, const Tensor& gy) {
    Tensor gx = gy;
    for (size_t i = 0; i < gx.size(); ++i)
        if (pre_clip.v[i] < 0.f || pre_clip.v[i] > 1.f) gx.v[i] = 0.f;
    return gx;
}

// x + delta (a b = 1 delta broadcasts over the batch), then clamp to [0,1].
// When `pre_clip` is non-null the unclamped sum is stored for backward.
inline ImageBatch compose_adversarial(const ImageBatch& x, const Perturbation& delta,
                                      Tensor* pre_clip = nullptr) {
    const Tensor& d = delta.data;
    if (d.c != x.data.c || d.h != x.data.h || d.w != x.data.w || (d.b != 1 && d.b != x.data.b))
        throw ShapeError("perturbation " + d.shape_str() + " does not broadcast over " +
                         x.data.shape_str());
    Tensor sum = x.data;
    for (int bi = 0; bi < sum.b; ++bi) {
        const float* dp = d.sample(d.b == 1 ? 0 : bi);
        float* sp = sum.sample(bi);
        for (size_t j = 0; j < sum.sample_size(); ++j) sp[j] += dp[j];
    }
    if (pre_clip) *pre_clip = sum;
    return clip_to_valid(sum);
}

// Gradient of compose_adversarial with respect to delta; sums over the batch
// for a broadcast (universal) delta.
inline Tensor compose_adversarial_backward_delta(const Tensor& pre_clip, int delta_b, const Tensor& gy) {
    Tensor masked = clip_to_valid_backward(pre_clip, gy);
    if (delta_b == masked.b) return masked;
    Tensor gd(1, masked.c, masked.h, masked.w);
    for (int bi = 0; bi < masked.b; ++bi) {
        const float* mp = masked.sample(bi);
        for (size_t j = 0; j < gd.sample_size(); ++j) gd.v[j] += mp[j];
    }
    return gd;
}

}  // namespace advgen
