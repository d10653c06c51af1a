#pragma once

#include <chrono>

#include "advgen/attacks.hpp"
#include "advgen/evaluation.hpp"

namespace advgen {

// Rows = attack artifacts (training victim or joint set), columns =
// evaluation victims; entries are fooling ratios over the split.
inline std::vector<std::vector<double>> transfer_matrix(std::vector<AttackArtifact*>& artifacts,
                                                        const std::vector<const VictimModel*>& victims,
                                                        const Split& split, int batch_size = 64) {
    for (auto* v : victims)
        if (v->in_h != victims.front()->in_h || v->in_w != victims.front()->in_w ||
            v->in_c != victims.front()->in_c)
            throw ShapeError("victims must share input shape");
    std::vector<std::vector<double>> matrix(artifacts.size(),
                                            std::vector<double>(victims.size(), 0.0));
    for (size_t ai = 0; ai < artifacts.size(); ++ai) {
        std::vector<double> acc(victims.size(), 0.0);
        int64_t n = 0;
        for (int begin = 0; begin < split.count(); begin += batch_size) {
            int bn = std::min(batch_size, split.count() - begin);
            ImageBatch clean;
            clean.data = Tensor(bn, split.images.c, split.images.h, split.images.w);
            for (int i = 0; i < bn; ++i)
                std::memcpy(clean.data.sample(i), split.images.sample(begin + i),
                            clean.data.sample_size() * sizeof(float));
            ImageBatch adv = apply_attack(*artifacts[ai], clean);
            for (size_t vi = 0; vi < victims.size(); ++vi)
                acc[vi] += fooling_ratio(*victims[vi], clean, adv) * bn;
            n += bn;
        }
        for (size_t vi = 0; vi < victims.size(); ++vi) matrix[ai][vi] = acc[vi] / n;
    }
    return matrix;
}

struct TimingStats {
    double generator_mean_ms = 0, generator_median_ms = 0;
    double baseline_mean_ms = 0, baseline_median_ms = 0;
    double speedup_median = 0;
    int images = 0;
    int baseline_steps = 0;
};

namespace detail {
inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace detail

// Per-image latency of one generator forward + projection versus a K-step
// iterative baseline on the same images. Warmup repeats are excluded.
inline TimingStats timing_study(AttackArtifact& artifact, const VictimModel& baseline_model,
                                int baseline_steps, const ImageBatch& x, int repeats,
                                int warmup = 1) {
    if (repeats < 3) throw ValueError("timing study needs repeats >= 3");
    if (x.data.b == 0) throw ValueError("empty batch");
    using clock = std::chrono::steady_clock;
    NormBudget budget = artifact.spec.budget;
    if (budget.p != NormP::LInf) budget = NormBudget{NormP::LInf, 8.0 / 255.0};
    const double alpha = budget.epsilon / 4;

    std::vector<double> gen_ms, base_ms;
    const Tensor& gen_input =
        artifact.spec.mode == AttackMode::Universal
            ? make_fixed_pattern(x.data.c, x.data.h, x.data.w, artifact.pattern_seed).data
            : x.data;
    for (int r = 0; r < warmup + repeats; ++r) {
        auto t0 = clock::now();
        Perturbation p = emit_perturbation(artifact.gen, gen_input, artifact.spec.budget);
        auto t1 = clock::now();
        (void)p;
        if (r >= warmup)
            gen_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count() / x.data.b);
    }
    for (int r = 0; r < warmup + repeats; ++r) {
        auto t0 = clock::now();
        ImageBatch adv = baseline_iterative_ll(baseline_model, x, budget, baseline_steps, alpha);
        auto t1 = clock::now();
        (void)adv;
        if (r >= warmup)
            base_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count() / x.data.b);
    }

    TimingStats stats;
    stats.images = x.data.b;
    stats.baseline_steps = baseline_steps;
    for (double v : gen_ms) stats.generator_mean_ms += v / gen_ms.size();
    for (double v : base_ms) stats.baseline_mean_ms += v / base_ms.size();
    stats.generator_median_ms = detail::median(gen_ms);
    stats.baseline_median_ms = detail::median(base_ms);
    stats.speedup_median = stats.baseline_median_ms / std::max(stats.generator_median_ms, 1e-12);
    return stats;
}

}  // namespace advgen
