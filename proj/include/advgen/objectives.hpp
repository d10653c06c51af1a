#pragma once

#include <optional>
#include <vector>

#include "advgen/core.hpp"
#include "advgen/nn.hpp"
#include "advgen/tensor.hpp"

namespace advgen {

enum class LossKind {
    NontargetedCE,     // -log H(k(x_adv), gt)
    LeastLikely,       // +log H(k(x_adv), k_ll(x_clean))
    TargetedCE,        // +log H(k(x_adv), target)
    LogitMarginNontargeted,
    LogitMarginTargeted,
};

struct LossSpec {
    LossKind kind = LossKind::NontargetedCE;
    std::optional<int> target_class;       // classification targets
    std::optional<LabelTensor> target_map; // segmentation targets
    double ce_floor = 1e-12;
    double kappa = 0.0;

    bool targeted() const {
        return kind == LossKind::TargetedCE || kind == LossKind::LogitMarginTargeted;
    }
    void validate() const {
        bool has_target = target_class.has_value() || target_map.has_value();
        if (targeted() && !has_target) throw ValueError("targeted loss requires a target");
        if (!targeted() && has_target) throw ValueError("non-targeted loss forbids a target");
    }
};

namespace detail {
constexpr double kProbFloor = 1e-30;  // keeps -ln p finite; far below any ce_floor of interest

inline void check_labels(const Tensor& probs, const LabelTensor& labels) {
    if (labels.b != probs.b || labels.h != probs.h || labels.w != probs.w)
        throw ShapeError("label shape does not match prediction shape");
    for (int32_t l : labels.v)
        if (l < 0 || l >= probs.c) throw RangeError("class index " + std::to_string(l) + " out of range");
}
}  // namespace detail

// Per-sample cross-entropy: -ln p[label] for classification, the mean of
// per-pixel -ln p over the map for segmentation. Natural log.
inline std::vector<double> cross_entropy(const PredictionDistribution& dist, const LabelTensor& labels) {
    const Tensor& p = dist.probs;
    detail::check_labels(p, labels);
    std::vector<double> out(p.b, 0.0);
    const double npix = static_cast<double>(p.h) * p.w;
    for (int bi = 0; bi < p.b; ++bi) {
        double acc = 0.0;
        for (int y = 0; y < p.h; ++y)
            for (int x = 0; x < p.w; ++x)
                acc += -std::log(std::max(static_cast<double>(p.at(bi, labels.at(bi, y, x), y, x)),
                                          detail::kProbFloor));
        out[bi] = acc / npix;
    }
    return out;
}

inline LabelTensor least_likely_class(const PredictionDistribution& clean) {
    const Tensor& p = clean.probs;
    LabelTensor out(p.b, p.h, p.w);
    for (int bi = 0; bi < p.b; ++bi)
        for (int y = 0; y < p.h; ++y)
            for (int x = 0; x < p.w; ++x) {
                int arg = 0;
                for (int c = 1; c < p.c; ++c)
                    if (p.at(bi, c, y, x) < p.at(bi, arg, y, x)) arg = c;  // lowest-index tie-break
                out.at(bi, y, x) = arg;
            }
    return out;
}

inline double loss_nontargeted_ce(const PredictionDistribution& probs, const LabelTensor& gt,
                                  double floor = 1e-12) {
    auto h = cross_entropy(probs, gt);
    double acc = 0.0;
    for (double hi : h) acc += -std::log(std::max(hi, floor));
    return acc / static_cast<double>(h.size());
}

inline double loss_least_likely(const PredictionDistribution& probs_pert, const LabelTensor& k_ll,
                                double floor = 1e-12) {
    auto h = cross_entropy(probs_pert, k_ll);
    double acc = 0.0;
    for (double hi : h) acc += std::log(std::max(hi, floor));
    return acc / static_cast<double>(h.size());
}

inline double loss_targeted(const PredictionDistribution& probs_pert, const LabelTensor& target,
                            double floor = 1e-12) {
    return loss_least_likely(probs_pert, target, floor);
}

// Carlini-Wagner style margin on raw logits; classification only.
// targeted:     mean max(max_{i != t} z_i - z_t, -kappa)
// non-targeted: mean max(z_gt - max_{i != gt} z_i, -kappa)
inline double loss_logit_margin(const Tensor& logits, const LabelTensor& reference, bool targeted,
                                double kappa = 0.0) {
    if (logits.h != 1 || logits.w != 1) throw ShapeError("logit-margin loss expects (B,C) logits");
    detail::check_labels(logits, reference);
    double acc = 0.0;
    for (int bi = 0; bi < logits.b; ++bi) {
        int ref = reference.at(bi, 0, 0);
        double zref = logits.at(bi, ref, 0, 0);
        double zbest = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < logits.c; ++c)
            if (c != ref) zbest = std::max(zbest, static_cast<double>(logits.at(bi, c, 0, 0)));
        double margin = targeted ? (zbest - zref) : (zref - zbest);
        acc += std::max(margin, -kappa);
    }
    return acc / logits.b;
}

inline double loss_multi_fool(const std::vector<double>& losses, const std::vector<double>& lambdas) {
    if (losses.empty()) throw ValueError("multi-fool loss requires at least one term");
    if (losses.size() != lambdas.size()) throw ValueError("loss/weight length mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < losses.size(); ++i) acc += lambdas[i] * losses[i];
    return acc;
}

struct LossResult {
    double value = 0.0;
    Tensor dlogits;
};

// Loss value plus its analytic gradient with respect to the victim's logits.
// `reference` is the ground truth for NontargetedCE / LogitMarginNontargeted,
// the frozen least-likely map for LeastLikely, and the target otherwise.
inline LossResult eval_loss(const LossSpec& spec, const Tensor& logits, const LabelTensor& reference) {
    LossResult res;
    res.dlogits = Tensor(logits.b, logits.c, logits.h, logits.w);

    if (spec.kind == LossKind::LogitMarginNontargeted || spec.kind == LossKind::LogitMarginTargeted) {
        bool targeted = spec.kind == LossKind::LogitMarginTargeted;
        res.value = loss_logit_margin(logits, reference, targeted, spec.kappa);
        for (int bi = 0; bi < logits.b; ++bi) {
            int ref = reference.at(bi, 0, 0);
            int best = -1;
            for (int c = 0; c < logits.c; ++c)
                if (c != ref && (best < 0 || logits.at(bi, c, 0, 0) > logits.at(bi, best, 0, 0)))
                    best = c;
            double margin = targeted ? logits.at(bi, best, 0, 0) - logits.at(bi, ref, 0, 0)
                                     : logits.at(bi, ref, 0, 0) - logits.at(bi, best, 0, 0);
            if (margin <= -spec.kappa) continue;  // clamped branch, zero gradient
            float sgn = targeted ? 1.f : -1.f;
            res.dlogits.at(bi, best, 0, 0) = sgn / logits.b;
            res.dlogits.at(bi, ref, 0, 0) = -sgn / logits.b;
        }
        return res;
    }

    PredictionDistribution dist{softmax_channels(logits)};
    auto h = cross_entropy(dist, reference);
    const double sign = spec.kind == LossKind::NontargetedCE ? -1.0 : 1.0;
    const double npix = static_cast<double>(logits.h) * logits.w;
    double acc = 0.0;
    for (int bi = 0; bi < logits.b; ++bi) {
        acc += sign * std::log(std::max(h[bi], spec.ce_floor));
        if (h[bi] <= spec.ce_floor) continue;  // floored branch, zero gradient
        // d loss / dz = sign * (1/H) * (softmax - onehot) / npix, batch-averaged
        const double coef = sign / (h[bi] * npix * logits.b);
        for (int y = 0; y < logits.h; ++y)
            for (int x = 0; x < logits.w; ++x) {
                int label = reference.at(bi, y, x);
                for (int c = 0; c < logits.c; ++c) {
                    double p = dist.probs.at(bi, c, y, x);
                    res.dlogits.at(bi, c, y, x) +=
                        static_cast<float>(coef * (p - (c == label ? 1.0 : 0.0)));
                }
            }
    }
    res.value = acc / logits.b;
    return res;
}

}  // namespace advgen
