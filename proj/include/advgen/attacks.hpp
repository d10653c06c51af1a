#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "advgen/checkpoint.hpp"
#include "advgen/data.hpp"
#include "advgen/evaluation.hpp"
#include "advgen/generator.hpp"
#include "advgen/objectives.hpp"
#include "advgen/projection.hpp"
#include "advgen/victims.hpp"

namespace advgen {

enum class AttackMode { Universal, ImageDependent };

struct VictimRef {
    std::string id;
    double lambda = 1.0;
};

struct AttackSpec {
    AttackMode mode = AttackMode::ImageDependent;
    LossSpec loss;
    NormBudget budget;
    std::vector<VictimRef> victims;
    GeneratorConfig generator;
    AdamConfig optimizer;  // lr 2e-4, betas (0.5, 0.999)
    int epochs = 1;
    int batch_size = 32;
    int max_steps = 0;  // 0 = no cap; used by overfit sanity runs
    uint64_t seed = 0;

    void validate() const {
        if (victims.empty()) throw ValueError("attack needs at least one victim");
        loss.validate();
        if (budget.epsilon <= 0) throw ValueError("epsilon must be positive");
    }
};

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
    double val_metric = 0.0;  // fooling ratio, or target success for targeted losses
};

struct AttackArtifact {
    AttackSpec spec;
    GeneratorHandle gen;
    std::optional<Tensor> universal;  // projected (1,C,H,W)
    uint64_t pattern_seed = 0;
    std::vector<EpochStats> history;
};

namespace detail {

// Reference labels handed to the loss for one batch: ground truth for
// non-targeted CE/margin, the frozen least-likely map for Eq. 2, the target
// broadcast over the batch for targeted losses.
inline LabelTensor loss_reference(const LossSpec& loss, const VictimModel& victim,
                                  const ImageBatch& clean, const LabelTensor& gt) {
    switch (loss.kind) {
        case LossKind::NontargetedCE:
        case LossKind::LogitMarginNontargeted:
            return gt;
        case LossKind::LeastLikely:
            return least_likely_class(victim_forward(victim, clean).probs);
        case LossKind::TargetedCE:
        case LossKind::LogitMarginTargeted: {
            if (loss.target_map) {
                LabelTensor t(clean.data.b, loss.target_map->h, loss.target_map->w);
                for (int i = 0; i < t.b; ++i)
                    std::memcpy(&t.v[i * t.sample_size()], loss.target_map->v.data(),
                                t.sample_size() * sizeof(int32_t));
                return t;
            }
            LabelTensor t(clean.data.b, 1, 1);
            for (auto& v : t.v) v = *loss.target_class;
            return t;
        }
    }
    throw ValueError("unreachable loss kind");
}

inline LabelTensor broadcast_target(const LossSpec& loss, int batch, int h, int w) {
    if (loss.target_map) {
        LabelTensor t(batch, loss.target_map->h, loss.target_map->w);
        for (int i = 0; i < batch; ++i)
            std::memcpy(&t.v[i * t.sample_size()], loss.target_map->v.data(),
                        t.sample_size() * sizeof(int32_t));
        return t;
    }
    LabelTensor t(batch, 1, 1);
    for (auto& v : t.v) v = *loss.target_class;
    return t;
}

}  // namespace detail

// One projected generator pass, no victim involved.
inline Perturbation emit_perturbation(GeneratorHandle& gen, const Tensor& input,
                                      const NormBudget& budget) {
    return scale_to_budget(generator_forward(gen, input, false), budget);
}

inline ImageBatch apply_universal(const Perturbation& u, const ImageBatch& x) {
    if (u.data.b != 1) throw ShapeError("universal perturbation must have batch 1");
    return compose_adversarial(x, u);
}

inline ImageBatch apply_generator(AttackArtifact& artifact, const ImageBatch& x) {
    if (artifact.spec.mode != AttackMode::ImageDependent)
        throw ValueError("apply_generator requires an image-dependent artifact");
    Perturbation delta = emit_perturbation(artifact.gen, x.data, artifact.spec.budget);
    return compose_adversarial(x, delta);
}

inline ImageBatch apply_attack(AttackArtifact& artifact, const ImageBatch& x) {
    if (artifact.spec.mode == AttackMode::Universal) {
        Perturbation u{*artifact.universal, artifact.spec.budget};
        return apply_universal(u, x);
    }
    return apply_generator(artifact, x);
}

// Validation metric on a split: target success for targeted losses, fooling
// ratio otherwise.
inline double validation_metric(AttackArtifact& artifact, const std::vector<const VictimModel*>& victims,
                                const Split& split, int batch_size = 64) {
    double acc = 0.0;
    int64_t n = 0;
    const VictimModel& victim = *victims.front();
    for (int begin = 0; begin < split.count(); begin += batch_size) {
        int bn = std::min(batch_size, split.count() - begin);
        ImageBatch clean;
        clean.data = Tensor(bn, split.images.c, split.images.h, split.images.w);
        for (int i = 0; i < bn; ++i)
            std::memcpy(clean.data.sample(i), split.images.sample(begin + i),
                        clean.data.sample_size() * sizeof(float));
        ImageBatch adv = apply_attack(artifact, clean);
        double m = artifact.spec.loss.targeted()
                       ? target_success(victim, adv,
                                        detail::broadcast_target(artifact.spec.loss, 1, 0, 0))
                       : fooling_ratio(victim, clean, adv);
        acc += m * bn;
        n += bn;
    }
    return n ? acc / n : 0.0;
}

// Shared training loop behind the three attack entry points. Victims stay in
// inference mode throughout and only generator parameters are updated.
inline AttackArtifact train_attack(const AttackSpec& spec,
                                   const std::vector<const VictimModel*>& victims,
                                   const DatasetHandle& dataset, std::ostream* log = nullptr) {
    spec.validate();
    if (victims.size() != spec.victims.size()) throw ValueError("victim list mismatch");
    for (auto* v : victims) {
        if (!v->frozen) throw ValueError("victims must be frozen during attack training");
        if (v->in_c != dataset.channels || v->in_h != dataset.height || v->in_w != dataset.width)
            throw ShapeError("victim/dataset shape mismatch");
    }

    AttackArtifact artifact;
    artifact.spec = spec;
    artifact.gen = build_generator(spec.generator);
    artifact.pattern_seed = sub_seed(spec.seed, "pattern");

    FixedPattern pattern;
    if (spec.mode == AttackMode::Universal)
        pattern = make_fixed_pattern(dataset.channels, dataset.height, dataset.width,
                                     artifact.pattern_seed);

    auto params = artifact.gen.params();
    Adam opt(spec.optimizer);

    double best_metric = -1.0;
    std::vector<Tensor> best_params;
    std::vector<Tensor> best_state;
    int64_t steps_done = 0;
    bool stop = false;

    for (int epoch = 0; epoch < spec.epochs && !stop; ++epoch) {
        BatchIterator it(dataset, "train", spec.batch_size,
                         sub_seed(spec.seed, "shuffle" + std::to_string(epoch)));
        ImageBatch clean;
        LabelTensor gt;
        double epoch_loss = 0;
        int n_batches = 0;
        while (it.next(clean, gt)) {
            const Tensor& gen_input = spec.mode == AttackMode::Universal ? pattern.data : clean.data;
            Tensor raw = artifact.gen.net->forward(gen_input, true);
            Perturbation pert = scale_to_budget(raw, spec.budget);
            Tensor pre_clip;
            ImageBatch adv = compose_adversarial(clean, pert, &pre_clip);

            double total = 0;
            Tensor dadv(adv.data.b, adv.data.c, adv.data.h, adv.data.w);
            for (size_t vi = 0; vi < victims.size(); ++vi) {
                const VictimModel& victim = *victims[vi];
                const double lambda = spec.victims[vi].lambda;
                LabelTensor ref = detail::loss_reference(spec.loss, victim, clean, gt);
                Tensor logits = victim.net->forward(adv.data, false);
                LossResult loss = eval_loss(spec.loss, logits, ref);
                total += lambda * loss.value;
                if (lambda != 0.0) {
                    Tensor dx = victim.net->backward(loss.dlogits);
                    for (size_t j = 0; j < dadv.size(); ++j)
                        dadv.v[j] += static_cast<float>(lambda * dx.v[j]);
                }
            }

            Tensor ddelta = compose_adversarial_backward_delta(pre_clip, pert.data.b, dadv);
            Tensor draw = scale_to_budget_backward(raw, spec.budget, ddelta);
            artifact.gen.net->zero_grad();
            artifact.gen.net->backward(draw);
            opt.step(params);
            ++artifact.gen.step_count;
            epoch_loss += total;
            ++n_batches;
            if (spec.max_steps > 0 && ++steps_done >= spec.max_steps) {
                stop = true;
                break;
            }
        }

        if (spec.mode == AttackMode::Universal)
            artifact.universal = emit_perturbation(artifact.gen, pattern.data, spec.budget).data;
        const std::string val_split = dataset.splits.count("val") ? "val" : "train";
        double metric = validation_metric(artifact, victims, dataset.split(val_split));
        artifact.history.push_back({epoch, epoch_loss / std::max(1, n_batches), metric});
        if (log)
            *log << "epoch " << epoch << " loss " << artifact.history.back().mean_loss << " val "
                 << metric << "\n";
        if (metric > best_metric) {
            best_metric = metric;
            best_params.clear();
            for (auto& p : params) best_params.push_back(*p.value);
            best_state.clear();
            for (auto& [name, t] : artifact.gen.state()) best_state.push_back(*t);
        }
    }

    // retain the best-epoch generator
    if (!best_params.empty()) {
        size_t i = 0;
        for (auto& p : params) *p.value = best_params[i++];
        i = 0;
        for (auto& [name, t] : artifact.gen.state()) *t = best_state[i++];
    }
    if (spec.mode == AttackMode::Universal)
        artifact.universal = emit_perturbation(artifact.gen, pattern.data, spec.budget).data;
    return artifact;
}

inline AttackArtifact train_universal(const AttackSpec& spec,
                                      const std::vector<const VictimModel*>& victims,
                                      const DatasetHandle& dataset, std::ostream* log = nullptr) {
    if (spec.mode != AttackMode::Universal) throw ValueError("spec.mode must be universal");
    return train_attack(spec, victims, dataset, log);
}

inline AttackArtifact train_image_dependent(const AttackSpec& spec,
                                            const std::vector<const VictimModel*>& victims,
                                            const DatasetHandle& dataset, std::ostream* log = nullptr) {
    if (spec.mode != AttackMode::ImageDependent) throw ValueError("spec.mode must be image-dependent");
    return train_attack(spec, victims, dataset, log);
}

inline AttackArtifact train_multi_fool(const AttackSpec& spec,
                                       const std::vector<const VictimModel*>& victims,
                                       const DatasetHandle& dataset, std::ostream* log = nullptr) {
    if (victims.size() < 2) throw ValueError("multi-fool training needs at least two victims");
    return train_attack(spec, victims, dataset, log);
}

// ---------------------------------------------------------------------------
// Iterative baselines.
// ---------------------------------------------------------------------------

// Single signed-gradient step: clip(x + eps * sign(grad_x CE(k(x), gt))).
inline ImageBatch baseline_fgsm(const VictimModel& model, const ImageBatch& x, const LabelTensor& gt,
                                const NormBudget& budget) {
    if (budget.p != NormP::LInf) throw ValueError("FGSM requires an L-inf budget");
    Tensor logits = model.net->forward(x.data, false);
    LossResult loss = softmax_ce_loss(logits, gt);
    Tensor grad = model.net->backward(loss.dlogits);
    Tensor adv = x.data;
    const float eps = static_cast<float>(budget.epsilon);
    for (size_t i = 0; i < adv.size(); ++i)
        adv.v[i] += grad.v[i] > 0 ? eps : (grad.v[i] < 0 ? -eps : 0.f);
    return clip_to_valid(adv);
}

// Iterative least-likely class method: repeated signed steps toward the
// clean image's least-likely class, re-projected into the eps-ball of x.
inline ImageBatch baseline_iterative_ll(const VictimModel& model, const ImageBatch& x,
                                        const NormBudget& budget, int steps, double step_size) {
    if (budget.p != NormP::LInf) throw ValueError("iterative baseline requires an L-inf budget");
    if (steps < 1) throw ValueError("steps must be >= 1");
    LabelTensor k_ll = least_likely_class(victim_forward(model, x).probs);
    Tensor adv = x.data;
    const float eps = static_cast<float>(budget.epsilon);
    const float alpha = static_cast<float>(step_size);
    for (int s = 0; s < steps; ++s) {
        Tensor logits = model.net->forward(adv, false);
        LossResult loss = softmax_ce_loss(logits, k_ll);
        Tensor grad = model.net->backward(loss.dlogits);
        for (size_t i = 0; i < adv.size(); ++i) {
            float step = grad.v[i] > 0 ? -alpha : (grad.v[i] < 0 ? alpha : 0.f);
            float v = std::clamp(adv.v[i] + step, 0.f, 1.f);
            adv.v[i] = std::clamp(v, x.data.v[i] - eps, x.data.v[i] + eps);
        }
    }
    return ImageBatch{std::move(adv)};
}

// ---------------------------------------------------------------------------
// Artifact persistence: generator checkpoint + spec + realized universal
// perturbation + training history.
// ---------------------------------------------------------------------------

inline std::string loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::NontargetedCE: return "nontargeted_ce";
        case LossKind::LeastLikely: return "least_likely";
        case LossKind::TargetedCE: return "targeted_ce";
        case LossKind::LogitMarginNontargeted: return "logit_margin_nontargeted";
        case LossKind::LogitMarginTargeted: return "logit_margin_targeted";
    }
    throw ValueError("unknown loss kind");
}

inline LossKind loss_kind_from_name(const std::string& s) {
    if (s == "nontargeted_ce") return LossKind::NontargetedCE;
    if (s == "least_likely") return LossKind::LeastLikely;
    if (s == "targeted_ce") return LossKind::TargetedCE;
    if (s == "logit_margin_nontargeted") return LossKind::LogitMarginNontargeted;
    if (s == "logit_margin_targeted") return LossKind::LogitMarginTargeted;
    throw ValueError("unknown loss kind: " + s);
}

inline void save_attack_artifact(const std::string& path, AttackArtifact& artifact) {
    Checkpoint ckpt = generator_to_checkpoint(artifact.gen);
    ckpt.meta["kind"] = "attack_artifact";
    ckpt.meta["mode"] = artifact.spec.mode == AttackMode::Universal ? "universal" : "image_dependent";
    ckpt.meta["loss"] = loss_kind_name(artifact.spec.loss.kind);
    if (artifact.spec.loss.target_class)
        ckpt.meta["target_class"] = std::to_string(*artifact.spec.loss.target_class);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", artifact.spec.budget.epsilon);
    ckpt.meta["epsilon"] = buf;
    ckpt.meta["norm"] = artifact.spec.budget.p == NormP::L2 ? "2" : "inf";
    ckpt.meta["pattern_seed"] = std::to_string(artifact.pattern_seed);
    ckpt.meta["attack_seed"] = std::to_string(artifact.spec.seed);
    {
        std::ostringstream hist;
        for (auto& h : artifact.history)
            hist << h.epoch << "," << h.mean_loss << "," << h.val_metric << ";";
        ckpt.meta["history"] = hist.str();
    }
    std::ostringstream vs;
    for (auto& v : artifact.spec.victims) vs << v.id << "," << v.lambda << ";";
    ckpt.meta["victims"] = vs.str();
    if (artifact.universal) ckpt.tensors.emplace_back("universal", *artifact.universal);
    if (artifact.spec.loss.target_map) {
        const LabelTensor& m = *artifact.spec.loss.target_map;
        Tensor t(m.b, 1, m.h, m.w);
        for (size_t i = 0; i < m.size(); ++i) t.v[i] = static_cast<float>(m.v[i]);
        ckpt.tensors.emplace_back("target_map", std::move(t));
    }
    save_checkpoint(path, ckpt);
}

inline AttackArtifact load_attack_artifact(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    AttackArtifact artifact;
    artifact.gen = generator_from_checkpoint(ckpt);
    artifact.spec.generator = artifact.gen.config;
    artifact.spec.mode =
        ckpt.meta.at("mode") == "universal" ? AttackMode::Universal : AttackMode::ImageDependent;
    artifact.spec.loss.kind = loss_kind_from_name(ckpt.meta.at("loss"));
    if (ckpt.meta.count("target_class"))
        artifact.spec.loss.target_class = std::stoi(ckpt.meta.at("target_class"));
    artifact.spec.budget.epsilon = std::stod(ckpt.meta.at("epsilon"));
    artifact.spec.budget.p = ckpt.meta.at("norm") == "2" ? NormP::L2 : NormP::LInf;
    artifact.pattern_seed = std::stoull(ckpt.meta.at("pattern_seed"));
    artifact.spec.seed = std::stoull(ckpt.meta.at("attack_seed"));
    if (ckpt.meta.count("victims")) {
        std::istringstream vs(ckpt.meta.at("victims"));
        std::string entry;
        while (std::getline(vs, entry, ';')) {
            if (entry.empty()) continue;
            auto comma = entry.find(',');
            artifact.spec.victims.push_back({entry.substr(0, comma), std::stod(entry.substr(comma + 1))});
        }
    }
    if (ckpt.meta.count("history")) {
        std::istringstream hs(ckpt.meta.at("history"));
        std::string entry;
        while (std::getline(hs, entry, ';')) {
            if (entry.empty()) continue;
            std::istringstream es(entry);
            EpochStats st;
            char c;
            es >> st.epoch >> c >> st.mean_loss >> c >> st.val_metric;
            artifact.history.push_back(st);
        }
    }
    if (const Tensor* u = ckpt.find("universal")) artifact.universal = *u;
    if (const Tensor* tm = ckpt.find("target_map")) {
        LabelTensor m(tm->b, tm->h, tm->w);
        for (size_t i = 0; i < m.size(); ++i) m.v[i] = static_cast<int32_t>(std::lround(tm->v[i]));
        artifact.spec.loss.target_map = std::move(m);
    }
    return artifact;
}

}  // namespace advgen
