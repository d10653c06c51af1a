#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "advgen/core.hpp"
#include "advgen/victims.hpp"

namespace advgen {

struct EvalReport {
    std::map<std::string, double> scalars;
    std::map<std::string, int64_t> counts;
    std::map<std::string, std::string> provenance;
};

inline double fooling_ratio_preds(const LabelTensor& clean, const LabelTensor& adv) {
    if (clean.b == 0) throw ValueError("empty batch");
    int64_t changed = 0;
    for (int i = 0; i < clean.b; ++i) changed += clean.at(i, 0, 0) != adv.at(i, 0, 0);
    return static_cast<double>(changed) / clean.b;
}

// Fraction of samples whose argmax prediction changes between clean and
// adversarial inputs. Segmentation models compare per pixel.
inline double fooling_ratio(const VictimModel& model, const ImageBatch& x_clean,
                            const ImageBatch& x_adv) {
    if (x_clean.data.b != x_adv.data.b) throw ShapeError("batch size mismatch");
    if (x_clean.data.b == 0) throw ValueError("empty batch");
    LabelTensor pc = predict(model, x_clean);
    LabelTensor pa = predict(model, x_adv);
    int64_t changed = 0, total = 0;
    for (int i = 0; i < pc.b; ++i)
        for (int y = 0; y < pc.h; ++y)
            for (int x = 0; x < pc.w; ++x) {
                changed += pc.at(i, y, x) != pa.at(i, y, x);
                ++total;
            }
    return static_cast<double>(changed) / total;
}

inline double accuracy(const VictimModel& model, const ImageBatch& x, const LabelTensor& labels) {
    if (x.data.b == 0) throw ValueError("empty batch");
    LabelTensor pred = predict(model, x);
    int64_t correct = 0, total = 0;
    for (int i = 0; i < pred.b; ++i)
        for (int y = 0; y < pred.h; ++y)
            for (int xx = 0; xx < pred.w; ++xx) {
                correct += pred.at(i, y, xx) == labels.at(i, y, xx);
                ++total;
            }
    return static_cast<double>(correct) / total;
}

// Classification: fraction predicted exactly the target class. Segmentation:
// mean per-pixel agreement with the target map (b = 1 broadcasts).
inline double target_success(const VictimModel& model, const ImageBatch& x_adv,
                             const LabelTensor& target) {
    LabelTensor pred = predict(model, x_adv);
    if (target.h != pred.h || target.w != pred.w || (target.b != 1 && target.b != pred.b))
        throw ShapeError("target shape mismatch");
    int64_t match = 0, total = 0;
    for (int i = 0; i < pred.b; ++i) {
        int ti = target.b == 1 ? 0 : i;
        for (int y = 0; y < pred.h; ++y)
            for (int xx = 0; xx < pred.w; ++xx) {
                match += pred.at(i, y, xx) == target.at(ti, y, xx);
                ++total;
            }
    }
    return static_cast<double>(match) / total;
}

// Mean over classes present in pred or gt of |intersection| / |union|;
// classes absent from both are skipped.
inline double mean_iou(const LabelTensor& pred, const LabelTensor& gt, int num_classes) {
    if (pred.size() == 0) throw ValueError("empty label maps");
    if (pred.b != gt.b || pred.h != gt.h || pred.w != gt.w) throw ShapeError("label map shape mismatch");
    std::vector<int64_t> inter(num_classes, 0), uni(num_classes, 0);
    for (size_t i = 0; i < pred.size(); ++i) {
        int p = pred.v[i], g = gt.v[i];
        if (p == g) {
            ++inter[p];
            ++uni[p];
        } else {
            ++uni[p];
            ++uni[g];
        }
    }
    double acc = 0.0;
    int present = 0;
    for (int c = 0; c < num_classes; ++c)
        if (uni[c] > 0) {
            acc += static_cast<double>(inter[c]) / uni[c];
            ++present;
        }
    return present ? acc / present : 0.0;
}

// Separable Gaussian filter, kernel radius ceil(3 sigma), normalized to sum
// 1, reflect padding. sigma = 0 is the identity.
inline ImageBatch gaussian_blur(const ImageBatch& x, double sigma) {
    if (sigma < 0) throw ValueError("negative sigma");
    if (sigma == 0) return x;
    const int radius = static_cast<int>(std::ceil(3 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += kernel[i + radius];
    }
    for (auto& k : kernel) k /= sum;

    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - i - 1;
        }
        return i;
    };

    const Tensor& in = x.data;
    Tensor tmp(in.b, in.c, in.h, in.w), out(in.b, in.c, in.h, in.w);
    for (int bi = 0; bi < in.b; ++bi)
        for (int c = 0; c < in.c; ++c) {
            for (int y = 0; y < in.h; ++y)
                for (int xx = 0; xx < in.w; ++xx) {
                    double acc = 0;
                    for (int k = -radius; k <= radius; ++k)
                        acc += kernel[k + radius] * in.at(bi, c, y, reflect(xx + k, in.w));
                    tmp.at(bi, c, y, xx) = static_cast<float>(acc);
                }
            for (int y = 0; y < in.h; ++y)
                for (int xx = 0; xx < in.w; ++xx) {
                    double acc = 0;
                    for (int k = -radius; k <= radius; ++k)
                        acc += kernel[k + radius] * tmp.at(bi, c, reflect(y + k, in.h), xx);
                    out.at(bi, c, y, xx) = static_cast<float>(acc);
                }
        }
    return ImageBatch{std::move(out)};
}

// Over samples correctly classified clean AND misclassified adversarial, the
// fraction recovered to correct after blurring the adversarial image.
// Returns nullopt when no sample qualifies.
inline std::optional<double> destruction_rate(const VictimModel& model, const ImageBatch& x_clean,
                                              const LabelTensor& labels, const ImageBatch& x_adv,
                                              double sigma) {
    LabelTensor pc = predict(model, x_clean);
    LabelTensor pa = predict(model, x_adv);
    LabelTensor pb = predict(model, gaussian_blur(x_adv, sigma));
    int64_t qualifying = 0, recovered = 0;
    for (int i = 0; i < pc.b; ++i) {
        int32_t gt = labels.at(i, 0, 0);
        if (pc.at(i, 0, 0) == gt && pa.at(i, 0, 0) != gt) {
            ++qualifying;
            recovered += pb.at(i, 0, 0) == gt;
        }
    }
    if (qualifying == 0) return std::nullopt;
    return static_cast<double>(recovered) / qualifying;
}

}  // namespace advgen
