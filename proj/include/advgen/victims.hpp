#pragma once

#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "advgen/checkpoint.hpp"
#include "advgen/data.hpp"
#include "advgen/nn.hpp"
#include "advgen/objectives.hpp"

namespace advgen {

struct VictimModel {
    std::string id;
    std::string arch;
    Task task = Task::Classification;
    int num_classes = 0;
    int in_c = 3, in_h = 32, in_w = 32;
    double clean_accuracy = 0.0;
    bool frozen = false;
    uint64_t seed = 0;
    std::unique_ptr<Sequential> net;

    std::vector<Param> params() const {
        std::vector<Param> out;
        net->collect_params("net", out);
        return out;
    }
    std::vector<std::pair<std::string, Tensor*>> state() const {
        std::vector<std::pair<std::string, Tensor*>> out;
        net->collect_state("net", out);
        return out;
    }
};

namespace detail {
inline Conv2d* add_conv(Sequential& s, int in_c, int out_c, int k, int stride, std::mt19937_64& rng) {
    Conv2d* conv = s.add<Conv2d>(in_c, out_c, k, stride);
    // He initialization
    std::normal_distribution<float> dist(0.f, std::sqrt(2.f / (in_c * k * k)));
    for (auto& x : conv->weight.v) x = dist(rng);
    return conv;
}
inline void add_conv_bn_relu(Sequential& s, int in_c, int out_c, int k, int stride,
                             std::mt19937_64& rng) {
    add_conv(s, in_c, out_c, k, stride, rng);
    s.add<BatchNorm2d>(out_c);
    s.add<ReLU>();
}
}  // namespace detail

inline std::unique_ptr<Sequential> make_victim_net(const std::string& arch, int num_classes,
                                                   uint64_t seed) {
    auto net = std::make_unique<Sequential>();
    std::mt19937_64 rng(sub_seed(seed, "victim-init:" + arch));
    using detail::add_conv;
    using detail::add_conv_bn_relu;
    if (arch == "cnn_a") {
        add_conv_bn_relu(*net, 3, 16, 3, 1, rng);
        add_conv_bn_relu(*net, 16, 32, 3, 2, rng);
        add_conv_bn_relu(*net, 32, 32, 3, 1, rng);
        add_conv_bn_relu(*net, 32, 64, 3, 2, rng);
        net->add<GlobalAvgPool>();
        add_conv(*net, 64, num_classes, 1, 1, rng);
    } else if (arch == "cnn_b") {
        add_conv_bn_relu(*net, 3, 24, 3, 1, rng);
        add_conv_bn_relu(*net, 24, 24, 3, 1, rng);
        add_conv_bn_relu(*net, 24, 48, 3, 2, rng);
        add_conv_bn_relu(*net, 48, 48, 3, 1, rng);
        add_conv_bn_relu(*net, 48, 96, 3, 2, rng);
        add_conv_bn_relu(*net, 96, 96, 3, 1, rng);
        net->add<GlobalAvgPool>();
        add_conv(*net, 96, num_classes, 1, 1, rng);
    } else if (arch == "cnn_c") {
        add_conv_bn_relu(*net, 3, 32, 5, 1, rng);
        add_conv_bn_relu(*net, 32, 64, 3, 2, rng);
        add_conv_bn_relu(*net, 64, 64, 3, 2, rng);
        net->add<GlobalAvgPool>();
        add_conv(*net, 64, num_classes, 1, 1, rng);
    } else if (arch == "fcn_tiny") {
        add_conv_bn_relu(*net, 3, 16, 3, 1, rng);
        add_conv_bn_relu(*net, 16, 32, 3, 2, rng);
        add_conv_bn_relu(*net, 32, 32, 3, 1, rng);
        add_conv_bn_relu(*net, 32, 32, 3, 2, rng);
        net->add<Upsample2xNearest>();
        add_conv_bn_relu(*net, 32, 16, 3, 1, rng);
        net->add<Upsample2xNearest>();
        add_conv_bn_relu(*net, 16, 16, 3, 1, rng);
        add_conv(*net, 16, num_classes, 1, 1, rng);
    } else {
        throw ValueError("unknown victim arch: " + arch);
    }
    return net;
}

inline Task victim_task_for_arch(const std::string& arch) {
    return arch == "fcn_tiny" ? Task::Segmentation : Task::Classification;
}

struct VictimForward {
    Tensor logits;
    PredictionDistribution probs;
};

inline VictimForward victim_forward(const VictimModel& model, const ImageBatch& x) {
    if (x.data.c != model.in_c || x.data.h != model.in_h || x.data.w != model.in_w)
        throw ShapeError("victim input shape mismatch: " + x.data.shape_str());
    VictimForward out;
    out.logits = model.net->forward(x.data, false);  // inference mode, stored statistics
    out.probs.probs = softmax_channels(out.logits);
    return out;
}

inline LabelTensor argmax_channels(const Tensor& t) {
    LabelTensor out(t.b, t.h, t.w);
    for (int bi = 0; bi < t.b; ++bi)
        for (int y = 0; y < t.h; ++y)
            for (int x = 0; x < t.w; ++x) {
                int arg = 0;
                for (int c = 1; c < t.c; ++c)
                    if (t.at(bi, c, y, x) > t.at(bi, arg, y, x)) arg = c;  // lowest-index tie-break
                out.at(bi, y, x) = arg;
            }
    return out;
}

inline LabelTensor predict(const VictimModel& model, const ImageBatch& x) {
    return argmax_channels(victim_forward(model, x).probs.probs);
}

// Standard softmax cross-entropy for victim pretraining, mean over batch and
// pixels; returns loss value and gradient with respect to logits.
inline LossResult softmax_ce_loss(const Tensor& logits, const LabelTensor& labels) {
    LossResult res;
    Tensor probs = softmax_channels(logits);
    res.dlogits = Tensor(logits.b, logits.c, logits.h, logits.w);
    const double denom = static_cast<double>(logits.b) * logits.h * logits.w;
    double acc = 0.0;
    for (int bi = 0; bi < logits.b; ++bi)
        for (int y = 0; y < logits.h; ++y)
            for (int x = 0; x < logits.w; ++x) {
                int label = labels.at(bi, y, x);
                acc += -std::log(std::max(static_cast<double>(probs.at(bi, label, y, x)), 1e-30));
                for (int c = 0; c < logits.c; ++c)
                    res.dlogits.at(bi, c, y, x) = static_cast<float>(
                        (probs.at(bi, c, y, x) - (c == label ? 1.0 : 0.0)) / denom);
            }
    res.value = acc / denom;
    return res;
}

inline double victim_accuracy(const VictimModel& model, const Split& split, int batch_size = 64) {
    int64_t correct = 0, total = 0;
    for (int begin = 0; begin < split.count(); begin += batch_size) {
        int n = std::min(batch_size, split.count() - begin);
        ImageBatch batch;
        batch.data = Tensor(n, split.images.c, split.images.h, split.images.w);
        for (int i = 0; i < n; ++i)
            std::memcpy(batch.data.sample(i), split.images.sample(begin + i),
                        batch.data.sample_size() * sizeof(float));
        LabelTensor pred = predict(model, batch);
        for (int i = 0; i < n; ++i)
            for (int y = 0; y < pred.h; ++y)
                for (int x = 0; x < pred.w; ++x) {
                    correct += pred.at(i, y, x) == split.labels.at(begin + i, y, x);
                    ++total;
                }
    }
    return total ? static_cast<double>(correct) / total : 0.0;
}

struct VictimTrainConfig {
    int epochs = 4;
    int batch_size = 64;
    double lr = 1e-3;
    double accuracy_floor = 0.60;  // warning threshold, not an error
};

inline VictimModel train_victim(const std::string& arch, const DatasetHandle& dataset,
                                const VictimTrainConfig& cfg, uint64_t seed,
                                std::ostream* log = nullptr) {
    if (dataset.split("train").count() == 0) throw DataError("empty training split");
    VictimModel model;
    model.id = arch + "_s" + std::to_string(seed);
    model.arch = arch;
    model.task = victim_task_for_arch(arch);
    model.num_classes = dataset.num_classes;
    model.in_c = dataset.channels;
    model.in_h = dataset.height;
    model.in_w = dataset.width;
    model.seed = seed;
    model.net = make_victim_net(arch, dataset.num_classes, seed);

    auto params = model.params();
    Adam opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        BatchIterator it(dataset, "train", cfg.batch_size,
                         sub_seed(seed, "shuffle" + std::to_string(epoch)));
        ImageBatch batch;
        LabelTensor labels;
        double epoch_loss = 0;
        int n_batches = 0;
        while (it.next(batch, labels)) {
            model.net->zero_grad();
            Tensor logits = model.net->forward(batch.data, true);
            LossResult loss = softmax_ce_loss(logits, labels);
            model.net->backward(loss.dlogits);
            opt.step(params);
            epoch_loss += loss.value;
            ++n_batches;
        }
        if (log)
            *log << arch << " epoch " << epoch << " loss " << epoch_loss / std::max(1, n_batches)
                 << "\n";
    }
    const std::string eval_split = dataset.splits.count("test") ? "test" : "val";
    model.clean_accuracy = victim_accuracy(model, dataset.split(eval_split));
    if (log && model.clean_accuracy < cfg.accuracy_floor)
        *log << "warning: " << model.id << " clean accuracy " << model.clean_accuracy
             << " below floor " << cfg.accuracy_floor << "\n";
    model.frozen = true;
    return model;
}

// ---------------------------------------------------------------------------
// Registry: a directory of per-victim checkpoints keyed by id.
// ---------------------------------------------------------------------------

inline std::string registry_path(const std::string& dir, const std::string& id) {
    return (std::filesystem::path(dir) / (id + ".ckpt")).string();
}

inline void registry_save(const std::string& dir, const VictimModel& model) {
    std::filesystem::create_directories(dir);
    Checkpoint ckpt;
    ckpt.meta["kind"] = "victim";
    ckpt.meta["id"] = model.id;
    ckpt.meta["arch"] = model.arch;
    ckpt.meta["task"] = model.task == Task::Classification ? "classification" : "segmentation";
    ckpt.meta["num_classes"] = std::to_string(model.num_classes);
    ckpt.meta["in_c"] = std::to_string(model.in_c);
    ckpt.meta["in_h"] = std::to_string(model.in_h);
    ckpt.meta["in_w"] = std::to_string(model.in_w);
    char acc[32];
    std::snprintf(acc, sizeof(acc), "%.17g", model.clean_accuracy);
    ckpt.meta["clean_accuracy"] = acc;
    ckpt.meta["seed"] = std::to_string(model.seed);
    for (auto& p : model.params()) ckpt.tensors.emplace_back(p.name, *p.value);
    for (auto& [name, t] : model.state()) ckpt.tensors.emplace_back("state." + name, *t);
    save_checkpoint(registry_path(dir, model.id), ckpt);
}

inline VictimModel registry_load(const std::string& dir, const std::string& id) {
    Checkpoint ckpt = load_checkpoint(registry_path(dir, id));
    VictimModel model;
    model.id = ckpt.meta.at("id");
    model.arch = ckpt.meta.at("arch");
    model.task = ckpt.meta.at("task") == "segmentation" ? Task::Segmentation : Task::Classification;
    model.num_classes = std::stoi(ckpt.meta.at("num_classes"));
    model.in_c = std::stoi(ckpt.meta.at("in_c"));
    model.in_h = std::stoi(ckpt.meta.at("in_h"));
    model.in_w = std::stoi(ckpt.meta.at("in_w"));
    model.clean_accuracy = std::stod(ckpt.meta.at("clean_accuracy"));
    model.seed = std::stoull(ckpt.meta.at("seed"));
    model.net = make_victim_net(model.arch, model.num_classes, model.seed);
    for (auto& p : model.params()) {
        const Tensor* src = ckpt.find(p.name);
        if (!src || !src->same_shape(*p.value))
            throw CheckpointError("corrupt victim checkpoint: " + p.name);
        *p.value = *src;
    }
    for (auto& [name, t] : model.state()) {
        const Tensor* src = ckpt.find("state." + name);
        if (!src) throw CheckpointError("corrupt victim checkpoint: state " + name);
        *t = *src;
    }
    model.frozen = true;
    return model;
}

// Bitwise snapshot of every victim parameter and statistic, for the
// frozen-victim invariant.
inline std::vector<float> victim_snapshot(const VictimModel& model) {
    std::vector<float> snap;
    for (auto& p : model.params()) snap.insert(snap.end(), p.value->v.begin(), p.value->v.end());
    for (auto& [name, t] : model.state()) snap.insert(snap.end(), t->v.begin(), t->v.end());
    return snap;
}

}  // namespace advgen
