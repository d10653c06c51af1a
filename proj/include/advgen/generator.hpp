#pragma once

#include <memory>
#include <string>
#include <vector>

#include "advgen/checkpoint.hpp"
#include "advgen/nn.hpp"

namespace advgen {

enum class GeneratorArch { UNet, ResNet };

struct GeneratorConfig {
    GeneratorArch arch = GeneratorArch::ResNet;
    int base_filters = 32;
    int depth = 4;  // U-Net encoder levels, or residual-block count
    int in_channels = 3;
    int out_channels = 3;
    uint64_t seed = 0;

    void validate() const {
        if (base_filters < 1 || depth < 1 || in_channels < 1 || out_channels < 1)
            throw ValueError("invalid generator config");
    }
};

struct GeneratorNet {
    virtual ~GeneratorNet() = default;
    virtual Tensor forward(const Tensor& x, bool train) = 0;
    virtual Tensor backward(const Tensor& gy) = 0;
    virtual void collect_params(std::vector<Param>& out) = 0;
    virtual void collect_state(std::vector<std::pair<std::string, Tensor*>>& out) = 0;
    virtual void zero_grad() = 0;
};

// Encoder-decoder with skip connections. Each of `depth` downsampling stages
// halves the spatial size and doubles the filter count; decoder stages mirror
// them and concatenate the matching encoder feature. Linear 1x1 output head.
struct UNetGenerator : GeneratorNet {
    GeneratorConfig cfg;
    Sequential stem, mid, head;
    std::vector<std::unique_ptr<Sequential>> down, up, fuse;
    float skip_scale = 1.f;  // test hook; 0 disconnects the skips

    // caches
    std::vector<Tensor> enc;        // encoder outputs per level (0..depth)
    std::vector<Tensor> skip_grad;  // accumulated skip gradients per level

    explicit UNetGenerator(const GeneratorConfig& c) : cfg(c) {
        std::mt19937_64 rng(sub_seed(cfg.seed, "generator-init"));
        int f = cfg.base_filters;
        add_block(stem, cfg.in_channels, f, 1, rng);
        int cur = f;
        for (int i = 0; i < cfg.depth; ++i) {
            auto d = std::make_unique<Sequential>();
            add_block(*d, cur, cur * 2, 2, rng);
            down.push_back(std::move(d));
            cur *= 2;
        }
        add_block(mid, cur, cur, 1, rng);
        for (int i = cfg.depth - 1; i >= 0; --i) {
            int fi = f << i;  // channels at encoder level i
            auto u = std::make_unique<Sequential>();
            u->add<Upsample2xNearest>();
            add_block(*u, fi * 2, fi, 1, rng);
            up.push_back(std::move(u));
            auto fz = std::make_unique<Sequential>();
            add_block(*fz, fi * 2, fi, 1, rng);
            fuse.push_back(std::move(fz));
        }
        head.add<Conv2d>(f, cfg.out_channels, 1)->init(rng);
    }

    static void add_block(Sequential& seq, int in_c, int out_c, int stride, std::mt19937_64& rng) {
        seq.add<Conv2d>(in_c, out_c, 3, stride)->init(rng);
        seq.add<BatchNorm2d>(out_c);
        seq.add<ReLU>();
    }

    Tensor forward(const Tensor& x, bool train) override {
        if (x.h % (1 << cfg.depth) != 0 || x.w % (1 << cfg.depth) != 0)
            throw ShapeError("input spatial size " + x.shape_str() + " not divisible by 2^depth");
        enc.assign(cfg.depth + 1, Tensor{});
        enc[0] = stem.forward(x, train);
        for (int i = 0; i < cfg.depth; ++i) enc[i + 1] = down[i]->forward(enc[i], train);
        Tensor cur = mid.forward(enc[cfg.depth], train);
        for (int i = cfg.depth - 1, k = 0; i >= 0; --i, ++k) {
            cur = up[k]->forward(cur, train);
            cur = fuse[k]->forward(concat_channels(cur, enc[i], skip_scale), train);
        }
        return head.forward(cur, train);
    }

    Tensor backward(const Tensor& gy) override {
        Tensor cur = head.backward(gy);
        skip_grad.assign(cfg.depth, Tensor{});
        for (int k = cfg.depth - 1, i = 0; k >= 0; --k, ++i) {
            Tensor gcat = fuse[k]->backward(cur);
            auto [ga, gb] = split_channels(gcat, enc[i].c, skip_scale);
            skip_grad[i] = std::move(gb);
            cur = up[k]->backward(ga);
        }
        cur = mid.backward(cur);
        for (int i = cfg.depth - 1; i >= 0; --i) {
            cur = down[i]->backward(cur);
            for (size_t j = 0; j < cur.size(); ++j) cur.v[j] += skip_grad[i].v[j];
        }
        return stem.backward(cur);
    }

    static Tensor concat_channels(const Tensor& a, const Tensor& b, float b_scale) {
        Tensor out(a.b, a.c + b.c, a.h, a.w);
        for (int bi = 0; bi < a.b; ++bi) {
            std::memcpy(out.sample(bi), a.sample(bi), a.sample_size() * sizeof(float));
            float* dst = out.sample(bi) + a.sample_size();
            const float* src = b.sample(bi);
            for (size_t j = 0; j < b.sample_size(); ++j) dst[j] = b_scale * src[j];
        }
        return out;
    }
    static std::pair<Tensor, Tensor> split_channels(const Tensor& g, int b_channels, float b_scale) {
        int a_channels = g.c - b_channels;
        Tensor ga(g.b, a_channels, g.h, g.w), gb(g.b, b_channels, g.h, g.w);
        for (int bi = 0; bi < g.b; ++bi) {
            std::memcpy(ga.sample(bi), g.sample(bi), ga.sample_size() * sizeof(float));
            const float* src = g.sample(bi) + ga.sample_size();
            float* dst = gb.sample(bi);
            for (size_t j = 0; j < gb.sample_size(); ++j) dst[j] = b_scale * src[j];
        }
        return {std::move(ga), std::move(gb)};
    }

    void collect_params(std::vector<Param>& out) override {
        stem.collect_params("stem", out);
        for (size_t i = 0; i < down.size(); ++i) down[i]->collect_params("down" + std::to_string(i), out);
        mid.collect_params("mid", out);
        for (size_t i = 0; i < up.size(); ++i) {
            up[i]->collect_params("up" + std::to_string(i), out);
            fuse[i]->collect_params("fuse" + std::to_string(i), out);
        }
        head.collect_params("head", out);
    }
    void collect_state(std::vector<std::pair<std::string, Tensor*>>& out) override {
        stem.collect_state("stem", out);
        for (size_t i = 0; i < down.size(); ++i) down[i]->collect_state("down" + std::to_string(i), out);
        mid.collect_state("mid", out);
        for (size_t i = 0; i < up.size(); ++i) {
            up[i]->collect_state("up" + std::to_string(i), out);
            fuse[i]->collect_state("fuse" + std::to_string(i), out);
        }
        head.collect_state("head", out);
    }
    void zero_grad() override {
        stem.zero_grad();
        mid.zero_grad();
        head.zero_grad();
        for (auto& l : down) l->zero_grad();
        for (auto& l : up) l->zero_grad();
        for (auto& l : fuse) l->zero_grad();
    }
};

// Two stride-2 downsampling convolutions, `depth` residual blocks at the
// bottleneck width, two upsampling stages, linear output convolution.
// Instance normalization throughout.
struct ResNetGenerator : GeneratorNet {
    GeneratorConfig cfg;
    Sequential stem;  // stem + the two downsampling stages
    struct ResBlock {
        Sequential body;
    };
    std::vector<std::unique_ptr<ResBlock>> blocks;
    Sequential tail;  // upsampling stages + output head

    explicit ResNetGenerator(const GeneratorConfig& c) : cfg(c) {
        std::mt19937_64 rng(sub_seed(cfg.seed, "generator-init"));
        int f = cfg.base_filters;
        add_block(stem, cfg.in_channels, f, 1, rng);
        add_block(stem, f, 2 * f, 2, rng);
        add_block(stem, 2 * f, 4 * f, 2, rng);
        for (int i = 0; i < cfg.depth; ++i) {
            auto blk = std::make_unique<ResBlock>();
            blk->body.add<Conv2d>(4 * f, 4 * f, 3)->init(rng);
            blk->body.add<InstanceNorm2d>(4 * f);
            blk->body.add<ReLU>();
            blk->body.add<Conv2d>(4 * f, 4 * f, 3)->init(rng);
            blk->body.add<InstanceNorm2d>(4 * f);
            blocks.push_back(std::move(blk));
        }
        tail.add<Upsample2xNearest>();
        add_block(tail, 4 * f, 2 * f, 1, rng);
        tail.add<Upsample2xNearest>();
        add_block(tail, 2 * f, f, 1, rng);
        tail.add<Conv2d>(f, cfg.out_channels, 3)->init(rng);
    }

    static void add_block(Sequential& seq, int in_c, int out_c, int stride, std::mt19937_64& rng) {
        seq.add<Conv2d>(in_c, out_c, 3, stride)->init(rng);
        seq.add<InstanceNorm2d>(out_c);
        seq.add<ReLU>();
    }

    Tensor forward(const Tensor& x, bool train) override {
        if (x.h % 4 != 0 || x.w % 4 != 0)
            throw ShapeError("input spatial size " + x.shape_str() + " not divisible by 4");
        Tensor cur = stem.forward(x, train);
        for (auto& blk : blocks) {
            Tensor body = blk->body.forward(cur, train);
            for (size_t j = 0; j < cur.size(); ++j) cur.v[j] += body.v[j];
        }
        return tail.forward(cur, train);
    }

    Tensor backward(const Tensor& gy) override {
        Tensor cur = tail.backward(gy);
        for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
            Tensor gbody = (*it)->body.backward(cur);
            for (size_t j = 0; j < cur.size(); ++j) cur.v[j] += gbody.v[j];
        }
        return stem.backward(cur);
    }

    void collect_params(std::vector<Param>& out) override {
        stem.collect_params("stem", out);
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i]->body.collect_params("block" + std::to_string(i), out);
        tail.collect_params("tail", out);
    }
    void collect_state(std::vector<std::pair<std::string, Tensor*>>& out) override {
        stem.collect_state("stem", out);
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i]->body.collect_state("block" + std::to_string(i), out);
        tail.collect_state("tail", out);
    }
    void zero_grad() override {
        stem.zero_grad();
        tail.zero_grad();
        for (auto& blk : blocks) blk->body.zero_grad();
    }
};

struct GeneratorHandle {
    GeneratorConfig config;
    std::unique_ptr<GeneratorNet> net;
    int64_t step_count = 0;

    std::vector<Param> params() {
        std::vector<Param> out;
        net->collect_params(out);
        return out;
    }
    std::vector<std::pair<std::string, Tensor*>> state() {
        std::vector<std::pair<std::string, Tensor*>> out;
        net->collect_state(out);
        return out;
    }
    size_t parameter_count() {
        size_t n = 0;
        for (auto& p : params()) n += p.value->size();
        return n;
    }
};

inline GeneratorHandle build_generator(const GeneratorConfig& config) {
    config.validate();
    GeneratorHandle handle;
    handle.config = config;
    if (config.arch == GeneratorArch::UNet)
        handle.net = std::make_unique<UNetGenerator>(config);
    else
        handle.net = std::make_unique<ResNetGenerator>(config);
    return handle;
}

inline Tensor generator_forward(GeneratorHandle& gen, const Tensor& input, bool train = false) {
    if (input.c != gen.config.in_channels) throw ShapeError("generator input channel mismatch");
    return gen.net->forward(input, train);
}

inline std::string arch_name(GeneratorArch a) { return a == GeneratorArch::UNet ? "unet" : "resnet"; }
inline GeneratorArch arch_from_name(const std::string& s) {
    if (s == "unet") return GeneratorArch::UNet;
    if (s == "resnet") return GeneratorArch::ResNet;
    throw ValueError("unknown generator arch: " + s);
}

inline Checkpoint generator_to_checkpoint(GeneratorHandle& gen) {
    Checkpoint ckpt;
    ckpt.meta["kind"] = "generator";
    ckpt.meta["arch"] = arch_name(gen.config.arch);
    ckpt.meta["base_filters"] = std::to_string(gen.config.base_filters);
    ckpt.meta["depth"] = std::to_string(gen.config.depth);
    ckpt.meta["in_channels"] = std::to_string(gen.config.in_channels);
    ckpt.meta["out_channels"] = std::to_string(gen.config.out_channels);
    ckpt.meta["seed"] = std::to_string(gen.config.seed);
    ckpt.meta["step_count"] = std::to_string(gen.step_count);
    for (auto& p : gen.params()) ckpt.tensors.emplace_back(p.name, *p.value);
    for (auto& [name, t] : gen.state()) ckpt.tensors.emplace_back("state." + name, *t);
    return ckpt;
}

inline GeneratorHandle generator_from_checkpoint(const Checkpoint& ckpt) {
    GeneratorConfig cfg;
    cfg.arch = arch_from_name(ckpt.meta.at("arch"));
    cfg.base_filters = std::stoi(ckpt.meta.at("base_filters"));
    cfg.depth = std::stoi(ckpt.meta.at("depth"));
    cfg.in_channels = std::stoi(ckpt.meta.at("in_channels"));
    cfg.out_channels = std::stoi(ckpt.meta.at("out_channels"));
    cfg.seed = std::stoull(ckpt.meta.at("seed"));
    GeneratorHandle gen = build_generator(cfg);
    gen.step_count = std::stoll(ckpt.meta.at("step_count"));
    for (auto& p : gen.params()) {
        const Tensor* src = ckpt.find(p.name);
        if (!src) throw CheckpointError("checkpoint missing tensor " + p.name);
        if (!src->same_shape(*p.value)) throw CheckpointError("shape mismatch for " + p.name);
        *p.value = *src;
    }
    for (auto& [name, t] : gen.state()) {
        const Tensor* src = ckpt.find("state." + name);
        if (!src) throw CheckpointError("checkpoint missing state " + name);
        *t = *src;
    }
    return gen;
}

}  // namespace advgen
