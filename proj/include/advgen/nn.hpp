#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "advgen/core.hpp"
#include "advgen/tensor.hpp"

namespace advgen {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

struct Param {
    std::string name;
    Tensor* value = nullptr;
    Tensor* grad = nullptr;
};

struct Layer {
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, bool train) = 0;
    virtual Tensor backward(const Tensor& gy) = 0;
    virtual void collect_params(const std::string& prefix, std::vector<Param>& out) {}
    // Non-optimized persistent tensors (normalization running statistics).
    virtual void collect_state(const std::string& prefix,
                               std::vector<std::pair<std::string, Tensor*>>& out) {}
    virtual void zero_grad() {}
};

inline void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, int Hout, int Wout,
                   float* cols) {
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                float* row = cols + (static_cast<size_t>(c) * k * k + ky * k + kx) * Hout * Wout;
                for (int oy = 0; oy < Hout; ++oy) {
                    int iy = oy * stride + ky - pad;
                    for (int ox = 0; ox < Wout; ++ox) {
                        int ix = ox * stride + kx - pad;
                        row[oy * Wout + ox] = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                                  ? x[(static_cast<size_t>(c) * H + iy) * W + ix]
                                                  : 0.f;
                    }
                }
            }
}

inline void col2im_accum(const float* cols, int C, int H, int W, int k, int stride, int pad, int Hout,
                         int Wout, float* gx) {
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const float* row = cols + (static_cast<size_t>(c) * k * k + ky * k + kx) * Hout * Wout;
                for (int oy = 0; oy < Hout; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (int ox = 0; ox < Wout; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= W) continue;
                        gx[(static_cast<size_t>(c) * H + iy) * W + ix] += row[oy * Wout + ox];
                    }
                }
            }
}

struct Conv2d : Layer {
    int in_c, out_c, k, stride, pad;
    bool use_bias;
    Tensor weight, bias, gweight, gbias;
    Tensor cached_x;

    Conv2d(int in_c_, int out_c_, int k_, int stride_ = 1, int pad_ = -1, bool bias_ = true)
        : in_c(in_c_), out_c(out_c_), k(k_), stride(stride_), pad(pad_ < 0 ? k_ / 2 : pad_),
          use_bias(bias_), weight(out_c_, in_c_, k_, k_), bias(1, out_c_, 1, 1),
          gweight(out_c_, in_c_, k_, k_), gbias(1, out_c_, 1, 1) {}

    void init(std::mt19937_64& rng, float stddev = 0.02f) {
        std::normal_distribution<float> dist(0.f, stddev);
        for (auto& x : weight.v) x = dist(rng);
        std::fill(bias.v.begin(), bias.v.end(), 0.f);
    }

    Tensor forward(const Tensor& x, bool) override {
        if (x.c != in_c) throw ShapeError("conv input channels " + x.shape_str());
        int Hout = (x.h + 2 * pad - k) / stride + 1;
        int Wout = (x.w + 2 * pad - k) / stride + 1;
        if (Hout < 1 || Wout < 1) throw ShapeError("conv output collapsed for input " + x.shape_str());
        cached_x = x;
        Tensor y(x.b, out_c, Hout, Wout);
        int ckk = in_c * k * k, hw = Hout * Wout;
        std::vector<float> cols(static_cast<size_t>(ckk) * hw);
        CMapRM wm(weight.v.data(), out_c, ckk);
        for (int bi = 0; bi < x.b; ++bi) {
            im2col(x.sample(bi), in_c, x.h, x.w, k, stride, pad, Hout, Wout, cols.data());
            CMapRM cm(cols.data(), ckk, hw);
            MapRM ym(y.sample(bi), out_c, hw);
            ym.noalias() = wm * cm;
            if (use_bias)
                for (int c = 0; c < out_c; ++c) ym.row(c).array() += bias.v[c];
        }
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        const Tensor& x = cached_x;
        int Hout = gy.h, Wout = gy.w, ckk = in_c * k * k, hw = Hout * Wout;
        Tensor gx(x.b, x.c, x.h, x.w);
        std::vector<float> cols(static_cast<size_t>(ckk) * hw);
        std::vector<float> gcols(static_cast<size_t>(ckk) * hw);
        CMapRM wm(weight.v.data(), out_c, ckk);
        MapRM gwm(gweight.v.data(), out_c, ckk);
        for (int bi = 0; bi < x.b; ++bi) {
            im2col(x.sample(bi), in_c, x.h, x.w, k, stride, pad, Hout, Wout, cols.data());
            CMapRM cm(cols.data(), ckk, hw);
            CMapRM gym(gy.sample(bi), out_c, hw);
            gwm.noalias() += gym * cm.transpose();
            if (use_bias)
                for (int c = 0; c < out_c; ++c) gbias.v[c] += gym.row(c).sum();
            MapRM gcm(gcols.data(), ckk, hw);
            gcm.noalias() = wm.transpose() * gym;
            col2im_accum(gcols.data(), in_c, x.h, x.w, k, stride, pad, Hout, Wout, gx.sample(bi));
        }
        return gx;
    }

    void collect_params(const std::string& prefix, std::vector<Param>& out) override {
        out.push_back({prefix + ".weight", &weight, &gweight});
        if (use_bias) out.push_back({prefix + ".bias", &bias, &gbias});
    }
    void zero_grad() override {
        std::fill(gweight.v.begin(), gweight.v.end(), 0.f);
        std::fill(gbias.v.begin(), gbias.v.end(), 0.f);
    }
};

struct BatchNorm2d : Layer {
    int channels;
    double momentum = 0.1, eps = 1e-5;
    Tensor gamma, beta, ggamma, gbeta;
    Tensor running_mean, running_var;
    // caches
    Tensor xhat;
    std::vector<double> invstd;
    bool used_batch_stats = false;

    explicit BatchNorm2d(int c)
        : channels(c), gamma(1, c, 1, 1), beta(1, c, 1, 1), ggamma(1, c, 1, 1), gbeta(1, c, 1, 1),
          running_mean(1, c, 1, 1), running_var(1, c, 1, 1) {
        std::fill(gamma.v.begin(), gamma.v.end(), 1.f);
        std::fill(running_var.v.begin(), running_var.v.end(), 1.f);
    }

    Tensor forward(const Tensor& x, bool train) override {
        Tensor y(x.b, x.c, x.h, x.w);
        xhat = Tensor(x.b, x.c, x.h, x.w);
        invstd.assign(channels, 0.0);
        used_batch_stats = train;
        const size_t n = static_cast<size_t>(x.b) * x.h * x.w;
        for (int c = 0; c < channels; ++c) {
            double mean, var;
            if (train) {
                double s = 0, s2 = 0;
                for (int bi = 0; bi < x.b; ++bi)
                    for (int yy = 0; yy < x.h; ++yy)
                        for (int xx = 0; xx < x.w; ++xx) {
                            double v = x.at(bi, c, yy, xx);
                            s += v;
                            s2 += v * v;
                        }
                mean = s / n;
                var = std::max(0.0, s2 / n - mean * mean);
                running_mean.v[c] = static_cast<float>((1 - momentum) * running_mean.v[c] + momentum * mean);
                running_var.v[c] = static_cast<float>((1 - momentum) * running_var.v[c] + momentum * var);
            } else {
                mean = running_mean.v[c];
                var = running_var.v[c];
            }
            double is = 1.0 / std::sqrt(var + eps);
            invstd[c] = is;
            float g = gamma.v[c], bt = beta.v[c];
            for (int bi = 0; bi < x.b; ++bi)
                for (int yy = 0; yy < x.h; ++yy)
                    for (int xx = 0; xx < x.w; ++xx) {
                        float xh = static_cast<float>((x.at(bi, c, yy, xx) - mean) * is);
                        xhat.at(bi, c, yy, xx) = xh;
                        y.at(bi, c, yy, xx) = g * xh + bt;
                    }
        }
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        Tensor gx(gy.b, gy.c, gy.h, gy.w);
        const double n = static_cast<double>(gy.b) * gy.h * gy.w;
        for (int c = 0; c < channels; ++c) {
            double sum_gy = 0, sum_gy_xhat = 0;
            for (int bi = 0; bi < gy.b; ++bi)
                for (int yy = 0; yy < gy.h; ++yy)
                    for (int xx = 0; xx < gy.w; ++xx) {
                        double g = gy.at(bi, c, yy, xx);
                        sum_gy += g;
                        sum_gy_xhat += g * xhat.at(bi, c, yy, xx);
                    }
            ggamma.v[c] += static_cast<float>(sum_gy_xhat);
            gbeta.v[c] += static_cast<float>(sum_gy);
            double g = gamma.v[c], is = invstd[c];
            for (int bi = 0; bi < gy.b; ++bi)
                for (int yy = 0; yy < gy.h; ++yy)
                    for (int xx = 0; xx < gy.w; ++xx) {
                        double go = gy.at(bi, c, yy, xx);
                        double dx;
                        if (used_batch_stats) {
                            dx = g * is / n *
                                 (n * go - sum_gy - xhat.at(bi, c, yy, xx) * sum_gy_xhat);
                        } else {
                            dx = g * is * go;
                        }
                        gx.at(bi, c, yy, xx) = static_cast<float>(dx);
                    }
        }
        return gx;
    }

    void collect_params(const std::string& prefix, std::vector<Param>& out) override {
        out.push_back({prefix + ".gamma", &gamma, &ggamma});
        out.push_back({prefix + ".beta", &beta, &gbeta});
    }
    void collect_state(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor*>>& out) override {
        out.push_back({prefix + ".running_mean", &running_mean});
        out.push_back({prefix + ".running_var", &running_var});
    }
    void zero_grad() override {
        std::fill(ggamma.v.begin(), ggamma.v.end(), 0.f);
        std::fill(gbeta.v.begin(), gbeta.v.end(), 0.f);
    }
};

struct InstanceNorm2d : Layer {
    int channels;
    double eps = 1e-5;
    Tensor gamma, beta, ggamma, gbeta;
    Tensor xhat;
    std::vector<double> invstd;  // per (b, c)

    explicit InstanceNorm2d(int c)
        : channels(c), gamma(1, c, 1, 1), beta(1, c, 1, 1), ggamma(1, c, 1, 1), gbeta(1, c, 1, 1) {
        std::fill(gamma.v.begin(), gamma.v.end(), 1.f);
    }

    Tensor forward(const Tensor& x, bool) override {
        Tensor y(x.b, x.c, x.h, x.w);
        xhat = Tensor(x.b, x.c, x.h, x.w);
        invstd.assign(static_cast<size_t>(x.b) * channels, 0.0);
        const size_t n = static_cast<size_t>(x.h) * x.w;
        for (int bi = 0; bi < x.b; ++bi)
            for (int c = 0; c < channels; ++c) {
                double s = 0, s2 = 0;
                for (int yy = 0; yy < x.h; ++yy)
                    for (int xx = 0; xx < x.w; ++xx) {
                        double v = x.at(bi, c, yy, xx);
                        s += v;
                        s2 += v * v;
                    }
                double mean = s / n;
                double var = std::max(0.0, s2 / n - mean * mean);
                double is = 1.0 / std::sqrt(var + eps);
                invstd[static_cast<size_t>(bi) * channels + c] = is;
                float g = gamma.v[c], bt = beta.v[c];
                for (int yy = 0; yy < x.h; ++yy)
                    for (int xx = 0; xx < x.w; ++xx) {
                        float xh = static_cast<float>((x.at(bi, c, yy, xx) - mean) * is);
                        xhat.at(bi, c, yy, xx) = xh;
                        y.at(bi, c, yy, xx) = g * xh + bt;
                    }
            }
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        Tensor gx(gy.b, gy.c, gy.h, gy.w);
        const double n = static_cast<double>(gy.h) * gy.w;
        for (int bi = 0; bi < gy.b; ++bi)
            for (int c = 0; c < channels; ++c) {
                double sum_gy = 0, sum_gy_xhat = 0;
                for (int yy = 0; yy < gy.h; ++yy)
                    for (int xx = 0; xx < gy.w; ++xx) {
                        double g = gy.at(bi, c, yy, xx);
                        sum_gy += g;
                        sum_gy_xhat += g * xhat.at(bi, c, yy, xx);
                    }
                ggamma.v[c] += static_cast<float>(sum_gy_xhat);
                gbeta.v[c] += static_cast<float>(sum_gy);
                double g = gamma.v[c], is = invstd[static_cast<size_t>(bi) * channels + c];
                for (int yy = 0; yy < gy.h; ++yy)
                    for (int xx = 0; xx < gy.w; ++xx) {
                        double go = gy.at(bi, c, yy, xx);
                        gx.at(bi, c, yy, xx) = static_cast<float>(
                            g * is / n * (n * go - sum_gy - xhat.at(bi, c, yy, xx) * sum_gy_xhat));
                    }
            }
        return gx;
    }

    void collect_params(const std::string& prefix, std::vector<Param>& out) override {
        out.push_back({prefix + ".gamma", &gamma, &ggamma});
        out.push_back({prefix + ".beta", &beta, &gbeta});
    }
    void zero_grad() override {
        std::fill(ggamma.v.begin(), ggamma.v.end(), 0.f);
        std::fill(gbeta.v.begin(), gbeta.v.end(), 0.f);
    }
};

struct ReLU : Layer {
    std::vector<uint8_t> mask;
    Tensor forward(const Tensor& x, bool) override {
        Tensor y = x;
        mask.assign(x.size(), 0);
        for (size_t i = 0; i < x.size(); ++i) {
            if (y.v[i] > 0.f)
                mask[i] = 1;
            else
                y.v[i] = 0.f;
        }
        return y;
    }
    Tensor backward(const Tensor& gy) override {
        Tensor gx = gy;
        for (size_t i = 0; i < gx.size(); ++i)
            if (!mask[i]) gx.v[i] = 0.f;
        return gx;
    }
};

struct Upsample2xNearest : Layer {
    Tensor forward(const Tensor& x, bool) override {
        Tensor y(x.b, x.c, x.h * 2, x.w * 2);
        for (int bi = 0; bi < x.b; ++bi)
            for (int c = 0; c < x.c; ++c)
                for (int yy = 0; yy < y.h; ++yy)
                    for (int xx = 0; xx < y.w; ++xx)
                        y.at(bi, c, yy, xx) = x.at(bi, c, yy / 2, xx / 2);
        return y;
    }
    Tensor backward(const Tensor& gy) override {
        Tensor gx(gy.b, gy.c, gy.h / 2, gy.w / 2);
        for (int bi = 0; bi < gy.b; ++bi)
            for (int c = 0; c < gy.c; ++c)
                for (int yy = 0; yy < gy.h; ++yy)
                    for (int xx = 0; xx < gy.w; ++xx)
                        gx.at(bi, c, yy / 2, xx / 2) += gy.at(bi, c, yy, xx);
        return gx;
    }
};

struct GlobalAvgPool : Layer {
    int cached_h = 0, cached_w = 0;
    Tensor forward(const Tensor& x, bool) override {
        cached_h = x.h;
        cached_w = x.w;
        Tensor y(x.b, x.c, 1, 1);
        const double n = static_cast<double>(x.h) * x.w;
        for (int bi = 0; bi < x.b; ++bi)
            for (int c = 0; c < x.c; ++c) {
                double s = 0;
                for (int yy = 0; yy < x.h; ++yy)
                    for (int xx = 0; xx < x.w; ++xx) s += x.at(bi, c, yy, xx);
                y.at(bi, c, 0, 0) = static_cast<float>(s / n);
            }
        return y;
    }
    Tensor backward(const Tensor& gy) override {
        Tensor gx(gy.b, gy.c, cached_h, cached_w);
        const float inv = 1.f / (cached_h * cached_w);
        for (int bi = 0; bi < gy.b; ++bi)
            for (int c = 0; c < gy.c; ++c) {
                float g = gy.at(bi, c, 0, 0) * inv;
                for (int yy = 0; yy < cached_h; ++yy)
                    for (int xx = 0; xx < cached_w; ++xx) gx.at(bi, c, yy, xx) = g;
            }
        return gx;
    }
};

struct Sequential : Layer {
    std::vector<std::unique_ptr<Layer>> layers;

    template <typename L, typename... Args>
    L* add(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L* raw = layer.get();
        layers.push_back(std::move(layer));
        return raw;
    }

    Tensor forward(const Tensor& x, bool train) override {
        Tensor cur = x;
        for (auto& l : layers) cur = l->forward(cur, train);
        return cur;
    }
    Tensor backward(const Tensor& gy) override {
        Tensor cur = gy;
        for (auto it = layers.rbegin(); it != layers.rend(); ++it) cur = (*it)->backward(cur);
        return cur;
    }
    void collect_params(const std::string& prefix, std::vector<Param>& out) override {
        for (size_t i = 0; i < layers.size(); ++i)
            layers[i]->collect_params(prefix + "." + std::to_string(i), out);
    }
    void collect_state(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor*>>& out) override {
        for (size_t i = 0; i < layers.size(); ++i)
            layers[i]->collect_state(prefix + "." + std::to_string(i), out);
    }
    void zero_grad() override {
        for (auto& l : layers) l->zero_grad();
    }
};

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct Adam {
    AdamConfig cfg;
    int64_t t = 0;
    std::vector<Tensor> m, vel;

    explicit Adam(AdamConfig c = {}) : cfg(c) {}

    void step(std::vector<Param>& params) {
        if (m.empty()) {
            for (auto& p : params) {
                m.emplace_back(p.value->b, p.value->c, p.value->h, p.value->w);
                vel.emplace_back(p.value->b, p.value->c, p.value->h, p.value->w);
            }
        }
        ++t;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& w = *params[i].value;
            const Tensor& g = *params[i].grad;
            for (size_t j = 0; j < w.size(); ++j) {
                double gj = g.v[j];
                double mj = cfg.beta1 * m[i].v[j] + (1 - cfg.beta1) * gj;
                double vj = cfg.beta2 * vel[i].v[j] + (1 - cfg.beta2) * gj * gj;
                m[i].v[j] = static_cast<float>(mj);
                vel[i].v[j] = static_cast<float>(vj);
                w.v[j] -= static_cast<float>(cfg.lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps));
            }
        }
    }
};

inline Tensor softmax_channels(const Tensor& logits) {
    Tensor p(logits.b, logits.c, logits.h, logits.w);
    for (int bi = 0; bi < logits.b; ++bi)
        for (int y = 0; y < logits.h; ++y)
            for (int x = 0; x < logits.w; ++x) {
                float mx = logits.at(bi, 0, y, x);
                for (int c = 1; c < logits.c; ++c) mx = std::max(mx, logits.at(bi, c, y, x));
                double denom = 0;
                for (int c = 0; c < logits.c; ++c)
                    denom += std::exp(static_cast<double>(logits.at(bi, c, y, x)) - mx);
                for (int c = 0; c < logits.c; ++c)
                    p.at(bi, c, y, x) = static_cast<float>(
                        std::exp(static_cast<double>(logits.at(bi, c, y, x)) - mx) / denom);
            }
    return p;
}

}  // namespace advgen
