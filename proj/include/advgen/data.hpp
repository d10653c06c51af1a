#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "advgen/checkpoint.hpp"
#include "advgen/core.hpp"
#include "advgen/tensor.hpp"

namespace advgen {

enum class Task { Classification, Segmentation };

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Split {
    Tensor images;       // (N, C, H, W) in [0,1]
    LabelTensor labels;  // (N,1,1) classification, (N,H,W) segmentation
    int count() const { return images.b; }
};

struct DatasetHandle {
    Task task = Task::Classification;
    int num_classes = 0;
    int channels = 0, height = 0, width = 0;
    std::map<std::string, Split> splits;
    std::string source;

    const Split& split(const std::string& name) const {
        auto it = splits.find(name);
        if (it == splits.end()) throw DataError("unknown split: " + name);
        return it->second;
    }
};

// ---------------------------------------------------------------------------
// CIFAR-10 binary format: 3073-byte records, 1 label byte then 3072 pixel
// bytes in channel-planar row-major order. Byte i maps to i/255.
// ---------------------------------------------------------------------------

constexpr size_t kCifarRecordBytes = 3073;
constexpr int kCifarSide = 32;
constexpr int kCifarChannels = 3;

inline void read_cifar10_file(const std::string& path, std::vector<Tensor>& images,
                              std::vector<int>& labels) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw DataError("cannot open " + path);
    const auto bytes = static_cast<size_t>(is.tellg());
    if (bytes == 0 || bytes % kCifarRecordBytes != 0)
        throw DataError(path + ": size " + std::to_string(bytes) + " is not a multiple of 3073");
    is.seekg(0);
    const size_t n = bytes / kCifarRecordBytes;
    std::vector<uint8_t> rec(kCifarRecordBytes);
    for (size_t i = 0; i < n; ++i) {
        is.read(reinterpret_cast<char*>(rec.data()), kCifarRecordBytes);
        if (rec[0] > 9) throw DataError(path + ": label byte " + std::to_string(rec[0]) + " > 9");
        labels.push_back(rec[0]);
        Tensor img(1, kCifarChannels, kCifarSide, kCifarSide);
        for (size_t j = 0; j < 3072; ++j) img.v[j] = static_cast<float>(rec[1 + j]) / 255.f;
        images.push_back(std::move(img));
    }
}

inline void write_cifar10_file(const std::string& path, const Tensor& images,
                               const LabelTensor& labels) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for write: " + path);
    for (int i = 0; i < images.b; ++i) {
        uint8_t label = static_cast<uint8_t>(labels.at(i, 0, 0));
        os.put(static_cast<char>(label));
        const float* p = images.sample(i);
        for (size_t j = 0; j < images.sample_size(); ++j)
            os.put(static_cast<char>(static_cast<uint8_t>(std::lround(p[j] * 255.f))));
    }
}

inline Split pack_classification(const std::vector<Tensor>& images, const std::vector<int>& labels,
                                 size_t begin, size_t end) {
    Split s;
    const int n = static_cast<int>(end - begin);
    s.images = Tensor(n, kCifarChannels, kCifarSide, kCifarSide);
    s.labels = LabelTensor(n, 1, 1);
    for (int i = 0; i < n; ++i) {
        std::memcpy(s.images.sample(i), images[begin + i].v.data(),
                    s.images.sample_size() * sizeof(float));
        s.labels.at(i, 0, 0) = labels[begin + i];
    }
    return s;
}

// Loads the standard binary batches from a directory: data_batch_*.bin form
// the train split (with a 10% validation carve-out from the tail) and
// test_batch.bin the test split.
inline DatasetHandle load_cifar10(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> train_files;
    for (auto& e : fs::directory_iterator(dir)) {
        std::string name = e.path().filename().string();
        if (name.rfind("data_batch_", 0) == 0 && name.size() > 4 &&
            name.substr(name.size() - 4) == ".bin")
            train_files.push_back(e.path().string());
    }
    std::sort(train_files.begin(), train_files.end());
    if (train_files.empty()) throw DataError("no data_batch_*.bin files in " + dir);

    std::vector<Tensor> images;
    std::vector<int> labels;
    for (auto& f : train_files) read_cifar10_file(f, images, labels);

    DatasetHandle ds;
    ds.task = Task::Classification;
    ds.num_classes = 10;
    ds.channels = kCifarChannels;
    ds.height = ds.width = kCifarSide;
    ds.source = dir;
    const size_t n_val = std::max<size_t>(1, images.size() / 10);
    ds.splits["train"] = pack_classification(images, labels, 0, images.size() - n_val);
    ds.splits["val"] = pack_classification(images, labels, images.size() - n_val, images.size());

    std::string test_path = (fs::path(dir) / "test_batch.bin").string();
    if (fs::exists(test_path)) {
        std::vector<Tensor> ti;
        std::vector<int> tl;
        read_cifar10_file(test_path, ti, tl);
        ds.splits["test"] = pack_classification(ti, tl, 0, ti.size());
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic 10-class classification set, serialized in the CIFAR-10 binary
// format. Each class is a fixed low-frequency prototype; samples are
// prototype + pixel noise around mid-gray, so a small CNN separates the
// classes while margins stay small enough for norm-bounded attacks.
// ---------------------------------------------------------------------------

inline Tensor bilinear_upsample(const Tensor& src, int H, int W) {
    Tensor out(src.b, src.c, H, W);
    for (int bi = 0; bi < src.b; ++bi)
        for (int c = 0; c < src.c; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    float fy = (y + 0.5f) * src.h / H - 0.5f;
                    float fx = (x + 0.5f) * src.w / W - 0.5f;
                    int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, src.h - 1);
                    int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, src.w - 1);
                    int y1 = std::min(y0 + 1, src.h - 1);
                    int x1 = std::min(x0 + 1, src.w - 1);
                    float wy = std::clamp(fy - y0, 0.f, 1.f), wx = std::clamp(fx - x0, 0.f, 1.f);
                    out.at(bi, c, y, x) = (1 - wy) * ((1 - wx) * src.at(bi, c, y0, x0) +
                                                      wx * src.at(bi, c, y0, x1)) +
                                          wy * ((1 - wx) * src.at(bi, c, y1, x0) +
                                                wx * src.at(bi, c, y1, x1));
                }
    return out;
}

struct SynthClassConfig {
    int n_train = 6000;
    int n_test = 1000;
    int num_classes = 10;
    float prototype_amplitude = 0.05f;
    float noise_sigma = 0.08f;
};

inline std::vector<Tensor> make_class_prototypes(int num_classes, uint64_t seed) {
    std::vector<Tensor> protos;
    for (int c = 0; c < num_classes; ++c) {
        Tensor coarse = normal_tensor(1, kCifarChannels, 6, 6, sub_seed(seed, "proto" + std::to_string(c)));
        Tensor p = bilinear_upsample(coarse, kCifarSide, kCifarSide);
        double mean = std::accumulate(p.v.begin(), p.v.end(), 0.0) / p.size();
        double rms = 0;
        for (auto& x : p.v) {
            x -= static_cast<float>(mean);
            rms += static_cast<double>(x) * x;
        }
        rms = std::sqrt(rms / p.size());
        for (auto& x : p.v) x = static_cast<float>(x / rms);
        protos.push_back(std::move(p));
    }
    return protos;
}

// Generates train and test batch files under `dir`, CIFAR-10 binary format.
inline void synthesize_classification_files(const std::string& dir, const SynthClassConfig& cfg,
                                            uint64_t seed) {
    std::filesystem::create_directories(dir);
    auto protos = make_class_prototypes(cfg.num_classes, sub_seed(seed, "prototypes"));
    auto render = [&](int n, uint64_t split_seed, const std::string& path) {
        Tensor images(n, kCifarChannels, kCifarSide, kCifarSide);
        LabelTensor labels(n, 1, 1);
        std::mt19937_64 rng(split_seed);
        std::normal_distribution<float> noise(0.f, cfg.noise_sigma);
        std::uniform_int_distribution<int> cls(0, cfg.num_classes - 1);
        for (int i = 0; i < n; ++i) {
            int c = cls(rng);
            labels.at(i, 0, 0) = c;
            float* p = images.sample(i);
            for (size_t j = 0; j < images.sample_size(); ++j)
                p[j] = std::clamp(0.5f + cfg.prototype_amplitude * protos[c].v[j] + noise(rng), 0.f, 1.f);
        }
        write_cifar10_file(path, images, labels);
    };
    render(cfg.n_train, sub_seed(seed, "train"), dir + "/data_batch_1.bin");
    render(cfg.n_test, sub_seed(seed, "test"), dir + "/test_batch.bin");
}

// ---------------------------------------------------------------------------
// Procedural segmentation scenes: class-0 background plus 1-3 colored
// rectangles/disks of classes 1-4, with pixel-exact label maps.
// ---------------------------------------------------------------------------

constexpr int kSegClasses = 5;
constexpr int kSegSide = 32;
constexpr float kSegNoiseSigma = 0.03f;

// Muted palette centered on mid-gray. Channel gaps between classes are a
// little over 0.1, so the classes are cleanly separable above the pixel noise
// yet reachable from each other under small perturbation budgets.
inline const float* seg_class_color(int c) {
    static const float colors[kSegClasses][3] = {
        {0.50f, 0.50f, 0.50f},  // background
        {0.60f, 0.46f, 0.50f},
        {0.46f, 0.60f, 0.50f},
        {0.46f, 0.46f, 0.60f},
        {0.60f, 0.60f, 0.45f},
    };
    return colors[c];
}

inline DatasetHandle synthesize_segmentation_dataset(int n, uint64_t seed) {
    if (n < 1) throw ValueError("segmentation dataset needs n >= 1");
    Tensor images(n, 3, kSegSide, kSegSide);
    LabelTensor labels(n, kSegSide, kSegSide);
    std::mt19937_64 rng(sub_seed(seed, "seg-scenes"));
    std::uniform_int_distribution<int> n_shapes(1, 3);
    std::uniform_int_distribution<int> shape_class(1, kSegClasses - 1);
    std::uniform_int_distribution<int> shape_kind(0, 1);
    std::uniform_int_distribution<int> pos(0, kSegSide - 1);
    std::uniform_int_distribution<int> extent(6, 16);
    std::normal_distribution<float> noise(0.f, kSegNoiseSigma);

    for (int i = 0; i < n; ++i) {
        std::vector<int> map(kSegSide * kSegSide, 0);
        int shapes = n_shapes(rng);
        for (int s = 0; s < shapes; ++s) {
            int cls = shape_class(rng), kind = shape_kind(rng);
            int cy = pos(rng), cx = pos(rng), e = extent(rng);
            for (int y = 0; y < kSegSide; ++y)
                for (int x = 0; x < kSegSide; ++x) {
                    bool inside = kind == 0
                                      ? (std::abs(y - cy) <= e / 2 && std::abs(x - cx) <= e / 2)
                                      : ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= (e / 2) * (e / 2));
                    if (inside) map[y * kSegSide + x] = cls;
                }
        }
        for (int y = 0; y < kSegSide; ++y)
            for (int x = 0; x < kSegSide; ++x) {
                int cls = map[y * kSegSide + x];
                labels.at(i, y, x) = cls;
                const float* col = seg_class_color(cls);
                for (int c = 0; c < 3; ++c)
                    images.at(i, c, y, x) = std::clamp(col[c] + noise(rng), 0.f, 1.f);
            }
    }

    DatasetHandle ds;
    ds.task = Task::Segmentation;
    ds.num_classes = kSegClasses;
    ds.channels = 3;
    ds.height = ds.width = kSegSide;
    ds.source = "synth-seg:" + std::to_string(seed);
    auto slice = [&](int begin, int end) {
        Split s;
        s.images = Tensor(end - begin, 3, kSegSide, kSegSide);
        s.labels = LabelTensor(end - begin, kSegSide, kSegSide);
        for (int i = begin; i < end; ++i) {
            std::memcpy(s.images.sample(i - begin), images.sample(i),
                        s.images.sample_size() * sizeof(float));
            std::memcpy(&s.labels.v[(i - begin) * s.labels.sample_size()],
                        &labels.v[i * labels.sample_size()], labels.sample_size() * sizeof(int32_t));
        }
        return s;
    };
    int n_train = std::max(1, n * 8 / 10);
    int n_val = std::max(1, (n - n_train) / 2);
    if (n_train + n_val > n) n_train = n - n_val;
    ds.splits["train"] = slice(0, n_train);
    ds.splits["val"] = slice(n_train, std::min(n, n_train + n_val));
    ds.splits["test"] = slice(std::min(n, n_train + n_val), n);
    if (ds.splits["test"].count() == 0) ds.splits["test"] = ds.splits["val"];
    return ds;
}

// Fixed static target for targeted segmentation attacks: four horizontal
// bands of classes 1-4.
inline LabelTensor make_stripe_target(int h = kSegSide, int w = kSegSide) {
    LabelTensor t(1, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) t.at(0, y, x) = 1 + std::min(3, y / std::max(1, h / 4));
    return t;
}

constexpr const char* kSegDatasetVersion = "seg-synth-v1";

inline void save_segmentation_dataset(const std::string& path, const DatasetHandle& ds, uint64_t seed) {
    Checkpoint ckpt;
    ckpt.meta["kind"] = "dataset";
    ckpt.meta["version"] = kSegDatasetVersion;
    ckpt.meta["seed"] = std::to_string(seed);
    ckpt.meta["num_classes"] = std::to_string(ds.num_classes);
    for (auto& [name, split] : ds.splits) {
        ckpt.tensors.emplace_back(name + ".images", split.images);
        Tensor lab(split.labels.b, 1, split.labels.h, split.labels.w);
        for (size_t i = 0; i < split.labels.size(); ++i) lab.v[i] = static_cast<float>(split.labels.v[i]);
        ckpt.tensors.emplace_back(name + ".labels", std::move(lab));
    }
    save_checkpoint(path, ckpt);
}

// ---------------------------------------------------------------------------

struct BatchIterator {
    const Split* split = nullptr;
    std::vector<int> order;
    size_t cursor = 0;
    int batch_size = 0;

    BatchIterator(const DatasetHandle& ds, const std::string& split_name, int batch_size_,
                  uint64_t shuffle_seed)
        : split(&ds.split(split_name)), batch_size(batch_size_) {
        if (batch_size < 1) throw ValueError("batch size must be positive");
        order.resize(split->count());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(shuffle_seed);
        std::shuffle(order.begin(), order.end(), rng);
    }

    bool next(ImageBatch& images, LabelTensor& labels) {
        if (cursor >= order.size()) return false;
        const int n = static_cast<int>(std::min<size_t>(batch_size, order.size() - cursor));
        images.data = Tensor(n, split->images.c, split->images.h, split->images.w);
        labels = LabelTensor(n, split->labels.h, split->labels.w);
        for (int i = 0; i < n; ++i) {
            int idx = order[cursor + i];
            std::memcpy(images.data.sample(i), split->images.sample(idx),
                        images.data.sample_size() * sizeof(float));
            std::memcpy(&labels.v[i * labels.sample_size()], &split->labels.v[idx * labels.sample_size()],
                        labels.sample_size() * sizeof(int32_t));
        }
        cursor += n;
        return true;
    }
};

}  // namespace advgen
