#include <filesystem>
#include <fstream>

#include "advgen/victims.hpp"
#include "doctest.h"

using namespace advgen;
namespace fs = std::filesystem;

namespace {

VictimModel untrained(const std::string& arch, int classes, uint64_t seed) {
    VictimModel m;
    m.id = arch + "_fixture";
    m.arch = arch;
    m.task = victim_task_for_arch(arch);
    m.num_classes = classes;
    m.seed = seed;
    m.net = make_victim_net(arch, classes, seed);
    m.frozen = true;
    return m;
}

// A linearly separable 2-class set: class 0 is dark, class 1 bright.
DatasetHandle two_class_set(int n, uint64_t seed) {
    DatasetHandle ds;
    ds.task = Task::Classification;
    ds.num_classes = 2;
    ds.channels = 3;
    ds.height = ds.width = 32;
    Split s;
    s.images = Tensor(n, 3, 32, 32);
    s.labels = LabelTensor(n, 1, 1);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> jitter(-0.05f, 0.05f);
    for (int i = 0; i < n; ++i) {
        int cls = static_cast<int>(rng() % 2);
        s.labels.at(i, 0, 0) = cls;
        float base = cls ? 0.8f : 0.2f;
        float* p = s.images.sample(i);
        for (size_t j = 0; j < s.images.sample_size(); ++j)
            p[j] = std::clamp(base + jitter(rng), 0.f, 1.f);
    }
    ds.splits["train"] = s;
    ds.splits["val"] = s;
    return ds;
}

}  // namespace

TEST_CASE("victim forward produces valid softmax outputs") {
    for (const char* arch : {"cnn_a", "cnn_b", "cnn_c"}) {
        VictimModel m = untrained(arch, 10, 3);
        ImageBatch x{uniform_tensor(2, 3, 32, 32, 4)};
        VictimForward out = victim_forward(m, x);
        CHECK(out.probs.probs.b == 2);
        CHECK(out.probs.probs.c == 10);
        CHECK(out.probs.probs.h == 1);
        CHECK(out.probs.probs.w == 1);
        validate_distribution(out.probs);
        // deterministic inference
        VictimForward again = victim_forward(m, x);
        CHECK(out.logits.v == again.logits.v);
    }
}

TEST_CASE("segmentation victim keeps per-pixel outputs") {
    VictimModel m = untrained("fcn_tiny", 5, 3);
    ImageBatch x{uniform_tensor(2, 3, 32, 32, 4)};
    VictimForward out = victim_forward(m, x);
    CHECK(out.probs.probs.c == 5);
    CHECK(out.probs.probs.h == 32);
    CHECK(out.probs.probs.w == 32);
    validate_distribution(out.probs);
}

TEST_CASE("victim forward rejects shape mismatches") {
    VictimModel m = untrained("cnn_a", 10, 3);
    ImageBatch bad{uniform_tensor(1, 3, 16, 16, 4)};
    CHECK_THROWS_AS(victim_forward(m, bad), ShapeError);
    CHECK_THROWS_AS(make_victim_net("vgg19", 10, 0), ValueError);
}

TEST_CASE("predict takes the argmax with lowest-index tie-break") {
    Tensor probs(1, 3, 1, 1);
    probs.v = {0.1f, 0.8f, 0.1f};
    CHECK(argmax_channels(probs).v[0] == 1);
    probs.v = {0.5f, 0.5f, 0.0f};
    CHECK(argmax_channels(probs).v[0] == 0);
}

TEST_CASE("victim training solves a linearly separable task") {
    DatasetHandle ds = two_class_set(128, 11);
    VictimTrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 32;
    VictimModel m = train_victim("cnn_a", ds, cfg, 1, nullptr);
    CHECK(m.frozen);
    CHECK(m.clean_accuracy >= 0.99);
}

TEST_CASE("loss gradients with respect to the input are nonzero") {
    VictimModel m = untrained("cnn_a", 10, 5);
    ImageBatch x{uniform_tensor(2, 3, 32, 32, 6)};
    LabelTensor gt(2, 1, 1);
    gt.v = {1, 7};
    Tensor logits = m.net->forward(x.data, false);
    LossResult loss = softmax_ce_loss(logits, gt);
    Tensor grad = m.net->backward(loss.dlogits);
    CHECK(all_finite(grad));
    double norm = 0;
    for (float g : grad.v) norm += std::fabs(g);
    CHECK(norm > 0.0);
}

TEST_CASE("registry round-trip preserves predictions bit-identically") {
    std::string dir = (fs::temp_directory_path() / "advgen_registry").string();
    fs::remove_all(dir);
    DatasetHandle ds = two_class_set(64, 21);
    VictimTrainConfig cfg;
    cfg.epochs = 2;
    VictimModel m = train_victim("cnn_c", ds, cfg, 2, nullptr);
    registry_save(dir, m);
    VictimModel loaded = registry_load(dir, m.id);
    CHECK(loaded.clean_accuracy == m.clean_accuracy);
    CHECK(loaded.frozen);
    CHECK(loaded.arch == "cnn_c");

    ImageBatch x{uniform_tensor(4, 3, 32, 32, 22)};
    CHECK(victim_forward(m, x).logits.v == victim_forward(loaded, x).logits.v);
    CHECK(victim_snapshot(m) == victim_snapshot(loaded));

    CHECK_THROWS_AS(registry_load(dir, "unknown_id"), CheckpointError);
    {
        std::ifstream is(registry_path(dir, m.id), std::ios::binary | std::ios::ate);
        auto sz = static_cast<size_t>(is.tellg());
        is.seekg(0);
        std::vector<char> buf(sz / 3);
        is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        std::ofstream os(registry_path(dir, m.id), std::ios::binary);
        os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
    CHECK_THROWS_AS(registry_load(dir, m.id), CheckpointError);
    fs::remove_all(dir);
}

TEST_CASE("three distinct classifier architectures are available") {
    std::vector<size_t> param_counts;
    for (const char* arch : {"cnn_a", "cnn_b", "cnn_c"}) {
        VictimModel m = untrained(arch, 10, 1);
        size_t n = 0;
        for (auto& p : m.params()) n += p.value->size();
        param_counts.push_back(n);
    }
    CHECK(param_counts[0] != param_counts[1]);
    CHECK(param_counts[1] != param_counts[2]);
    CHECK(param_counts[0] != param_counts[2]);
}
