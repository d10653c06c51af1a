#include <cmath>

#include "advgen/evaluation.hpp"
#include "advgen/studies.hpp"
#include "doctest.h"

using namespace advgen;

namespace {

VictimModel fixture_victim(const std::string& arch, int classes, uint64_t seed) {
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

}  // namespace

TEST_CASE("fooling ratio on stored predictions") {
    LabelTensor clean(4, 1, 1), adv(4, 1, 1);
    clean.v = {1, 2, 3, 4};
    adv.v = {1, 0, 3, 0};
    CHECK(fooling_ratio_preds(clean, adv) == doctest::Approx(0.5));
}

TEST_CASE("fooling ratio is zero on identical inputs and matches a hand loop") {
    VictimModel m = fixture_victim("cnn_a", 10, 7);
    ImageBatch x{uniform_tensor(16, 3, 32, 32, 8)};
    CHECK(fooling_ratio(m, x, x) == 0.0);

    ImageBatch adv{uniform_tensor(16, 3, 32, 32, 9)};
    LabelTensor pc = predict(m, x), pa = predict(m, adv);
    int changed = 0;
    for (int i = 0; i < 16; ++i) changed += pc.at(i, 0, 0) != pa.at(i, 0, 0);
    CHECK(fooling_ratio(m, x, adv) == doctest::Approx(changed / 16.0));
    ImageBatch empty;
    CHECK_THROWS_AS(fooling_ratio(m, empty, empty), std::exception);
}

TEST_CASE("accuracy matches a brute-force loop on a random fixture") {
    VictimModel m = fixture_victim("cnn_a", 10, 17);
    ImageBatch x{uniform_tensor(16, 3, 32, 32, 18)};
    LabelTensor labels(16, 1, 1);
    for (int i = 0; i < 16; ++i) labels.at(i, 0, 0) = i % 10;
    LabelTensor pred = predict(m, x);
    int correct = 0;
    for (int i = 0; i < 16; ++i) correct += pred.at(i, 0, 0) == labels.at(i, 0, 0);
    CHECK(accuracy(m, x, labels) == doctest::Approx(correct / 16.0));

    CHECK(accuracy(m, x, pred) == 1.0);
    LabelTensor wrong(16, 1, 1);
    for (int i = 0; i < 16; ++i) wrong.at(i, 0, 0) = (pred.at(i, 0, 0) + 1) % 10;
    CHECK(accuracy(m, x, wrong) == 0.0);
}

TEST_CASE("target success counts exact matches and per-pixel agreement") {
    VictimModel m = fixture_victim("cnn_a", 10, 27);
    ImageBatch x{uniform_tensor(16, 3, 32, 32, 28)};
    LabelTensor pred = predict(m, x);
    CHECK(target_success(m, x, pred) == 1.0);

    LabelTensor target(1, 1, 1);
    target.v[0] = 3;
    int match = 0;
    for (int i = 0; i < 16; ++i) match += pred.at(i, 0, 0) == 3;
    CHECK(target_success(m, x, target) == doctest::Approx(match / 16.0));

    VictimModel seg = fixture_victim("fcn_tiny", 5, 29);
    ImageBatch xs{uniform_tensor(4, 3, 32, 32, 30)};
    LabelTensor map = predict(seg, xs);
    CHECK(target_success(seg, xs, map) == 1.0);
    LabelTensor half = map;
    for (int i = 0; i < 2; ++i)
        for (size_t j = 0; j < half.sample_size(); ++j)
            half.v[i * half.sample_size() + j] = (half.v[i * half.sample_size() + j] + 1) % 5;
    CHECK(target_success(seg, xs, half) == doctest::Approx(0.5));
}

TEST_CASE("mean IoU hand example and brute-force oracle") {
    LabelTensor pred(1, 2, 2), gt(1, 2, 2);
    pred.v = {0, 1, 1, 1};
    gt.v = {0, 1, 0, 1};
    CHECK(mean_iou(pred, gt, 5) == doctest::Approx(7.0 / 12.0).epsilon(1e-9));
    CHECK(mean_iou(gt, gt, 5) == 1.0);

    const int C = 5;
    LabelTensor p(16, 8, 8), g(16, 8, 8);
    std::mt19937_64 rng(4);
    for (auto& v : p.v) v = static_cast<int32_t>(rng() % C);
    for (auto& v : g.v) v = static_cast<int32_t>(rng() % 4);  // class 4 absent from gt
    double acc = 0;
    int present = 0;
    for (int c = 0; c < C; ++c) {
        int64_t inter = 0, uni = 0;
        for (size_t j = 0; j < p.size(); ++j) {
            bool in_p = p.v[j] == c, in_g = g.v[j] == c;
            inter += in_p && in_g;
            uni += in_p || in_g;
        }
        if (uni) {
            acc += static_cast<double>(inter) / uni;
            ++present;
        }
    }
    CHECK(mean_iou(p, g, C) == doctest::Approx(acc / present).epsilon(1e-12));
}

TEST_CASE("mean IoU is invariant under a consistent class permutation") {
    LabelTensor p(2, 4, 4), g(2, 4, 4);
    std::mt19937_64 rng(6);
    for (auto& v : p.v) v = static_cast<int32_t>(rng() % 4);
    for (auto& v : g.v) v = static_cast<int32_t>(rng() % 4);
    double base = mean_iou(p, g, 4);
    int perm[4] = {2, 3, 1, 0};
    LabelTensor pp = p, gg = g;
    for (auto& v : pp.v) v = perm[v];
    for (auto& v : gg.v) v = perm[v];
    CHECK(mean_iou(pp, gg, 4) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("gaussian blur identity, invariants, and flip symmetry") {
    ImageBatch x{uniform_tensor(2, 3, 16, 16, 40)};
    ImageBatch same = gaussian_blur(x, 0.0);
    CHECK(same.data.v == x.data.v);

    ImageBatch constant;
    constant.data = Tensor(1, 3, 16, 16);
    std::fill(constant.data.v.begin(), constant.data.v.end(), 0.42f);
    ImageBatch blurred = gaussian_blur(constant, 1.5);
    for (float v : blurred.data.v) CHECK(v == doctest::Approx(0.42f).epsilon(1e-5));

    CHECK_THROWS_AS(gaussian_blur(x, -0.5), ValueError);

    // blur(flip(x)) = flip(blur(x)) for the symmetric kernel
    auto hflip = [](const Tensor& t) {
        Tensor out = t;
        for (int bi = 0; bi < t.b; ++bi)
            for (int c = 0; c < t.c; ++c)
                for (int y = 0; y < t.h; ++y)
                    for (int xx = 0; xx < t.w; ++xx)
                        out.at(bi, c, y, xx) = t.at(bi, c, y, t.w - 1 - xx);
        return out;
    };
    ImageBatch a = gaussian_blur(ImageBatch{hflip(x.data)}, 1.0);
    Tensor b = hflip(gaussian_blur(x, 1.0).data);
    for (size_t j = 0; j < a.data.size(); ++j)
        CHECK(a.data.v[j] == doctest::Approx(b.v[j]).epsilon(1e-6));
}

TEST_CASE("destruction rate brute-force oracle and degenerate flag") {
    VictimModel m = fixture_victim("cnn_a", 10, 50);
    ImageBatch x{uniform_tensor(16, 3, 32, 32, 51)};
    ImageBatch adv{uniform_tensor(16, 3, 32, 32, 52)};
    LabelTensor labels = predict(m, x);  // all clean-correct by construction

    const double sigma = 0.8;
    std::optional<double> rate = destruction_rate(m, x, labels, adv, sigma);
    LabelTensor pa = predict(m, adv);
    LabelTensor pb = predict(m, gaussian_blur(adv, sigma));
    int qualifying = 0, recovered = 0;
    for (int i = 0; i < 16; ++i)
        if (pa.at(i, 0, 0) != labels.at(i, 0, 0)) {
            ++qualifying;
            recovered += pb.at(i, 0, 0) == labels.at(i, 0, 0);
        }
    if (qualifying == 0) {
        CHECK_FALSE(rate.has_value());
    } else {
        REQUIRE(rate.has_value());
        CHECK(*rate == doctest::Approx(static_cast<double>(recovered) / qualifying));
        CHECK(*rate >= 0.0);
        CHECK(*rate <= 1.0);
    }

    // clean vs clean: nothing is fooled, so the rate is undefined
    CHECK_FALSE(destruction_rate(m, x, labels, x, sigma).has_value());
}

TEST_CASE("timing study reports positive medians and the ratio") {
    VictimModel m = fixture_victim("cnn_a", 10, 60);
    AttackSpec spec;
    spec.mode = AttackMode::ImageDependent;
    spec.loss.kind = LossKind::NontargetedCE;
    spec.budget = {NormP::LInf, 8.0 / 255.0};
    spec.victims = {{m.id, 1.0}};
    spec.generator = {GeneratorArch::ResNet, 4, 1, 3, 3, 61};
    AttackArtifact art;
    art.spec = spec;
    art.gen = build_generator(spec.generator);

    ImageBatch x{uniform_tensor(8, 3, 32, 32, 62)};
    TimingStats stats = timing_study(art, m, 5, x, 3);
    CHECK(stats.generator_median_ms > 0);
    CHECK(stats.baseline_median_ms > 0);
    CHECK(stats.generator_mean_ms > 0);
    CHECK(stats.speedup_median ==
          doctest::Approx(stats.baseline_median_ms / stats.generator_median_ms));
    CHECK(stats.images == 8);
    CHECK_THROWS_AS(timing_study(art, m, 5, x, 2), ValueError);
}
