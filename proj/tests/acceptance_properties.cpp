// Acceptance gate, part 1: exact property suites. Each numbered criterion
// prints one PASS/FAIL line; the process exits nonzero if any fail.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "advgen/attacks.hpp"
#include "advgen/runner.hpp"

using namespace advgen;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void criterion(int n, bool pass, const std::string& what) {
    std::printf("criterion %2d: %s  %s\n", n, pass ? "PASS" : "FAIL", what.c_str());
    if (!pass) ++failures;
}

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

DatasetHandle tiny_dataset(int n, uint64_t seed, Task task) {
    if (task == Task::Segmentation) return synthesize_segmentation_dataset(n, seed);
    DatasetHandle ds;
    ds.task = Task::Classification;
    ds.num_classes = 10;
    ds.channels = 3;
    ds.height = ds.width = 32;
    Split s;
    s.images = uniform_tensor(n, 3, 32, 32, seed, 0.2f, 0.8f);
    s.labels = LabelTensor(n, 1, 1);
    for (int i = 0; i < n; ++i) s.labels.at(i, 0, 0) = i % 10;
    ds.splits["train"] = s;
    ds.splits["val"] = s;
    return ds;
}

bool within_budget(const Tensor& t, const NormBudget& b) {
    for (int bi = 0; bi < t.b; ++bi)
        if (sample_norm(t, bi, b.p) > b.epsilon * (1 + 1e-6)) return false;
    return true;
}

double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-6});
}

// ---------------------------------------------------------------------------

bool budget_invariant() {
    bool ok = true;
    // raw generator outputs projected under both norms, both architectures
    for (GeneratorArch arch : {GeneratorArch::UNet, GeneratorArch::ResNet})
        for (NormP p : {NormP::L2, NormP::LInf}) {
            GeneratorConfig cfg;
            cfg.arch = arch;
            cfg.base_filters = 8;
            cfg.depth = 2;
            cfg.seed = 11;
            GeneratorHandle gen = build_generator(cfg);
            NormBudget budget{p, p == NormP::L2 ? 0.5 : 10.0 / 255.0};
            Tensor x = uniform_tensor(4, 3, 32, 32, 12);
            Perturbation pert = emit_perturbation(gen, x, budget);
            ok &= within_budget(pert.data, budget);
            // idempotence within 1e-6
            Perturbation again = scale_to_budget(pert.data, budget);
            for (size_t j = 0; j < pert.data.size(); ++j)
                ok &= std::fabs(again.data.v[j] - pert.data.v[j]) <= 1e-6f;
        }

    // perturbations realized by the attack entry points
    VictimModel m = fixture_victim("cnn_a", 10, 13);
    DatasetHandle ds = tiny_dataset(16, 14, Task::Classification);
    AttackSpec spec;
    spec.loss.kind = LossKind::NontargetedCE;
    spec.budget = {NormP::LInf, 10.0 / 255.0};
    spec.victims = {{m.id, 1.0}};
    spec.generator = {GeneratorArch::ResNet, 4, 1, 3, 3, 15};
    spec.epochs = 1;
    spec.batch_size = 8;
    spec.seed = 16;

    spec.mode = AttackMode::Universal;
    AttackArtifact uni = train_universal(spec, {&m}, ds);
    ok &= uni.universal.has_value() && within_budget(*uni.universal, spec.budget);

    spec.mode = AttackMode::ImageDependent;
    AttackArtifact dep = train_image_dependent(spec, {&m}, ds);
    ImageBatch x{ds.split("train").images};
    Perturbation delta = emit_perturbation(dep.gen, x.data, spec.budget);
    ok &= within_budget(delta.data, spec.budget);

    // random raw tensors, heavy-tailed magnitudes
    for (uint64_t s = 0; s < 50; ++s) {
        Tensor raw = normal_tensor(2, 3, 8, 8, 1000 + s, s % 2 ? 10.f : 0.01f);
        for (NormP p : {NormP::L2, NormP::LInf}) {
            NormBudget b{p, 0.1};
            ok &= within_budget(scale_to_budget(raw, b).data, b);
        }
    }
    return ok;
}

bool frozen_victims() {
    bool ok = true;
    DatasetHandle ds = tiny_dataset(16, 20, Task::Classification);
    VictimModel m1 = fixture_victim("cnn_a", 10, 21);
    VictimModel m2 = fixture_victim("cnn_b", 10, 22);
    std::vector<float> snap1 = victim_snapshot(m1);
    std::vector<float> snap2 = victim_snapshot(m2);

    AttackSpec spec;
    spec.loss.kind = LossKind::NontargetedCE;
    spec.budget = {NormP::LInf, 10.0 / 255.0};
    spec.victims = {{m1.id, 1.0}};
    spec.generator = {GeneratorArch::ResNet, 4, 1, 3, 3, 23};
    spec.epochs = 1;
    spec.batch_size = 8;
    spec.seed = 24;

    spec.mode = AttackMode::Universal;
    train_universal(spec, {&m1}, ds);
    ok &= victim_snapshot(m1) == snap1;

    spec.mode = AttackMode::ImageDependent;
    train_image_dependent(spec, {&m1}, ds);
    ok &= victim_snapshot(m1) == snap1;

    spec.mode = AttackMode::Universal;
    spec.victims = {{m1.id, 0.5}, {m2.id, 0.5}};
    train_multi_fool(spec, {&m1, &m2}, ds);
    ok &= victim_snapshot(m1) == snap1;
    ok &= victim_snapshot(m2) == snap2;
    return ok;
}

bool loss_correctness() {
    bool ok = true;
    auto dist = [](int c, int index, double p_index) {
        PredictionDistribution d;
        d.probs = Tensor(1, c, 1, 1);
        double rest = (1.0 - p_index) / (c - 1);
        for (int i = 0; i < c; ++i) d.probs.v[i] = static_cast<float>(i == index ? p_index : rest);
        return d;
    };
    LabelTensor l(1, 1, 1);

    // closed forms at the uniform, e^{-1}, and one-hot points
    l.v[0] = 4;
    ok &= std::fabs(cross_entropy(dist(10, 0, 0.1), l)[0] - std::log(10.0)) < 1e-6;
    ok &= std::fabs(loss_nontargeted_ce(dist(10, 4, 0.1), l) + std::log(std::log(10.0))) < 1e-6;
    ok &= std::fabs(loss_nontargeted_ce(dist(10, 4, std::exp(-1.0)), l)) < 1e-6;
    ok &= std::fabs(loss_nontargeted_ce(dist(10, 4, 1.0), l, 1e-12) + std::log(1e-12)) < 1e-6;
    ok &= std::fabs(loss_targeted(dist(10, 4, std::exp(-1.0)), l)) < 1e-6;
    ok &= std::fabs(loss_targeted(dist(10, 4, 0.1), l) - std::log(std::log(10.0))) < 1e-6;
    ok &= std::fabs(loss_least_likely(dist(10, 4, 1.0), l, 1e-12) - std::log(1e-12)) < 1e-6;

    // finite-difference gradient agreement, C in {3, 10}
    for (int C : {3, 10}) {
        Tensor logits = normal_tensor(2, C, 1, 1, 300 + C);
        LabelTensor ref(2, 1, 1);
        ref.v = {1 % C, 2 % C};
        for (LossKind kind : {LossKind::NontargetedCE, LossKind::LeastLikely, LossKind::TargetedCE,
                              LossKind::LogitMarginNontargeted, LossKind::LogitMarginTargeted}) {
            LossSpec spec;
            spec.kind = kind;
            if (spec.targeted()) spec.target_class = ref.v[0];
            LossResult res = eval_loss(spec, logits, ref);
            const double h = 5e-3;
            for (size_t j = 0; j < logits.size(); ++j) {
                Tensor lp = logits, lm = logits;
                lp.v[j] += static_cast<float>(h);
                lm.v[j] -= static_cast<float>(h);
                double fd =
                    (eval_loss(spec, lp, ref).value - eval_loss(spec, lm, ref).value) / (2 * h);
                if (std::fabs(fd) < 1e-6 && std::fabs(res.dlogits.v[j]) < 1e-6) continue;
                ok &= rel_err(fd, res.dlogits.v[j]) < 1e-3;
            }
        }
    }

    // multi-fool reduction with weights (1, 0, ...)
    ok &= loss_multi_fool({0.75, 123.0, -9.0}, {1, 0, 0}) == 0.75;
    return ok;
}

bool metric_oracles() {
    bool ok = true;
    VictimModel m = fixture_victim("cnn_a", 10, 30);
    ImageBatch clean{uniform_tensor(16, 3, 32, 32, 31)};
    ImageBatch adv{uniform_tensor(16, 3, 32, 32, 32)};
    LabelTensor pc = predict(m, clean);
    LabelTensor pa = predict(m, adv);

    int changed = 0;
    for (int i = 0; i < 16; ++i) changed += pc.at(i, 0, 0) != pa.at(i, 0, 0);
    ok &= fooling_ratio(m, clean, adv) == changed / 16.0;

    LabelTensor target(1, 1, 1);
    target.v[0] = 5;
    int match = 0;
    for (int i = 0; i < 16; ++i) match += pa.at(i, 0, 0) == 5;
    ok &= target_success(m, adv, target) == match / 16.0;

    // mean IoU against a per-class loop on a random 16-sample fixture
    LabelTensor p(16, 8, 8), g(16, 8, 8);
    std::mt19937_64 rng(33);
    for (auto& v : p.v) v = static_cast<int32_t>(rng() % 5);
    for (auto& v : g.v) v = static_cast<int32_t>(rng() % 5);
    double acc = 0;
    int present = 0;
    for (int c = 0; c < 5; ++c) {
        int64_t inter = 0, uni = 0;
        for (size_t j = 0; j < p.size(); ++j) {
            inter += p.v[j] == c && g.v[j] == c;
            uni += p.v[j] == c || g.v[j] == c;
        }
        if (uni) {
            acc += static_cast<double>(inter) / uni;
            ++present;
        }
    }
    ok &= mean_iou(p, g, 5) == acc / present;

    // destruction rate against its defining loop
    const double sigma = 1.0;
    LabelTensor labels = pc;  // every sample clean-correct
    std::optional<double> rate = destruction_rate(m, clean, labels, adv, sigma);
    LabelTensor pb = predict(m, gaussian_blur(adv, sigma));
    int qualifying = 0, recovered = 0;
    for (int i = 0; i < 16; ++i)
        if (pa.at(i, 0, 0) != labels.at(i, 0, 0)) {
            ++qualifying;
            recovered += pb.at(i, 0, 0) == labels.at(i, 0, 0);
        }
    if (qualifying == 0)
        ok &= !rate.has_value();
    else
        ok &= rate.has_value() && *rate == static_cast<double>(recovered) / qualifying;
    ok &= !destruction_rate(m, clean, labels, clean, sigma).has_value();
    return ok;
}

bool format_roundtrips() {
    bool ok = true;
    fs::path dir = fs::temp_directory_path() / "advgen_acceptance_fmt";
    fs::remove_all(dir);
    fs::create_directories(dir);

    // CIFAR-10 binary re-serialization, byte-exact
    synthesize_classification_files(dir.string(), SynthClassConfig{40, 10, 10, 0.05f, 0.08f}, 41);
    DatasetHandle ds = load_cifar10(dir.string());
    const Split& train = ds.split("train");
    const Split& val = ds.split("val");
    Tensor all(train.count() + val.count(), 3, 32, 32);
    LabelTensor all_labels(train.count() + val.count(), 1, 1);
    for (int i = 0; i < train.count(); ++i) {
        std::memcpy(all.sample(i), train.images.sample(i), all.sample_size() * sizeof(float));
        all_labels.at(i, 0, 0) = train.labels.at(i, 0, 0);
    }
    for (int i = 0; i < val.count(); ++i) {
        std::memcpy(all.sample(train.count() + i), val.images.sample(i),
                    all.sample_size() * sizeof(float));
        all_labels.at(train.count() + i, 0, 0) = val.labels.at(i, 0, 0);
    }
    std::string rewritten = (dir / "rewritten.bin").string();
    write_cifar10_file(rewritten, all, all_labels);
    auto slurp = [](const std::string& p) {
        std::ifstream is(p, std::ios::binary);
        return std::vector<char>{std::istreambuf_iterator<char>(is),
                                 std::istreambuf_iterator<char>()};
    };
    ok &= slurp((dir / "data_batch_1.bin").string()) == slurp(rewritten);

    // checkpoint load reproduces predictions bit-identically
    VictimModel m = fixture_victim("cnn_c", 10, 42);
    registry_save((dir / "registry").string(), m);
    VictimModel loaded = registry_load((dir / "registry").string(), m.id);
    ImageBatch x{uniform_tensor(4, 3, 32, 32, 43)};
    ok &= victim_forward(m, x).logits.v == victim_forward(loaded, x).logits.v;

    // report round-trip, exact scalars
    EvalReport report;
    report.scalars["fooling_ratio"] = 0.6180339887498949;
    report.scalars["tiny"] = 3.0e-17;
    report.counts["samples"] = 1234;
    report.provenance["artifact"] = "a1";
    std::string rp = (dir / "report.txt").string();
    write_report(report, rp);
    EvalReport back = parse_report(rp);
    ok &= back.scalars.at("fooling_ratio") == report.scalars.at("fooling_ratio");
    ok &= back.scalars.at("tiny") == report.scalars.at("tiny");
    ok &= back.counts.at("samples") == 1234;

    fs::remove_all(dir);
    return ok;
}

}  // namespace

int main() {
    criterion(1, budget_invariant(), "norm budget and projection idempotence");
    criterion(2, frozen_victims(), "victim parameters bitwise unchanged by attack training");
    criterion(3, loss_correctness(), "loss closed forms, gradients, multi-fool reduction");
    criterion(4, metric_oracles(), "metrics equal brute-force loops on random fixtures");
    criterion(5, format_roundtrips(), "dataset, checkpoint, and report round-trips");
    return failures == 0 ? 0 : 1;
}
