// Command-line front end. Every subcommand reads a flat config document,
// applies flag overrides, runs one pipeline, and writes its artifacts plus a
// report under the run directory.

#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "advgen/runner.hpp"
#include "advgen/studies.hpp"

using namespace advgen;
namespace fs = std::filesystem;

namespace {

struct CliState {
    std::string config_path;
    std::string out = "run";
    uint64_t seed = 0;
    bool seed_set = false;

    double epsilon_255 = 0.0;
    std::string norm;
    std::string victim;
    std::string target;
    std::string sigma;
    int steps = 0;

    ConfigDoc cfg;
    RunDirs dirs;

    uint64_t root_seed() const {
        if (seed_set) return seed;
        const std::string* s = cfg.find("run", "seed");
        return s ? std::stoull(*s) : 0;
    }
    std::string registry_dir() const { return cfg.get_or("victims", "registry", dirs.checkpoints); }
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = ConfigDoc::trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

DatasetHandle load_dataset(const CliState& st) {
    std::string kind = st.cfg.get("dataset", "kind");
    if (kind == "cifar10") return load_cifar10(st.cfg.get("dataset", "dir"));
    if (kind == "seg_synth") {
        int count = std::stoi(st.cfg.get_or("dataset", "count", "1200"));
        uint64_t seed = st.cfg.find("dataset", "seed")
                            ? std::stoull(st.cfg.get("dataset", "seed"))
                            : sub_seed(st.root_seed(), "dataset");
        return synthesize_segmentation_dataset(count, seed);
    }
    throw ConfigError("unknown dataset kind: " + kind);
}

ImageBatch split_images(const Split& s, int limit = 0) {
    int n = limit > 0 ? std::min(limit, s.count()) : s.count();
    ImageBatch x;
    x.data = Tensor(n, s.images.c, s.images.h, s.images.w);
    std::memcpy(x.data.v.data(), s.images.v.data(), x.data.size() * sizeof(float));
    return x;
}

LabelTensor split_labels(const Split& s, int limit = 0) {
    int n = limit > 0 ? std::min(limit, s.count()) : s.count();
    LabelTensor l(n, s.labels.h, s.labels.w);
    std::memcpy(l.v.data(), s.labels.v.data(), l.size() * sizeof(int32_t));
    return l;
}

// A target is either an integer class, the keyword "stripes", or the path of
// a text file holding "H W" followed by H*W class indices.
void apply_target(LossSpec& loss, const std::string& target) {
    if (target == "stripes") {
        loss.target_map = make_stripe_target();
        return;
    }
    try {
        size_t used = 0;
        int cls = std::stoi(target, &used);
        if (used == target.size()) {
            loss.target_class = cls;
            return;
        }
    } catch (const std::exception&) {
    }
    std::ifstream is(target);
    if (!is) throw ConfigError("cannot read target map: " + target);
    int h, w;
    if (!(is >> h >> w) || h < 1 || w < 1) throw ConfigError("bad target map header: " + target);
    LabelTensor map(1, h, w);
    for (auto& v : map.v)
        if (!(is >> v)) throw ConfigError("truncated target map: " + target);
    loss.target_map = std::move(map);
}

AttackSpec build_attack_spec(const CliState& st, const DatasetHandle& ds) {
    AttackSpec spec;
    std::string mode = st.cfg.get_or("attack", "mode", "image_dependent");
    if (mode == "universal")
        spec.mode = AttackMode::Universal;
    else if (mode == "image_dependent")
        spec.mode = AttackMode::ImageDependent;
    else
        throw ConfigError("unknown attack mode: " + mode);

    spec.loss.kind = loss_kind_from_name(st.cfg.get_or("attack", "loss", "nontargeted_ce"));
    std::string target = !st.target.empty() ? st.target : st.cfg.get_or("attack", "target", "");
    if (!target.empty()) apply_target(spec.loss, target);

    std::string norm = !st.norm.empty() ? st.norm : st.cfg.get_or("attack", "norm", "inf");
    if (norm != "2" && norm != "inf") throw ConfigError("norm must be 2 or inf");
    double eps255 = st.epsilon_255 > 0 ? st.epsilon_255 : st.cfg.get_double("attack", "epsilon_255");
    int64_t n_pixels = static_cast<int64_t>(ds.channels) * ds.height * ds.width;
    int64_t n_ref = std::stoll(st.cfg.get_or("attack", "n_ref", "3072"));
    spec.budget = budget_from_paper_units(norm == "2" ? NormP::L2 : NormP::LInf, eps255, n_pixels,
                                          n_ref);

    for (const std::string& entry : split_list(st.cfg.get("attack", "victims"))) {
        auto colon = entry.find(':');
        VictimRef ref;
        ref.id = entry.substr(0, colon);
        if (colon != std::string::npos) ref.lambda = std::stod(entry.substr(colon + 1));
        spec.victims.push_back(ref);
    }

    std::string arch = st.cfg.get_or("attack", "generator", "resnet");
    if (arch != "resnet" && arch != "unet") throw ConfigError("generator must be resnet or unet");
    spec.generator.arch = arch == "unet" ? GeneratorArch::UNet : GeneratorArch::ResNet;
    spec.generator.base_filters = std::stoi(st.cfg.get_or("attack", "base_filters", "16"));
    spec.generator.depth = std::stoi(st.cfg.get_or("attack", "depth", "3"));
    spec.generator.in_channels = ds.channels;
    spec.generator.out_channels = ds.channels;
    spec.generator.seed = sub_seed(st.root_seed(), "generator-init");

    spec.optimizer.lr = std::stod(st.cfg.get_or("attack", "lr", "1e-3"));
    spec.epochs = std::stoi(st.cfg.get_or("attack", "epochs", "5"));
    spec.batch_size = std::stoi(st.cfg.get_or("attack", "batch_size", "32"));
    spec.max_steps = std::stoi(st.cfg.get_or("attack", "max_steps", "0"));
    spec.seed = sub_seed(st.root_seed(), "attack");
    return spec;
}

std::vector<VictimModel> load_victims(const CliState& st, const std::vector<VictimRef>& refs) {
    std::vector<VictimModel> out;
    for (const VictimRef& r : refs) out.push_back(registry_load(st.registry_dir(), r.id));
    return out;
}

std::string default_artifact_path(const CliState& st) {
    return st.dirs.checkpoints + "/attack.ckpt";
}

AttackArtifact load_artifact(const CliState& st) {
    std::string path = st.cfg.get_or("eval", "artifact", default_artifact_path(st));
    if (!fs::exists(path)) throw ConfigError("missing attack artifact: " + path);
    return load_attack_artifact(path);
}

void finish_report(const CliState& st, EvalReport& report, const std::string& name) {
    report.provenance["seed"] = std::to_string(st.root_seed());
    write_report(report, st.dirs.reports + "/" + name + ".txt");
    st.cfg.write_file(st.dirs.config + "/" + name + ".cfg");
}

// ---------------------------------------------------------------------------

int cmd_victim_train(CliState& st) {
    DatasetHandle ds = load_dataset(st);
    std::string arch = !st.victim.empty() ? st.victim : st.cfg.get("victims", "arch");
    VictimTrainConfig cfg;
    cfg.epochs = std::stoi(st.cfg.get_or("victims", "epochs", "4"));
    cfg.batch_size = std::stoi(st.cfg.get_or("victims", "batch_size", "64"));
    cfg.lr = std::stod(st.cfg.get_or("victims", "lr", "1e-3"));
    VictimModel model = train_victim(arch, ds, cfg, st.root_seed(), &std::cout);
    registry_save(st.registry_dir(), model);

    EvalReport report;
    report.provenance["victim"] = model.id;
    report.provenance["arch"] = model.arch;
    report.scalars["clean_accuracy"] = model.clean_accuracy;
    report.counts["train_samples"] = ds.split("train").count();
    finish_report(st, report, "victim_train_" + model.id);
    std::cout << "trained " << model.id << " clean accuracy " << model.clean_accuracy << "\n";
    return 0;
}

int cmd_attack_train(CliState& st) {
    DatasetHandle ds = load_dataset(st);
    AttackSpec spec = build_attack_spec(st, ds);
    std::vector<VictimModel> victims = load_victims(st, spec.victims);
    std::vector<const VictimModel*> ptrs;
    for (VictimModel& v : victims) ptrs.push_back(&v);

    AttackArtifact artifact;
    if (spec.mode == AttackMode::Universal && ptrs.size() > 1)
        artifact = train_multi_fool(spec, ptrs, ds, &std::cout);
    else if (spec.mode == AttackMode::Universal)
        artifact = train_universal(spec, ptrs, ds, &std::cout);
    else
        artifact = train_image_dependent(spec, ptrs, ds, &std::cout);
    save_attack_artifact(default_artifact_path(st), artifact);

    EvalReport report;
    report.provenance["artifact"] = default_artifact_path(st);
    for (size_t i = 0; i < spec.victims.size(); ++i)
        report.provenance["victim." + std::to_string(i)] = spec.victims[i].id;
    report_budget(report, spec.budget.p,
                  st.epsilon_255 > 0 ? st.epsilon_255 : st.cfg.get_double("attack", "epsilon_255"),
                  static_cast<int64_t>(ds.channels) * ds.height * ds.width,
                  std::stoll(st.cfg.get_or("attack", "n_ref", "3072")));
    for (const EpochStats& e : artifact.history) {
        std::string key = "epoch." + std::to_string(e.epoch);
        report.scalars[key + ".loss"] = e.mean_loss;
        report.scalars[key + ".val_metric"] = e.val_metric;
    }
    if (!artifact.history.empty())
        report.scalars["final_val_metric"] = artifact.history.back().val_metric;
    report.counts["epochs"] = static_cast<int64_t>(artifact.history.size());
    report.provenance["artifact_checksum"] =
        std::to_string(file_checksum(default_artifact_path(st)));
    finish_report(st, report, "attack_train");
    return 0;
}

int cmd_evaluate(CliState& st) {
    DatasetHandle ds = load_dataset(st);
    AttackArtifact artifact = load_artifact(st);
    std::string victim_id =
        !st.victim.empty() ? st.victim
                           : st.cfg.get_or("eval", "victim", artifact.spec.victims.front().id);
    VictimModel model = registry_load(st.registry_dir(), victim_id);
    const Split& split = ds.split(st.cfg.get_or("eval", "split", "test"));
    int limit = std::stoi(st.cfg.get_or("eval", "max_samples", "0"));

    ImageBatch clean = split_images(split, limit);
    LabelTensor labels = split_labels(split, limit);
    ImageBatch adv = apply_attack(artifact, clean);

    EvalReport report;
    report.provenance["artifact_victims"] = artifact.spec.victims.front().id;
    report.provenance["eval_victim"] = victim_id;
    report.counts["samples"] = clean.data.b;
    report.scalars["clean_accuracy"] = accuracy(model, clean, labels);
    report.scalars["adv_accuracy"] = accuracy(model, adv, labels);
    report.scalars["fooling_ratio"] = fooling_ratio(model, clean, adv);
    if (model.task == Task::Segmentation) {
        report.scalars["clean_mean_iou"] = mean_iou(predict(model, clean), labels, model.num_classes);
        report.scalars["adv_mean_iou"] = mean_iou(predict(model, adv), labels, model.num_classes);
    }
    if (artifact.spec.loss.targeted()) {
        LabelTensor target = detail::broadcast_target(artifact.spec.loss, clean.data.b,
                                                      model.task == Task::Segmentation ? ds.height : 1,
                                                      model.task == Task::Segmentation ? ds.width : 1);
        report.scalars["target_success"] = target_success(model, adv, target);
    }
    finish_report(st, report, "evaluate_" + victim_id);
    std::cout << "fooling ratio " << report.scalars["fooling_ratio"] << "\n";
    return 0;
}

int cmd_transfer(CliState& st) {
    DatasetHandle ds = load_dataset(st);
    std::vector<std::string> artifact_paths = split_list(st.cfg.get("eval", "artifacts"));
    std::vector<AttackArtifact> artifacts;
    for (const std::string& p : artifact_paths) {
        if (!fs::exists(p)) throw ConfigError("missing attack artifact: " + p);
        artifacts.push_back(load_attack_artifact(p));
    }
    std::vector<std::string> victim_ids = split_list(st.cfg.get("eval", "victims"));
    std::vector<VictimModel> victims;
    for (const std::string& id : victim_ids) victims.push_back(registry_load(st.registry_dir(), id));

    std::vector<AttackArtifact*> aptrs;
    for (AttackArtifact& a : artifacts) aptrs.push_back(&a);
    std::vector<const VictimModel*> vptrs;
    for (VictimModel& v : victims) vptrs.push_back(&v);
    const Split& split = ds.split(st.cfg.get_or("eval", "split", "test"));
    auto matrix = transfer_matrix(aptrs, vptrs, split);

    EvalReport report;
    report.counts["rows"] = static_cast<int64_t>(matrix.size());
    report.counts["cols"] = static_cast<int64_t>(victim_ids.size());
    report.counts["samples"] = split.count();
    for (size_t i = 0; i < matrix.size(); ++i) {
        report.provenance["row." + std::to_string(i)] = artifact_paths[i];
        for (size_t j = 0; j < matrix[i].size(); ++j)
            report.scalars["matrix." + std::to_string(i) + "." + victim_ids[j]] = matrix[i][j];
    }
    finish_report(st, report, "transfer");
    return 0;
}

int cmd_blur_study(CliState& st) {
    DatasetHandle ds = load_dataset(st);
    AttackArtifact artifact = load_artifact(st);
    std::string victim_id = !st.victim.empty()
                                ? st.victim
                                : st.cfg.get_or("eval", "victim", artifact.spec.victims.front().id);
    VictimModel model = registry_load(st.registry_dir(), victim_id);
    const Split& split = ds.split(st.cfg.get_or("eval", "split", "test"));
    int limit = std::stoi(st.cfg.get_or("eval", "max_samples", "0"));
    ImageBatch clean = split_images(split, limit);
    LabelTensor labels = split_labels(split, limit);
    ImageBatch adv = apply_attack(artifact, clean);

    int steps = st.steps > 0 ? st.steps : std::stoi(st.cfg.get_or("eval", "steps", "100"));
    ImageBatch adv_baseline = baseline_iterative_ll(model, clean, artifact.spec.budget, steps,
                                                    artifact.spec.budget.epsilon / 10.0);

    std::string sigmas = !st.sigma.empty() ? st.sigma : st.cfg.get_or("eval", "sigmas", "0.5,0.75,1,1.25");
    EvalReport report;
    report.provenance["eval_victim"] = victim_id;
    report.counts["samples"] = clean.data.b;
    report.counts["baseline_steps"] = steps;
    for (const std::string& s : split_list(sigmas)) {
        double sigma = std::stod(s);
        std::optional<double> gen = destruction_rate(model, clean, labels, adv, sigma);
        std::optional<double> base = destruction_rate(model, clean, labels, adv_baseline, sigma);
        if (gen)
            report.scalars["destruction.generative.sigma_" + s] = *gen;
        else
            report.provenance["destruction.generative.sigma_" + s] = "undefined";
        if (base)
            report.scalars["destruction.iterative.sigma_" + s] = *base;
        else
            report.provenance["destruction.iterative.sigma_" + s] = "undefined";
    }
    finish_report(st, report, "blur_study");
    return 0;
}

int cmd_timing(CliState& st) {
    DatasetHandle ds = load_dataset(st);
    AttackArtifact artifact = load_artifact(st);
    std::string victim_id = !st.victim.empty()
                                ? st.victim
                                : st.cfg.get_or("eval", "victim", artifact.spec.victims.front().id);
    VictimModel model = registry_load(st.registry_dir(), victim_id);
    const Split& split = ds.split(st.cfg.get_or("eval", "split", "test"));
    int limit = std::stoi(st.cfg.get_or("eval", "max_samples", "128"));
    ImageBatch x = split_images(split, limit);

    int steps = st.steps > 0 ? st.steps : std::stoi(st.cfg.get_or("eval", "steps", "100"));
    int repeats = std::stoi(st.cfg.get_or("eval", "repeats", "5"));
    TimingStats stats = timing_study(artifact, model, steps, x, repeats);

    EvalReport report;
    report.counts["images"] = stats.images;
    report.counts["baseline_steps"] = steps;
    report.counts["repeats"] = repeats;
    report.scalars["generator_median_ms"] = stats.generator_median_ms;
    report.scalars["generator_mean_ms"] = stats.generator_mean_ms;
    report.scalars["baseline_median_ms"] = stats.baseline_median_ms;
    report.scalars["baseline_mean_ms"] = stats.baseline_mean_ms;
    report.scalars["speedup_median"] = stats.speedup_median;
    finish_report(st, report, "timing");
    std::cout << "median speedup " << stats.speedup_median << "x\n";
    return 0;
}

int cmd_export_viz(CliState& st) {
    DatasetHandle ds = load_dataset(st);
    AttackArtifact artifact = load_artifact(st);
    const Split& split = ds.split(st.cfg.get_or("eval", "split", "test"));
    ImageBatch x = split_images(split, std::stoi(st.cfg.get_or("eval", "max_samples", "4")));
    export_viz(artifact, x, st.dirs.viz + "/sample");
    std::cout << "wrote " << st.dirs.viz << "/sample_{clean,perturbation,adversarial}.ppm\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Trainable adversarial perturbation toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    CliState st;

    app.add_option("--config", st.config_path, "run configuration file")->required();
    app.add_option("--out", st.out, "run output directory");
    app.add_option("--seed", st.seed, "override the global seed")
        ->each([&](const std::string&) { st.seed_set = true; });

    CLI::App* victim_train = app.add_subcommand("victim-train", "train and register a victim model");
    victim_train->add_option("--victim", st.victim, "architecture to train");
    CLI::App* attack_train = app.add_subcommand("attack-train", "train a perturbation generator");
    CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a stored attack artifact");
    evaluate->add_option("--victim", st.victim, "victim id to evaluate against");
    CLI::App* transfer = app.add_subcommand("transfer", "fooling-ratio transfer matrix");
    CLI::App* blur = app.add_subcommand("blur-study", "destruction rates under Gaussian blur");
    blur->add_option("--victim", st.victim, "victim id to evaluate against");
    blur->add_option("--sigma", st.sigma, "comma-separated blur sigmas");
    blur->add_option("--steps", st.steps, "iterative baseline steps");
    CLI::App* timing = app.add_subcommand("timing", "per-image latency versus iterative baseline");
    timing->add_option("--victim", st.victim, "victim id for the baseline");
    timing->add_option("--steps", st.steps, "iterative baseline steps");
    CLI::App* viz = app.add_subcommand("export-viz", "write clean/perturbation/adversarial images");
    for (CLI::App* sub : {attack_train, evaluate, transfer, blur, timing}) {
        sub->add_option("--epsilon", st.epsilon_255, "budget in 0-255 units");
        sub->add_option("--norm", st.norm, "norm: 2 or inf")
            ->check(CLI::IsMember({"2", "inf"}));
    }
    attack_train->add_option("--victim", st.victim, "single victim id override");
    attack_train->add_option("--target", st.target, "target class, 'stripes', or map file");

    CLI11_PARSE(app, argc, argv);

    try {
        st.cfg = ConfigDoc::parse_file(st.config_path);
        if (st.seed_set) st.cfg.set("run", "seed", std::to_string(st.seed));
        st.dirs = make_run_dirs(st.out);
        if (!st.victim.empty() && app.got_subcommand(attack_train))
            st.cfg.set("attack", "victims", st.victim);

        if (app.got_subcommand(victim_train)) return cmd_victim_train(st);
        if (app.got_subcommand(attack_train)) return cmd_attack_train(st);
        if (app.got_subcommand(evaluate)) return cmd_evaluate(st);
        if (app.got_subcommand(transfer)) return cmd_transfer(st);
        if (app.got_subcommand(blur)) return cmd_blur_study(st);
        if (app.got_subcommand(timing)) return cmd_timing(st);
        if (app.got_subcommand(viz)) return cmd_export_viz(st);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
