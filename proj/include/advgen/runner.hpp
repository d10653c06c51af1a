#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "advgen/attacks.hpp"
#include "advgen/data.hpp"
#include "advgen/evaluation.hpp"

namespace advgen {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat, line-oriented key/value document with [section] headers. Order is
// preserved on write; '#' starts a comment line.
struct ConfigDoc {
    std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> sections;

    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    static ConfigDoc parse(std::istream& is) {
        ConfigDoc doc;
        std::string line;
        std::string current;
        while (std::getline(is, line)) {
            line = trim(line);
            if (line.empty() || line[0] == '#') continue;
            if (line.front() == '[' && line.back() == ']') {
                current = line.substr(1, line.size() - 2);
                doc.sections.emplace_back(current, std::vector<std::pair<std::string, std::string>>{});
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError("malformed line: " + line);
            if (doc.sections.empty()) throw ConfigError("key before any [section]: " + line);
            doc.sections.back().second.emplace_back(trim(line.substr(0, eq)),
                                                    trim(line.substr(eq + 1)));
        }
        return doc;
    }

    static ConfigDoc parse_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config: " + path);
        return parse(is);
    }

    void write(std::ostream& os) const {
        for (auto& [name, entries] : sections) {
            os << "[" << name << "]\n";
            for (auto& [k, v] : entries) os << k << " = " << v << "\n";
            os << "\n";
        }
    }
    void write_file(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw ConfigError("cannot write config: " + path);
        write(os);
    }

    const std::string* find(const std::string& section, const std::string& key) const {
        for (auto& [name, entries] : sections)
            if (name == section)
                for (auto& [k, v] : entries)
                    if (k == key) return &v;
        return nullptr;
    }
    std::string get(const std::string& section, const std::string& key) const {
        const std::string* v = find(section, key);
        if (!v) throw ConfigError("missing config key [" + section + "] " + key);
        return *v;
    }
    std::string get_or(const std::string& section, const std::string& key,
                       const std::string& fallback) const {
        const std::string* v = find(section, key);
        return v ? *v : fallback;
    }
    double get_double(const std::string& section, const std::string& key) const {
        return std::stod(get(section, key));
    }
    int get_int(const std::string& section, const std::string& key) const {
        return std::stoi(get(section, key));
    }
    void set(const std::string& section, const std::string& key, const std::string& value) {
        for (auto& [name, entries] : sections)
            if (name == section) {
                for (auto& [k, v] : entries)
                    if (k == key) {
                        v = value;
                        return;
                    }
                entries.emplace_back(key, value);
                return;
            }
        sections.emplace_back(section,
                              std::vector<std::pair<std::string, std::string>>{{key, value}});
    }
};

// ---------------------------------------------------------------------------
// Report document: stable key ordering, exact scalar round-trip via %.17g.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_report(const EvalReport& report, const std::string& out_path) {
    std::ofstream os(out_path);
    if (!os) throw ConfigError("cannot write report: " + out_path);
    os << "[provenance]\n";
    for (auto& [k, v] : report.provenance) os << k << " = " << v << "\n";
    os << "\n[metrics]\n";
    for (auto& [k, v] : report.scalars) os << k << " = " << format_double(v) << "\n";
    os << "\n[counts]\n";
    for (auto& [k, v] : report.counts) os << k << " = " << v << "\n";
    if (!os) throw ConfigError("report write failed: " + out_path);
}

inline EvalReport parse_report(const std::string& path) {
    ConfigDoc doc = ConfigDoc::parse_file(path);
    EvalReport report;
    for (auto& [name, entries] : doc.sections) {
        for (auto& [k, v] : entries) {
            if (name == "provenance")
                report.provenance[k] = v;
            else if (name == "metrics")
                report.scalars[k] = std::stod(v);
            else if (name == "counts")
                report.counts[k] = std::stoll(v);
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Lossless 8-bit image export (binary PPM).
// ---------------------------------------------------------------------------

inline void write_ppm(const std::string& path, const Tensor& img, int sample = 0) {
    if (img.c != 3) throw ShapeError("PPM export expects 3 channels");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write image: " + path);
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = std::clamp(img.at(sample, c, y, x), 0.f, 1.f);
                os.put(static_cast<char>(static_cast<uint8_t>(std::lround(v * 255.f))));
            }
}

inline Tensor read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot read image: " + path);
    std::string magic;
    int w, h, maxv;
    is >> magic >> w >> h >> maxv;
    if (magic != "P6" || maxv != 255) throw ConfigError("unsupported image format: " + path);
    is.get();  // single whitespace after header
    Tensor img(1, 3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(0, c, y, x) = static_cast<float>(static_cast<uint8_t>(is.get())) / 255.f;
    return img;
}

// Min-max contrast enhancement per image; a constant perturbation maps to
// mid-gray.
inline Tensor enhance_perturbation(const Tensor& pert, int sample = 0) {
    Tensor out(1, pert.c, pert.h, pert.w);
    const float* p = pert.sample(sample);
    float lo = p[0], hi = p[0];
    for (size_t j = 0; j < pert.sample_size(); ++j) {
        lo = std::min(lo, p[j]);
        hi = std::max(hi, p[j]);
    }
    if (hi - lo < 1e-12f) {
        std::fill(out.v.begin(), out.v.end(), 0.5f);
        return out;
    }
    for (size_t j = 0; j < pert.sample_size(); ++j) out.v[j] = (p[j] - lo) / (hi - lo);
    return out;
}

// Writes <prefix>_clean.ppm, <prefix>_perturbation.ppm (enhanced) and
// <prefix>_adversarial.ppm for the first sample of the batch.
inline void export_viz(AttackArtifact& artifact, const ImageBatch& x, const std::string& prefix) {
    ImageBatch adv = apply_attack(artifact, x);
    Tensor pert(1, x.data.c, x.data.h, x.data.w);
    if (artifact.spec.mode == AttackMode::Universal) {
        pert = *artifact.universal;
    } else {
        Perturbation delta = emit_perturbation(artifact.gen, x.data, artifact.spec.budget);
        std::memcpy(pert.v.data(), delta.data.sample(0), pert.size() * sizeof(float));
    }
    write_ppm(prefix + "_clean.ppm", x.data, 0);
    write_ppm(prefix + "_perturbation.ppm", enhance_perturbation(pert));
    write_ppm(prefix + "_adversarial.ppm", adv.data, 0);
}

// ---------------------------------------------------------------------------
// Run directory layout.
// ---------------------------------------------------------------------------

struct RunDirs {
    std::string root, config, checkpoints, reports, viz;
};

inline RunDirs make_run_dirs(const std::string& out) {
    namespace fs = std::filesystem;
    RunDirs d{out, out + "/config", out + "/checkpoints", out + "/reports", out + "/viz"};
    fs::create_directories(d.config);
    fs::create_directories(d.checkpoints);
    fs::create_directories(d.reports);
    fs::create_directories(d.viz);
    return d;
}

inline uint64_t file_checksum(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot checksum: " + path);
    uint64_t hash = 14695981039346656037ull;
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount()) {
        for (std::streamsize i = 0; i < is.gcount(); ++i) {
            hash ^= static_cast<uint8_t>(buf[i]);
            hash *= 1099511628211ull;
        }
    }
    return hash;
}

// Budget in both canonical and 0-255 units plus the conversion inputs, so the
// report's paper-unit value maps back through budget_from_paper_units exactly.
inline void report_budget(EvalReport& report, NormP p, double epsilon_255, int64_t n_pixels,
                          int64_t n_ref) {
    NormBudget budget = budget_from_paper_units(p, epsilon_255, n_pixels, n_ref);
    report.provenance["budget.norm"] = p == NormP::L2 ? "2" : "inf";
    report.scalars["budget.epsilon"] = budget.epsilon;
    report.scalars["budget.epsilon_255"] = epsilon_255;
    report.counts["budget.n_pixels"] = n_pixels;
    report.counts["budget.n_ref"] = n_ref;
}

}  // namespace advgen
