#pragma once

// Variant registry: the eight built-in model configurations with their
// training schedules and budget targets, plus the key=value config file
// reader/writer used by the CLI.

#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "deimv2/core.hpp"

namespace deimv2 {

enum class BackboneKind { ViTSPlus, ViTS, ViTTPlus, ViTT, HGB0, HGP, HGF, HGA };
enum class AdapterKind { STA, None };

inline const char* backbone_name(BackboneKind k) {
    switch (k) {
        case BackboneKind::ViTSPlus: return "ViT-S+";
        case BackboneKind::ViTS:     return "ViT-S";
        case BackboneKind::ViTTPlus: return "ViT-T+";
        case BackboneKind::ViTT:     return "ViT-T";
        case BackboneKind::HGB0:     return "HGv2-B0";
        case BackboneKind::HGP:      return "HGv2-P";
        case BackboneKind::HGF:      return "HGv2-F";
        case BackboneKind::HGA:      return "HGv2-A";
    }
    return "?";
}
inline bool is_vit(BackboneKind k) {
    return k == BackboneKind::ViTSPlus || k == BackboneKind::ViTS ||
           k == BackboneKind::ViTTPlus || k == BackboneKind::ViTT;
}

struct VariantSpec {
    std::string name;          // X, L, M, S, Nano, Pico, Femto, Atto
    BackboneKind backbone = BackboneKind::ViTT;
    AdapterKind adapter = AdapterKind::None;
    int d_back = 0;
    int d_enc = 0;
    int d_dec = 0;
    int backbone_depth = 0;    // transformer depth for ViT, stage count for HGNetv2
    int decoder_layers = 0;
    int num_scales = 0;
    int num_queries = 0;
    int input_resolution = 0;
    int num_classes = 80;
    int64_t target_params = 0;
    double target_gflops = 0;
    double reported_ap = 0;
};

struct AugSetting {
    double prob = 0;
    int epoch_lo = 0;          // window [lo, hi], inclusive; empty when hi < lo
    int epoch_hi = -1;
    bool window_empty() const { return epoch_hi < epoch_lo; }
};

struct TrainSchedule {
    double weight_decay = 0;
    double base_lr = 0;
    double min_lr = 0;
    double backbone_lr = 0;
    double backbone_min_lr = 0;
    int epochs = 0;
    bool local_loss_enabled = true;
    AugSetting mosaic, mixup, copy_blend;
};

inline std::vector<std::string> builtin_names() {
    return {"X", "L", "M", "S", "Nano", "Pico", "Femto", "Atto"};
}

// Architectural and schedule constants for every built-in variant.
inline const std::vector<std::pair<VariantSpec, TrainSchedule>>& builtin_variants() {
    static const std::vector<std::pair<VariantSpec, TrainSchedule>> table = [] {
        auto v = [](const char* name, BackboneKind bk, AdapterKind ad, int db, int de, int dd,
                    int depth, int dec, int sc, int q, int res, int64_t tp, double tg, double ap) {
            VariantSpec s;
            s.name = name; s.backbone = bk; s.adapter = ad;
            s.d_back = db; s.d_enc = de; s.d_dec = dd;
            s.backbone_depth = depth; s.decoder_layers = dec;
            s.num_scales = sc; s.num_queries = q; s.input_resolution = res;
            s.target_params = tp; s.target_gflops = tg; s.reported_ap = ap;
            return s;
        };
        auto t = [](double wd, double blr, double mlr, double bklr, double bkmin, int ep, bool local,
                    double mp, int ml, int mh, double xp, int xl, int xh, double cp, int cl, int ch) {
            TrainSchedule s;
            s.weight_decay = wd; s.base_lr = blr; s.min_lr = mlr;
            s.backbone_lr = bklr; s.backbone_min_lr = bkmin;
            s.epochs = ep; s.local_loss_enabled = local;
            s.mosaic = {mp, ml, mh};
            s.mixup = {xp, xl, xh};
            s.copy_blend = {cp, cl, ch};
            return s;
        };
        std::vector<std::pair<VariantSpec, TrainSchedule>> r;
        r.emplace_back(
            v("X", BackboneKind::ViTSPlus, AdapterKind::STA, 384, 256, 256, 12, 6, 3, 300, 640, 50260000, 151.6, 57.8),
            t(1.25e-4, 5e-4, 2.5e-4, 1e-6, 5e-7, 50, true, 0.5, 4, 29, 0.5, 4, 29, 0.5, 4, 50));
        r.emplace_back(
            v("L", BackboneKind::ViTS, AdapterKind::STA, 384, 256, 256, 12, 4, 3, 300, 640, 32180000, 96.32, 56.0),
            t(1.25e-4, 5e-4, 2.5e-4, 1.25e-5, 6.25e-6, 60, true, 0.5, 4, 34, 0.5, 4, 34, 0.5, 4, 60));
        r.emplace_back(
            v("M", BackboneKind::ViTTPlus, AdapterKind::STA, 256, 256, 256, 12, 4, 3, 300, 640, 18110000, 52.20, 53.0),
            t(1e-4, 5e-4, 2.5e-4, 2.5e-5, 1.25e-5, 90, true, 0.5, 4, 49, 0.5, 4, 49, 0.5, 4, 90));
        r.emplace_back(
            v("S", BackboneKind::ViTT, AdapterKind::STA, 192, 192, 192, 12, 4, 3, 300, 640, 9710000, 25.62, 50.9),
            t(1e-4, 5e-4, 2.5e-4, 2.5e-5, 1.25e-5, 120, true, 0.5, 4, 64, 0.5, 4, 64, 0.5, 4, 120));
        r.emplace_back(
            v("Nano", BackboneKind::HGB0, AdapterKind::None, 1024, 128, 128, 5, 3, 2, 300, 640, 3570000, 6.86, 43.0),
            t(1e-4, 8e-4, 8e-4, 4e-4, 4e-4, 148, true, 0.5, 4, 78, 0.5, 4, 78, 0.4, 4, 78));
        r.emplace_back(
            v("Pico", BackboneKind::HGP, AdapterKind::None, 512, 112, 112, 4, 3, 2, 200, 640, 1510000, 5.15, 38.5),
            t(1e-4, 1.6e-3, 8e-4, 8e-4, 4e-4, 468, false, 0.5, 4, 250, 0.0, 0, -1, 0.0, 0, -1));
        r.emplace_back(
            v("Femto", BackboneKind::HGF, AdapterKind::None, 256, 96, 96, 3, 3, 2, 150, 416, 960000, 1.67, 31.0),
            t(1e-4, 1.6e-3, 8e-4, 8e-4, 4e-4, 468, false, 0.5, 4, 250, 0.0, 0, -1, 0.0, 0, -1));
        r.emplace_back(
            v("Atto", BackboneKind::HGA, AdapterKind::None, 256, 64, 64, 3, 3, 2, 100, 320, 490000, 0.76, 23.8),
            t(1e-4, 2e-3, 1e-3, 1e-3, 5e-4, 468, false, 0.3, 4, 250, 0.0, 0, -1, 0.0, 0, -1));
        return r;
    }();
    return table;
}

inline const std::pair<VariantSpec, TrainSchedule>& builtin(const std::string& name) {
    for (auto& e : builtin_variants())
        if (e.first.name == name) return e;
    std::string names;
    for (auto& n : builtin_names()) names += (names.empty() ? "" : ", ") + n;
    throw std::runtime_error("unknown variant '" + name + "'; valid names: " + names);
}

// ---------------------------------------------------------------------------
// validation

inline std::vector<std::string> validate(const VariantSpec& s, const TrainSchedule& t) {
    std::vector<std::string> v;
    auto req = [&](bool ok, const std::string& msg) { if (!ok) v.push_back(msg); };
    bool vit = is_vit(s.backbone);
    req(s.num_scales == 2 || s.num_scales == 3, "num_scales must be 2 or 3");
    req((s.adapter == AdapterKind::STA) == (s.num_scales == 3),
        "num_scales must be 3 exactly when adapter is STA");
    req(vit || s.num_scales == 2, "HGNetv2 variants use num_scales = 2");
    req(!vit || s.adapter == AdapterKind::STA, "ViT variants require the STA adapter");
    req(s.d_back > 0 && s.d_enc > 0 && s.d_dec > 0, "hidden dims must be positive");
    req(s.decoder_layers >= 1, "decoder_layers must be >= 1");
    req(s.num_queries >= 1, "num_queries must be >= 1");
    req(s.num_classes >= 1, "num_classes must be >= 1");
    req(s.input_resolution >= 32 && s.input_resolution % 32 == 0,
        "input_resolution must be a positive multiple of 32");
    req(t.epochs >= 1, "epochs must be >= 1");
    req(t.base_lr > 0 && t.min_lr > 0 && t.backbone_lr > 0 && t.backbone_min_lr > 0,
        "learning rates must be positive");
    req(t.min_lr <= t.base_lr, "min_lr must not exceed base_lr");
    req(t.backbone_min_lr <= t.backbone_lr, "backbone_min_lr must not exceed backbone_lr");
    req(t.weight_decay >= 0, "weight_decay must be non-negative");
    for (auto [aug, nm] : {std::pair<const AugSetting*, const char*>{&t.mosaic, "mosaic"},
                           {&t.mixup, "mixup"},
                           {&t.copy_blend, "copy_blend"}}) {
        req(aug->prob >= 0 && aug->prob <= 1, std::string(nm) + " probability must be in [0,1]");
        if (!aug->window_empty()) {
            req(aug->epoch_lo >= 0, std::string(nm) + " window starts before epoch 0");
            req(aug->epoch_hi <= t.epochs, std::string(nm) + " window exceeds epochs");
        }
    }
    return v;
}

// ---------------------------------------------------------------------------
// config file format: one `key = value` per line, `#` comments, flat keys.

namespace cfgio {

inline std::string fmt_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::string unquote(const std::string& s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
    return s;
}

}  // namespace cfgio

inline std::string emit_config(const VariantSpec& s, const TrainSchedule& t) {
    std::ostringstream o;
    auto win = [](const AugSetting& a) {
        return std::to_string(a.epoch_lo) + " " + std::to_string(a.epoch_hi);
    };
    o << "# deimv2 configuration\n";
    o << "variant = \"" << s.name << "\"\n";
    o << "backbone = \"" << backbone_name(s.backbone) << "\"\n";
    o << "adapter = \"" << (s.adapter == AdapterKind::STA ? "STA" : "None") << "\"\n";
    o << "d_back = " << s.d_back << "\n";
    o << "d_enc = " << s.d_enc << "\n";
    o << "d_dec = " << s.d_dec << "\n";
    o << "backbone_depth = " << s.backbone_depth << "\n";
    o << "decoder_layers = " << s.decoder_layers << "\n";
    o << "num_scales = " << s.num_scales << "\n";
    o << "num_queries = " << s.num_queries << "\n";
    o << "input_resolution = " << s.input_resolution << "\n";
    o << "num_classes = " << s.num_classes << "\n";
    o << "target_params = " << s.target_params << "\n";
    o << "target_gflops = " << cfgio::fmt_double(s.target_gflops) << "\n";
    o << "reported_ap = " << cfgio::fmt_double(s.reported_ap) << "\n";
    o << "weight_decay = " << cfgio::fmt_double(t.weight_decay) << "\n";
    o << "base_lr = " << cfgio::fmt_double(t.base_lr) << "\n";
    o << "min_lr = " << cfgio::fmt_double(t.min_lr) << "\n";
    o << "backbone_lr = " << cfgio::fmt_double(t.backbone_lr) << "\n";
    o << "backbone_min_lr = " << cfgio::fmt_double(t.backbone_min_lr) << "\n";
    o << "epochs = " << t.epochs << "\n";
    o << "local_loss = " << (t.local_loss_enabled ? "true" : "false") << "\n";
    o << "mosaic_prob = " << cfgio::fmt_double(t.mosaic.prob) << "\n";
    o << "mosaic_window = " << win(t.mosaic) << "\n";
    o << "mixup_prob = " << cfgio::fmt_double(t.mixup.prob) << "\n";
    o << "mixup_window = " << win(t.mixup) << "\n";
    o << "copy_blend_prob = " << cfgio::fmt_double(t.copy_blend.prob) << "\n";
    o << "copy_blend_window = " << win(t.copy_blend) << "\n";
    return o.str();
}

// Parses config text. Unspecified keys default to the named built-in variant.
inline std::pair<VariantSpec, TrainSchedule> parse_config(const std::string& text) {
    std::map<std::string, std::pair<std::string, int>> kv;  // key -> (value, line)
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = cfgio::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config parse error at line " + std::to_string(lineno) +
                                     ": expected 'key = value'");
        std::string key = cfgio::trim(line.substr(0, eq));
        std::string val = cfgio::trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw std::runtime_error("config parse error at line " + std::to_string(lineno) +
                                     ": empty key or value");
        kv[key] = {cfgio::unquote(val), lineno};
    }
    std::string variant = "S";
    if (auto it = kv.find("variant"); it != kv.end()) variant = it->second.first;
    auto [spec, sched] = builtin(variant);  // throws with valid names listed
    kv.erase("variant");

    auto bad = [](const std::string& key, int line, const std::string& what) {
        return std::runtime_error("config parse error at line " + std::to_string(line) +
                                  ": key '" + key + "': " + what);
    };
    auto geti = [&](const std::string& k, int& out) {
        if (auto it = kv.find(k); it != kv.end()) {
            try { out = std::stoi(it->second.first); }
            catch (...) { throw bad(k, it->second.second, "expected integer, got '" + it->second.first + "'"); }
            kv.erase(it);
        }
    };
    auto geti64 = [&](const std::string& k, int64_t& out) {
        if (auto it = kv.find(k); it != kv.end()) {
            try { out = std::stoll(it->second.first); }
            catch (...) { throw bad(k, it->second.second, "expected integer, got '" + it->second.first + "'"); }
            kv.erase(it);
        }
    };
    auto getd = [&](const std::string& k, double& out) {
        if (auto it = kv.find(k); it != kv.end()) {
            try { out = std::stod(it->second.first); }
            catch (...) { throw bad(k, it->second.second, "expected number, got '" + it->second.first + "'"); }
            kv.erase(it);
        }
    };
    auto getb = [&](const std::string& k, bool& out) {
        if (auto it = kv.find(k); it != kv.end()) {
            const std::string& v = it->second.first;
            if (v == "true" || v == "1") out = true;
            else if (v == "false" || v == "0") out = false;
            else throw bad(k, it->second.second, "expected true/false");
            kv.erase(it);
        }
    };
    auto getwin = [&](const std::string& k, AugSetting& a) {
        if (auto it = kv.find(k); it != kv.end()) {
            std::istringstream ws(it->second.first);
            int lo, hi;
            if (!(ws >> lo >> hi)) throw bad(k, it->second.second, "expected two integers 'lo hi'");
            a.epoch_lo = lo; a.epoch_hi = hi;
            kv.erase(it);
        }
    };
    if (auto it = kv.find("backbone"); it != kv.end()) {
        bool found = false;
        for (auto bk : {BackboneKind::ViTSPlus, BackboneKind::ViTS, BackboneKind::ViTTPlus,
                        BackboneKind::ViTT, BackboneKind::HGB0, BackboneKind::HGP,
                        BackboneKind::HGF, BackboneKind::HGA})
            if (it->second.first == backbone_name(bk)) { spec.backbone = bk; found = true; }
        if (!found) throw bad("backbone", it->second.second, "unknown backbone '" + it->second.first + "'");
        kv.erase(it);
    }
    if (auto it = kv.find("adapter"); it != kv.end()) {
        if (it->second.first == "STA") spec.adapter = AdapterKind::STA;
        else if (it->second.first == "None") spec.adapter = AdapterKind::None;
        else throw bad("adapter", it->second.second, "expected STA or None");
        kv.erase(it);
    }
    geti("d_back", spec.d_back);
    geti("d_enc", spec.d_enc);
    geti("d_dec", spec.d_dec);
    geti("backbone_depth", spec.backbone_depth);
    geti("decoder_layers", spec.decoder_layers);
    geti("num_scales", spec.num_scales);
    geti("num_queries", spec.num_queries);
    geti("input_resolution", spec.input_resolution);
    geti("num_classes", spec.num_classes);
    geti64("target_params", spec.target_params);
    getd("target_gflops", spec.target_gflops);
    getd("reported_ap", spec.reported_ap);
    getd("weight_decay", sched.weight_decay);
    getd("base_lr", sched.base_lr);
    getd("min_lr", sched.min_lr);
    getd("backbone_lr", sched.backbone_lr);
    getd("backbone_min_lr", sched.backbone_min_lr);
    geti("epochs", sched.epochs);
    getb("local_loss", sched.local_loss_enabled);
    getd("mosaic_prob", sched.mosaic.prob);
    getwin("mosaic_window", sched.mosaic);
    getd("mixup_prob", sched.mixup.prob);
    getwin("mixup_window", sched.mixup);
    getd("copy_blend_prob", sched.copy_blend.prob);
    getwin("copy_blend_window", sched.copy_blend);
    if (!kv.empty()) {
        auto& [k, vl] = *kv.begin();
        throw std::runtime_error("config parse error at line " + std::to_string(vl.second) +
                                 ": unknown key '" + k + "'");
    }
    auto violations = validate(spec, sched);
    if (!violations.empty()) {
        std::string msg = "config validation failed:";
        for (auto& v : violations) msg += "\n  - " + v;
        throw std::runtime_error(msg);
    }
    return {spec, sched};
}

inline std::pair<VariantSpec, TrainSchedule> load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

inline void save_config(const std::string& path, const VariantSpec& s, const TrainSchedule& t) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write config file: " + path);
    f << emit_config(s, t);
}

}  // namespace deimv2
