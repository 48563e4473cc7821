#pragma once

// Analytic parameter and FLOP accounting over a built detector, with
// conformance reporting against the published per-variant budgets.
//
// Conventions: one multiply-accumulate is two FLOPs; interpolation costs
// 4 MACs per output; softmax/activation/normalization cost 5 FLOPs per
// element. Bias additions are not counted. The budget comparison for the
// compute column uses MACs directly, the convention the published GFLOPs
// figures follow.

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "deimv2/detector.hpp"

namespace deimv2 {

struct BudgetReport {
    std::string variant;
    int resolution = 0;
    std::vector<std::pair<std::string, int64_t>> module_params;
    std::vector<std::pair<std::string, CostSheet>> module_costs;
    int64_t total_params = 0;
    int64_t total_macs = 0;
    int64_t total_flops = 0;
    int64_t target_params = 0;
    double target_gflops = 0;
    double reported_ap = 0;
    double params_dev = 0;   // (actual - target) / target
    double gmacs_dev = 0;
    bool params_pass = false;
    bool flops_pass = false;
};

inline int64_t count_params(const Detector& model, const std::string& prefix = "") {
    return model.reg.count_params(prefix);
}

inline int64_t analytic_flops(const Detector& model, int resolution) {
    int64_t f = 0;
    for (auto& [name, c] : model.module_costs(resolution, resolution)) f += c.flops();
    return f;
}

inline int64_t analytic_macs(const Detector& model, int resolution) {
    int64_t m = 0;
    for (auto& [name, c] : model.module_costs(resolution, resolution)) m += c.macs;
    return m;
}

inline BudgetReport budget_report(const VariantSpec& spec, const Detector& model) {
    BudgetReport r;
    r.variant = spec.name;
    r.resolution = spec.input_resolution;
    r.target_params = spec.target_params;
    r.target_gflops = spec.target_gflops;
    r.reported_ap = spec.reported_ap;
    std::vector<std::string> groups = is_vit(spec.backbone)
        ? std::vector<std::string>{"backbone", "sta", "encoder", "decoder"}
        : std::vector<std::string>{"backbone", "encoder", "decoder"};
    for (auto& g : groups)
        r.module_params.push_back({g, count_params(model, g + ".")});
    r.module_costs = model.module_costs(r.resolution, r.resolution);
    for (auto& [g, n] : r.module_params) r.total_params += n;
    check(r.total_params == count_params(model), "budget: module sums disagree with total");
    for (auto& [g, c] : r.module_costs) {
        r.total_macs += c.macs;
        r.total_flops += c.flops();
    }
    if (r.target_params > 0)
        r.params_dev = double(r.total_params - r.target_params) / double(r.target_params);
    if (r.target_gflops > 0)
        r.gmacs_dev = (double(r.total_macs) / 1e9 - r.target_gflops) / r.target_gflops;
    r.params_pass = std::abs(r.params_dev) <= 0.15;
    r.flops_pass = std::abs(r.gmacs_dev) <= 0.20;
    return r;
}

inline BudgetReport budget_report(const std::string& variant_name, uint64_t seed = 0) {
    auto& [spec, sched] = builtin(variant_name);
    (void)sched;
    Detector model(spec, seed);
    return budget_report(spec, model);
}

inline std::string format_report(const BudgetReport& r) {
    std::ostringstream o;
    char buf[160];
    std::snprintf(buf, sizeof buf, "variant %-6s  resolution %dx%d\n", r.variant.c_str(),
                  r.resolution, r.resolution);
    o << buf;
    for (size_t i = 0; i < r.module_params.size(); ++i) {
        std::snprintf(buf, sizeof buf, "  %-10s %12lld params  %10.3f GMACs\n",
                      r.module_params[i].first.c_str(), (long long)r.module_params[i].second,
                      double(r.module_costs[i].second.macs) / 1e9);
        o << buf;
    }
    std::snprintf(buf, sizeof buf, "  %-10s %12lld params  %10.3f GMACs  (%.3f GFLOPs at 2/MAC)\n",
                  "total", (long long)r.total_params, double(r.total_macs) / 1e9,
                  double(r.total_flops) / 1e9);
    o << buf;
    std::snprintf(buf, sizeof buf, "  params  target %10.2fM  dev %+6.1f%%  %s\n",
                  double(r.target_params) / 1e6, 100 * r.params_dev, r.params_pass ? "PASS" : "FAIL");
    o << buf;
    std::snprintf(buf, sizeof buf, "  compute target %10.2fG  dev %+6.1f%%  %s\n",
                  r.target_gflops, 100 * r.gmacs_dev, r.flops_pass ? "PASS" : "FAIL");
    o << buf;
    return o.str();
}

inline std::string format_report_kv(const BudgetReport& r) {
    std::ostringstream o;
    o << "variant = \"" << r.variant << "\"\n";
    o << "resolution = " << r.resolution << "\n";
    for (size_t i = 0; i < r.module_params.size(); ++i) {
        o << "params." << r.module_params[i].first << " = " << r.module_params[i].second << "\n";
        o << "macs." << r.module_costs[i].first << " = " << r.module_costs[i].second.macs << "\n";
    }
    o << "params.total = " << r.total_params << "\n";
    o << "macs.total = " << r.total_macs << "\n";
    o << "flops.total = " << r.total_flops << "\n";
    o << "target.params = " << r.target_params << "\n";
    o << "target.gflops = " << cfgio::fmt_double(r.target_gflops) << "\n";
    o << "dev.params = " << cfgio::fmt_double(r.params_dev) << "\n";
    o << "dev.compute = " << cfgio::fmt_double(r.gmacs_dev) << "\n";
    o << "pass.params = " << (r.params_pass ? "true" : "false") << "\n";
    o << "pass.compute = " << (r.flops_pass ? "true" : "false") << "\n";
    return o.str();
}

}  // namespace deimv2
