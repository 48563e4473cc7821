#include <catch2/catch_amalgamated.hpp>

#include "deimv2/accounting.hpp"

using namespace deimv2;

namespace {

// frozen expected totals for the built architecture; recomputed independently
// from the layer formulas (see docs/accounting.md) and pinned here so silent
// architecture drift fails loudly
struct Frozen {
    const char* name;
    int64_t params;
    int64_t macs;
};
constexpr Frozen kFrozen[] = {
    {"X", 56411860, 126329790464},
    {"L", 35669396, 91031232512},
    {"M", 20024852, 50254807040},
    {"S", 9681012, 26998126592},
    {"Nano", 4016044, 5720985600},
    {"Pico", 1664652, 4816819200},
    {"Femto", 1041316, 1722775936},
    {"Atto", 543228, 639808000},
};

}  // namespace

TEST_CASE("counting primitives") {
    Rng rng(1);
    ParamRegistry reg;
    LinearLayer lin(reg, "lin", 4, 8, rng);
    REQUIRE(reg.count_params() == 40);  // 4*8 + 8

    ParamRegistry reg2;
    ConvLayer conv(reg2, "c", 3, 16, 3, 1, rng);
    REQUIRE(reg2.count_params() == 448);
    auto cost = conv.costs(64, 64);
    REQUIRE(cost.macs == int64_t(3) * 9 * 16 * 64 * 64);
    // 2*(3*9*16)*64*64 FLOPs from the stated convention, plus activations
    REQUIRE(2 * cost.macs == 3538944);
}

TEST_CASE("budget conformance for all eight variants") {
    int64_t prev_params = INT64_MAX;
    int64_t prev_macs = INT64_MAX;
    for (auto& f : kFrozen) {
        auto r = budget_report(f.name);
        CAPTURE(f.name, r.total_params, r.total_macs);
        REQUIRE(r.total_params == f.params);
        REQUIRE(r.total_macs == f.macs);
        REQUIRE(r.params_pass);
        REQUIRE(r.flops_pass);
        REQUIRE(std::abs(r.params_dev) <= 0.15);
        REQUIRE(std::abs(r.gmacs_dev) <= 0.20);
        // strictly monotone X -> Atto
        REQUIRE(r.total_params < prev_params);
        REQUIRE(r.total_macs < prev_macs);
        prev_params = r.total_params;
        prev_macs = r.total_macs;
        // module sums equal the total exactly
        int64_t s = 0;
        for (auto& [g, n] : r.module_params) s += n;
        REQUIRE(s == r.total_params);
    }
}

TEST_CASE("Atto params inside the published window") {
    auto r = budget_report("Atto");
    REQUIRE(r.total_params >= 416500);   // 0.49M - 15%
    REQUIRE(r.total_params <= 563500);   // 0.49M + 15%
}

TEST_CASE("resize stage contributes zero parameters") {
    // the STA group holds only detail-path and fusion parameters; the tap
    // resizing is parameter-free, so removing fusion+detail leaves nothing
    auto& [spec, sched] = builtin("S");
    (void)sched;
    Detector model(spec, 0);
    int64_t sta_total = count_params(model, "sta.");
    int64_t fusion = count_params(model, "sta.fusion");
    int64_t detail = count_params(model, "sta.detail");
    REQUIRE(sta_total == fusion + detail);
}

TEST_CASE("analytic flops scale quadratically for conv stages") {
    Rng rng(3);
    ParamRegistry reg;
    ConvLayer c1(reg, "a", 8, 16, 3, 1, rng);
    ConvLayer c2(reg, "b", 16, 16, 3, 1, rng);
    auto at = [&](int res) { return double(c1.costs(res, res).macs + c2.costs(res, res).macs); };
    REQUIRE(at(640) / at(320) == Catch::Approx(4.0).margin(1e-6));
}

TEST_CASE("variant S compute lands near its published figure") {
    auto r = budget_report("S");
    REQUIRE(double(r.total_macs) / 1e9 == Catch::Approx(25.62).epsilon(0.20));
}

TEST_CASE("decoder position embedding counted once regardless of depth") {
    for (auto& name : {"X", "Atto"}) {
        auto& [spec, sched] = builtin(name);
        (void)sched;
        Detector model(spec, 0);
        int64_t pos = 0;
        for (auto& e : model.reg.entries())
            if (e.name == "decoder.pos_embed") pos += e.t.size();
        REQUIRE(pos == int64_t(spec.num_queries) * spec.d_dec);
    }
}

TEST_CASE("zero-cost model reports zero") {
    CostSheet empty;
    REQUIRE(empty.flops() == 0);
}
