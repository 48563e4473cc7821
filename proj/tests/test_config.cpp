#include <catch2/catch_amalgamated.hpp>

#include "deimv2/config.hpp"

using namespace deimv2;

TEST_CASE("builtin table matches the published configurations") {
    REQUIRE(builtin_variants().size() == 8);

    auto& [x, xt] = builtin("X");
    REQUIRE(x.d_back == 384);
    REQUIRE(x.decoder_layers == 6);
    REQUIRE(x.num_queries == 300);
    REQUIRE(x.target_params == 50260000);
    REQUIRE(x.target_gflops == Catch::Approx(151.6));
    REQUIRE(xt.epochs == 50);
    REQUIRE(xt.mosaic.epoch_lo == 4);
    REQUIRE(xt.mosaic.epoch_hi == 29);
    REQUIRE(xt.copy_blend.epoch_hi == 50);

    auto& [a, at] = builtin("Atto");
    REQUIRE(a.d_dec == 64);
    REQUIRE(a.num_queries == 100);
    REQUIRE(a.input_resolution == 320);
    REQUIRE(at.epochs == 468);
    REQUIRE(at.base_lr == Catch::Approx(2e-3));
    REQUIRE(at.mosaic.prob == Catch::Approx(0.3));

    auto& [p, pt] = builtin("Pico");
    REQUIRE(pt.mixup.prob == 0.0);
    REQUIRE(pt.copy_blend.prob == 0.0);
    REQUIRE_FALSE(pt.local_loss_enabled);

    // local loss enabled exactly for X, L, M, S, Nano
    for (auto& name : builtin_names()) {
        auto& [s, t] = builtin(name);
        bool expect = name == "X" || name == "L" || name == "M" || name == "S" || name == "Nano";
        REQUIRE(t.local_loss_enabled == expect);
        (void)s;
    }

    // params targets strictly decreasing X -> Atto
    int64_t prev = INT64_MAX;
    for (auto& name : builtin_names()) {
        auto& [s, t] = builtin(name);
        REQUIRE(s.target_params < prev);
        prev = s.target_params;
        (void)t;
    }

    REQUIRE_THROWS_WITH(builtin("Zeta"), Catch::Matchers::ContainsSubstring("Atto"));
}

TEST_CASE("all builtins validate clean") {
    for (auto& name : builtin_names()) {
        auto& [s, t] = builtin(name);
        auto v = validate(s, t);
        CAPTURE(name);
        REQUIRE(v.empty());
    }
}

TEST_CASE("validation catches violations") {
    auto [s, t] = builtin("L");
    s.num_scales = 0;
    auto v1 = validate(s, t);
    REQUIRE_FALSE(v1.empty());

    std::tie(s, t) = builtin("Nano");
    s.num_scales = 3;  // HGNetv2 must use 2 scales
    REQUIRE_FALSE(validate(s, t).empty());

    std::tie(s, t) = builtin("X");
    t.mosaic.epoch_hi = t.epochs + 10;
    bool found = false;
    for (auto& msg : validate(s, t)) found = found || msg.find("exceeds epochs") != std::string::npos;
    REQUIRE(found);
}

TEST_CASE("config defaulting and round-trip") {
    auto [s, t] = parse_config("variant = \"S\"\n");
    auto& [bs, bt] = builtin("S");
    REQUIRE(s.d_enc == bs.d_enc);
    REQUIRE(s.num_queries == bs.num_queries);
    REQUIRE(t.epochs == bt.epochs);
    REQUIRE(t.mosaic.epoch_hi == bt.mosaic.epoch_hi);

    // emit -> parse is the identity on every field
    for (auto& name : builtin_names()) {
        auto& [os, ot] = builtin(name);
        auto [rs, rt] = parse_config(emit_config(os, ot));
        REQUIRE(rs.name == os.name);
        REQUIRE(rs.backbone == os.backbone);
        REQUIRE(rs.adapter == os.adapter);
        REQUIRE(rs.d_back == os.d_back);
        REQUIRE(rs.d_enc == os.d_enc);
        REQUIRE(rs.d_dec == os.d_dec);
        REQUIRE(rs.backbone_depth == os.backbone_depth);
        REQUIRE(rs.decoder_layers == os.decoder_layers);
        REQUIRE(rs.num_scales == os.num_scales);
        REQUIRE(rs.num_queries == os.num_queries);
        REQUIRE(rs.input_resolution == os.input_resolution);
        REQUIRE(rs.num_classes == os.num_classes);
        REQUIRE(rs.target_params == os.target_params);
        REQUIRE(rs.target_gflops == os.target_gflops);
        REQUIRE(rs.reported_ap == os.reported_ap);
        REQUIRE(rt.weight_decay == ot.weight_decay);
        REQUIRE(rt.base_lr == ot.base_lr);
        REQUIRE(rt.min_lr == ot.min_lr);
        REQUIRE(rt.backbone_lr == ot.backbone_lr);
        REQUIRE(rt.backbone_min_lr == ot.backbone_min_lr);
        REQUIRE(rt.epochs == ot.epochs);
        REQUIRE(rt.local_loss_enabled == ot.local_loss_enabled);
        for (auto [ra, oa] : {std::pair{&rt.mosaic, &ot.mosaic},
                              {&rt.mixup, &ot.mixup},
                              {&rt.copy_blend, &ot.copy_blend}}) {
            REQUIRE(ra->prob == oa->prob);
            REQUIRE(ra->epoch_lo == oa->epoch_lo);
            REQUIRE(ra->epoch_hi == oa->epoch_hi);
        }
    }
}

TEST_CASE("config errors carry line numbers and names") {
    REQUIRE_THROWS_WITH(parse_config("variant = \"S\"\nnum_scales zero\n"),
                        Catch::Matchers::ContainsSubstring("line 2"));
    REQUIRE_THROWS_WITH(parse_config("variant = \"Q\"\n"),
                        Catch::Matchers::ContainsSubstring("valid names"));
    REQUIRE_THROWS_WITH(parse_config("variant = \"S\"\nnum_scales = 0\n"),
                        Catch::Matchers::ContainsSubstring("num_scales"));
    REQUIRE_THROWS_WITH(parse_config("variant = \"S\"\nbanana = 3\n"),
                        Catch::Matchers::ContainsSubstring("banana"));
    // comments and blank lines are fine
    auto [s, t] = parse_config("# hello\n\nvariant = \"M\"  # inline\nepochs = 91\n");
    REQUIRE(s.name == "M");
    REQUIRE(t.epochs == 91);
}
