#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "s2neck/neck.hpp"

using namespace s2neck;

namespace {

std::vector<Var> make_feats(Rng& rng, const std::vector<int64_t>& channels, int64_t base_hw) {
    std::vector<Var> feats;
    int64_t hw = base_hw;
    for (int64_t c : channels) {
        feats.push_back(leaf(rng.normal_tensor({1, c, hw, hw}), false));
        hw = (hw + 1) / 2;
    }
    return feats;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("fpn: output resolutions and widths match the shape contract") {
    Rng rng(1);
    FpnNeck fpn({8, 12, 16}, 16, 3, rng);
    auto feats = make_feats(rng, {8, 12, 16}, 16);
    PyramidFeatures p = fpn.forward(feats);
    REQUIRE(p.levels.size() == 3);
    CHECK(p.level(3)->value.shape() == std::vector<int64_t>({1, 16, 16, 16}));
    CHECK(p.level(4)->value.shape() == std::vector<int64_t>({1, 16, 8, 8}));
    CHECK(p.level(5)->value.shape() == std::vector<int64_t>({1, 16, 4, 4}));
}

TEST_CASE("fpn: rejects non-halving input resolutions") {
    Rng rng(2);
    FpnNeck fpn({4, 4}, 8, 3, rng);
    std::vector<Var> bad = {leaf(rng.normal_tensor({1, 4, 16, 16}), false),
                            leaf(rng.normal_tensor({1, 4, 5, 5}), false)};
    CHECK_THROWS(fpn.forward(bad));
}

TEST_CASE("fpn: with upper laterals zeroed each level is smooth(lateral) alone") {
    Rng rng(3);
    FpnNeck fpn({4, 6}, 8, 3, rng);
    fpn.laterals[1].weight->value.fill(0.0);  // kill the top-down contribution into P3
    auto feats = make_feats(rng, {4, 6}, 8);
    PyramidFeatures p = fpn.forward(feats);
    Tensor expect = kernels::conv2d(
        kernels::conv2d(feats[0]->value, fpn.laterals[0].weight->value, &fpn.laterals[0].bias->value,
                        fpn.laterals[0].spec),
        fpn.smooth[0].weight->value, &fpn.smooth[0].bias->value, fpn.smooth[0].spec);
    CHECK(max_abs_diff(p.level(3)->value, expect) == 0.0);
}

TEST_CASE("fpn: two-level top-down sum matches the hand composition") {
    Rng rng(4);
    FpnNeck fpn({1, 1}, 1, 3, rng);
    // identity laterals, delta smoothing kernels
    fpn.laterals[0].weight->value.fill(1.0);
    fpn.laterals[1].weight->value.fill(1.0);
    for (auto* s : {&fpn.smooth[0], &fpn.smooth[1]}) {
        s->weight->value.fill(0.0);
        s->weight->value.at4(0, 0, 1, 1) = 1.0;
    }
    Tensor x3 = rng.normal_tensor({1, 1, 4, 4});
    Tensor x4 = rng.normal_tensor({1, 1, 2, 2});
    PyramidFeatures p = fpn.forward({leaf(x3, false), leaf(x4, false)});
    // P3 = x3 + nearest-2x(x4), P4 = x4
    for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 4; ++x)
            CHECK(p.level(3)->value.at4(0, 0, y, x) ==
                  doctest::Approx(x3.at4(0, 0, y, x) + x4.at4(0, 0, y / 2, x / 2)).epsilon(1e-12));
    CHECK(max_abs_diff(p.level(4)->value, x4) < 1e-12);
}

TEST_CASE("pan: geometry equals fpn geometry") {
    Rng rng(5);
    PanNeck pan({8, 12, 16}, 16, 3, rng);
    auto feats = make_feats(rng, {8, 12, 16}, 16);
    PyramidFeatures p = pan.forward(feats);
    PyramidFeatures f = pan.fpn.forward(feats);
    REQUIRE(p.levels.size() == f.levels.size());
    for (size_t i = 0; i < p.levels.size(); ++i)
        CHECK(p.levels[i]->value.shape() == f.levels[i]->value.shape());
}

TEST_CASE("pan: zeroed bottom-up convs degrade to smoothed fpn output") {
    Rng rng(6);
    PanNeck pan({4, 6}, 8, 3, rng);
    pan.down[0].weight->value.fill(0.0);
    pan.down[0].bias->value.fill(0.0);
    auto feats = make_feats(rng, {4, 6}, 8);
    PyramidFeatures p = pan.forward(feats);
    PyramidFeatures f = pan.fpn.forward(feats);
    CHECK(max_abs_diff(p.level(3)->value, f.level(3)->value) == 0.0);
    Tensor expect4 = kernels::conv2d(f.level(4)->value, pan.smooth2[0].weight->value,
                                     &pan.smooth2[0].bias->value, pan.smooth2[0].spec);
    CHECK(max_abs_diff(p.level(4)->value, expect4) == 0.0);
}

TEST_CASE("pan: random two-level input matches a scripted op-by-op oracle") {
    Rng rng(7);
    PanNeck pan({3, 5}, 4, 3, rng);
    auto feats = make_feats(rng, {3, 5}, 6);
    PyramidFeatures p = pan.forward(feats);

    // scripted composition using raw kernels only
    auto& fpn = pan.fpn;
    Tensor lat3 = kernels::conv2d(feats[0]->value, fpn.laterals[0].weight->value,
                                  &fpn.laterals[0].bias->value, fpn.laterals[0].spec);
    Tensor lat4 = kernels::conv2d(feats[1]->value, fpn.laterals[1].weight->value,
                                  &fpn.laterals[1].bias->value, fpn.laterals[1].spec);
    Tensor up = kernels::resize2d(lat4, 6, 6, kernels::ResizeMode::Nearest);
    for (int64_t i = 0; i < lat3.numel(); ++i) lat3[i] += up[i];
    Tensor p3 = kernels::conv2d(lat3, fpn.smooth[0].weight->value, &fpn.smooth[0].bias->value,
                                fpn.smooth[0].spec);
    Tensor p4 = kernels::conv2d(lat4, fpn.smooth[1].weight->value, &fpn.smooth[1].bias->value,
                                fpn.smooth[1].spec);
    Tensor descended = kernels::conv2d(p3, pan.down[0].weight->value, &pan.down[0].bias->value,
                                       pan.down[0].spec);
    for (int64_t i = 0; i < p4.numel(); ++i) p4[i] += descended[i];
    Tensor n4 = kernels::conv2d(p4, pan.smooth2[0].weight->value, &pan.smooth2[0].bias->value,
                                pan.smooth2[0].spec);
    CHECK(max_abs_diff(p.level(3)->value, p3) == 0.0);
    CHECK(max_abs_diff(p.level(4)->value, n4) == 0.0);
}

TEST_CASE("general view: stacked 4D tensor at the basis resolution") {
    Rng rng(8);
    PyramidFeatures pyr;
    pyr.first_level = 3;
    pyr.width = 16;
    pyr.levels = {leaf(rng.normal_tensor({1, 16, 8, 8}), false),
                  leaf(rng.normal_tensor({1, 16, 4, 4}), false),
                  leaf(rng.normal_tensor({1, 16, 2, 2}), false)};
    GeneralView g = build_general_view(pyr, 3);
    CHECK(g.tensor->value.shape() == std::vector<int64_t>({1, 16, 3, 8, 8}));

    PyramidFeatures single;
    single.first_level = 3;
    single.width = 16;
    single.levels = {pyr.levels[0]};
    GeneralView g1 = build_general_view(single, 3);
    REQUIRE(g1.tensor->value.shape() == std::vector<int64_t>({1, 16, 1, 8, 8}));
    for (int64_t i = 0; i < 16 * 64; ++i) CHECK(g1.tensor->value[i] == pyr.levels[0]->value[i]);

    PyramidFeatures consts;
    consts.first_level = 3;
    consts.width = 2;
    consts.levels = {leaf(rng.normal_tensor({1, 2, 8, 8}), false),
                     leaf(Tensor::full({1, 2, 4, 4}, 2.5), false),
                     leaf(Tensor::full({1, 2, 2, 2}, -1.5), false)};
    GeneralView gc = build_general_view(consts, 3);
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t i = 0; i < 64; ++i) {
            CHECK(gc.tensor->value.at5(0, c, 1, i / 8, i % 8) == 2.5);
            CHECK(gc.tensor->value.at5(0, c, 2, i / 8, i % 8) == -1.5);
        }

    CHECK_THROWS(build_general_view(PyramidFeatures{}, 3));
    CHECK_THROWS(build_general_view(pyr, 7));
}

TEST_CASE("s2 module: output matches the basis level's dims and channels") {
    Rng rng(9);
    S2Config cfg;
    S2Module s2(16, cfg, rng);
    PyramidFeatures pyr;
    pyr.first_level = 3;
    pyr.width = 16;
    pyr.levels = {leaf(rng.normal_tensor({2, 16, 8, 8}), false),
                  leaf(rng.normal_tensor({2, 16, 4, 4}), false),
                  leaf(rng.normal_tensor({2, 16, 2, 2}), false)};
    Var out = s2.forward(build_general_view(pyr, 3), true);
    CHECK(out->value.shape() == std::vector<int64_t>({2, 16, 8, 8}));
}

TEST_CASE("s2 module: zero conv and zero gamma give a zero map") {
    Rng rng(10);
    S2Config cfg;
    S2Module s2(4, cfg, rng);
    s2.conv.weight->value.fill(0.0);
    s2.conv.bias->value.fill(0.0);
    s2.bn.gamma->value.fill(0.0);
    PyramidFeatures pyr;
    pyr.first_level = 3;
    pyr.width = 4;
    pyr.levels = {leaf(rng.normal_tensor({1, 4, 4, 4}), false),
                  leaf(rng.normal_tensor({1, 4, 2, 2}), false)};
    Var out = s2.forward(build_general_view(pyr, 3), true);
    for (int64_t i = 0; i < out->value.numel(); ++i) CHECK(out->value[i] == 0.0);
}

TEST_CASE("s2 module: every pyramid level receives gradient") {
    Rng rng(11);
    S2Config cfg;
    S2Module s2(3, cfg, rng);
    PyramidFeatures pyr;
    pyr.first_level = 3;
    pyr.width = 3;
    pyr.levels = {leaf(rng.normal_tensor({1, 3, 8, 8})), leaf(rng.normal_tensor({1, 3, 4, 4})),
                  leaf(rng.normal_tensor({1, 3, 2, 2}))};
    Var out = s2.forward(build_general_view(pyr, 3), true);
    backward(sum_all(mul(out, out)));
    for (const Var& lvl : pyr.levels) {
        double norm = 0;
        for (int64_t i = 0; i < lvl->grad.numel(); ++i) norm += std::abs(lvl->grad[i]);
        CHECK(norm > 0.0);
    }
}

TEST_CASE("s2 module: permuting level order changes the output for k_l >= 2") {
    Rng rng(12);
    S2Config cfg;
    S2Module s2(2, cfg, rng);
    Tensor a = rng.normal_tensor({1, 2, 6, 6});
    Tensor b = rng.normal_tensor({1, 2, 6, 6});
    Tensor c = rng.normal_tensor({1, 2, 6, 6});
    auto run = [&](std::vector<Tensor> maps) {
        std::vector<Var> vars;
        for (auto& m : maps) vars.push_back(leaf(m, false));
        GeneralView view{stack_levels(vars), 3};
        return s2.forward(view, false)->value;
    };
    Tensor fwd = run({a, b, c});
    Tensor rev = run({c, b, a});
    CHECK(max_abs_diff(fwd, rev) > 1e-6);
}

TEST_CASE("fuse_s2: one-stage doubles channels with p3 first; two-stage restores C") {
    Rng rng(13);
    Var p3 = leaf(rng.normal_tensor({1, 16, 8, 8}), false);
    Var s2 = leaf(rng.normal_tensor({1, 16, 8, 8}), false);
    Var one = fuse_s2(p3, s2, FuseMode::OneStage, nullptr);
    REQUIRE(one->value.dim(1) == 32);
    for (int64_t c = 0; c < 16; ++c)
        for (int64_t i = 0; i < 64; ++i)
            CHECK(one->value.at4(0, c, i / 8, i % 8) == p3->value.at4(0, c, i / 8, i % 8));

    Conv2dLayer adapter(32, 16, 1, 1, 0, rng);
    Var two = fuse_s2(p3, s2, FuseMode::TwoStage, &adapter);
    CHECK(two->value.dim(1) == 16);
    CHECK_THROWS(fuse_s2(p3, s2, FuseMode::TwoStage, nullptr));

    // adapter [I | 0] with zero bias is the identity on p3
    adapter.weight->value.fill(0.0);
    adapter.bias->value.fill(0.0);
    for (int64_t c = 0; c < 16; ++c) adapter.weight->value.at4(c, c, 0, 0) = 1.0;
    Var ident = fuse_s2(p3, s2, FuseMode::TwoStage, &adapter);
    CHECK(max_abs_diff(ident->value, p3->value) == 0.0);
}

TEST_CASE("attach_s2_to_levels: target selection and resizing") {
    Rng rng(14);
    PyramidFeatures pyr;
    pyr.first_level = 3;
    pyr.width = 4;
    pyr.levels = {leaf(rng.normal_tensor({1, 4, 8, 8}), false),
                  leaf(rng.normal_tensor({1, 4, 4, 4}), false),
                  leaf(rng.normal_tensor({1, 4, 2, 2}), false)};
    Var s2 = leaf(rng.normal_tensor({1, 4, 8, 8}), false);

    PyramidFeatures only3 = attach_s2_to_levels(pyr, s2, {3});
    CHECK(only3.level(3)->value.dim(1) == 8);
    CHECK(only3.level(4)->value.dim(1) == 4);
    CHECK(only3.level(5)->value.dim(1) == 4);

    PyramidFeatures all = attach_s2_to_levels(pyr, s2, {3, 4, 5});
    CHECK(all.level(3)->value.shape() == std::vector<int64_t>({1, 8, 8, 8}));
    CHECK(all.level(4)->value.shape() == std::vector<int64_t>({1, 8, 4, 4}));
    CHECK(all.level(5)->value.shape() == std::vector<int64_t>({1, 8, 2, 2}));

    Var const_s2 = leaf(Tensor::full({1, 4, 8, 8}, 3.5), false);
    PyramidFeatures only4 = attach_s2_to_levels(pyr, const_s2, {4});
    for (int64_t c = 4; c < 8; ++c)
        for (int64_t i = 0; i < 16; ++i) CHECK(only4.level(4)->value.at4(0, c, i / 4, i % 4) == 3.5);

    CHECK_THROWS(attach_s2_to_levels(pyr, s2, {}));
    CHECK_THROWS(attach_s2_to_levels(pyr, s2, {7}));
}

TEST_CASE("shape theorem over randomized pyramid geometries") {
    Rng rng(15);
    for (int trial = 0; trial < 50; ++trial) {
        int64_t C = rng.uniform_int(1, 6);
        int64_t H = rng.uniform_int(2, 10);
        int64_t W = rng.uniform_int(2, 10);
        int levels = static_cast<int>(rng.uniform_int(1, 3));
        int64_t B = rng.uniform_int(1, 2);
        PyramidFeatures pyr;
        pyr.first_level = 3;
        pyr.width = C;
        int64_t h = H, w = W;
        for (int l = 0; l < levels; ++l) {
            pyr.levels.push_back(leaf(rng.normal_tensor({B, C, h, w}), false));
            h = (h + 1) / 2;
            w = (w + 1) / 2;
        }
        S2Config cfg;
        S2Module s2(C, cfg, rng);
        Var out = s2.forward(build_general_view(pyr, 3), true);
        CHECK(out->value.shape() == std::vector<int64_t>({B, C, H, W}));
        Var fused = fuse_s2(pyr.level(3), out, FuseMode::OneStage, nullptr);
        CHECK(fused->value.dim(1) == 2 * C);
    }
}

TEST_CASE("whole pipeline gradient check: general view -> s2 -> fuse") {
    Rng rng(16);
    S2Config cfg;
    S2Module s2(2, cfg, rng);
    Tensor p3 = rng.normal_tensor({1, 2, 4, 4});
    Tensor p4 = rng.normal_tensor({1, 2, 2, 2});
    Tensor p5 = rng.normal_tensor({1, 2, 1, 1});
    double err = grad_check(
        [&s2](const std::vector<Var>& v) {
            PyramidFeatures pyr;
            pyr.first_level = 3;
            pyr.width = 2;
            pyr.levels = {v[0], v[1], v[2]};
            Var feat = s2.forward(build_general_view(pyr, 3), true);
            Var fused = fuse_s2(v[0], feat, FuseMode::OneStage, nullptr);
            return sum_all(mul(fused, fused));
        },
        {p3, p4, p5});
    CHECK(err < 1e-4);
}
