#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gatefusion/expert.hpp"
#include "gatefusion/graph.hpp"
#include "gatefusion/rng.hpp"

using namespace gatefusion;

namespace {

float focal_scalar(float p, float y, float alpha, float gamma) {
    Graph g;
    Parameter pp("p", Tensor({1}, {p}));
    return g.value(g.focal_loss(g.param(pp), Tensor({1}, {y}), Tensor({1}, 1.0f),
                                alpha, gamma, 1.0f))[0];
}

float smooth_l1_scalar(float x) {
    Graph g;
    Parameter pp("p", Tensor({1}, {x}));
    return g.value(g.smooth_l1_loss(g.param(pp), Tensor({1}, {0.0f}), Tensor({1}, 1.0f),
                                    1.0f))[0];
}

}  // namespace

TEST_CASE("focal loss closed-form hand cases") {
    // p=0.5, y=1, alpha=0.25, gamma=2: 0.25 * 0.25 * ln 2.
    CHECK(focal_scalar(0.5f, 1.0f, 0.25f, 2.0f) ==
          doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-6));
    // y=0 mirrors with weight (1-alpha).
    CHECK(focal_scalar(0.5f, 0.0f, 0.25f, 2.0f) ==
          doctest::Approx(0.75 * 0.25 * std::log(2.0)).epsilon(1e-6));
    // Confident correct prediction: near-zero loss.
    CHECK(focal_scalar(0.99f, 1.0f, 0.25f, 2.0f) < 1e-4f);
    // Confident wrong prediction: large loss.
    CHECK(focal_scalar(0.01f, 1.0f, 0.25f, 2.0f) > 1.0f);
    CHECK_THROWS_AS(focal_scalar(0.5f, 1.0f, 0.25f, -1.0f), NumericError);
}

TEST_CASE("focal loss with gamma=0, alpha=0.5 equals half the BCE") {
    Rng rng(7);
    Tensor targets({16});
    Parameter probs("p", Tensor({16}));
    for (int i = 0; i < 16; ++i) {
        probs.value[i] = static_cast<float>(rng.uniform(0.02, 0.98));
        targets[i] = (rng.uniform() < 0.5) ? 0.0f : 1.0f;
    }
    Graph g;
    const float got = g.value(g.focal_loss(g.param(probs), targets, Tensor({16}, 1.0f),
                                           0.5f, 0.0f, 1.0f))[0];
    double bce = 0.0;
    for (int i = 0; i < 16; ++i) {
        const double p = probs.value[i];
        bce += targets[i] > 0.5f ? -std::log(p) : -std::log(1.0 - p);
    }
    CHECK(got == doctest::Approx(0.5 * bce).epsilon(1e-6));
}

TEST_CASE("focal loss clamps extreme probabilities instead of overflowing") {
    CHECK(std::isfinite(focal_scalar(0.0f, 1.0f, 0.25f, 2.0f)));
    CHECK(std::isfinite(focal_scalar(1.0f, 0.0f, 0.25f, 2.0f)));
}

TEST_CASE("smooth L1 values and gradient regimes") {
    CHECK(smooth_l1_scalar(0.0f) == 0.0f);
    CHECK(smooth_l1_scalar(0.5f) == doctest::Approx(0.125).epsilon(1e-6));
    CHECK(smooth_l1_scalar(1.0f) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(smooth_l1_scalar(2.0f) == doctest::Approx(1.5).epsilon(1e-6));
    CHECK(smooth_l1_scalar(-3.0f) == doctest::Approx(2.5).epsilon(1e-6));

    // Gradient: x in the quadratic zone, sign(x) outside.
    for (float x : {0.3f, -0.7f, 1.8f, -4.0f}) {
        Graph g;
        Parameter pp("p", Tensor({1}, {x}));
        g.backward(g.smooth_l1_loss(g.param(pp), Tensor({1}, {0.0f}), Tensor({1}, 1.0f), 1.0f));
        const float expect = std::abs(x) < 1.0f ? x : (x > 0 ? 1.0f : -1.0f);
        CHECK(pp.grad[0] == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("mask and normalizer select and scale counted elements") {
    Parameter pp("p", Tensor({4}, {0.5f, 0.9f, 0.5f, 0.1f}));
    Tensor targets({4}, {1.0f, 1.0f, 0.0f, 0.0f});
    Tensor mask({4}, {1.0f, 0.0f, 1.0f, 0.0f});
    Graph g;
    const float got =
        g.value(g.focal_loss(g.param(pp), targets, mask, 0.25f, 2.0f, 2.0f))[0];
    const double e0 = 0.25 * 0.25 * std::log(2.0);   // p=0.5, y=1
    const double e2 = 0.75 * 0.25 * std::log(2.0);   // p=0.5, y=0
    CHECK(got == doctest::Approx((e0 + e2) / 2.0).epsilon(1e-6));
}

TEST_CASE("detection loss matches an independent per-anchor oracle") {
    // Tiny 4x4-grid detector head with random outputs and real matches.
    AnchorConfig acfg{4, 4, 8.0f, {10.0f, 16.0f}, {1.0f}};
    const AnchorSet anchors = generate_anchors(acfg);
    const int A = acfg.total();
    const int K = 2;
    TrainConfig tc;
    tc.focal_alpha = 0.25f;
    tc.focal_gamma = 2.0f;

    Rng rng(55);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<GroundTruth> gts;
        const int n = rng.uniform_int(1, 3);
        for (int i = 0; i < n; ++i) {
            const float w = static_cast<float>(rng.uniform(8.0, 18.0));
            const float h = static_cast<float>(rng.uniform(8.0, 18.0));
            const float x = static_cast<float>(rng.uniform(0.0, 32.0 - w));
            const float y = static_cast<float>(rng.uniform(0.0, 32.0 - h));
            gts.push_back({{x, y, x + w, y + h}, static_cast<int>(rng.uniform_int(0, K - 1))});
        }
        const AnchorMatch match = match_anchors(anchors, gts, tc.pos_iou, tc.neg_iou);

        ExpertOutput out;
        out.cls_probs = Tensor({A, K});
        out.reg_offsets = Tensor({A, 4});
        for (size_t i = 0; i < out.cls_probs.size(); ++i)
            out.cls_probs[i] = static_cast<float>(rng.uniform(0.01, 0.99));
        for (size_t i = 0; i < out.reg_offsets.size(); ++i)
            out.reg_offsets[i] = static_cast<float>(rng.uniform(-1.5, 1.5));

        const LossBreakdown got = detection_loss(out, match, gts, K, tc);

        // Oracle: direct per-anchor focal + smooth L1 sums in double.
        const double norm = std::max(1, match.positive_count);
        double cls = 0.0, reg = 0.0;
        for (int a = 0; a < A; ++a) {
            if (match.labels[a] == AnchorLabel::kIgnore) continue;
            for (int k = 0; k < K; ++k) {
                const double p = std::clamp<double>(out.cls_probs[a * K + k], 1e-6, 1.0 - 1e-6);
                const bool y = match.labels[a] == AnchorLabel::kPositive &&
                               gts[match.gt_index[a]].class_id == k;
                const double pt = y ? p : 1.0 - p;
                const double at = y ? 0.25 : 0.75;
                cls += -at * std::pow(1.0 - pt, 2.0) * std::log(pt);
            }
            if (match.labels[a] == AnchorLabel::kPositive) {
                for (int k = 0; k < 4; ++k) {
                    const double d = out.reg_offsets[a * 4 + k] - match.reg_targets[a][k];
                    reg += std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
                }
            }
        }
        cls /= norm;
        reg /= norm;
        CHECK(got.l_cls == doctest::Approx(cls).epsilon(1e-5));
        CHECK(got.l_reg == doctest::Approx(reg).epsilon(1e-5));
        CHECK(got.total == doctest::Approx(cls + reg).epsilon(1e-5));
    }
}

TEST_CASE("detection loss gradients pass finite differences on a tiny head") {
    AnchorConfig acfg{2, 2, 8.0f, {10.0f}, {1.0f}};
    const AnchorSet anchors = generate_anchors(acfg);
    std::vector<GroundTruth> gts = {{{2.0f, 2.0f, 13.0f, 13.0f}, 0}};
    TrainConfig tc;
    const AnchorMatch match = match_anchors(anchors, gts, tc.pos_iou, tc.neg_iou);
    REQUIRE(match.positive_count >= 1);

    Rng rng(66);
    Parameter logits("logits", Tensor({4, 1}));
    Parameter reg("reg", Tensor({4, 4}));
    for (size_t i = 0; i < logits.value.size(); ++i)
        logits.value[i] = static_cast<float>(rng.uniform(-1.5, 1.5));
    for (size_t i = 0; i < reg.value.size(); ++i)
        reg.value[i] = static_cast<float>(rng.uniform(-1.0, 1.0));

    auto build = [&](Graph& g) {
        return detection_loss_graph(g, g.sigmoid(g.param(logits)), g.param(reg), match, gts,
                                    1, tc, nullptr);
    };
    Graph g;
    const NodeId loss = build(g);
    logits.zero_grad();
    reg.zero_grad();
    g.backward(loss);
    const Tensor gl = logits.grad, gr = reg.grad;

    const float h = 1e-2f;
    auto fd_check = [&](Parameter& p, const Tensor& analytic) {
        for (size_t i = 0; i < p.value.size(); ++i) {
            const float orig = p.value[i];
            p.value[i] = orig + h;
            Graph gp;
            const double fp = gp.value(build(gp))[0];
            p.value[i] = orig - h;
            Graph gm;
            const double fm = gm.value(build(gm))[0];
            p.value[i] = orig;
            const double num = (fp - fm) / (2.0 * h);
            const double an = analytic[i];
            const double err =
                std::abs(num - an) / std::max({1.0, std::abs(an), std::abs(num)});
            INFO("entry ", i, " analytic ", an, " numeric ", num);
            CHECK(err < 1e-3);
        }
    };
    fd_check(logits, gl);
    fd_check(reg, gr);
}
