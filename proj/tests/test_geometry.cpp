#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gatefusion/geometry.hpp"
#include "gatefusion/rng.hpp"

using namespace gatefusion;

namespace {

// Independent quadratic NMS oracle: repeatedly pick the best remaining
// detection (score desc, x_min asc, y_min asc) and drop everything it
// overlaps at or above the threshold (same class only when per_class).
std::vector<Detection> nms_oracle(std::vector<Detection> dets, float thr, bool per_class) {
    std::vector<Detection> kept;
    std::vector<bool> alive(dets.size(), true);
    for (;;) {
        int best = -1;
        for (size_t i = 0; i < dets.size(); ++i) {
            if (!alive[i]) continue;
            if (best < 0) { best = static_cast<int>(i); continue; }
            const Detection& a = dets[i];
            const Detection& b = dets[best];
            const auto key = [](const Detection& d) {
                return std::tuple{-d.score, d.box.x_min, d.box.y_min};
            };
            if (key(a) < key(b)) best = static_cast<int>(i);
        }
        if (best < 0) break;
        alive[best] = false;
        kept.push_back(dets[best]);
        for (size_t i = 0; i < dets.size(); ++i) {
            if (!alive[i]) continue;
            if (per_class && dets[i].class_id != dets[best].class_id) continue;
            if (iou(dets[i].box, dets[best].box) >= thr) alive[i] = false;
        }
    }
    return kept;
}

bool same_detection(const Detection& a, const Detection& b) {
    return a.score == b.score && a.class_id == b.class_id && a.box.x_min == b.box.x_min &&
           a.box.y_min == b.box.y_min && a.box.x_max == b.box.x_max && a.box.y_max == b.box.y_max;
}

}  // namespace

TEST_CASE("iou hand-computed cases") {
    // Two 2x2 boxes offset by (1,1): intersection 1, union 7.
    CHECK(iou({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0).epsilon(1e-6));
    CHECK(iou({0, 0, 2, 2}, {0, 0, 2, 2}) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(iou({0, 0, 1, 1}, {5, 5, 6, 6}) == 0.0f);
    CHECK(iou({0, 0, 1, 1}, {1, 0, 2, 1}) == 0.0f);  // touching edges
    CHECK(iou({3, 3, 3, 3}, {0, 0, 6, 6}) == 0.0f);  // degenerate box
    // Containment: 1x1 inside 3x3 -> 1/9.
    CHECK(iou({1, 1, 2, 2}, {0, 0, 3, 3}) == doctest::Approx(1.0 / 9.0).epsilon(1e-6));
}

TEST_CASE("anchor generation: counts, centers, sizes, ordering") {
    AnchorConfig def;
    const AnchorSet anchors = generate_anchors(def);
    REQUIRE(static_cast<int>(anchors.boxes.size()) == def.total());
    CHECK(def.total() == 192);

    // Anchor 0: grid cell (0,0), scale 10, ratio 1 -> center (4,4), 10x10.
    const Box& a0 = anchors.boxes[0];
    CHECK(a0.cx() == doctest::Approx(4.0f));
    CHECK(a0.cy() == doctest::Approx(4.0f));
    CHECK(a0.width() == doctest::Approx(10.0f));
    CHECK(a0.height() == doctest::Approx(10.0f));
    // Second anchor at the same location is the next scale.
    CHECK(anchors.boxes[1].width() == doctest::Approx(16.0f));
    CHECK(anchors.boxes[1].cx() == doctest::Approx(4.0f));
    // Next grid cell to the right.
    CHECK(anchors.boxes[3].cx() == doctest::Approx(12.0f));
    CHECK(anchors.boxes[3].cy() == doctest::Approx(4.0f));

    AnchorConfig small{4, 4, 16.0f, {8.0f, 12.0f}, {0.5f, 1.0f, 2.0f}};
    const AnchorSet s = generate_anchors(small);
    CHECK(static_cast<int>(s.boxes.size()) == 96);
    // ratio = h/w: w = scale/sqrt(ratio), h = scale*sqrt(ratio); area preserved.
    for (size_t i = 0; i < s.boxes.size(); ++i) {
        CHECK(s.boxes[i].area() ==
              doctest::Approx(std::pow(small.scales[(i / 3) % 2], 2.0f)).epsilon(1e-4));
    }
    const Box& r0 = s.boxes[0];  // scale 8, ratio 0.5
    CHECK(r0.width() == doctest::Approx(8.0f / std::sqrt(0.5f)).epsilon(1e-5));
    CHECK(r0.height() == doctest::Approx(8.0f * std::sqrt(0.5f)).epsilon(1e-5));
}

TEST_CASE("match_anchors agrees with a brute-force oracle") {
    AnchorConfig cfg;
    const AnchorSet anchors = generate_anchors(cfg);
    Rng rng(101);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<GroundTruth> gts;
        const int n = rng.uniform_int(1, 4);
        for (int i = 0; i < n; ++i) {
            const float w = rng.uniform(8.0f, 26.0f);
            const float h = rng.uniform(8.0f, 26.0f);
            const float x = rng.uniform(0.0f, 64.0f - w);
            const float y = rng.uniform(0.0f, 64.0f - h);
            gts.push_back({{x, y, x + w, y + h}, 0});
        }
        const AnchorMatch m = match_anchors(anchors, gts, 0.5f, 0.4f);

        // Oracle: max-IoU labeling then force each GT's best anchor positive.
        const size_t A = anchors.boxes.size();
        std::vector<int> best_gt(A, -1);
        std::vector<float> best_iou(A, 0.0f);
        for (size_t a = 0; a < A; ++a)
            for (size_t g = 0; g < gts.size(); ++g) {
                const float v = iou(anchors.boxes[a], gts[g].box);
                if (v > best_iou[a]) { best_iou[a] = v; best_gt[a] = static_cast<int>(g); }
            }
        std::vector<AnchorLabel> labels(A, AnchorLabel::kNegative);
        for (size_t a = 0; a < A; ++a) {
            if (best_iou[a] >= 0.5f) labels[a] = AnchorLabel::kPositive;
            else if (best_iou[a] >= 0.4f) labels[a] = AnchorLabel::kIgnore;
        }
        for (size_t g = 0; g < gts.size(); ++g) {
            size_t arg = 0;
            float top = -1.0f;
            for (size_t a = 0; a < A; ++a) {
                const float v = iou(anchors.boxes[a], gts[g].box);
                if (v > top) { top = v; arg = a; }
            }
            labels[arg] = AnchorLabel::kPositive;
            best_gt[arg] = static_cast<int>(g);
        }
        int pos = 0;
        for (size_t a = 0; a < A; ++a) {
            CHECK(m.labels[a] == labels[a]);
            if (labels[a] == AnchorLabel::kPositive) {
                ++pos;
                CHECK(m.gt_index[a] == best_gt[a]);
                const auto t = encode_box(anchors.boxes[a], gts[best_gt[a]].box);
                for (int k = 0; k < 4; ++k)
                    CHECK(m.reg_targets[a][k] == doctest::Approx(t[k]).epsilon(1e-6));
            }
        }
        CHECK(m.positive_count == pos);
        CHECK(pos >= static_cast<int>(gts.size()) - 2);  // forced matches may collide
        CHECK(pos >= 1);
    }
}

TEST_CASE("encode/decode round-trips and rejects degenerate boxes") {
    Rng rng(102);
    auto U = [&rng](float lo, float hi) { return static_cast<float>(rng.uniform(lo, hi)); };
    for (int i = 0; i < 200; ++i) {
        const Box anchor{U(0, 40), U(0, 40), U(41, 64), U(41, 64)};
        const Box gt{U(0, 40), U(0, 40), U(41, 64), U(41, 64)};
        const Box back = decode_box(anchor, encode_box(anchor, gt));
        CHECK(back.x_min == doctest::Approx(gt.x_min).epsilon(1e-3));
        CHECK(back.y_min == doctest::Approx(gt.y_min).epsilon(1e-3));
        CHECK(back.x_max == doctest::Approx(gt.x_max).epsilon(1e-3));
        CHECK(back.y_max == doctest::Approx(gt.y_max).epsilon(1e-3));
    }
    CHECK_THROWS_AS(encode_box({0, 0, 0, 10}, {0, 0, 5, 5}), GeometryError);
    CHECK_THROWS_AS(encode_box({0, 0, 10, 10}, {0, 0, 0, 5}), GeometryError);
    CHECK_THROWS_AS(decode_box({0, 0, 10, 10}, {0.0f, 0.0f, 1e30f, 0.0f}), GeometryError);
}

TEST_CASE("nms matches the quadratic oracle on 1000 random instances") {
    Rng rng(103);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = rng.uniform_int(0, 20);
        std::vector<Detection> dets;
        for (int i = 0; i < n; ++i) {
            // Integer coordinates and coarse scores force frequent ties.
            const float x = static_cast<float>(rng.uniform_int(0, 8));
            const float y = static_cast<float>(rng.uniform_int(0, 8));
            const float w = static_cast<float>(rng.uniform_int(2, 6));
            const float h = static_cast<float>(rng.uniform_int(2, 6));
            Detection d;
            d.box = {x, y, x + w, y + h};
            d.class_id = rng.uniform_int(0, 1);
            d.score = 0.1f * static_cast<float>(rng.uniform_int(1, 9));
            dets.push_back(d);
        }
        const bool per_class = (trial % 2) == 0;
        const float thr = (trial % 3 == 0) ? 0.3f : 0.5f;
        const auto got = nms(dets, thr, per_class);
        const auto want = nms_oracle(dets, thr, per_class);
        REQUIRE(got.size() == want.size());
        for (size_t i = 0; i < got.size(); ++i) CHECK(same_detection(got[i], want[i]));
    }
}

TEST_CASE("nms keeps non-overlapping boxes and is idempotent") {
    std::vector<Detection> dets = {{{0, 0, 4, 4}, 0, 0.9f},
                                   {{10, 10, 14, 14}, 0, 0.8f},
                                   {{0.5f, 0.5f, 4.5f, 4.5f}, 0, 0.7f}};
    const auto once = nms(dets, 0.5f, true);
    REQUIRE(once.size() == 2);
    CHECK(once[0].score == 0.9f);
    CHECK(once[1].score == 0.8f);
    const auto twice = nms(once, 0.5f, true);
    REQUIRE(twice.size() == once.size());
    for (size_t i = 0; i < once.size(); ++i) CHECK(same_detection(once[i], twice[i]));
}
