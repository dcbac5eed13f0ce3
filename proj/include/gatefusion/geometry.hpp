#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace gatefusion {

struct GeometryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Corner-form box in absolute pixels, origin top-left.
struct Box {
    float x_min = 0.0f;
    float y_min = 0.0f;
    float x_max = 0.0f;
    float y_max = 0.0f;

    float width() const { return x_max - x_min; }
    float height() const { return y_max - y_min; }
    float area() const { return width() * height(); }
    float cx() const { return 0.5f * (x_min + x_max); }
    float cy() const { return 0.5f * (y_min + y_max); }
};

struct Detection {
    Box box;
    int class_id = 0;
    float score = 0.0f;
};

struct AnchorConfig {
    int grid_h = 8;
    int grid_w = 8;
    float stride = 8.0f;
    std::vector<float> scales{10.0f, 16.0f, 24.0f};
    std::vector<float> ratios{1.0f};

    int anchors_per_location() const {
        return static_cast<int>(scales.size() * ratios.size());
    }
    int total() const { return grid_h * grid_w * anchors_per_location(); }
    bool operator==(const AnchorConfig&) const = default;
};

// Anchors materialized in a fixed order: row-major over the grid, then
// scale, then ratio.
struct AnchorSet {
    AnchorConfig config;
    std::vector<Box> boxes;
};

enum class AnchorLabel : uint8_t { kNegative = 0, kPositive = 1, kIgnore = 2 };

struct AnchorMatch {
    std::vector<AnchorLabel> labels;
    std::vector<int> gt_index;                    // valid for positives only
    std::vector<std::array<float, 4>> reg_targets;  // (tx,ty,tw,th), positives only
    int positive_count = 0;
};

struct GroundTruth {
    Box box;
    int class_id = 0;
};

float iou(const Box& a, const Box& b);

AnchorSet generate_anchors(const AnchorConfig& config);

// RetinaNet-style matching: label by max-IoU GT (pos >= pos_iou,
// neg < neg_iou, else ignore); each GT's best anchor is forced positive.
AnchorMatch match_anchors(const AnchorSet& anchors, const std::vector<GroundTruth>& gts,
                          float pos_iou, float neg_iou);

std::array<float, 4> encode_box(const Box& anchor, const Box& gt);
Box decode_box(const Box& anchor, const std::array<float, 4>& offsets);

// Greedy NMS with the fixed tie-break (score desc, x_min asc, y_min asc);
// suppression is per-class when per_class is set.
std::vector<Detection> nms(std::vector<Detection> detections, float iou_threshold,
                           bool per_class = true);

}  // namespace gatefusion
