#include "gatefusion/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace gatefusion {

float iou(const Box& a, const Box& b) {
    const float ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const float iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (ix <= 0.0f || iy <= 0.0f) return 0.0f;
    const float inter = ix * iy;
    const float uni = a.area() + b.area() - inter;
    if (uni <= 0.0f) return 0.0f;
    return inter / uni;
}

AnchorSet generate_anchors(const AnchorConfig& config) {
    if (config.grid_h <= 0 || config.grid_w <= 0 || config.stride <= 0.0f ||
        config.scales.empty() || config.ratios.empty()) {
        throw GeometryError("generate_anchors: invalid anchor config");
    }
    AnchorSet set;
    set.config = config;
    set.boxes.reserve(static_cast<size_t>(config.total()));
    for (int gy = 0; gy < config.grid_h; ++gy) {
        for (int gx = 0; gx < config.grid_w; ++gx) {
            const float cx = (static_cast<float>(gx) + 0.5f) * config.stride;
            const float cy = (static_cast<float>(gy) + 0.5f) * config.stride;
            for (float scale : config.scales) {
                for (float ratio : config.ratios) {
                    // ratio = height/width at constant area scale^2
                    const float w = scale / std::sqrt(ratio);
                    const float h = scale * std::sqrt(ratio);
                    set.boxes.push_back({cx - 0.5f * w, cy - 0.5f * h,
                                         cx + 0.5f * w, cy + 0.5f * h});
                }
            }
        }
    }
    return set;
}

AnchorMatch match_anchors(const AnchorSet& anchors, const std::vector<GroundTruth>& gts,
                          float pos_iou, float neg_iou) {
    if (anchors.boxes.empty()) throw GeometryError("match_anchors: empty anchor set");
    if (pos_iou < neg_iou) throw GeometryError("match_anchors: pos_iou < neg_iou");

    const size_t A = anchors.boxes.size();
    AnchorMatch match;
    match.labels.assign(A, AnchorLabel::kNegative);
    match.gt_index.assign(A, -1);
    match.reg_targets.assign(A, {0.0f, 0.0f, 0.0f, 0.0f});
    if (gts.empty()) return match;

    std::vector<float> best_iou(A, 0.0f);
    std::vector<float> gt_best_iou(gts.size(), -1.0f);
    std::vector<size_t> gt_best_anchor(gts.size(), 0);

    for (size_t a = 0; a < A; ++a) {
        for (size_t g = 0; g < gts.size(); ++g) {
            const float v = iou(anchors.boxes[a], gts[g].box);
            if (v > best_iou[a]) {
                best_iou[a] = v;
                match.gt_index[a] = static_cast<int>(g);
            }
            if (v > gt_best_iou[g]) {
                gt_best_iou[g] = v;
                gt_best_anchor[g] = a;
            }
        }
        if (best_iou[a] >= pos_iou) {
            match.labels[a] = AnchorLabel::kPositive;
        } else if (best_iou[a] >= neg_iou) {
            match.labels[a] = AnchorLabel::kIgnore;
        }
    }
    // Force each GT's best anchor positive so no GT goes untrained.
    for (size_t g = 0; g < gts.size(); ++g) {
        const size_t a = gt_best_anchor[g];
        match.labels[a] = AnchorLabel::kPositive;
        match.gt_index[a] = static_cast<int>(g);
    }
    for (size_t a = 0; a < A; ++a) {
        if (match.labels[a] == AnchorLabel::kPositive) {
            match.reg_targets[a] = encode_box(anchors.boxes[a], gts[match.gt_index[a]].box);
            ++match.positive_count;
        } else {
            match.gt_index[a] = -1;
        }
    }
    return match;
}

std::array<float, 4> encode_box(const Box& anchor, const Box& gt) {
    const float wa = anchor.width();
    const float ha = anchor.height();
    if (wa <= 0.0f || ha <= 0.0f) throw GeometryError("encode_box: degenerate anchor");
    if (gt.width() <= 0.0f || gt.height() <= 0.0f)
        throw GeometryError("encode_box: non-positive ground-truth extent");
    return {(gt.cx() - anchor.cx()) / wa,
            (gt.cy() - anchor.cy()) / ha,
            std::log(gt.width() / wa),
            std::log(gt.height() / ha)};
}

Box decode_box(const Box& anchor, const std::array<float, 4>& offsets) {
    for (float v : offsets) {
        if (!std::isfinite(v)) throw GeometryError("decode_box: non-finite offsets");
    }
    const float wa = anchor.width();
    const float ha = anchor.height();
    const float cx = anchor.cx() + offsets[0] * wa;
    const float cy = anchor.cy() + offsets[1] * ha;
    const float w = wa * std::exp(offsets[2]);
    const float h = ha * std::exp(offsets[3]);
    const Box out{cx - 0.5f * w, cy - 0.5f * h, cx + 0.5f * w, cy + 0.5f * h};
    if (!std::isfinite(out.x_min) || !std::isfinite(out.y_min) || !std::isfinite(out.x_max) ||
        !std::isfinite(out.y_max))
        throw GeometryError("decode_box: decoded box is non-finite");
    return out;
}

namespace {
bool nms_order(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.box.x_min != b.box.x_min) return a.box.x_min < b.box.x_min;
    return a.box.y_min < b.box.y_min;
}
}  // namespace

std::vector<Detection> nms(std::vector<Detection> detections, float iou_threshold,
                           bool per_class) {
    std::stable_sort(detections.begin(), detections.end(), nms_order);
    std::vector<Detection> kept;
    std::vector<bool> suppressed(detections.size(), false);
    for (size_t i = 0; i < detections.size(); ++i) {
        if (suppressed[i]) continue;
        kept.push_back(detections[i]);
        for (size_t j = i + 1; j < detections.size(); ++j) {
            if (suppressed[j]) continue;
            if (per_class && detections[j].class_id != detections[i].class_id) continue;
            if (iou(detections[i].box, detections[j].box) >= iou_threshold)
                suppressed[j] = true;
        }
    }
    return kept;
}

}  // namespace gatefusion
