#include "gatefusion/inference.hpp"

#include <algorithm>
#include <cmath>

namespace gatefusion {

void InferenceConfig::validate() const {
    if (score_threshold < 0.0f || score_threshold > 1.0f)
        throw ConfigError("inference config: score_threshold not in [0,1]");
    if (nms_iou < 0.0f || nms_iou > 1.0f)
        throw ConfigError("inference config: nms_iou not in [0,1]");
    if (eval_iou < 0.0f || eval_iou > 1.0f)
        throw ConfigError("inference config: eval_iou not in [0,1]");
    if (max_detections < 1) throw ConfigError("inference config: max_detections < 1");
}

std::vector<Detection> infer(const EnsembleSpec& ensemble, const Tensor& image,
                             const InferenceConfig& config) {
    config.validate();
    validate_ensemble_experts(ensemble.experts);
    const auto& net = ensemble.experts[0].config;
    const int n = ensemble.expert_count();

    GateWeights gate;
    if (ensemble.uniform) {
        gate.assign(static_cast<size_t>(n), 1.0f / static_cast<float>(n));
    } else {
        if (ensemble.gating.expert_count() != n)
            throw ConfigError("infer: gate width does not match expert count");
        for (int i = 0; i < n; ++i) {
            if (ensemble.gating.expert_ids[i] != ensemble.experts[i].expert_id)
                throw ConfigError("infer: expert order does not match gate binding at index " +
                                  std::to_string(i));
        }
        gate = compute_gate(ensemble.gating, image);
    }

    std::vector<ExpertOutput> outputs;
    outputs.reserve(static_cast<size_t>(n));
    for (const auto& e : ensemble.experts) outputs.push_back(expert_forward(e, image));
    const FusedOutput fused = fuse(gate, outputs);

    const AnchorSet anchors = generate_anchors(net.anchors);
    const int A = static_cast<int>(anchors.boxes.size());
    const int C = net.num_classes;
    const float img_w = static_cast<float>(net.image_w);
    const float img_h = static_cast<float>(net.image_h);

    std::vector<Detection> raw;
    for (int a = 0; a < A; ++a) {
        int best_c = 0;
        float best_p = fused.cls_probs[a * C];
        for (int c = 1; c < C; ++c) {
            if (fused.cls_probs[a * C + c] > best_p) {
                best_p = fused.cls_probs[a * C + c];
                best_c = c;
            }
        }
        if (best_p < config.score_threshold) continue;
        Box box = decode_box(anchors.boxes[a],
                             {fused.reg_offsets[a * 4], fused.reg_offsets[a * 4 + 1],
                              fused.reg_offsets[a * 4 + 2], fused.reg_offsets[a * 4 + 3]});
        box.x_min = std::clamp(box.x_min, 0.0f, img_w);
        box.x_max = std::clamp(box.x_max, 0.0f, img_w);
        box.y_min = std::clamp(box.y_min, 0.0f, img_h);
        box.y_max = std::clamp(box.y_max, 0.0f, img_h);
        if (box.width() <= 0.0f || box.height() <= 0.0f) continue;
        raw.push_back({box, best_c, best_p});
    }

    std::vector<Detection> kept = nms(std::move(raw), config.nms_iou, true);
    if (static_cast<int>(kept.size()) > config.max_detections)
        kept.resize(static_cast<size_t>(config.max_detections));
    return kept;
}

double average_precision(const std::vector<ScoredDetection>& detections,
                         const std::vector<std::vector<GroundTruth>>& gts_per_image,
                         int class_id, float iou_threshold) {
    size_t npos = 0;
    for (const auto& gts : gts_per_image)
        for (const auto& gt : gts)
            if (gt.class_id == class_id) ++npos;
    if (npos == 0) throw ConfigError("average_precision: no ground truth for class " +
                                     std::to_string(class_id));

    std::vector<ScoredDetection> dets;
    for (const auto& d : detections)
        if (d.det.class_id == class_id) dets.push_back(d);
    std::stable_sort(dets.begin(), dets.end(), [](const ScoredDetection& a, const ScoredDetection& b) {
        if (a.det.score != b.det.score) return a.det.score > b.det.score;
        if (a.image_index != b.image_index) return a.image_index < b.image_index;
        if (a.det.box.x_min != b.det.box.x_min) return a.det.box.x_min < b.det.box.x_min;
        return a.det.box.y_min < b.det.box.y_min;
    });

    std::vector<std::vector<bool>> matched(gts_per_image.size());
    for (size_t i = 0; i < gts_per_image.size(); ++i)
        matched[i].assign(gts_per_image[i].size(), false);

    std::vector<double> precision, recall;
    size_t tp = 0, fp = 0;
    for (const auto& d : dets) {
        const auto& gts = gts_per_image.at(static_cast<size_t>(d.image_index));
        int best_g = -1;
        float best_iou = 0.0f;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (gts[g].class_id != class_id || matched[d.image_index][g]) continue;
            const float v = iou(d.det.box, gts[g].box);
            if (v > best_iou) {
                best_iou = v;
                best_g = static_cast<int>(g);
            }
        }
        if (best_g >= 0 && best_iou >= iou_threshold) {
            matched[d.image_index][best_g] = true;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(npos));
    }

    // Monotone precision envelope, then sum over recall increments.
    double ap = 0.0;
    double pmax = 0.0;
    std::vector<double> envelope(precision.size());
    for (size_t i = precision.size(); i-- > 0;) {
        pmax = std::max(pmax, precision[i]);
        envelope[i] = pmax;
    }
    double prev_r = 0.0;
    for (size_t i = 0; i < recall.size(); ++i) {
        if (recall[i] > prev_r) {
            ap += (recall[i] - prev_r) * envelope[i];
            prev_r = recall[i];
        }
    }
    return ap;
}

EvalReport evaluate(const EnsembleSpec& ensemble, const std::vector<SceneSample>& dataset,
                    const InferenceConfig& config) {
    if (dataset.empty()) throw ConfigError("evaluate: empty dataset");
    EvalReport report;
    report.num_images = static_cast<int>(dataset.size());

    std::vector<ScoredDetection> all;
    std::vector<std::vector<GroundTruth>> gts;
    gts.reserve(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i) {
        for (const auto& d : infer(ensemble, dataset[i].image, config))
            all.push_back({static_cast<int>(i), d});
        gts.push_back(dataset[i].ground_truth);
    }
    report.num_detections = static_cast<int>(all.size());

    std::map<int, bool> classes;
    for (const auto& g : gts)
        for (const auto& gt : g) classes[gt.class_id] = true;

    double sum = 0.0;
    for (const auto& [cls, _] : classes) {
        const double ap = average_precision(all, gts, cls, config.eval_iou);
        report.per_class_ap[cls] = ap;
        sum += ap;
    }
    report.map = classes.empty() ? 0.0 : sum / static_cast<double>(classes.size());
    return report;
}

EnsembleSpec solo_ensemble(const ExpertModel& expert) {
    EnsembleSpec spec;
    spec.experts.push_back(expert);
    spec.uniform = true;
    return spec;
}

std::vector<std::vector<double>> expert_matrix(
    const std::vector<ExpertModel>& experts,
    const std::vector<std::vector<SceneSample>>& datasets, const InferenceConfig& config) {
    if (experts.empty() || datasets.empty())
        throw ConfigError("expert_matrix: need at least one expert and one dataset");
    std::vector<std::vector<double>> matrix(experts.size());
    for (size_t e = 0; e < experts.size(); ++e) {
        const EnsembleSpec solo = solo_ensemble(experts[e]);
        for (const auto& ds : datasets) matrix[e].push_back(evaluate(solo, ds, config).map);
    }
    return matrix;
}

}  // namespace gatefusion
