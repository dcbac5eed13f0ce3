#pragma once

#include <map>
#include <string>
#include <vector>

#include "gatefusion/gating.hpp"
#include "gatefusion/geometry.hpp"
#include "gatefusion/synthetic.hpp"

namespace gatefusion {

struct InferenceConfig {
    float score_threshold = 0.05f;
    float nms_iou = 0.5f;
    int max_detections = 50;
    float eval_iou = 0.5f;  // IoU threshold for AP matching

    void validate() const;
};

// gate -> expert forwards -> fuse -> threshold -> decode+clip -> NMS.
std::vector<Detection> infer(const EnsembleSpec& ensemble, const Tensor& image,
                             const InferenceConfig& config);

// A detection tagged with the dataset image it came from.
struct ScoredDetection {
    int image_index = 0;
    Detection det;
};

// All-point interpolated AP (monotone precision envelope) for one class.
// Greedy matching by score: each detection takes the highest-IoU unmatched
// ground truth of its class. Returns AP in [0,1]; requires >= 1 GT.
double average_precision(const std::vector<ScoredDetection>& detections,
                         const std::vector<std::vector<GroundTruth>>& gts_per_image,
                         int class_id, float iou_threshold);

struct EvalReport {
    std::map<int, double> per_class_ap;
    double map = 0.0;
    int num_images = 0;
    int num_detections = 0;
};

EvalReport evaluate(const EnsembleSpec& ensemble, const std::vector<SceneSample>& dataset,
                    const InferenceConfig& config);

// Wraps one expert as a single-member ensemble.
EnsembleSpec solo_ensemble(const ExpertModel& expert);

// AP of every expert alone on every dataset; result[e][d].
std::vector<std::vector<double>> expert_matrix(
    const std::vector<ExpertModel>& experts,
    const std::vector<std::vector<SceneSample>>& datasets, const InferenceConfig& config);

}  // namespace gatefusion
