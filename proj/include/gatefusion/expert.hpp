#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gatefusion/geometry.hpp"
#include "gatefusion/graph.hpp"
#include "gatefusion/synthetic.hpp"
#include "gatefusion/tensor.hpp"

namespace gatefusion {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 1;
    float learning_rate = 0.01f;
    float momentum = 0.9f;
    float focal_alpha = 0.25f;
    float focal_gamma = 2.0f;
    float pos_iou = 0.5f;
    float neg_iou = 0.4f;
    uint64_t seed = 1;

    void validate() const;
};

struct ExpertNetConfig {
    int image_h = 64;
    int image_w = 64;
    int num_classes = 1;
    std::vector<int> backbone_channels{8, 16, 32};
    AnchorConfig anchors;

    bool operator==(const ExpertNetConfig&) const = default;
};

// Single-level anchor detector: conv+pool backbone to one stride-8 feature
// map, then 3x3 conv classification and box-regression heads.
struct ExpertModel {
    ExpertNetConfig config;
    std::string expert_id;
    std::string parent_id;     // set when fine-tuned from another expert
    uint64_t seed = 0;
    std::vector<Parameter> params;

    std::vector<Parameter*> param_ptrs();
    std::vector<const Parameter*> param_ptrs() const;
};

struct ExpertOutput {
    Tensor cls_probs;    // [A, classes], post-sigmoid
    Tensor reg_offsets;  // [A, 4]
};

ExpertModel make_expert(const ExpertNetConfig& config, const std::string& expert_id,
                        uint64_t seed);

// Graph-building forward pass; trainable=false treats parameters as
// constants so no gradient buffers are touched.
struct ExpertForwardNodes {
    NodeId cls_probs;
    NodeId reg_offsets;
};
ExpertForwardNodes expert_forward_graph(Graph& g, ExpertModel& model, const Tensor& image,
                                        bool trainable);
ExpertOutput expert_forward(const ExpertModel& model, const Tensor& image);

struct LossBreakdown {
    float l_reg = 0.0f;
    float l_cls = 0.0f;
    float total = 0.0f;
};

// Joint detection loss L = l_reg + l_cls on per-anchor outputs; focal loss
// over non-ignored anchors, smooth L1 over positives, both normalized by
// max(1, positive count).
NodeId detection_loss_graph(Graph& g, NodeId cls_probs, NodeId reg_offsets,
                            const AnchorMatch& match,
                            const std::vector<GroundTruth>& gts, int num_classes,
                            const TrainConfig& config, LossBreakdown* breakdown);

LossBreakdown detection_loss(const ExpertOutput& output, const AnchorMatch& match,
                             const std::vector<GroundTruth>& gts, int num_classes,
                             const TrainConfig& config);

struct TrainingCurve {
    std::vector<float> epoch_loss;
};

ExpertModel train_expert(const std::vector<SceneSample>& dataset, const TrainConfig& config,
                         const ExpertNetConfig& net, const std::string& expert_id,
                         TrainingCurve* curve = nullptr);

ExpertModel fine_tune(const ExpertModel& model, const std::vector<SceneSample>& few_shot,
                      const TrainConfig& config, TrainingCurve* curve = nullptr);

void save_expert(const ExpertModel& model, const std::string& path);
ExpertModel load_expert(const std::string& path);

}  // namespace gatefusion
