#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gatefusion/expert.hpp"
#include "gatefusion/graph.hpp"
#include "gatefusion/synthetic.hpp"
#include "gatefusion/tensor.hpp"

namespace gatefusion {

// Per-image simplex vector over experts, one scalar weight per expert.
using GateWeights = std::vector<float>;

struct GatingNetConfig {
    int image_h = 64;
    int image_w = 64;
    std::vector<int> backbone_channels{8, 12, 16};

    bool operator==(const GatingNetConfig&) const = default;
};

// Small conv backbone + global average pool + dense output sized to the
// expert count; gate = softmax of the output layer. The expert_id order is
// frozen at construction: gate index i is bound to expert i permanently.
struct GatingModel {
    GatingNetConfig config;
    std::vector<std::string> expert_ids;
    uint64_t seed = 0;
    std::vector<Parameter> params;

    int expert_count() const { return static_cast<int>(expert_ids.size()); }
    std::vector<Parameter*> param_ptrs();
    std::vector<const Parameter*> param_ptrs() const;
};

struct FusedOutput {
    Tensor cls_probs;    // [A, classes], convex combination of expert probs
    Tensor reg_offsets;  // [A, 4]
};

// Experts plus their (optional) trained gate; gate absent means uniform
// weights 1/n (the average baseline).
struct EnsembleSpec {
    std::vector<ExpertModel> experts;
    GatingModel gating;
    bool uniform = false;

    int expert_count() const { return static_cast<int>(experts.size()); }
};

GatingModel make_gating(const GatingNetConfig& config,
                        const std::vector<std::string>& expert_ids, uint64_t seed);

// Validates that all experts share input size, anchor config and class
// count, and that ids are unique. Throws ConfigError otherwise.
void validate_ensemble_experts(const std::vector<ExpertModel>& experts);

NodeId gate_graph(Graph& g, GatingModel& model, const Tensor& image, bool trainable);
GateWeights compute_gate(const GatingModel& model, const Tensor& image);

FusedOutput fuse(const GateWeights& gate, const std::vector<ExpertOutput>& outputs);

LossBreakdown gating_loss(const FusedOutput& fused, const AnchorMatch& match,
                          const std::vector<GroundTruth>& gts, int num_classes,
                          const TrainConfig& config);

GatingModel train_gating(const std::vector<ExpertModel>& experts,
                         const std::vector<SceneSample>& dataset, const TrainConfig& config,
                         const GatingNetConfig& net, TrainingCurve* curve = nullptr);

struct RankedWeight {
    std::string expert_id;
    int expert_index = 0;
    float mean_weight = 0.0f;
};

// Mean per-image gate weight over the dataset, sorted descending with ties
// broken by expert index ascending.
std::vector<RankedWeight> mean_gate_weights(const GatingModel& gating,
                                            const std::vector<ExpertModel>& experts,
                                            const std::vector<SceneSample>& dataset);

std::vector<int> select_top_k(const std::vector<RankedWeight>& ranking, int k);

struct TopKResult {
    EnsembleSpec ensemble;
    std::vector<RankedWeight> stage1_ranking;
    std::vector<int> selected;  // expert indices in the original order
};

TopKResult retrain_top_k(const std::vector<ExpertModel>& experts,
                         const std::vector<SceneSample>& dataset, int k,
                         const TrainConfig& config, const GatingNetConfig& net);

EnsembleSpec uniform_ensemble(std::vector<ExpertModel> experts);

void save_gating(const GatingModel& model, const std::string& path);
GatingModel load_gating(const std::string& path);

}  // namespace gatefusion
