#pragma once

#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "gatefusion/expert.hpp"
#include "gatefusion/gating.hpp"
#include "gatefusion/inference.hpp"
#include "gatefusion/synthetic.hpp"

namespace gatefusion {

struct ExperimentConfig {
    ExpertNetConfig net;
    GatingNetConfig gate_net;
    TrainConfig expert_train;
    TrainConfig gate_train;
    TrainConfig fine_tune_train;
    InferenceConfig infer;
    int top_k = 2;

    nlohmann::json to_json() const;
};

ExperimentConfig default_experiment_config();

// Everything derived from one (preset, master seed) pair: datasets for all
// domains plus the trained source experts. Cells are built lazily and
// cached so the four runners can share training work.
class ExperimentContext {
public:
    struct TargetData {
        std::vector<SceneSample> few_shot;  // T' training samples
        std::vector<SceneSample> eval;      // T evaluation samples
    };
    struct SeedCell {
        ExperimentPreset preset;
        std::vector<std::vector<SceneSample>> source_train;
        std::vector<std::vector<SceneSample>> source_eval;
        std::vector<TargetData> targets;
        std::vector<ExpertModel> experts;
    };

    ExperimentContext(std::string preset_name, ExperimentConfig config);

    const SeedCell& cell(uint64_t seed);
    const std::string& preset_name() const { return preset_name_; }
    const ExperimentConfig& config() const { return config_; }

private:
    std::string preset_name_;
    ExperimentConfig config_;
    std::map<uint64_t, SeedCell> cells_;
};

// Table-2 analog: one CSV row per target, columns max single expert,
// fine-tuning, average, gating (all), gating (top-k); medians over seeds.
// A sibling <path>.meta.json records format_version, seeds and config.
void run_method_comparison(ExperimentContext& ctx, const std::vector<uint64_t>& seeds,
                           const std::string& csv_path);

// Table-4 analog: gate trained on expert prefixes of each size in
// model_counts; one row per target, one column per count.
void run_incremental(ExperimentContext& ctx, const std::vector<int>& model_counts,
                     const std::vector<uint64_t>& seeds, const std::string& csv_path);

// Table-3 analog: per-target JSON ranking reports (one file per target,
// ranking_<target>.json under out_dir).
void run_weight_ranking(ExperimentContext& ctx, int k, const std::vector<uint64_t>& seeds,
                        const std::string& out_dir);

// Fig.-6 / appendix analog: per-expert AP on every source and target
// domain, written as JSON.
void run_expert_matrix(ExperimentContext& ctx, const std::vector<uint64_t>& seeds,
                       const std::string& json_path);

double median(std::vector<double> values);

}  // namespace gatefusion
