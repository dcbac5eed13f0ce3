#pragma once

#include <array>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "gatefusion/geometry.hpp"
#include "gatefusion/tensor.hpp"

namespace gatefusion {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One synthetic "camera location": background level, texture, object
// population statistics, and noise fully describe the location's bias.
struct DomainSpec {
    std::string domain_id;
    float background_hue = 0.5f;       // base pixel value in [0,1]
    float texture_amplitude = 0.0f;
    int object_count_min = 1;
    int object_count_max = 3;
    float object_scale_min = 10.0f;    // sqrt(area), pixels
    float object_scale_max = 20.0f;
    float object_aspect_min = 0.8f;    // height/width
    float object_aspect_max = 1.25f;
    float noise_sigma = 0.0f;
    float occluder_density = 0.0f;
    std::vector<int> class_set{0};

    void validate() const;
};

nlohmann::json domain_spec_to_json(const DomainSpec& spec);
DomainSpec domain_spec_from_json(const nlohmann::json& j);

struct SceneSample {
    Tensor image;                       // CHW float in [0,1], 1/255 quantized
    std::vector<GroundTruth> ground_truth;
    std::string sample_id;
};

// Pure function of (spec, seed, index): sample i is independent of n.
// Domain palette: a hue on the color wheel rendered as an RGB triple
// (fixed saturation/value). Objects use the complementary hue, so domains
// with distant hues have genuinely different channel statistics.
std::array<float, 3> hue_to_rgb(float hue);

SceneSample generate_scene(const DomainSpec& spec, uint64_t seed, int index,
                           int image_h, int image_w);
std::vector<SceneSample> generate_domain_dataset(const DomainSpec& spec, int n,
                                                 uint64_t seed, int image_h, int image_w);

// Directory layout: <dir>/manifest.json, <dir>/annotations.jsonl,
// <dir>/images/NNNNN.png.
void save_dataset(const std::vector<SceneSample>& samples, const DomainSpec& spec,
                  uint64_t seed, const std::string& dir);
std::vector<SceneSample> load_dataset(const std::string& dir);
DomainSpec load_dataset_spec(const std::string& dir);

// A target with its few-shot training sibling. The few-shot spec differs
// from the target only in nuisance parameters (<= 20% shift).
struct TargetPair {
    DomainSpec target;       // T: evaluation domain
    DomainSpec few_shot;     // T': training domain for the gate / fine-tuning
    int few_shot_count = 60;
    int matching_source = -1;  // index of the source spec T was derived from
};

struct ExperimentPreset {
    std::string name;
    std::vector<DomainSpec> sources;
    std::vector<TargetPair> targets;
    float hue_margin = 0.0f;   // declared minimum background separation
    int image_h = 64;
    int image_w = 64;
    int train_per_source = 60;
    int eval_per_domain = 40;
};

ExperimentPreset make_experiment_domains(const std::string& preset_name, uint64_t seed);

}  // namespace gatefusion
