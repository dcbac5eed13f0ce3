#include "gatefusion/experiments.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gatefusion/image_io.hpp"
#include "gatefusion/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gatefusion {

namespace {

constexpr int kReportVersion = 1;

json train_config_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},          {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate}, {"momentum", c.momentum},
                {"focal_alpha", c.focal_alpha},     {"focal_gamma", c.focal_gamma},
                {"pos_iou", c.pos_iou},             {"neg_iou", c.neg_iou}};
}

void write_meta(const std::string& artifact_path, const std::string& preset,
                const std::vector<uint64_t>& seeds, const ExperimentConfig& cfg) {
    json meta;
    meta["format_version"] = kReportVersion;
    meta["preset"] = preset;
    meta["seeds"] = seeds;
    meta["config"] = cfg.to_json();
    std::ofstream out(artifact_path + ".meta.json");
    if (!out) throw IoError("cannot write " + artifact_path + ".meta.json");
    out << meta.dump(2) << "\n";
}

std::ofstream open_out(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    return out;
}

}  // namespace

json ExperimentConfig::to_json() const {
    return json{
        {"image_h", net.image_h},
        {"image_w", net.image_w},
        {"num_classes", net.num_classes},
        {"backbone_channels", net.backbone_channels},
        {"gate_backbone_channels", gate_net.backbone_channels},
        {"anchors",
         {{"grid_h", net.anchors.grid_h},
          {"grid_w", net.anchors.grid_w},
          {"stride", net.anchors.stride},
          {"scales", net.anchors.scales},
          {"ratios", net.anchors.ratios}}},
        {"expert_train", train_config_json(expert_train)},
        {"gate_train", train_config_json(gate_train)},
        {"fine_tune_train", train_config_json(fine_tune_train)},
        {"inference",
         {{"score_threshold", infer.score_threshold},
          {"nms_iou", infer.nms_iou},
          {"max_detections", infer.max_detections},
          {"eval_iou", infer.eval_iou}}},
        {"top_k", top_k}};
}

ExperimentConfig default_experiment_config() {
    ExperimentConfig cfg;
    cfg.expert_train.epochs = 30;
    cfg.expert_train.learning_rate = 0.01f;
    cfg.gate_train.epochs = 40;
    cfg.gate_train.learning_rate = 0.05f;
    cfg.fine_tune_train.epochs = 10;
    cfg.fine_tune_train.learning_rate = 0.005f;
    return cfg;
}

ExperimentContext::ExperimentContext(std::string preset_name, ExperimentConfig config)
    : preset_name_(std::move(preset_name)), config_(std::move(config)) {}

const ExperimentContext::SeedCell& ExperimentContext::cell(uint64_t seed) {
    auto it = cells_.find(seed);
    if (it != cells_.end()) return it->second;

    SeedCell cell;
    cell.preset = make_experiment_domains(preset_name_, seed);
    const int H = cell.preset.image_h;
    const int W = cell.preset.image_w;

    for (const auto& spec : cell.preset.sources) {
        cell.source_train.push_back(generate_domain_dataset(
            spec, cell.preset.train_per_source,
            substream_seed(seed, "data:" + spec.domain_id + ":train"), H, W));
        cell.source_eval.push_back(generate_domain_dataset(
            spec, cell.preset.eval_per_domain,
            substream_seed(seed, "data:" + spec.domain_id + ":eval"), H, W));
    }
    for (const auto& tp : cell.preset.targets) {
        TargetData td;
        td.few_shot = generate_domain_dataset(
            tp.few_shot, tp.few_shot_count,
            substream_seed(seed, "data:" + tp.few_shot.domain_id + ":train"), H, W);
        td.eval = generate_domain_dataset(
            tp.target, cell.preset.eval_per_domain,
            substream_seed(seed, "data:" + tp.target.domain_id + ":eval"), H, W);
        cell.targets.push_back(std::move(td));
    }
    for (size_t i = 0; i < cell.preset.sources.size(); ++i) {
        TrainConfig tc = config_.expert_train;
        tc.seed = substream_seed(seed, "expert:" + cell.preset.sources[i].domain_id);
        cell.experts.push_back(train_expert(cell.source_train[i], tc, config_.net,
                                            cell.preset.sources[i].domain_id));
    }
    return cells_.emplace(seed, std::move(cell)).first->second;
}

double median(std::vector<double> values) {
    if (values.empty()) throw ConfigError("median of empty set");
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void run_method_comparison(ExperimentContext& ctx, const std::vector<uint64_t>& seeds,
                           const std::string& csv_path) {
    if (seeds.empty()) throw ConfigError("run_method_comparison: no seeds");
    const ExperimentConfig& cfg = ctx.config();
    const size_t n_targets = ctx.cell(seeds[0]).preset.targets.size();

    // [target][method][seed]
    std::vector<std::array<std::vector<double>, 5>> results(n_targets);

    for (uint64_t seed : seeds) {
        const auto& cell = ctx.cell(seed);
        for (size_t t = 0; t < n_targets; ++t) {
            const auto& target = cell.preset.targets[t];
            const auto& data = cell.targets[t];

            double max_single = 0.0;
            for (const auto& e : cell.experts) {
                max_single = std::max(max_single,
                                      evaluate(solo_ensemble(e), data.eval, cfg.infer).map);
            }

            TrainConfig ft = cfg.fine_tune_train;
            ft.seed = substream_seed(seed, "finetune:" + target.target.domain_id);
            const ExpertModel tuned = fine_tune(cell.experts[0], data.few_shot, ft);
            const double ft_map = evaluate(solo_ensemble(tuned), data.eval, cfg.infer).map;

            const double avg_map =
                evaluate(uniform_ensemble(cell.experts), data.eval, cfg.infer).map;

            TrainConfig gt = cfg.gate_train;
            gt.seed = substream_seed(seed, "gate:" + target.target.domain_id);
            EnsembleSpec gated;
            gated.experts = cell.experts;
            gated.gating = train_gating(cell.experts, data.few_shot, gt, cfg.gate_net);
            const double gate_map = evaluate(gated, data.eval, cfg.infer).map;

            const TopKResult topk =
                retrain_top_k(cell.experts, data.few_shot, cfg.top_k, gt, cfg.gate_net);
            const double topk_map = evaluate(topk.ensemble, data.eval, cfg.infer).map;

            results[t][0].push_back(max_single);
            results[t][1].push_back(ft_map);
            results[t][2].push_back(avg_map);
            results[t][3].push_back(gate_map);
            results[t][4].push_back(topk_map);
        }
    }

    std::ofstream out = open_out(csv_path);
    out << "target,max_single_expert,fine_tuning,average,gating_all,gating_topk\n";
    char buf[64];
    for (size_t t = 0; t < n_targets; ++t) {
        out << ctx.cell(seeds[0]).preset.targets[t].target.domain_id;
        for (int m = 0; m < 5; ++m) {
            std::snprintf(buf, sizeof(buf), ",%.4f", median(results[t][m]));
            out << buf;
        }
        out << "\n";
    }
    out.close();
    write_meta(csv_path, ctx.preset_name(), seeds, cfg);
}

void run_incremental(ExperimentContext& ctx, const std::vector<int>& model_counts,
                     const std::vector<uint64_t>& seeds, const std::string& csv_path) {
    if (seeds.empty()) throw ConfigError("run_incremental: no seeds");
    for (size_t i = 1; i < model_counts.size(); ++i) {
        if (model_counts[i] <= model_counts[i - 1])
            throw ConfigError("run_incremental: model_counts must be strictly increasing");
    }
    const ExperimentConfig& cfg = ctx.config();
    const auto& first = ctx.cell(seeds[0]);
    const size_t n_targets = first.preset.targets.size();
    const int n_experts = static_cast<int>(first.preset.sources.size());
    for (int m : model_counts) {
        if (m < 1 || m > n_experts)
            throw ConfigError("run_incremental: model count " + std::to_string(m) +
                              " out of range");
    }

    std::vector<std::vector<std::vector<double>>> results(
        n_targets, std::vector<std::vector<double>>(model_counts.size()));

    for (uint64_t seed : seeds) {
        const auto& cell = ctx.cell(seed);
        for (size_t t = 0; t < n_targets; ++t) {
            const auto& target = cell.preset.targets[t];
            TrainConfig gt = cfg.gate_train;
            gt.seed = substream_seed(seed, "gate:" + target.target.domain_id);
            for (size_t mi = 0; mi < model_counts.size(); ++mi) {
                std::vector<ExpertModel> prefix(cell.experts.begin(),
                                                cell.experts.begin() + model_counts[mi]);
                EnsembleSpec gated;
                gated.gating = train_gating(prefix, cell.targets[t].few_shot, gt, cfg.gate_net);
                gated.experts = std::move(prefix);
                results[t][mi].push_back(
                    evaluate(gated, cell.targets[t].eval, cfg.infer).map);
            }
        }
    }

    std::ofstream out = open_out(csv_path);
    out << "target";
    for (int m : model_counts) out << ",m" << m;
    out << "\n";
    char buf[64];
    for (size_t t = 0; t < n_targets; ++t) {
        out << first.preset.targets[t].target.domain_id;
        for (size_t mi = 0; mi < model_counts.size(); ++mi) {
            std::snprintf(buf, sizeof(buf), ",%.4f", median(results[t][mi]));
            out << buf;
        }
        out << "\n";
    }
    out.close();
    write_meta(csv_path, ctx.preset_name(), seeds, cfg);
}

void run_weight_ranking(ExperimentContext& ctx, int k, const std::vector<uint64_t>& seeds,
                        const std::string& out_dir) {
    if (seeds.empty()) throw ConfigError("run_weight_ranking: no seeds");
    const ExperimentConfig& cfg = ctx.config();
    fs::create_directories(out_dir);
    const size_t n_targets = ctx.cell(seeds[0]).preset.targets.size();

    for (size_t t = 0; t < n_targets; ++t) {
        const std::string target_id =
            ctx.cell(seeds[0]).preset.targets[t].target.domain_id;
        json per_seed = json::array();
        std::map<std::string, std::vector<double>> agg;

        for (uint64_t seed : seeds) {
            const auto& cell = ctx.cell(seed);
            TrainConfig gt = cfg.gate_train;
            gt.seed = substream_seed(seed, "gate:" + target_id);
            GatingModel gate =
                train_gating(cell.experts, cell.targets[t].few_shot, gt, cfg.gate_net);
            const auto ranking =
                mean_gate_weights(gate, cell.experts, cell.targets[t].few_shot);
            const auto selected = select_top_k(ranking, k);

            json jr = json::array();
            for (const auto& r : ranking) {
                jr.push_back({{"expert_id", r.expert_id},
                              {"mean_weight_pct", 100.0 * r.mean_weight}});
                agg[r.expert_id].push_back(static_cast<double>(r.mean_weight));
            }
            json jsel = json::array();
            for (int idx : selected) jsel.push_back(cell.experts[idx].expert_id);
            per_seed.push_back({{"seed", seed}, {"ranking", jr}, {"selected", jsel}});
        }

        std::vector<std::pair<std::string, double>> med;
        for (const auto& [id, vals] : agg) med.emplace_back(id, median(vals));
        std::stable_sort(med.begin(), med.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        json jmed = json::array();
        for (const auto& [id, w] : med)
            jmed.push_back({{"expert_id", id}, {"mean_weight_pct", 100.0 * w}});

        json report;
        report["format_version"] = kReportVersion;
        report["target"] = target_id;
        report["k"] = k;
        report["seeds"] = seeds;
        report["config"] = cfg.to_json();
        report["per_seed"] = per_seed;
        report["ranking"] = jmed;

        std::ofstream out = open_out((fs::path(out_dir) / ("ranking_" + target_id + ".json")).string());
        out << report.dump(2) << "\n";
    }
}

void run_expert_matrix(ExperimentContext& ctx, const std::vector<uint64_t>& seeds,
                       const std::string& json_path) {
    if (seeds.empty()) throw ConfigError("run_expert_matrix: no seeds");
    const ExperimentConfig& cfg = ctx.config();
    const auto& first = ctx.cell(seeds[0]);

    std::vector<std::string> dataset_ids;
    for (const auto& s : first.preset.sources) dataset_ids.push_back(s.domain_id);
    for (const auto& t : first.preset.targets) dataset_ids.push_back(t.target.domain_id);
    std::vector<std::string> expert_ids;
    for (const auto& s : first.preset.sources) expert_ids.push_back(s.domain_id);

    json per_seed = json::array();
    // [expert][dataset][seed]
    std::vector<std::vector<std::vector<double>>> acc(
        expert_ids.size(), std::vector<std::vector<double>>(dataset_ids.size()));

    for (uint64_t seed : seeds) {
        const auto& cell = ctx.cell(seed);
        std::vector<std::vector<SceneSample>> datasets = cell.source_eval;
        for (const auto& t : cell.targets) datasets.push_back(t.eval);
        const auto matrix = expert_matrix(cell.experts, datasets, cfg.infer);
        json jm = json::array();
        for (size_t e = 0; e < matrix.size(); ++e) {
            jm.push_back(matrix[e]);
            for (size_t d = 0; d < matrix[e].size(); ++d) acc[e][d].push_back(matrix[e][d]);
        }
        per_seed.push_back({{"seed", seed}, {"matrix", jm}});
    }

    json jmed = json::array();
    json jmax = json::array();
    for (size_t d = 0; d < dataset_ids.size(); ++d) {
        double best = 0.0;
        for (size_t e = 0; e < expert_ids.size(); ++e) best = std::max(best, median(acc[e][d]));
        jmax.push_back(best);
    }
    for (size_t e = 0; e < expert_ids.size(); ++e) {
        std::vector<double> row;
        for (size_t d = 0; d < dataset_ids.size(); ++d) row.push_back(median(acc[e][d]));
        jmed.push_back(row);
    }

    json report;
    report["format_version"] = kReportVersion;
    report["preset"] = ctx.preset_name();
    report["seeds"] = seeds;
    report["config"] = cfg.to_json();
    report["expert_ids"] = expert_ids;
    report["dataset_ids"] = dataset_ids;
    report["per_seed"] = per_seed;
    report["median_matrix"] = jmed;
    report["max_per_dataset"] = jmax;

    std::ofstream out = open_out(json_path);
    out << report.dump(2) << "\n";
}

}  // namespace gatefusion
