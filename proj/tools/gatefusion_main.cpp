#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "gatefusion/experiments.hpp"
#include "gatefusion/image_io.hpp"
#include "gatefusion/model_io.hpp"
#include "gatefusion/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gatefusion;

namespace {

constexpr int kArtifactVersion = 1;

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError("unknown config key '" + key + "' in " + where);
    }
}

void apply_train_json(const json& j, TrainConfig& c, const std::string& where) {
    check_keys(j, {"epochs", "batch_size", "learning_rate", "momentum", "focal_alpha",
                   "focal_gamma", "pos_iou", "neg_iou"}, where);
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<float>();
    if (j.contains("momentum")) c.momentum = j["momentum"].get<float>();
    if (j.contains("focal_alpha")) c.focal_alpha = j["focal_alpha"].get<float>();
    if (j.contains("focal_gamma")) c.focal_gamma = j["focal_gamma"].get<float>();
    if (j.contains("pos_iou")) c.pos_iou = j["pos_iou"].get<float>();
    if (j.contains("neg_iou")) c.neg_iou = j["neg_iou"].get<float>();
}

ExperimentConfig load_run_config(const std::string& path) {
    ExperimentConfig cfg = default_experiment_config();
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    json j = json::parse(in);
    check_keys(j, {"image_h", "image_w", "num_classes", "backbone_channels",
                   "gate_backbone_channels", "anchors", "expert_train", "gate_train",
                   "fine_tune_train", "inference", "top_k"}, path);
    if (j.contains("image_h")) cfg.net.image_h = cfg.gate_net.image_h = j["image_h"].get<int>();
    if (j.contains("image_w")) cfg.net.image_w = cfg.gate_net.image_w = j["image_w"].get<int>();
    if (j.contains("num_classes")) cfg.net.num_classes = j["num_classes"].get<int>();
    if (j.contains("backbone_channels"))
        cfg.net.backbone_channels = j["backbone_channels"].get<std::vector<int>>();
    if (j.contains("gate_backbone_channels"))
        cfg.gate_net.backbone_channels = j["gate_backbone_channels"].get<std::vector<int>>();
    if (j.contains("anchors")) {
        const json& a = j["anchors"];
        check_keys(a, {"grid_h", "grid_w", "stride", "scales", "ratios"}, path + ":anchors");
        if (a.contains("grid_h")) cfg.net.anchors.grid_h = a["grid_h"].get<int>();
        if (a.contains("grid_w")) cfg.net.anchors.grid_w = a["grid_w"].get<int>();
        if (a.contains("stride")) cfg.net.anchors.stride = a["stride"].get<float>();
        if (a.contains("scales")) cfg.net.anchors.scales = a["scales"].get<std::vector<float>>();
        if (a.contains("ratios")) cfg.net.anchors.ratios = a["ratios"].get<std::vector<float>>();
    }
    if (j.contains("expert_train")) apply_train_json(j["expert_train"], cfg.expert_train, path);
    if (j.contains("gate_train")) apply_train_json(j["gate_train"], cfg.gate_train, path);
    if (j.contains("fine_tune_train"))
        apply_train_json(j["fine_tune_train"], cfg.fine_tune_train, path);
    if (j.contains("inference")) {
        const json& i = j["inference"];
        check_keys(i, {"score_threshold", "nms_iou", "max_detections", "eval_iou"},
                   path + ":inference");
        if (i.contains("score_threshold"))
            cfg.infer.score_threshold = i["score_threshold"].get<float>();
        if (i.contains("nms_iou")) cfg.infer.nms_iou = i["nms_iou"].get<float>();
        if (i.contains("max_detections"))
            cfg.infer.max_detections = i["max_detections"].get<int>();
        if (i.contains("eval_iou")) cfg.infer.eval_iou = i["eval_iou"].get<float>();
    }
    if (j.contains("top_k")) cfg.top_k = j["top_k"].get<int>();
    return cfg;
}

std::vector<ExpertModel> load_experts(const std::vector<std::string>& paths) {
    std::vector<ExpertModel> out;
    for (const auto& p : paths) out.push_back(load_expert(p));
    validate_ensemble_experts(out);
    return out;
}

EnsembleSpec build_ensemble(const std::vector<std::string>& model_paths,
                            const std::string& gating_path) {
    EnsembleSpec e;
    e.experts = load_experts(model_paths);
    if (gating_path.empty()) {
        e.uniform = true;
    } else {
        e.gating = load_gating(gating_path);
        if (e.gating.expert_count() != e.expert_count())
            throw ConfigError("gating model width " + std::to_string(e.gating.expert_count()) +
                              " does not match " + std::to_string(e.expert_count()) +
                              " expert files");
        for (int i = 0; i < e.expert_count(); ++i) {
            if (e.gating.expert_ids[i] != e.experts[i].expert_id)
                throw ConfigError("expert order mismatch at index " + std::to_string(i) +
                                  ": gate expects '" + e.gating.expert_ids[i] + "', got '" +
                                  e.experts[i].expert_id + "'");
        }
    }
    return e;
}

json detections_json(const std::vector<Detection>& dets) {
    json arr = json::array();
    for (const auto& d : dets) {
        arr.push_back({{"box", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}},
                       {"class", d.class_id},
                       {"score", d.score}});
    }
    return arr;
}

void write_json(const std::string& path, const json& j) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << "\n";
}

std::vector<uint64_t> parse_seeds(const std::string& csv) {
    std::vector<uint64_t> seeds;
    size_t pos = 0;
    while (pos < csv.size()) {
        size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        seeds.push_back(std::stoull(csv.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    if (seeds.empty()) throw ConfigError("empty seed list");
    return seeds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gated fusion of frozen detectors trained on multiple source domains"};
    app.require_subcommand(1);

    std::string config_path;
    uint64_t seed = 1;
    app.add_option("--config", config_path, "JSON run configuration; unknown keys are rejected");
    app.add_option("--seed", seed, "Master seed; all randomness derives from it")
        ->capture_default_str();

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate synthetic domain datasets");
    std::string gen_preset, gen_spec, gen_out;
    int gen_count = 60;
    gen->add_option("--preset", gen_preset, "Preset name (small5, paper30, single1)");
    gen->add_option("--spec", gen_spec, "Single domain spec JSON file");
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--count", gen_count, "Sample count for --spec mode")->capture_default_str();

    // train-expert
    auto* te = app.add_subcommand("train-expert", "Train one expert on a domain dataset");
    std::string te_data, te_out, te_id;
    int te_epochs = -1;
    float te_lr = -1.0f;
    te->add_option("--data", te_data, "Dataset directory")->required();
    te->add_option("--out", te_out, "Output model file")->required();
    te->add_option("--expert-id", te_id, "Expert id; defaults to the dataset's domain_id");
    te->add_option("--epochs", te_epochs, "Override training epochs");
    te->add_option("--lr", te_lr, "Override learning rate");

    // fine-tune
    auto* ft = app.add_subcommand("fine-tune", "Continue training an expert on few samples");
    std::string ft_model, ft_data, ft_out;
    int ft_epochs = -1;
    float ft_lr = -1.0f;
    ft->add_option("--model", ft_model, "Input expert model")->required();
    ft->add_option("--data", ft_data, "Few-shot dataset directory")->required();
    ft->add_option("--out", ft_out, "Output model file")->required();
    ft->add_option("--epochs", ft_epochs, "Override fine-tune epochs");
    ft->add_option("--lr", ft_lr, "Override learning rate");

    // train-gating
    auto* tg = app.add_subcommand("train-gating", "Train the gating network over experts");
    std::vector<std::string> tg_models;
    std::string tg_data, tg_out;
    int tg_epochs = -1;
    float tg_lr = -1.0f;
    tg->add_option("--model", tg_models, "Expert model files, in gate order")->required();
    tg->add_option("--data", tg_data, "Training dataset directory")->required();
    tg->add_option("--out", tg_out, "Output gating model file")->required();
    tg->add_option("--epochs", tg_epochs, "Override gate training epochs");
    tg->add_option("--lr", tg_lr, "Override learning rate");

    // select-topk
    auto* sk = app.add_subcommand("select-topk",
                                  "Rank experts by mean gate weight, keep k, re-train the gate");
    std::string sk_gating, sk_data, sk_out, sk_manual;
    std::vector<std::string> sk_models;
    int sk_k = 2;
    sk->add_option("--gating", sk_gating, "Trained gating model over all experts")->required();
    sk->add_option("--model", sk_models, "Expert model files, in gate order")->required();
    sk->add_option("--data", sk_data, "Training dataset directory")->required();
    sk->add_option("--k", sk_k, "Number of experts to keep")->capture_default_str();
    sk->add_option("--manual-ids", sk_manual,
                   "Comma-separated expert ids overriding the automatic selection");
    sk->add_option("--out", sk_out, "Output directory")->required();

    // infer
    auto* inf = app.add_subcommand("infer", "Run fused inference");
    std::vector<std::string> inf_models;
    std::string inf_gating, inf_image, inf_data, inf_out;
    float inf_score = -1.0f, inf_nms = -1.0f;
    int inf_max = -1;
    inf->add_option("--model", inf_models, "Expert model files")->required();
    inf->add_option("--gating", inf_gating, "Gating model; omitted means uniform weights");
    inf->add_option("--image", inf_image, "Single input PNG");
    inf->add_option("--data", inf_data, "Dataset directory");
    inf->add_option("--out", inf_out, "Output JSON file")->required();
    inf->add_option("--score-threshold", inf_score, "Override score threshold");
    inf->add_option("--nms-iou", inf_nms, "Override NMS IoU threshold");
    inf->add_option("--max-detections", inf_max, "Override per-image detection cap");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate an ensemble (AP/mAP) on a dataset");
    std::vector<std::string> ev_models;
    std::string ev_gating, ev_data, ev_out, ev_label = "ensemble";
    float ev_iou = -1.0f;
    ev->add_option("--model", ev_models, "Expert model files")->required();
    ev->add_option("--gating", ev_gating, "Gating model; omitted means uniform weights");
    ev->add_option("--data", ev_data, "Evaluation dataset directory")->required();
    ev->add_option("--out", ev_out, "Output report JSON")->required();
    ev->add_option("--eval-iou", ev_iou, "Override AP matching IoU");
    ev->add_option("--label", ev_label, "Method label recorded in the report")
        ->capture_default_str();

    // experiment
    auto* ex = app.add_subcommand("experiment", "Run a full experiment preset");
    std::string ex_name, ex_preset = "small5", ex_out, ex_seeds = "1,2,3", ex_counts;
    int ex_k = -1;
    ex->add_option("--name", ex_name,
                   "method_comparison | incremental | weight_ranking | expert_matrix")
        ->required();
    ex->add_option("--preset", ex_preset, "Domain preset")->capture_default_str();
    ex->add_option("--seeds", ex_seeds, "Comma-separated seed list")->capture_default_str();
    ex->add_option("--counts", ex_counts, "Model counts for incremental (default 1..n)");
    ex->add_option("--k", ex_k, "Top-k override");
    ex->add_option("--out", ex_out, "Output directory")->required();

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();
    CLI11_PARSE(app, argc, argv);

    try {
        ExperimentConfig cfg = load_run_config(config_path);

        if (gen->parsed()) {
            if (gen_preset.empty() == gen_spec.empty())
                throw ConfigError("gen-data: exactly one of --preset / --spec is required");
            if (!gen_spec.empty()) {
                std::ifstream in(gen_spec);
                if (!in) throw IoError("cannot open spec file: " + gen_spec);
                const DomainSpec spec = domain_spec_from_json(json::parse(in));
                const uint64_t ds = substream_seed(seed, "data:" + spec.domain_id + ":train");
                save_dataset(generate_domain_dataset(spec, gen_count, ds, cfg.net.image_h,
                                                     cfg.net.image_w),
                             spec, ds, gen_out);
            } else {
                const ExperimentPreset preset = make_experiment_domains(gen_preset, seed);
                json snapshot;
                snapshot["format_version"] = kArtifactVersion;
                snapshot["seed"] = seed;
                snapshot["preset"] = gen_preset;
                snapshot["config"] = cfg.to_json();
                json specs = json::array();
                auto emit = [&](const DomainSpec& spec, const std::string& split, int count) {
                    const uint64_t ds =
                        substream_seed(seed, "data:" + spec.domain_id + ":" + split);
                    save_dataset(generate_domain_dataset(spec, count, ds, preset.image_h,
                                                         preset.image_w),
                                 spec, ds, (fs::path(gen_out) / spec.domain_id / split).string());
                    specs.push_back(domain_spec_to_json(spec));
                };
                for (const auto& s : preset.sources) {
                    emit(s, "train", preset.train_per_source);
                    emit(s, "eval", preset.eval_per_domain);
                }
                for (const auto& t : preset.targets) {
                    emit(t.target, "eval", preset.eval_per_domain);
                    emit(t.few_shot, "train", t.few_shot_count);
                }
                snapshot["specs"] = specs;
                write_json((fs::path(gen_out) / "preset.json").string(), snapshot);
            }
        } else if (te->parsed()) {
            if (te_epochs >= 0) cfg.expert_train.epochs = te_epochs;
            if (te_lr > 0.0f) cfg.expert_train.learning_rate = te_lr;
            const DomainSpec spec = load_dataset_spec(te_data);
            const std::string id = te_id.empty() ? spec.domain_id : te_id;
            cfg.expert_train.seed = substream_seed(seed, "expert:" + id);
            save_expert(train_expert(load_dataset(te_data), cfg.expert_train, cfg.net, id),
                        te_out);
        } else if (ft->parsed()) {
            if (ft_epochs >= 0) cfg.fine_tune_train.epochs = ft_epochs;
            if (ft_lr > 0.0f) cfg.fine_tune_train.learning_rate = ft_lr;
            const ExpertModel model = load_expert(ft_model);
            cfg.fine_tune_train.seed = substream_seed(seed, "finetune:" + model.expert_id);
            save_expert(fine_tune(model, load_dataset(ft_data), cfg.fine_tune_train), ft_out);
        } else if (tg->parsed()) {
            if (tg_epochs >= 0) cfg.gate_train.epochs = tg_epochs;
            if (tg_lr > 0.0f) cfg.gate_train.learning_rate = tg_lr;
            cfg.gate_train.seed = substream_seed(seed, "gate");
            save_gating(train_gating(load_experts(tg_models), load_dataset(tg_data),
                                     cfg.gate_train, cfg.gate_net),
                        tg_out);
        } else if (sk->parsed()) {
            const EnsembleSpec all = build_ensemble(sk_models, sk_gating);
            const auto dataset = load_dataset(sk_data);
            const auto ranking = mean_gate_weights(all.gating, all.experts, dataset);

            std::vector<int> selected;
            if (!sk_manual.empty()) {
                size_t pos = 0;
                while (pos < sk_manual.size()) {
                    size_t comma = sk_manual.find(',', pos);
                    if (comma == std::string::npos) comma = sk_manual.size();
                    const std::string id = sk_manual.substr(pos, comma - pos);
                    pos = comma + 1;
                    auto it = std::find_if(all.experts.begin(), all.experts.end(),
                                           [&](const ExpertModel& e) { return e.expert_id == id; });
                    if (it == all.experts.end())
                        throw ConfigError("--manual-ids: unknown expert id '" + id + "'");
                    selected.push_back(static_cast<int>(it - all.experts.begin()));
                }
                std::sort(selected.begin(), selected.end());
            } else {
                selected = select_top_k(ranking, sk_k);
            }

            std::vector<ExpertModel> subset;
            for (int idx : selected) subset.push_back(all.experts[idx]);
            TrainConfig stage2 = cfg.gate_train;
            stage2.seed = substream_seed(seed, "topk-stage2", static_cast<uint64_t>(sk_k));
            const GatingModel gate2 = train_gating(subset, dataset, stage2, cfg.gate_net);
            save_gating(gate2, (fs::path(sk_out) / "gating_topk.gfgt").string());

            json report;
            report["format_version"] = kArtifactVersion;
            report["seed"] = seed;
            report["config"] = cfg.to_json();
            report["k"] = sk_k;
            report["manual"] = !sk_manual.empty();
            json jr = json::array();
            for (const auto& r : ranking)
                jr.push_back({{"expert_id", r.expert_id},
                              {"mean_weight_pct", 100.0 * r.mean_weight}});
            report["ranking"] = jr;
            json jsel = json::array();
            for (int idx : selected) jsel.push_back(all.experts[idx].expert_id);
            report["selected"] = jsel;
            write_json((fs::path(sk_out) / "selection.json").string(), report);
        } else if (inf->parsed()) {
            if (inf_score >= 0.0f) cfg.infer.score_threshold = inf_score;
            if (inf_nms >= 0.0f) cfg.infer.nms_iou = inf_nms;
            if (inf_max > 0) cfg.infer.max_detections = inf_max;
            const EnsembleSpec ensemble = build_ensemble(inf_models, inf_gating);
            if (inf_image.empty() == inf_data.empty())
                throw ConfigError("infer: exactly one of --image / --data is required");
            if (!inf_image.empty()) {
                write_json(inf_out,
                           detections_json(infer(ensemble, read_png_rgb(inf_image), cfg.infer)));
            } else {
                const auto dataset = load_dataset(inf_data);
                json results = json::array();
                for (const auto& s : dataset) {
                    results.push_back({{"image", s.sample_id},
                                       {"detections",
                                        detections_json(infer(ensemble, s.image, cfg.infer))}});
                }
                write_json(inf_out, json{{"format_version", kArtifactVersion},
                                         {"seed", seed},
                                         {"config", cfg.to_json()},
                                         {"results", results}});
            }
        } else if (ev->parsed()) {
            if (ev_iou >= 0.0f) cfg.infer.eval_iou = ev_iou;
            const EnsembleSpec ensemble = build_ensemble(ev_models, ev_gating);
            const EvalReport report = evaluate(ensemble, load_dataset(ev_data), cfg.infer);
            json jap;
            for (const auto& [cls, ap] : report.per_class_ap) jap[std::to_string(cls)] = ap;
            write_json(ev_out, json{{"format_version", kArtifactVersion},
                                    {"seed", seed},
                                    {"config", cfg.to_json()},
                                    {"method", ev_label},
                                    {"num_images", report.num_images},
                                    {"num_detections", report.num_detections},
                                    {"per_class_ap", jap},
                                    {"map", report.map}});
        } else if (ex->parsed()) {
            if (ex_k > 0) cfg.top_k = ex_k;
            const auto seeds = parse_seeds(ex_seeds);
            ExperimentContext ctx(ex_preset, cfg);
            fs::create_directories(ex_out);
            if (ex_name == "method_comparison") {
                run_method_comparison(ctx, seeds,
                                      (fs::path(ex_out) / "method_comparison.csv").string());
            } else if (ex_name == "incremental") {
                std::vector<int> counts;
                if (ex_counts.empty()) {
                    const int n = static_cast<int>(
                        make_experiment_domains(ex_preset, seeds[0]).sources.size());
                    for (int m = 1; m <= n; ++m) counts.push_back(m);
                } else {
                    size_t pos = 0;
                    while (pos < ex_counts.size()) {
                        size_t comma = ex_counts.find(',', pos);
                        if (comma == std::string::npos) comma = ex_counts.size();
                        counts.push_back(std::stoi(ex_counts.substr(pos, comma - pos)));
                        pos = comma + 1;
                    }
                }
                run_incremental(ctx, counts, seeds,
                                (fs::path(ex_out) / "incremental.csv").string());
            } else if (ex_name == "weight_ranking") {
                run_weight_ranking(ctx, cfg.top_k, seeds, ex_out);
            } else if (ex_name == "expert_matrix") {
                run_expert_matrix(ctx, seeds,
                                  (fs::path(ex_out) / "expert_matrix.json").string());
            } else {
                throw ConfigError("unknown experiment name: " + ex_name);
            }
        }
    } catch (const NumericError& e) {
        std::cerr << "error: numeric: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "error: io: " << e.what() << "\n";
        return 2;
    } catch (const ModelIoError& e) {
        std::cerr << "error: io: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: validation: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
