#include "gatefusion/gating.hpp"

#include <algorithm>
#include <cmath>

#include "gatefusion/model_io.hpp"
#include "gatefusion/rng.hpp"

using nlohmann::json;

namespace gatefusion {

namespace {
constexpr char kGatingMagic[4] = {'G', 'F', 'G', 'T'};
}

std::vector<Parameter*> GatingModel::param_ptrs() {
    std::vector<Parameter*> out;
    out.reserve(params.size());
    for (auto& p : params) out.push_back(&p);
    return out;
}

std::vector<const Parameter*> GatingModel::param_ptrs() const {
    std::vector<const Parameter*> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(&p);
    return out;
}

GatingModel make_gating(const GatingNetConfig& config,
                        const std::vector<std::string>& expert_ids, uint64_t seed) {
    if (expert_ids.empty()) throw ConfigError("gating: empty expert list");
    for (size_t i = 0; i < expert_ids.size(); ++i)
        for (size_t j = i + 1; j < expert_ids.size(); ++j)
            if (expert_ids[i] == expert_ids[j])
                throw ConfigError("gating: duplicate expert id '" + expert_ids[i] + "'");
    if (config.backbone_channels.empty()) throw ConfigError("gating: empty backbone");
    GatingModel m;
    m.config = config;
    m.expert_ids = expert_ids;
    m.seed = seed;
    Rng rng(substream_seed(seed, "gate-init"));

    int cin = 3;
    for (size_t i = 0; i < config.backbone_channels.size(); ++i) {
        const int cout = config.backbone_channels[i];
        Parameter w("backbone.conv" + std::to_string(i) + ".w", Tensor({cout, cin, 3, 3}));
        init_he_uniform(w.value, cin * 9, rng);
        m.params.push_back(std::move(w));
        m.params.emplace_back("backbone.conv" + std::to_string(i) + ".b", Tensor({cout}));
        cin = cout;
    }
    const int n = static_cast<int>(expert_ids.size());
    Parameter fw("fc.w", Tensor({n, cin}));
    init_he_uniform(fw.value, cin, rng);
    m.params.push_back(std::move(fw));
    m.params.emplace_back("fc.b", Tensor({n}));
    return m;
}

void validate_ensemble_experts(const std::vector<ExpertModel>& experts) {
    if (experts.empty()) throw ConfigError("ensemble: no experts");
    for (size_t i = 1; i < experts.size(); ++i) {
        if (!(experts[i].config == experts[0].config)) {
            throw ConfigError("ensemble: expert '" + experts[i].expert_id +
                              "' configuration differs from '" + experts[0].expert_id + "'");
        }
    }
    for (size_t i = 0; i < experts.size(); ++i) {
        for (size_t j = i + 1; j < experts.size(); ++j) {
            if (experts[i].expert_id == experts[j].expert_id)
                throw ConfigError("ensemble: duplicate expert_id '" + experts[i].expert_id + "'");
        }
    }
}

NodeId gate_graph(Graph& g, GatingModel& model, const Tensor& image, bool trainable) {
    const auto& cfg = model.config;
    if (image.ndim() != 3 || image.dim(0) != 3 || image.dim(1) != cfg.image_h ||
        image.dim(2) != cfg.image_w) {
        throw DimensionError("compute_gate: image " + Tensor::shape_str(image.shape()) +
                             " does not match expected [3," + std::to_string(cfg.image_h) +
                             "," + std::to_string(cfg.image_w) + "]");
    }
    auto p = [&](size_t i) -> NodeId {
        return trainable ? g.param(model.params[i]) : g.constant(model.params[i].value);
    };
    NodeId x = g.constant(Tensor({1, 3, cfg.image_h, cfg.image_w}, image.vec()));
    const size_t blocks = cfg.backbone_channels.size();
    for (size_t i = 0; i < blocks; ++i) {
        x = g.conv2d(x, p(2 * i), p(2 * i + 1), 1, 1);
        x = g.relu(x);
        x = g.max_pool2d(x, 2, 2);
    }
    x = g.global_avg_pool(x);
    x = g.dense(x, p(2 * blocks), p(2 * blocks + 1));
    return g.softmax(x, 1);
}

GateWeights compute_gate(const GatingModel& model, const Tensor& image) {
    Graph g;
    NodeId out = gate_graph(g, const_cast<GatingModel&>(model), image, false);
    return g.value(out).vec();
}

FusedOutput fuse(const GateWeights& gate, const std::vector<ExpertOutput>& outputs) {
    if (gate.size() != outputs.size()) {
        throw DimensionError("fuse: gate length " + std::to_string(gate.size()) + " vs " +
                             std::to_string(outputs.size()) + " expert outputs");
    }
    if (outputs.empty()) throw DimensionError("fuse: no expert outputs");
    float total = 0.0f;
    for (size_t i = 0; i < gate.size(); ++i) {
        if (!std::isfinite(gate[i]) || gate[i] < 0.0f)
            throw NumericError("fuse: gate weight " + std::to_string(i) +
                               " is negative or non-finite");
        total += gate[i];
    }
    if (std::abs(total - 1.0f) > 1e-4f)
        throw NumericError("fuse: gate weights sum to " + std::to_string(total) +
                           ", expected 1");
    for (size_t i = 1; i < outputs.size(); ++i) {
        if (!outputs[i].cls_probs.same_shape(outputs[0].cls_probs) ||
            !outputs[i].reg_offsets.same_shape(outputs[0].reg_offsets)) {
            throw DimensionError("fuse: expert output " + std::to_string(i) + " shape mismatch");
        }
    }
    FusedOutput fused{Tensor(outputs[0].cls_probs.shape()),
                      Tensor(outputs[0].reg_offsets.shape())};
    // Index-ascending summation order, fixed for bit-reproducibility.
    for (size_t i = 0; i < outputs.size(); ++i) {
        const float g = gate[i];
        for (size_t j = 0; j < fused.cls_probs.size(); ++j)
            fused.cls_probs[j] += g * outputs[i].cls_probs[j];
        for (size_t j = 0; j < fused.reg_offsets.size(); ++j)
            fused.reg_offsets[j] += g * outputs[i].reg_offsets[j];
    }
    return fused;
}

LossBreakdown gating_loss(const FusedOutput& fused, const AnchorMatch& match,
                          const std::vector<GroundTruth>& gts, int num_classes,
                          const TrainConfig& config) {
    return detection_loss({fused.cls_probs, fused.reg_offsets}, match, gts, num_classes, config);
}

GatingModel train_gating(const std::vector<ExpertModel>& experts,
                         const std::vector<SceneSample>& dataset, const TrainConfig& config,
                         const GatingNetConfig& net, TrainingCurve* curve) {
    config.validate();
    validate_ensemble_experts(experts);
    if (dataset.empty()) throw ConfigError("train_gating: empty dataset");

    std::vector<std::string> ids;
    for (const auto& e : experts) ids.push_back(e.expert_id);
    GatingModel gate = make_gating(net, ids, config.seed);

    // Experts are frozen: their outputs per image are computed once and
    // cached for all epochs.
    const size_t n = experts.size();
    std::vector<std::vector<ExpertOutput>> cache(dataset.size());
    for (size_t s = 0; s < dataset.size(); ++s) {
        cache[s].reserve(n);
        for (const auto& e : experts) cache[s].push_back(expert_forward(e, dataset[s].image));
    }

    const AnchorSet anchors = generate_anchors(experts[0].config.anchors);
    std::vector<AnchorMatch> matches;
    matches.reserve(dataset.size());
    for (const auto& s : dataset)
        matches.push_back(match_anchors(anchors, s.ground_truth, config.pos_iou, config.neg_iou));

    SgdOptimizer opt(config.learning_rate, config.momentum);
    auto params = gate.param_ptrs();
    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    const uint64_t loop_seed = substream_seed(config.seed, "gate-train", n);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng(substream_seed(loop_seed, "shuffle", static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1)]);

        double epoch_loss = 0.0;
        for (size_t idx : order) {
            Graph g;
            NodeId gw = gate_graph(g, gate, dataset[idx].image, true);
            std::vector<const Tensor*> cls_terms, reg_terms;
            for (size_t e = 0; e < n; ++e) {
                cls_terms.push_back(&cache[idx][e].cls_probs);
                reg_terms.push_back(&cache[idx][e].reg_offsets);
            }
            NodeId fused_cls = g.weighted_sum(gw, cls_terms);
            NodeId fused_reg = g.weighted_sum(gw, reg_terms);
            LossBreakdown lb;
            NodeId loss = detection_loss_graph(g, fused_cls, fused_reg, matches[idx],
                                               dataset[idx].ground_truth,
                                               experts[0].config.num_classes, config, &lb);
            if (!std::isfinite(lb.total))
                throw NumericError("gate training diverged at epoch " + std::to_string(epoch));
            opt.zero_grad(params);
            g.backward(loss);
            opt.step(params);
            epoch_loss += lb.total;
        }
        if (curve)
            curve->epoch_loss.push_back(
                static_cast<float>(epoch_loss / static_cast<double>(dataset.size())));
    }
    return gate;
}

std::vector<RankedWeight> mean_gate_weights(const GatingModel& gating,
                                            const std::vector<ExpertModel>& experts,
                                            const std::vector<SceneSample>& dataset) {
    if (dataset.empty()) throw ConfigError("mean_gate_weights: empty dataset");
    if (static_cast<int>(experts.size()) != gating.expert_count())
        throw ConfigError("mean_gate_weights: expert count does not match gate width");
    const size_t n = experts.size();
    std::vector<double> acc(n, 0.0);
    for (const auto& s : dataset) {
        GateWeights w = compute_gate(gating, s.image);
        for (size_t i = 0; i < n; ++i) acc[i] += w[i];
    }
    std::vector<RankedWeight> ranking(n);
    for (size_t i = 0; i < n; ++i) {
        ranking[i].expert_id = gating.expert_ids[i];
        ranking[i].expert_index = static_cast<int>(i);
        ranking[i].mean_weight = static_cast<float>(acc[i] / static_cast<double>(dataset.size()));
    }
    std::stable_sort(ranking.begin(), ranking.end(), [](const RankedWeight& a, const RankedWeight& b) {
        if (a.mean_weight != b.mean_weight) return a.mean_weight > b.mean_weight;
        return a.expert_index < b.expert_index;
    });
    return ranking;
}

std::vector<int> select_top_k(const std::vector<RankedWeight>& ranking, int k) {
    if (k < 1 || k > static_cast<int>(ranking.size()))
        throw ConfigError("select_top_k: k=" + std::to_string(k) + " out of range [1," +
                          std::to_string(ranking.size()) + "]");
    std::vector<int> selected;
    for (int i = 0; i < k; ++i) selected.push_back(ranking[i].expert_index);
    std::sort(selected.begin(), selected.end());
    return selected;
}

TopKResult retrain_top_k(const std::vector<ExpertModel>& experts,
                         const std::vector<SceneSample>& dataset, int k,
                         const TrainConfig& config, const GatingNetConfig& net) {
    TopKResult result;
    GatingModel stage1 = train_gating(experts, dataset, config, net);
    result.stage1_ranking = mean_gate_weights(stage1, experts, dataset);
    result.selected = select_top_k(result.stage1_ranking, k);

    std::vector<ExpertModel> subset;
    for (int idx : result.selected) subset.push_back(experts[idx]);

    TrainConfig stage2 = config;
    stage2.seed = substream_seed(config.seed, "topk-stage2", static_cast<uint64_t>(k));
    result.ensemble.experts = std::move(subset);
    result.ensemble.gating = train_gating(result.ensemble.experts, dataset, stage2, net);
    result.ensemble.uniform = false;
    return result;
}

EnsembleSpec uniform_ensemble(std::vector<ExpertModel> experts) {
    validate_ensemble_experts(experts);
    EnsembleSpec spec;
    spec.experts = std::move(experts);
    spec.uniform = true;
    return spec;
}

void save_gating(const GatingModel& model, const std::string& path) {
    json meta;
    meta["expert_ids"] = model.expert_ids;
    meta["seed"] = model.seed;
    meta["image_h"] = model.config.image_h;
    meta["image_w"] = model.config.image_w;
    meta["backbone_channels"] = model.config.backbone_channels;
    save_container(path, kGatingMagic, meta, model.param_ptrs());
}

GatingModel load_gating(const std::string& path) {
    ModelContainer c = load_container(path, kGatingMagic);
    const json& meta = c.metadata;
    GatingNetConfig net;
    net.image_h = meta.at("image_h").get<int>();
    net.image_w = meta.at("image_w").get<int>();
    net.backbone_channels = meta.at("backbone_channels").get<std::vector<int>>();
    GatingModel model = make_gating(net, meta.at("expert_ids").get<std::vector<std::string>>(),
                                    meta.at("seed").get<uint64_t>());
    if (c.params.size() != model.params.size())
        throw ModelIoError("parameter count mismatch in " + path);
    for (size_t i = 0; i < model.params.size(); ++i) {
        if (c.params[i].name != model.params[i].name ||
            c.params[i].value.shape() != model.params[i].value.shape()) {
            throw ModelIoError("parameter layout mismatch at '" + c.params[i].name + "' in " +
                               path);
        }
        model.params[i].value = std::move(c.params[i].value);
    }
    return model;
}

}  // namespace gatefusion
