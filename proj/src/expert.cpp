#include "gatefusion/expert.hpp"

#include <algorithm>
#include <cmath>

#include "gatefusion/model_io.hpp"
#include "gatefusion/rng.hpp"

using nlohmann::json;

namespace gatefusion {

namespace {
constexpr char kExpertMagic[4] = {'G', 'F', 'E', 'X'};
constexpr float kClsPrior = 0.01f;
}  // namespace

void TrainConfig::validate() const {
    if (epochs <= 0) throw ConfigError("train config: epochs must be positive");
    if (learning_rate <= 0.0f) throw ConfigError("train config: learning rate must be positive");
    if (momentum < 0.0f || momentum >= 1.0f) throw ConfigError("train config: momentum not in [0,1)");
    if (focal_alpha <= 0.0f || focal_alpha >= 1.0f)
        throw ConfigError("train config: focal alpha not in (0,1)");
    if (focal_gamma < 0.0f) throw ConfigError("train config: negative focal gamma");
    if (pos_iou < neg_iou) throw ConfigError("train config: pos_iou < neg_iou");
}

std::vector<Parameter*> ExpertModel::param_ptrs() {
    std::vector<Parameter*> out;
    out.reserve(params.size());
    for (auto& p : params) out.push_back(&p);
    return out;
}

std::vector<const Parameter*> ExpertModel::param_ptrs() const {
    std::vector<const Parameter*> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(&p);
    return out;
}

ExpertModel make_expert(const ExpertNetConfig& config, const std::string& expert_id,
                        uint64_t seed) {
    if (config.backbone_channels.empty()) throw ConfigError("expert config: empty backbone");
    const int blocks = static_cast<int>(config.backbone_channels.size());
    if ((config.image_h >> blocks) != config.anchors.grid_h ||
        (config.image_w >> blocks) != config.anchors.grid_w) {
        throw ConfigError("expert config: anchor grid " + std::to_string(config.anchors.grid_h) +
                          "x" + std::to_string(config.anchors.grid_w) +
                          " does not match image size after " + std::to_string(blocks) +
                          " pool stages");
    }
    ExpertModel m;
    m.config = config;
    m.expert_id = expert_id;
    m.seed = seed;
    Rng rng(substream_seed(seed, "init:" + expert_id));

    int cin = 3;
    for (int i = 0; i < blocks; ++i) {
        const int cout = config.backbone_channels[i];
        Parameter w("backbone.conv" + std::to_string(i) + ".w", Tensor({cout, cin, 3, 3}));
        init_he_uniform(w.value, cin * 9, rng);
        m.params.push_back(std::move(w));
        m.params.emplace_back("backbone.conv" + std::to_string(i) + ".b", Tensor({cout}));
        cin = cout;
    }
    const int apl = config.anchors.anchors_per_location();
    {
        Parameter w("cls.w", Tensor({apl * config.num_classes, cin, 3, 3}));
        init_he_uniform(w.value, cin * 9, rng);
        m.params.push_back(std::move(w));
        // Bias at the negative prior keeps early training from being swamped
        // by easy negatives.
        Parameter b("cls.b", Tensor({apl * config.num_classes},
                                    -std::log((1.0f - kClsPrior) / kClsPrior)));
        m.params.push_back(std::move(b));
    }
    {
        Parameter w("reg.w", Tensor({apl * 4, cin, 3, 3}));
        init_he_uniform(w.value, cin * 9, rng);
        m.params.push_back(std::move(w));
        m.params.emplace_back("reg.b", Tensor({apl * 4}));
    }
    return m;
}

ExpertForwardNodes expert_forward_graph(Graph& g, ExpertModel& model, const Tensor& image,
                                        bool trainable) {
    const auto& cfg = model.config;
    if (image.ndim() != 3 || image.dim(0) != 3 || image.dim(1) != cfg.image_h ||
        image.dim(2) != cfg.image_w) {
        throw DimensionError("expert_forward: image " + Tensor::shape_str(image.shape()) +
                             " does not match expected [3," + std::to_string(cfg.image_h) +
                             "," + std::to_string(cfg.image_w) + "]");
    }
    auto p = [&](size_t i) -> NodeId {
        return trainable ? g.param(model.params[i]) : g.constant(model.params[i].value);
    };
    NodeId x = g.constant(Tensor({1, 3, cfg.image_h, cfg.image_w}, image.vec()));
    const int blocks = static_cast<int>(cfg.backbone_channels.size());
    for (int i = 0; i < blocks; ++i) {
        x = g.conv2d(x, p(2 * i), p(2 * i + 1), 1, 1);
        x = g.relu(x);
        x = g.max_pool2d(x, 2, 2);
    }
    const size_t head_base = static_cast<size_t>(2 * blocks);
    const int apl = cfg.anchors.anchors_per_location();

    NodeId cls_map = g.conv2d(x, p(head_base), p(head_base + 1), 1, 1);
    NodeId cls = g.sigmoid(g.head_to_anchors(cls_map, apl, cfg.num_classes));
    NodeId reg_map = g.conv2d(x, p(head_base + 2), p(head_base + 3), 1, 1);
    NodeId reg = g.head_to_anchors(reg_map, apl, 4);
    return {cls, reg};
}

ExpertOutput expert_forward(const ExpertModel& model, const Tensor& image) {
    Graph g;
    auto nodes = expert_forward_graph(g, const_cast<ExpertModel&>(model), image, false);
    return {g.value(nodes.cls_probs), g.value(nodes.reg_offsets)};
}

NodeId detection_loss_graph(Graph& g, NodeId cls_probs, NodeId reg_offsets,
                            const AnchorMatch& match,
                            const std::vector<GroundTruth>& gts, int num_classes,
                            const TrainConfig& config, LossBreakdown* breakdown) {
    const int A = static_cast<int>(match.labels.size());
    if (A == 0) throw GeometryError("detection_loss: zero anchors");
    const float norm = static_cast<float>(std::max(1, match.positive_count));

    Tensor cls_targets({A, num_classes});
    Tensor cls_mask({A, num_classes});
    Tensor reg_targets({A, 4});
    Tensor reg_mask({A, 4});
    for (int a = 0; a < A; ++a) {
        if (match.labels[a] == AnchorLabel::kIgnore) continue;
        for (int c = 0; c < num_classes; ++c) cls_mask[a * num_classes + c] = 1.0f;
        if (match.labels[a] == AnchorLabel::kPositive) {
            const int cls = gts[match.gt_index[a]].class_id;
            cls_targets[a * num_classes + cls] = 1.0f;
            for (int k = 0; k < 4; ++k) {
                reg_targets[a * 4 + k] = match.reg_targets[a][k];
                reg_mask[a * 4 + k] = 1.0f;
            }
        }
    }

    NodeId l_cls = g.focal_loss(cls_probs, cls_targets, cls_mask, config.focal_alpha,
                                config.focal_gamma, norm);
    NodeId l_reg = g.smooth_l1_loss(reg_offsets, reg_targets, reg_mask, norm);
    NodeId total = g.add(l_reg, l_cls);
    if (breakdown) {
        breakdown->l_reg = g.value(l_reg)[0];
        breakdown->l_cls = g.value(l_cls)[0];
        breakdown->total = g.value(total)[0];
    }
    return total;
}

LossBreakdown detection_loss(const ExpertOutput& output, const AnchorMatch& match,
                             const std::vector<GroundTruth>& gts, int num_classes,
                             const TrainConfig& config) {
    Graph g;
    LossBreakdown out;
    detection_loss_graph(g, g.constant(output.cls_probs), g.constant(output.reg_offsets),
                         match, gts, num_classes, config, &out);
    return out;
}

namespace {

void train_in_place(ExpertModel& model, const std::vector<SceneSample>& dataset,
                    const TrainConfig& config, uint64_t loop_seed, TrainingCurve* curve) {
    const AnchorSet anchors = generate_anchors(model.config.anchors);
    std::vector<AnchorMatch> matches;
    matches.reserve(dataset.size());
    for (const auto& s : dataset)
        matches.push_back(match_anchors(anchors, s.ground_truth, config.pos_iou, config.neg_iou));

    SgdOptimizer opt(config.learning_rate, config.momentum);
    auto params = model.param_ptrs();
    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng(substream_seed(loop_seed, "shuffle", static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1)]);

        double epoch_loss = 0.0;
        for (size_t idx : order) {
            Graph g;
            auto fwd = expert_forward_graph(g, model, dataset[idx].image, true);
            LossBreakdown lb;
            NodeId loss = detection_loss_graph(g, fwd.cls_probs, fwd.reg_offsets, matches[idx],
                                               dataset[idx].ground_truth,
                                               model.config.num_classes, config, &lb);
            if (!std::isfinite(lb.total)) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                                   " sample " + dataset[idx].sample_id +
                                   " (last finite epoch mean " +
                                   std::to_string(curve && !curve->epoch_loss.empty()
                                                      ? curve->epoch_loss.back()
                                                      : 0.0f) +
                                   ")");
            }
            opt.zero_grad(params);
            g.backward(loss);
            opt.step(params);
            epoch_loss += lb.total;
        }
        if (curve)
            curve->epoch_loss.push_back(
                static_cast<float>(epoch_loss / static_cast<double>(dataset.size())));
    }
}

}  // namespace

ExpertModel train_expert(const std::vector<SceneSample>& dataset, const TrainConfig& config,
                         const ExpertNetConfig& net, const std::string& expert_id,
                         TrainingCurve* curve) {
    config.validate();
    if (dataset.empty()) throw ConfigError("train_expert: empty dataset");
    ExpertModel model = make_expert(net, expert_id, config.seed);
    train_in_place(model, dataset, config, substream_seed(config.seed, "train:" + expert_id),
                   curve);
    return model;
}

ExpertModel fine_tune(const ExpertModel& model, const std::vector<SceneSample>& few_shot,
                      const TrainConfig& config, TrainingCurve* curve) {
    config.validate();
    if (few_shot.empty()) throw ConfigError("fine_tune: empty few-shot dataset");
    ExpertModel tuned = model;
    tuned.parent_id = model.expert_id;
    train_in_place(tuned, few_shot, config,
                   substream_seed(config.seed, "finetune:" + model.expert_id), curve);
    return tuned;
}

void save_expert(const ExpertModel& model, const std::string& path) {
    json meta;
    meta["expert_id"] = model.expert_id;
    meta["parent_id"] = model.parent_id;
    meta["seed"] = model.seed;
    meta["num_classes"] = model.config.num_classes;
    meta["image_h"] = model.config.image_h;
    meta["image_w"] = model.config.image_w;
    meta["backbone_channels"] = model.config.backbone_channels;
    meta["anchors"] = {{"grid_h", model.config.anchors.grid_h},
                       {"grid_w", model.config.anchors.grid_w},
                       {"stride", model.config.anchors.stride},
                       {"scales", model.config.anchors.scales},
                       {"ratios", model.config.anchors.ratios}};
    save_container(path, kExpertMagic, meta, model.param_ptrs());
}

ExpertModel load_expert(const std::string& path) {
    ModelContainer c = load_container(path, kExpertMagic);
    const json& meta = c.metadata;
    ExpertNetConfig net;
    net.num_classes = meta.at("num_classes").get<int>();
    net.image_h = meta.at("image_h").get<int>();
    net.image_w = meta.at("image_w").get<int>();
    net.backbone_channels = meta.at("backbone_channels").get<std::vector<int>>();
    const json& a = meta.at("anchors");
    net.anchors.grid_h = a.at("grid_h").get<int>();
    net.anchors.grid_w = a.at("grid_w").get<int>();
    net.anchors.stride = a.at("stride").get<float>();
    net.anchors.scales = a.at("scales").get<std::vector<float>>();
    net.anchors.ratios = a.at("ratios").get<std::vector<float>>();

    ExpertModel model = make_expert(net, meta.at("expert_id").get<std::string>(),
                                    meta.at("seed").get<uint64_t>());
    model.parent_id = meta.at("parent_id").get<std::string>();
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
