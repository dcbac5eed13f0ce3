#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "gatefusion/tensor.hpp"

namespace gatefusion {

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using NodeId = int;

// Tape of executed differentiable operations. Nodes are appended in
// execution order, so the tape order is already topological and backward()
// walks it once in reverse. Gradients accumulate additively across fan-out.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Leaves.
    NodeId constant(Tensor t);
    NodeId param(Parameter& p);

    // Layers.
    NodeId conv2d(NodeId input, NodeId weights, NodeId bias, int stride, int padding);
    NodeId dense(NodeId input, NodeId weights, NodeId bias);
    NodeId max_pool2d(NodeId input, int kernel, int stride);

    // Elementwise / reductions.
    NodeId relu(NodeId x);
    NodeId sigmoid(NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId sum(NodeId x);
    NodeId mean(NodeId x);
    NodeId softmax(NodeId logits, int axis);
    NodeId reshape(NodeId x, std::vector<int> shape);
    NodeId flatten(NodeId x);                 // [N, ...] -> [N, F]
    NodeId global_avg_pool(NodeId x);         // [N,C,H,W] -> [N,C]

    // Detection-head layout: [1, A_pl*K, H, W] -> [H*W*A_pl, K], anchor
    // order row-major over the grid then per-location anchor index.
    NodeId head_to_anchors(NodeId x, int anchors_per_loc, int k);

    // out[j] = sum_i gate[i] * terms[i][j]; differentiable in the gate only.
    // Summation runs index-ascending for bit-reproducible results.
    NodeId weighted_sum(NodeId gate, const std::vector<const Tensor*>& terms);

    // Losses (scalar outputs). mask selects counted elements; the sum is
    // divided by normalizer.
    NodeId focal_loss(NodeId probs, const Tensor& targets, const Tensor& mask,
                      float alpha, float gamma, float normalizer);
    NodeId smooth_l1_loss(NodeId pred, const Tensor& target, const Tensor& mask,
                          float normalizer);

    void backward(NodeId loss);

    const Tensor& value(NodeId id) const { return nodes_[id]->value; }
    const Tensor& grad(NodeId id) const { return nodes_[id]->grad; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Parameter* bound_param = nullptr;
        std::function<void(Node&)> backprop;
    };

    Node& node(NodeId id) { return *nodes_[id]; }
    NodeId push(Tensor value, bool requires_grad);

    std::vector<std::unique_ptr<Node>> nodes_;
};

// SGD with momentum; velocity persists across steps per parameter.
class SgdOptimizer {
public:
    SgdOptimizer(float learning_rate, float momentum);
    void step(const std::vector<Parameter*>& params);
    void zero_grad(const std::vector<Parameter*>& params);

private:
    float lr_;
    float momentum_;
    std::unordered_map<Parameter*, Tensor> velocity_;
};

// He-uniform fill for conv/dense weights, fan_in computed from shape.
void init_he_uniform(Tensor& t, int fan_in, class Rng& rng);

}  // namespace gatefusion
