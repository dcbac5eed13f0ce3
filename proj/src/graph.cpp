#include "gatefusion/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gatefusion/rng.hpp"

namespace gatefusion {

namespace {
constexpr float kProbEps = 1e-6f;
}

NodeId Graph::push(Tensor value, bool requires_grad) {
    auto n = std::make_unique<Node>();
    n->value = std::move(value);
    n->grad = Tensor(n->value.shape());
    n->requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::constant(Tensor t) { return push(std::move(t), false); }

NodeId Graph::param(Parameter& p) {
    NodeId id = push(p.value, true);
    Node* self = nodes_[id].get();
    self->bound_param = &p;
    self->backprop = [](Node& n) {
        const size_t sz = n.grad.size();
        for (size_t i = 0; i < sz; ++i) n.bound_param->grad[i] += n.grad[i];
    };
    return id;
}

NodeId Graph::conv2d(NodeId input, NodeId weights, NodeId bias, int stride, int padding) {
    Node& x = node(input);
    Node& w = node(weights);
    Node& b = node(bias);
    if (x.value.ndim() != 4 || w.value.ndim() != 4) {
        throw DimensionError("conv2d expects 4-D input/weights, got " +
                             Tensor::shape_str(x.value.shape()) + " and " +
                             Tensor::shape_str(w.value.shape()));
    }
    const int N = x.value.dim(0), Cin = x.value.dim(1), H = x.value.dim(2), W = x.value.dim(3);
    const int Cout = w.value.dim(0), K = w.value.dim(2);
    if (w.value.dim(1) != Cin) {
        throw DimensionError("conv2d channel mismatch: input " + Tensor::shape_str(x.value.shape()) +
                             " vs weights " + Tensor::shape_str(w.value.shape()));
    }
    const int Ho = (H + 2 * padding - K) / stride + 1;
    const int Wo = (W + 2 * padding - K) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw DimensionError("conv2d output would be empty");

    Tensor out({N, Cout, Ho, Wo});
    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Cout; ++co) {
            const float bval = b.value[co];
            for (int ho = 0; ho < Ho; ++ho) {
                for (int wo = 0; wo < Wo; ++wo) {
                    double acc = bval;
                    const int h0 = ho * stride - padding;
                    const int w0 = wo * stride - padding;
                    for (int ci = 0; ci < Cin; ++ci) {
                        for (int kh = 0; kh < K; ++kh) {
                            const int h = h0 + kh;
                            if (h < 0 || h >= H) continue;
                            for (int kw = 0; kw < K; ++kw) {
                                const int wpix = w0 + kw;
                                if (wpix < 0 || wpix >= W) continue;
                                acc += static_cast<double>(x.value.at4(n, ci, h, wpix)) *
                                       w.value.at4(co, ci, kh, kw);
                            }
                        }
                    }
                    out.at4(n, co, ho, wo) = static_cast<float>(acc);
                }
            }
        }
    }

    bool rg = x.requires_grad || w.requires_grad || b.requires_grad;
    NodeId id = push(std::move(out), rg);
    if (rg) {
        Node* xp = &x;
        Node* wp = &w;
        Node* bp = &b;
        nodes_[id]->backprop = [xp, wp, bp, stride, padding, N, Cin, H, W, Cout, K](Node& n) {
            const int Ho = n.value.dim(2), Wo = n.value.dim(3);
            for (int nn = 0; nn < N; ++nn) {
                for (int co = 0; co < Cout; ++co) {
                    for (int ho = 0; ho < Ho; ++ho) {
                        for (int wo = 0; wo < Wo; ++wo) {
                            const float g = n.grad.at4(nn, co, ho, wo);
                            if (g == 0.0f) continue;
                            if (bp->requires_grad) bp->grad[co] += g;
                            const int h0 = ho * stride - padding;
                            const int w0 = wo * stride - padding;
                            for (int ci = 0; ci < Cin; ++ci) {
                                for (int kh = 0; kh < K; ++kh) {
                                    const int h = h0 + kh;
                                    if (h < 0 || h >= H) continue;
                                    for (int kw = 0; kw < K; ++kw) {
                                        const int wpix = w0 + kw;
                                        if (wpix < 0 || wpix >= W) continue;
                                        if (wp->requires_grad)
                                            wp->grad.at4(co, ci, kh, kw) += g * xp->value.at4(nn, ci, h, wpix);
                                        if (xp->requires_grad)
                                            xp->grad.at4(nn, ci, h, wpix) += g * wp->value.at4(co, ci, kh, kw);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return id;
}

NodeId Graph::dense(NodeId input, NodeId weights, NodeId bias) {
    Node& x = node(input);
    Node& w = node(weights);
    Node& b = node(bias);
    if (x.value.ndim() != 2 || w.value.ndim() != 2) {
        throw DimensionError("dense expects 2-D input/weights, got " +
                             Tensor::shape_str(x.value.shape()) + " and " +
                             Tensor::shape_str(w.value.shape()));
    }
    const int N = x.value.dim(0), F = x.value.dim(1);
    const int O = w.value.dim(0);
    if (w.value.dim(1) != F) {
        throw DimensionError("dense width mismatch: input " + Tensor::shape_str(x.value.shape()) +
                             " vs weights " + Tensor::shape_str(w.value.shape()));
    }
    Tensor out({N, O});
    for (int n = 0; n < N; ++n) {
        for (int o = 0; o < O; ++o) {
            double acc = b.value[o];
            for (int f = 0; f < F; ++f)
                acc += static_cast<double>(x.value[n * F + f]) * w.value[o * F + f];
            out[n * O + o] = static_cast<float>(acc);
        }
    }
    bool rg = x.requires_grad || w.requires_grad || b.requires_grad;
    NodeId id = push(std::move(out), rg);
    if (rg) {
        Node* xp = &x;
        Node* wp = &w;
        Node* bp = &b;
        nodes_[id]->backprop = [xp, wp, bp, N, F, O](Node& n) {
            for (int nn = 0; nn < N; ++nn) {
                for (int o = 0; o < O; ++o) {
                    const float g = n.grad[nn * O + o];
                    if (g == 0.0f) continue;
                    if (bp->requires_grad) bp->grad[o] += g;
                    for (int f = 0; f < F; ++f) {
                        if (wp->requires_grad) wp->grad[o * F + f] += g * xp->value[nn * F + f];
                        if (xp->requires_grad) xp->grad[nn * F + f] += g * wp->value[o * F + f];
                    }
                }
            }
        };
    }
    return id;
}

NodeId Graph::max_pool2d(NodeId input, int kernel, int stride) {
    Node& x = node(input);
    if (x.value.ndim() != 4) throw DimensionError("max_pool2d expects 4-D input");
    const int N = x.value.dim(0), C = x.value.dim(1), H = x.value.dim(2), W = x.value.dim(3);
    const int Ho = (H - kernel) / stride + 1;
    const int Wo = (W - kernel) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw DimensionError("max_pool2d output would be empty");

    Tensor out({N, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<size_t>>(out.size());
    size_t oi = 0;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            for (int ho = 0; ho < Ho; ++ho) {
                for (int wo = 0; wo < Wo; ++wo, ++oi) {
                    float best = -std::numeric_limits<float>::infinity();
                    size_t best_idx = 0;
                    for (int kh = 0; kh < kernel; ++kh) {
                        for (int kw = 0; kw < kernel; ++kw) {
                            const int h = ho * stride + kh;
                            const int wpix = wo * stride + kw;
                            const size_t idx =
                                ((static_cast<size_t>(n) * C + c) * H + h) * W + wpix;
                            if (x.value[idx] > best) {
                                best = x.value[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[oi] = best;
                    (*argmax)[oi] = best_idx;
                }
            }
        }
    }
    NodeId id = push(std::move(out), x.requires_grad);
    if (x.requires_grad) {
        Node* xp = &x;
        nodes_[id]->backprop = [xp, argmax](Node& n) {
            for (size_t i = 0; i < n.grad.size(); ++i) xp->grad[(*argmax)[i]] += n.grad[i];
        };
    }
    return id;
}

NodeId Graph::relu(NodeId xid) {
    Node& x = node(xid);
    Tensor out(x.value.shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.value[i] > 0.0f ? x.value[i] : 0.0f;
    NodeId id = push(std::move(out), x.requires_grad);
    if (x.requires_grad) {
        Node* xp = &x;
        nodes_[id]->backprop = [xp](Node& n) {
            for (size_t i = 0; i < n.grad.size(); ++i)
                if (xp->value[i] > 0.0f) xp->grad[i] += n.grad[i];
        };
    }
    return id;
}

NodeId Graph::sigmoid(NodeId xid) {
    Node& x = node(xid);
    Tensor out(x.value.shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0f / (1.0f + std::exp(-x.value[i]));
    NodeId id = push(std::move(out), x.requires_grad);
    if (x.requires_grad) {
        Node* xp = &x;
        nodes_[id]->backprop = [xp](Node& n) {
            for (size_t i = 0; i < n.grad.size(); ++i) {
                const float y = n.value[i];
                xp->grad[i] += n.grad[i] * y * (1.0f - y);
            }
        };
    }
    return id;
}

NodeId Graph::add(NodeId aid, NodeId bid) {
    Node& a = node(aid);
    Node& b = node(bid);
    if (!a.value.same_shape(b.value)) {
        throw DimensionError("add shape mismatch: " + Tensor::shape_str(a.value.shape()) +
                             " vs " + Tensor::shape_str(b.value.shape()));
    }
    Tensor out(a.value.shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.value[i] + b.value[i];
    bool rg = a.requires_grad || b.requires_grad;
    NodeId id = push(std::move(out), rg);
    if (rg) {
        Node* ap = &a;
        Node* bp = &b;
        nodes_[id]->backprop = [ap, bp](Node& n) {
            for (size_t i = 0; i < n.grad.size(); ++i) {
                if (ap->requires_grad) ap->grad[i] += n.grad[i];
                if (bp->requires_grad) bp->grad[i] += n.grad[i];
            }
        };
    }
    return id;
}

NodeId Graph::mul(NodeId aid, NodeId bid) {
    Node& a = node(aid);
    Node& b = node(bid);
    if (!a.value.same_shape(b.value)) {
        throw DimensionError("mul shape mismatch: " + Tensor::shape_str(a.value.shape()) +
                             " vs " + Tensor::shape_str(b.value.shape()));
    }
    Tensor out(a.value.shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.value[i] * b.value[i];
    bool rg = a.requires_grad || b.requires_grad;
    NodeId id = push(std::move(out), rg);
    if (rg) {
        Node* ap = &a;
        Node* bp = &b;
        nodes_[id]->backprop = [ap, bp](Node& n) {
            for (size_t i = 0; i < n.grad.size(); ++i) {
                if (ap->requires_grad) ap->grad[i] += n.grad[i] * bp->value[i];
                if (bp->requires_grad) bp->grad[i] += n.grad[i] * ap->value[i];
            }
        };
    }
    return id;
}

NodeId Graph::sum(NodeId xid) {
    Node& x = node(xid);
    double acc = 0.0;
    for (size_t i = 0; i < x.value.size(); ++i) acc += x.value[i];
    NodeId id = push(Tensor::scalar(static_cast<float>(acc)), x.requires_grad);
    if (x.requires_grad) {
        Node* xp = &x;
        nodes_[id]->backprop = [xp](Node& n) {
            const float g = n.grad[0];
            for (size_t i = 0; i < xp->grad.size(); ++i) xp->grad[i] += g;
        };
    }
    return id;
}

NodeId Graph::mean(NodeId xid) {
    Node& x = node(xid);
    const size_t count = x.value.size();
    double acc = 0.0;
    for (size_t i = 0; i < count; ++i) acc += x.value[i];
    NodeId id = push(Tensor::scalar(static_cast<float>(acc / static_cast<double>(count))),
                     x.requires_grad);
    if (x.requires_grad) {
        Node* xp = &x;
        nodes_[id]->backprop = [xp, count](Node& n) {
            const float g = n.grad[0] / static_cast<float>(count);
            for (size_t i = 0; i < xp->grad.size(); ++i) xp->grad[i] += g;
        };
    }
    return id;
}

NodeId Graph::softmax(NodeId xid, int axis) {
    Node& x = node(xid);
    const auto& shape = x.value.shape();
    if (axis < 0) axis += x.value.ndim();
    if (axis < 0 || axis >= x.value.ndim()) throw DimensionError("softmax axis out of range");

    size_t inner = 1, outer = 1;
    for (int i = axis + 1; i < x.value.ndim(); ++i) inner *= static_cast<size_t>(shape[i]);
    for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(shape[i]);
    const size_t L = static_cast<size_t>(shape[axis]);

    Tensor out(shape);
    for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
            const size_t base = o * L * inner + in;
            float mx = x.value[base];
            for (size_t l = 1; l < L; ++l) mx = std::max(mx, x.value[base + l * inner]);
            double denom = 0.0;
            for (size_t l = 0; l < L; ++l) {
                const double e = std::exp(static_cast<double>(x.value[base + l * inner] - mx));
                out[base + l * inner] = static_cast<float>(e);
                denom += e;
            }
            for (size_t l = 0; l < L; ++l)
                out[base + l * inner] = static_cast<float>(out[base + l * inner] / denom);
        }
    }
    NodeId id = push(std::move(out), x.requires_grad);
    if (x.requires_grad) {
        Node* xp = &x;
        nodes_[id]->backprop = [xp, outer, inner, L](Node& n) {
            for (size_t o = 0; o < outer; ++o) {
                for (size_t in = 0; in < inner; ++in) {
                    const size_t base = o * L * inner + in;
                    double dot = 0.0;
                    for (size_t l = 0; l < L; ++l)
                        dot += static_cast<double>(n.grad[base + l * inner]) *
                               n.value[base + l * inner];
                    for (size_t l = 0; l < L; ++l) {
                        const size_t idx = base + l * inner;
                        xp->grad[idx] += n.value[idx] *
                                         (n.grad[idx] - static_cast<float>(dot));
                    }
                }
            }
        };
    }
    return id;
}

NodeId Graph::reshape(NodeId xid, std::vector<int> shape) {
    Node& x = node(xid);
    if (Tensor::shape_size(shape) != x.value.size()) {
        throw DimensionError("reshape size mismatch: " + Tensor::shape_str(x.value.shape()) +
                             " -> " + Tensor::shape_str(shape));
    }
    Tensor out(std::move(shape), x.value.vec());
    NodeId id = push(std::move(out), x.requires_grad);
    if (x.requires_grad) {
        Node* xp = &x;
        nodes_[id]->backprop = [xp](Node& n) {
            for (size_t i = 0; i < n.grad.size(); ++i) xp->grad[i] += n.grad[i];
        };
    }
    return id;
}

NodeId Graph::flatten(NodeId xid) {
    Node& x = node(xid);
    const int N = x.value.dim(0);
    return reshape(xid, {N, static_cast<int>(x.value.size()) / N});
}

NodeId Graph::global_avg_pool(NodeId xid) {
    Node& x = node(xid);
    if (x.value.ndim() != 4) throw DimensionError("global_avg_pool expects 4-D input");
    const int N = x.value.dim(0), C = x.value.dim(1);
    const size_t HW = static_cast<size_t>(x.value.dim(2)) * x.value.dim(3);
    Tensor out({N, C});
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const size_t base = (static_cast<size_t>(n) * C + c) * HW;
            double acc = 0.0;
            for (size_t i = 0; i < HW; ++i) acc += x.value[base + i];
            out[n * C + c] = static_cast<float>(acc / static_cast<double>(HW));
        }
    }
    NodeId id = push(std::move(out), x.requires_grad);
    if (x.requires_grad) {
        Node* xp = &x;
        nodes_[id]->backprop = [xp, N, C, HW](Node& n) {
            for (int nn = 0; nn < N; ++nn) {
                for (int c = 0; c < C; ++c) {
                    const float g = n.grad[nn * C + c] / static_cast<float>(HW);
                    const size_t base = (static_cast<size_t>(nn) * C + c) * HW;
                    for (size_t i = 0; i < HW; ++i) xp->grad[base + i] += g;
                }
            }
        };
    }
    return id;
}

NodeId Graph::head_to_anchors(NodeId xid, int anchors_per_loc, int k) {
    Node& x = node(xid);
    if (x.value.ndim() != 4 || x.value.dim(0) != 1 || x.value.dim(1) != anchors_per_loc * k) {
        throw DimensionError("head_to_anchors expects [1," + std::to_string(anchors_per_loc * k) +
                             ",H,W], got " + Tensor::shape_str(x.value.shape()));
    }
    const int H = x.value.dim(2), W = x.value.dim(3);
    const int A = H * W * anchors_per_loc;
    Tensor out({A, k});
    for (int gy = 0; gy < H; ++gy) {
        for (int gx = 0; gx < W; ++gx) {
            for (int a = 0; a < anchors_per_loc; ++a) {
                const int row = (gy * W + gx) * anchors_per_loc + a;
                for (int kk = 0; kk < k; ++kk)
                    out[row * k + kk] = x.value.at4(0, a * k + kk, gy, gx);
            }
        }
    }
    NodeId id = push(std::move(out), x.requires_grad);
    if (x.requires_grad) {
        Node* xp = &x;
        nodes_[id]->backprop = [xp, anchors_per_loc, k, H, W](Node& n) {
            for (int gy = 0; gy < H; ++gy) {
                for (int gx = 0; gx < W; ++gx) {
                    for (int a = 0; a < anchors_per_loc; ++a) {
                        const int row = (gy * W + gx) * anchors_per_loc + a;
                        for (int kk = 0; kk < k; ++kk)
                            xp->grad.at4(0, a * k + kk, gy, gx) += n.grad[row * k + kk];
                    }
                }
            }
        };
    }
    return id;
}

NodeId Graph::weighted_sum(NodeId gate_id, const std::vector<const Tensor*>& terms) {
    Node& gate = node(gate_id);
    if (gate.value.size() != terms.size()) {
        throw DimensionError("weighted_sum: gate length " + std::to_string(gate.value.size()) +
                             " vs " + std::to_string(terms.size()) + " terms");
    }
    for (size_t i = 1; i < terms.size(); ++i) {
        if (terms[i]->shape() != terms[0]->shape())
            throw DimensionError("weighted_sum: term " + std::to_string(i) + " shape mismatch");
    }
    Tensor out(terms[0]->shape());
    for (size_t i = 0; i < terms.size(); ++i) {
        const float g = gate.value[i];
        const Tensor& t = *terms[i];
        for (size_t j = 0; j < out.size(); ++j) out[j] += g * t[j];
    }
    NodeId id = push(std::move(out), gate.requires_grad);
    if (gate.requires_grad) {
        Node* gp = &gate;
        auto held = std::make_shared<std::vector<Tensor>>();
        held->reserve(terms.size());
        for (const Tensor* t : terms) held->push_back(*t);
        nodes_[id]->backprop = [gp, held](Node& n) {
            for (size_t i = 0; i < held->size(); ++i) {
                double acc = 0.0;
                const Tensor& t = (*held)[i];
                for (size_t j = 0; j < n.grad.size(); ++j)
                    acc += static_cast<double>(n.grad[j]) * t[j];
                gp->grad[i] += static_cast<float>(acc);
            }
        };
    }
    return id;
}

NodeId Graph::focal_loss(NodeId probs_id, const Tensor& targets, const Tensor& mask,
                         float alpha, float gamma, float normalizer) {
    if (gamma < 0.0f) throw NumericError("focal_loss: gamma must be non-negative");
    Node& p = node(probs_id);
    if (!p.value.same_shape(targets) || !p.value.same_shape(mask)) {
        throw DimensionError("focal_loss shape mismatch: probs " +
                             Tensor::shape_str(p.value.shape()));
    }
    double acc = 0.0;
    for (size_t i = 0; i < p.value.size(); ++i) {
        if (mask[i] == 0.0f) continue;
        const double pc = std::clamp<double>(p.value[i], kProbEps, 1.0 - kProbEps);
        const double pt = targets[i] > 0.5f ? pc : 1.0 - pc;
        const double at = targets[i] > 0.5f ? alpha : 1.0 - alpha;
        acc += -at * std::pow(1.0 - pt, gamma) * std::log(pt);
    }
    NodeId id = push(Tensor::scalar(static_cast<float>(acc / normalizer)), p.requires_grad);
    if (p.requires_grad) {
        Node* pp = &p;
        Tensor tgt = targets;
        Tensor msk = mask;
        nodes_[id]->backprop = [pp, tgt, msk, alpha, gamma, normalizer](Node& n) {
            const double g0 = n.grad[0] / normalizer;
            for (size_t i = 0; i < pp->value.size(); ++i) {
                if (msk[i] == 0.0f) continue;
                const double pc = std::clamp<double>(pp->value[i], kProbEps, 1.0 - kProbEps);
                double d;
                if (tgt[i] > 0.5f) {
                    // d/dp of -a (1-p)^g log p
                    d = -alpha * (-(gamma != 0.0f ? gamma * std::pow(1.0 - pc, gamma - 1.0) : 0.0) *
                                      std::log(pc) +
                                  std::pow(1.0 - pc, static_cast<double>(gamma)) / pc);
                } else {
                    // d/dp of -(1-a) p^g log(1-p)
                    d = -(1.0 - alpha) *
                        ((gamma != 0.0f ? gamma * std::pow(pc, gamma - 1.0) : 0.0) *
                             std::log(1.0 - pc) -
                         std::pow(pc, static_cast<double>(gamma)) / (1.0 - pc));
                }
                pp->grad[i] += static_cast<float>(g0 * d);
            }
        };
    }
    return id;
}

NodeId Graph::smooth_l1_loss(NodeId pred_id, const Tensor& target, const Tensor& mask,
                             float normalizer) {
    Node& p = node(pred_id);
    if (!p.value.same_shape(target) || !p.value.same_shape(mask)) {
        throw DimensionError("smooth_l1_loss shape mismatch: pred " +
                             Tensor::shape_str(p.value.shape()));
    }
    double acc = 0.0;
    for (size_t i = 0; i < p.value.size(); ++i) {
        if (mask[i] == 0.0f) continue;
        const double x = static_cast<double>(p.value[i]) - target[i];
        acc += std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5;
    }
    NodeId id = push(Tensor::scalar(static_cast<float>(acc / normalizer)), p.requires_grad);
    if (p.requires_grad) {
        Node* pp = &p;
        Tensor tgt = target;
        Tensor msk = mask;
        nodes_[id]->backprop = [pp, tgt, msk, normalizer](Node& n) {
            const float g0 = n.grad[0] / normalizer;
            for (size_t i = 0; i < pp->value.size(); ++i) {
                if (msk[i] == 0.0f) continue;
                const float x = pp->value[i] - tgt[i];
                const float d = std::abs(x) < 1.0f ? x : (x > 0.0f ? 1.0f : -1.0f);
                pp->grad[i] += g0 * d;
            }
        };
    }
    return id;
}

void Graph::backward(NodeId loss) {
    Node& l = node(loss);
    if (l.value.size() != 1) {
        throw DimensionError("backward: loss must be scalar, got shape " +
                           Tensor::shape_str(l.value.shape()));
    }
    if (!l.value.all_finite()) throw NumericError("backward: loss is not finite");
    l.grad[0] = 1.0f;
    for (NodeId id = loss; id >= 0; --id) {
        Node& n = *nodes_[id];
        if (n.requires_grad && n.backprop) n.backprop(n);
    }
}

SgdOptimizer::SgdOptimizer(float learning_rate, float momentum)
    : lr_(learning_rate), momentum_(momentum) {
    if (learning_rate <= 0.0f) throw NumericError("sgd: learning rate must be positive");
    if (momentum < 0.0f || momentum >= 1.0f) throw NumericError("sgd: momentum must be in [0,1)");
}

void SgdOptimizer::step(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
        if (!p->grad.all_finite())
            throw NumericError("sgd: non-finite gradient in parameter '" + p->name + "'");
        auto it = velocity_.find(p);
        if (it == velocity_.end()) it = velocity_.emplace(p, Tensor(p->value.shape())).first;
        Tensor& v = it->second;
        for (size_t i = 0; i < v.size(); ++i) {
            v[i] = momentum_ * v[i] + p->grad[i];
            p->value[i] -= lr_ * v[i];
        }
    }
}

void SgdOptimizer::zero_grad(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->zero_grad();
}

void init_he_uniform(Tensor& t, int fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<float>(rng.uniform(-bound, bound));
}

}  // namespace gatefusion
