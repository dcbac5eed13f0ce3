#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "gatefusion/graph.hpp"
#include "gatefusion/rng.hpp"

using namespace gatefusion;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Central-difference gradient check: step 1e-2, relative error < 1e-3,
// with an absolute fallback where the analytic gradient is ~0.
void check_param_grads(const std::vector<Parameter*>& params,
                       const std::function<NodeId(Graph&)>& build) {
    Graph g;
    const NodeId loss = build(g);
    REQUIRE(g.value(loss).size() == 1);
    for (Parameter* p : params) p->zero_grad();
    g.backward(loss);

    std::vector<Tensor> analytic;
    for (Parameter* p : params) analytic.push_back(p->grad);

    const float h = 1e-2f;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Parameter* p = params[pi];
        for (size_t i = 0; i < p->value.size(); ++i) {
            const float orig = p->value[i];
            p->value[i] = orig + h;
            Graph gp;
            const double fp = gp.value(build(gp))[0];
            p->value[i] = orig - h;
            Graph gm;
            const double fm = gm.value(build(gm))[0];
            p->value[i] = orig;
            const double num = (fp - fm) / (2.0 * h);
            const double an = analytic[pi][i];
            INFO("param ", p->name, " entry ", i, " analytic ", an, " numeric ", num);
            // Float32 losses put an absolute noise floor of ~eps*|f|/(2h) on
            // the numeric estimate, so the denominator is floored at 1.
            const double err =
                std::abs(num - an) / std::max({1.0, std::abs(an), std::abs(num)});
            CHECK(err < 1e-3);
        }
    }
}

// Independent direct-convolution oracle (no im2col, plain loops).
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const int cin = x.dim(1), hin = x.dim(2), win = x.dim(3);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int hout = (hin + 2 * pad - kh) / stride + 1;
    const int wout = (win + 2 * pad - kw) / stride + 1;
    Tensor y({1, cout, hout, wout});
    for (int oc = 0; oc < cout; ++oc)
        for (int oh = 0; oh < hout; ++oh)
            for (int ow = 0; ow < wout; ++ow) {
                double acc = b[oc];
                for (int ic = 0; ic < cin; ++ic)
                    for (int i = 0; i < kh; ++i)
                        for (int j = 0; j < kw; ++j) {
                            const int ih = oh * stride + i - pad;
                            const int iw = ow * stride + j - pad;
                            if (ih < 0 || ih >= hin || iw < 0 || iw >= win) continue;
                            acc += static_cast<double>(x.at4(0, ic, ih, iw)) *
                                   w.at4(oc, ic, i, j);
                        }
                y.at4(0, oc, oh, ow) = static_cast<float>(acc);
            }
    return y;
}

}  // namespace

TEST_CASE("conv2d forward matches direct-convolution oracle") {
    Rng rng(11);
    const Tensor x = random_tensor({1, 3, 6, 6}, rng);
    const Tensor w = random_tensor({4, 3, 3, 3}, rng);
    const Tensor b = random_tensor({4}, rng);
    for (auto [stride, pad] : {std::pair{1, 1}, {2, 0}, {2, 1}, {1, 0}}) {
        Graph g;
        Parameter pw("w", w), pb("b", b);
        const NodeId y = g.conv2d(g.constant(x), g.param(pw), g.param(pb), stride, pad);
        const Tensor ref = conv_oracle(x, w, b, stride, pad);
        REQUIRE(g.value(y).shape() == ref.shape());
        for (size_t i = 0; i < ref.size(); ++i)
            CHECK(g.value(y)[i] == doctest::Approx(ref[i]).epsilon(1e-5));
    }
}

TEST_CASE("conv2d gradients (input, weights, bias) pass finite differences") {
    Rng rng(12);
    Parameter px("x", random_tensor({1, 2, 5, 5}, rng));
    Parameter pw("w", random_tensor({3, 2, 3, 3}, rng));
    Parameter pb("b", random_tensor({3}, rng));
    check_param_grads({&px, &pw, &pb}, [&](Graph& g) {
        return g.sum(g.conv2d(g.param(px), g.param(pw), g.param(pb), 1, 1));
    });
    check_param_grads({&px, &pw, &pb}, [&](Graph& g) {
        return g.mean(g.conv2d(g.param(px), g.param(pw), g.param(pb), 2, 0));
    });
}

TEST_CASE("dense forward and gradients") {
    Rng rng(13);
    Parameter px("x", random_tensor({2, 4}, rng));
    Parameter pw("w", random_tensor({3, 4}, rng));
    Parameter pb("b", random_tensor({3}, rng));
    {
        Graph g;
        const NodeId y = g.dense(g.param(px), g.param(pw), g.param(pb));
        REQUIRE(g.value(y).shape() == std::vector<int>{2, 3});
        for (int n = 0; n < 2; ++n)
            for (int o = 0; o < 3; ++o) {
                double acc = pb.value[o];
                for (int i = 0; i < 4; ++i)
                    acc += static_cast<double>(px.value[n * 4 + i]) * pw.value[o * 4 + i];
                CHECK(g.value(y)[n * 3 + o] == doctest::Approx(acc).epsilon(1e-5));
            }
    }
    check_param_grads({&px, &pw, &pb}, [&](Graph& g) {
        return g.sum(g.sigmoid(g.dense(g.param(px), g.param(pw), g.param(pb))));
    });
}

TEST_CASE("max_pool2d forward and gradient routing") {
    Tensor x({1, 1, 4, 4}, {1, 5, 2, 0,
                            3, 4, 1, 7,
                            8, 2, 6, 3,
                            0, 9, 4, 5});
    Parameter px("x", x);
    Graph g;
    const NodeId y = g.max_pool2d(g.param(px), 2, 2);
    REQUIRE(g.value(y).shape() == std::vector<int>{1, 1, 2, 2});
    CHECK(g.value(y)[0] == 5.0f);
    CHECK(g.value(y)[1] == 7.0f);
    CHECK(g.value(y)[2] == 9.0f);
    CHECK(g.value(y)[3] == 6.0f);
    g.backward(g.sum(y));
    // Gradient flows only to the argmax positions.
    Tensor expect({1, 1, 4, 4});
    expect.at4(0, 0, 0, 1) = 1.0f;
    expect.at4(0, 0, 1, 3) = 1.0f;
    expect.at4(0, 0, 3, 1) = 1.0f;
    expect.at4(0, 0, 2, 2) = 1.0f;
    for (size_t i = 0; i < expect.size(); ++i) CHECK(px.grad[i] == expect[i]);

    Rng rng(14);
    Parameter pr("x", random_tensor({1, 2, 6, 6}, rng));
    check_param_grads({&pr}, [&](Graph& g2) {
        return g2.sum(g2.max_pool2d(g2.param(pr), 2, 2));
    });
}

TEST_CASE("elementwise ops and reductions pass finite differences") {
    Rng rng(15);
    Parameter pa("a", random_tensor({3, 4}, rng));
    Parameter pb("b", random_tensor({3, 4}, rng));
    check_param_grads({&pa, &pb}, [&](Graph& g) {
        return g.sum(g.mul(g.relu(g.param(pa)), g.sigmoid(g.param(pb))));
    });
    check_param_grads({&pa, &pb}, [&](Graph& g) {
        return g.mean(g.add(g.param(pa), g.mul(g.param(pb), g.param(pb))));
    });
}

TEST_CASE("fan-out accumulates gradients additively") {
    Parameter px("x", Tensor({2}, {0.5f, -0.25f}));
    Graph g;
    const NodeId x = g.param(px);
    // loss = sum(x + x) => dloss/dx = 2 everywhere.
    g.backward(g.sum(g.add(x, x)));
    CHECK(px.grad[0] == 2.0f);
    CHECK(px.grad[1] == 2.0f);
}

TEST_CASE("softmax outputs lie on the simplex and gradients check out") {
    Rng rng(16);
    Parameter pl("logits", random_tensor({2, 5}, rng, -3.0f, 3.0f));
    Graph g;
    const NodeId s = g.softmax(g.param(pl), 1);
    for (int n = 0; n < 2; ++n) {
        double total = 0.0;
        for (int i = 0; i < 5; ++i) {
            const float v = g.value(s)[n * 5 + i];
            CHECK(v > 0.0f);
            CHECK(v < 1.0f);
            total += v;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
    // Large logits must not overflow (max subtraction).
    Parameter big("big", Tensor({1, 3}, {1000.0f, 999.0f, -1000.0f}));
    Graph g2;
    const NodeId s2 = g2.softmax(g2.param(big), 1);
    CHECK(g2.value(s2).all_finite());
    CHECK(g2.value(s2)[0] > g2.value(s2)[1]);

    const Tensor coeff = random_tensor({2, 5}, rng);
    check_param_grads({&pl}, [&](Graph& gg) {
        return gg.sum(gg.mul(gg.softmax(gg.param(pl), 1), gg.constant(coeff)));
    });
}

TEST_CASE("reshape, flatten and global_avg_pool") {
    Rng rng(17);
    Parameter px("x", random_tensor({1, 3, 2, 2}, rng));
    {
        Graph g;
        const NodeId f = g.flatten(g.param(px));
        REQUIRE(g.value(f).shape() == std::vector<int>{1, 12});
        const NodeId p = g.global_avg_pool(g.param(px));
        REQUIRE(g.value(p).shape() == std::vector<int>{1, 3});
        for (int c = 0; c < 3; ++c) {
            double acc = 0.0;
            for (int i = 0; i < 4; ++i) acc += px.value[c * 4 + i];
            CHECK(g.value(p)[c] == doctest::Approx(acc / 4.0).epsilon(1e-6));
        }
        CHECK_THROWS_AS(g.reshape(g.param(px), {5, 5}), DimensionError);
    }
    const Tensor coeff = random_tensor({1, 3}, rng);
    check_param_grads({&px}, [&](Graph& g) {
        return g.sum(g.mul(g.global_avg_pool(g.param(px)), g.constant(coeff)));
    });
    check_param_grads({&px}, [&](Graph& g) {
        return g.mean(g.reshape(g.param(px), {4, 3}));
    });
}

TEST_CASE("head_to_anchors layout and gradient") {
    // 2 anchors/location, K=3, 2x2 grid: check one known element mapping.
    Rng rng(18);
    Parameter px("x", random_tensor({1, 6, 2, 2}, rng));
    Graph g;
    const NodeId y = g.head_to_anchors(g.param(px), 2, 3);
    REQUIRE(g.value(y).shape() == std::vector<int>{8, 3});
    // Anchor index = (row * W + col) * A_pl + a; channel = a * K + k.
    for (int row = 0; row < 2; ++row)
        for (int col = 0; col < 2; ++col)
            for (int a = 0; a < 2; ++a)
                for (int k = 0; k < 3; ++k) {
                    const int anchor = (row * 2 + col) * 2 + a;
                    CHECK(g.value(y)[anchor * 3 + k] == px.value.at4(0, a * 3 + k, row, col));
                }
    const Tensor coeff = random_tensor({8, 3}, rng);
    check_param_grads({&px}, [&](Graph& gg) {
        return gg.sum(gg.mul(gg.head_to_anchors(gg.param(px), 2, 3), gg.constant(coeff)));
    });
}

TEST_CASE("weighted_sum combines expert tensors and differentiates the gate") {
    Rng rng(19);
    const Tensor t0 = random_tensor({4, 2}, rng);
    const Tensor t1 = random_tensor({4, 2}, rng);
    const Tensor t2 = random_tensor({4, 2}, rng);
    Parameter pg("gate", Tensor({1, 3}, {0.2f, 0.5f, 0.3f}));
    Graph g;
    const NodeId y = g.weighted_sum(g.param(pg), {&t0, &t1, &t2});
    for (size_t i = 0; i < t0.size(); ++i) {
        const float expect = 0.2f * t0[i] + 0.5f * t1[i] + 0.3f * t2[i];
        CHECK(g.value(y)[i] == doctest::Approx(expect).epsilon(1e-6));
    }
    const Tensor coeff = random_tensor({4, 2}, rng);
    check_param_grads({&pg}, [&](Graph& gg) {
        return gg.sum(gg.mul(gg.weighted_sum(gg.param(pg), {&t0, &t1, &t2}),
                             gg.constant(coeff)));
    });
}

TEST_CASE("focal and smooth-L1 losses pass finite differences") {
    Rng rng(20);
    // Probabilities strictly inside (0,1) via sigmoid of logits.
    Parameter pl("logits", random_tensor({6, 2}, rng, -2.0f, 2.0f));
    Tensor targets({6, 2});
    Tensor mask({6, 2}, 1.0f);
    for (size_t i = 0; i < targets.size(); ++i) targets[i] = (rng.uniform() < 0.5) ? 0.0f : 1.0f;
    mask[3] = 0.0f;  // one ignored entry
    check_param_grads({&pl}, [&](Graph& g) {
        return g.focal_loss(g.sigmoid(g.param(pl)), targets, mask, 0.25f, 2.0f, 6.0f);
    });
    check_param_grads({&pl}, [&](Graph& g) {
        return g.focal_loss(g.sigmoid(g.param(pl)), targets, mask, 0.5f, 0.0f, 1.0f);
    });

    Parameter pp("pred", random_tensor({5, 4}, rng, -2.0f, 2.0f));
    const Tensor target = random_tensor({5, 4}, rng, -2.0f, 2.0f);
    Tensor rmask({5, 4}, 1.0f);
    rmask[7] = 0.0f;
    check_param_grads({&pp}, [&](Graph& g) {
        return g.smooth_l1_loss(g.param(pp), target, rmask, 5.0f);
    });
}

TEST_CASE("backward rejects non-scalar losses") {
    Parameter px("x", Tensor({2, 2}, 1.0f));
    Graph g;
    const NodeId y = g.relu(g.param(px));
    CHECK_THROWS_AS(g.backward(y), DimensionError);
}

TEST_CASE("SGD with momentum follows the velocity recurrence") {
    Parameter p("p", Tensor({2}, {1.0f, -2.0f}));
    SgdOptimizer opt(0.1f, 0.9f);
    // Oracle recurrence: v <- m*v + g ; x <- x - lr*v.
    float v[2] = {0.0f, 0.0f};
    float x[2] = {1.0f, -2.0f};
    const float grads[3][2] = {{0.5f, -1.0f}, {0.2f, 0.3f}, {-0.4f, 0.1f}};
    for (int step = 0; step < 3; ++step) {
        p.grad = Tensor({2}, {grads[step][0], grads[step][1]});
        opt.step({&p});
        for (int i = 0; i < 2; ++i) {
            v[i] = 0.9f * v[i] + grads[step][i];
            x[i] -= 0.1f * v[i];
            CHECK(p.value[i] == doctest::Approx(x[i]).epsilon(1e-6));
        }
    }
    p.grad[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(opt.step({&p}), NumericError);
}

TEST_CASE("deterministic RNG substreams are stable and decorrelated") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(a.next_u64() != c.next_u64());
    CHECK(substream_seed(1, "expert:S1") != substream_seed(1, "expert:S2"));
    CHECK(substream_seed(1, "x", 0) != substream_seed(1, "x", 1));
    CHECK(substream_seed(1, "x", 3) == substream_seed(1, "x", 3));
    Rng g(7);
    double mean = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const float u = g.uniform();
        CHECK(u >= 0.0f);
        CHECK(u < 1.0f);
        mean += u;
    }
    CHECK(mean / 10000.0 == doctest::Approx(0.5).epsilon(0.05));
}
