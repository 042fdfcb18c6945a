#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "pointsd/nn/layers.hpp"
#include "pointsd/nn/optim.hpp"
#include "support.hpp"

using namespace pointsd;
using namespace pointsd::testing;

TEST(Tensor, ShapeAndIndexing) {
    Tensor<float> t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.rows(), 2u);
    EXPECT_EQ(t.cols(), 3u);
    EXPECT_EQ(t(1, 2), 6.f);
    EXPECT_EQ(shape_string(t.shape()), "2x3");
    EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), std::invalid_argument);
}

TEST(Rng, DeterministicAndDerivedStreamsDiffer) {
    Rng a(derive_seed(5, {1, 2})), b(derive_seed(5, {1, 2})), c(derive_seed(5, {2, 1}));
    for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_NE(Rng(derive_seed(5, {1, 2})).next_u64(), c.next_u64());
}

TEST(Rng, UniformMomentsAndBelowRange) {
    Rng rng(3);
    double sum = 0;
    for (int i = 0; i < 100000; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
    }
    EXPECT_NEAR(sum / 100000, 0.5, 0.01);
    for (int i = 0; i < 1000; ++i) EXPECT_LT(rng.below(7), 7u);
}

TEST(Rng, NormalMoments) {
    Rng rng(11);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, DerangementHasNoFixedPoints) {
    Rng rng(8);
    for (std::size_t n = 2; n < 40; ++n) {
        const auto p = rng.derangement(n);
        std::set<std::size_t> seen(p.begin(), p.end());
        EXPECT_EQ(seen.size(), n);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NE(p[i], i);
    }
}

// Every op's backward pass against central differences in double precision.
class OpGradients : public ::testing::Test {
protected:
    Rng rng{1234};
    Tensor<double> r(const Shape& s, double scale = 1.0) { return random_tensor(s, rng, scale); }
    static constexpr double kTol = 1e-6;
};

TEST_F(OpGradients, Matmul) {
    for (int ta = 0; ta < 2; ++ta)
        for (int tb = 0; tb < 2; ++tb) {
            const Shape sa = ta ? Shape{4, 3} : Shape{3, 4};
            const Shape sb = tb ? Shape{5, 4} : Shape{4, 5};
            auto res = check_input_grads({r(sa), r(sb)}, [&](GraphD& g, const std::vector<VarD>& v) {
                return weighted_sum(g, ops::matmul(g, v[0], v[1], ta == 1, tb == 1));
            });
            EXPECT_LT(res.max_rel, kTol) << res.worst;
        }
}

TEST_F(OpGradients, ElementwiseAndBroadcast) {
    auto res = check_input_grads({r({3, 4}), r({3, 4}), r({4}), r({3})}, [](GraphD& g, const std::vector<VarD>& v) {
        auto a = ops::add(g, v[0], v[1]);
        auto b = ops::mul(g, ops::sub(g, a, v[1]), v[0]);
        auto c = ops::add_row_vector(g, ops::scale(g, b, 0.7), v[2]);
        return weighted_sum(g, ops::add_channel_vector(g, c, v[3]));
    });
    EXPECT_LT(res.max_rel, kTol) << res.worst;
}

TEST_F(OpGradients, Activations) {
    for (int which = 0; which < 3; ++which) {
        auto x = r({3, 5});
        for (auto& v : x.storage())
            if (std::abs(v) < 1e-3) v = 0.5;  // keep relu away from its kink
        auto res = check_input_grads({x}, [which](GraphD& g, const std::vector<VarD>& v) {
            auto y = which == 0 ? ops::silu(g, v[0]) : which == 1 ? ops::gelu(g, v[0]) : ops::relu(g, v[0]);
            return weighted_sum(g, y);
        });
        EXPECT_LT(res.max_rel, kTol) << which << " " << res.worst;
    }
}

TEST_F(OpGradients, SoftmaxAndCrossEntropy) {
    auto res = check_input_grads({r({4, 5})}, [](GraphD& g, const std::vector<VarD>& v) {
        return weighted_sum(g, ops::softmax_rows(g, v[0]));
    });
    EXPECT_LT(res.max_rel, kTol) << res.worst;
    auto ce = check_input_grads({r({4, 3})}, [](GraphD& g, const std::vector<VarD>& v) {
        return ops::cross_entropy(g, v[0], {0, 2, 1, 2});
    });
    EXPECT_LT(ce.max_rel, kTol) << ce.worst;
}

TEST_F(OpGradients, Norms) {
    auto ln = check_input_grads({r({3, 6}), r({6}), r({6})}, [](GraphD& g, const std::vector<VarD>& v) {
        return weighted_sum(g, ops::layer_norm(g, v[0], v[1], v[2]));
    });
    EXPECT_LT(ln.max_rel, 1e-5) << ln.worst;
    auto gn = check_input_grads({r({4, 3, 3}), r({4}), r({4})}, [](GraphD& g, const std::vector<VarD>& v) {
        return weighted_sum(g, ops::group_norm(g, v[0], 2, v[1], v[2]));
    });
    EXPECT_LT(gn.max_rel, 1e-5) << gn.worst;
}

TEST_F(OpGradients, ConvolutionStridesAndPointwise) {
    for (std::size_t k : {1u, 3u})
        for (std::size_t stride : {1u, 2u}) {
            auto res = check_input_grads({r({2, 4, 6}), r({3, 2, k, k}), r({3})},
                                         [&](GraphD& g, const std::vector<VarD>& v) {
                                             return weighted_sum(g, ops::conv2d(g, v[0], v[1], v[2], stride, k / 2));
                                         });
            EXPECT_LT(res.max_rel, kTol) << "k=" << k << " stride=" << stride << " " << res.worst;
        }
}

TEST_F(OpGradients, ShapeOps) {
    auto res = check_input_grads({r({2, 2, 3}), r({3, 2, 3}), r({4, 3})}, [](GraphD& g, const std::vector<VarD>& v) {
        auto up = ops::upsample2x(g, v[0]);        // [2,4,6]
        auto cat = ops::concat0(g, {v[0], v[1]});  // [5,2,3]
        auto flat = ops::reshape(g, cat, {5, 6});
        auto cols = ops::concat_cols(g, {ops::slice_cols(g, flat, 1, 3), ops::transpose(g, ops::slice_cols(g, flat, 0, 5))});
        auto rows = ops::gather_rows(g, v[2], {3, 0, 3, 1});
        auto a = weighted_sum(g, cols, 1);
        auto b = weighted_sum(g, rows, 2);
        auto c = weighted_sum(g, ops::mean_trailing(g, up), 3);
        return ops::add(g, ops::add(g, a, b), c);
    });
    EXPECT_LT(res.max_rel, kTol) << res.worst;
}

TEST_F(OpGradients, PoolingAndLosses) {
    auto res = check_input_grads({r({6, 4}), r({6, 4})}, [](GraphD& g, const std::vector<VarD>& v) {
        auto mx = ops::group_max_rows(g, v[0], 3);  // [2,4]
        auto mean = ops::mean_rows(g, v[0]);       // [1,4]
        auto d = ops::squared_distance(g, v[0], v[1]);
        auto m = ops::mse(g, v[1], v[0]);
        return ops::add(g, ops::add(g, weighted_sum(g, mx, 4), weighted_sum(g, mean, 5)), ops::add(g, d, m));
    });
    EXPECT_LT(res.max_rel, kTol) << res.worst;
}

TEST(Ops, GroupMaxTiesGoToFirstRow) {
    ag::Graph<double> g(true);
    auto x = g.leaf(Tensor<double>({2, 1}, std::vector<double>{1.0, 1.0}));
    auto y = ops::group_max_rows(g, x, 2);
    g.backward(y);
    EXPECT_EQ(x->grad[0], 1.0);
    EXPECT_EQ(x->grad[1], 0.0);
}

TEST(Ops, ShapeMismatchesAreRejected) {
    ag::Graph<float> g(false);
    auto a = g.constant(Tensor<float>({2, 3}));
    auto b = g.constant(Tensor<float>({2, 3}));
    EXPECT_THROW(ops::matmul(g, a, b), std::invalid_argument);
    EXPECT_THROW(ops::squared_distance(g, a, g.constant(Tensor<float>({5}))), std::invalid_argument);
    EXPECT_THROW(ops::cross_entropy(g, a, {0}), std::invalid_argument);
}

TEST(Graph, NoGradModeRecordsNothing) {
    nn::ParameterStore<float> store(1);
    nn::Linear<float> lin(store, "lin", 3, 2);
    ag::Graph<float> g(false);
    auto y = lin(g, g.constant(Tensor<float>({1, 3}, 1.f)));
    EXPECT_FALSE(y->requires_grad);
    EXPECT_THROW(g.backward(y), std::logic_error);
}

TEST(Graph, FrozenParametersReceiveNoGradient) {
    nn::ParameterStore<float> store(1);
    nn::Linear<float> a(store, "a", 3, 3), b(store, "b", 3, 1);
    store.set_trainable_prefixes({"b."});
    ag::Graph<float> g(true);
    auto y = ops::sum(g, b(g, a(g, g.constant(Tensor<float>({1, 3}, 1.f)))));
    g.backward(y);
    EXPECT_EQ(g.grad_of(*a.weight), nullptr);
    ASSERT_NE(g.grad_of(*b.weight), nullptr);
    nn::GradientSet<float> gs(store);
    g.accumulate(store, gs);
    EXPECT_TRUE(gs.grads[store.index_of(a.weight)].empty());
}

TEST(Graph, AccumulateSplitsGradientsByStore) {
    nn::ParameterStore<float> body(1), head(2);
    nn::Linear<float> a(body, "lin", 3, 3), b(head, "lin", 3, 1);  // same names, different stores
    ag::Graph<float> g(true);
    g.backward(ops::sum(g, b(g, a(g, g.constant(Tensor<float>({1, 3}, 1.f))))));
    nn::GradientSet<float> gb(body), gh(head);
    g.accumulate(body, gb);
    g.accumulate(head, gh);
    EXPECT_EQ(gb.grads[body.index_of(a.weight)].storage(), g.grad_of(*a.weight)->storage());
    EXPECT_EQ(gh.grads[head.index_of(b.weight)].storage(), g.grad_of(*b.weight)->storage());
}

TEST(ParameterStore, InitDependsOnNameNotOrder) {
    nn::ParameterStore<float> s1(42), s2(42);
    s1.add("x", {4}, nn::Init::Normal);
    s1.add("y", {4}, nn::Init::Normal);
    s2.add("y", {4}, nn::Init::Normal);
    s2.add("x", {4}, nn::Init::Normal);
    EXPECT_EQ(s1.at("x").value.storage(), s2.at("x").value.storage());
    EXPECT_EQ(s1.at("y").value.storage(), s2.at("y").value.storage());
    EXPECT_NE(s1.at("x").value.storage(), s1.at("y").value.storage());
    EXPECT_THROW(s1.add("x", {1}, nn::Init::Zeros), std::invalid_argument);
}

TEST(CosineSchedule, WarmupThenDecayToZero) {
    nn::CosineSchedule s{1.0, 4, 12};
    EXPECT_DOUBLE_EQ(s.at(0), 0.25);
    EXPECT_DOUBLE_EQ(s.at(3), 1.0);
    EXPECT_DOUBLE_EQ(s.at(4), 1.0);
    EXPECT_NEAR(s.at(8), 0.5, 1e-12);  // halfway through the cosine span
    EXPECT_NEAR(s.at(12), 0.0, 1e-12);
    for (std::size_t i = 4; i < 12; ++i) EXPECT_GE(s.at(i), s.at(i + 1));
}

TEST(AdamW, FirstStepMovesBySignTimesLrAndSkipsFrozen) {
    nn::ParameterStore<float> store(0);
    auto* w = store.add("w", {2, 2}, nn::Init::Ones);
    auto* b = store.add("b", {2}, nn::Init::Ones);
    auto* frozen = store.add("frozen", {2}, nn::Init::Ones);
    frozen->trainable = false;
    nn::AdamW<float> opt(store, 0.1);
    nn::GradientSet<float> gs(store);
    gs.grads[0].fill(2.f);
    gs.grads[1].fill(-3.f);
    opt.step(gs, 0.01);
    // Bias-corrected first Adam step is lr * sign(g); decay multiplies w by (1 - lr*wd) first.
    EXPECT_NEAR(w->value[0], 1.0 * (1 - 0.01 * 0.1) - 0.01, 1e-6);
    EXPECT_NEAR(b->value[0], 1.0 + 0.01, 1e-6);  // rank-1: no decay
    EXPECT_EQ(frozen->value[0], 1.f);
}

TEST(Tensor, StorageIsCacheLineAligned) {
    for (std::size_t n : {1u, 3u, 17u, 1000u}) {
        std::vector<Tensor<float>> keep;
        for (int i = 0; i < 8; ++i) {
            keep.emplace_back(Shape{n});
            EXPECT_EQ(reinterpret_cast<std::uintptr_t>(keep.back().data()) % 64, 0u);
        }
        const auto copy = keep.front();
        EXPECT_EQ(reinterpret_cast<std::uintptr_t>(copy.data()) % 64, 0u);
    }
}
