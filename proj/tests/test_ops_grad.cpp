#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vpr/ops.hpp"

using namespace vpr;

namespace {

constexpr int kSeeds = 20;
constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("conv2d: all-ones 3x3 sums to 9") {
    Tensor x = Tensor::ones({1, 3, 3});
    Tensor w = Tensor::ones({1, 1, 3, 3});
    Tensor b = Tensor::zeros({1});
    Tensor y = conv2d(x, w, b, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1});
    CHECK(y.at({0, 0, 0}) == 9.0);
}

TEST_CASE("conv2d: 1x1 identity kernel preserves the input") {
    Rng rng(3);
    Tensor x = oracle::random_tensor({1, 4, 5}, rng);
    Tensor w = Tensor::ones({1, 1, 1, 1});
    Tensor y = conv2d(x, w, Tensor::zeros({1}), 1, 0);
    for (Eigen::Index i = 0; i < x.size(); ++i) CHECK(y.array()(i) == x.array()(i));
}

TEST_CASE("conv2d matches the naive loop oracle") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(100 + seed);
        Tensor x = oracle::random_tensor({2, 4, 4}, rng);
        Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
        Tensor b = oracle::random_tensor({3}, rng);
        Tensor got = conv2d(x, w, b, 1, 1);
        Tensor want = oracle::naive_conv2d(x, w, b, 1, 1);
        REQUIRE(got.shape() == want.shape());
        for (Eigen::Index i = 0; i < got.size(); ++i)
            CHECK(std::abs(got.array()(i) - want.array()(i)) < 1e-12);
    }
    // strided + padded variants
    Rng rng(7);
    Tensor x = oracle::random_tensor({3, 7, 6}, rng);
    Tensor w = oracle::random_tensor({4, 3, 4, 4}, rng);
    Tensor b = oracle::random_tensor({4}, rng);
    Tensor got = conv2d(x, w, b, 2, 1);
    Tensor want = oracle::naive_conv2d(x, w, b, 2, 1);
    REQUIRE(got.shape() == want.shape());
    for (Eigen::Index i = 0; i < got.size(); ++i)
        CHECK(std::abs(got.array()(i) - want.array()(i)) < 1e-12);
}

TEST_CASE("conv2d shape errors") {
    Tensor x = Tensor::ones({2, 4, 4});
    Tensor w = Tensor::ones({1, 3, 3, 3});  // channel mismatch
    CHECK_THROWS_AS(conv2d(x, w, Tensor::zeros({1}), 1, 0), DimensionError);
    Tensor w2 = Tensor::ones({1, 2, 5, 5});  // kernel larger than padded input
    CHECK_THROWS_AS(conv2d(x, w2, Tensor::zeros({1}), 1, 0), DimensionError);
    CHECK_THROWS_AS(conv2d(x, Tensor::ones({1, 2, 3, 3}), Tensor::zeros({2}), 1, 0),
                    DimensionError);
    CHECK_THROWS_AS(conv2d(x, Tensor::ones({1, 2, 3, 3}), Tensor::zeros({1}), 0, 0),
                    ParameterError);
}

TEST_CASE("upsample_nearest: examples") {
    Tensor x = Tensor::full({1, 1, 1}, 5.0);
    Tensor y = upsample_nearest(x, 2, 2);
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(y.array()(i) == 5.0);

    Rng rng(5);
    Tensor z = oracle::random_tensor({2, 3, 4}, rng);
    Tensor same = upsample_nearest(z, 3, 4);
    for (Eigen::Index i = 0; i < z.size(); ++i) CHECK(same.array()(i) == z.array()(i));

    Tensor q = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
    Tensor up = upsample_nearest(q, 4, 4);
    // each source cell becomes a 2x2 block per the floor index formula
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) CHECK(up.at({0, i, j}) == q.at({0, i / 2, j / 2}));

    CHECK_THROWS_AS(upsample_nearest(q, 0, 4), DimensionError);
    CHECK_THROWS_AS(upsample_nearest(q, 1, 4), DimensionError);
}

TEST_CASE("softplus closed forms and positivity") {
    Tensor y = softplus(Tensor::from_data({3}, {0.0, 50.0, -50.0}));
    CHECK(y.at({0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(std::abs(y.at({1}) - 50.0) < 1e-12);
    CHECK(y.at({2}) == doctest::Approx(1.928749847963918e-22).epsilon(1e-12));
    CHECK(y.at({2}) > 0.0);
    // strictly positive for very negative inputs too
    Tensor z = softplus(Tensor::from_data({1}, {-745.0}));
    CHECK(z.at({0}) > 0.0);
}

TEST_CASE("elementwise op gradients match finite differences") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(1000 + seed);
        oracle::GradCheck gc;

        Tensor x = oracle::random_tensor({2, 3}, rng);
        Tensor proj_src = oracle::random_tensor({2, 3}, rng);
        proj_src.set_requires_grad(false);

        auto check1 = [&](const std::function<Tensor(const Tensor&)>& op, Tensor leaf) {
            auto build = [&] { return sum_all(mul(op(leaf), proj_src)); };
            CHECK(gc.max_rel_error(build, {leaf}) < kTol);
        };
        check1([](const Tensor& t) { return relu(t); }, x.clone());
        check1([](const Tensor& t) { return leaky_relu(t, 0.2); }, x.clone());
        check1([](const Tensor& t) { return sigmoid(t); }, x.clone());
        check1([](const Tensor& t) { return softplus(t); }, x.clone());
        check1([](const Tensor& t) { return vpr::exp(t); }, x.clone());
        check1([](const Tensor& t) { return add_scalar(t, 1.7); }, x.clone());
        check1([](const Tensor& t) { return mul_scalar(t, -2.5); }, x.clone());
        check1([](const Tensor& t) { return rsub_scalar(0.3, t); }, x.clone());
        check1([](const Tensor& t) { return neg(t); }, x.clone());

        Tensor pos = oracle::random_tensor({2, 3}, rng, 0.1, 3.0);
        check1([](const Tensor& t) { return vpr::log(t); }, pos);

        Tensor a = oracle::random_tensor({2, 3}, rng);
        Tensor b = oracle::random_tensor({2, 3}, rng);
        auto build_bin = [&] { return sum_all(mul(mul(a, b), proj_src)); };
        CHECK(gc.max_rel_error(build_bin, {a, b}) < kTol);
        auto build_add = [&] { return sum_all(mul(add(a, b), proj_src)); };
        CHECK(gc.max_rel_error(build_add, {a, b}) < kTol);
        auto build_sub = [&] { return sum_all(mul(sub(a, b), proj_src)); };
        CHECK(gc.max_rel_error(build_sub, {a, b}) < kTol);
    }
}

TEST_CASE("pow gradients in x and p") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(2000 + seed);
        oracle::GradCheck gc;
        Tensor x = oracle::random_tensor({5}, rng, 0.2, 2.0);
        Tensor p = Tensor::scalar(rng.uniform(1.0, 4.0), true);
        Tensor proj = oracle::random_tensor({5}, rng);
        proj.set_requires_grad(false);
        auto build = [&] { return sum_all(mul(pow_elem(x, p), proj)); };
        CHECK(gc.max_rel_error(build, {x, p}) < kTol);
        auto build_inv = [&] { return sum_all(mul(pow_elem(x, pow_scalar(p, -1.0)), proj)); };
        CHECK(gc.max_rel_error(build_inv, {x, p}) < kTol);
    }
    CHECK_THROWS_AS(pow_scalar(Tensor::from_data({1}, {-1.0}), 2.0), DomainError);
}

TEST_CASE("structural op gradients match finite differences") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(3000 + seed);
        oracle::GradCheck gc;

        {
            Tensor a = oracle::random_tensor({2, 2, 3}, rng);
            Tensor b = oracle::random_tensor({1, 2, 3}, rng);
            Tensor c = oracle::random_tensor({3, 2, 3}, rng);
            Tensor proj = oracle::random_tensor({6, 2, 3}, rng);
            proj.set_requires_grad(false);
            auto build = [&] { return sum_all(mul(concat({a, b, c}, 0), proj)); };
            CHECK(gc.max_rel_error(build, {a, b, c}) < kTol);
        }
        {
            Tensor a = oracle::random_tensor({2, 3, 2}, rng);
            Tensor b = oracle::random_tensor({2, 3, 3}, rng);
            Tensor proj = oracle::random_tensor({2, 3, 5}, rng);
            proj.set_requires_grad(false);
            auto build = [&] { return sum_all(mul(concat({a, b}, 2), proj)); };
            CHECK(gc.max_rel_error(build, {a, b}) < kTol);
        }
        {
            Tensor x = oracle::random_tensor({3, 2, 2}, rng);
            Tensor m = oracle::random_tensor({1, 2, 2}, rng);
            Tensor proj = oracle::random_tensor({3, 2, 2}, rng);
            proj.set_requires_grad(false);
            auto build = [&] { return sum_all(mul(broadcast_mul(x, m), proj)); };
            CHECK(gc.max_rel_error(build, {x, m}) < kTol);
        }
        {
            Tensor x = oracle::random_tensor({2, 2, 3}, rng);
            Tensor proj = oracle::random_tensor({2, 5, 7}, rng);
            proj.set_requires_grad(false);
            auto build = [&] { return sum_all(mul(upsample_nearest(x, 5, 7), proj)); };
            CHECK(gc.max_rel_error(build, {x}) < kTol);
        }
        {
            Tensor x = oracle::random_tensor({2, 5, 5}, rng);
            Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
            Tensor b = oracle::random_tensor({3}, rng);
            Tensor proj = oracle::random_tensor({3, 3, 3}, rng);
            proj.set_requires_grad(false);
            auto build = [&] { return sum_all(mul(conv2d(x, w, b, 2, 1), proj)); };
            CHECK(gc.max_rel_error(build, {x, w, b}) < kTol);
        }
        {
            Tensor a = oracle::random_tensor({3, 4}, rng);
            Tensor b = oracle::random_tensor({4, 2}, rng);
            Tensor proj = oracle::random_tensor({3, 2}, rng);
            proj.set_requires_grad(false);
            auto build = [&] { return sum_all(mul(matmul(a, b), proj)); };
            CHECK(gc.max_rel_error(build, {a, b}) < kTol);
        }
    }
}

TEST_CASE("reduction and normalization gradients match finite differences") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(4000 + seed);
        oracle::GradCheck gc;
        {
            Tensor x = oracle::random_tensor({2, 3, 4}, rng);
            Tensor proj = oracle::random_tensor({2, 4}, rng);
            proj.set_requires_grad(false);
            auto build = [&] { return sum_all(mul(sum_axes(x, {1}), proj)); };
            CHECK(gc.max_rel_error(build, {x}) < kTol);
            Tensor proj2 = oracle::random_tensor({3}, rng);
            proj2.set_requires_grad(false);
            auto build2 = [&] { return sum_all(mul(mean_axes(x, {0, 2}), proj2)); };
            CHECK(gc.max_rel_error(build2, {x}) < kTol);
            auto build3 = [&] { return mean_all(x); };
            CHECK(gc.max_rel_error(build3, {x}) < kTol);
        }
        {
            Tensor x = oracle::random_tensor({6}, rng, -2.0, 2.0, 0.2);
            Tensor proj = oracle::random_tensor({6}, rng);
            proj.set_requires_grad(false);
            auto build = [&] { return sum_all(mul(l2_normalize_all(x), proj)); };
            CHECK(gc.max_rel_error(build, {x}) < kTol);
        }
        {
            Tensor x = oracle::random_tensor({2, 2, 3}, rng, -2.0, 2.0, 0.2);
            Tensor proj = oracle::random_tensor({2, 2, 3}, rng);
            proj.set_requires_grad(false);
            auto build = [&] { return sum_all(mul(l2_normalize_per_channel(x), proj)); };
            CHECK(gc.max_rel_error(build, {x}) < kTol);
        }
        {
            Tensor x = oracle::random_tensor({3, 2, 2}, rng);
            Tensor proj = oracle::random_tensor({3, 2, 2}, rng);
            proj.set_requires_grad(false);
            auto build = [&] { return sum_all(mul(log_softmax_channels(x), proj)); };
            CHECK(gc.max_rel_error(build, {x}) < kTol);
        }
        {
            Tensor a = oracle::random_tensor({5}, rng);
            Tensor b = oracle::random_tensor({5}, rng);
            auto build = [&] { return euclidean_distance(a, b); };
            CHECK(gc.max_rel_error(build, {a, b}) < kTol);
        }
        {
            Tensor logits = oracle::random_tensor({3, 2, 2}, rng);
            std::vector<std::uint8_t> labels = {0, 2, 255, 1};
            auto build = [&] {
                return masked_nll(log_softmax_channels(logits), labels);
            };
            CHECK(gc.max_rel_error(build, {logits}) < kTol);
        }
    }
}

TEST_CASE("op error contracts") {
    CHECK_THROWS_AS(add(Tensor::ones({2}), Tensor::ones({3})), DimensionError);
    CHECK_THROWS_AS(vpr::log(Tensor::from_data({2}, {1.0, 0.0})), DomainError);
    CHECK_THROWS_AS(euclidean_distance(Tensor::ones({2}), Tensor::ones({3})), DimensionError);
    CHECK_THROWS_AS(broadcast_mul(Tensor::ones({2, 2, 2}), Tensor::ones({1, 3, 2})),
                    DimensionError);
    std::vector<std::uint8_t> all_ignored = {255, 255, 255, 255};
    CHECK_THROWS_AS(masked_nll(log_softmax_channels(Tensor::ones({3, 2, 2})), all_ignored),
                    UndefinedMeanError);
    std::vector<std::uint8_t> bad_label = {0, 7, 0, 0};
    CHECK_THROWS_AS(masked_nll(log_softmax_channels(Tensor::ones({3, 2, 2})), bad_label),
                    DomainError);
}

TEST_CASE("euclidean distance at coincident points is finite") {
    Tensor a = Tensor::from_data({3}, {1, 2, 3}, true);
    Tensor b = Tensor::from_data({3}, {1, 2, 3}, true);
    GradGraph graph;
    GradGraph::Scope scope(graph);
    Tensor d = euclidean_distance(a, b);
    CHECK(d.value() == 0.0);
    graph.backward(d);  // subgradient 0, no NaN poisoning
    CHECK(a.grad_array().isFinite().all());
}
