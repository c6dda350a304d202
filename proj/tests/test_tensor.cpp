#include <doctest.h>

#include "oracles.hpp"
#include "vpr/ops.hpp"
#include "vpr/tensor.hpp"

using namespace vpr;

TEST_CASE("tensor construction and invariants") {
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t.at({1, 2}) == 6.0);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor::zeros({0, 3}), DimensionError);
    CHECK_THROWS_AS(t.value(), ContractViolation);
    CHECK(Tensor::scalar(4.5).value() == 4.5);
}

TEST_CASE("detach copies data and drops grad tracking") {
    Tensor t = Tensor::from_data({3}, {1, 2, 3}, true);
    Tensor d = t.detach();
    CHECK_FALSE(d.requires_grad());
    d.array()(0) = 9.0;
    CHECK(t.at({0}) == 1.0);
}

TEST_CASE("backward: loss = sum(x) gives grad of ones") {
    Tensor x = Tensor::from_data({2, 2}, {1, -2, 3, 4}, true);
    GradGraph graph;
    GradGraph::Scope scope(graph);
    Tensor loss = sum_all(x);
    graph.backward(loss);
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(x.grad_array()(i) == 1.0);
}

TEST_CASE("backward: loss = sum(x*x) gives grad 2x") {
    Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
    GradGraph graph;
    GradGraph::Scope scope(graph);
    graph.backward(sum_all(mul(x, x)));
    CHECK(x.grad_array()(0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(x.grad_array()(1) == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(x.grad_array()(2) == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("backward requires a scalar loss and a nonempty graph") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    GradGraph graph;
    GradGraph::Scope scope(graph);
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(graph.backward(y), ContractViolation);
    GradGraph empty;
    CHECK_THROWS_AS(empty.backward(Tensor::scalar(1.0)), ContractViolation);
}

TEST_CASE("backward is additive across separate runs") {
    Rng rng(17);
    Tensor x = oracle::random_tensor({4}, rng);

    // combined: L1 + L2 in one graph
    Tensor xc = x.clone();
    {
        GradGraph graph;
        GradGraph::Scope scope(graph);
        Tensor l1 = sum_all(mul(xc, xc));
        Tensor l2 = mean_all(mul_scalar(xc, 3.0));
        graph.backward(add(l1, l2));
    }
    // separate: two graphs, grads accumulate on the same leaf
    Tensor xs = x.clone();
    {
        GradGraph graph;
        GradGraph::Scope scope(graph);
        graph.backward(sum_all(mul(xs, xs)));
    }
    {
        GradGraph graph;
        GradGraph::Scope scope(graph);
        graph.backward(mean_all(mul_scalar(xs, 3.0)));
    }
    for (Eigen::Index i = 0; i < 4; ++i)
        CHECK(xc.grad_array()(i) == doctest::Approx(xs.grad_array()(i)).epsilon(1e-15));
}

TEST_CASE("no recording without an active graph") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("frozen leaves receive no gradient") {
    Tensor a = Tensor::from_data({2}, {1, 2}, true);
    Tensor b = Tensor::from_data({2}, {3, 4}, false);
    GradGraph graph;
    GradGraph::Scope scope(graph);
    graph.backward(sum_all(mul(a, b)));
    CHECK(a.has_grad());
    CHECK_FALSE(b.has_grad());
}
