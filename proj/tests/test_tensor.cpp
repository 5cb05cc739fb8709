#include <catch2/catch_amalgamated.hpp>

#include "p2pd/rng.hpp"
#include "p2pd/tensor.hpp"

using namespace p2pd;

TEST_CASE("matmul identity and hand product") {
    Graph g;
    auto eye = make_constant({2, 2}, {1, 0, 0, 1});
    auto a = make_constant({2, 2}, {1, 2, 3, 4});
    auto out = g.matmul(eye, a);
    CHECK(out->values == std::vector<double>{1, 2, 3, 4});

    auto row = make_constant({1, 2}, {1, 2});
    auto col = make_constant({2, 1}, {3, 4});
    CHECK(g.matmul(row, col)->values == std::vector<double>{11});
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Graph g;
    auto a = make_constant({2, 3}, std::vector<double>(6, 0.0));
    auto b = make_constant({2, 2}, std::vector<double>(4, 0.0));
    CHECK_THROWS_WITH(g.matmul(a, b), Catch::Matchers::ContainsSubstring("2x3") &&
                                          Catch::Matchers::ContainsSubstring("2x2"));
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(5);
    std::vector<double> av(6), bv(12);
    for (auto& v : av) v = rng.uniform(-1, 1);
    for (auto& v : bv) v = rng.uniform(-1, 1);
    Tensor a0({2, 3}, av);
    const double err = finite_diff_check(
        [&](Graph& g, const TensorPtr& a) {
            auto b = make_constant({3, 4}, bv);
            return g.reduce_sum(g.matmul(a, b));
        },
        a0, 1e-5);
    CHECK(err < 1e-6);
}

TEST_CASE("elementwise forward") {
    Graph g;
    auto r = g.relu(make_constant({3}, {-1, 0, 2}));
    CHECK(r->values == std::vector<double>{0, 0, 2});

    auto s = g.add(make_constant({2}, {1, 2}), make_constant({2}, {3, 4}));
    CHECK(s->values == std::vector<double>{4, 6});

    CHECK(g.sub(make_constant({2}, {5, 1}), make_constant({2}, {2, 2}))->values == std::vector<double>{3, -1});
    CHECK(g.mul(make_constant({2}, {5, 2}), make_constant({2}, {2, 3}))->values == std::vector<double>{10, 6});
    CHECK(g.scale(make_constant({2}, {5, 2}), -2.0)->values == std::vector<double>{-10, -4});

    // Scalar broadcast.
    CHECK(g.add(make_constant({3}, {1, 2, 3}), make_scalar(10.0))->values == std::vector<double>{11, 12, 13});
}

TEST_CASE("elementwise shape mismatch") {
    Graph g;
    auto a = make_constant({2}, {1, 2});
    auto b = make_constant({3}, {1, 2, 3});
    CHECK_THROWS_AS(g.add(a, b), DimensionError);
}

TEST_CASE("relu gradient vs finite differences away from the kink") {
    Tensor x0({2}, {-1.0, 2.0});
    const double err = finite_diff_check(
        [](Graph& g, const TensorPtr& x) { return g.reduce_sum(g.relu(x)); }, x0, 1e-5);
    CHECK(err < 1e-6);
}

TEST_CASE("reduce_max_over_group forward") {
    Graph g;
    auto a = make_constant({1, 2, 2}, {1, 5, 3, 2});
    CHECK(g.reduce_max_over_group(a)->values == std::vector<double>{3, 5});

    auto single = make_constant({2, 1, 3}, {7, 8, 9, -1, -2, -3});
    CHECK(g.reduce_max_over_group(single)->values == std::vector<double>{7, 8, 9, -1, -2, -3});
}

TEST_CASE("reduce_max gradient routes to the argmax only") {
    // Max gap is 2 between 3 and 1, eps=1e-5 cannot flip the winner.
    Tensor x0({1, 3, 1}, {1.0, 3.0, -2.0});
    const double err = finite_diff_check(
        [](Graph& g, const TensorPtr& x) { return g.reduce_sum(g.reduce_max_over_group(x)); }, x0, 1e-5);
    CHECK(err < 1e-8);

    Graph g;
    auto x = make_variable({1, 3, 1}, {1.0, 3.0, -2.0});
    g.backward(g.reduce_max_over_group(x));
    CHECK(x->grad == std::vector<double>{0, 1, 0});
}

TEST_CASE("reduce_max tie routes to the lowest index") {
    Graph g;
    auto x = make_variable({1, 3, 1}, {5.0, 5.0, 5.0});
    g.backward(g.reduce_max_over_group(x));
    CHECK(x->grad == std::vector<double>{1, 0, 0});
}

TEST_CASE("concat forward and identity with empty channels") {
    Graph g;
    auto a = make_constant({1, 1}, {1});
    auto b = make_constant({1, 2}, {2, 3});
    CHECK(g.concat(a, b)->values == std::vector<double>{1, 2, 3});

    auto x = make_constant({2, 2}, {1, 2, 3, 4});
    auto empty = make_constant({2, 0}, {});
    CHECK(g.concat(x, empty)->values == x->values);

    auto bad = make_constant({3, 1}, {1, 2, 3});
    CHECK_THROWS_AS(g.concat(x, bad), DimensionError);
}

TEST_CASE("concat backward splits the gradient bit-exactly") {
    Graph g;
    auto a = make_variable({2, 2}, {1, 2, 3, 4});
    auto b = make_variable({2, 1}, {5, 6});
    auto c = g.concat(a, b);
    // Loss = weighted sum with distinct weights per slot.
    auto w = make_constant({2, 3}, {0.5, -1.5, 2.0, 3.25, -0.125, 7.0});
    g.backward(g.reduce_sum(g.mul(c, w)));
    CHECK(a->grad == std::vector<double>{0.5, -1.5, 3.25, -0.125});
    CHECK(b->grad == std::vector<double>{2.0, 7.0});
}

TEST_CASE("gather_points semantics") {
    Graph g;
    auto a = make_constant({2, 1}, {10, 20});
    CHECK(g.gather_points(a, {1, 0})->values == std::vector<double>{20, 10});
    CHECK(g.gather_points(a, {0, 1})->values == a->values);
    CHECK_THROWS_AS(g.gather_points(a, {2}), IndexError);
}

TEST_CASE("gather_points with a repeated index accumulates backward") {
    Graph g;
    auto a = make_variable({2, 1}, {10, 20});
    auto out = g.gather_points(a, {0, 0});
    CHECK(out->values == std::vector<double>{10, 10});
    g.backward(g.reduce_sum(out));
    CHECK(a->grad == std::vector<double>{2, 0});

    Tensor x0({3, 2}, {1, 2, 3, 4, 5, 6});
    const double err = finite_diff_check(
        [](Graph& g2, const TensorPtr& x) {
            auto gathered = g2.gather_points(x, {0, 0, 2});
            return g2.reduce_sum(g2.mul(gathered, gathered));
        },
        x0, 1e-5);
    CHECK(err < 1e-7);
}

TEST_CASE("add_bias broadcasts rows and accumulates column sums") {
    Graph g;
    auto a = make_variable({2, 2}, {1, 2, 3, 4});
    auto bias = make_variable({2}, {10, 20});
    auto out = g.add_bias(a, bias);
    CHECK(out->values == std::vector<double>{11, 22, 13, 24});
    g.backward(g.reduce_sum(out));
    CHECK(a->grad == std::vector<double>{1, 1, 1, 1});
    CHECK(bias->grad == std::vector<double>{2, 2});
}

TEST_CASE("weighted_gather interpolates rows") {
    Graph g;
    auto feats = make_variable({2, 2}, {1, 2, 3, 4});
    auto out = g.weighted_gather(feats, {0, 1}, {0.25, 0.75}, 1, 2);
    CHECK(out->values == std::vector<double>{0.25 * 1 + 0.75 * 3, 0.25 * 2 + 0.75 * 4});
    g.backward(g.reduce_sum(out));
    CHECK(feats->grad == std::vector<double>{0.25, 0.25, 0.75, 0.75});
}

TEST_CASE("backward on linear and quadratic losses") {
    Graph g;
    auto x = make_variable({3}, {1, 2, 3});
    g.backward(g.reduce_sum(x));
    CHECK(x->grad == std::vector<double>{1, 1, 1});

    Graph g2;
    auto y = make_variable({1}, {2});
    g2.backward(g2.reduce_sum(g2.mul(y, y)));
    CHECK(y->grad == std::vector<double>{4});
}

TEST_CASE("backward requires a scalar and accumulates on repeat") {
    Graph g;
    auto x = make_variable({2}, {1, 2});
    auto doubled = g.scale(x, 2.0);
    CHECK_THROWS_AS(g.backward(doubled), ContractError);

    auto loss = g.reduce_sum(doubled);
    g.backward(loss);
    g.backward(loss);
    CHECK(x->grad == std::vector<double>{4, 4});
}

TEST_CASE("finite_diff_check on known functions") {
    Tensor lin({4}, {0.5, -1.0, 2.0, 0.25});
    CHECK(finite_diff_check([](Graph& g, const TensorPtr& x) { return g.reduce_sum(g.scale(x, 3.0)); }, lin, 1e-5) <
          1e-10);

    // f(x) = x^3 at x = 1.
    Tensor cube({1}, {1.0});
    CHECK(finite_diff_check(
              [](Graph& g, const TensorPtr& x) { return g.reduce_sum(g.mul(g.mul(x, x), x)); }, cube, 1e-4) < 1e-6);

    CHECK_THROWS_AS(finite_diff_check([](Graph& g, const TensorPtr& x) { return g.reduce_sum(x); }, lin, 0.0),
                    ContractError);
}

TEST_CASE("forward and gradient are deterministic for a fixed seed") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        std::vector<double> av(12), bv(12);
        for (auto& v : av) v = rng.normal();
        for (auto& v : bv) v = rng.normal();
        Graph g;
        auto a = make_variable({3, 4}, av);
        auto b = make_constant({4, 3}, bv);
        auto out = g.relu(g.matmul(a, b));
        auto loss = g.reduce_sum(g.mul(out, out));
        g.backward(loss);
        return std::make_pair(loss->values[0], a->grad);
    };
    auto r1 = run(99), r2 = run(99);
    CHECK(r1.first == r2.first);
    CHECK(r1.second == r2.second);
}

TEST_CASE("reshape is a transparent view for gradients") {
    Graph g;
    auto x = make_variable({2, 3}, {1, 2, 3, 4, 5, 6});
    auto r = g.reshape(x, {1, 2, 3});
    CHECK(r->shape == std::vector<std::size_t>{1, 2, 3});
    g.backward(g.reduce_sum(g.reduce_max_over_group(r)));
    CHECK(x->grad == std::vector<double>{0, 0, 0, 1, 1, 1});
    CHECK_THROWS_AS(g.reshape(x, {7}), DimensionError);
}
