#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "triret/autodiff.hpp"

using namespace triret;
using testutil::random_tensor;

TEST_CASE("matmul of all-ones 2x3 and 3x1 gives threes") {
    Graph g;
    const NodeId y = g.matmul(g.input("a", Tensor(2, 3, 1.0)), g.input("b", Tensor(3, 1, 1.0)));
    CHECK(g.value(y) == Tensor(2, 1, 3.0));
}

TEST_CASE("adding zero is a bitwise identity") {
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor(4, 5, rng);
    Graph g;
    const NodeId y = g.add(g.input("x", x), g.input("z", Tensor(4, 5, 0.0)));
    CHECK(g.value(y) == x);
}

TEST_CASE("row-vector broadcast in add") {
    Graph g;
    const NodeId y = g.add(g.input("x", Tensor(2, 2, {1, 2, 3, 4})), g.input("b", Tensor(1, 2, {10, 20})));
    CHECK(g.value(y) == Tensor(2, 2, {11, 22, 13, 24}));
}

TEST_CASE("linear -> gelu -> sum chain matches a hand-computed value") {
    // Row pre-activations are 1 and 2, so the value is Phi(1) + 2 Phi(2).
    Graph g;
    const NodeId x = g.input("x", Tensor(2, 2, {1.0, 2.0, 2.0, 0.0}));
    const NodeId w = g.input("w", Tensor(2, 1, {0.5, -0.25}));
    const NodeId b = g.input("b", Tensor(1, 1, 1.0));
    const NodeId root = g.sum(g.gelu(g.add(g.matmul(x, w), b)));
    const double phi1 = 0.8413447460685429;
    const double phi2 = 0.9772498680518208;
    CHECK(g.evaluate(root).item() == doctest::Approx(phi1 + 2.0 * phi2).epsilon(1e-15));
    CHECK(g.size() == 7);
}

TEST_CASE("placeholders bind at evaluate") {
    Graph g;
    const NodeId x = g.input("x");
    const NodeId root = g.sum(g.scale(x, 2.0));
    CHECK_FALSE(g.has_value(root));
    CHECK_THROWS(g.evaluate(root));
    CHECK(g.evaluate(root, {{"x", Tensor(1, 3, 1.0)}}).item() == 6.0);
    CHECK(g.evaluate(root, {{"x", Tensor(2, 2, 0.5)}}).item() == 4.0);
}

TEST_CASE("gradient of sum is all ones") {
    std::mt19937_64 rng(2);
    Graph g;
    const NodeId x = g.input("x", random_tensor(3, 4, rng));
    const NodeId root = g.sum(x);
    const auto grads = g.backprop(root);
    CHECK(grads.at("x") == Tensor(3, 4, 1.0));
}

TEST_CASE("gradient of x.x/2 is x") {
    std::mt19937_64 rng(3);
    const Tensor xv = random_tensor(2, 5, rng);
    Graph g;
    const NodeId x = g.input("x", xv);
    const NodeId root = g.scale(g.sum(g.multiply(x, x)), 0.5);
    const Tensor gx = g.backprop(root).at("x");
    for (std::size_t i = 0; i < xv.size(); ++i) CHECK(gx.data()[i] == doctest::Approx(xv.data()[i]).epsilon(1e-15));
}

TEST_CASE("fan-out accumulates additively") {
    Graph g;
    const NodeId x = g.input("x", Tensor(1, 1, 3.0));
    const NodeId root = g.sum(g.add(g.multiply(x, x), g.scale(x, 5.0)));
    CHECK(g.backprop(root).at("x").item() == 11.0);
}

TEST_CASE("backprop rejects a non-scalar root") {
    Graph g;
    const NodeId x = g.input("x", Tensor(2, 2, 1.0));
    CHECK_THROWS_AS(g.backprop(g.scale(x, 2.0)), std::invalid_argument);
}

TEST_CASE("random three-layer graph passes finite differences at 1e-6") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(100 + seed);
        Graph g;
        const NodeId x = g.input("x", random_tensor(4, 5, rng));
        NodeId h = x;
        std::size_t width = 5;
        for (int layer = 0; layer < 3; ++layer) {
            const std::size_t out = 3 + static_cast<std::size_t>(layer);
            const NodeId w = g.input("w" + std::to_string(layer), random_tensor(width, out, rng, 0.5));
            const NodeId b = g.input("b" + std::to_string(layer), random_tensor(1, out, rng, 0.1));
            h = g.gelu(g.add(g.matmul(h, w), b));
            width = out;
        }
        const NodeId root = g.mean(g.multiply(h, h));
        const auto rep = grad_check(g, root, 1e-6);
        CHECK(rep.passed);
        CHECK(rep.max_rel_error <= 1e-6);
        CHECK(rep.rel_error.size() == 7);
    }
}

TEST_CASE("every op passes finite differences on random inputs") {
    std::mt19937_64 rng(7);
    auto check = [](Graph& g, NodeId root, double tol) {
        const auto rep = grad_check(g, root, tol);
        INFO("worst " << rep.worst_input << " " << rep.max_rel_error);
        CHECK(rep.max_rel_error <= tol);
    };
    for (int trial = 0; trial < 5; ++trial) {
        Graph g;
        const NodeId a = g.input("a", random_tensor(3, 4, rng));
        const NodeId b = g.input("b", random_tensor(3, 4, rng));
        const NodeId c = g.input("c", random_tensor(4, 2, rng));
        Graph g2;  // log needs a strictly positive operand
        Tensor pv = random_tensor(3, 4, rng);
        for (double& v : pv.data()) v = 0.5 + std::abs(v);
        const NodeId p2 = g2.input("p", pv);

        check(g, g.sum(g.matmul(a, c)), 1e-6);
        check(g, g.sum(g.multiply(g.sub(a, b), a)), 1e-6);
        check(g, g.mean(g.exp(g.scale(a, 0.7))), 1e-6);
        check(g, g.sum(g.gelu(a)), 1e-6);
        check(g, g.sum(g.multiply(g.logsumexp_rows(g.scale(a, 3.0)), g.sum_rows(b))), 1e-6);
        check(g, g.sum(g.multiply(g.transpose(a), g.transpose(b))), 1e-6);
        check(g, g.sum(g.multiply(g.concat_cols(a, b), g.concat_cols(b, a))), 1e-6);
        check(g, g.sum(g.multiply(g.gather_rows(a, {2, 0, 0}), b)), 1e-6);
        check(g2, g2.sum(g2.log(p2)), 1e-6);
        check(g, g.sum(g.multiply(g.l2_normalize(a), b)), 1e-4);
    }
}

TEST_CASE("stop_gradient passes values and blocks gradients") {
    std::mt19937_64 rng(11);
    const Tensor xv = random_tensor(3, 3, rng);
    const Tensor yv = random_tensor(3, 3, rng);
    Graph g;
    const NodeId x = g.input("x", xv);
    const NodeId y = g.input("y", yv);
    const NodeId sg = g.stop_gradient(x);
    CHECK(g.value(sg) == xv);
    const NodeId root = g.sum(g.multiply(sg, y));
    const auto grads = g.backprop(root);
    CHECK(grads.at("y") == xv);
    CHECK(g.grad(x) == Tensor(3, 3, 0.0));
    if (grads.contains("x")) CHECK(grads.at("x") == Tensor(3, 3, 0.0));
}

TEST_CASE("frozen stop-gradient branch agrees with backprop") {
    std::mt19937_64 rng(12);
    Graph g;
    const NodeId x = g.input("x", random_tensor(3, 4, rng));
    const NodeId w = g.input("w", random_tensor(4, 4, rng));
    const NodeId teacher = g.stop_gradient(g.l2_normalize(g.matmul(x, w)));
    const NodeId student = g.l2_normalize(x);
    const NodeId root = g.sum(g.multiply(student, g.add(teacher, g.gelu(g.matmul(x, w)))));
    const auto rep = grad_check(g, root, 1e-6);
    CHECK(rep.max_rel_error <= 1e-6);
}

TEST_CASE("l2_normalize") {
    SUBCASE("3-4-5 row") {
        Graph g;
        const NodeId y = g.l2_normalize(g.input("x", Tensor(1, 2, {3.0, 4.0})));
        CHECK(g.value(y)(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
        CHECK(g.value(y)(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
    }
    SUBCASE("unit rows unchanged") {
        std::mt19937_64 rng(5);
        const Tensor u = testutil::random_unit(6, 7, rng);
        Graph g;
        const Tensor& y = g.value(g.l2_normalize(g.input("u", u)));
        for (std::size_t i = 0; i < u.size(); ++i) CHECK(std::abs(y.data()[i] - u.data()[i]) <= 1e-12);
    }
    SUBCASE("gradient of sum matches finite differences") {
        std::mt19937_64 rng(6);
        Graph g;
        const NodeId root = g.sum(g.l2_normalize(g.input("x", random_tensor(4, 5, rng))));
        CHECK(grad_check(g, root, 1e-6).max_rel_error <= 1e-6);
    }
    SUBCASE("zero row is a degenerate embedding") {
        Graph g;
        try {
            g.l2_normalize(g.input("x", Tensor(2, 3, {1, 0, 0, 0, 0, 0})));
            FAIL("expected an error");
        } catch (const std::exception& e) {
            CHECK(std::string(e.what()).find("degenerate embedding") != std::string::npos);
        }
    }
}

TEST_CASE("grad_check on a single linear layer is within 1e-8") {
    std::mt19937_64 rng(13);
    Graph g;
    const NodeId root = g.sum(g.add(g.matmul(g.input("x", random_tensor(3, 4, rng)),
                                             g.input("w", random_tensor(4, 2, rng))),
                                    g.input("b", random_tensor(1, 2, rng))));
    const auto rep = grad_check(g, root, 1e-8);
    CHECK(rep.passed);
    CHECK(rep.max_rel_error <= 1e-8);
}

TEST_CASE("grad_check reports failures instead of throwing") {
    // exp at large arguments has finite-difference error far above a zero tolerance.
    Graph g;
    const NodeId root = g.sum(g.exp(g.scale(g.input("x", Tensor(1, 1, 3.0)), 4.0)));
    GradCheckReport rep;
    CHECK_NOTHROW(rep = grad_check(g, root, 0.0));
    CHECK_FALSE(rep.passed);
}

TEST_CASE("logsumexp is stable at low temperature") {
    Graph g;
    const NodeId x = g.input("x", Tensor(1, 3, {1.0, 1.0, 0.5}));
    const NodeId y = g.logsumexp_rows(g.scale(x, 1.0 / 0.01));
    CHECK(g.value(y).item() == doctest::Approx(100.0 + std::log(2.0 + std::exp(-50.0))).epsilon(1e-15));
}

TEST_CASE("shape errors name both shapes") {
    Graph g;
    const NodeId a = g.input("a", Tensor(2, 3));
    const NodeId b = g.input("b", Tensor(2, 3));
    try {
        g.matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
    CHECK_THROWS_AS(g.add(a, g.input("c", Tensor(3, 2))), ShapeError);
}

TEST_CASE("log of a non-positive value is a domain error") {
    Graph g;
    CHECK_THROWS_AS(g.log(g.input("x", Tensor(1, 2, {1.0, 0.0}))), std::domain_error);
}

TEST_CASE("rewire into a cycle is detected at evaluate") {
    Graph g;
    const NodeId x = g.input("x", Tensor(1, 1, 1.0));
    const NodeId a = g.scale(x, 2.0);
    const NodeId b = g.exp(a);
    g.rewire(a, 0, b);
    try {
        g.evaluate(b);
        FAIL("expected cycle error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("cycle") != std::string::npos);
    }
}

TEST_CASE("gradients do not depend on topological visiting order") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(200 + seed);
        auto build = [&](Graph& g, const Tensor& xv, const Tensor& w1v, const Tensor& w2v) {
            const NodeId x = g.input("x", xv);
            const NodeId w1 = g.input("w1", w1v);
            const NodeId w2 = g.input("w2", w2v);
            const NodeId h1 = g.gelu(g.matmul(x, w1));
            const NodeId h2 = g.l2_normalize(g.matmul(x, w2));
            const NodeId s = g.add(g.multiply(h1, h2), g.multiply(h2, g.exp(g.scale(h1, 0.3))));
            return g.add(g.logsumexp_rows(s), g.sum_rows(g.multiply(h1, g.stop_gradient(h2))));
        };
        const Tensor xv = random_tensor(4, 3, rng);
        const Tensor w1 = random_tensor(3, 5, rng);
        const Tensor w2 = random_tensor(3, 5, rng);

        Graph g1;
        const NodeId r1 = g1.mean(build(g1, xv, w1, w2));
        g1.evaluate(r1);
        const auto a = g1.backprop(r1);

        Graph g2;
        const NodeId r2 = g2.mean(build(g2, xv, w1, w2));
        g2.evaluate(r2, {}, {.freeze_stop_gradients = false, .reverse_operand_order = true});
        const auto b = g2.backprop(r2);

        CHECK(a == b);
    }
}

TEST_CASE("identical inputs give bitwise-identical values and gradients") {
    auto run = [] {
        std::mt19937_64 rng(99);
        Graph g;
        const NodeId x = g.input("x", random_tensor(5, 4, rng));
        const NodeId w = g.input("w", random_tensor(4, 4, rng));
        const NodeId root = g.mean(g.logsumexp_rows(g.scale(g.l2_normalize(g.matmul(x, w)), 10.0)));
        return std::pair{g.value(root), g.backprop(root)};
    };
    const auto first = run();
    const auto second = run();
    CHECK(first.first == second.first);
    CHECK(first.second == second.second);
}
