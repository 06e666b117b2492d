#include <doctest.h>

#include <cmath>
#include <random>

#include "builders.hpp"
#include "mlsim/network.hpp"
#include "mlsim/node_model.hpp"

using namespace mlsim;
using namespace mlsim::testing;
using doctest::Approx;

TEST_CASE("priority regularization") {
    const auto a = regularize_priorities(std::vector<double>{0.5, 0.5, 0.0, 0.0});
    CHECK(a == std::vector<double>{0.375, 0.375, 0.125, 0.125});
    const auto b = regularize_priorities(std::vector<double>{0.2, 0.8});
    CHECK(b == std::vector<double>{0.2, 0.8});
    const auto c = regularize_priorities(std::vector<double>{0.0, 0.0});
    CHECK(c == std::vector<double>{0.5, 0.5});
}

TEST_CASE("regularized priorities are positive and sum to one") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 500; ++k) {
        std::vector<double> p(1 + k % 5);
        double sum = 0.0;
        for (double& x : p) sum += x = u(rng) < 0.3 ? 0.0 : u(rng);
        if (sum == 0.0) continue;
        for (double& x : p) x /= sum;
        const auto q = regularize_priorities(p);
        double total = 0.0;
        for (double x : q) {
            CHECK(x > 0.0);
            total += x;
        }
        CHECK(total == Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("fully defined splits pass through verbatim") {
    std::mt19937_64 rng(4);
    for (int k = 0; k < 200; ++k) {
        const NodeInputs in = random_node(rng);
        CHECK(solve_undefined_split_ratios(in) == in.splits);
    }
}

TEST_CASE("single input splits follow supply when nothing is predefined") {
    NodeInputs in(1, 2, 1);
    in.demand(0, 0) = 800.0;
    in.supplies = {600.0, 400.0};
    in.splits.clear(0, 0, 0);
    in.splits.clear(0, 1, 0);
    const auto s = solve_undefined_split_ratios(in);
    CHECK(s(0, 0, 0) == 0.6);
    CHECK(s(0, 1, 0) == 0.4);
}

TEST_CASE("single remaining output takes the unassigned portion") {
    NodeInputs in(1, 3, 1);
    in.demand(0, 0) = 800.0;
    in.supplies = {600.0, 400.0, 100.0};
    in.splits.set(0, 0, 0, 0.5);
    in.splits.set(0, 1, 0, 0.0);
    in.splits.clear(0, 2, 0);
    const auto s = solve_undefined_split_ratios(in);
    CHECK(s(0, 2, 0) == 0.5);
    CHECK(s(0, 0, 0) == 0.5);
}

TEST_CASE("two inputs balance oriented demand-supply ratios") {
    NodeInputs in(2, 2, 1);
    in.demands = {1000.0, 1000.0};
    in.supplies = {500.0, 1500.0};
    in.priorities = {0.5, 0.5};
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) in.splits.clear(i, j, 0);
    const auto s = solve_undefined_split_ratios(in);
    double d0 = 0.0, d1 = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(s(i, 0, 0) + s(i, 1, 0) == Approx(1.0).epsilon(1e-12));
        d0 += s(i, 0, 0) * 1000.0;
        d1 += s(i, 1, 0) * 1000.0;
    }
    CHECK(d0 / 500.0 == Approx(d1 / 1500.0).epsilon(1e-9));
}

TEST_CASE("completed rows sum to one and keep predefined entries") {
    std::mt19937_64 rng(5);
    for (int k = 0; k < 2000; ++k) {
        const NodeInputs in = random_node(rng, 3, 3, 3, false);
        SplitSolverStats stats;
        const auto s = solve_undefined_split_ratios(in, {}, &stats);
        REQUIRE(s.fully_defined());
        CHECK_FALSE(stats.hit_iteration_cap);
        for (std::size_t i = 0; i < in.inputs(); ++i)
            for (std::size_t c = 0; c < in.classes(); ++c) {
                bool any_undefined = false;
                for (std::size_t j = 0; j < in.outputs(); ++j) {
                    REQUIRE(s(i, j, c) >= 0.0);
                    if (in.splits.defined(i, j, c)) REQUIRE(s(i, j, c) == in.splits(i, j, c));
                    else any_undefined = true;
                }
                if (any_undefined) REQUIRE(std::abs(s.row_sum(i, c) - 1.0) <= 1e-9);
            }
    }
}

TEST_CASE("rows without demand are spread uniformly") {
    NodeInputs in(1, 3, 1);
    in.supplies = {100.0, 200.0, 300.0};
    in.splits.set(0, 0, 0, 0.4);
    in.splits.clear(0, 1, 0);
    in.splits.clear(0, 2, 0);
    const auto s = solve_undefined_split_ratios(in);
    CHECK(s(0, 1, 0) == Approx(0.3));
    CHECK(s(0, 2, 0) == Approx(0.3));
}

TEST_CASE("bias hook sees the completed matrix") {
    NodeInputs in(1, 2, 1);
    in.demand(0, 0) = 800.0;
    in.supplies = {600.0, 400.0};
    in.splits.clear(0, 0, 0);
    in.splits.clear(0, 1, 0);
    bool called = false;
    const auto s = solve_undefined_split_ratios(in, [&](const NodeInputs&, SplitMatrix& m) {
        called = true;
        CHECK(m.fully_defined());
        m.set(0, 0, 0, 0.5);
        m.set(0, 1, 0, 0.5);
    });
    CHECK(called);
    CHECK(s(0, 0, 0) == 0.5);
}

TEST_CASE("malformed node inputs are rejected") {
    NodeInputs in(1, 2, 1);
    in.demand(0, 0) = -1.0;
    in.supplies = {600.0, 400.0};
    in.splits.clear(0, 0, 0);
    in.splits.clear(0, 1, 0);
    CHECK_THROWS_WITH_AS(solve_undefined_split_ratios(in), "invalid node inputs", Error);
    in.demand(0, 0) = 10.0;
    in.supplies[1] = std::nan("");
    CHECK_THROWS_AS(solve_undefined_split_ratios(in), Error);
}
