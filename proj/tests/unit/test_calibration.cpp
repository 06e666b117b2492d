#include <doctest.h>

#include <cmath>
#include <random>

#include "builders.hpp"
#include "mlsim/calibration.hpp"
#include "oracles.hpp"

using namespace mlsim;
using namespace mlsim::testing;
using doctest::Approx;

namespace {

// Gated offramp node: inputs GP and onramp; outputs GP and offramp; classes
// LOV, HOV and one destination class that always exits here.
OfframpProblem gated_problem(double non_destination, double destination, double target, double offramp_supply = 5000) {
    NodeInputs in(2, 2, 3);
    in.demand(0, 0) = non_destination * 0.8;
    in.demand(0, 1) = non_destination * 0.2;
    in.demand(0, 2) = destination;
    in.demand(1, 0) = 300.0;
    in.supplies = {9000.0, offramp_supply};
    in.priorities = {0.7, 0.3};
    for (std::size_t c = 0; c < 2; ++c) {
        in.splits.set(0, 0, c, 0.9);
        in.splits.set(0, 1, c, 0.1);
        in.splits.set(1, 0, c, 1.0);
        in.splits.set(1, 1, c, 0.0);
    }
    in.splits.set(0, 0, 2, 0.0), in.splits.set(0, 1, 2, 1.0);
    in.splits.set(1, 0, 2, 1.0), in.splits.set(1, 1, 2, 0.0);
    OfframpProblem p;
    p.snapshots = {in};
    p.offramp = 1;
    p.target = target;
    p.controlled = {1, 1, 0, 0, 0, 0};
    p.scalable.assign(2 * 2 * 3, 0);
    p.scalable[(0 * 2 + 0) * 3 + 0] = 1;
    p.scalable[(0 * 2 + 0) * 3 + 1] = 1;
    return p;
}

}  // namespace

TEST_CASE("mainline demand below the target gives beta one") {
    auto p = full_access_offramp_problem(600.0, 200.0, 0.0, {9000, 9000, 9000}, 900.0);
    const auto s = solve_offramp_beta_full_access(p);
    CHECK(s.beta == 1.0);
    CHECK(s.starved);
}

TEST_CASE("uncongested full access node has a linear residual") {
    auto p = full_access_offramp_problem(800.0, 200.0, 0.0, {9000, 9000, 9000}, 300.0);
    CHECK(offramp_residual(p, 0.5) == Approx(200.0).epsilon(1e-12));
    const auto s = solve_offramp_beta_full_access(p);
    CHECK(s.beta == Approx(0.3).epsilon(1e-6));
    CHECK_FALSE(s.starved);
    CHECK(s.iterations <= 3);
}

TEST_CASE("full access bisection matches a grid scan on constrained nodes") {
    std::mt19937_64 rng(31);
    int bracketed = 0;
    for (int k = 0; k < 300; ++k) {
        auto p = random_offramp_problem(rng);
        const auto s = solve_offramp_beta_full_access(p);
        if (s.starved) {
            CHECK(s.beta == 1.0);
            CHECK(offramp_residual(p, 1.0) < 0.0);
            continue;
        }
        ++bracketed;
        CHECK(std::abs(s.beta - grid_root(p, 1e-4)) <= 2e-4);
    }
    CHECK(bracketed > 100);
}

TEST_CASE("offramp residual is nondecreasing in beta") {
    std::mt19937_64 rng(32);
    for (int k = 0; k < 200; ++k) {
        const auto p = random_offramp_problem(rng);
        double previous = -1e300;
        for (int b = 0; b <= 1000; ++b) {
            const double psi = offramp_residual(p, b * 1e-3);
            REQUIRE(psi >= previous - 1e-9 * (1.0 + std::abs(previous)));
            previous = psi;
        }
    }
}

TEST_CASE("bisection iteration bound") {
    std::mt19937_64 rng(33);
    for (int k = 0; k < 100; ++k) {
        auto p = random_offramp_problem(rng);
        BetaOptions o;
        const auto s = solve_offramp_beta_full_access(p, o);
        CHECK(s.iterations <= static_cast<std::size_t>(std::ceil(std::log2(1.0 / o.tolerance))) + 3);
    }
}

TEST_CASE("gated node with destination traffic") {
    auto p = gated_problem(1000.0, 100.0, 400.0);
    const auto s = solve_offramp_beta_gated(p);
    CHECK(s.beta == Approx(0.3).epsilon(1e-6));
    CHECK_FALSE(s.starved);
    CHECK_FALSE(s.clamped);
}

TEST_CASE("gated node edge cases") {
    auto zero = gated_problem(1000.0, 0.0, 0.0);
    CHECK(solve_offramp_beta_gated(zero).beta == 0.0);
    CHECK_FALSE(solve_offramp_beta_gated(zero).clamped);

    auto starved = gated_problem(1000.0, 100.0, 5000.0);
    const auto s = solve_offramp_beta_gated(starved);
    CHECK(s.beta == 1.0);
    CHECK(s.starved);

    auto overshoot = gated_problem(1000.0, 300.0, 100.0);
    const auto c = solve_offramp_beta_gated(overshoot);
    CHECK(c.beta == 0.0);
    CHECK(c.clamped);
}

TEST_CASE("gated bisection matches a grid scan") {
    std::mt19937_64 rng(34);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 200; ++k) {
        auto p = gated_problem(500 + 4000 * u(rng), 200 * u(rng), 0.0, 200 + 1500 * u(rng));
        p.target = offramp_residual(p, u(rng));  // reachable target
        const auto s = solve_offramp_beta_gated(p);
        if (s.clamped || s.starved) continue;
        CHECK(std::abs(s.beta - grid_root(p, 1e-4)) <= 2e-4);
    }
}

TEST_CASE("round trip on a short congested corridor") {
    const auto f = round_trip_fixture(6.0);
    const auto r = run_calibration_loop(f.truth, f.targets);
    CHECK(r.converged);
    CHECK(r.outer_iterations <= 2);
    for (const auto& o : r.offramps) {
        const auto& truth = f.beta.at(o.link);
        for (std::size_t k = 0; k < o.target.size(); ++k) {
            if (o.starved[k]) continue;
            CHECK(std::abs(o.beta[k] - truth[k]) <= 1e-2);
            CHECK(std::abs(o.residual[k]) <= 0.005 * o.target[k] + 1e-9);
        }
    }
    CHECK_FALSE(r.bottlenecks.empty());
    CHECK(r.metrics.total.vmt > 0.0);
}

TEST_CASE("zero targets give zero splits") {
    auto f = round_trip_fixture(1.0);
    for (auto& t : f.targets.offramps) std::fill(t.flows.values.begin(), t.flows.values.end(), 0.0);
    const auto r = run_calibration_loop(f.truth, f.targets);
    CHECK(r.converged);
    CHECK(r.outer_iterations == 1);
    for (const auto& o : r.offramps)
        for (double b : o.beta) CHECK(b == 0.0);
}

TEST_CASE("unreachable targets are flagged as starved") {
    auto f = round_trip_fixture(1.0);
    auto& first = f.targets.offramps[0].flows.values;
    first[0] = 1600.0;  // above the offramp capacity
    const auto r = run_calibration_loop(f.truth, f.targets);
    CHECK(r.offramps[0].starved[0]);
    CHECK(r.warnings.size() == 1);
    CHECK(r.offramps[0].beta[0] == 1.0);
    CHECK(r.converged);
}

TEST_CASE("calibration is idempotent at its fixed point") {
    const auto f = round_trip_fixture(2.0);
    const auto first = run_calibration_loop(f.truth, f.targets);
    CalibrationOptions o;
    const auto second = run_calibration_loop(first.calibrated, f.targets, o);
    for (std::size_t n = 0; n < first.offramps.size(); ++n)
        for (std::size_t k = 0; k < first.offramps[n].beta.size(); ++k)
            CHECK(std::abs(first.offramps[n].beta[k] - second.offramps[n].beta[k]) <= o.tolerance);
}

TEST_CASE("full access emits one split per offramp for every input and class") {
    const auto f = round_trip_fixture(1.0);
    const auto r = run_calibration_loop(f.truth, f.targets);
    Simulator sim(r.calibrated);
    const std::size_t off = *sim.network().link_index("off1");
    const std::size_t node = sim.offramp_node(off);
    const auto& outs = sim.node_outputs(node);
    const std::size_t j = static_cast<std::size_t>(std::find(outs.begin(), outs.end(), off) - outs.begin());
    for (std::size_t i = 0; i < sim.node_inputs(node).size(); ++i)
        for (std::size_t c = 0; c < sim.network().classes().size(); ++c) {
            const auto& e = sim.split_entry(node, i, j, c);
            CHECK(e.rule == Simulator::Rule::offramp);
            CHECK(e.offramp == off);
        }
}

TEST_CASE("calibration input errors") {
    auto f = round_trip_fixture(0.5);
    auto bad_interval = f.targets;
    bad_interval.interval_minutes = 15.0;
    CHECK_THROWS_WITH_AS(run_calibration_loop(f.truth, bad_interval), doctest::Contains("min intervals"), Error);
    auto bad_link = f.targets;
    bad_link.offramps[0].link = "gp1";
    CHECK_THROWS_AS(run_calibration_loop(f.truth, bad_link), Error);
}

TEST_CASE("report serialization") {
    const auto f = round_trip_fixture(1.0);
    const auto r = run_calibration_loop(f.truth, f.targets);
    const std::string json = report_json(r);
    CHECK(json.find("\"converged\": true") != std::string::npos);
    CHECK(json.find("\"off1\"") != std::string::npos);
    const std::string text = report_text(r);
    CHECK(text.find("Total VMT") != std::string::npos);
    CHECK(text.find("bottlenecks") != std::string::npos);
}
