// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "builders.hpp"
#include "mlsim/calibration.hpp"
#include "mlsim/link_model.hpp"
#include "mlsim/metrics.hpp"
#include "mlsim/node_model.hpp"
#include "mlsim/simulation.hpp"
#include "oracles.hpp"

using namespace mlsim;
using namespace mlsim::testing;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Collects the first few failure messages of a criterion.
class Checks {
public:
    void expect(bool ok, const std::string& what) {
        if (ok) return;
        ++failed_;
        if (failed_ <= 3) messages_ += (messages_.empty() ? "" : "; ") + what;
    }
    Outcome outcome(const std::string& summary) const {
        if (failed_ == 0) return {true, summary};
        return {false, fmt::format("{} failure(s): {}", failed_, messages_)};
    }

private:
    std::size_t failed_ = 0;
    std::string messages_;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

bool bit_identical(const SimOutput& a, const SimOutput& b) {
    return a.density == b.density && a.inflow == b.inflow && a.outflow == b.outflow && a.speed == b.speed &&
           a.metastate == b.metastate;
}

Outcome conservation() {
    Checks checks;
    std::mt19937_64 rng(2024);
    const auto start = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        const Scenario s = random_scenario(rng, 17280);
        checks.expect(s.network.links().size() <= 30 && s.network.classes().size() <= 7,
                      fmt::format("scenario {} exceeds the size bounds", k));
        Simulator sim(s);
        const SimOutput out = sim.run();
        const Balance b = vehicle_balance(out, sim.network());
        // Clamped mass counts against conservation here.
        const double relative = std::abs(b.error() + b.clamped) / b.scale();
        worst = std::max(worst, relative);
        checks.expect(relative <= 1e-9, fmt::format("scenario {} imbalance {:.3e}", k, relative));
    }
    const double elapsed = seconds_since(start);
    checks.expect(elapsed < 60.0, fmt::format("took {:.1f} s", elapsed));
    return checks.outcome(fmt::format("50 scenarios x 17280 steps, worst relative imbalance {:.2e}, {:.1f} s", worst, elapsed));
}

Outcome ctm_oracle() {
    CorridorOptions o;
    o.cells = 10;
    o.length = 0.1;
    o.steps = 1000;
    o.demand = {1700.0};
    o.bottleneck_capacity = {0, 0, 0, 0, 0, 0, 0, 1200.0, 0, 0};
    o.initial = {5, 10, 25, 40, 80, 100, 60, 30, 20, 0};
    Simulator sim(ctm_corridor(o));
    const auto out = sim.run();
    GodunovCorridor ref;
    ref.cell_capacity = o.bottleneck_capacity;
    const auto expected = godunov_densities(ref, o.initial, 1700.0, 1000);
    double worst = 0.0;
    for (std::size_t t = 0; t <= 1000; ++t)
        for (std::size_t i = 0; i < 10; ++i) worst = std::max(worst, std::abs(out.total_density(t, i + 1) - expected[t][i]));
    Checks checks;
    checks.expect(worst <= 1e-12, fmt::format("max density gap {:.3e}", worst));
    return checks.outcome(fmt::format("10 cells, 1000 steps, max density gap {:.2e}", worst));
}

Outcome hysteresis() {
    const FundamentalDiagram fd{1900.0, 60.0, 12.0, 180.0};
    Metastate theta = Metastate::uncongested;
    std::vector<int> seen{static_cast<int>(theta)};
    for (double rho : {32.0, 31.0, 29.0}) {
        theta = update_metastate(theta, rho, fd);
        seen.push_back(static_cast<int>(theta));
    }
    Checks checks;
    checks.expect(seen == std::vector<int>{0, 1, 1, 0},
                  fmt::format("metastates {},{},{},{}", seen[0], seen[1], seen[2], seen[3]));
    return checks.outcome("29 -> 32 -> 31 -> 29 gives 0,1,1,0");
}

Outcome friction() {
    Checks checks;
    std::mt19937_64 rng(404);
    for (int k = 0; k < 5; ++k) {
        Scenario s = random_scenario(rng, 2000);
        auto links = s.network.links();
        for (auto& l : links) l.friction = 0.0;
        s.network = Network(s.network.classes(), links, s.network.nodes());
        s.config.enable_friction = true;
        Scenario off = s;
        off.config.enable_friction = false;
        checks.expect(bit_identical(Simulator(s).run(), Simulator(off).run()),
                      fmt::format("scenario {}: zero friction differs from friction disabled", k));
    }

    const FundamentalDiagram ml{1800.0, 65.0, 12.0, 160.0};
    const auto e = apply_friction(ml, 35.0, 0.4);
    checks.expect(std::abs(e.speed - 53.0) <= 1e-9, fmt::format("speed {}", e.speed));
    checks.expect(std::abs(e.capacity - 53.0 * 1800.0 / 65.0) <= 1e-9, fmt::format("capacity {}", e.capacity));

    for (double gp = 0.0; gp <= 70.0; gp += 1.0) {
        double previous = ml.free_flow_speed;
        for (int step = 0; step <= 400; ++step) {
            const double v = apply_friction(ml, gp, step * 1e-3).speed;
            checks.expect(v <= previous, fmt::format("speed rises with sigma at gp speed {}", gp));
            previous = v;
        }
    }
    return checks.outcome(fmt::format("sigma=0 bit-identical on 5 scenarios, worked example {} mph / {:.4f} veh/h, sweep monotone",
                                      e.speed, e.capacity));
}

Outcome split_solver() {
    Checks checks;
    std::mt19937_64 rng(505);
    double worst = 0.0;
    for (int k = 0; k < 200; ++k) {
        const NodeInputs in = random_node(rng, 3, 3, 3, false);
        const SplitMatrix s = solve_undefined_split_ratios(in);
        for (std::size_t i = 0; i < in.inputs(); ++i)
            for (std::size_t c = 0; c < in.classes(); ++c) {
                const double gap = std::abs(s.row_sum(i, c) - 1.0);
                worst = std::max(worst, gap);
                checks.expect(gap <= 1e-9, fmt::format("node {} row ({},{}) sums to {}", k, i, c, s.row_sum(i, c)));
            }
    }

    NodeInputs two(1, 2, 1);
    two.demand(0, 0) = 800.0;
    two.supplies = {600.0, 400.0};
    two.splits.clear(0, 0, 0);
    two.splits.clear(0, 1, 0);
    const SplitMatrix r = solve_undefined_split_ratios(two);
    checks.expect(r(0, 0, 0) == 0.6 && r(0, 1, 0) == 0.4, fmt::format("R=(600,400) gave ({}, {})", r(0, 0, 0), r(0, 1, 0)));

    for (int k = 0; k < 200; ++k) {
        const NodeInputs in = random_node(rng);
        checks.expect(solve_undefined_split_ratios(in) == in.splits, fmt::format("defined node {} was altered", k));
    }
    return checks.outcome(fmt::format("200 random nodes, worst row-sum gap {:.2e}; (0.6, 0.4) exact; defined splits verbatim", worst));
}

Outcome bisection() {
    Checks checks;
    std::mt19937_64 rng(606);
    std::size_t starved = 0, bracketed = 0;
    double worst = 0.0;
    for (int k = 0; k < 200; ++k) {
        const OfframpProblem p = random_offramp_problem(rng);
        double previous = -1e300;
        for (int b = 0; b <= 1000; ++b) {
            const double psi = offramp_residual(p, b * 1e-3);
            checks.expect(psi >= previous - 1e-9 * (1.0 + std::abs(previous)),
                          fmt::format("node {}: psi decreases at beta {}", k, b * 1e-3));
            previous = psi;
        }
        const BetaSolution s = solve_offramp_beta_full_access(p);
        if (s.starved) {
            ++starved;
            checks.expect(s.beta == 1.0 && offramp_residual(p, 1.0) < 0.0, fmt::format("node {}: starved flag wrong", k));
            continue;
        }
        ++bracketed;
        const double gap = std::abs(s.beta - grid_root(p, 1e-4));
        worst = std::max(worst, gap);
        checks.expect(gap <= 2e-4, fmt::format("node {}: root off by {:.2e}", k, gap));
    }
    const auto low = full_access_offramp_problem(600.0, 200.0, 0.0, {9000, 9000, 9000}, 900.0);
    const BetaSolution s = solve_offramp_beta_full_access(low);
    checks.expect(s.beta == 1.0 && s.starved, "demand-starved node not flagged at beta = 1");
    return checks.outcome(fmt::format("200 nodes monotone on a 1e-3 grid, {} bracketed roots within {:.1e}, {} starved at beta = 1",
                                      bracketed, worst, starved));
}

Outcome round_trip() {
    Checks checks;
    const auto fixture = round_trip_fixture(24.0);
    const auto start = std::chrono::steady_clock::now();
    const CalibrationReport r = run_calibration_loop(fixture.truth, fixture.targets);
    const double elapsed = seconds_since(start);
    double beta_gap = 0.0, residual = 0.0;
    std::size_t starved = 0;
    for (const auto& o : r.offramps) {
        const auto& truth = fixture.beta.at(o.link);
        for (std::size_t k = 0; k < o.target.size(); ++k) {
            if (o.starved[k]) {
                ++starved;
                continue;
            }
            beta_gap = std::max(beta_gap, std::abs(o.beta[k] - truth[k]));
            if (o.target[k] > 0) residual = std::max(residual, std::abs(o.residual[k]) / o.target[k]);
        }
    }
    checks.expect(r.offramps.size() == 2, "expected two offramps");
    checks.expect(fixture.truth.network.links().size() == 10, "expected ten links");
    checks.expect(!r.bottlenecks.empty(), "fixture never congests");
    checks.expect(r.converged, "did not converge");
    checks.expect(r.outer_iterations <= 2, fmt::format("{} outer iterations", r.outer_iterations));
    checks.expect(beta_gap <= 1e-2, fmt::format("beta off by {:.3e}", beta_gap));
    checks.expect(residual <= 0.005, fmt::format("relative residual {:.3e}", residual));
    checks.expect(elapsed < 30.0, fmt::format("took {:.1f} s", elapsed));
    return checks.outcome(fmt::format("{} outer iteration(s), max beta error {:.2e}, max residual {:.2e}, {} starved interval(s), {:.1f} s",
                                      r.outer_iterations, beta_gap, residual, starved, elapsed));
}

Outcome metrics() {
    Checks checks;
    LinkTrace trace;
    trace.length = 2.0;
    trace.density = {40.0};
    trace.speed = {30.0};
    const auto m = compute_metrics({trace}, 5.0 / 60.0);
    checks.expect(std::abs(m.total.vht - 20.0 / 3.0) <= 1e-6, fmt::format("VHT {}", m.total.vht));
    checks.expect(std::abs(m.total.vmt - 200.0) <= 1e-6, fmt::format("VMT {}", m.total.vmt));
    checks.expect(std::abs(m.total.delay - 20.0 / 9.0) <= 1e-6, fmt::format("delay {}", m.total.delay));

    std::mt19937_64 rng(808);
    for (int k = 0; k < 5; ++k) {
        Simulator sim(random_scenario(rng, 2000));
        const auto out = sim.run();
        const auto s = compute_metrics(out, sim.network());
        checks.expect(s.total.vmt == s.gp.vmt + s.managed.vmt && s.total.vht == s.gp.vht + s.managed.vht &&
                          s.total.delay == s.gp.delay + s.managed.delay,
                      fmt::format("scenario {}: total is not GP + managed", k));
    }

    std::vector<std::string> names;
    for (const auto& row : metric_rows(m)) names.push_back(row.name);
    checks.expect(names == std::vector<std::string>{"GP Lane VMT", "Managed Lane VMT", "Total VMT", "GP Lane VHT",
                                                    "Managed Lane VHT", "Total VHT", "GP Lane Delay (hr)",
                                                    "Managed Lane Delay (hr)", "Total Delay (hr)"},
                  "metric rows do not follow the GP/ML/Total x VMT/VHT/Delay layout");
    return checks.outcome(fmt::format("VHT {:.3f}, VMT {:.0f}, delay {:.3f}; totals decompose exactly; 9 table rows",
                                      m.total.vht, m.total.vmt, m.total.delay));
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Runs the command line tool twice per command and compares every exported file.
Outcome determinism() {
    Checks checks;
    namespace fs = std::filesystem;
    const fs::path work = fs::temp_directory_path() / "mlsim_acceptance_determinism";
    fs::remove_all(work);
    fs::create_directories(work);
    const std::string cli = MLSIM_CLI, data = MLSIM_DATA_DIR;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"simulate", fmt::format("simulate \"{}/gated.json\"", data)},
        {"calibrate", fmt::format("calibrate \"{}/corridor.json\" --targets \"{}/corridor_targets.json\"", data, data)},
    };
    std::size_t compared = 0;
    for (const auto& [name, args] : commands) {
        for (const char* run : {"a", "b"}) {
            const fs::path dir = work / fmt::format("{}_{}", name, run);
            const std::string command = fmt::format("\"{}\" {} --out \"{}\" > \"{}.log\" 2>&1", cli, args, dir.string(), dir.string());
            checks.expect(std::system(command.c_str()) == 0, fmt::format("{} run {} failed", name, run));
        }
        const fs::path a = work / (name + "_a"), b = work / (name + "_b");
        if (!fs::exists(a)) continue;
        std::size_t files = 0;
        for (const auto& entry : fs::directory_iterator(a)) {
            ++files;
            const fs::path other = b / entry.path().filename();
            checks.expect(fs::exists(other) && slurp(entry.path()) == slurp(other),
                          fmt::format("{}: {} differs between runs", name, entry.path().filename().string()));
        }
        checks.expect(files >= 7, fmt::format("{}: only {} files exported", name, files));
        compared += files;
    }
    fs::remove_all(work);
    return checks.outcome(fmt::format("{} exported files byte-identical across repeated simulate and calibrate runs", compared));
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"conservation", conservation},   {"CTM oracle", ctm_oracle},     {"hysteresis", hysteresis},
        {"friction", friction},           {"split solver", split_solver}, {"offramp bisection", bisection},
        {"round-trip calibration", round_trip}, {"metrics", metrics},     {"determinism", determinism},
    };
    int failed = 0;
    for (std::size_t n = 0; n < criteria.size(); ++n) {
        Outcome o;
        try {
            o = criteria[n].second();
        } catch (const std::exception& e) {
            o = {false, fmt::format("threw: {}", e.what())};
        }
        failed += !o.pass;
        fmt::print("[{}] {} {}: {}\n", o.pass ? "PASS" : "FAIL", n + 1, criteria[n].first, o.detail);
        std::fflush(stdout);
    }
    fmt::print("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
