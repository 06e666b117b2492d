// Command line front end: simulate, calibrate, validate, metrics.
#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mlsim/calibration.hpp"
#include "mlsim/export.hpp"
#include "mlsim/metrics.hpp"
#include "mlsim/scenario.hpp"
#include "mlsim/simulation.hpp"

namespace {

using namespace mlsim;

void print_metrics(const MetricsSummary& summary) {
    for (const auto& row : metric_rows(summary)) fmt::print("{:<24} {:.2f}\n", row.name, row.value);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io_error", fmt::format("{}: cannot write file", path.string()));
    out << text;
}

// Offramp rows only exist for offramps with measured flows.
std::vector<OfframpTable> compared_offramps(const Network& net, const SimOutput& output,
                                            const CalibrationTargets& targets) {
    std::vector<OfframpTable> rows;
    const auto simulated = offramp_tables(net, output);
    for (const auto& t : targets.offramps) {
        const auto it = std::find_if(simulated.begin(), simulated.end(), [&](const auto& r) { return r.link == t.link; });
        if (it == simulated.end()) throw Error("unknown_offramp", fmt::format("'{}' is not an offramp link", t.link));
        OfframpTable row = *it;
        row.target = t.flows.values;
        rows.push_back(std::move(row));
    }
    return rows;
}

int simulate(const std::string& scenario_path, const std::string& targets_path, const std::string& out_dir) {
    const Scenario scenario = load_scenario(scenario_path);
    CalibrationTargets targets;
    if (!targets_path.empty()) targets = load_targets(targets_path);
    Simulator sim(scenario);
    const SimOutput output = sim.run();
    const MetricsSummary summary = compute_metrics(output, sim.network());
    write_contours(out_dir, sim.network(), output);
    write_offramp_table(out_dir, compared_offramps(sim.network(), output, targets),
                        scenario.config.interval_minutes * 60.0);
    write_metrics(out_dir, summary);
    print_metrics(summary);
    return 0;
}

int calibrate(const std::string& scenario_path, const std::string& targets_path, const std::string& out_dir,
              std::size_t max_outer, double tol) {
    const Scenario scenario = load_scenario(scenario_path);
    const CalibrationTargets targets = load_targets(targets_path);
    CalibrationOptions options;
    options.max_outer = max_outer;
    options.tolerance = tol;
    const CalibrationReport report = run_calibration_loop(scenario, targets, options);

    const Network& net = report.calibrated.network;
    write_contours(out_dir, net, report.output);
    std::vector<OfframpTable> rows;
    for (const auto& o : report.offramps) rows.push_back({o.link, o.target, o.simulated});
    write_offramp_table(out_dir, rows, scenario.config.interval_minutes * 60.0);
    write_metrics(out_dir, report.metrics);
    save_scenario(report.calibrated, std::filesystem::path(out_dir) / "calibrated_scenario.json");
    write_text(std::filesystem::path(out_dir) / "calibration_report.json", report_json(report));
    const std::string text = report_text(report);
    write_text(std::filesystem::path(out_dir) / "calibration_report.txt", text);
    fmt::print("{}", text);
    if (!report.converged)
        throw Error("not_converged", fmt::format("residuals above {} after {} outer iterations", tol, report.outer_iterations));
    return 0;
}

int validate(const std::string& scenario_path) {
    const Scenario scenario = load_scenario(scenario_path);
    const ValidationReport report = check_scenario(scenario);
    for (const auto& issue : report.issues)
        fmt::print("{}: {}: {}\n", issue.severity == Severity::error ? "error" : "warning", issue.subject, issue.message);
    fmt::print("ok: {} links, {} nodes, {} classes\n", scenario.network.links().size(), scenario.network.nodes().size(),
               scenario.network.classes().size());
    return 0;
}

int metrics(const std::string& dir) {
    print_metrics(metrics_from_directory(dir));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Freeway corridor simulator with managed lanes and offramp calibration"};
    app.require_subcommand(1);

    std::string scenario, targets, out = "results", dir;
    std::size_t max_outer = 5;
    double tol = 0.005;

    auto* sim = app.add_subcommand("simulate", "run a scenario and export contours and metrics");
    sim->add_option("scenario", scenario, "scenario file")->required();
    sim->add_option("--out", out, "output directory");
    sim->add_option("--targets", targets, "measured offramp flows to compare against");

    auto* cal = app.add_subcommand("calibrate", "fit offramp split ratios to measured flows");
    cal->add_option("scenario", scenario, "scenario file")->required();
    cal->add_option("--targets", targets, "targets file")->required();
    cal->add_option("--out", out, "output directory");
    cal->add_option("--max-outer", max_outer, "outer iteration limit")->check(CLI::PositiveNumber);
    cal->add_option("--tol", tol, "relative residual tolerance")->check(CLI::PositiveNumber);

    auto* val = app.add_subcommand("validate", "check a scenario file");
    val->add_option("scenario", scenario, "scenario file")->required();

    auto* met = app.add_subcommand("metrics", "recompute VMT, VHT and delay from a results directory");
    met->add_option("dir", dir, "results directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::fprintf(stderr, "error: usage: %s\n", e.what());
        return 2;
    }

    try {
        if (*sim) return simulate(scenario, targets, out);
        if (*cal) return calibrate(scenario, targets, out, max_outer, tol);
        if (*val) return validate(scenario);
        if (*met) return metrics(dir);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", e.code().c_str(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", e.what());
        return 1;
    }
    return 1;
}
