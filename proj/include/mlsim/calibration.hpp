#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mlsim/metrics.hpp"
#include "mlsim/node_model.hpp"
#include "mlsim/scenario.hpp"
#include "mlsim/simulation.hpp"

namespace mlsim {

/// Node-level problem for one offramp over one interval: the node inputs seen
/// at each step (completed splits, veh/step) and which split rows beta moves.
struct OfframpProblem {
    std::vector<NodeInputs> snapshots;
    std::size_t offramp = 0;         // output index of the offramp at the node
    std::vector<char> controlled;    // per (input, class): row follows beta
    std::vector<char> scalable;      // per (input, output, class): takes the rest of a controlled row
    double target = 0.0;             // mean offramp flow, veh/step
};

struct BetaOptions {
    double tolerance = 1e-6;  // on beta
    std::size_t max_iterations = 60;
};

struct BetaSolution {
    double beta = 0.0;
    bool starved = false;  // even beta = 1 cannot reach the target
    bool clamped = false;  // beta = 0 still overshoots the target
    std::size_t iterations = 0;
};

/// Mean offramp flow minus the target when every controlled row sends a
/// fraction beta to the offramp.
double offramp_residual(const OfframpProblem& problem, double beta);

/// Bisection for beta where the mainline feeds the offramp with all classes.
BetaSolution solve_offramp_beta_full_access(const OfframpProblem& problem, const BetaOptions& options = {});
/// Bisection for beta in a gated network, where destination classes exit
/// regardless of beta.
BetaSolution solve_offramp_beta_gated(const OfframpProblem& problem, const BetaOptions& options = {});

struct CalibrationOptions {
    std::size_t max_outer = 5;
    double tolerance = 0.005;  // relative residual
    double initial_beta = 0.1;
    std::size_t max_inner_passes = 10;
    BetaOptions beta;
};

struct OfframpCalibration {
    std::string link;
    std::vector<double> beta;       // per interval
    std::vector<double> target;     // veh/h
    std::vector<double> simulated;  // veh/h
    std::vector<double> residual;   // simulated - target, veh/h
    std::vector<char> starved;
    std::vector<char> clamped;
};

struct CalibrationReport {
    std::vector<OfframpCalibration> offramps;
    std::vector<double> residual_norms;  // max relative residual after each outer iteration
    std::size_t outer_iterations = 0;
    bool converged = false;
    bool gated = false;
    std::vector<std::string> warnings;  // targets the offramp cannot carry
    Scenario calibrated;  // input scenario with the fitted split series
    SimOutput output;     // forward run with the fitted splits
    MetricsSummary metrics;
    std::vector<Bottleneck> bottlenecks;
};

/// Fits offramp split ratios so simulated offramp flows match the targets.
/// Throws Error on interval mismatch, unknown offramps, or a node model that
/// breaks the monotonicity the bisection relies on.
CalibrationReport run_calibration_loop(const Scenario& scenario, const CalibrationTargets& targets,
                                       const CalibrationOptions& options = {});

std::string report_json(const CalibrationReport& report);
std::string report_text(const CalibrationReport& report);

}  // namespace mlsim
