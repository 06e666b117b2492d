#include "mlsim/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>
#include <json.hpp>

namespace mlsim {

namespace {

// Rewrites controlled rows of `work` so that each sends `beta` to the offramp
// and spreads the remainder over the solver-filled entries in the proportions
// they had before.
void apply_beta(const OfframpProblem& p, NodeInputs& work, double beta) {
    const std::size_t M = work.inputs(), N = work.outputs(), C = work.classes();
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t c = 0; c < C; ++c) {
            if (!p.controlled[i * C + c]) continue;
            double fixed = 0.0, previous = 0.0;
            std::size_t free_entries = 0;
            for (std::size_t j = 0; j < N; ++j) {
                if (j == p.offramp) continue;
                if (p.scalable[(i * N + j) * C + c]) {
                    previous += work.splits(i, j, c);
                    ++free_entries;
                } else {
                    fixed += work.splits(i, j, c);
                }
            }
            const double b = std::clamp(beta, 0.0, std::max(0.0, 1.0 - fixed));
            const double rest = free_entries ? std::max(0.0, 1.0 - fixed - b) : 0.0;
            work.splits.set(i, p.offramp, c, free_entries ? b : std::max(0.0, 1.0 - fixed));
            for (std::size_t j = 0; j < N; ++j) {
                if (j == p.offramp || !p.scalable[(i * N + j) * C + c]) continue;
                const double share = previous > 1e-12 ? work.splits(i, j, c) / previous : 1.0 / static_cast<double>(free_entries);
                work.splits.set(i, j, c, rest * share);
            }
        }
}

double mean_controlled_demand(const OfframpProblem& p) {
    if (p.snapshots.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& s : p.snapshots)
        for (std::size_t i = 0; i < s.inputs(); ++i)
            for (std::size_t c = 0; c < s.classes(); ++c)
                if (p.controlled[i * s.classes() + c]) sum += s.demand(i, c);
    return sum / static_cast<double>(p.snapshots.size());
}

// Converges on the smallest beta that reaches the target; when the offramp
// supply binds, psi is flat at zero over a range of beta.
BetaSolution bisect(const OfframpProblem& p, double lo, bool gated, const BetaOptions& options) {
    const double slack = 1e-9 * (1.0 + p.target);
    BetaSolution out;
    double psi_lo = offramp_residual(p, lo);
    if (psi_lo >= -slack) {
        out.beta = lo;
        out.clamped = gated && psi_lo > slack;
        return out;
    }
    double hi = 1.0;
    double psi_hi = offramp_residual(p, hi);
    if (psi_hi < -slack) {
        out.beta = 1.0;
        out.starved = true;
        return out;
    }
    while (out.iterations < options.max_iterations && hi - lo > options.tolerance) {
        ++out.iterations;
        const double mid = 0.5 * (lo + hi);
        const double psi = offramp_residual(p, mid);
        const double margin = 1e-9 * (1.0 + std::abs(psi_lo) + std::abs(psi_hi));
        if (psi < psi_lo - margin || psi > psi_hi + margin)
            throw Error("non_monotone", "node model violates monotonicity assumption");
        if (psi < -slack) {
            lo = mid;
            psi_lo = psi;
        } else {
            hi = mid;
            psi_hi = psi;
        }
    }
    out.beta = 0.5 * (lo + hi);
    return out;
}

class SnapshotRecorder : public StepObserver {
public:
    void on_node(std::size_t, std::size_t node, const NodeInputs& inputs, const SplitMatrix&, const NodeFlows&) override {
        snapshots[node].push_back(inputs);
    }
    std::map<std::size_t, std::vector<NodeInputs>> snapshots;
};

struct TargetInfo {
    std::size_t link = 0;
    std::size_t node = 0;
    std::size_t output = 0;
    std::vector<char> controlled;
    std::vector<char> scalable;
    const IntervalSeries* flows = nullptr;
};

}  // namespace

double offramp_residual(const OfframpProblem& p, double beta) {
    if (p.snapshots.empty()) return -p.target;
    thread_local NodeInputs work;
    thread_local NodeFlows flows;
    double sum = 0.0;
    for (const auto& snapshot : p.snapshots) {
        work = snapshot;
        apply_beta(p, work, beta);
        compute_node_flows(work, flows);
        for (std::size_t i = 0; i < flows.inputs(); ++i)
            for (std::size_t c = 0; c < flows.classes(); ++c) sum += flows(i, p.offramp, c);
    }
    return sum / static_cast<double>(p.snapshots.size()) - p.target;
}

BetaSolution solve_offramp_beta_full_access(const OfframpProblem& p, const BetaOptions& options) {
    const double supply = mean_controlled_demand(p);
    if (p.target > 0.0 && supply <= p.target) {
        BetaSolution out;
        out.beta = 1.0;
        out.starved = offramp_residual(p, 1.0) < -1e-9 * (1.0 + p.target);
        return out;
    }
    const double lo = supply > 0.0 ? std::clamp(p.target / supply, 0.0, 1.0) : 0.0;
    return bisect(p, lo, false, options);
}

BetaSolution solve_offramp_beta_gated(const OfframpProblem& p, const BetaOptions& options) {
    return bisect(p, 0.0, true, options);
}

CalibrationReport run_calibration_loop(const Scenario& scenario, const CalibrationTargets& targets,
                                       const CalibrationOptions& options) {
    if (std::abs(targets.interval_minutes - scenario.config.interval_minutes) > 1e-9)
        throw Error("interval_mismatch", fmt::format("targets use {} min intervals, scenario uses {} min",
                                                     targets.interval_minutes, scenario.config.interval_minutes));
    Simulator sim(scenario);
    const Network& net = sim.network();
    const std::size_t C = net.classes().size();
    const std::size_t steps = sim.steps(), per = sim.interval_steps();
    const std::size_t intervals = (steps + per - 1) / per;
    const double dt = sim.config().dt_hours();

    std::vector<TargetInfo> info;
    std::vector<std::size_t> observed;
    for (const auto& t : targets.offramps) {
        auto l = net.link_index(t.link);
        if (!l || net.links()[*l].lane_group != LaneGroup::offramp)
            throw Error("unknown_offramp", fmt::format("target refers to '{}', which is not an offramp link", t.link));
        TargetInfo ti;
        ti.link = *l;
        ti.node = sim.offramp_node(*l);
        ti.flows = &t.flows;
        const auto& ins = sim.node_inputs(ti.node);
        const auto& outs = sim.node_outputs(ti.node);
        ti.output = static_cast<std::size_t>(std::find(outs.begin(), outs.end(), *l) - outs.begin());
        ti.controlled.assign(ins.size() * C, 0);
        ti.scalable.assign(ins.size() * outs.size() * C, 0);
        for (std::size_t i = 0; i < ins.size(); ++i)
            for (std::size_t c = 0; c < C; ++c) {
                const auto& e = sim.split_entry(ti.node, i, ti.output, c);
                ti.controlled[i * C + c] = e.rule == Simulator::Rule::offramp && e.offramp == *l;
                for (std::size_t j = 0; j < outs.size(); ++j)
                    ti.scalable[(i * outs.size() + j) * C + c] =
                        sim.split_entry(ti.node, i, j, c).rule == Simulator::Rule::undefined;
            }
        info.push_back(std::move(ti));
        observed.push_back(info.back().node);
        sim.set_offramp_split(*l, IntervalSeries{std::vector<double>(std::max<std::size_t>(intervals, 1), options.initial_beta)});
    }

    CalibrationReport report;
    report.gated = sim.gated();
    for (const auto& t : info) {
        const double capacity = net.links()[t.link].group_fd().capacity;
        for (std::size_t k = 0; k < std::min(intervals, t.flows->values.size()); ++k)
            if (t.flows->values[k] >= capacity)
                report.warnings.push_back(fmt::format("{}: target {} veh/h in interval {} is not below the offramp capacity {} veh/h",
                                                      net.links()[t.link].id, t.flows->values[k], k, capacity));
    }
    for (const auto& t : info) {
        OfframpCalibration oc;
        oc.link = net.links()[t.link].id;
        oc.starved.assign(intervals, 0);
        oc.clamped.assign(intervals, 0);
        report.offramps.push_back(std::move(oc));
    }

    SnapshotRecorder recorder;
    for (std::size_t outer = 1; outer <= std::max<std::size_t>(options.max_outer, 1); ++outer) {
        try {
        SimState state = sim.initial_state();
        for (std::size_t k = 0; k < intervals; ++k) {
            const std::size_t from = k * per, to = std::min(steps, from + per);
            bool any = false, committed = false;
            for (const auto& t : info) any = any || k < t.flows->values.size();
            if (any) {
                for (std::size_t pass = 0; pass < options.max_inner_passes; ++pass) {
                    SimState trial = state;
                    recorder.snapshots.clear();
                    sim.set_observer(&recorder, observed);
                    sim.advance(trial, from, to);
                    sim.set_observer(nullptr, {});

                    double change = 0.0;
                    for (std::size_t n = 0; n < info.size(); ++n) {
                        const TargetInfo& t = info[n];
                        if (k >= t.flows->values.size()) continue;
                        OfframpProblem p;
                        p.snapshots = recorder.snapshots[t.node];
                        p.offramp = t.output;
                        p.controlled = t.controlled;
                        p.scalable = t.scalable;
                        p.target = t.flows->values[k] * dt;
                        const BetaSolution s = report.gated ? solve_offramp_beta_gated(p, options.beta)
                                                            : solve_offramp_beta_full_access(p, options.beta);
                        const double previous = sim.offramp_split(t.link).at(k);
                        change = std::max(change, std::abs(s.beta - previous));
                        sim.set_offramp_split(t.link, k, s.beta);
                        report.offramps[n].starved[k] = s.starved;
                        report.offramps[n].clamped[k] = s.clamped;
                    }
                    if (change == 0.0) {
                        state = std::move(trial);
                        committed = true;
                        break;
                    }
                    if (change <= options.beta.tolerance) break;
                }
            }
            if (!committed) sim.advance(state, from, to);
        }

            report.output = sim.run();
        } catch (const Error& e) {
            throw Error(e.code(), fmt::format("outer iteration {}: {}", outer, e.what()));
        }
        double norm = 0.0;
        bool ok = true;
        for (std::size_t n = 0; n < info.size(); ++n) {
            const TargetInfo& t = info[n];
            OfframpCalibration& oc = report.offramps[n];
            const std::size_t count = std::min(intervals, t.flows->values.size());
            oc.beta.assign(sim.offramp_split(t.link).values.begin(),
                           sim.offramp_split(t.link).values.begin() + static_cast<std::ptrdiff_t>(intervals));
            oc.target.assign(t.flows->values.begin(), t.flows->values.begin() + static_cast<std::ptrdiff_t>(count));
            oc.simulated.clear();
            oc.residual.clear();
            for (std::size_t k = 0; k < count; ++k) {
                const double simulated = report.output.interval_mean_inflow(t.link, k);
                const double residual = simulated - oc.target[k];
                oc.simulated.push_back(simulated);
                oc.residual.push_back(residual);
                if (oc.starved[k] || oc.clamped[k]) continue;
                if (std::abs(residual) > options.tolerance * oc.target[k] + 1e-9) ok = false;
                if (oc.target[k] > 0) norm = std::max(norm, std::abs(residual) / oc.target[k]);
                else norm = std::max(norm, std::abs(residual));
            }
        }
        report.residual_norms.push_back(norm);
        report.outer_iterations = outer;
        if (ok) {
            report.converged = true;
            break;
        }
    }

    report.calibrated = scenario;
    for (const auto& t : info) report.calibrated.offramp_splits[net.links()[t.link].id] = sim.offramp_split(t.link);
    report.metrics = compute_metrics(report.output, net);
    report.bottlenecks = find_bottlenecks(report.output, net);
    return report;
}

std::string report_json(const CalibrationReport& r) {
    using nlohmann::json;
    json doc;
    doc["converged"] = r.converged;
    doc["outer_iterations"] = r.outer_iterations;
    doc["gated"] = r.gated;
    doc["residual_norms"] = r.residual_norms;
    doc["warnings"] = r.warnings;
    json offramps = json::array();
    for (const auto& o : r.offramps) {
        std::vector<bool> starved(o.starved.begin(), o.starved.end()), clamped(o.clamped.begin(), o.clamped.end());
        offramps.push_back({{"link", o.link},
                            {"beta", o.beta},
                            {"target_vph", o.target},
                            {"simulated_vph", o.simulated},
                            {"residual_vph", o.residual},
                            {"starved", starved},
                            {"clamped", clamped}});
    }
    doc["offramps"] = offramps;
    json metrics = json::object();
    for (const auto& row : metric_rows(r.metrics)) metrics[row.name] = row.value;
    doc["metrics"] = metrics;
    json bottlenecks = json::array();
    for (const auto& b : r.bottlenecks)
        bottlenecks.push_back({{"link", b.link},
                               {"congested_steps", b.congested_steps},
                               {"first_time_s", b.first_time_s},
                               {"last_time_s", b.last_time_s}});
    doc["bottlenecks"] = bottlenecks;
    return doc.dump(2) + "\n";
}

std::string report_text(const CalibrationReport& r) {
    std::string text;
    auto out = std::back_inserter(text);
    fmt::format_to(out, "calibration {} after {} outer iteration(s){}\n", r.converged ? "converged" : "did not converge",
                   r.outer_iterations, r.gated ? " (gated)" : "");
    for (std::size_t i = 0; i < r.residual_norms.size(); ++i)
        fmt::format_to(out, "  iteration {}: max relative residual {:.6g}\n", i + 1, r.residual_norms[i]);

    for (const auto& w : r.warnings) fmt::format_to(out, "  warning: {}\n", w);
    text += "\nofframps\n";
    for (const auto& o : r.offramps) {
        double worst = 0.0;
        std::size_t starved = 0, clamped = 0;
        for (std::size_t k = 0; k < o.residual.size(); ++k) {
            if (o.starved[k] || o.clamped[k]) continue;
            worst = std::max(worst, std::abs(o.residual[k]));
        }
        for (char s : o.starved) starved += s != 0;
        for (char c : o.clamped) clamped += c != 0;
        fmt::format_to(out, "  {:<16} worst residual {:.3f} veh/h, starved intervals {}, clamped intervals {}\n", o.link,
                       worst, starved, clamped);
    }

    text += "\nbottlenecks\n";
    if (r.bottlenecks.empty()) text += "  none\n";
    for (const auto& b : r.bottlenecks)
        fmt::format_to(out, "  {:<16} congested {:.1f} min between t={:.0f}s and t={:.0f}s\n", b.link,
                       static_cast<double>(b.congested_steps) * r.output.dt_hours * 60.0, b.first_time_s, b.last_time_s);

    text += "\nperformance\n";
    for (const auto& row : metric_rows(r.metrics)) fmt::format_to(out, "  {:<24} {:.2f}\n", row.name, row.value);
    return text;
}

}  // namespace mlsim
