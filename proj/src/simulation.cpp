#include "mlsim/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include <fmt/format.h>

namespace mlsim {

namespace {
constexpr double jam_slack = 1e-6;
constexpr double share_slack = 1e-12;

std::string first_errors(const ValidationReport& report) {
    std::string text;
    std::size_t shown = 0;
    for (const auto& issue : report.issues) {
        if (issue.severity != Severity::error) continue;
        if (shown++ == 3) {
            text += "; ...";
            break;
        }
        if (!text.empty()) text += "; ";
        text += fmt::format("{}: {}", issue.subject, issue.message);
    }
    return text;
}
}  // namespace

double SimState::link_total(std::size_t l) const { return total(link(l)); }

double SimOutput::total_density(std::size_t t, std::size_t l) const {
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += density[(t * links + l) * classes + c];
    return sum;
}

double SimOutput::total_inflow(std::size_t t, std::size_t l) const {
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += inflow[(t * links + l) * classes + c];
    return sum;
}

double SimOutput::total_outflow(std::size_t t, std::size_t l) const {
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += outflow[(t * links + l) * classes + c];
    return sum;
}

std::size_t SimOutput::intervals() const { return (steps + interval_steps - 1) / interval_steps; }

double SimOutput::interval_mean_inflow(std::size_t link, std::size_t interval) const {
    const std::size_t begin = interval * interval_steps;
    const std::size_t end = std::min(steps, begin + interval_steps);
    if (begin >= end) return 0.0;
    double sum = 0.0;
    for (std::size_t t = begin; t < end; ++t) sum += total_inflow(t, link);
    return sum / (static_cast<double>(end - begin) * dt_hours);
}

void apply_gate_class_switching(std::span<double> density, std::size_t eligible,
                                std::span<const std::size_t> destination_by_slot, std::span<const double> shares) {
    double share_sum = 0.0;
    for (double s : shares) {
        if (!(s >= 0.0)) throw Error("invalid_switching_shares", "invalid switching shares");
        share_sum += s;
    }
    if (share_sum > 1.0 + share_slack || shares.size() > destination_by_slot.size())
        throw Error("invalid_switching_shares", "invalid switching shares");

    double pool = density[eligible];
    for (std::size_t c : destination_by_slot) {
        pool += density[c];
        density[c] = 0.0;
    }
    double assigned = 0.0;
    for (std::size_t k = 0; k < shares.size(); ++k) {
        const double part = shares[k] * pool;
        density[destination_by_slot[k]] = part;
        assigned += part;
    }
    density[eligible] = pool - assigned;
}

Simulator::Simulator(const Scenario& scenario) : network_(scenario.network), config_(scenario.config) {
    if (auto report = validate_network(network_); !report.ok())
        throw Error("invalid_network", fmt::format("invalid network: {}", first_errors(report)));
    dt_ = config_.dt_hours();
    if (auto report = check_cfl(network_, dt_); !report.ok())
        throw Error("cfl_violation", fmt::format("time step too large: {}", first_errors(report)));
    interval_steps_ = config_.interval_steps();

    classes_ = network_.classes().size();
    eligible_ = network_.eligible_class();
    for (const auto& link : network_.links()) group_fd_.push_back(link.group_fd());

    offramp_beta_.assign(network_.links().size(), IntervalSeries{});
    for (const auto& [id, series] : scenario.offramp_splits) {
        auto l = network_.link_index(id);
        if (!l) throw Error("unknown_link", fmt::format("offramp split refers to unknown link '{}'", id));
        offramp_beta_[*l] = series;
    }

    compile_gates(scenario);
    compile_nodes(scenario);
    compile_demands(scenario);

    const std::size_t n_links = network_.links().size();
    initial_density_.assign(n_links * classes_, 0.0);
    for (const auto& init : scenario.initial_densities) {
        auto l = network_.link_index(init.link);
        auto c = network_.class_index(init.vehicle_class);
        if (!l || !c)
            throw Error("unknown_reference",
                        fmt::format("initial density refers to unknown link/class '{}'/'{}'", init.link,
                                    init.vehicle_class));
        initial_density_[*l * classes_ + *c] = init.value * network_.links()[*l].lanes;
    }

    send_.assign(n_links * classes_, 0.0);
    receive_.assign(n_links, 0.0);
    speed_eff_.assign(n_links, 0.0);
    cap_eff_.assign(n_links, 0.0);
    in_.assign(n_links * classes_, 0.0);
    out_.assign(n_links * classes_, 0.0);
    node_flows_.resize(nodes_.size());
    observed_.assign(nodes_.size(), 0);
}

void Simulator::compile_gates(const Scenario& scenario) {
    const auto& nodes = network_.nodes();
    segment_of_gate_.assign(nodes.size(), std::nullopt);
    offramp_slot_.assign(network_.links().size(), 0);
    has_gates_ = std::any_of(nodes.begin(), nodes.end(), [](const Node& n) { return n.is_gate; });
    if (!has_gates_) return;

    std::map<int, std::size_t> by_slot;
    for (std::size_t c : network_.destination_classes()) by_slot[network_.classes()[c].slot] = c;
    for (int slot = 1; by_slot.count(slot); ++slot) destination_by_slot_.push_back(by_slot[slot]);

    const GateSegments segments = gate_segments(network_);
    if (required_destination_classes(segments) > destination_by_slot_.size())
        throw Error("missing_destination_classes",
                    fmt::format("gated network needs {} destination classes, found {}",
                                required_destination_classes(segments), destination_by_slot_.size()));

    for (const auto& [gate_id, offramps] : segments) {
        const std::size_t g = *network_.node_index(gate_id);
        Segment seg;
        int slot = 0;
        for (const auto& id : offramps) {
            const std::size_t l = *network_.link_index(id);
            seg.offramps.push_back(l);
            offramp_slot_[l] = ++slot;
        }
        if (auto it = scenario.gate_shares.find(gate_id); it != scenario.gate_shares.end())
            seg.override_shares = it->second;
        segment_of_gate_[g] = std::move(seg);
    }
    for (const auto& [gate_id, shares] : scenario.gate_shares)
        if (!network_.node_index(gate_id) || !segment_of_gate_[*network_.node_index(gate_id)])
            throw Error("unknown_gate", fmt::format("gate shares given for '{}', which starts no gate segment", gate_id));

    for (std::size_t n = 0; n < nodes.size(); ++n) {
        if (!nodes[n].is_gate) continue;
        for (const auto& id : nodes[n].inputs) {
            const std::size_t l = *network_.link_index(id);
            if (network_.links()[l].lane_group == LaneGroup::managed) switching_links_.push_back(l);
        }
    }
}

void Simulator::compile_nodes(const Scenario&) {
    const auto& links = network_.links();
    const auto& classes = network_.classes();
    nodes_.clear();

    for (const Node& node : network_.nodes()) {
        CompiledNode cn;
        for (const auto& id : node.inputs) cn.inputs.push_back(*network_.link_index(id));
        for (const auto& id : node.outputs) cn.outputs.push_back(*network_.link_index(id));
        const std::size_t m = cn.inputs.size(), n = cn.outputs.size();
        cn.work = NodeInputs(m, n, classes_);

        if (node.priorities.empty()) {
            double sum = 0.0;
            for (std::size_t i = 0; i < m; ++i) sum += group_fd_[cn.inputs[i]].capacity;
            for (std::size_t i = 0; i < m; ++i) cn.work.priorities[i] = group_fd_[cn.inputs[i]].capacity / sum;
        } else {
            cn.work.priorities = node.priorities;
        }
        auto pos = [](const std::vector<std::string>& ids, const std::string& id) {
            return static_cast<std::size_t>(std::find(ids.begin(), ids.end(), id) - ids.begin());
        };
        for (const auto& r : node.restrictions)
            cn.work.eta(pos(node.inputs, r.input), pos(node.outputs, r.restricting), pos(node.outputs, r.restricted)) =
                r.eta;

        std::map<std::tuple<std::size_t, std::size_t, std::size_t>, double> known;
        for (const auto& s : node.known_splits)
            known[{pos(node.inputs, s.input), pos(node.outputs, s.output), *network_.class_index(s.vehicle_class)}] =
                s.value;

        cn.entries.resize(m * n * classes_);
        for (std::size_t i = 0; i < m; ++i) {
            const Link& in = links[cn.inputs[i]];
            for (std::size_t j = 0; j < n; ++j) {
                const Link& out = links[cn.outputs[j]];
                for (std::size_t c = 0; c < classes_; ++c) {
                    Entry& e = cn.entries[(i * n + j) * classes_ + c];
                    const ClassKind kind = classes[c].kind;
                    if (auto it = known.find({i, j, c}); it != known.end()) {
                        e = {Rule::fixed, it->second, 0};
                    } else if (out.lane_group == LaneGroup::offramp) {
                        if (kind == ClassKind::destination)
                            e = {Rule::fixed, classes[c].slot == offramp_slot_[cn.outputs[j]] ? 1.0 : 0.0, 0};
                        else if (in.lane_group == LaneGroup::onramp)
                            e = {Rule::fixed, 0.0, 0};
                        else
                            e = {Rule::offramp, 0.0, cn.outputs[j]};
                    } else if (out.lane_group == LaneGroup::managed && kind != ClassKind::eligible) {
                        e = {Rule::fixed, 0.0, 0};
                    } else {
                        e = {Rule::undefined, 0.0, 0};
                    }
                }
            }
        }
        nodes_.push_back(std::move(cn));
    }
}

void Simulator::compile_demands(const Scenario& scenario) {
    const auto& classes = network_.classes();
    demand_.assign(network_.links().size(), {});
    std::optional<std::size_t> gp_only;
    for (std::size_t c = 0; c < classes_; ++c)
        if (classes[c].kind == ClassKind::gp_only) {
            gp_only = c;
            break;
        }

    for (const auto& profile : scenario.demands) {
        auto l = network_.link_index(profile.link);
        if (!l || network_.links()[*l].role != LinkRole::origin)
            throw Error("invalid_demand", fmt::format("demand given for '{}', which is not an origin link", profile.link));
        auto& series = demand_[*l];
        series.assign(classes_, IntervalSeries{});
        if (!profile.per_class.empty()) {
            for (const auto& [name, s] : profile.per_class) {
                auto c = network_.class_index(name);
                if (!c) throw Error("unknown_class", fmt::format("demand refers to unknown class '{}'", name));
                series[*c] = s;
            }
            continue;
        }
        const double fraction = profile.eligible_fraction.value_or(scenario.eligible_fraction);
        if (eligible_ && gp_only) {
            IntervalSeries eligible = profile.total, rest = profile.total;
            for (double& v : eligible.values) v *= fraction;
            for (double& v : rest.values) v *= 1.0 - fraction;
            series[*eligible_] = std::move(eligible);
            series[*gp_only] = std::move(rest);
        } else if (eligible_) {
            series[*eligible_] = profile.total;
        } else if (gp_only) {
            series[*gp_only] = profile.total;
        }
    }
}

SimState Simulator::initial_state() const {
    const std::size_t n_links = network_.links().size();
    SimState s;
    s.classes = classes_;
    s.density = initial_density_;
    s.metastate.assign(n_links, Metastate::uncongested);
    s.last_speed.assign(n_links, 0.0);
    for (std::size_t l = 0; l < n_links; ++l) {
        s.last_speed[l] = group_fd_[l].free_flow_speed;
        if (network_.links()[l].role != LinkRole::origin)
            s.metastate[l] = initial_metastate(s.link_total(l), group_fd_[l]);
    }
    return s;
}

SimOutput Simulator::make_output() const {
    SimOutput out;
    out.dt_hours = dt_;
    out.steps = config_.steps;
    out.interval_steps = interval_steps_;
    out.links = network_.links().size();
    out.classes = classes_;
    out.density.assign((out.steps + 1) * out.links * classes_, 0.0);
    out.inflow.assign(out.steps * out.links * classes_, 0.0);
    out.outflow.assign(out.steps * out.links * classes_, 0.0);
    out.speed.assign(out.steps * out.links, 0.0);
    out.metastate.assign((out.steps + 1) * out.links, Metastate::uncongested);
    return out;
}

void Simulator::set_offramp_split(std::size_t link, IntervalSeries series) { offramp_beta_[link] = std::move(series); }

void Simulator::set_offramp_split(std::size_t link, std::size_t interval, double beta) {
    auto& values = offramp_beta_[link].values;
    if (values.size() <= interval) values.resize(interval + 1, values.empty() ? 0.0 : values.back());
    values[interval] = beta;
}

void Simulator::set_observer(StepObserver* observer, std::vector<std::size_t> nodes) {
    observer_ = observer;
    observed_.assign(nodes_.size(), 0);
    for (std::size_t n : nodes) observed_[n] = 1;
}

std::size_t Simulator::offramp_node(std::size_t link) const {
    auto n = network_.upstream_node(link);
    if (!n) throw Error("invalid_offramp", fmt::format("offramp '{}' has no upstream node", network_.links()[link].id));
    return *n;
}

std::vector<double> Simulator::gate_shares(std::size_t gate_node, std::size_t interval) const {
    const auto& seg = segment_of_gate_[gate_node];
    if (!seg) return {};
    if (!seg->override_shares.empty()) return seg->override_shares;
    std::vector<double> shares;
    double staying = 1.0;
    for (std::size_t l : seg->offramps) {
        const double beta = offramp_beta_[l].at(interval);
        shares.push_back(staying * beta);
        staying *= 1.0 - beta;
    }
    return shares;
}

void Simulator::step(SimState& state, std::size_t t, SimOutput* record) {
    const auto& links = network_.links();
    const std::size_t n_links = links.size();
    const std::size_t interval = t / interval_steps_;
    const std::size_t C = classes_;

    // Control inputs: friction on managed links, class switching at gates.
    for (std::size_t l = 0; l < n_links; ++l) {
        speed_eff_[l] = group_fd_[l].free_flow_speed;
        cap_eff_[l] = group_fd_[l].capacity;
        const Link& link = links[l];
        if (config_.enable_friction && link.lane_group == LaneGroup::managed && link.gp_partner) {
            const auto partner = *network_.link_index(*link.gp_partner);
            const auto eff = apply_friction(group_fd_[l], state.last_speed[partner], link.friction);
            speed_eff_[l] = eff.speed;
            cap_eff_[l] = eff.capacity;
        }
    }
    if (eligible_) {
        for (std::size_t l : switching_links_) {
            const auto shares = gate_shares(*network_.downstream_node(l), interval);
            apply_gate_class_switching(state.link(l), *eligible_, destination_by_slot_, shares);
        }
    }

    // Demands and supplies, veh/step.
    for (std::size_t l = 0; l < n_links; ++l) {
        std::span<double> send(send_.data() + l * C, C);
        if (links[l].role == LinkRole::origin) {
            const auto rho = state.link(l);
            for (std::size_t c = 0; c < C; ++c) {
                const double arrivals = demand_[l].empty() ? 0.0 : demand_[l][c].at(interval) * dt_;
                send[c] = rho[c] * links[l].length + arrivals;
            }
            receive_[l] = 0.0;
        } else {
            compute_demand(state.link(l), speed_eff_[l], cap_eff_[l], send);
            for (double& s : send) s *= dt_;
            receive_[l] = compute_supply(state.link_total(l), state.metastate[l], group_fd_[l]) * dt_;
        }
    }

    // Split completion and node flows.
    std::fill(in_.begin(), in_.end(), 0.0);
    std::fill(out_.begin(), out_.end(), 0.0);
    for (std::size_t n = 0; n < nodes_.size(); ++n) {
        CompiledNode& cn = nodes_[n];
        NodeInputs& w = cn.work;
        const std::size_t M = cn.inputs.size(), N = cn.outputs.size();
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t c = 0; c < C; ++c) w.demand(i, c) = send_[cn.inputs[i] * C + c];
        for (std::size_t j = 0; j < N; ++j) w.supplies[j] = receive_[cn.outputs[j]];

        bool complete = true;
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j)
                for (std::size_t c = 0; c < C; ++c) {
                    const Entry& e = cn.entries[(i * N + j) * C + c];
                    switch (e.rule) {
                    case Rule::fixed: w.splits.set(i, j, c, e.value); break;
                    case Rule::offramp: w.splits.set(i, j, c, offramp_beta_[e.offramp].at(interval)); break;
                    case Rule::undefined:
                        w.splits.clear(i, j, c);
                        complete = false;
                        break;
                    }
                }
        if (!complete) w.splits = solve_undefined_split_ratios(w);

        NodeFlows& flows = node_flows_[n];
        compute_node_flows(w, flows);
        if (observer_ && observed_[n]) observer_->on_node(t, n, w, w.splits, flows);

        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j)
                for (std::size_t c = 0; c < C; ++c) {
                    const double f = flows(i, j, c);
                    out_[cn.inputs[i] * C + c] += f;
                    in_[cn.outputs[j] * C + c] += f;
                }
    }

    // State update.
    for (std::size_t l = 0; l < n_links; ++l) {
        const Link& link = links[l];
        if (link.role == LinkRole::origin)
            for (std::size_t c = 0; c < C; ++c) in_[l * C + c] = demand_[l].empty() ? 0.0 : demand_[l][c].at(interval) * dt_;
        if (link.role == LinkRole::destination)
            for (std::size_t c = 0; c < C; ++c) out_[l * C + c] = send_[l * C + c];

        double outflow = 0.0;
        for (std::size_t c = 0; c < C; ++c) outflow += out_[l * C + c];
        const double before = state.link_total(l);
        const double speed = link.role == LinkRole::origin
                                 ? group_fd_[l].free_flow_speed
                                 : link_speed(outflow / dt_, before, group_fd_[l].free_flow_speed);

        auto rho = state.link(l);
        for (std::size_t c = 0; c < C; ++c) {
            double next = rho[c] + (in_[l * C + c] - out_[l * C + c]) / link.length;
            if (next < 0.0) {
                if (record) record->clamped_vehicles += -next * link.length;
                next = 0.0;
            }
            rho[c] = next;
        }
        state.last_speed[l] = speed;
        if (link.role != LinkRole::origin) {
            const double after = state.link_total(l);
            if (after > group_fd_[l].jam_density + jam_slack)
                throw Error("cfl_violation",
                            fmt::format("density {} exceeds jam density {} on link '{}' at step {}", after,
                                        group_fd_[l].jam_density, link.id, t));
            state.metastate[l] = update_metastate(state.metastate[l], after, group_fd_[l]);
        }

        if (record) {
            const std::size_t base = (t * n_links + l) * C;
            std::copy_n(in_.begin() + static_cast<std::ptrdiff_t>(l * C), C, record->inflow.begin() + static_cast<std::ptrdiff_t>(base));
            std::copy_n(out_.begin() + static_cast<std::ptrdiff_t>(l * C), C, record->outflow.begin() + static_cast<std::ptrdiff_t>(base));
            record->speed[t * n_links + l] = speed;
            std::copy(rho.begin(), rho.end(), record->density.begin() + static_cast<std::ptrdiff_t>(((t + 1) * n_links + l) * C));
            record->metastate[(t + 1) * n_links + l] = state.metastate[l];
        }
    }
}

void Simulator::advance(SimState& state, std::size_t from, std::size_t to, SimOutput* record) {
    for (std::size_t t = from; t < to; ++t) step(state, t, record);
}

SimOutput Simulator::run() {
    SimOutput out = make_output();
    SimState state = initial_state();
    std::copy(state.density.begin(), state.density.end(), out.density.begin());
    std::copy(state.metastate.begin(), state.metastate.end(), out.metastate.begin());
    advance(state, 0, config_.steps, &out);
    return out;
}

}  // namespace mlsim
