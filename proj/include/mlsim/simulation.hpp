#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlsim/link_model.hpp"
#include "mlsim/network.hpp"
#include "mlsim/node_model.hpp"
#include "mlsim/scenario.hpp"

namespace mlsim {

/// Densities of every link and class (veh/mi per lane group) plus link memory.
struct SimState {
    std::size_t classes = 0;
    std::vector<double> density;  // link-major, class-minor
    std::vector<Metastate> metastate;
    std::vector<double> last_speed;

    std::span<double> link(std::size_t l) { return {density.data() + l * classes, classes}; }
    std::span<const double> link(std::size_t l) const { return {density.data() + l * classes, classes}; }
    double link_total(std::size_t l) const;

    bool operator==(const SimState&) const = default;
};

/// Recorded trajectory. Densities and metastates have steps + 1 snapshots;
/// flows (veh/step) and speeds (mph) one entry per step.
struct SimOutput {
    double dt_hours = 0.0;
    std::size_t steps = 0;
    std::size_t interval_steps = 1;
    std::size_t links = 0;
    std::size_t classes = 0;

    std::vector<double> density;  // (t, link, class)
    std::vector<double> inflow;   // (t, link, class)
    std::vector<double> outflow;  // (t, link, class)
    std::vector<double> speed;    // (t, link)
    std::vector<Metastate> metastate;
    double clamped_vehicles = 0.0;  // mass added by clamping negative densities

    double density_at(std::size_t t, std::size_t l, std::size_t c) const {
        return density[(t * links + l) * classes + c];
    }
    double total_density(std::size_t t, std::size_t l) const;
    double total_inflow(std::size_t t, std::size_t l) const;
    double total_outflow(std::size_t t, std::size_t l) const;
    double speed_at(std::size_t t, std::size_t l) const { return speed[t * links + l]; }
    Metastate metastate_at(std::size_t t, std::size_t l) const { return metastate[t * links + l]; }

    /// Mean inflow (veh/h) of a link over one interval of the grid.
    double interval_mean_inflow(std::size_t link, std::size_t interval) const;
    std::size_t intervals() const;
};

/// Moves managed-eligible vehicles of a managed link entering a gate into the
/// destination classes of the next segment. Destination mass left over from
/// the previous segment is returned to the eligible class first.
/// `destination_by_slot[k]` is the class index exiting at the (k+1)-th offramp.
/// Throws Error("invalid_switching_shares") if shares are negative or sum above 1.
void apply_gate_class_switching(std::span<double> density, std::size_t eligible,
                                std::span<const std::size_t> destination_by_slot, std::span<const double> shares);

/// Gets a look at node-level quantities during a step.
class StepObserver {
public:
    virtual ~StepObserver() = default;
    /// Called after split completion and flow computation at an observed node.
    /// Demands, supplies and flows are in veh/step.
    virtual void on_node(std::size_t t, std::size_t node, const NodeInputs& inputs, const SplitMatrix& splits,
                         const NodeFlows& flows) = 0;
};

/// Compiled, ready-to-run form of a scenario.
class Simulator {
public:
    explicit Simulator(const Scenario& scenario);

    const Network& network() const { return network_; }
    const SimConfig& config() const { return config_; }
    std::size_t steps() const { return config_.steps; }
    std::size_t interval_steps() const { return interval_steps_; }

    SimState initial_state() const;

    /// Advances `state` from t to t + 1. When `record` is given the step's
    /// flows, speeds and the new snapshot are written into it.
    void step(SimState& state, std::size_t t, SimOutput* record = nullptr);

    /// Steps [from, to) starting at `state`.
    void advance(SimState& state, std::size_t from, std::size_t to, SimOutput* record = nullptr);

    SimOutput run();
    SimOutput make_output() const;

    /// Node flows (veh/step) of the most recent step.
    const std::vector<NodeFlows>& last_node_flows() const { return node_flows_; }

    /// Current offramp split series (beta per interval) and overrides.
    const IntervalSeries& offramp_split(std::size_t link) const { return offramp_beta_[link]; }
    void set_offramp_split(std::size_t link, IntervalSeries series);
    void set_offramp_split(std::size_t link, std::size_t interval, double beta);

    void set_observer(StepObserver* observer, std::vector<std::size_t> nodes);

    /// Node upstream of an offramp link; the node whose split ratio that offramp's beta controls.
    std::size_t offramp_node(std::size_t link) const;
    bool gated() const { return has_gates_; }

    /// Default class-switching shares of a gate for the given interval.
    std::vector<double> gate_shares(std::size_t gate_node, std::size_t interval) const;

    /// How the simulator fills split ratio (i, j, c) of a node each step:
    /// a fixed value, the beta series of an offramp link, or left to the solver.
    enum class Rule : unsigned char { fixed, offramp, undefined };
    struct Entry {
        Rule rule = Rule::undefined;
        double value = 0.0;
        std::size_t offramp = 0;
    };
private:
    struct CompiledNode {
        std::vector<std::size_t> inputs;
        std::vector<std::size_t> outputs;
        std::vector<Entry> entries;  // (i, j, c)
        NodeInputs work;
    };

public:
    const Entry& split_entry(std::size_t node, std::size_t i, std::size_t j, std::size_t c) const {
        const CompiledNode& cn = nodes_[node];
        return cn.entries[(i * cn.outputs.size() + j) * classes_ + c];
    }
    /// Link indices of a node's inputs and outputs, in node order.
    const std::vector<std::size_t>& node_inputs(std::size_t node) const { return nodes_[node].inputs; }
    const std::vector<std::size_t>& node_outputs(std::size_t node) const { return nodes_[node].outputs; }

private:
    struct Segment {
        std::vector<std::size_t> offramps;
        std::vector<double> override_shares;
    };

    void compile_nodes(const Scenario& scenario);
    void compile_demands(const Scenario& scenario);
    void compile_gates(const Scenario& scenario);

    Network network_;
    SimConfig config_;
    double dt_ = 0.0;
    std::size_t interval_steps_ = 1;
    std::size_t classes_ = 0;
    std::optional<std::size_t> eligible_;
    std::vector<std::size_t> destination_by_slot_;

    std::vector<FundamentalDiagram> group_fd_;
    std::vector<CompiledNode> nodes_;
    std::vector<std::vector<IntervalSeries>> demand_;  // origin link -> class -> veh/h
    std::vector<IntervalSeries> offramp_beta_;        // per link; used for offramps
    std::vector<double> initial_density_;

    bool has_gates_ = false;
    std::vector<std::optional<Segment>> segment_of_gate_;  // per node
    std::vector<int> offramp_slot_;                        // per link, 1-based; 0 outside segments
    std::vector<std::size_t> switching_links_;  // managed links entering a gate

    StepObserver* observer_ = nullptr;
    std::vector<char> observed_;

    // per-step scratch
    std::vector<double> send_;    // veh/h per (link, class)
    std::vector<double> receive_; // veh/h per link
    std::vector<double> speed_eff_;
    std::vector<double> cap_eff_;
    std::vector<double> in_;      // veh/step per (link, class)
    std::vector<double> out_;
    std::vector<NodeFlows> node_flows_;
};

}  // namespace mlsim
