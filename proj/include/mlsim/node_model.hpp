#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace mlsim {

/// Split ratios of one node, indexed (input, output, class). Entries may be
/// undefined until the split-ratio solver completes them.
class SplitMatrix {
public:
    SplitMatrix() = default;
    SplitMatrix(std::size_t inputs, std::size_t outputs, std::size_t classes);

    std::size_t inputs() const { return inputs_; }
    std::size_t outputs() const { return outputs_; }
    std::size_t classes() const { return classes_; }

    bool defined(std::size_t i, std::size_t j, std::size_t c) const;
    double operator()(std::size_t i, std::size_t j, std::size_t c) const { return values_[index(i, j, c)]; }
    void set(std::size_t i, std::size_t j, std::size_t c, double value) { values_[index(i, j, c)] = value; }
    void clear(std::size_t i, std::size_t j, std::size_t c);

    bool fully_defined() const;
    /// Sum over outputs of the defined entries of row (i, c).
    double row_sum(std::size_t i, std::size_t c) const;

    bool operator==(const SplitMatrix&) const = default;

private:
    std::size_t index(std::size_t i, std::size_t j, std::size_t c) const { return (i * outputs_ + j) * classes_ + c; }

    std::size_t inputs_ = 0;
    std::size_t outputs_ = 0;
    std::size_t classes_ = 0;
    std::vector<double> values_;  // NaN marks undefined
};

/// Everything a node needs at one time step. Demands and supplies may be in
/// any consistent flow unit; the node model is scale invariant.
struct NodeInputs {
    NodeInputs() = default;
    NodeInputs(std::size_t inputs, std::size_t outputs, std::size_t classes);

    std::size_t inputs() const { return splits.inputs(); }
    std::size_t outputs() const { return splits.outputs(); }
    std::size_t classes() const { return splits.classes(); }

    double& demand(std::size_t i, std::size_t c) { return demands[i * classes() + c]; }
    double demand(std::size_t i, std::size_t c) const { return demands[i * classes() + c]; }
    /// Restriction of input i's flow to `restricted` caused by `restricting`.
    double& eta(std::size_t i, std::size_t restricting, std::size_t restricted) {
        return restriction[(i * outputs() + restricting) * outputs() + restricted];
    }
    double eta(std::size_t i, std::size_t restricting, std::size_t restricted) const {
        return restriction[(i * outputs() + restricting) * outputs() + restricted];
    }

    std::vector<double> demands;      // per (input, class)
    std::vector<double> supplies;     // per output
    SplitMatrix splits;
    std::vector<double> priorities;   // per input, sums to 1
    std::vector<double> restriction;  // per (input, restricting, restricted), default 1
};

/// Flows through a node, indexed (input, output, class).
class NodeFlows {
public:
    NodeFlows() = default;
    NodeFlows(std::size_t inputs, std::size_t outputs, std::size_t classes)
        : inputs_(inputs), outputs_(outputs), classes_(classes), values_(inputs * outputs * classes, 0.0) {}

    std::size_t inputs() const { return inputs_; }
    std::size_t outputs() const { return outputs_; }
    std::size_t classes() const { return classes_; }

    double& operator()(std::size_t i, std::size_t j, std::size_t c) { return values_[(i * outputs_ + j) * classes_ + c]; }
    double operator()(std::size_t i, std::size_t j, std::size_t c) const {
        return values_[(i * outputs_ + j) * classes_ + c];
    }

    double input_total(std::size_t i) const;
    double output_total(std::size_t j) const;
    double movement_total(std::size_t i, std::size_t j) const;
    double total() const;

    void reset(std::size_t inputs, std::size_t outputs, std::size_t classes);

private:
    std::size_t inputs_ = 0;
    std::size_t outputs_ = 0;
    std::size_t classes_ = 0;
    std::vector<double> values_;
};

/// Lifts zero priorities so every input gets a share, keeping the sum at 1.
std::vector<double> regularize_priorities(std::span<const double> priorities);

/// Optional adjustment applied to completed split ratios (e.g. an inertia
/// model). Receives the node inputs and the completed matrix.
using SplitBiasHook = std::function<void(const NodeInputs&, SplitMatrix&)>;

struct SplitSolverStats {
    std::size_t iterations = 0;
    bool hit_iteration_cap = false;
};

/// Completes undefined split ratios so that the oriented demand-supply ratios
/// of the outputs are as balanced as possible. Entries defined on input are
/// returned unchanged. Throws Error("invalid_node_inputs") on negative or
/// non-finite demands or supplies.
SplitMatrix solve_undefined_split_ratios(const NodeInputs& inputs, const SplitBiasHook& hook = {},
                                         SplitSolverStats* stats = nullptr);

/// Relaxed-FIFO node model. Splits must be fully defined.
NodeFlows compute_node_flows(const NodeInputs& inputs);
void compute_node_flows(const NodeInputs& inputs, NodeFlows& out);

}  // namespace mlsim
