#include "mlsim/node_model.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include "mlsim/network.hpp"

namespace mlsim {

namespace {
constexpr double undefined = std::numeric_limits<double>::quiet_NaN();
constexpr double infinity = std::numeric_limits<double>::infinity();
constexpr double ratio_tolerance = 1e-9;
constexpr double tie_tolerance = 1e-12;
constexpr std::size_t iterations_per_movement = 200;

bool nearly_equal(double a, double b, double rel) {
    if (a == b) return true;
    if (std::isinf(a) || std::isinf(b)) return false;
    return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b));
}
}  // namespace

SplitMatrix::SplitMatrix(std::size_t inputs, std::size_t outputs, std::size_t classes)
    : inputs_(inputs), outputs_(outputs), classes_(classes), values_(inputs * outputs * classes, undefined) {}

bool SplitMatrix::defined(std::size_t i, std::size_t j, std::size_t c) const {
    return !std::isnan(values_[index(i, j, c)]);
}

void SplitMatrix::clear(std::size_t i, std::size_t j, std::size_t c) { values_[index(i, j, c)] = undefined; }

bool SplitMatrix::fully_defined() const {
    return std::none_of(values_.begin(), values_.end(), [](double v) { return std::isnan(v); });
}

double SplitMatrix::row_sum(std::size_t i, std::size_t c) const {
    double sum = 0.0;
    for (std::size_t j = 0; j < outputs_; ++j)
        if (defined(i, j, c)) sum += (*this)(i, j, c);
    return sum;
}

NodeInputs::NodeInputs(std::size_t inputs, std::size_t outputs, std::size_t classes)
    : demands(inputs * classes, 0.0),
      supplies(outputs, 0.0),
      splits(inputs, outputs, classes),
      priorities(inputs, inputs ? 1.0 / static_cast<double>(inputs) : 0.0),
      restriction(inputs * outputs * outputs, 1.0) {}

double NodeFlows::input_total(std::size_t i) const {
    double sum = 0.0;
    for (std::size_t j = 0; j < outputs_; ++j)
        for (std::size_t c = 0; c < classes_; ++c) sum += (*this)(i, j, c);
    return sum;
}

double NodeFlows::output_total(std::size_t j) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < inputs_; ++i)
        for (std::size_t c = 0; c < classes_; ++c) sum += (*this)(i, j, c);
    return sum;
}

double NodeFlows::movement_total(std::size_t i, std::size_t j) const {
    double sum = 0.0;
    for (std::size_t c = 0; c < classes_; ++c) sum += (*this)(i, j, c);
    return sum;
}

double NodeFlows::total() const {
    double sum = 0.0;
    for (double v : values_) sum += v;
    return sum;
}

void NodeFlows::reset(std::size_t inputs, std::size_t outputs, std::size_t classes) {
    inputs_ = inputs;
    outputs_ = outputs;
    classes_ = classes;
    values_.assign(inputs * outputs * classes, 0.0);
}

std::vector<double> regularize_priorities(std::span<const double> priorities) {
    const auto m = static_cast<double>(priorities.size());
    const auto zero = static_cast<double>(std::count(priorities.begin(), priorities.end(), 0.0));
    std::vector<double> out(priorities.begin(), priorities.end());
    if (zero == 0.0) return out;
    for (double& p : out) p = p * (m - zero) / m + zero / (m * m);
    return out;
}

namespace {

void check_inputs(const NodeInputs& in) {
    auto bad = [](double v) { return !(v >= 0.0) || std::isinf(v); };
    if (std::any_of(in.demands.begin(), in.demands.end(), bad) ||
        std::any_of(in.supplies.begin(), in.supplies.end(), bad))
        throw Error("invalid_node_inputs", "invalid node inputs");
}

// Working state of the split-ratio completion for one node.
class SplitCompletion {
public:
    SplitCompletion(const NodeInputs& in, SplitMatrix& out)
        : in_(in), out_(out), m_(in.inputs()), n_(in.outputs()), c_(in.classes()) {}

    std::size_t run();
    bool hit_cap() const { return hit_cap_; }

private:
    std::size_t ij(std::size_t i, std::size_t j) const { return i * n_ + j; }
    std::size_t ic(std::size_t i, std::size_t c) const { return i * c_ + c; }
    std::size_t ijc(std::size_t i, std::size_t j, std::size_t c) const { return (i * n_ + j) * c_ + c; }

    bool close_trivial_rows();
    bool remaining(std::size_t i, std::size_t j) const;
    void compute_ratios();
    double ratio(std::size_t i, std::size_t j) const;
    void distribute_by_supply();

    const NodeInputs& in_;
    SplitMatrix& out_;
    std::size_t m_, n_, c_;
    bool hit_cap_ = false;

    std::vector<double> tilde_p_;       // regularized input priority
    std::vector<double> assigned_;      // beta tilde per (i,j,c)
    std::vector<char> open_;            // (i,j,c) was undefined and is being solved
    std::vector<double> unassigned_;    // beta bar per (i,c)
    std::vector<std::size_t> choices_;  // |V_i^c| per (i,c)
    std::vector<double> input_demand_;  // S_i
    std::vector<double> oriented_;      // S tilde per (i,j), summed over classes
    std::vector<double> oriented_p_;    // p tilde per (i,j)
    std::vector<double> priority_sum_;  // per j
};

bool SplitCompletion::close_trivial_rows() {
    unassigned_.assign(m_ * c_, 0.0);
    choices_.assign(m_ * c_, 0);
    open_.assign(m_ * n_ * c_, 0);
    bool any = false;

    for (std::size_t i = 0; i < m_; ++i) {
        for (std::size_t c = 0; c < c_; ++c) {
            std::size_t count = 0;
            for (std::size_t j = 0; j < n_; ++j)
                if (!out_.defined(i, j, c)) ++count;
            if (count == 0) continue;

            const double rest = std::max(0.0, 1.0 - out_.row_sum(i, c));
            const double demand = in_.demand(i, c);
            if (demand == 0.0 || rest <= 0.0 || count == 1) {
                // Nothing to balance: spread (or zero) the remainder uniformly.
                const double share = rest / static_cast<double>(count);
                for (std::size_t j = 0; j < n_; ++j)
                    if (!out_.defined(i, j, c)) out_.set(i, j, c, share);
                continue;
            }
            unassigned_[ic(i, c)] = rest;
            choices_[ic(i, c)] = count;
            for (std::size_t j = 0; j < n_; ++j)
                if (!out_.defined(i, j, c)) open_[ijc(i, j, c)] = 1;
            any = true;
        }
    }
    return any;
}

bool SplitCompletion::remaining(std::size_t i, std::size_t j) const {
    for (std::size_t c = 0; c < c_; ++c)
        if (open_[ijc(i, j, c)] && unassigned_[ic(i, c)] > 0.0) return true;
    return false;
}

void SplitCompletion::compute_ratios() {
    for (std::size_t i = 0; i < m_; ++i) {
        for (std::size_t j = 0; j < n_; ++j) {
            double demand = 0.0;
            double weighted = 0.0;
            for (std::size_t c = 0; c < c_; ++c) {
                const double s = in_.demand(i, c);
                const double beta = assigned_[ijc(i, j, c)];
                double gamma = beta;
                if (open_[ijc(i, j, c)]) gamma += unassigned_[ic(i, c)] / static_cast<double>(choices_[ic(i, c)]);
                demand += beta * s;
                weighted += gamma * s;
            }
            oriented_[ij(i, j)] = demand;
            oriented_p_[ij(i, j)] = input_demand_[i] > 0.0 ? tilde_p_[i] * weighted / input_demand_[i] : 0.0;
        }
    }
    for (std::size_t j = 0; j < n_; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < m_; ++i) sum += oriented_p_[ij(i, j)];
        priority_sum_[j] = sum;
    }
}

// Oriented demand-supply ratio: demand of i toward j over i's priority share of R_j.
double SplitCompletion::ratio(std::size_t i, std::size_t j) const {
    const double share = oriented_p_[ij(i, j)] * in_.supplies[j];
    if (share <= 0.0) return oriented_[ij(i, j)] > 0.0 || in_.supplies[j] <= 0.0 ? infinity : 0.0;
    return oriented_[ij(i, j)] * priority_sum_[j] / share;
}

void SplitCompletion::distribute_by_supply() {
    for (std::size_t i = 0; i < m_; ++i) {
        for (std::size_t c = 0; c < c_; ++c) {
            const double rest = unassigned_[ic(i, c)];
            if (rest <= 0.0) continue;
            double supply = 0.0;
            for (std::size_t j = 0; j < n_; ++j)
                if (open_[ijc(i, j, c)]) supply += in_.supplies[j];
            for (std::size_t j = 0; j < n_; ++j) {
                if (!open_[ijc(i, j, c)]) continue;
                const double share = supply > 0.0 ? in_.supplies[j] / supply
                                                  : 1.0 / static_cast<double>(choices_[ic(i, c)]);
                assigned_[ijc(i, j, c)] += share * rest;
            }
            unassigned_[ic(i, c)] = 0.0;
        }
    }
}

std::size_t SplitCompletion::run() {
    if (!close_trivial_rows()) return 0;

    tilde_p_ = regularize_priorities(in_.priorities);
    assigned_.assign(m_ * n_ * c_, 0.0);
    for (std::size_t i = 0; i < m_; ++i)
        for (std::size_t j = 0; j < n_; ++j)
            for (std::size_t c = 0; c < c_; ++c)
                if (out_.defined(i, j, c) && !open_[ijc(i, j, c)]) assigned_[ijc(i, j, c)] = out_(i, j, c);
    input_demand_.assign(m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i)
        for (std::size_t c = 0; c < c_; ++c) input_demand_[i] += in_.demand(i, c);
    oriented_.assign(m_ * n_, 0.0);
    oriented_p_.assign(m_ * n_, 0.0);
    priority_sum_.assign(n_, 0.0);

    const std::size_t cap = iterations_per_movement * m_ * n_ * c_;
    std::size_t k = 0;
    for (;; ++k) {
        bool open_outputs = false;
        for (std::size_t j = 0; j < n_ && !open_outputs; ++j)
            for (std::size_t i = 0; i < m_ && !open_outputs; ++i) open_outputs = remaining(i, j);
        if (!open_outputs) break;
        if (k >= cap) {
            hit_cap_ = true;
            distribute_by_supply();
            break;
        }

        compute_ratios();

        double mu_plus = 0.0;
        for (std::size_t i = 0; i < m_; ++i)
            for (std::size_t j = 0; j < n_; ++j)
                if (oriented_p_[ij(i, j)] > 0.0) mu_plus = std::max(mu_plus, ratio(i, j));

        // Output with the smallest oriented ratio among inputs that still have
        // unassigned demand toward it; ties go to the smaller output ratio, then index.
        std::size_t best_j = n_;
        double best_mu = infinity;
        double best_output_ratio = infinity;
        for (std::size_t j = 0; j < n_; ++j) {
            double mu_j = infinity;
            bool any = false;
            for (std::size_t i = 0; i < m_; ++i)
                if (remaining(i, j)) {
                    mu_j = std::min(mu_j, ratio(i, j));
                    any = true;
                }
            if (!any) continue;
            double total = 0.0;
            for (std::size_t i = 0; i < m_; ++i) total += oriented_[ij(i, j)];
            const double output_ratio = in_.supplies[j] > 0.0 ? total / in_.supplies[j] : infinity;
            const bool better = best_j == n_ || (mu_j < best_mu && !nearly_equal(mu_j, best_mu, tie_tolerance)) ||
                                (nearly_equal(mu_j, best_mu, tie_tolerance) && output_ratio < best_output_ratio);
            if (better) {
                best_j = j;
                best_mu = mu_j;
                best_output_ratio = output_ratio;
            }
        }
        const std::size_t jm = best_j;

        std::size_t im = m_, cm = c_;
        double smallest = infinity;
        for (std::size_t i = 0; i < m_; ++i) {
            if (!remaining(i, jm) || !nearly_equal(ratio(i, jm), best_mu, tie_tolerance)) continue;
            for (std::size_t c = 0; c < c_; ++c) {
                if (!open_[ijc(i, jm, c)] || unassigned_[ic(i, c)] <= 0.0) continue;
                const double s = unassigned_[ic(i, c)] * in_.demand(i, c);
                if (s < smallest) {
                    smallest = s;
                    im = i;
                    cm = c;
                }
            }
        }
        assert(im < m_ && cm < c_);

        const double mu_minus = ratio(im, jm);
        if (nearly_equal(mu_minus, mu_plus, ratio_tolerance) || mu_minus > mu_plus) {
            distribute_by_supply();
            ++k;
            break;
        }

        const double rest = unassigned_[ic(im, cm)];
        double delta = rest;
        if (!std::isinf(mu_plus)) {
            const double rest_demand = rest * in_.demand(im, cm);
            const double target = mu_plus * oriented_p_[ij(im, jm)] * in_.supplies[jm] / priority_sum_[jm];
            delta = std::min(rest, (target - oriented_[ij(im, jm)]) / rest_demand);
        }
        if (!(delta > 0.0)) {
            distribute_by_supply();
            ++k;
            break;
        }
        assigned_[ijc(im, jm, cm)] += delta;
        unassigned_[ic(im, cm)] = delta >= rest ? 0.0 : rest - delta;
    }

    for (std::size_t i = 0; i < m_; ++i)
        for (std::size_t j = 0; j < n_; ++j)
            for (std::size_t c = 0; c < c_; ++c)
                if (open_[ijc(i, j, c)]) out_.set(i, j, c, assigned_[ijc(i, j, c)]);
    return k;
}

}  // namespace

SplitMatrix solve_undefined_split_ratios(const NodeInputs& inputs, const SplitBiasHook& hook, SplitSolverStats* stats) {
    check_inputs(inputs);
    SplitMatrix out = inputs.splits;
    SplitCompletion completion(inputs, out);
    const std::size_t iterations = completion.run();
    if (stats) {
        stats->iterations = iterations;
        stats->hit_iteration_cap = completion.hit_cap();
    }
    if (hook) hook(inputs, out);
    return out;
}

namespace {

// Progressive filling: a common level tau grows; every movement (i,j) that is
// not frozen carries p_i * S_ij / S_i * tau, i.e. each input raises the served
// fraction of all its open movements at the same pace. Events freeze movements
// when an input is fully served, a restriction cap is reached, or an output runs
// out of supply. A saturated output caps the other movements of each input it
// restricted at 1 - eta * (1 - served fraction).
class FlowAllocation {
public:
    FlowAllocation(const NodeInputs& in, NodeFlows& out)
        : in_(in), out_(out), m_(in.inputs()), n_(in.outputs()), c_(in.classes()) {}

    void run();

private:
    std::size_t ij(std::size_t i, std::size_t j) const { return i * n_ + j; }
    void freeze(std::size_t i, std::size_t j, double fraction);

    const NodeInputs& in_;
    NodeFlows& out_;
    std::size_t m_, n_, c_;

    std::vector<double> movement_;  // S_ij
    std::vector<double> weight_;    // p_i S_ij / S_i
    std::vector<double> pace_;      // p_i / S_i
    std::vector<double> cap_;
    std::vector<double> fraction_;
    std::vector<char> frozen_;
    std::vector<char> saturated_;
    std::vector<double> priority_;
};

void FlowAllocation::freeze(std::size_t i, std::size_t j, double fraction) {
    frozen_[ij(i, j)] = 1;
    fraction_[ij(i, j)] = fraction;
    for (std::size_t c = 0; c < c_; ++c) {
        const double oriented = in_.splits(i, j, c) * in_.demand(i, c);
        out_(i, j, c) = fraction == 1.0 ? oriented : fraction * oriented;
    }
}

void FlowAllocation::run() {
    priority_ = regularize_priorities(in_.priorities);
    movement_.assign(m_ * n_, 0.0);
    weight_.assign(m_ * n_, 0.0);
    pace_.assign(m_, 0.0);
    cap_.assign(m_ * n_, 1.0);
    fraction_.assign(m_ * n_, 0.0);
    frozen_.assign(m_ * n_, 1);
    saturated_.assign(n_, 0);

    for (std::size_t i = 0; i < m_; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < n_; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < c_; ++c) s += in_.splits(i, j, c) * in_.demand(i, c);
            movement_[ij(i, j)] = s;
            total += s;
        }
        if (total <= 0.0) continue;
        pace_[i] = priority_[i] / total;
        for (std::size_t j = 0; j < n_; ++j) {
            if (movement_[ij(i, j)] <= 0.0) continue;
            weight_[ij(i, j)] = priority_[i] * movement_[ij(i, j)] / total;
            frozen_[ij(i, j)] = 0;
        }
    }

    double level = 0.0;
    for (;;) {
        // Earliest cap event (input fully served or restriction cap reached).
        double cap_level = infinity;
        std::size_t cap_i = m_, cap_j = n_;
        for (std::size_t i = 0; i < m_; ++i)
            for (std::size_t j = 0; j < n_; ++j) {
                if (frozen_[ij(i, j)]) continue;
                const double t = cap_[ij(i, j)] / pace_[i];
                if (t < cap_level) {
                    cap_level = t;
                    cap_i = i;
                    cap_j = j;
                }
            }
        if (cap_i == m_) break;

        // Earliest output saturation.
        double sat_level = infinity;
        std::size_t sat_j = n_;
        for (std::size_t j = 0; j < n_; ++j) {
            if (saturated_[j]) continue;
            double fixed = 0.0, weight = 0.0;
            for (std::size_t i = 0; i < m_; ++i) {
                if (frozen_[ij(i, j)])
                    fixed += fraction_[ij(i, j)] * movement_[ij(i, j)];
                else
                    weight += weight_[ij(i, j)];
            }
            if (weight <= 0.0) continue;
            const double t = std::max(level, (in_.supplies[j] - fixed) / weight);
            if (t < sat_level) {
                sat_level = t;
                sat_j = j;
            }
        }

        if (cap_level <= sat_level) {
            level = std::max(level, cap_level);
            freeze(cap_i, cap_j, cap_[ij(cap_i, cap_j)]);
            continue;
        }

        level = sat_level;
        const std::size_t j = sat_j;
        saturated_[j] = 1;
        double fixed = 0.0, weight = 0.0;
        for (std::size_t i = 0; i < m_; ++i) {
            if (frozen_[ij(i, j)])
                fixed += fraction_[ij(i, j)] * movement_[ij(i, j)];
            else
                weight += weight_[ij(i, j)];
        }
        const double left = std::max(0.0, in_.supplies[j] - fixed);
        for (std::size_t i = 0; i < m_; ++i) {
            if (frozen_[ij(i, j)]) continue;
            const double flow = left * (weight_[ij(i, j)] / weight);
            const double fraction = std::min(1.0, flow / movement_[ij(i, j)]);
            freeze(i, j, fraction);
            for (std::size_t other = 0; other < n_; ++other) {
                if (other == j || frozen_[ij(i, other)]) continue;
                const double limit = 1.0 - in_.eta(i, j, other) * (1.0 - fraction);
                cap_[ij(i, other)] = std::min(cap_[ij(i, other)], limit);
            }
        }
    }
}

}  // namespace

void compute_node_flows(const NodeInputs& inputs, NodeFlows& out) {
    out.reset(inputs.inputs(), inputs.outputs(), inputs.classes());
    FlowAllocation(inputs, out).run();
}

NodeFlows compute_node_flows(const NodeInputs& inputs) {
    NodeFlows out;
    compute_node_flows(inputs, out);
    return out;
}

}  // namespace mlsim
