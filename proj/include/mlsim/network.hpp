#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mlsim {

/// Error raised by loaders, the simulator and the calibrator. `code` is a
/// short machine-readable tag, `what()` carries the human-readable detail.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

enum class ClassKind { gp_only, eligible, destination };
enum class LinkRole { ordinary, origin, destination };
enum class LaneGroup { gp, managed, onramp, offramp, auxiliary };

std::string_view to_string(ClassKind kind);
std::string_view to_string(LinkRole role);
std::string_view to_string(LaneGroup group);
std::optional<ClassKind> parse_class_kind(std::string_view text);
std::optional<LinkRole> parse_link_role(std::string_view text);
std::optional<LaneGroup> parse_lane_group(std::string_view text);

/// Destination classes are reused from one gate segment to the next: a class
/// with slot k exits at the k-th offramp of whichever segment it was assigned in.
struct VehicleClass {
    std::string name;
    ClassKind kind = ClassKind::gp_only;
    int slot = 0;

    bool operator==(const VehicleClass&) const = default;
};

/// Backwards-lambda fundamental diagram. Capacity and jam density are per
/// lane when stored on a Link; `scaled` produces the lane-group values.
struct FundamentalDiagram {
    double capacity = 0.0;               // veh/h
    double free_flow_speed = 0.0;        // mph
    double congestion_wave_speed = 0.0;  // mph
    double jam_density = 0.0;            // veh/mi

    double low_critical_density() const {
        return congestion_wave_speed * jam_density / (free_flow_speed + congestion_wave_speed);
    }
    double high_critical_density() const { return capacity / free_flow_speed; }
    bool triangular() const { return low_critical_density() == high_critical_density(); }

    FundamentalDiagram scaled(double lanes) const {
        return {capacity * lanes, free_flow_speed, congestion_wave_speed, jam_density * lanes};
    }

    bool operator==(const FundamentalDiagram&) const = default;
};

struct Link {
    std::string id;
    LinkRole role = LinkRole::ordinary;
    LaneGroup lane_group = LaneGroup::gp;
    double length = 0.0;  // miles
    int lanes = 1;
    FundamentalDiagram fd;  // per lane
    double friction = 0.0;
    std::optional<std::string> gp_partner;

    FundamentalDiagram group_fd() const { return fd.scaled(lanes); }

    bool operator==(const Link&) const = default;
};

/// Scalar relaxed-FIFO coefficient: how strongly a supply restriction of
/// `restricting` on `input` propagates to its flow toward `restricted`.
/// 1 is strict FIFO, 0 decouples the two movements.
struct Restriction {
    std::string input;
    std::string restricting;
    std::string restricted;
    double eta = 1.0;

    bool operator==(const Restriction&) const = default;
};

struct KnownSplit {
    std::string input;
    std::string output;
    std::string vehicle_class;
    double value = 0.0;

    bool operator==(const KnownSplit&) const = default;
};

struct Node {
    std::string id;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::vector<double> priorities;  // empty: proportional to input capacity
    bool is_gate = false;
    std::vector<Restriction> restrictions;  // unlisted triples default to eta = 1
    std::vector<KnownSplit> known_splits;

    bool operator==(const Node&) const = default;
};

/// Piecewise-constant series on a fixed interval grid. Values past the end
/// hold the last entry; an empty series reads as zero.
struct IntervalSeries {
    std::vector<double> values;

    double at(std::size_t interval) const {
        if (values.empty()) return 0.0;
        return interval < values.size() ? values[interval] : values.back();
    }

    bool operator==(const IntervalSeries&) const = default;
};

/// Exogenous inflow at one origin link, veh/h per interval. Either a total
/// series split by the eligible fraction, or explicit per-class series.
struct DemandProfile {
    std::string link;
    IntervalSeries total;
    std::optional<double> eligible_fraction;
    std::map<std::string, IntervalSeries> per_class;

    bool operator==(const DemandProfile&) const = default;
};

/// Links, nodes and the class registry. Nodes refer to links by id; the
/// index accessors resolve those ids.
class Network {
public:
    Network() = default;
    Network(std::vector<VehicleClass> classes, std::vector<Link> links, std::vector<Node> nodes);

    const std::vector<VehicleClass>& classes() const { return classes_; }
    const std::vector<Link>& links() const { return links_; }
    const std::vector<Node>& nodes() const { return nodes_; }

    std::optional<std::size_t> link_index(std::string_view id) const;
    std::optional<std::size_t> node_index(std::string_view id) const;
    std::optional<std::size_t> class_index(std::string_view name) const;

    /// Node whose outputs contain the link (its beginning node), if any.
    std::optional<std::size_t> upstream_node(std::size_t link) const { return upstream_[link]; }
    /// Node whose inputs contain the link (its ending node), if any.
    std::optional<std::size_t> downstream_node(std::size_t link) const { return downstream_[link]; }

    std::optional<std::size_t> eligible_class() const;
    std::vector<std::size_t> destination_classes() const;

    bool operator==(const Network& other) const {
        return classes_ == other.classes_ && links_ == other.links_ && nodes_ == other.nodes_;
    }

private:
    std::vector<VehicleClass> classes_;
    std::vector<Link> links_;
    std::vector<Node> nodes_;
    std::map<std::string, std::size_t, std::less<>> link_ids_;
    std::map<std::string, std::size_t, std::less<>> node_ids_;
    std::map<std::string, std::size_t, std::less<>> class_ids_;
    std::vector<std::optional<std::size_t>> upstream_;
    std::vector<std::optional<std::size_t>> downstream_;
};

enum class Severity { warning, error };

struct Issue {
    Severity severity = Severity::error;
    std::string subject;  // link, node or class id
    std::string message;

    bool operator==(const Issue&) const = default;
};

struct ValidationReport {
    std::vector<Issue> issues;

    bool ok() const;  // no errors; warnings allowed
    bool empty() const { return issues.empty(); }
    bool has(std::string_view message) const;
    std::size_t error_count() const;
};

ValidationReport validate_network(const Network& network);

/// Flags every non-origin link whose free-flow or wave displacement per step
/// exceeds its length. `dt` in hours.
ValidationReport check_cfl(const Network& network, double dt);

/// Gate node id -> offramp links met along the GP mainline before the next gate.
using GateSegments = std::map<std::string, std::vector<std::string>>;

GateSegments gate_segments(const Network& network);

/// Number of destination classes a gated network needs (longest segment).
std::size_t required_destination_classes(const GateSegments& segments);

}  // namespace mlsim
