#pragma once

#include <string>
#include <vector>

#include "mlsim/network.hpp"
#include "mlsim/simulation.hpp"

namespace mlsim {

struct LaneGroupMetrics {
    double vmt = 0.0;    // veh-mi
    double vht = 0.0;    // veh-h
    double delay = 0.0;  // veh-h below the threshold speed

    bool operator==(const LaneGroupMetrics&) const = default;
};

/// Totals over the horizon. "gp" covers general purpose and auxiliary lanes,
/// "managed" the managed lanes; ramps and origin queues are left out.
struct MetricsSummary {
    LaneGroupMetrics gp;
    LaneGroupMetrics managed;
    LaneGroupMetrics total;
    double threshold_mph = 45.0;

    bool operator==(const MetricsSummary&) const = default;
};

/// Per-link time series needed for the performance measures.
struct LinkTrace {
    LaneGroup lane_group = LaneGroup::gp;
    LinkRole role = LinkRole::ordinary;
    double length = 0.0;
    std::vector<double> density;  // veh/mi (lane group), one per step
    std::vector<double> speed;    // mph, one per step
};

MetricsSummary compute_metrics(const std::vector<LinkTrace>& traces, double dt_hours, double threshold_mph = 45.0);
MetricsSummary compute_metrics(const SimOutput& output, const Network& network, double threshold_mph = 45.0);

struct MetricRow {
    std::string name;
    double value = 0.0;
};
/// Rows in report order: VMT, VHT and delay for GP, managed and total.
std::vector<MetricRow> metric_rows(const MetricsSummary& summary);

/// A link that spent time in the congested metastate.
struct Bottleneck {
    std::string link;
    std::size_t congested_steps = 0;
    double first_time_s = 0.0;
    double last_time_s = 0.0;
};
/// Congested links, longest congestion first.
std::vector<Bottleneck> find_bottlenecks(const SimOutput& output, const Network& network);

}  // namespace mlsim
