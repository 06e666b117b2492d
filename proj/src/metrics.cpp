#include "mlsim/metrics.hpp"

#include <algorithm>

namespace mlsim {

namespace {
void accumulate(LaneGroupMetrics& m, double density, double speed, double length, double dt, double threshold) {
    const double vehicles = density * length;
    m.vht += vehicles * dt;
    m.vmt += speed * vehicles * dt;
    if (speed < threshold) m.delay += vehicles * dt * (1.0 - speed / threshold);
}

LaneGroupMetrics* bucket(MetricsSummary& s, LaneGroup group, LinkRole role) {
    if (role == LinkRole::origin) return nullptr;
    switch (group) {
    case LaneGroup::gp:
    case LaneGroup::auxiliary: return &s.gp;
    case LaneGroup::managed: return &s.managed;
    default: return nullptr;
    }
}
}  // namespace

MetricsSummary compute_metrics(const std::vector<LinkTrace>& traces, double dt_hours, double threshold_mph) {
    MetricsSummary s;
    s.threshold_mph = threshold_mph;
    for (const auto& trace : traces) {
        LaneGroupMetrics* m = bucket(s, trace.lane_group, trace.role);
        if (!m) continue;
        const std::size_t steps = std::min(trace.density.size(), trace.speed.size());
        for (std::size_t t = 0; t < steps; ++t)
            accumulate(*m, trace.density[t], trace.speed[t], trace.length, dt_hours, threshold_mph);
    }
    s.total = {s.gp.vmt + s.managed.vmt, s.gp.vht + s.managed.vht, s.gp.delay + s.managed.delay};
    return s;
}

MetricsSummary compute_metrics(const SimOutput& output, const Network& network, double threshold_mph) {
    MetricsSummary s;
    s.threshold_mph = threshold_mph;
    const auto& links = network.links();
    for (std::size_t l = 0; l < links.size(); ++l) {
        LaneGroupMetrics* m = bucket(s, links[l].lane_group, links[l].role);
        if (!m) continue;
        for (std::size_t t = 0; t < output.steps; ++t)
            accumulate(*m, output.total_density(t, l), output.speed_at(t, l), links[l].length, output.dt_hours,
                       threshold_mph);
    }
    s.total = {s.gp.vmt + s.managed.vmt, s.gp.vht + s.managed.vht, s.gp.delay + s.managed.delay};
    return s;
}

std::vector<MetricRow> metric_rows(const MetricsSummary& s) {
    return {{"GP Lane VMT", s.gp.vmt},          {"Managed Lane VMT", s.managed.vmt},
            {"Total VMT", s.total.vmt},         {"GP Lane VHT", s.gp.vht},
            {"Managed Lane VHT", s.managed.vht}, {"Total VHT", s.total.vht},
            {"GP Lane Delay (hr)", s.gp.delay},  {"Managed Lane Delay (hr)", s.managed.delay},
            {"Total Delay (hr)", s.total.delay}};
}

std::vector<Bottleneck> find_bottlenecks(const SimOutput& output, const Network& network) {
    std::vector<Bottleneck> found;
    const double dt_s = output.dt_hours * 3600.0;
    for (std::size_t l = 0; l < network.links().size(); ++l) {
        if (network.links()[l].role == LinkRole::origin) continue;
        Bottleneck b{network.links()[l].id};
        for (std::size_t t = 0; t < output.steps; ++t) {
            if (output.metastate_at(t + 1, l) != Metastate::congested) continue;
            if (b.congested_steps++ == 0) b.first_time_s = static_cast<double>(t) * dt_s;
            b.last_time_s = static_cast<double>(t + 1) * dt_s;
        }
        if (b.congested_steps) found.push_back(b);
    }
    std::stable_sort(found.begin(), found.end(),
                     [](const Bottleneck& a, const Bottleneck& b) { return a.congested_steps > b.congested_steps; });
    return found;
}

}  // namespace mlsim
