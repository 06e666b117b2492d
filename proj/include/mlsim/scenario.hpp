#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mlsim/network.hpp"

namespace mlsim {

struct SimConfig {
    double dt_seconds = 5.0;
    std::size_t steps = 0;          // horizon T
    double interval_minutes = 5.0;  // grid of demand, split and target series
    bool enable_friction = true;

    double dt_hours() const { return dt_seconds / 3600.0; }
    /// Steps per interval; throws if the interval is not a whole number of steps.
    std::size_t interval_steps() const;

    bool operator==(const SimConfig&) const = default;
};

/// Initial density of one class on one link, veh/mi per lane.
struct InitialDensity {
    std::string link;
    std::string vehicle_class;
    double value = 0.0;

    bool operator==(const InitialDensity&) const = default;
};

struct Scenario {
    std::string name;
    Network network;
    SimConfig config;
    double eligible_fraction = 0.15;
    std::vector<DemandProfile> demands;
    std::vector<InitialDensity> initial_densities;
    std::map<std::string, IntervalSeries> offramp_splits;       // offramp link -> beta per interval
    std::map<std::string, std::vector<double>> gate_shares;     // gate node -> share per segment slot

    bool operator==(const Scenario&) const = default;
};

/// Offramp flows measured per interval, veh/h.
struct OfframpTarget {
    std::string link;
    IntervalSeries flows;

    bool operator==(const OfframpTarget&) const = default;
};

struct CalibrationTargets {
    double interval_minutes = 5.0;
    std::vector<OfframpTarget> offramps;

    bool operator==(const CalibrationTargets&) const = default;
};

/// Parses and checks a scenario (schema, units, topology, CFL). Errors carry
/// the file path and the offending field.
Scenario load_scenario(const std::filesystem::path& path);
Scenario parse_scenario(const std::string& text, const std::string& origin = "<memory>");
std::string dump_scenario(const Scenario& scenario);
void save_scenario(const Scenario& scenario, const std::filesystem::path& path);

CalibrationTargets load_targets(const std::filesystem::path& path);
CalibrationTargets parse_targets(const std::string& text, const std::string& origin = "<memory>");
std::string dump_targets(const CalibrationTargets& targets);

/// Validation and CFL findings for a parsed scenario, including scenario-level
/// checks (demand links, split series, interval alignment).
ValidationReport check_scenario(const Scenario& scenario);

}  // namespace mlsim
