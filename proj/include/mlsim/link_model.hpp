#pragma once

#include <span>
#include <vector>

#include "mlsim/network.hpp"

namespace mlsim {

/// Congestion memory implementing the fundamental-diagram hysteresis.
enum class Metastate : unsigned char { uncongested = 0, congested = 1 };

struct LinkState {
    std::vector<double> density;  // veh/mi per class, whole lane group
    Metastate metastate = Metastate::uncongested;
    double last_speed = 0.0;  // mph, previous step

    double total_density() const;
};

double total(std::span<const double> values);

/// Per-class sending flow (veh/h): min(v*rho, F) shared in proportion to the
/// class densities. `out` must have the same size as `density`.
void compute_demand(std::span<const double> density, double speed, double capacity, std::span<double> out);

std::vector<double> compute_demand(const LinkState& state, double speed, double capacity);

/// Receiving flow (veh/h) of a link with lane-group diagram `fd`.
double compute_supply(double total_density, Metastate metastate, const FundamentalDiagram& fd);

inline double compute_supply(const LinkState& state, const FundamentalDiagram& fd) {
    return compute_supply(state.total_density(), state.metastate, fd);
}

Metastate update_metastate(Metastate previous, double total_density, const FundamentalDiagram& fd);

/// Metastate for a link starting at `total_density` with no history.
Metastate initial_metastate(double total_density, const FundamentalDiagram& fd);

struct EffectiveParameters {
    double speed = 0.0;     // mph
    double capacity = 0.0;  // veh/h
};

/// Friction-adjusted sending parameters of a managed link next to GP traffic
/// moving at `gp_speed`. A GP stream faster than the managed free-flow speed
/// has no effect.
EffectiveParameters apply_friction(const FundamentalDiagram& managed_fd, double gp_speed, double friction);

/// Macroscopic speed estimate: outflow over density, capped at free flow.
double link_speed(double outflow, double total_density, double free_flow_speed);

}  // namespace mlsim
