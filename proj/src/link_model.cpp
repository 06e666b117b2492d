#include "mlsim/link_model.hpp"

#include <algorithm>
#include <cassert>

namespace mlsim {

namespace {
constexpr double empty_density = 1e-9;
}

double total(std::span<const double> values) {
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum;
}

double LinkState::total_density() const { return total(density); }

void compute_demand(std::span<const double> density, double speed, double capacity, std::span<double> out) {
    assert(out.size() == density.size());
    const double rho = total(density);
    if (rho <= 0.0) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
    }
    const double sending = std::min(speed * rho, capacity);
    for (std::size_t c = 0; c < density.size(); ++c) out[c] = sending * (density[c] / rho);
}

std::vector<double> compute_demand(const LinkState& state, double speed, double capacity) {
    std::vector<double> out(state.density.size());
    compute_demand(state.density, speed, capacity, out);
    return out;
}

double compute_supply(double total_density, Metastate metastate, const FundamentalDiagram& fd) {
    if (metastate == Metastate::uncongested) return fd.capacity;
    const double r = fd.congestion_wave_speed * (fd.jam_density - total_density);
    return std::clamp(r, 0.0, fd.capacity);
}

Metastate update_metastate(Metastate previous, double total_density, const FundamentalDiagram& fd) {
    if (total_density <= fd.low_critical_density()) return Metastate::uncongested;
    if (total_density > fd.high_critical_density()) return Metastate::congested;
    return previous;
}

Metastate initial_metastate(double total_density, const FundamentalDiagram& fd) {
    return total_density <= fd.high_critical_density() ? Metastate::uncongested : Metastate::congested;
}

EffectiveParameters apply_friction(const FundamentalDiagram& managed_fd, double gp_speed, double friction) {
    const double differential = std::max(0.0, managed_fd.free_flow_speed - gp_speed);
    if (friction * differential == 0.0) return {managed_fd.free_flow_speed, managed_fd.capacity};
    const double speed = managed_fd.free_flow_speed - friction * differential;
    return {speed, speed * managed_fd.high_critical_density()};
}

double link_speed(double outflow, double total_density, double free_flow_speed) {
    if (total_density < empty_density) return free_flow_speed;
    return std::min(free_flow_speed, outflow / total_density);
}

}  // namespace mlsim
