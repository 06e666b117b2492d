#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mlsim/metrics.hpp"
#include "mlsim/network.hpp"
#include "mlsim/simulation.hpp"

namespace mlsim {

/// Offramp flows per interval, veh/h. `target` may be empty.
struct OfframpTable {
    std::string link;
    std::vector<double> target;
    std::vector<double> simulated;
};

/// Writes density.csv, flow.csv and speed.csv (long format, values per lane),
/// links.csv and run.json into `dir`, creating it if needed.
void write_contours(const std::filesystem::path& dir, const Network& network, const SimOutput& output);
void write_offramp_table(const std::filesystem::path& dir, const std::vector<OfframpTable>& rows, double interval_s);
void write_metrics(const std::filesystem::path& dir, const MetricsSummary& summary);

/// Simulated offramp flows of every offramp link, veh/h per interval.
std::vector<OfframpTable> offramp_tables(const Network& network, const SimOutput& output);

/// Rebuilds the performance measures from the files written by write_contours.
MetricsSummary metrics_from_directory(const std::filesystem::path& dir, double threshold_mph = 45.0);

}  // namespace mlsim
