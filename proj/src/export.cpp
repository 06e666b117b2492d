#include "mlsim/export.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace mlsim {

namespace {

std::ofstream open_for_write(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io_error", fmt::format("{}: cannot write file", path.string()));
    return out;
}

std::ifstream open_for_read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io_error", fmt::format("{}: cannot open file", path.string()));
    return in;
}

// Shortest text that reads back to the same double.
void put(fmt::memory_buffer& buf, double v) { fmt::format_to(std::back_inserter(buf), "{}", v); }

template <class Value>
void write_series(const std::filesystem::path& path, const Network& network, std::size_t snapshots, double dt_s,
                  bool per_lane, Value value) {
    auto out = open_for_write(path);
    fmt::memory_buffer buf;
    fmt::format_to(std::back_inserter(buf), "time_s,link,lane_group,value\n");
    const auto& links = network.links();
    for (std::size_t t = 0; t < snapshots; ++t) {
        for (std::size_t l = 0; l < links.size(); ++l) {
            put(buf, static_cast<double>(t) * dt_s);
            fmt::format_to(std::back_inserter(buf), ",{},{},", links[l].id, to_string(links[l].lane_group));
            put(buf, per_lane ? value(t, l) / links[l].lanes : value(t, l));
            buf.push_back('\n');
        }
        if (buf.size() > (1u << 20)) {
            out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
            buf.clear();
        }
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    return fields;
}

}  // namespace

void write_contours(const std::filesystem::path& dir, const Network& network, const SimOutput& output) {
    std::filesystem::create_directories(dir);
    const double dt_s = output.dt_hours * 3600.0;
    const double per_hour = 1.0 / output.dt_hours;
    write_series(dir / "density.csv", network, output.steps + 1, dt_s, true,
                 [&](std::size_t t, std::size_t l) { return output.total_density(t, l); });
    write_series(dir / "flow.csv", network, output.steps, dt_s, true,
                 [&](std::size_t t, std::size_t l) { return output.total_outflow(t, l) * per_hour; });
    write_series(dir / "speed.csv", network, output.steps, dt_s, false,
                 [&](std::size_t t, std::size_t l) { return output.speed_at(t, l); });

    auto links = open_for_write(dir / "links.csv");
    links << "link,role,lane_group,length_mi,lanes\n";
    for (const auto& l : network.links())
        links << fmt::format("{},{},{},{},{}\n", l.id, to_string(l.role), to_string(l.lane_group), l.length, l.lanes);

    nlohmann::json meta = {{"dt_seconds", dt_s}, {"steps", output.steps}, {"interval_steps", output.interval_steps}};
    open_for_write(dir / "run.json") << meta.dump(2) << "\n";
}

std::vector<OfframpTable> offramp_tables(const Network& network, const SimOutput& output) {
    std::vector<OfframpTable> rows;
    for (std::size_t l = 0; l < network.links().size(); ++l) {
        if (network.links()[l].lane_group != LaneGroup::offramp) continue;
        OfframpTable row{network.links()[l].id, {}, {}};
        for (std::size_t k = 0; k < output.intervals(); ++k) row.simulated.push_back(output.interval_mean_inflow(l, k));
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_offramp_table(const std::filesystem::path& dir, const std::vector<OfframpTable>& rows, double interval_s) {
    std::filesystem::create_directories(dir);
    auto out = open_for_write(dir / "offramp.csv");
    out << "time_s,offramp,target,simulated,residual\n";
    for (const auto& row : rows)
        for (std::size_t k = 0; k < row.simulated.size(); ++k) {
            const double time = static_cast<double>(k) * interval_s;
            if (k < row.target.size())
                out << fmt::format("{},{},{},{},{}\n", time, row.link, row.target[k], row.simulated[k],
                                   row.simulated[k] - row.target[k]);
            else
                out << fmt::format("{},{},,{},\n", time, row.link, row.simulated[k]);
        }
}

void write_metrics(const std::filesystem::path& dir, const MetricsSummary& summary) {
    std::filesystem::create_directories(dir);
    auto out = open_for_write(dir / "metrics.csv");
    out << "metric,value\n";
    for (const auto& row : metric_rows(summary)) out << fmt::format("{},{}\n", row.name, row.value);
}

MetricsSummary metrics_from_directory(const std::filesystem::path& dir, double threshold_mph) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(open_for_read(dir / "run.json"));
    } catch (const nlohmann::json::exception& e) {
        throw Error("parse_error", fmt::format("{}: {}", (dir / "run.json").string(), e.what()));
    }
    const double dt_hours = meta.value("dt_seconds", 0.0) / 3600.0;
    const std::size_t steps = meta.value("steps", std::size_t{0});

    std::map<std::string, LinkTrace> traces;
    std::map<std::string, int> lanes;
    std::vector<std::string> order;
    {
        auto in = open_for_read(dir / "links.csv");
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            const auto f = split_csv(line);
            if (f.size() != 5) throw Error("parse_error", fmt::format("{}: malformed row", (dir / "links.csv").string()));
            LinkTrace trace;
            auto role = parse_link_role(f[1]);
            auto group = parse_lane_group(f[2]);
            if (!role || !group) throw Error("parse_error", fmt::format("{}: unknown role or lane group", (dir / "links.csv").string()));
            trace.role = *role;
            trace.lane_group = *group;
            trace.length = std::stod(f[3]);
            trace.density.assign(steps, 0.0);
            trace.speed.assign(steps, 0.0);
            lanes[f[0]] = std::stoi(f[4]);
            traces[f[0]] = std::move(trace);
            order.push_back(f[0]);
        }
    }
    auto load = [&](const char* name, bool density) {
        auto in = open_for_read(dir / name);
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            const auto f = split_csv(line);
            if (f.size() != 4) throw Error("parse_error", fmt::format("{}: malformed row", (dir / name).string()));
            const auto t = static_cast<std::size_t>(std::llround(std::stod(f[0]) / (dt_hours * 3600.0)));
            auto it = traces.find(f[1]);
            if (it == traces.end() || t >= steps) continue;
            const double value = std::stod(f[3]);
            if (density) it->second.density[t] = value * lanes[f[1]];
            else it->second.speed[t] = value;
        }
    };
    load("density.csv", true);
    load("speed.csv", false);

    std::vector<LinkTrace> ordered;
    for (const auto& id : order) ordered.push_back(std::move(traces[id]));
    return compute_metrics(ordered, dt_hours, threshold_mph);
}

}  // namespace mlsim
