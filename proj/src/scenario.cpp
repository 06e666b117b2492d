#include "mlsim/scenario.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace mlsim {

using nlohmann::json;

std::size_t SimConfig::interval_steps() const {
    const double ratio = interval_minutes * 60.0 / dt_seconds;
    const double rounded = std::round(ratio);
    if (!(dt_seconds > 0) || rounded < 1 || std::abs(ratio - rounded) > 1e-9 * ratio)
        throw Error("interval_alignment",
                    fmt::format("interval of {} min is not a whole number of {} s steps", interval_minutes, dt_seconds));
    return static_cast<std::size_t>(rounded);
}

namespace {

// Field access with error messages that name the file and the field path.
class Reader {
public:
    explicit Reader(std::string origin) : origin_(std::move(origin)) {}

    [[noreturn]] void fail(const std::string& where, const std::string& what) const {
        throw Error("invalid_scenario", fmt::format("{}: {}: {}", origin_, where, what));
    }

    const json& field(const json& obj, const char* key, const std::string& where) const {
        if (!obj.is_object()) fail(where, "expected an object");
        auto it = obj.find(key);
        if (it == obj.end()) fail(where + "." + key, "missing required field");
        return *it;
    }

    double number(const json& obj, const char* key, const std::string& where) const {
        const json& v = field(obj, key, where);
        if (!v.is_number()) fail(where + "." + key, "expected a number");
        return v.get<double>();
    }

    double number_or(const json& obj, const char* key, const std::string& where, double fallback) const {
        return obj.contains(key) ? number(obj, key, where) : fallback;
    }

    std::string text(const json& obj, const char* key, const std::string& where) const {
        const json& v = field(obj, key, where);
        if (!v.is_string()) fail(where + "." + key, "expected a string");
        return v.get<std::string>();
    }

    bool flag_or(const json& obj, const char* key, const std::string& where, bool fallback) const {
        if (!obj.contains(key)) return fallback;
        const json& v = obj.at(key);
        if (!v.is_boolean()) fail(where + "." + key, "expected true or false");
        return v.get<bool>();
    }

    const json& array(const json& obj, const char* key, const std::string& where) const {
        const json& v = field(obj, key, where);
        if (!v.is_array()) fail(where + "." + key, "expected an array");
        return v;
    }

    std::vector<double> numbers(const json& v, const std::string& where) const {
        if (!v.is_array()) fail(where, "expected an array of numbers");
        std::vector<double> out;
        for (const auto& x : v) {
            if (!x.is_number()) fail(where, "expected an array of numbers");
            out.push_back(x.get<double>());
        }
        return out;
    }

    std::vector<std::string> strings(const json& v, const std::string& where) const {
        if (!v.is_array()) fail(where, "expected an array of strings");
        std::vector<std::string> out;
        for (const auto& x : v) {
            if (!x.is_string()) fail(where, "expected an array of strings");
            out.push_back(x.get<std::string>());
        }
        return out;
    }

    const std::string& origin() const { return origin_; }

private:
    std::string origin_;
};

json parse_json(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error("parse_error", fmt::format("{}: malformed file: {}", origin, e.what()));
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io_error", fmt::format("{}: cannot open file", path.string()));
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

FundamentalDiagram read_fd(const Reader& r, const json& obj, const std::string& where) {
    return {r.number(obj, "capacity", where), r.number(obj, "free_flow_speed", where),
            r.number(obj, "congestion_wave_speed", where), r.number(obj, "jam_density", where)};
}

Link read_link(const Reader& r, const json& obj, const std::string& where) {
    Link link;
    link.id = r.text(obj, "id", where);
    const std::string at = fmt::format("links[{}]", link.id);
    const auto role = parse_link_role(r.text(obj, "role", at));
    if (!role) r.fail(at + ".role", "expected ordinary, origin or destination");
    link.role = *role;
    const auto group = parse_lane_group(r.text(obj, "lane_group", at));
    if (!group) r.fail(at + ".lane_group", "expected gp, managed, onramp, offramp or auxiliary");
    link.lane_group = *group;
    link.length = r.number(obj, "length", at);
    const double lanes = r.number(obj, "lanes", at);
    if (lanes != std::floor(lanes) || lanes < 1) r.fail(at + ".lanes", "expected a positive whole number");
    link.lanes = static_cast<int>(lanes);
    link.fd = read_fd(r, r.field(obj, "fd", at), at + ".fd");
    link.friction = r.number_or(obj, "friction", at, 0.0);
    if (obj.contains("gp_partner")) link.gp_partner = r.text(obj, "gp_partner", at);
    return link;
}

Node read_node(const Reader& r, const json& obj, const std::string& where) {
    Node node;
    node.id = r.text(obj, "id", where);
    const std::string at = fmt::format("nodes[{}]", node.id);
    node.inputs = r.strings(r.field(obj, "inputs", at), at + ".inputs");
    node.outputs = r.strings(r.field(obj, "outputs", at), at + ".outputs");
    if (obj.contains("priorities")) node.priorities = r.numbers(obj.at("priorities"), at + ".priorities");
    node.is_gate = r.flag_or(obj, "gate", at, false);
    if (obj.contains("restrictions")) {
        for (const auto& e : r.array(obj, "restrictions", at)) {
            const std::string w = at + ".restrictions";
            node.restrictions.push_back(
                {r.text(e, "input", w), r.text(e, "restricting", w), r.text(e, "restricted", w), r.number(e, "eta", w)});
        }
    }
    if (obj.contains("splits")) {
        for (const auto& e : r.array(obj, "splits", at)) {
            const std::string w = at + ".splits";
            node.known_splits.push_back(
                {r.text(e, "input", w), r.text(e, "output", w), r.text(e, "class", w), r.number(e, "value", w)});
        }
    }
    return node;
}

Scenario read_scenario(const json& doc, const Reader& r) {
    Scenario s;
    if (!doc.is_object()) r.fail("<root>", "expected an object");
    if (doc.contains("name")) s.name = r.text(doc, "name", "<root>");

    const json& sim = r.field(doc, "sim", "<root>");
    s.config.dt_seconds = r.number(sim, "dt_seconds", "sim");
    if (!(s.config.dt_seconds > 0)) r.fail("sim.dt_seconds", "must be positive");
    const double steps = r.number(sim, "steps", "sim");
    if (steps < 0 || steps != std::floor(steps)) r.fail("sim.steps", "expected a non-negative whole number");
    s.config.steps = static_cast<std::size_t>(steps);
    s.config.interval_minutes = r.number_or(sim, "interval_minutes", "sim", 5.0);
    if (!(s.config.interval_minutes > 0)) r.fail("sim.interval_minutes", "must be positive");
    s.config.enable_friction = r.flag_or(sim, "enable_friction", "sim", true);

    s.eligible_fraction = r.number_or(doc, "eligible_fraction", "<root>", 0.15);
    if (!(s.eligible_fraction >= 0 && s.eligible_fraction <= 1)) r.fail("eligible_fraction", "must lie in [0,1]");

    std::vector<VehicleClass> classes;
    for (const auto& c : r.array(doc, "classes", "<root>")) {
        VehicleClass cls;
        cls.name = r.text(c, "name", "classes");
        const auto kind = parse_class_kind(r.text(c, "kind", "classes[" + cls.name + "]"));
        if (!kind) r.fail("classes[" + cls.name + "].kind", "expected gp_only, eligible or destination");
        cls.kind = *kind;
        if (cls.kind == ClassKind::destination)
            cls.slot = static_cast<int>(r.number(c, "slot", "classes[" + cls.name + "]"));
        classes.push_back(cls);
    }

    std::vector<Link> links;
    for (const auto& l : r.array(doc, "links", "<root>")) links.push_back(read_link(r, l, "links"));
    std::vector<Node> nodes;
    for (const auto& n : r.array(doc, "nodes", "<root>")) nodes.push_back(read_node(r, n, "nodes"));
    s.network = Network(std::move(classes), std::move(links), std::move(nodes));

    if (doc.contains("demands")) {
        for (const auto& d : r.array(doc, "demands", "<root>")) {
            DemandProfile p;
            p.link = r.text(d, "link", "demands");
            const std::string at = "demands[" + p.link + "]";
            if (d.contains("flows")) p.total.values = r.numbers(d.at("flows"), at + ".flows");
            if (d.contains("eligible_fraction")) p.eligible_fraction = r.number(d, "eligible_fraction", at);
            if (d.contains("per_class")) {
                const json& pc = d.at("per_class");
                if (!pc.is_object()) r.fail(at + ".per_class", "expected an object");
                for (const auto& [name, series] : pc.items())
                    p.per_class[name].values = r.numbers(series, at + ".per_class." + name);
            }
            if (!d.contains("flows") && !d.contains("per_class")) r.fail(at + ".flows", "missing required field");
            s.demands.push_back(std::move(p));
        }
    }
    if (doc.contains("initial_densities")) {
        for (const auto& e : r.array(doc, "initial_densities", "<root>"))
            s.initial_densities.push_back({r.text(e, "link", "initial_densities"), r.text(e, "class", "initial_densities"),
                                           r.number(e, "value", "initial_densities")});
    }
    if (doc.contains("offramp_splits")) {
        const json& o = doc.at("offramp_splits");
        if (!o.is_object()) r.fail("offramp_splits", "expected an object");
        for (const auto& [id, series] : o.items()) s.offramp_splits[id].values = r.numbers(series, "offramp_splits." + id);
    }
    if (doc.contains("gate_shares")) {
        const json& g = doc.at("gate_shares");
        if (!g.is_object()) r.fail("gate_shares", "expected an object");
        for (const auto& [id, shares] : g.items()) s.gate_shares[id] = r.numbers(shares, "gate_shares." + id);
    }
    return s;
}

json write_scenario(const Scenario& s) {
    json doc;
    doc["name"] = s.name;
    doc["sim"] = {{"dt_seconds", s.config.dt_seconds},
                  {"steps", s.config.steps},
                  {"interval_minutes", s.config.interval_minutes},
                  {"enable_friction", s.config.enable_friction}};
    doc["eligible_fraction"] = s.eligible_fraction;

    json classes = json::array();
    for (const auto& c : s.network.classes()) {
        json e = {{"name", c.name}, {"kind", std::string(to_string(c.kind))}};
        if (c.kind == ClassKind::destination) e["slot"] = c.slot;
        classes.push_back(e);
    }
    doc["classes"] = classes;

    json links = json::array();
    for (const auto& l : s.network.links()) {
        json e = {{"id", l.id},
                  {"role", std::string(to_string(l.role))},
                  {"lane_group", std::string(to_string(l.lane_group))},
                  {"length", l.length},
                  {"lanes", l.lanes},
                  {"fd",
                   {{"capacity", l.fd.capacity},
                    {"free_flow_speed", l.fd.free_flow_speed},
                    {"congestion_wave_speed", l.fd.congestion_wave_speed},
                    {"jam_density", l.fd.jam_density}}},
                  {"friction", l.friction}};
        if (l.gp_partner) e["gp_partner"] = *l.gp_partner;
        links.push_back(e);
    }
    doc["links"] = links;

    json nodes = json::array();
    for (const auto& n : s.network.nodes()) {
        json e = {{"id", n.id}, {"inputs", n.inputs}, {"outputs", n.outputs}, {"gate", n.is_gate}};
        if (!n.priorities.empty()) e["priorities"] = n.priorities;
        if (!n.restrictions.empty()) {
            json rs = json::array();
            for (const auto& r : n.restrictions)
                rs.push_back({{"input", r.input}, {"restricting", r.restricting}, {"restricted", r.restricted}, {"eta", r.eta}});
            e["restrictions"] = rs;
        }
        if (!n.known_splits.empty()) {
            json ks = json::array();
            for (const auto& k : n.known_splits)
                ks.push_back({{"input", k.input}, {"output", k.output}, {"class", k.vehicle_class}, {"value", k.value}});
            e["splits"] = ks;
        }
        nodes.push_back(e);
    }
    doc["nodes"] = nodes;

    json demands = json::array();
    for (const auto& d : s.demands) {
        json e = {{"link", d.link}};
        if (!d.total.values.empty() || d.per_class.empty()) e["flows"] = d.total.values;
        if (d.eligible_fraction) e["eligible_fraction"] = *d.eligible_fraction;
        if (!d.per_class.empty()) {
            json pc = json::object();
            for (const auto& [name, series] : d.per_class) pc[name] = series.values;
            e["per_class"] = pc;
        }
        demands.push_back(e);
    }
    doc["demands"] = demands;

    json init = json::array();
    for (const auto& i : s.initial_densities) init.push_back({{"link", i.link}, {"class", i.vehicle_class}, {"value", i.value}});
    doc["initial_densities"] = init;

    json splits = json::object();
    for (const auto& [id, series] : s.offramp_splits) splits[id] = series.values;
    doc["offramp_splits"] = splits;

    json shares = json::object();
    for (const auto& [id, values] : s.gate_shares) shares[id] = values;
    doc["gate_shares"] = shares;
    return doc;
}

}  // namespace

ValidationReport check_scenario(const Scenario& s) {
    ValidationReport report = validate_network(s.network);
    const auto cfl = check_cfl(s.network, s.config.dt_hours());
    report.issues.insert(report.issues.end(), cfl.issues.begin(), cfl.issues.end());
    auto error = [&](std::string subject, std::string message) {
        report.issues.push_back({Severity::error, std::move(subject), std::move(message)});
    };
    auto warn = [&](std::string subject, std::string message) {
        report.issues.push_back({Severity::warning, std::move(subject), std::move(message)});
    };

    try {
        (void)s.config.interval_steps();
    } catch (const Error& e) {
        error("sim", e.what());
    }

    const Network& net = s.network;
    std::set<std::string> demand_links;
    for (const auto& d : s.demands) {
        auto l = net.link_index(d.link);
        if (!l || net.links()[*l].role != LinkRole::origin) error(d.link, "demand given for a link that is not an origin");
        if (!demand_links.insert(d.link).second) error(d.link, "demand given twice");
        auto negative = [](const IntervalSeries& series) {
            for (double v : series.values)
                if (!(v >= 0)) return true;
            return false;
        };
        if (negative(d.total)) error(d.link, "negative demand");
        for (const auto& [name, series] : d.per_class) {
            if (!net.class_index(name)) error(d.link, fmt::format("demand refers to unknown class '{}'", name));
            if (negative(series)) error(d.link, "negative demand");
        }
        if (d.eligible_fraction && !(*d.eligible_fraction >= 0 && *d.eligible_fraction <= 1))
            error(d.link, "eligible fraction outside [0,1]");
    }
    for (const auto& init : s.initial_densities) {
        if (!net.link_index(init.link) || !net.class_index(init.vehicle_class))
            error(init.link, "initial density refers to an unknown link or class");
        else if (!(init.value >= 0))
            error(init.link, "negative initial density");
    }

    for (std::size_t l = 0; l < net.links().size(); ++l) {
        const Link& link = net.links()[l];
        if (link.lane_group != LaneGroup::offramp) continue;
        if (!s.offramp_splits.count(link.id)) warn(link.id, "offramp has no split ratio series (treated as 0)");
    }
    for (const auto& [id, series] : s.offramp_splits) {
        auto l = net.link_index(id);
        if (!l || net.links()[*l].lane_group != LaneGroup::offramp) error(id, "split series given for a non-offramp link");
        for (double v : series.values)
            if (!(v >= 0 && v <= 1)) error(id, "offramp split ratio outside [0,1]");
    }

    try {
        const auto segments = gate_segments(net);
        if (required_destination_classes(segments) > net.destination_classes().size())
            error("classes", fmt::format("gated network needs {} destination classes, found {}",
                                         required_destination_classes(segments), net.destination_classes().size()));
        for (const auto& [gate, shares] : s.gate_shares) {
            auto it = segments.find(gate);
            if (it == segments.end()) {
                error(gate, "gate shares given for a node that starts no gate segment");
                continue;
            }
            double sum = 0;
            for (double v : shares) {
                if (!(v >= 0)) error(gate, "invalid switching shares");
                sum += v;
            }
            if (sum > 1 + 1e-12) error(gate, "invalid switching shares");
            if (shares.size() > it->second.size()) error(gate, "more switching shares than offramps in the segment");
        }
    } catch (const Error& e) {
        error("gates", e.what());
    }
    return report;
}

Scenario parse_scenario(const std::string& text, const std::string& origin) {
    const Reader reader(origin);
    Scenario s = read_scenario(parse_json(text, origin), reader);
    const ValidationReport report = check_scenario(s);
    for (const auto& issue : report.issues)
        if (issue.severity == Severity::error)
            throw Error("invalid_scenario", fmt::format("{}: {}: {}", origin, issue.subject, issue.message));
    return s;
}

Scenario load_scenario(const std::filesystem::path& path) { return parse_scenario(read_file(path), path.string()); }

std::string dump_scenario(const Scenario& scenario) { return write_scenario(scenario).dump(2) + "\n"; }

void save_scenario(const Scenario& scenario, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io_error", fmt::format("{}: cannot write file", path.string()));
    out << dump_scenario(scenario);
}

CalibrationTargets parse_targets(const std::string& text, const std::string& origin) {
    const Reader r(origin);
    const json doc = parse_json(text, origin);
    CalibrationTargets t;
    t.interval_minutes = r.number_or(doc, "interval_minutes", "<root>", 5.0);
    if (!(t.interval_minutes > 0)) r.fail("interval_minutes", "must be positive");
    for (const auto& e : r.array(doc, "offramps", "<root>")) {
        OfframpTarget target;
        target.link = r.text(e, "link", "offramps");
        target.flows.values = r.numbers(r.field(e, "flows", "offramps[" + target.link + "]"),
                                        "offramps[" + target.link + "].flows");
        for (double v : target.flows.values)
            if (!(v >= 0)) r.fail("offramps[" + target.link + "].flows", "negative target flow");
        t.offramps.push_back(std::move(target));
    }
    return t;
}

CalibrationTargets load_targets(const std::filesystem::path& path) { return parse_targets(read_file(path), path.string()); }

std::string dump_targets(const CalibrationTargets& targets) {
    json doc;
    doc["interval_minutes"] = targets.interval_minutes;
    json offramps = json::array();
    for (const auto& o : targets.offramps) offramps.push_back({{"link", o.link}, {"flows", o.flows.values}});
    doc["offramps"] = offramps;
    return doc.dump(2) + "\n";
}

}  // namespace mlsim
