#include "mlsim/network.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

namespace mlsim {

namespace {

constexpr double sum_tolerance = 1e-9;
constexpr double friction_guidance = 0.4;

template <class Enum, std::size_t N>
std::optional<Enum> parse_enum(std::string_view text, const std::pair<Enum, std::string_view> (&table)[N]) {
    for (const auto& [value, name] : table)
        if (name == text) return value;
    return std::nullopt;
}

template <class Enum, std::size_t N>
std::string_view enum_name(Enum value, const std::pair<Enum, std::string_view> (&table)[N]) {
    for (const auto& [v, name] : table)
        if (v == value) return name;
    return "?";
}

constexpr std::pair<ClassKind, std::string_view> class_kinds[] = {
    {ClassKind::gp_only, "gp_only"},
    {ClassKind::eligible, "eligible"},
    {ClassKind::destination, "destination"},
};
constexpr std::pair<LinkRole, std::string_view> link_roles[] = {
    {LinkRole::ordinary, "ordinary"},
    {LinkRole::origin, "origin"},
    {LinkRole::destination, "destination"},
};
constexpr std::pair<LaneGroup, std::string_view> lane_groups[] = {
    {LaneGroup::gp, "gp"},
    {LaneGroup::managed, "managed"},
    {LaneGroup::onramp, "onramp"},
    {LaneGroup::offramp, "offramp"},
    {LaneGroup::auxiliary, "auxiliary"},
};

bool is_mainline_gp(LaneGroup group) { return group == LaneGroup::gp || group == LaneGroup::auxiliary; }

}  // namespace

std::string_view to_string(ClassKind kind) { return enum_name(kind, class_kinds); }
std::string_view to_string(LinkRole role) { return enum_name(role, link_roles); }
std::string_view to_string(LaneGroup group) { return enum_name(group, lane_groups); }
std::optional<ClassKind> parse_class_kind(std::string_view text) { return parse_enum(text, class_kinds); }
std::optional<LinkRole> parse_link_role(std::string_view text) { return parse_enum(text, link_roles); }
std::optional<LaneGroup> parse_lane_group(std::string_view text) { return parse_enum(text, lane_groups); }

Network::Network(std::vector<VehicleClass> classes, std::vector<Link> links, std::vector<Node> nodes)
    : classes_(std::move(classes)), links_(std::move(links)), nodes_(std::move(nodes)) {
    for (std::size_t c = 0; c < classes_.size(); ++c) class_ids_.emplace(classes_[c].name, c);
    for (std::size_t l = 0; l < links_.size(); ++l) link_ids_.emplace(links_[l].id, l);
    for (std::size_t n = 0; n < nodes_.size(); ++n) node_ids_.emplace(nodes_[n].id, n);

    upstream_.assign(links_.size(), std::nullopt);
    downstream_.assign(links_.size(), std::nullopt);
    for (std::size_t n = 0; n < nodes_.size(); ++n) {
        for (const auto& id : nodes_[n].inputs)
            if (auto l = link_index(id); l && !downstream_[*l]) downstream_[*l] = n;
        for (const auto& id : nodes_[n].outputs)
            if (auto l = link_index(id); l && !upstream_[*l]) upstream_[*l] = n;
    }
}

std::optional<std::size_t> Network::link_index(std::string_view id) const {
    auto it = link_ids_.find(id);
    return it == link_ids_.end() ? std::nullopt : std::optional(it->second);
}

std::optional<std::size_t> Network::node_index(std::string_view id) const {
    auto it = node_ids_.find(id);
    return it == node_ids_.end() ? std::nullopt : std::optional(it->second);
}

std::optional<std::size_t> Network::class_index(std::string_view name) const {
    auto it = class_ids_.find(name);
    return it == class_ids_.end() ? std::nullopt : std::optional(it->second);
}

std::optional<std::size_t> Network::eligible_class() const {
    for (std::size_t c = 0; c < classes_.size(); ++c)
        if (classes_[c].kind == ClassKind::eligible) return c;
    return std::nullopt;
}

std::vector<std::size_t> Network::destination_classes() const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < classes_.size(); ++c)
        if (classes_[c].kind == ClassKind::destination) out.push_back(c);
    return out;
}

bool ValidationReport::ok() const { return error_count() == 0; }

bool ValidationReport::has(std::string_view message) const {
    return std::any_of(issues.begin(), issues.end(),
                       [&](const Issue& i) { return i.message.find(message) != std::string::npos; });
}

std::size_t ValidationReport::error_count() const {
    return static_cast<std::size_t>(std::count_if(
        issues.begin(), issues.end(), [](const Issue& i) { return i.severity == Severity::error; }));
}

namespace {

class Reporter {
public:
    explicit Reporter(ValidationReport& report) : report_(report) {}

    void error(const std::string& subject, std::string message) {
        report_.issues.push_back({Severity::error, subject, std::move(message)});
    }
    void warning(const std::string& subject, std::string message) {
        report_.issues.push_back({Severity::warning, subject, std::move(message)});
    }

private:
    ValidationReport& report_;
};

void check_classes(const Network& net, Reporter& out) {
    const auto& classes = net.classes();
    if (classes.empty()) out.error("classes", "no vehicle classes defined");

    std::set<std::string> names;
    std::set<int> slots;
    int eligible = 0;
    for (const auto& cls : classes) {
        if (!names.insert(cls.name).second) out.error(cls.name, "duplicate class name");
        if (cls.kind == ClassKind::eligible) ++eligible;
        if (cls.kind == ClassKind::destination) {
            if (cls.slot < 1) out.error(cls.name, "destination class slot must be >= 1");
            else if (!slots.insert(cls.slot).second) out.error(cls.name, "duplicate destination slot");
        }
    }
    if (!classes.empty() && eligible != 1)
        out.error("classes", fmt::format("expected exactly one managed-eligible class, found {}", eligible));
}

void check_fd(const std::string& id, const FundamentalDiagram& fd, Reporter& out) {
    if (!(fd.capacity > 0)) out.error(id, "capacity must be positive");
    if (!(fd.free_flow_speed > 0)) out.error(id, "free-flow speed must be positive");
    if (!(fd.congestion_wave_speed > 0)) out.error(id, "congestion wave speed must be positive");
    if (!(fd.jam_density > 0)) out.error(id, "jam density must be positive");
    if (fd.capacity > 0 && fd.free_flow_speed > 0 && fd.congestion_wave_speed > 0 && fd.jam_density > 0) {
        const double lo = fd.low_critical_density();
        const double hi = fd.high_critical_density();
        if (lo > hi * (1 + 1e-12))
            out.error(id, fmt::format("low critical density {} exceeds high critical density {}", lo, hi));
        if (!(hi < fd.jam_density)) out.error(id, "high critical density must be below jam density");
    }
}

void check_links(const Network& net, Reporter& out) {
    std::set<std::string> ids;
    for (std::size_t l = 0; l < net.links().size(); ++l) {
        const auto& link = net.links()[l];
        if (!ids.insert(link.id).second) out.error(link.id, "duplicate link id");
        if (!(link.length > 0)) out.error(link.id, "length must be positive");
        if (link.lanes < 1) out.error(link.id, "lane count must be at least 1");
        check_fd(link.id, link.fd, out);

        const bool has_up = net.upstream_node(l).has_value();
        const bool has_down = net.downstream_node(l).has_value();
        switch (link.role) {
        case LinkRole::origin:
            if (has_up) out.error(link.id, "origin link has an upstream node");
            if (!has_down) out.error(link.id, "origin link has no downstream node");
            break;
        case LinkRole::destination:
            if (has_down) out.error(link.id, "destination link has a downstream node");
            if (!has_up) out.error(link.id, "destination link has no upstream node");
            break;
        case LinkRole::ordinary:
            if (!has_up || !has_down) out.error(link.id, "ordinary link must have both end nodes");
            break;
        }

        if (link.friction < 0 || link.friction > 1) out.error(link.id, "friction coefficient outside [0,1]");
        if (link.lane_group != LaneGroup::managed && link.friction != 0)
            out.error(link.id, "friction coefficient set on a non-managed link");
        if (link.lane_group == LaneGroup::managed && link.friction > friction_guidance)
            out.warning(link.id, fmt::format("friction coefficient {} exceeds suggested bound {}", link.friction,
                                             friction_guidance));

        if (link.gp_partner) {
            auto partner = net.link_index(*link.gp_partner);
            if (!partner) {
                out.error(link.id, fmt::format("unknown gp partner '{}'", *link.gp_partner));
            } else {
                const auto& p = net.links()[*partner];
                if (!is_mainline_gp(p.lane_group)) out.error(link.id, "gp partner is not a GP link");
                if (net.upstream_node(*partner) != net.upstream_node(l) ||
                    net.downstream_node(*partner) != net.downstream_node(l))
                    out.error(link.id, "gp partner is not parallel (different end nodes)");
            }
        }
    }
}

void check_nodes(const Network& net, Reporter& out) {
    std::set<std::string> ids;
    std::map<std::string, int> as_input;
    std::map<std::string, int> as_output;

    for (const auto& node : net.nodes()) {
        if (!ids.insert(node.id).second) out.error(node.id, "duplicate node id");
        if (node.inputs.empty()) out.error(node.id, "node without incoming link");
        if (node.outputs.empty()) out.error(node.id, "node without outgoing link");

        for (const auto& id : node.inputs) {
            if (!net.link_index(id)) out.error(node.id, fmt::format("unknown input link '{}'", id));
            if (++as_input[id] == 2) out.error(id, "link is an input of more than one node");
        }
        for (const auto& id : node.outputs) {
            if (!net.link_index(id)) out.error(node.id, fmt::format("unknown output link '{}'", id));
            if (++as_output[id] == 2) out.error(id, "link is an output of more than one node");
        }

        if (!node.priorities.empty()) {
            if (node.priorities.size() != node.inputs.size()) {
                out.error(node.id, "priority count does not match input count");
            } else {
                double sum = 0;
                for (double p : node.priorities) {
                    if (p < 0) out.error(node.id, "negative priority");
                    sum += p;
                }
                if (std::abs(sum - 1.0) > sum_tolerance) out.error(node.id, "priorities do not sum to 1");
            }
        }

        auto in_list = [](const std::vector<std::string>& v, const std::string& id) {
            return std::find(v.begin(), v.end(), id) != v.end();
        };
        for (const auto& r : node.restrictions) {
            if (!in_list(node.inputs, r.input) || !in_list(node.outputs, r.restricting) ||
                !in_list(node.outputs, r.restricted))
                out.error(node.id, "restriction refers to a link not attached to the node");
            if (!(r.eta >= 0 && r.eta <= 1)) out.error(node.id, "restriction coefficient outside [0,1]");
        }

        // (input, class) -> (sum, number of outputs given)
        std::map<std::pair<std::string, std::string>, std::pair<double, std::set<std::string>>> rows;
        for (const auto& s : node.known_splits) {
            if (!in_list(node.inputs, s.input) || !in_list(node.outputs, s.output))
                out.error(node.id, "known split refers to a link not attached to the node");
            if (!net.class_index(s.vehicle_class))
                out.error(node.id, fmt::format("known split refers to unknown class '{}'", s.vehicle_class));
            if (!(s.value >= 0 && s.value <= 1)) out.error(node.id, "known split outside [0,1]");
            auto& row = rows[{s.input, s.vehicle_class}];
            row.first += s.value;
            if (!row.second.insert(s.output).second) out.error(node.id, "known split given twice");
        }
        for (const auto& [key, row] : rows) {
            const bool complete = row.second.size() == node.outputs.size();
            if (complete && std::abs(row.first - 1.0) > sum_tolerance)
                out.error(node.id, fmt::format("split ratios do not sum to 1 for input '{}' class '{}' (sum {})",
                                               key.first, key.second, row.first));
            if (!complete && row.first > 1.0 + sum_tolerance)
                out.error(node.id, fmt::format("split ratios exceed 1 for input '{}' class '{}'", key.first,
                                               key.second));
        }
    }
}

}  // namespace

ValidationReport validate_network(const Network& network) {
    ValidationReport report;
    Reporter out(report);
    check_classes(network, out);
    check_links(network, out);
    check_nodes(network, out);
    return report;
}

ValidationReport check_cfl(const Network& network, double dt) {
    ValidationReport report;
    Reporter out(report);
    if (!(dt > 0)) {
        out.error("dt", "time step must be positive");
        return report;
    }
    for (const auto& link : network.links()) {
        if (link.role == LinkRole::origin) continue;
        const double ff = link.fd.free_flow_speed * dt;
        const double wave = link.fd.congestion_wave_speed * dt;
        if (ff > link.length)
            out.error(link.id, fmt::format("CFL violated: free-flow displacement {} mi exceeds length {} mi", ff,
                                           link.length));
        if (wave > link.length)
            out.error(link.id, fmt::format("CFL violated: wave displacement {} mi exceeds length {} mi", wave,
                                           link.length));
    }
    return report;
}

namespace {

std::optional<std::size_t> first_output(const Network& net, const Node& node, bool (*pred)(LaneGroup)) {
    for (const auto& id : node.outputs)
        if (auto l = net.link_index(id); l && pred(net.links()[*l].lane_group)) return l;
    return std::nullopt;
}

bool is_managed(LaneGroup g) { return g == LaneGroup::managed; }
bool is_gp(LaneGroup g) { return g == LaneGroup::gp; }
bool is_gp_or_aux(LaneGroup g) { return is_mainline_gp(g); }

}  // namespace

GateSegments gate_segments(const Network& network) {
    GateSegments segments;
    const auto& nodes = network.nodes();

    for (std::size_t g = 0; g < nodes.size(); ++g) {
        const Node& gate = nodes[g];
        if (!gate.is_gate) continue;
        auto ml = first_output(network, gate, is_managed);
        if (!ml) continue;  // managed lane ends here

        // The managed chain decides where the segment ends.
        std::optional<std::size_t> end_gate;
        std::set<std::size_t> seen;
        for (auto link = ml; link;) {
            auto n = network.downstream_node(*link);
            if (!n || !seen.insert(*n).second) break;
            if (nodes[*n].is_gate) {
                end_gate = n;
                break;
            }
            link = first_output(network, nodes[*n], is_managed);
        }
        if (!end_gate) throw Error("unterminated_gate_segment", fmt::format("unterminated gate segment at '{}'", gate.id));

        auto& offramps = segments[gate.id];
        auto gp = first_output(network, gate, is_gp);
        if (!gp) gp = first_output(network, gate, is_gp_or_aux);
        seen.clear();
        for (auto link = gp; link;) {
            auto n = network.downstream_node(*link);
            if (!n || *n == *end_gate || !seen.insert(*n).second) break;
            for (const auto& id : nodes[*n].outputs) {
                auto o = network.link_index(id);
                if (o && network.links()[*o].lane_group == LaneGroup::offramp) offramps.push_back(id);
            }
            auto next = first_output(network, nodes[*n], is_gp);
            link = next ? next : first_output(network, nodes[*n], is_gp_or_aux);
        }
    }
    return segments;
}

std::size_t required_destination_classes(const GateSegments& segments) {
    std::size_t most = 0;
    for (const auto& [gate, offramps] : segments) most = std::max(most, offramps.size());
    return most;
}

}  // namespace mlsim
