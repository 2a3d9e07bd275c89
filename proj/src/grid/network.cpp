#include "dnr/grid/network.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dnr/error.hpp"

namespace dnr::grid {

using nlohmann::json;

Network::Network(std::string name, double s_base_mva, double v_base_kv, std::vector<Bus> buses,
                 std::vector<Branch> branches)
    : name_(std::move(name)),
      s_base_mva_(s_base_mva),
      v_base_kv_(v_base_kv),
      buses_(std::move(buses)),
      branches_(std::move(branches)) {
    validate();
    for (const auto& b : buses_) {
        (b.kind == BusKind::Substation ? substations_ : loads_).push_back(b.id);
    }
}

void Network::validate() const {
    if (!(s_base_mva_ > 0.0) || !std::isfinite(s_base_mva_))
        throw ValidationError("s_base_mva must be positive");
    bool has_substation = false;
    for (std::size_t k = 0; k < buses_.size(); ++k) {
        if (buses_[k].id != static_cast<int>(k))
            throw ValidationError("bus ids must be 0..n-1 in order; bus " + std::to_string(k) +
                                  " has id " + std::to_string(buses_[k].id));
        has_substation |= buses_[k].kind == BusKind::Substation;
    }
    if (!has_substation) throw ValidationError("network has no substation bus");
    const int n = static_cast<int>(buses_.size());
    for (std::size_t k = 0; k < branches_.size(); ++k) {
        const auto& br = branches_[k];
        const std::string where = "branch " + std::to_string(k);
        if (br.id != static_cast<int>(k))
            throw ValidationError(where + ": ids must be 0..m-1 and unique");
        if (br.from < 0 || br.from >= n || br.to < 0 || br.to >= n)
            throw ValidationError(where + ": references a bus that does not exist (" +
                                  std::to_string(br.from) + " -> " + std::to_string(br.to) + ")");
        if (br.from == br.to) throw ValidationError(where + ": self loop");
        if (!std::isfinite(br.r_pu) || !std::isfinite(br.x_pu) || br.r_pu < 0.0 || br.x_pu < 0.0)
            throw ValidationError(where + ": impedance must be finite and non-negative");
    }
}

int Network::bus_by_label(int label) const {
    for (const auto& b : buses_)
        if (b.label == label) return b.id;
    throw ValidationError("no bus with label " + std::to_string(label));
}

Network Network::with_scaled_impedances(const std::vector<double>& r_factor,
                                        const std::vector<double>& x_factor) const {
    require(r_factor.size() == branches_.size() && x_factor.size() == branches_.size(),
            "impedance factor vectors must have one entry per branch");
    auto scaled = branches_;
    for (std::size_t k = 0; k < scaled.size(); ++k) {
        scaled[k].r_pu *= r_factor[k];
        scaled[k].x_pu *= x_factor[k];
    }
    Network out(name_, s_base_mva_, v_base_kv_, buses_, std::move(scaled));
    out.switch_cost = switch_cost;
    out.solar_labels = solar_labels;
    return out;
}

namespace {

int line_of_offset(std::string_view text, std::size_t offset) {
    int line = 1;
    for (std::size_t k = 0; k < offset && k < text.size(); ++k)
        if (text[k] == '\n') ++line;
    return line;
}

template <class T>
T field(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(where + ": missing field \"" + key + "\"");
    try {
        return it->get<T>();
    } catch (const json::exception& e) {
        throw ParseError(where + "." + key + ": " + e.what());
    }
}

template <class T>
T field_or(const json& obj, const char* key, T fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    return field<T>(obj, key, where);
}

}  // namespace

Network parse_feeder(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ParseError("feeder document, line " + std::to_string(line_of_offset(text, e.byte)) +
                         ": " + e.what());
    }
    if (!doc.is_object()) throw ParseError("feeder document: top level must be an object");

    const auto s_base = field<double>(doc, "s_base_mva", "feeder");
    const auto v_base = field_or<double>(doc, "v_base_kv", 1.0, "feeder");
    const auto name = field_or<std::string>(doc, "name", "feeder", "feeder");

    if (!doc.contains("buses") || !doc["buses"].is_array())
        throw ParseError("feeder: \"buses\" must be an array");
    if (!doc.contains("branches") || !doc["branches"].is_array())
        throw ParseError("feeder: \"branches\" must be an array");

    std::vector<Bus> buses;
    for (std::size_t k = 0; k < doc["buses"].size(); ++k) {
        const auto& jb = doc["buses"][k];
        const std::string where = "buses[" + std::to_string(k) + "]";
        Bus b;
        b.id = field<int>(jb, "id", where);
        b.label = field_or<int>(jb, "label", b.id, where);
        const auto kind = field<std::string>(jb, "kind", where);
        if (kind == "substation")
            b.kind = BusKind::Substation;
        else if (kind == "load")
            b.kind = BusKind::Load;
        else
            throw ParseError(where + ".kind: unknown bus kind \"" + kind + "\"");
        b.nominal_p_kw = field_or<double>(jb, "p_kw", 0.0, where);
        b.nominal_q_kvar = field_or<double>(jb, "q_kvar", 0.0, where);
        buses.push_back(b);
    }

    std::vector<Branch> branches;
    for (std::size_t k = 0; k < doc["branches"].size(); ++k) {
        const auto& jb = doc["branches"][k];
        const std::string where = "branches[" + std::to_string(k) + "]";
        Branch br;
        br.id = field<int>(jb, "id", where);
        br.from = field<int>(jb, "from", where);
        br.to = field<int>(jb, "to", where);
        br.r_pu = field<double>(jb, "r_pu", where);
        br.x_pu = field<double>(jb, "x_pu", where);
        br.switchable = field_or<bool>(jb, "switchable", true, where);
        br.initially_closed = field_or<bool>(jb, "closed", true, where);
        branches.push_back(br);
    }

    Network net(name, s_base, v_base, std::move(buses), std::move(branches));
    net.switch_cost = field_or<double>(doc, "switch_cost", 0.0, "feeder");
    net.solar_labels = field_or<std::vector<int>>(doc, "solar_buses", {}, "feeder");
    for (int label : net.solar_labels) net.bus_by_label(label);
    return net;
}

Network load_feeder(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open feeder file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_feeder(ss.str());
}

std::string feeder_to_json(const Network& net) {
    json doc;
    doc["name"] = net.name();
    doc["s_base_mva"] = net.s_base_mva();
    doc["v_base_kv"] = net.v_base_kv();
    doc["switch_cost"] = net.switch_cost;
    doc["solar_buses"] = net.solar_labels;
    doc["buses"] = json::array();
    for (const auto& b : net.buses()) {
        doc["buses"].push_back({{"id", b.id},
                                {"label", b.label},
                                {"kind", b.kind == BusKind::Substation ? "substation" : "load"},
                                {"p_kw", b.nominal_p_kw},
                                {"q_kvar", b.nominal_q_kvar}});
    }
    doc["branches"] = json::array();
    for (const auto& br : net.branches()) {
        doc["branches"].push_back({{"id", br.id},
                                   {"from", br.from},
                                   {"to", br.to},
                                   {"r_pu", br.r_pu},
                                   {"x_pu", br.x_pu},
                                   {"switchable", br.switchable},
                                   {"closed", br.initially_closed}});
    }
    return doc.dump(1);
}

}  // namespace dnr::grid
