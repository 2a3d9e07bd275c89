#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dnr::grid {

enum class BusKind { Substation, Load };

struct Bus {
    int id = 0;
    int label = 0;  // numbering used by the source feeder description
    BusKind kind = BusKind::Load;
    double nominal_p_kw = 0.0;
    double nominal_q_kvar = 0.0;
};

struct Branch {
    int id = 0;
    int from = 0;
    int to = 0;
    double r_pu = 0.0;
    double x_pu = 0.0;
    bool switchable = true;
    bool initially_closed = true;
};

/// Static feeder description. Immutable once validated.
class Network {
public:
    Network() = default;
    Network(std::string name, double s_base_mva, double v_base_kv, std::vector<Bus> buses,
            std::vector<Branch> branches);

    const std::string& name() const { return name_; }
    double s_base_mva() const { return s_base_mva_; }
    double v_base_kv() const { return v_base_kv_; }

    const std::vector<Bus>& buses() const { return buses_; }
    const std::vector<Branch>& branches() const { return branches_; }
    const Bus& bus(int id) const { return buses_.at(static_cast<std::size_t>(id)); }
    const Branch& branch(int id) const { return branches_.at(static_cast<std::size_t>(id)); }

    std::size_t bus_count() const { return buses_.size(); }
    std::size_t branch_count() const { return branches_.size(); }
    std::size_t substation_count() const { return substations_.size(); }
    std::size_t load_count() const { return loads_.size(); }

    const std::vector<int>& substations() const { return substations_; }
    const std::vector<int>& load_buses() const { return loads_; }
    bool is_substation(int bus_id) const { return bus(bus_id).kind == BusKind::Substation; }

    /// Bus id from the source label; throws ValidationError if absent.
    int bus_by_label(int label) const;

    /// Copy with branch impedances multiplied elementwise.
    Network with_scaled_impedances(const std::vector<double>& r_factor,
                                   const std::vector<double>& x_factor) const;

    // Feeder metadata carried alongside the electrical model.
    double switch_cost = 0.0;
    std::vector<int> solar_labels;

private:
    void validate() const;

    std::string name_;
    double s_base_mva_ = 1.0;
    double v_base_kv_ = 1.0;
    std::vector<Bus> buses_;
    std::vector<Branch> branches_;
    std::vector<int> substations_;
    std::vector<int> loads_;
};

/// Parse the JSON feeder schema. Throws ParseError / ValidationError.
Network parse_feeder(std::string_view text);
Network load_feeder(const std::filesystem::path& path);
std::string feeder_to_json(const Network& net);

}  // namespace dnr::grid
