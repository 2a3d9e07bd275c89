#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include <gmpxx.h>

#include "dnr/grid/network.hpp"

namespace dnr::topo {

/// Branch status vector; bit k = 1 means branch k is closed.
class Configuration {
public:
    Configuration() = default;
    explicit Configuration(std::size_t branch_count, bool closed = false)
        : bits_(branch_count, closed ? 1 : 0) {}

    /// Configuration given by the feeder's "closed" flags (all ties open).
    static Configuration initial(const grid::Network& net);
    /// Parse a string of '0'/'1' characters, branch 0 first.
    static Configuration from_string(const std::string& bits);

    std::size_t size() const { return bits_.size(); }
    bool closed(int branch) const { return bits_.at(static_cast<std::size_t>(branch)) != 0; }
    void set(int branch, bool closed) { bits_.at(static_cast<std::size_t>(branch)) = closed ? 1 : 0; }
    std::size_t closed_count() const;
    /// |a - b|_1 over the status bits.
    std::size_t distance(const Configuration& other) const;

    const std::vector<std::uint8_t>& bits() const { return bits_; }
    std::string to_string() const;

    friend bool operator==(const Configuration&, const Configuration&) = default;
    friend auto operator<=>(const Configuration&, const Configuration&) = default;

private:
    std::vector<std::uint8_t> bits_;
};

/// A branch exchange: close `close`, open `open`. close == open encodes "stay".
struct SwitchPair {
    int close = 0;
    int open = 0;

    bool is_stay() const { return close == open; }
    friend bool operator==(const SwitchPair&, const SwitchPair&) = default;
    friend auto operator<=>(const SwitchPair&, const SwitchPair&) = default;
};

/// Closed-branch forest of a radial configuration, rooted at the substations.
struct RadialForest {
    std::vector<int> parent_bus;     // -1 at substations
    std::vector<int> parent_branch;  // branch linking a bus to its parent, -1 at substations
    std::vector<int> depth;          // 0 at substations
    std::vector<int> root;           // substation owning each bus
    std::vector<int> order;          // breadth-first order, parents before children
};

/// True iff the closed branches form one tree per substation covering every bus.
bool is_radial(const grid::Network& net, const Configuration& config);

/// Throws ContractViolation when the configuration is not radial.
RadialForest build_forest(const grid::Network& net, const Configuration& config);

/// Feasible branch-exchange table M (m x m, row = branch to close, column = branch to open).
class SwitchPairMask {
public:
    SwitchPairMask() = default;
    explicit SwitchPairMask(std::size_t m) : m_(m), cells_(m * m, 0) {}

    std::size_t size() const { return m_; }
    bool operator()(int i, int j) const {
        return cells_[static_cast<std::size_t>(i) * m_ + static_cast<std::size_t>(j)] != 0;
    }
    bool allows(const SwitchPair& a) const { return (*this)(a.close, a.open); }
    void set(int i, int j, bool on) {
        cells_[static_cast<std::size_t>(i) * m_ + static_cast<std::size_t>(j)] = on ? 1 : 0;
    }
    /// Row-major flattened cells, length m*m.
    const std::vector<std::uint8_t>& cells() const { return cells_; }

    std::size_t feasible_count() const;
    /// Feasible pairs in lexicographic (close, open) order.
    std::vector<SwitchPair> feasible_pairs() const;
    /// Branches that have a non-empty row.
    std::vector<int> closeable() const;

    friend bool operator==(const SwitchPairMask&, const SwitchPairMask&) = default;

private:
    std::size_t m_ = 0;
    std::vector<std::uint8_t> cells_;
};

/// Enumerates, for each open switchable branch, the branches on its fundamental cycle.
SwitchPairMask switch_pair_mask(const grid::Network& net, const Configuration& config);

/// Applies an exchange that must be feasible under `mask`; throws RejectedAction otherwise.
Configuration apply_pair(const SwitchPairMask& mask, const Configuration& config,
                         const SwitchPair& pair);
Configuration apply_pair(const grid::Network& net, const Configuration& config,
                         const SwitchPair& pair);

/// The canonical "stay" cell: diagonal of the lowest-index closeable branch.
SwitchPair canonical_stay(const SwitchPairMask& mask);

/// Number of radial configurations (spanning forests with one substation per tree),
/// via the weighted Laplacian of the substation-contracted graph and fraction-free
/// elimination over arbitrary-precision integers.
mpz_class count_radial_configurations(const grid::Network& net);

}  // namespace dnr::topo
