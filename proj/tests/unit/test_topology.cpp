#include <doctest.h>

#include <random>
#include <set>

#include "dnr/error.hpp"
#include "dnr/topology/topology.hpp"
#include "fixtures.hpp"

using namespace dnr;

namespace {

grid::Network make_net(int n, const std::vector<int>& substations, const std::vector<std::pair<int, int>>& edges,
                       const std::vector<bool>& closed) {
    nlohmann::json j{{"s_base_mva", 1.0}, {"buses", nlohmann::json::array()}, {"branches", nlohmann::json::array()}};
    for (int i = 0; i < n; ++i) {
        const bool sub = std::find(substations.begin(), substations.end(), i) != substations.end();
        j["buses"].push_back({{"id", i}, {"kind", sub ? "substation" : "load"}, {"p_kw", sub ? 0.0 : 1.0}});
    }
    for (std::size_t k = 0; k < edges.size(); ++k)
        j["branches"].push_back({{"id", k},
                                 {"from", edges[k].first},
                                 {"to", edges[k].second},
                                 {"r_pu", 0.01},
                                 {"x_pu", 0.01},
                                 {"closed", bool(closed[k])}});
    return grid::parse_feeder(j.dump());
}

// Brute force: count closed-branch subsets that are radial.
long brute_force_count(const grid::Network& net) {
    const std::size_t m = net.branch_count();
    long count = 0;
    for (unsigned long mask = 0; mask < (1ul << m); ++mask) {
        topo::Configuration c(m);
        for (std::size_t b = 0; b < m; ++b) c.set(static_cast<int>(b), (mask >> b) & 1);
        if (topo::is_radial(net, c)) ++count;
    }
    return count;
}

void check_mask_exhaustively(const grid::Network& net, const topo::Configuration& config) {
    const auto mask = topo::switch_pair_mask(net, config);
    const int m = static_cast<int>(net.branch_count());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            if (i == j) {
                CHECK(mask(i, i) == (!config.closed(i) && net.branch(i).switchable &&
                                     std::any_of(mask.cells().begin() + i * m, mask.cells().begin() + (i + 1) * m,
                                                 [](auto c) { return c != 0; })));
                continue;
            }
            if (config.closed(i) || !config.closed(j)) {
                CHECK(!mask(i, j));
                continue;
            }
            auto next = config;
            next.set(i, true);
            next.set(j, false);
            const bool operable = net.branch(i).switchable && net.branch(j).switchable;
            CHECK(mask(i, j) == (operable && topo::is_radial(net, next)));
        }
}

}  // namespace

TEST_CASE("radiality of the 33-bus base configuration") {
    const auto net = fixtures::feeder(33);
    auto config = topo::Configuration::initial(net);
    CHECK(topo::is_radial(net, config));
    CHECK(config.closed_count() == 32);
    int tie = -1, tree = -1;
    for (int b = 0; b < 37; ++b) (config.closed(b) ? tree : tie) = b;
    auto cyc = config;
    cyc.set(tie, true);
    CHECK(!topo::is_radial(net, cyc));
    auto island = config;
    island.set(tree, false);
    CHECK(!topo::is_radial(net, island));
    CHECK_THROWS_AS(topo::build_forest(net, cyc), ContractViolation);
}

TEST_CASE("mask row of a tie closing a four-edge loop") {
    // Substation 0; tree 0-1-2-3; tie 3-0 closes a loop through three tree edges.
    const auto net = make_net(4, {0}, {{0, 1}, {1, 2}, {2, 3}, {3, 0}}, {true, true, true, false});
    const auto mask = topo::switch_pair_mask(net, topo::Configuration::initial(net));
    int ones = 0;
    for (int j = 0; j < 4; ++j) ones += mask(3, j);
    CHECK(ones == 4);
    CHECK(mask(3, 3));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) CHECK(!mask(i, j));
    CHECK(topo::canonical_stay(mask) == topo::SwitchPair{3, 3});
}

TEST_CASE("mask for a tie bridging two substation trees") {
    // Substations 0 and 4; trees 0-1-2 and 4-3; tie 2-3.
    const auto net = make_net(5, {0, 4}, {{0, 1}, {1, 2}, {4, 3}, {2, 3}}, {true, true, true, false});
    const auto config = topo::Configuration::initial(net);
    check_mask_exhaustively(net, config);
    const auto mask = topo::switch_pair_mask(net, config);
    CHECK(mask(3, 0));
    CHECK(mask(3, 1));
    CHECK(mask(3, 2));
}

TEST_CASE("16-bus mask matches brute-force radiality along a random walk") {
    const auto net = fixtures::feeder(16);
    auto config = topo::Configuration::initial(net);
    std::mt19937_64 rng(11);
    for (int step = 0; step < 25; ++step) {
        check_mask_exhaustively(net, config);
        auto pairs = topo::switch_pair_mask(net, config).feasible_pairs();
        std::erase_if(pairs, [](const topo::SwitchPair& p) { return p.is_stay(); });
        REQUIRE(!pairs.empty());
        config = topo::apply_pair(net, config, pairs[rng() % pairs.size()]);
        CHECK(topo::is_radial(net, config));
    }
}

TEST_CASE("apply_pair") {
    const auto net = fixtures::feeder(33);
    const auto config = topo::Configuration::initial(net);
    const auto mask = topo::switch_pair_mask(net, config);
    const auto stay = topo::canonical_stay(mask);
    CHECK(topo::apply_pair(mask, config, stay) == config);
    for (const auto& p : mask.feasible_pairs()) {
        if (p.is_stay()) continue;
        const auto next = topo::apply_pair(mask, config, p);
        CHECK(next.distance(config) == 2);
        CHECK(topo::is_radial(net, next));
    }
    int tie = -1, tree = -1;
    for (int b = 36; b >= 0; --b)
        if (!config.closed(b)) tie = b;
    for (int b = 0; b < 37; ++b)
        if (config.closed(b) && !mask(tie, b)) tree = b;
    REQUIRE(tree >= 0);
    CHECK_THROWS_AS(topo::apply_pair(mask, config, {tie, tree}), RejectedAction);
    CHECK_THROWS_AS(topo::apply_pair(mask, config, {tree, tie}), RejectedAction);
}

TEST_CASE("configuration counts") {
    const auto triangle = make_net(3, {0}, {{0, 1}, {1, 2}, {2, 0}}, {true, true, false});
    CHECK(topo::count_radial_configurations(triangle) == 3);
    CHECK(topo::count_radial_configurations(fixtures::feeder(16)) == 190);
    CHECK(topo::count_radial_configurations(fixtures::feeder(33)) == 50751);
}

TEST_CASE("matrix-tree count equals brute force on random small graphs") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 4 + static_cast<int>(rng() % 4);
        const int subs = 1 + static_cast<int>(rng() % 2);
        std::vector<int> substations;
        for (int s = 0; s < subs; ++s) substations.push_back(s);
        // Spanning path keeps the graph connected; extra edges add loops.
        std::vector<std::pair<int, int>> edges;
        std::vector<bool> closed;
        for (int i = 1; i < n; ++i) {
            edges.push_back({i - 1, i});
            closed.push_back(true);
        }
        std::set<std::pair<int, int>> seen(edges.begin(), edges.end());
        for (int extra = 0; extra < 4; ++extra) {
            int a = static_cast<int>(rng() % n), b = static_cast<int>(rng() % n);
            if (a == b || seen.count({std::min(a, b), std::max(a, b)})) continue;
            seen.insert({std::min(a, b), std::max(a, b)});
            edges.push_back({a, b});
            closed.push_back(false);
        }
        // With two substations, open the first path edge so the base is a valid forest.
        if (subs == 2) closed[0] = false;
        const auto net = make_net(n, substations, edges, closed);
        CHECK(topo::count_radial_configurations(net) == brute_force_count(net));
    }
}
