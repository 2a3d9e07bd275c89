#include <doctest.h>

#include <cmath>
#include <random>

#include "../oracles/nodal_newton.hpp"
#include "dnr/error.hpp"
#include "dnr/grid/power_flow.hpp"
#include "fixtures.hpp"

using namespace dnr;

namespace {

const char* kThreeBus = R"({"s_base_mva": 1, "buses": [
  {"id": 0, "kind": "substation"}, {"id": 1, "kind": "load", "p_kw": 10}, {"id": 2, "kind": "load", "p_kw": 5}],
  "branches": [{"id": 0, "from": 0, "to": 1, "r_pu": 0.01, "x_pu": 0.02},
               {"id": 1, "from": 1, "to": 2, "r_pu": 0.01, "x_pu": 0.02}]})";

// Source at 1.0 p.u., one resistive branch r = 0.01 and a 0.1 p.u. load.
const char* kTwoBus = R"({"s_base_mva": 100, "buses": [{"id": 0, "kind": "substation"}, {"id": 1, "kind": "load"}],
  "branches": [{"id": 0, "from": 0, "to": 1, "r_pu": 0.01, "x_pu": 0.0}]})";

grid::InjectionFrame two_bus_frame() { return {0, {0.0, -0.1}, {0.0, 0.0}}; }

}  // namespace

TEST_CASE("feeder parsing") {
    const auto net = grid::parse_feeder(kThreeBus);
    CHECK(net.load_count() == 2);
    CHECK(net.branch_count() == 2);
    CHECK(net.substation_count() == 1);

    const auto net33 = fixtures::feeder(33);
    CHECK(net33.branch_count() == 37);
    CHECK(net33.bus_count() == 33);

    auto bad = nlohmann::json::parse(grid::feeder_to_json(fixtures::feeder(16)));
    bad["branches"][0]["to"] = 99;
    CHECK_THROWS_AS(grid::parse_feeder(bad.dump()), ValidationError);
    CHECK_THROWS_AS(grid::parse_feeder("{\"buses\": ["), ParseError);
    auto negative = nlohmann::json::parse(kThreeBus);
    negative["branches"][1]["r_pu"] = -0.1;
    CHECK_THROWS_AS(grid::parse_feeder(negative.dump()), ValidationError);
}

TEST_CASE("feeder json round trip") {
    const auto net = fixtures::feeder(33);
    const auto again = grid::parse_feeder(grid::feeder_to_json(net));
    CHECK(again.branch_count() == net.branch_count());
    for (std::size_t k = 0; k < net.branch_count(); ++k) {
        CHECK(again.branches()[k].r_pu == net.branches()[k].r_pu);
        CHECK(again.branches()[k].initially_closed == net.branches()[k].initially_closed);
    }
    CHECK(again.switch_cost == net.switch_cost);
}

TEST_CASE("two-bus sweep against the closed form") {
    const auto net = grid::parse_feeder(kTwoBus);
    const auto sol = grid::solve_power_flow(net, topo::Configuration::initial(net), two_bus_frame());
    REQUIRE(sol.converged);
    // Purely resistive branch: v^2 - v + r p = 0, larger root.
    const double v = 0.5 * (1.0 + std::sqrt(1.0 - 4.0 * 0.01 * 0.1));
    const double loss = 0.01 * std::pow(0.1 / v, 2);
    CHECK(sol.v[1] == doctest::Approx(v).epsilon(1e-9));
    CHECK(sol.losses == doctest::Approx(loss).epsilon(1e-7));
    CHECK(v == doctest::Approx(0.998998998).epsilon(1e-9));
    CHECK(loss == doctest::Approx(1.002003e-4).epsilon(1e-6));
    CHECK(grid::total_losses_kw(sol, net.s_base_mva()) == doctest::Approx(loss * 1e5).epsilon(1e-7));
}

TEST_CASE("no load means flat voltages and zero losses") {
    const auto net = fixtures::feeder(33);
    const auto sol = grid::solve_power_flow(net, topo::Configuration::initial(net), fixtures::nominal_frame(net, 0.0));
    REQUIRE(sol.converged);
    for (double v : sol.v) CHECK(v == doctest::Approx(1.0));
    CHECK(sol.losses == doctest::Approx(0.0));
    CHECK(grid::total_losses_kw(sol, net.s_base_mva()) == 0.0);
}

TEST_CASE("sweep agrees with a Newton nodal solve") {
    for (int buses : {16, 33}) {
        const auto net = fixtures::feeder(buses);
        const auto config = topo::Configuration::initial(net);
        std::mt19937_64 rng(buses);
        for (int k = 0; k < 20; ++k) {
            const auto frame = k == 0 ? fixtures::nominal_frame(net) : fixtures::random_frame(net, rng);
            const auto sweep = grid::solve_power_flow(net, config, frame);
            const auto nr = oracle::newton_nodal(net, config, frame.p, frame.q);
            REQUIRE(sweep.converged);
            REQUIRE(nr.converged);
            double worst = 0.0;
            for (std::size_t i = 0; i < net.bus_count(); ++i) worst = std::max(worst, std::abs(sweep.voltage[i] - nr.voltage[i]));
            CHECK(worst <= 1e-6);
            CHECK(std::abs(sweep.losses - nr.losses) <= 1e-6);
            CHECK(std::abs(sweep.losses - grid::branch_loss_sum(sweep)) <= 1e-8);
            CHECK(sweep.losses >= 0.0);
            CHECK(sweep.max_mismatch <= 1e-6);
            double injected = 0.0;
            for (double p : sweep.injection_p) injected += p;
            CHECK(std::abs(injected - sweep.losses) <= 1e-8);
        }
    }
}

TEST_CASE("batched power flow is identical in serial and parallel") {
    const auto net = fixtures::feeder(33);
    const auto config = topo::Configuration::initial(net);
    std::mt19937_64 rng(3);
    std::vector<grid::InjectionFrame> frames;
    for (int k = 0; k < 16; ++k) frames.push_back(fixtures::random_frame(net, rng));
    const auto a = grid::solve_power_flow_batch(net, config, frames, Exec::Serial);
    const auto b = grid::solve_power_flow_batch(net, config, frames, Exec::Parallel);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].v == b[k].v);
        CHECK(a[k].losses == b[k].losses);
    }
}

TEST_CASE("voltage violation") {
    grid::PowerFlowSolution sol;
    sol.v = {1.0, 0.95, 1.05};
    std::vector<int> all{0, 1, 2};
    CHECK(grid::voltage_violation(sol, 0.9, 1.1, all) == 0.0);
    sol.v = {1.0, 1.15};
    std::vector<int> one{1};
    CHECK(grid::voltage_violation(sol, 0.9, 1.1, one) == doctest::Approx(0.05));
    sol.v = {1.0, 0.85, 1.12};
    std::vector<int> two{1, 2};
    CHECK(grid::voltage_violation(sol, 0.9, 1.1, two) == doctest::Approx(0.07));
}
