#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "dnr/env/dnr_env.hpp"
#include "dnr/env/transitions.hpp"
#include "dnr/error.hpp"
#include "fixtures.hpp"

using namespace dnr;

namespace {

env::InjectionSeries constant_series(const grid::Network& net, std::size_t hours, double scale = 1.0) {
    const auto frame = fixtures::nominal_frame(net, scale);
    env::InjectionSeries s(hours, net.bus_count());
    for (std::size_t t = 0; t < hours; ++t)
        for (std::size_t b = 0; b < net.bus_count(); ++b) {
            s.p(t, b) = frame.p[b];
            s.q(t, b) = frame.q[b];
        }
    return s;
}

}  // namespace

TEST_CASE("reset") {
    const auto net = fixtures::feeder(33);
    const auto series = constant_series(net, 4);
    const env::DnrEnv env(net, series, env::RewardParams::for_feeder(net));
    const auto s = env.reset(topo::Configuration::initial(net), 0);
    CHECK(s.config.size() - s.config.closed_count() == 5);
    CHECK(s.t == 0);
    CHECK_THROWS_AS(env.reset(topo::Configuration::initial(net), 4), ValidationError);
    const auto again = env.reset(topo::Configuration::initial(net), 0);
    CHECK(again.config == s.config);
    CHECK(again.injections.p == s.injections.p);
}

TEST_CASE("reward arithmetic") {
    // About 10 kW of losses on branch 0; bus 2 carries no load and hangs off an open tie.
    const auto net = grid::parse_feeder(R"({"s_base_mva": 100, "buses": [{"id": 0, "kind": "substation"},
        {"id": 1, "kind": "load", "p_kw": 10000}, {"id": 2, "kind": "load"}],
        "branches": [{"id": 0, "from": 0, "to": 1, "r_pu": 0.01, "x_pu": 0.0},
                     {"id": 1, "from": 1, "to": 2, "r_pu": 0.01, "x_pu": 0.0},
                     {"id": 2, "from": 0, "to": 2, "r_pu": 0.01, "x_pu": 0.0, "closed": false}]})");
    const auto series = constant_series(net, 2);
    auto params = env::RewardParams::for_feeder(net);
    const env::DnrEnv env(net, series, params);
    const auto s = env.reset(topo::Configuration::initial(net), 0);
    const auto mask = topo::switch_pair_mask(net, s.config);
    const auto stay = topo::canonical_stay(mask);
    CHECK(stay == topo::SwitchPair{2, 2});

    const auto info = env::evaluate_action(net, series.frame(0), s.config, mask, stay, params);
    const double v = 0.5 * (1.0 + std::sqrt(1.0 - 4.0 * 0.01 * 0.1));
    const double loss_kw = 0.01 * std::pow(0.1 / v, 2) * 1e5;
    CHECK(info.loss_kw == doctest::Approx(loss_kw).epsilon(1e-7));
    CHECK(info.loss_cost == doctest::Approx(0.13 * loss_kw).epsilon(1e-7));
    CHECK(info.total_cost() == doctest::Approx(1.3026).epsilon(1e-3));
    CHECK(info.switch_cost == 0.0);
    CHECK(info.penalty == 0.0);
}

TEST_CASE("switching cost of one exchange on the 16-bus feeder") {
    const auto net = fixtures::feeder(16);
    const auto series = constant_series(net, 3, 0.5);
    const auto params = env::RewardParams::for_feeder(net);
    CHECK(params.switch_cost == 4.0);
    const env::DnrEnv env(net, series, params);
    const auto s = env.reset(topo::Configuration::initial(net), 0);
    const auto mask = topo::switch_pair_mask(net, s.config);
    topo::SwitchPair move{-1, -1};
    for (const auto& p : mask.feasible_pairs())
        if (!p.is_stay()) {
            move = p;
            break;
        }
    REQUIRE(move.close >= 0);
    const auto step = env.step(s, move);
    CHECK(step.info.switch_cost == doctest::Approx(8.0));
    CHECK(step.reward == doctest::Approx(-(step.info.loss_cost + 8.0 + step.info.penalty)));
    CHECK(step.next.config.distance(s.config) == 2);
    CHECK(step.next.t == 1);
    const auto stay = env.step(s, topo::canonical_stay(mask));
    CHECK(stay.info.switch_cost == 0.0);
    CHECK(stay.next.config == s.config);
}

TEST_CASE("zero load gives zero reward") {
    const auto net = fixtures::feeder(16);
    const auto series = constant_series(net, 2, 0.0);
    const env::DnrEnv env(net, series, env::RewardParams::for_feeder(net));
    const auto s = env.reset(topo::Configuration::initial(net), 0);
    const auto step = env.step(s, topo::canonical_stay(topo::switch_pair_mask(net, s.config)));
    CHECK(step.reward == doctest::Approx(0.0));
}

TEST_CASE("masked-out actions are rejected and steps are counted") {
    const auto net = fixtures::feeder(16);
    const auto series = constant_series(net, 3, 0.5);
    const env::DnrEnv env(net, series, env::RewardParams::for_feeder(net));
    const auto s = env.reset(topo::Configuration::initial(net), 0);
    const auto mask = topo::switch_pair_mask(net, s.config);
    int closed = 0;
    while (!s.config.closed(closed)) ++closed;
    const long before = env::DnrEnv::step_calls();
    CHECK_THROWS_AS(env.step(s, {closed, closed}), RejectedAction);
    env.step(s, topo::canonical_stay(mask));
    CHECK(env::DnrEnv::step_calls() - before == 2);
}

TEST_CASE("state features") {
    const auto net = fixtures::feeder(16);
    std::mt19937_64 rng(2);
    env::InjectionSeries series(48, net.bus_count());
    for (std::size_t t = 0; t < 48; ++t) {
        const auto f = fixtures::random_frame(net, rng);
        for (std::size_t b = 0; b < net.bus_count(); ++b) {
            series.p(t, b) = f.p[b];
            series.q(t, b) = f.q[b];
        }
    }
    const auto norms = env::compute_norms(net, series, 0, 48);
    const auto config = topo::Configuration::initial(net);
    const std::size_t nl = net.load_count(), m = net.branch_count();
    CHECK(env::feature_dim(net) == 2 * nl + m + 4);

    grid::InjectionFrame mean;
    mean.p.assign(net.bus_count(), 0.0);
    mean.q.assign(net.bus_count(), 0.0);
    for (std::size_t k = 0; k < nl; ++k) {
        mean.p[net.load_buses()[k]] = norms.p_mean[k];
        mean.q[net.load_buses()[k]] = norms.q_mean[k];
    }
    const auto x = env::encode_state(net, norms, mean, config, 0);
    REQUIRE(x.size() == env::feature_dim(net));
    for (std::size_t k = 0; k < 2 * nl; ++k) CHECK(x[k] == doctest::Approx(0.0));
    for (std::size_t b = 0; b < m; ++b) CHECK(x[2 * nl + b] == (config.closed(static_cast<int>(b)) ? 1.0 : 0.0));
    CHECK(x[2 * nl + m] == doctest::Approx(0.0));
    CHECK(x[2 * nl + m + 1] == doctest::Approx(1.0));
    const auto six = env::encode_state(net, norms, mean, config, 6);
    CHECK(six[2 * nl + m] == doctest::Approx(1.0));
    CHECK(six[2 * nl + m + 1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("transition batch round trip") {
    const auto batch = fixtures::small_batch(0.5, 2);
    const auto path = std::filesystem::temp_directory_path() / "dnr_roundtrip.batch";
    env::write_batch(path, batch);
    const auto back = env::read_batch(path);
    CHECK(back.feeder == batch.feeder);
    for (const char* key : {"beta", "probs", "perturbation", "seed", "network"}) CHECK(back.header.at(key) == batch.header.at(key));
    CHECK(back.series == batch.series);
    CHECK(back.train_rows == batch.train_rows);
    REQUIRE(back.rows.size() == batch.rows.size());
    for (std::size_t k = 0; k < batch.rows.size(); ++k) {
        const auto& a = batch.rows[k];
        const auto& b = back.rows[k];
        CHECK(a.t == b.t);
        CHECK(a.config == b.config);
        CHECK(a.action == b.action);
        CHECK(a.reward == b.reward);
        CHECK(a.next_config == b.next_config);
        CHECK(a.scenario == b.scenario);
        CHECK(a.controller_action == b.controller_action);
    }

    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    CHECK_THROWS_AS(env::read_batch(path), ParseError);
    std::ofstream(path) << "not a batch";
    CHECK_THROWS_AS(env::read_batch(path), ParseError);
    std::filesystem::remove(path);
}

TEST_CASE("recorded rewards are the scaled negative costs") {
    const auto batch = fixtures::small_batch(0.5, 2);
    for (const auto& row : batch.rows) {
        CHECK(row.reward == doctest::Approx(-row.unscaled_cost() / batch.reward.reward_scale));
        CHECK(row.switch_cost == (row.action.is_stay() ? 0.0 : 2.0 * batch.reward.switch_cost));
    }
}
