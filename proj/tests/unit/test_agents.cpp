#include <doctest.h>

#include <cmath>
#include <deque>
#include <limits>
#include <utility>

#include "../oracles/agent_checks.hpp"
#include "dnr/agents/agents.hpp"
#include "dnr/error.hpp"
#include "fixtures.hpp"

using namespace dnr;
using agents::ActorCritic;
using agents::Minibatch;
using nn::Matrix;
using nn::Mlp;

namespace {

struct Toy {
    env::TransitionBatch batch = fixtures::small_batch(0.5, 3);
    grid::Network net = data::batch_network(batch);
    rl::OfflineDataset data = rl::OfflineDataset::training(net, batch);
};

const Toy& toy() {
    static const Toy t;
    return t;
}

std::vector<double> q_at(const Mlp& q, const Minibatch& mb, std::span<const int> cells, std::size_t m) {
    const Matrix t = agents::critic_table(q, mb.states, mb.masks, m);
    std::vector<double> out;
    for (std::size_t r = 0; r < mb.size(); ++r) out.push_back(t(r, static_cast<std::size_t>(cells[r])));
    return out;
}

// Every radial configuration reachable by branch exchanges from `start`.
std::vector<topo::Configuration> all_configurations(const grid::Network& net, const topo::Configuration& start) {
    std::vector<topo::Configuration> seen{start};
    std::deque<topo::Configuration> queue{start};
    while (!queue.empty()) {
        const auto c = queue.front();
        queue.pop_front();
        const auto mask = topo::switch_pair_mask(net, c);
        for (const auto& p : mask.feasible_pairs()) {
            if (p.is_stay()) continue;
            const auto next = topo::apply_pair(mask, c, p);
            if (std::find(seen.begin(), seen.end(), next) != seen.end()) continue;
            seen.push_back(next);
            queue.push_back(next);
        }
    }
    return seen;
}

}  // namespace

TEST_CASE("critic targets and regression") {
    const auto& t = toy();
    nn::Rng rng(1);
    auto h = oracle::small_hyper();
    h.gamma = 0.0;
    auto model = ActorCritic::create(t.data.state_dim(), t.data.branches(), h, rng);
    const auto mb = oracle::spread_minibatch(t.data, 6);

    // gamma = 0: targets are the rewards.
    const auto q1 = q_at(model.q1, mb, mb.actions, model.m), q2 = q_at(model.q2, mb, mb.actions, model.m);
    double expect = 0.0;
    for (std::size_t r = 0; r < mb.size(); ++r)
        expect += 0.5 * (std::pow(q1[r] - mb.rewards[r], 2) + std::pow(q2[r] - mb.rewards[r], 2)) / 6.0;
    CHECK(agents::critic_loss(model, mb, nullptr, nullptr) == doctest::Approx(expect).epsilon(1e-12));

    // Repeated updates on one transition reach r + gamma v_target(s').
    model.hyper.gamma = 0.95;
    nn::Rng other(9);
    model.v_target = Mlp::xavier(model.v.widths(), other);
    const auto one = Minibatch::gather(t.data, {11});
    const double target = one.rewards[0] + 0.95 * nn::forward(model.v_target, one.next_states)(0, 0);
    for (int k = 0; k < 3000; ++k) agents::critic_update(model, one);
    CHECK(std::abs(q_at(model.q1, one, one.actions, model.m)[0] - target) <= 1e-3);
    CHECK(std::abs(q_at(model.q2, one, one.actions, model.m)[0] - target) <= 1e-3);

    auto bad = Minibatch::gather(t.data, {3});
    bad.rewards[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(agents::critic_update(model, bad), NumericalError);
}

TEST_CASE("value targets") {
    const auto& t = toy();
    nn::Rng rng(2);
    auto model = ActorCritic::create(t.data.state_dim(), t.data.branches(), oracle::small_hyper(0.8), rng);
    const auto mb = oracle::spread_minibatch(t.data, 10);
    const auto sample = agents::sample_actions(model.actor, mb, rng);
    const auto q1 = q_at(model.q1, mb, sample.actions, model.m), q2 = q_at(model.q2, mb, sample.actions, model.m);

    // pi equal to pi^b: the log terms cancel.
    const auto same = agents::value_targets(model, mb, sample.actions, sample.log_pi, sample.log_pi);
    for (std::size_t r = 0; r < mb.size(); ++r) CHECK(same[r] == doctest::Approx(std::min(q1[r], q2[r])).epsilon(1e-14));

    // tau = 0.
    model.hyper.tau = 0.0;
    std::vector<double> log_pb(mb.size(), -3.0);
    const auto cold = agents::value_targets(model, mb, sample.actions, sample.log_pi, log_pb);
    for (std::size_t r = 0; r < mb.size(); ++r) CHECK(cold[r] == std::min(q1[r], q2[r]));

    // Clipped double: raising one critic's output leaves the other as the minimum.
    auto hi = model;
    for (auto& b : hi.q2.layers.back().b) b += 100.0;
    const auto t_hi = agents::value_targets(hi, mb, sample.actions, sample.log_pi, log_pb);
    for (std::size_t r = 0; r < mb.size(); ++r) CHECK(t_hi[r] == doctest::Approx(q1[r]).epsilon(1e-14));
    auto lo = model;
    for (auto& b : lo.q2.layers.back().b) b -= 100.0;
    const auto t_lo = agents::value_targets(lo, mb, sample.actions, sample.log_pi, log_pb);
    for (std::size_t r = 0; r < mb.size(); ++r) CHECK(t_lo[r] == doctest::Approx(q2[r] - 100.0).epsilon(1e-14));

    // Regression onto frozen targets.
    std::vector<double> frozen(mb.size());
    for (std::size_t r = 0; r < mb.size(); ++r) frozen[r] = 0.1 * static_cast<double>(r) - 0.4;
    const auto single = Minibatch::gather(t.data, {mb.rows[0]});
    const std::vector<double> one{frozen[0]};
    for (int k = 0; k < 3000; ++k) agents::value_update(model, single, one);
    CHECK(std::abs(nn::forward(model.v, single.states)(0, 0) - frozen[0]) <= 1e-3);
}

TEST_CASE("target value averaging") {
    const auto& t = toy();
    nn::Rng rng(3);
    auto h = oracle::small_hyper();
    h.rho = 0.995;
    auto model = ActorCritic::create(t.data.state_dim(), t.data.branches(), h, rng);
    nn::Rng other(4);
    model.v = Mlp::xavier(model.v.widths(), other);
    const auto before = model.v_target;
    agents::target_value_update(model);
    const auto a = before.parameter_blocks();
    const auto b = std::as_const(model.v).parameter_blocks();
    const auto c = std::as_const(model.v_target).parameter_blocks();
    for (std::size_t k = 0; k < a.size(); ++k)
        for (std::size_t i = 0; i < a[k].size(); ++i)
            CHECK(c[k][i] == doctest::Approx(0.995 * a[k][i] + 0.005 * b[k][i]).epsilon(1e-14));
}

TEST_CASE("analytic gradients match finite differences") {
    const auto rep = oracle::gradient_suite(toy().data, 5);
    CHECK(rep.critics <= 1e-4);
    CHECK(rep.value <= 1e-4);
    CHECK(rep.actor <= 1e-4);
    CHECK(rep.cvae <= 1e-4);
}

TEST_CASE("expected actor gradient identities") {
    const auto rep = oracle::actor_identities(toy().data, 6);
    CHECK(rep.scale > 1e-6);
    CHECK(rep.shift <= 1e-10);
    CHECK(rep.uniform_sac <= 1e-10);

    // tau = 0 with constant q: zero gradient.
    const auto& t = toy();
    nn::Rng rng(7);
    const auto model = ActorCritic::create(t.data.state_dim(), t.data.branches(), oracle::small_hyper(), rng);
    const auto mb = oracle::spread_minibatch(t.data, 5);
    Matrix q(mb.size(), t.data.cells());
    for (auto& x : q.data) x = 3.25;
    CHECK(oracle::max_abs(agents::expected_actor_gradient(model.actor, mb, q, nullptr, 0.0)) <= 1e-15);
}

TEST_CASE("one-sample actor estimator matches the enumerated expectation") {
    const auto& t = toy();
    nn::Rng rng(8);
    const auto model = ActorCritic::create(t.data.state_dim(), t.data.branches(), oracle::small_hyper(0.3), rng);
    const auto pair = Minibatch::gather(t.data, {4, 90});
    std::mt19937_64 prng(8);
    const Matrix lpb = oracle::random_log_behavior(pair, t.data.cells(), prng);
    const Matrix q = agents::critic_table(model.q1, pair.states, pair.masks, model.m);
    const Mlp exact = agents::expected_actor_gradient(model.actor, pair, q, &lpb, model.hyper.tau);

    // 100 chunks of 1000 draws; rows alternate between the two states.
    constexpr int kChunks = 100, kDraws = 1000;
    std::vector<std::size_t> rows;
    for (int k = 0; k < kDraws; ++k) rows.push_back(k % 2 ? 90 : 4);
    const auto big = Minibatch::gather(t.data, rows);
    std::vector<std::size_t> pair_row(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) pair_row[k] = k % 2;

    std::vector<Mlp> means;
    for (int c = 0; c < kChunks; ++c) {
        const auto s = agents::sample_actions(model.actor, big, rng);
        std::vector<double> log_pb;
        for (std::size_t k = 0; k < rows.size(); ++k)
            log_pb.push_back(lpb(pair_row[k], static_cast<std::size_t>(s.actions[k])));
        const auto brackets = agents::actor_brackets(model, big, s.actions, s.log_pi, log_pb);
        Mlp g(model.actor.widths());
        agents::actor_surrogate(model.actor, big, s.actions, brackets, &g);
        means.push_back(std::move(g));
    }
    // Project on a few random directions; the estimator is the negated surrogate gradient.
    std::normal_distribution<double> n01;
    for (int d = 0; d < 5; ++d) {
        std::vector<double> u;
        for (auto block : exact.parameter_blocks())
            for (std::size_t i = 0; i < block.size(); ++i) u.push_back(n01(prng));
        auto project = [&](const Mlp& g) {
            double s = 0.0;
            std::size_t k = 0;
            for (auto block : g.parameter_blocks())
                for (double x : block) s += u[k++] * x;
            return s;
        };
        double mean = 0.0, sq = 0.0;
        for (const auto& g : means) {
            const double p = -project(g);
            mean += p;
            sq += p * p;
        }
        mean /= kChunks;
        const double sd = std::sqrt((sq / kChunks - mean * mean) * kChunks / (kChunks - 1));
        const double sigma = sd / std::sqrt(static_cast<double>(kChunks));
        CHECK(std::abs(mean - project(exact)) <= 3.0 * sigma);
    }
}

TEST_CASE("training is deterministic and batch-only") {
    const auto& t = toy();
    const auto behavior = agents::TableBehavior::uniform(t.data);
    const auto h = oracle::small_hyper();
    const long before = env::DnrEnv::step_calls();
    nn::Rng a(11), b(11);
    const auto r1 = agents::train_bcsac(t.data, behavior, h, a);
    const auto r2 = agents::train_bcsac(t.data, behavior, h, b);
    CHECK(env::DnrEnv::step_calls() == before);
    REQUIRE(r1.checkpoints.size() == 5);
    REQUIRE(r2.checkpoints.size() == 5);
    for (std::size_t k = 0; k < 5; ++k)
        CHECK(nn::serialize_checkpoint(r1.checkpoints[k]) == nn::serialize_checkpoint(r2.checkpoints[k]));
    CHECK(r1.curves.critic_loss == r2.curves.critic_loss);
    const auto back = ActorCritic::from_checkpoint(r1.checkpoints.back());
    CHECK(back.actor == r1.model.actor);
    CHECK(back.v_target == r1.model.v_target);

    nn::Rng c(12);
    agents::train_sac(t.data, h, c);
    CHECK(env::DnrEnv::step_calls() == before);
}

TEST_CASE("DQN copies its target every copy period") {
    const auto& t = toy();
    auto h = oracle::small_hyper();
    h.algo = agents::Algo::Dqn;
    h.copy_steps = 30;
    h.steps = 61;
    h.checkpoint_every = 1;
    const long before = env::DnrEnv::step_calls();
    nn::Rng rng(13);
    const auto res = agents::train_dqn(t.data, h, rng);
    CHECK(env::DnrEnv::step_calls() == before);
    REQUIRE(res.checkpoints.size() == 61);
    for (int step = 1; step <= 61; ++step) {
        const auto m = agents::DqnModel::from_checkpoint(res.checkpoints[static_cast<std::size_t>(step - 1)]);
        CHECK((m.q_target == m.q) == (step % 30 == 0));
    }
}

TEST_CASE("weekly evaluation") {
    const auto& t = toy();
    const env::DnrEnv env(t.net, t.batch.series, t.batch.reward);
    const auto week = agents::test_week(t.batch);
    REQUIRE(week.hours == 168);

    const auto stay = agents::evaluate_weekly_cost(env, agents::stay_policy(), week.initial, week.t0, week.hours);
    double manual = 0.0;
    for (int k = 0; k < week.hours; ++k) {
        const auto mask = topo::switch_pair_mask(t.net, week.initial);
        CHECK(stay.actions[static_cast<std::size_t>(k)].is_stay());
        const auto info = env::evaluate_action(t.net, t.batch.series.frame(week.t0 + k), week.initial, mask,
                                               topo::canonical_stay(mask), t.batch.reward);
        CHECK(info.switch_cost == 0.0);
        manual += info.loss_cost + info.penalty;
    }
    CHECK(stay.total == doctest::Approx(manual).epsilon(1e-12));

    const auto replay = agents::evaluate_weekly_cost(env, agents::replay_policy(t.batch), week.initial, week.t0,
                                                     week.hours);
    CHECK(replay.total == doctest::Approx(agents::historical_cost(t.batch)).epsilon(1e-10));

    // Myopic lower bound: each hour costs at least the cheapest radial configuration.
    const auto configs = all_configurations(t.net, week.initial);
    CHECK(configs.size() == 190);
    double bound = 0.0;
    for (int k = 0; k < week.hours; ++k) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& c : configs) {
            const auto mask = topo::switch_pair_mask(t.net, c);
            const auto info = env::evaluate_action(t.net, t.batch.series.frame(week.t0 + k), c, mask,
                                                   topo::canonical_stay(mask), t.batch.reward);
            best = std::min(best, info.loss_cost + info.penalty);
        }
        bound += best;
    }
    nn::Rng rng(14);
    const auto model = ActorCritic::create(t.data.state_dim(), t.data.branches(), oracle::small_hyper(), rng);
    const auto actor = agents::evaluate_weekly_cost(env, agents::greedy_actor_policy(model.actor, t.net, t.batch.norms),
                                                    week.initial, week.t0, week.hours);
    for (double cost : {stay.total, replay.total, actor.total}) CHECK(cost >= bound - 1e-9);

    int closed = 0;
    while (!week.initial.closed(closed)) ++closed;
    const agents::Policy bad = [closed](const env::DnrState&, const topo::SwitchPairMask&) {
        return env::DnrAction{closed, closed};
    };
    CHECK_THROWS_AS(agents::evaluate_weekly_cost(env, bad, week.initial, week.t0, 3), RejectedAction);
}

TEST_CASE("temperature guidance") {
    CHECK(agents::tau_within_guidance(agents::suggest_tau(0.5, 20.0), 0.5, 20.0));
    CHECK(!agents::tau_within_guidance(1e-4, 0.5, 20.0));
}

TEST_CASE("hyperparameter file") {
    const auto hp = agents::FeederHyper::load(fixtures::data_dir() / "hparams" / "16bus.json");
    CHECK(hp.bcsac.rho == 0.995);
    CHECK(hp.sac.rho == 0.99);
    CHECK(hp.dqn.copy_steps == 30);
    CHECK(hp.bcsac.tau == 0.1);
    CHECK(hp.sac.tau == 0.002);
    CHECK(hp.reward_scale == 500.0);
    CHECK(hp.bcsac.steps == 6000);
}
