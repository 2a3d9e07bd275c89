#include "dnr/env/dnr_env.hpp"

#include <cmath>
#include <numbers>

#include "dnr/error.hpp"

namespace dnr::env {

std::atomic<long> DnrEnv::step_calls_{0};

RewardParams RewardParams::for_feeder(const grid::Network& net) {
    RewardParams p;
    p.switch_cost = net.switch_cost;
    return p;
}

void RewardParams::validate() const {
    if (!(energy_price > 0.0) || !(penalty_factor > 0.0) || !(reward_scale > 0.0) || !(dt_hours > 0.0) ||
        switch_cost < 0.0)
        throw ValidationError("reward parameters must be positive");
    if (!(v_lo < v_hi)) throw ValidationError("reward parameters need v_lo < v_hi");
}

std::vector<int> RewardParams::monitored_buses(const grid::Network& net) const {
    if (monitored.empty()) return net.load_buses();
    for (int b : monitored)
        if (b < 0 || static_cast<std::size_t>(b) >= net.bus_count())
            throw ValidationError("monitored bus " + std::to_string(b) + " is not in the network");
    return monitored;
}

nlohmann::json RewardParams::to_json() const {
    return {{"energy_price", energy_price}, {"switch_cost", switch_cost},
            {"penalty_factor", penalty_factor}, {"v_lo", v_lo},
            {"v_hi", v_hi}, {"reward_scale", reward_scale},
            {"dt_hours", dt_hours}, {"monitored", monitored}};
}

RewardParams RewardParams::from_json(const nlohmann::json& j) {
    RewardParams p;
    p.energy_price = j.value("energy_price", p.energy_price);
    p.switch_cost = j.value("switch_cost", p.switch_cost);
    p.penalty_factor = j.value("penalty_factor", p.penalty_factor);
    p.v_lo = j.value("v_lo", p.v_lo);
    p.v_hi = j.value("v_hi", p.v_hi);
    p.reward_scale = j.value("reward_scale", p.reward_scale);
    p.dt_hours = j.value("dt_hours", p.dt_hours);
    p.monitored = j.value("monitored", std::vector<int>{});
    return p;
}

grid::InjectionFrame InjectionSeries::frame(int t) const {
    if (t < 0 || static_cast<std::size_t>(t) >= hours_)
        throw ValidationError("hour " + std::to_string(t) + " outside the injection series (" +
                              std::to_string(hours_) + " hours)");
    grid::InjectionFrame f;
    f.t = t;
    const auto begin = static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t) * buses_);
    const auto end = begin + static_cast<std::ptrdiff_t>(buses_);
    f.p.assign(p_.begin() + begin, p_.begin() + end);
    f.q.assign(q_.begin() + begin, q_.begin() + end);
    return f;
}

StepInfo evaluate_action(const grid::Network& net, const grid::InjectionFrame& frame,
                         const Configuration& config, const topo::SwitchPairMask& mask,
                         const DnrAction& action, const RewardParams& params) {
    const Configuration next = topo::apply_pair(mask, config, action);
    const auto sol = grid::solve_power_flow(net, next, frame);
    StepInfo info;
    info.converged = sol.converged;
    if (!sol.converged) return info;
    info.loss_kw = grid::total_losses_kw(sol, net.s_base_mva());
    info.loss_cost = params.energy_price * info.loss_kw * params.dt_hours;
    info.switch_cost = params.switch_cost * static_cast<double>(next.distance(config));
    const auto monitored = params.monitored_buses(net);
    info.violation = grid::voltage_violation(sol, params.v_lo, params.v_hi, monitored);
    info.penalty = params.penalty_factor * info.violation;
    return info;
}

std::vector<StepInfo> evaluate_actions(const grid::Network& net, const grid::InjectionFrame& frame,
                                       const Configuration& config, const topo::SwitchPairMask& mask,
                                       std::span<const DnrAction> actions, const RewardParams& params,
                                       Exec exec) {
    std::vector<StepInfo> out(actions.size());
    const auto count = static_cast<std::ptrdiff_t>(actions.size());
    if (exec == Exec::Serial) {
        for (std::ptrdiff_t k = 0; k < count; ++k)
            out[k] = evaluate_action(net, frame, config, mask, actions[k], params);
    } else {
#pragma omp parallel for schedule(dynamic, 4)
        for (std::ptrdiff_t k = 0; k < count; ++k)
            out[k] = evaluate_action(net, frame, config, mask, actions[k], params);
    }
    return out;
}

DnrEnv::DnrEnv(const grid::Network& net, const InjectionSeries& series, RewardParams params)
    : net_(&net), series_(&series), params_(std::move(params)) {
    params_.validate();
    if (series.buses() != net.bus_count())
        throw ValidationError("injection series has " + std::to_string(series.buses()) +
                              " buses, network has " + std::to_string(net.bus_count()));
}

DnrState DnrEnv::reset(const Configuration& initial, int t0) const {
    if (!topo::is_radial(*net_, initial)) throw ValidationError("initial configuration is not radial");
    if (t0 < 0 || static_cast<std::size_t>(t0) + 1 >= series_->hours())
        throw ValidationError("t0 = " + std::to_string(t0) + " is outside the injection series");
    return DnrState{series_->frame(t0), initial, t0};
}

StepResult DnrEnv::step(const DnrState& state, const DnrAction& action) const {
    ++step_calls_;
    const auto mask = topo::switch_pair_mask(*net_, state.config);
    if (!mask.allows(action))
        throw RejectedAction("action (" + std::to_string(action.close) + ", " + std::to_string(action.open) +
                             ") is infeasible at hour " + std::to_string(state.t));
    StepResult out;
    out.info = evaluate_action(*net_, state.injections, state.config, mask, action, params_);
    if (!out.info.converged)
        throw NumericalError("power flow did not converge at hour " + std::to_string(state.t) +
                             " for action (" + std::to_string(action.close) + ", " +
                             std::to_string(action.open) + ")");
    out.reward = -out.info.total_cost();
    const int t_next = state.t + 1;
    if (static_cast<std::size_t>(t_next) >= series_->hours())
        throw ValidationError("step past the end of the injection series");
    out.next = DnrState{series_->frame(t_next), topo::apply_pair(mask, state.config, action), t_next};
    return out;
}

nlohmann::json FeatureNorms::to_json() const {
    return {{"p_mean", p_mean}, {"p_std", p_std}, {"q_mean", q_mean}, {"q_std", q_std}};
}

FeatureNorms FeatureNorms::from_json(const nlohmann::json& j) {
    FeatureNorms n;
    n.p_mean = j.at("p_mean").get<std::vector<double>>();
    n.p_std = j.at("p_std").get<std::vector<double>>();
    n.q_mean = j.at("q_mean").get<std::vector<double>>();
    n.q_std = j.at("q_std").get<std::vector<double>>();
    return n;
}

FeatureNorms compute_norms(const grid::Network& net, const InjectionSeries& series, int begin, int end) {
    require(0 <= begin && begin < end && static_cast<std::size_t>(end) <= series.hours(),
            "compute_norms: invalid hour range");
    const auto& loads = net.load_buses();
    FeatureNorms n;
    const double count = end - begin;
    for (int bus : loads) {
        double sp = 0, sq = 0, sp2 = 0, sq2 = 0;
        for (int t = begin; t < end; ++t) {
            const double p = series.p(t, bus), q = series.q(t, bus);
            sp += p;
            sq += q;
            sp2 += p * p;
            sq2 += q * q;
        }
        const double mp = sp / count, mq = sq / count;
        const double vp = std::max(0.0, sp2 / count - mp * mp), vq = std::max(0.0, sq2 / count - mq * mq);
        n.p_mean.push_back(mp);
        n.q_mean.push_back(mq);
        n.p_std.push_back(vp > 1e-24 ? std::sqrt(vp) : 1.0);
        n.q_std.push_back(vq > 1e-24 ? std::sqrt(vq) : 1.0);
    }
    return n;
}

std::size_t feature_dim(const grid::Network& net) { return 2 * net.load_count() + net.branch_count() + 4; }

std::vector<double> encode_state(const grid::Network& net, const FeatureNorms& norms,
                                 const grid::InjectionFrame& inj, const Configuration& config, int t) {
    const auto& loads = net.load_buses();
    require(norms.p_mean.size() == loads.size(), "encode_state: norms do not match the network");
    std::vector<double> f;
    f.reserve(feature_dim(net));
    for (std::size_t k = 0; k < loads.size(); ++k)
        f.push_back((inj.p[loads[k]] - norms.p_mean[k]) / norms.p_std[k]);
    for (std::size_t k = 0; k < loads.size(); ++k)
        f.push_back((inj.q[loads[k]] - norms.q_mean[k]) / norms.q_std[k]);
    for (auto bit : config.bits()) f.push_back(bit ? 1.0 : 0.0);
    const double hour = static_cast<double>(t % 24);
    const double day = static_cast<double>((t / 24) % 7);
    const double two_pi = 2.0 * std::numbers::pi;
    f.push_back(std::sin(two_pi * hour / 24.0));
    f.push_back(std::cos(two_pi * hour / 24.0));
    f.push_back(std::sin(two_pi * day / 7.0));
    f.push_back(std::cos(two_pi * day / 7.0));
    return f;
}

}  // namespace dnr::env
