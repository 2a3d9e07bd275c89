#pragma once

#include <atomic>
#include <span>
#include <vector>

#include <json.hpp>

#include "dnr/grid/network.hpp"
#include "dnr/grid/power_flow.hpp"
#include "dnr/parallel.hpp"
#include "dnr/topology/topology.hpp"

namespace dnr::env {

using topo::Configuration;
using DnrAction = topo::SwitchPair;

struct RewardParams {
    double energy_price = 0.13;    // C^l, $/kWh
    double switch_cost = 0.0;      // C^s, $ per switch operation
    double penalty_factor = 0.13;  // lambda
    double v_lo = 0.9;
    double v_hi = 1.1;
    double reward_scale = 500.0;
    double dt_hours = 1.0;
    std::vector<int> monitored;  // bus ids in N^v; empty means every load bus

    /// Paper defaults with C^s taken from the feeder.
    static RewardParams for_feeder(const grid::Network& net);
    void validate() const;
    std::vector<int> monitored_buses(const grid::Network& net) const;

    nlohmann::json to_json() const;
    static RewardParams from_json(const nlohmann::json& j);
};

/// Hourly net injections (p.u.) for every bus; row t is hour t.
class InjectionSeries {
public:
    InjectionSeries() = default;
    InjectionSeries(std::size_t hours, std::size_t buses)
        : hours_(hours), buses_(buses), p_(hours * buses, 0.0), q_(hours * buses, 0.0) {}

    std::size_t hours() const { return hours_; }
    std::size_t buses() const { return buses_; }

    double& p(std::size_t t, std::size_t bus) { return p_[t * buses_ + bus]; }
    double& q(std::size_t t, std::size_t bus) { return q_[t * buses_ + bus]; }
    double p(std::size_t t, std::size_t bus) const { return p_[t * buses_ + bus]; }
    double q(std::size_t t, std::size_t bus) const { return q_[t * buses_ + bus]; }

    grid::InjectionFrame frame(int t) const;

    const std::vector<double>& p_data() const { return p_; }
    const std::vector<double>& q_data() const { return q_; }
    std::vector<double>& p_data() { return p_; }
    std::vector<double>& q_data() { return q_; }

    friend bool operator==(const InjectionSeries&, const InjectionSeries&) = default;

private:
    std::size_t hours_ = 0;
    std::size_t buses_ = 0;
    std::vector<double> p_;
    std::vector<double> q_;
};

struct DnrState {
    grid::InjectionFrame injections;
    Configuration config;
    int t = 0;
};

/// Unscaled reward components for one hour, all in $.
struct StepInfo {
    double loss_kw = 0.0;
    double loss_cost = 0.0;
    double switch_cost = 0.0;
    double penalty = 0.0;  // lambda * violation
    double violation = 0.0;
    bool converged = true;

    double total_cost() const { return loss_cost + switch_cost + penalty; }
};

struct StepResult {
    DnrState next;
    double reward = 0.0;  // R = -(loss_cost + switch_cost + penalty), unscaled
    StepInfo info;
};

/// Cost of taking `action` from `config` under injections `frame`, evaluated on `net`.
/// Power flow uses the post-action configuration. info.converged is false on
/// non-convergence (costs then undefined).
StepInfo evaluate_action(const grid::Network& net, const grid::InjectionFrame& frame,
                         const Configuration& config, const topo::SwitchPairMask& mask,
                         const DnrAction& action, const RewardParams& params);

/// evaluate_action over a list of candidate actions.
std::vector<StepInfo> evaluate_actions(const grid::Network& net, const grid::InjectionFrame& frame,
                                       const Configuration& config, const topo::SwitchPairMask& mask,
                                       std::span<const DnrAction> actions, const RewardParams& params,
                                       Exec exec = Exec::Parallel);

/// The MDP: replays an exogenous injection series; actions only move switches.
class DnrEnv {
public:
    DnrEnv(const grid::Network& net, const InjectionSeries& series, RewardParams params);

    const grid::Network& network() const { return *net_; }
    const InjectionSeries& series() const { return *series_; }
    const RewardParams& params() const { return params_; }

    DnrState reset(const Configuration& initial, int t0) const;
    /// Throws RejectedAction for infeasible actions and NumericalError when the
    /// power flow does not converge.
    StepResult step(const DnrState& state, const DnrAction& action) const;

    /// Process-wide count of step() calls, used to prove batch-only training.
    static long step_calls() { return step_calls_.load(); }

private:
    const grid::Network* net_;
    const InjectionSeries* series_;
    RewardParams params_;
    static std::atomic<long> step_calls_;
};

/// z-score constants for the load-bus injections.
struct FeatureNorms {
    std::vector<double> p_mean, p_std, q_mean, q_std;

    nlohmann::json to_json() const;
    static FeatureNorms from_json(const nlohmann::json& j);
};

/// Statistics over hours [begin, end) of the series.
FeatureNorms compute_norms(const grid::Network& net, const InjectionSeries& series, int begin, int end);

std::size_t feature_dim(const grid::Network& net);

/// [normalised p (load buses), normalised q, alpha bits, sin/cos hour-of-day, sin/cos day-of-week].
std::vector<double> encode_state(const grid::Network& net, const FeatureNorms& norms,
                                 const grid::InjectionFrame& inj, const Configuration& config, int t);
inline std::vector<double> encode_state(const grid::Network& net, const FeatureNorms& norms,
                                        const DnrState& s) {
    return encode_state(net, norms, s.injections, s.config, s.t);
}

}  // namespace dnr::env
