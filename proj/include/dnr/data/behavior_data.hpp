#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "dnr/env/dnr_env.hpp"
#include "dnr/env/transitions.hpp"
#include "dnr/nn/mlp.hpp"

namespace dnr::data {

using env::Configuration;
using env::DnrAction;
using Rng = nn::Rng;

inline constexpr int kHoursPerWeek = 168;

struct ScenarioProbs {
    double p_mod = 0.0;
    double p_fix = 1.0;
    double p_rnd = 0.0;

    /// Throws ValidationError unless non-negative and summing to 1 (1e-9).
    void validate() const;
    /// P_mod given, remaining mass split P_fix : P_rnd = ratio : 1.
    static ScenarioProbs from_ratio(double p_mod, double fix_to_rnd = 4.0);

    nlohmann::json to_json() const;
    static ScenarioProbs from_json(const nlohmann::json& j);
};

/// Synthetic smart-meter generator. Each customer is a base level times daily,
/// weekly and annual shapes times mean-one lognormal noise.
struct SyntheticLoadSpec {
    int weeks = 76;
    int customers_per_bus = 30;
    double mean_kw = 1.0;          // median base level of a customer
    double base_sigma = 0.3;       // lognormal spread of customer base levels
    double daily_amplitude = 0.35;
    double weekly_amplitude = 0.1;
    double annual_amplitude = 0.15;
    double noise_sigma = 0.25;
    double solar_peak_ratio = 1.5;  // solar peak kW over the bus's mean demand
    double power_factor = 0.98;
    std::uint64_t seed = 1;

    void validate() const;
    nlohmann::json to_json() const;
    static SyntheticLoadSpec from_json(const nlohmann::json& j);
};

/// Hourly demand and solar output per bus (kW), indexed [bus id][hour].
/// Substations carry empty series; non-solar buses carry empty solar series.
struct LoadLibrary {
    std::size_t hours = 0;
    double power_factor = 0.98;
    std::vector<std::vector<double>> demand_kw;
    std::vector<std::vector<double>> solar_kw;

    double q_kvar(std::size_t bus, std::size_t t) const;
    /// Sum over buses of demand minus solar at hour t.
    double net_demand_kw(std::size_t t) const;
};

/// 30 customers per load bus, or 15 for feeders with more than 60 buses.
int default_customers_per_bus(const grid::Network& net);

LoadLibrary synthetic_library(const grid::Network& net, const SyntheticLoadSpec& spec);

/// CSV ingestion. `meters` holds rows (customer-id, hour-index, kWh) with an
/// optional header line; customers are assigned to load buses in ascending id
/// order, `customers_per_bus` each. Every customer must cover hours [0, hours).
/// Solar buses use the generator's solar shape (seeded by `solar_seed`).
/// Throws ParseError listing gaps, ValidationError when customers are too few.
LoadLibrary ingest_csv(const grid::Network& net, const std::filesystem::path& meters,
                       int customers_per_bus, std::size_t hours, std::uint64_t solar_seed = 1);

/// Per-unit injections with every series scaled by beta.
env::InjectionSeries build_injection_series(const grid::Network& net, const LoadLibrary& lib, double beta);

struct CalibrationResult {
    double beta = 0.0;
    double ratio = 0.0;  // realised mean losses / mean net demand
    int iterations = 0;
};

/// Bisection in log(beta) over [1e-3, 1e3] until the realised ratio is within
/// 0.1% of target. Non-convergent power flows count as an infinite ratio.
/// Throws CalibrationError for targets outside (0, 0.1) or an unbracketed target.
CalibrationResult calibrate_beta(const grid::Network& net, const LoadLibrary& lib,
                                 const Configuration& base_config, double target_ratio,
                                 const std::vector<int>& sample_hours);
/// Evenly spaced sample of `count` hours over [begin, end).
std::vector<int> sample_hours(int begin, int end, int count);
double loss_ratio(const grid::Network& net, const LoadLibrary& lib, const Configuration& config,
                  double beta, const std::vector<int>& hours);

/// Multiplicative impedance errors, one draw from {0.9, 1.1} per branch and quantity.
struct Perturbation {
    std::vector<double> r_factor;
    std::vector<double> x_factor;

    static Perturbation none(const grid::Network& net);
    static Perturbation draw(const grid::Network& net, Rng& rng);
    grid::Network apply(const grid::Network& net) const;
    nlohmann::json to_json() const;
    static Perturbation from_json(const nlohmann::json& j);
};

/// One-hour look-ahead branch exchange on the (possibly perturbed) model. Evaluates
/// stay and every off-diagonal feasible pair and returns the cheapest; ties go to
/// stay, then to the lexicographically smallest pair. Stay is the canonical cell.
DnrAction greedy_controller(const grid::Network& model, const grid::InjectionFrame& frame,
                            const Configuration& config, const env::RewardParams& params,
                            Exec exec = Exec::Parallel);

/// Off-diagonal feasible pairs whose post-action power flow converges on `net`
/// under `frame` with every monitored voltage inside [v_lo, v_hi], in lexicographic
/// order. These are the constraint-satisfying random moves.
std::vector<DnrAction> operable_moves(const grid::Network& net, const grid::InjectionFrame& frame,
                                      const Configuration& config, const env::RewardParams& params,
                                      Exec exec = Exec::Parallel);

/// Exact behaviour distribution over the m*m cells, given the controller's choice:
/// P_mod on the controller cell, P_fix on the canonical stay cell, P_rnd uniform
/// over `moves` (folded into stay when empty).
std::vector<double> behavior_distribution(const topo::SwitchPairMask& mask, const DnrAction& controller,
                                          const ScenarioProbs& probs, const std::vector<DnrAction>& moves);

struct GenerateOptions {
    ScenarioProbs probs;
    int hours = 53 * kHoursPerWeek;
    int t0 = 0;
    Configuration initial;
};

/// Rolls the three-scenario behaviour policy through `env` (true network).
/// The controller runs on `model` at every hour when P_mod > 0 and its choice is
/// recorded; otherwise the recorded controller action is the canonical stay. A
/// controller choice that does not converge on the true network is replaced by
/// stay. Random moves are drawn uniformly from operable_moves on the true network.
/// When the chosen action does not converge on the true network, the cheapest
/// convergent pair on the true network is applied instead and the row is marked
/// Scenario::Emergency; NumericalError if no pair converges.
std::vector<env::Transition> generate_batch(const env::DnrEnv& env, const grid::Network& model,
                                            const GenerateOptions& opt, Rng& rng);

/// End-to-end dataset recipe.
struct DatasetSpec {
    ScenarioProbs probs;
    int weeks = 53;  // recorded weeks; the last one is the test week
    int train_weeks = 52;
    double target_loss_ratio = 0.015;
    int calibration_hours = 336;
    std::uint64_t seed = 1;  // scenario draws and perturbations
    SyntheticLoadSpec loads;

    nlohmann::json to_json() const;
};

/// Synthetic library, beta calibration on the all-ties-open configuration,
/// perturbation draw and generate_batch. Header records probs, beta, seed and
/// the perturbation draws.
env::TransitionBatch build_dataset(const grid::Network& net, const DatasetSpec& spec,
                                   Exec exec = Exec::Parallel);
/// Same, from a pre-built library.
env::TransitionBatch build_dataset(const grid::Network& net, const LoadLibrary& lib, const DatasetSpec& spec,
                                   Exec exec = Exec::Parallel);

/// The true network embedded in a batch header by build_dataset.
grid::Network batch_network(const env::TransitionBatch& batch);

/// Exact behaviour distribution of a recorded row (needs the batch header's probs).
/// Emergency rows are a point mass on the recorded action.
std::vector<double> recorded_behavior(const grid::Network& net, const env::TransitionBatch& batch,
                                      const env::Transition& row);

}  // namespace dnr::data
