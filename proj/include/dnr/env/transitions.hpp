#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dnr/env/dnr_env.hpp"

namespace dnr::env {

/// Emergency marks an hour where the drawn action would not converge and the
/// operator fell back to the cheapest convergent exchange.
enum class Scenario : int { ModelBased = 0, Fixed = 1, Random = 2, Emergency = 3 };

/// One (s, a, r, s') record. States are stored raw: the injections are row t
/// (resp. t + 1) of the batch's series, so features can be rebuilt with the
/// batch's normalisation constants.
struct Transition {
    int t = 0;
    Configuration config;
    DnrAction action;
    double reward = 0.0;  // scaled: R / reward_scale
    double loss_cost = 0.0;
    double switch_cost = 0.0;
    double penalty = 0.0;
    Configuration next_config;
    Scenario scenario = Scenario::Fixed;
    /// Model-based controller's choice at this state; exposes the exact
    /// behaviour mixture for evaluation.
    DnrAction controller_action;

    double unscaled_cost() const { return loss_cost + switch_cost + penalty; }
};

/// Transition file contents.
///
/// File layout (little endian):
///   "DNRBATCH" | u64 header_len | header JSON | u32 column_count
///   | per column: u32 name_len | name | u8 type (0 f64, 1 i32, 2 u8) | u64 count | payload
/// Columns: t, close, open, reward, loss_cost, switch_cost, penalty, scenario,
/// ctl_close, ctl_open (one value per row); alpha, alpha_next (m values per row);
/// series_p, series_q (hours * buses values).
struct TransitionBatch {
    static constexpr int kSchemaVersion = 1;

    std::string feeder;
    nlohmann::json header = nlohmann::json::object();  // free metadata (probs, beta, seed, ...)
    RewardParams reward;
    FeatureNorms norms;
    InjectionSeries series;
    std::vector<Transition> rows;
    std::size_t train_rows = 0;  // rows [0, train_rows) are the training split
};

void write_batch(const std::filesystem::path& path, const TransitionBatch& batch);
TransitionBatch read_batch(const std::filesystem::path& path);

}  // namespace dnr::env
