#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dnr/agents/agents.hpp"
#include "dnr/data/behavior_data.hpp"

namespace dnr::harness {

struct ExperimentConfig {
    std::filesystem::path feeder;   // feeder JSON
    std::filesystem::path hparams;  // per-feeder hyperparameter JSON
    std::vector<double> p_mod{0.1, 0.5, 1.0};
    double fix_to_rnd = 4.0;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<agents::Algo> algorithms{agents::Algo::Bcsac, agents::Algo::Sac, agents::Algo::Dqn};
    std::uint64_t dataset_seed = 1;
    int weeks = 53;
    int train_weeks = 52;
    std::filesystem::path output;
    /// Merged into every agent's hyperparameters (e.g. {"steps": 2000}).
    nlohmann::json agent_overrides = nlohmann::json::object();
    /// Merged into the CVAE configuration.
    nlohmann::json cvae_overrides = nlohmann::json::object();
    data::SyntheticLoadSpec loads;
    bool write_checkpoints = true;

    /// Paths are resolved relative to `base`. Throws ValidationError when a file is
    /// missing or a probability row is invalid.
    static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
    static ExperimentConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    void validate() const;
};

struct CellResult {
    double p_mod = 0.0;
    agents::Algo algo = agents::Algo::Bcsac;
    std::uint64_t seed = 0;
    bool ok = false;
    double weekly_cost = 0.0;
    std::string error;
    std::string checkpoint;  // relative to the output directory
};

struct DatasetResult {
    double p_mod = 0.0;
    data::ScenarioProbs probs;
    bool ok = false;
    std::string error;
    double beta = 0.0;
    double historical_cost = 0.0;
    double stay_cost = 0.0;
    double tv_trained = 0.0;
    double tv_untrained = 0.0;
    std::string file;
};

struct ExperimentResults {
    std::vector<DatasetResult> datasets;
    std::vector<CellResult> cells;
    /// Median weekly cost per (algorithm, p_mod) over successful seeds.
    std::optional<double> median(agents::Algo algo, double p_mod) const;
    const DatasetResult* dataset(double p_mod) const;
};

double median(std::vector<double> v);

/// gen-data, train-cvae, train and evaluate for every (p_mod, algorithm, seed) cell.
/// A failing stage marks its cells failed and keeps the others. Writes
/// results.csv, costs.csv, manifest.json and timing.json into config.output.
ExperimentResults run_experiment(const ExperimentConfig& config);

/// Rows: algorithms, "Historical", "Stay"; columns: p_mod. Missing cells are blank
/// and footnoted.
std::string report_costs(const ExperimentResults& results, const std::vector<agents::Algo>& algorithms,
                         const std::vector<double>& p_mod);

/// Lowercase hex SHA-256 of a file.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace dnr::harness
