#include "dnr/harness/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <openssl/evp.h>

#include "dnr/error.hpp"

namespace dnr::harness {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fixed(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() || base.empty() ? p : base / p; }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << text;
}

std::string pmod_tag(double p) { return "pmod" + fixed(p, 2); }

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, const fs::path& base) {
    ExperimentConfig c;
    try {
        c.feeder = resolve(j.at("feeder").get<std::string>(), base);
        c.hparams = resolve(j.at("hparams").get<std::string>(), base);
        c.p_mod = j.value("p_mod", c.p_mod);
        c.fix_to_rnd = j.value("fix_to_rnd", c.fix_to_rnd);
        c.seeds = j.value("seeds", c.seeds);
        if (j.contains("algorithms")) {
            c.algorithms.clear();
            for (const auto& a : j.at("algorithms")) c.algorithms.push_back(agents::parse_algo(a.get<std::string>()));
        }
        c.dataset_seed = j.value("dataset_seed", c.dataset_seed);
        c.weeks = j.value("weeks", c.weeks);
        c.train_weeks = j.value("train_weeks", c.train_weeks);
        c.output = resolve(j.value("output", std::string("results")), base);
        c.agent_overrides = j.value("agent_overrides", c.agent_overrides);
        c.cvae_overrides = j.value("cvae_overrides", c.cvae_overrides);
        if (j.contains("loads")) c.loads = data::SyntheticLoadSpec::from_json(j.at("loads"));
        c.write_checkpoints = j.value("write_checkpoints", c.write_checkpoints);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("experiment config: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open experiment config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
}

nlohmann::json ExperimentConfig::to_json() const {
    std::vector<std::string> algos;
    for (auto a : algorithms) algos.push_back(agents::to_string(a));
    return {{"feeder", feeder.string()},
            {"hparams", hparams.string()},
            {"p_mod", p_mod},
            {"fix_to_rnd", fix_to_rnd},
            {"seeds", seeds},
            {"algorithms", algos},
            {"dataset_seed", dataset_seed},
            {"weeks", weeks},
            {"train_weeks", train_weeks},
            {"agent_overrides", agent_overrides},
            {"cvae_overrides", cvae_overrides},
            {"loads", loads.to_json()},
            {"write_checkpoints", write_checkpoints}};
}

void ExperimentConfig::validate() const {
    if (!fs::exists(feeder)) throw ValidationError("feeder file " + feeder.string() + " does not exist");
    if (!fs::exists(hparams)) throw ValidationError("hyperparameter file " + hparams.string() + " does not exist");
    if (p_mod.empty() || seeds.empty() || algorithms.empty())
        throw ValidationError("experiment needs at least one P_mod, seed and algorithm");
    for (double p : p_mod) data::ScenarioProbs::from_ratio(p, fix_to_rnd).validate();
    if (train_weeks <= 0 || train_weeks >= weeks) throw ValidationError("experiment needs 0 < train_weeks < weeks");
}

double median(std::vector<double> v) {
    require(!v.empty(), "median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::optional<double> ExperimentResults::median(agents::Algo algo, double p_mod) const {
    std::vector<double> costs;
    for (const auto& c : cells)
        if (c.ok && c.algo == algo && std::abs(c.p_mod - p_mod) < 1e-12) costs.push_back(c.weekly_cost);
    if (costs.empty()) return std::nullopt;
    return harness::median(costs);
}

const DatasetResult* ExperimentResults::dataset(double p_mod) const {
    for (const auto& d : datasets)
        if (std::abs(d.p_mod - p_mod) < 1e-12) return &d;
    return nullptr;
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot hash " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int k = 0; k < len; ++k) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[k]);
    return hex.str();
}

std::string report_costs(const ExperimentResults& results, const std::vector<agents::Algo>& algorithms,
                         const std::vector<double>& p_mod) {
    std::ostringstream out;
    out << "algorithm";
    for (double p : p_mod) out << ",P_mod=" << fixed(p, 2);
    out << "\n";
    bool missing = false;
    auto cell = [&](std::optional<double> v) {
        if (v) return fixed(*v);
        missing = true;
        return std::string{};
    };
    for (auto a : algorithms) {
        out << agents::to_string(a);
        for (double p : p_mod) out << "," << cell(results.median(a, p));
        out << "\n";
    }
    auto dataset_row = [&](const char* name, auto field) {
        out << name;
        for (double p : p_mod) {
            const auto* d = results.dataset(p);
            out << "," << cell(d && d->ok ? std::optional<double>(field(*d)) : std::nullopt);
        }
        out << "\n";
    };
    dataset_row("Historical", [](const DatasetResult& d) { return d.historical_cost; });
    dataset_row("Stay", [](const DatasetResult& d) { return d.stay_cost; });
    if (missing) out << "# blank cells: stage failed or no successful seed\n";
    return out.str();
}

ExperimentResults run_experiment(const ExperimentConfig& config) {
    config.validate();
    fs::create_directories(config.output);
    const auto net = grid::load_feeder(config.feeder);
    auto hyper = agents::FeederHyper::load(config.hparams);
    auto apply_overrides = [&](agents::AgentHyper h) {
        auto j = h.to_json();
        j.update(config.agent_overrides);
        return agents::AgentHyper::from_json(j, h.algo);
    };
    hyper.dqn = apply_overrides(hyper.dqn);
    hyper.sac = apply_overrides(hyper.sac);
    hyper.bcsac = apply_overrides(hyper.bcsac);
    {
        auto j = hyper.cvae.to_json();
        j.update(config.cvae_overrides);
        hyper.cvae = bm::CvaeConfig::from_json(j);
    }
    const bool need_cvae =
        std::find(config.algorithms.begin(), config.algorithms.end(), agents::Algo::Bcsac) != config.algorithms.end();

    ExperimentResults results;
    nlohmann::json manifest;
    manifest["config"] = config.to_json();
    manifest["hyperparameters"] = {{"dqn", hyper.dqn.to_json()},
                                   {"sac", hyper.sac.to_json()},
                                   {"bcsac", hyper.bcsac.to_json()},
                                   {"cvae", hyper.cvae.to_json()}};
    manifest["datasets"] = nlohmann::json::array();
    nlohmann::json timing{{"stages", nlohmann::json::array()}};
    nlohmann::json files = nlohmann::json::object();

    for (double p : config.p_mod) {
        DatasetResult dr;
        dr.p_mod = p;
        dr.probs = data::ScenarioProbs::from_ratio(p, config.fix_to_rnd);
        const std::string tag = pmod_tag(p);
        env::TransitionBatch batch;
        std::optional<bm::CvaeModel> cvae;
        try {
            auto t = Clock::now();
            data::DatasetSpec spec;
            spec.probs = dr.probs;
            spec.weeks = config.weeks;
            spec.train_weeks = config.train_weeks;
            spec.seed = config.dataset_seed;
            spec.loads = config.loads;
            spec.loads.customers_per_bus = config.loads.customers_per_bus > 0 ? config.loads.customers_per_bus
                                                                              : data::default_customers_per_bus(net);
            batch = data::build_dataset(net, spec);
            if (hyper.reward_scale != batch.reward.reward_scale) {
                for (auto& row : batch.rows) row.reward *= batch.reward.reward_scale / hyper.reward_scale;
                batch.reward.reward_scale = hyper.reward_scale;
            }
            dr.file = tag + ".batch";
            env::write_batch(config.output / dr.file, batch);
            files[dr.file] = sha256_file(config.output / dr.file);
            dr.beta = batch.header.at("beta").get<double>();
            dr.historical_cost = agents::historical_cost(batch);
            const env::DnrEnv env(net, batch.series, batch.reward);
            const auto week = agents::test_week(batch);
            dr.stay_cost = agents::evaluate_weekly_cost(env, agents::stay_policy(), week.initial, week.t0, week.hours).total;
            timing["stages"].push_back({{"stage", "gen-data"}, {"p_mod", p}, {"seconds", seconds_since(t)}});

            if (need_cvae) {
                t = Clock::now();
                const auto train = rl::OfflineDataset::training(net, batch);
                nn::Rng rng(config.dataset_seed);
                const auto untrained = bm::CvaeModel::create(train.state_dim(), train.cells(), hyper.cvae, rng);
                nn::Rng rng_train(config.dataset_seed);
                cvae = bm::train_cvae(train, hyper.cvae, rng_train).model;
                const std::string ckpt = tag + ".cvae";
                nn::write_checkpoint(config.output / ckpt, cvae->to_checkpoint({{"p_mod", p}}));
                files[ckpt] = sha256_file(config.output / ckpt);
                nn::Matrix ref(train.size(), train.cells());
                for (std::size_t k = 0; k < train.size(); ++k) {
                    const auto pi = data::recorded_behavior(net, batch, batch.rows[train.source_row(k)]);
                    std::copy(pi.begin(), pi.end(), ref.row(k).begin());
                }
                nn::Matrix mt, mu;
                std::vector<std::size_t> all(train.size());
                for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
                agents::CvaeBehavior(*cvae, train, hyper.cvae.samples, config.dataset_seed).distributions(all, mt);
                agents::CvaeBehavior(untrained, train, hyper.cvae.samples, config.dataset_seed).distributions(all, mu);
                dr.tv_trained = bm::avg_tv_distance(ref, mt);
                dr.tv_untrained = bm::avg_tv_distance(ref, mu);
                timing["stages"].push_back({{"stage", "train-cvae"}, {"p_mod", p}, {"seconds", seconds_since(t)}});
            }
            dr.ok = true;
        } catch (const std::exception& e) {
            dr.error = e.what();
            std::cerr << "dataset P_mod=" << p << " failed: " << e.what() << "\n";
        }
        manifest["datasets"].push_back({{"p_mod", p},
                                        {"probs", dr.probs.to_json()},
                                        {"ok", dr.ok},
                                        {"error", dr.error},
                                        {"file", dr.file},
                                        {"beta", dr.beta},
                                        {"seed", config.dataset_seed},
                                        {"perturbation", dr.ok ? batch.header.at("perturbation") : nlohmann::json()},
                                        {"historical_cost", dr.historical_cost},
                                        {"stay_cost", dr.stay_cost},
                                        {"tv_trained", dr.tv_trained},
                                        {"tv_untrained", dr.tv_untrained}});
        results.datasets.push_back(dr);

        const auto train = dr.ok ? rl::OfflineDataset::training(net, batch) : rl::OfflineDataset{};
        std::unique_ptr<agents::CvaeBehavior> behavior;
        if (dr.ok && cvae) behavior = std::make_unique<agents::CvaeBehavior>(*cvae, train, hyper.cvae.samples, config.dataset_seed);

        for (auto algo : config.algorithms)
            for (auto seed : config.seeds) {
                CellResult cell{p, algo, seed, false, 0.0, {}, {}};
                if (!dr.ok) {
                    cell.error = "dataset stage failed";
                    results.cells.push_back(cell);
                    continue;
                }
                try {
                    auto t = Clock::now();
                    nn::Rng rng(seed);
                    const env::DnrEnv env(net, batch.series, batch.reward);
                    const auto week = agents::test_week(batch);
                    nn::Checkpoint final_ckpt;
                    agents::Policy policy;
                    agents::ActorCriticResult ac;
                    agents::DqnResult dq;
                    if (algo == agents::Algo::Dqn) {
                        dq = agents::train_dqn(train, hyper.dqn, rng);
                        final_ckpt = dq.model.to_checkpoint({{"p_mod", p}, {"seed", seed}});
                        policy = agents::greedy_dqn_policy(dq.model.q, net, batch.norms);
                    } else {
                        ac = algo == agents::Algo::Bcsac ? agents::train_bcsac(train, *behavior, hyper.bcsac, rng)
                                                          : agents::train_sac(train, hyper.sac, rng);
                        final_ckpt = ac.model.to_checkpoint({{"p_mod", p}, {"seed", seed}});
                        policy = agents::greedy_actor_policy(ac.model.actor, net, batch.norms);
                    }
                    const double train_s = seconds_since(t);
                    t = Clock::now();
                    cell.weekly_cost = agents::evaluate_weekly_cost(env, policy, week.initial, week.t0, week.hours).total;
                    const double eval_s = seconds_since(t);
                    if (config.write_checkpoints) {
                        cell.checkpoint = tag + "_" + agents::to_string(algo) + "_seed" + std::to_string(seed) + ".ckpt";
                        nn::write_checkpoint(config.output / cell.checkpoint, final_ckpt);
                        files[cell.checkpoint] = sha256_file(config.output / cell.checkpoint);
                    }
                    cell.ok = true;
                    timing["stages"].push_back({{"stage", "train"},
                                                {"p_mod", p},
                                                {"algorithm", agents::to_string(algo)},
                                                {"seed", seed},
                                                {"seconds", train_s},
                                                {"inference_ms_per_decision", 1000.0 * eval_s / week.hours}});
                } catch (const std::exception& e) {
                    cell.error = e.what();
                    std::cerr << "cell P_mod=" << p << " " << agents::to_string(algo) << " seed " << seed
                              << " failed: " << e.what() << "\n";
                }
                results.cells.push_back(cell);
            }
    }

    std::ostringstream raw;
    raw << "p_mod,algorithm,seed,status,weekly_cost\n";
    for (const auto& c : results.cells)
        raw << fixed(c.p_mod) << "," << agents::to_string(c.algo) << "," << c.seed << "," << (c.ok ? "ok" : "failed")
            << "," << (c.ok ? fixed(c.weekly_cost) : "") << "\n";
    write_text(config.output / "results.csv", raw.str());
    write_text(config.output / "costs.csv", report_costs(results, config.algorithms, config.p_mod));
    files["results.csv"] = sha256_file(config.output / "results.csv");
    files["costs.csv"] = sha256_file(config.output / "costs.csv");
    manifest["files"] = files;
    manifest["cells"] = nlohmann::json::array();
    for (const auto& c : results.cells)
        manifest["cells"].push_back({{"p_mod", c.p_mod},
                                     {"algorithm", agents::to_string(c.algo)},
                                     {"seed", c.seed},
                                     {"ok", c.ok},
                                     {"error", c.error},
                                     {"checkpoint", c.checkpoint}});
    write_text(config.output / "manifest.json", manifest.dump(2) + "\n");
    write_text(config.output / "timing.json", timing.dump(2) + "\n");
    return results;
}

}  // namespace dnr::harness
