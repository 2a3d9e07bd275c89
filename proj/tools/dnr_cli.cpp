#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dnr/agents/agents.hpp"
#include "dnr/bm/cvae.hpp"
#include "dnr/data/behavior_data.hpp"
#include "dnr/env/transitions.hpp"
#include "dnr/error.hpp"
#include "dnr/harness/harness.hpp"
#include "dnr/tabular/tabular.hpp"
#include "dnr/topology/topology.hpp"

using namespace dnr;
namespace fs = std::filesystem;

namespace {

constexpr const char* kBatchFile = "transitions.batch";

fs::path batch_path(const fs::path& data) { return fs::is_directory(data) ? data / kBatchFile : data; }

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

struct GenData {
    std::string feeder, out, meters;
    double p_mod = 0.5, fix_to_rnd = 4.0;
    std::uint64_t seed = 1;
    int weeks = 53, train_weeks = 52, customers = 0;
};

int gen_data(const GenData& o) {
    const auto net = grid::load_feeder(o.feeder);
    data::DatasetSpec spec;
    spec.probs = data::ScenarioProbs::from_ratio(o.p_mod, o.fix_to_rnd);
    spec.weeks = o.weeks;
    spec.train_weeks = o.train_weeks;
    spec.seed = o.seed;
    spec.loads.customers_per_bus = o.customers > 0 ? o.customers : data::default_customers_per_bus(net);
    env::TransitionBatch batch;
    if (o.meters.empty()) {
        batch = data::build_dataset(net, spec);
    } else {
        const auto hours = static_cast<std::size_t>(spec.loads.weeks) * data::kHoursPerWeek;
        const auto lib = data::ingest_csv(net, o.meters, spec.loads.customers_per_bus, hours, o.seed);
        batch = data::build_dataset(net, lib, spec);
    }
    fs::create_directories(o.out);
    env::write_batch(fs::path(o.out) / kBatchFile, batch);
    std::ofstream(fs::path(o.out) / "header.json") << batch.header.dump(2) << "\n";
    std::cout << "rows " << batch.rows.size() << " (train " << batch.train_rows << "), beta "
              << batch.header.at("beta").get<double>() << ", historical test-week cost "
              << fmt(agents::historical_cost(batch), 2) << "\n";
    return 0;
}

struct TrainCvae {
    std::string data, hp, out;
    std::uint64_t seed = 1;
    int steps = 0, hidden = 0;
    double lr = 0.0;
    bool tv = false;
};

int train_cvae(const TrainCvae& o) {
    const auto batch = env::read_batch(batch_path(o.data));
    const auto net = data::batch_network(batch);
    auto cfg = agents::FeederHyper::load(o.hp).cvae;
    if (o.steps > 0) cfg.steps = o.steps;
    if (o.hidden > 0) cfg.hidden = static_cast<std::size_t>(o.hidden);
    if (o.lr > 0.0) cfg.learning_rate = o.lr;
    const auto train = rl::OfflineDataset::training(net, batch);
    nn::Rng rng(o.seed);
    const auto res = bm::train_cvae(train, cfg, rng);
    nn::write_checkpoint(o.out, res.model.to_checkpoint({{"config", cfg.to_json()}, {"seed", o.seed}}));
    std::cout << "final negative ELBO " << fmt(res.loss_curve.back()) << "\n";
    if (o.tv) {
        nn::Matrix ref(train.size(), train.cells()), model;
        std::vector<std::size_t> all(train.size());
        for (std::size_t k = 0; k < train.size(); ++k) {
            all[k] = k;
            const auto pi = data::recorded_behavior(net, batch, batch.rows[train.source_row(k)]);
            std::copy(pi.begin(), pi.end(), ref.row(k).begin());
        }
        agents::CvaeBehavior(res.model, train, cfg.samples, o.seed).distributions(all, model);
        std::cout << "average TV distance to the exact behaviour policy " << fmt(bm::avg_tv_distance(ref, model))
                  << "\n";
    }
    return 0;
}

struct Train {
    std::string algo, data, cvae, hp, out;
    std::uint64_t seed = 1;
    int steps = 0;
};

int train(const Train& o) {
    const auto algo = agents::parse_algo(o.algo);
    const auto batch = env::read_batch(batch_path(o.data));
    const auto net = data::batch_network(batch);
    const auto fh = agents::FeederHyper::load(o.hp);
    auto hyper = fh.get(algo);
    if (o.steps > 0) hyper.steps = o.steps;
    const auto data = rl::OfflineDataset::training(net, batch);
    nn::Rng rng(o.seed);
    fs::create_directories(o.out);
    std::vector<nn::Checkpoint> checkpoints;
    agents::TrainCurves curves;
    nn::Checkpoint final_ckpt;
    const nlohmann::json meta{{"seed", o.seed}, {"data", batch.header}};
    if (algo == agents::Algo::Dqn) {
        auto res = agents::train_dqn(data, hyper, rng);
        checkpoints = std::move(res.checkpoints);
        curves = std::move(res.curves);
        final_ckpt = res.model.to_checkpoint(meta);
    } else {
        agents::ActorCriticResult res;
        if (algo == agents::Algo::Bcsac) {
            if (o.cvae.empty()) throw ValidationError("train --algo bcsac needs --cvae");
            const auto cvae = bm::CvaeModel::from_checkpoint(nn::read_checkpoint(o.cvae));
            const agents::CvaeBehavior behavior(cvae, data, fh.cvae.samples, o.seed);
            res = agents::train_bcsac(data, behavior, hyper, rng);
        } else {
            res = agents::train_sac(data, hyper, rng);
        }
        checkpoints = std::move(res.checkpoints);
        curves = std::move(res.curves);
        final_ckpt = res.model.to_checkpoint(meta);
    }
    for (const auto& c : checkpoints)
        nn::write_checkpoint(fs::path(o.out) / ("step" + std::to_string(c.meta.at("step").get<int>()) + ".ckpt"), c);
    nn::write_checkpoint(fs::path(o.out) / "model.ckpt", final_ckpt);
    std::ofstream csv(fs::path(o.out) / "curves.csv");
    csv << "step,critic_loss,value_loss,actor_grad_norm\n";
    for (std::size_t k = 0; k < curves.critic_loss.size(); ++k)
        csv << k + 1 << "," << curves.critic_loss[k] << ","
            << (k < curves.value_loss.size() ? fmt(curves.value_loss[k], 8) : "") << ","
            << (k < curves.actor_grad_norm.size() ? fmt(curves.actor_grad_norm[k], 8) : "") << "\n";
    std::cout << "wrote " << checkpoints.size() << " checkpoints and model.ckpt to " << o.out << "\n";
    return 0;
}

struct Evaluate {
    std::string model, feeder, data, week = "test", out;
};

int evaluate(const Evaluate& o) {
    const auto batch = env::read_batch(batch_path(o.data));
    const auto net = data::batch_network(batch);
    if (!o.feeder.empty() && grid::feeder_to_json(grid::load_feeder(o.feeder)) != grid::feeder_to_json(net))
        throw ValidationError("--feeder " + o.feeder + " differs from the network recorded in the batch");
    const env::DnrEnv env(net, batch.series, batch.reward);
    auto week = agents::test_week(batch);
    if (o.week != "test") {
        const int w = std::stoi(o.week);
        week.t0 = w * data::kHoursPerWeek;
        if (w < 0 || static_cast<std::size_t>(week.t0) >= batch.rows.size())
            throw ValidationError("week " + o.week + " is outside the recorded data");
        week.initial = batch.rows[static_cast<std::size_t>(week.t0)].config;
    }
    agents::Policy policy;
    if (o.model == "stay") {
        policy = agents::stay_policy();
    } else if (o.model == "historical") {
        policy = agents::replay_policy(batch);
    } else {
        const auto ckpt = nn::read_checkpoint(o.model);
        const auto kind = ckpt.meta.value("kind", std::string{});
        if (kind == "dqn")
            policy = agents::greedy_dqn_policy(agents::DqnModel::from_checkpoint(ckpt).q, net, batch.norms);
        else
            policy = agents::greedy_actor_policy(agents::ActorCritic::from_checkpoint(ckpt).actor, net, batch.norms);
    }
    const auto cost = agents::evaluate_weekly_cost(env, policy, week.initial, week.t0, week.hours);
    if (!o.out.empty()) {
        std::ofstream csv(o.out);
        csv << "hour,close,open,cost\n";
        for (std::size_t h = 0; h < cost.hourly.size(); ++h)
            csv << week.t0 + static_cast<int>(h) << "," << cost.actions[h].close << "," << cost.actions[h].open << ","
                << fmt(cost.hourly[h]) << "\n";
    }
    std::cout << "weekly cost " << fmt(cost.total, 2) << " (non-converged hours " << cost.nonconverged << ")\n";
    return 0;
}

int count_configs(const std::string& feeder) {
    const auto net = grid::load_feeder(feeder);
    const auto t = std::chrono::steady_clock::now();
    const auto n = topo::count_radial_configurations(net);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
    std::cout << net.name() << ": " << n.get_str() << " radial configurations (" << fmt(s, 3) << " s)\n";
    return 0;
}

int verify_theory(int instances, std::uint64_t seed) {
    const auto report = tab::verify_theory(instances, seed);
    for (const auto& c : report.checks)
        std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": worst " << c.worst << " over " << c.instances
                  << " instances\n";
    std::cout << "elapsed " << fmt(report.seconds, 2) << " s\n";
    return report.pass() ? 0 : 1;
}

int run_experiment(const std::string& config) {
    const auto cfg = harness::ExperimentConfig::load(config);
    const auto res = harness::run_experiment(cfg);
    std::cout << harness::report_costs(res, cfg.algorithms, cfg.p_mod);
    for (const auto& d : res.datasets)
        if (d.ok && d.tv_untrained > 0.0)
            std::cout << "P_mod " << fmt(d.p_mod, 2) << ": TV trained " << fmt(d.tv_trained) << ", untrained "
                      << fmt(d.tv_untrained) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Batch-constrained reinforcement learning for distribution network reconfiguration"};
    app.require_subcommand(1);

    GenData gd;
    auto* c_gen = app.add_subcommand("gen-data", "Synthesise loads, calibrate beta and record a behaviour batch");
    c_gen->add_option("--feeder", gd.feeder, "Feeder JSON")->required()->check(CLI::ExistingFile);
    c_gen->add_option("--p-mod", gd.p_mod, "Probability of the model-based scenario");
    c_gen->add_option("--fix-to-rnd", gd.fix_to_rnd, "Ratio P_fix : P_rnd");
    c_gen->add_option("--seed", gd.seed, "Scenario and perturbation seed");
    c_gen->add_option("--weeks", gd.weeks, "Recorded weeks (the last one is the test week)");
    c_gen->add_option("--train-weeks", gd.train_weeks, "Weeks in the training split");
    c_gen->add_option("--customers", gd.customers, "Customers per load bus (0: feeder default)");
    c_gen->add_option("--meters", gd.meters, "Smart-meter CSV (customer,hour,kWh); synthetic when omitted")
        ->check(CLI::ExistingFile);
    c_gen->add_option("--out", gd.out, "Output directory")->required();

    TrainCvae tc;
    auto* c_cvae = app.add_subcommand("train-cvae", "Fit the behaviour model to a batch");
    c_cvae->add_option("--data", tc.data, "Batch directory or file")->required()->check(CLI::ExistingPath);
    c_cvae->add_option("--hp", tc.hp, "Hyperparameter file")->required()->check(CLI::ExistingFile);
    c_cvae->add_option("--seed", tc.seed, "Training seed");
    c_cvae->add_option("--steps", tc.steps, "Override the number of steps");
    c_cvae->add_option("--hidden", tc.hidden, "Override the hidden width");
    c_cvae->add_option("--lr", tc.lr, "Override the learning rate");
    c_cvae->add_flag("--tv", tc.tv, "Report the TV distance to the exact behaviour policy");
    c_cvae->add_option("--out", tc.out, "Checkpoint file")->required();

    Train tr;
    auto* c_train = app.add_subcommand("train", "Train an agent on a batch");
    c_train->add_option("--algo", tr.algo, "bcsac, sac or dqn")->required()->check(CLI::IsMember({"bcsac", "sac", "dqn"}));
    c_train->add_option("--data", tr.data, "Batch directory or file")->required()->check(CLI::ExistingPath);
    c_train->add_option("--cvae", tr.cvae, "Behaviour model checkpoint (bcsac)")->check(CLI::ExistingFile);
    c_train->add_option("--hp", tr.hp, "Hyperparameter file")->required()->check(CLI::ExistingFile);
    c_train->add_option("--seed", tr.seed, "Training seed");
    c_train->add_option("--steps", tr.steps, "Override the number of steps");
    c_train->add_option("--out", tr.out, "Output directory")->required();

    Evaluate ev;
    auto* c_eval = app.add_subcommand("evaluate", "Roll a policy over one week and report its cost");
    c_eval->add_option("--model", ev.model, "Checkpoint file, 'stay' or 'historical'")->required();
    c_eval->add_option("--feeder", ev.feeder, "Feeder JSON (defaults to the batch's)");
    c_eval->add_option("--data", ev.data, "Batch directory or file")->required()->check(CLI::ExistingPath);
    c_eval->add_option("--week", ev.week, "'test' or a week index");
    c_eval->add_option("--out", ev.out, "Hourly CSV");

    std::string count_feeder;
    auto* c_count = app.add_subcommand("count-configs", "Count radial configurations exactly");
    c_count->add_option("--feeder", count_feeder, "Feeder JSON")->required()->check(CLI::ExistingFile);

    int instances = 1000;
    std::uint64_t theory_seed = 1;
    auto* c_theory = app.add_subcommand("verify-theory", "Certify the KL backup on random finite MDPs");
    c_theory->add_option("--instances", instances, "Random MDPs");
    c_theory->add_option("--seed", theory_seed, "Seed");

    std::string experiment;
    auto* c_exp = app.add_subcommand("run-experiment", "Run the full pipeline from an experiment config");
    c_exp->add_option("--config", experiment, "Experiment JSON")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);
    try {
        if (c_gen->parsed()) return gen_data(gd);
        if (c_cvae->parsed()) return train_cvae(tc);
        if (c_train->parsed()) return train(tr);
        if (c_eval->parsed()) return evaluate(ev);
        if (c_count->parsed()) return count_configs(count_feeder);
        if (c_theory->parsed()) return verify_theory(instances, theory_seed);
        if (c_exp->parsed()) return run_experiment(experiment);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
