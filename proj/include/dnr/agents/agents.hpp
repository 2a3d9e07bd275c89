#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dnr/bm/cvae.hpp"
#include "dnr/env/dnr_env.hpp"
#include "dnr/nn/checkpoint.hpp"
#include "dnr/nn/mlp.hpp"
#include "dnr/nn/optim.hpp"
#include "dnr/rl/offline_dataset.hpp"

namespace dnr::agents {

using nn::Matrix;
using nn::Mlp;
using nn::Rng;
using rl::OfflineDataset;

enum class Algo { Bcsac, Sac, Dqn };
std::string to_string(Algo a);
Algo parse_algo(const std::string& s);

struct AgentHyper {
    Algo algo = Algo::Bcsac;
    double learning_rate = 1e-4;
    std::size_t hidden = 100;
    std::size_t hidden_layers = 2;
    double tau = 0.1;    // temperature (BCSAC, SAC)
    double rho = 0.995;  // Polyak factor (BCSAC, SAC)
    std::size_t batch_size = 32;
    double gamma = 0.95;
    int steps = 6000;
    int copy_steps = 30;  // DQN target copy period
    int checkpoint_every = 1000;
    double prob_floor = 1e-8;

    void validate() const;
    nlohmann::json to_json() const;
    static AgentHyper from_json(const nlohmann::json& j, Algo algo);
};

/// Per-feeder hyperparameter file: {"shared": ..., "dqn": ..., "sac": ..., "bcsac": ..., "cvae": ...}.
struct FeederHyper {
    std::string feeder;
    AgentHyper dqn, sac, bcsac;
    bm::CvaeConfig cvae;
    double reward_scale = 500.0;

    const AgentHyper& get(Algo a) const;
    static FeederHyper from_json(const nlohmann::json& j);
    static FeederHyper load(const std::filesystem::path& path);
};

/// Temperature suggested by the rule that a typical |r(s,a)| and |A(s)| / tau be of
/// the same order of magnitude.
double suggest_tau(double typical_abs_reward, double typical_action_count);
/// True when |A| / tau lies within one decade of |r|.
bool tau_within_guidance(double tau, double typical_abs_reward, double typical_action_count);

/// pi^b(. | s) for dataset rows.
class BehaviorSource {
public:
    virtual ~BehaviorSource() = default;
    /// Row k of `out` is pi^b(. | state of dataset row rows[k]).
    virtual void distributions(std::span<const std::size_t> rows, Matrix& out) const = 0;
};

/// Explicit table, one row per dataset row.
class TableBehavior final : public BehaviorSource {
public:
    explicit TableBehavior(Matrix table) : table_(std::move(table)) {}
    /// Uniform over each row's feasible cells.
    static TableBehavior uniform(const OfflineDataset& data);
    void distributions(std::span<const std::size_t> rows, Matrix& out) const override;
    const Matrix& table() const { return table_; }

private:
    Matrix table_;
};

/// CVAE marginal with L latent draws per row. The draws for a row depend only on
/// (seed, row), so cached and on-demand evaluation agree. The whole table is
/// cached when rows * cells <= cache_limit.
class CvaeBehavior final : public BehaviorSource {
public:
    CvaeBehavior(const bm::CvaeModel& model, const OfflineDataset& data, int samples, std::uint64_t seed,
                 std::size_t cache_limit = std::size_t{1} << 26);
    void distributions(std::span<const std::size_t> rows, Matrix& out) const override;
    bool cached() const { return cached_; }

private:
    void compute(std::span<const std::size_t> rows, Matrix& out) const;

    const bm::CvaeModel* model_;
    const OfflineDataset* data_;
    int samples_;
    std::uint64_t seed_;
    bool cached_ = false;
    Matrix table_;
};

/// Critic input: state features followed by the one-hot of the branch to close.
Matrix critic_input(const Matrix& states, std::span<const int> close, std::size_t m);

/// q(s, a) for every feasible cell of each row (0 elsewhere), B x m*m.
Matrix critic_table(const Mlp& critic, const Matrix& states, std::span<const std::span<const std::uint8_t>> masks,
                    std::size_t m);

struct Minibatch {
    std::vector<std::size_t> rows;
    Matrix states;
    Matrix next_states;
    std::vector<int> actions;
    std::vector<double> rewards;
    std::vector<std::span<const std::uint8_t>> masks;
    std::vector<std::span<const std::uint8_t>> next_masks;

    static Minibatch gather(const OfflineDataset& data, std::vector<std::size_t> rows);
    std::size_t size() const { return rows.size(); }
};

/// Networks and optimisers shared by BCSAC and SAC.
struct ActorCritic {
    std::size_t state_dim = 0;
    std::size_t m = 0;
    Mlp q1, q2, v, v_target, actor;
    nn::AdamState opt_q1, opt_q2, opt_v, opt_actor;
    AgentHyper hyper;

    static ActorCritic create(std::size_t state_dim, std::size_t m, const AgentHyper& hyper, Rng& rng);
    nn::Checkpoint to_checkpoint(const nlohmann::json& meta = nlohmann::json::object()) const;
    static ActorCritic from_checkpoint(const nn::Checkpoint& ckpt);
};

struct DqnModel {
    std::size_t state_dim = 0;
    std::size_t m = 0;
    Mlp q, q_target;
    nn::AdamState opt;
    AgentHyper hyper;

    static DqnModel create(std::size_t state_dim, std::size_t m, const AgentHyper& hyper, Rng& rng);
    nn::Checkpoint to_checkpoint(const nlohmann::json& meta = nlohmann::json::object()) const;
    static DqnModel from_checkpoint(const nn::Checkpoint& ckpt);
};

/// Actions drawn from the actor's masked distribution.
struct ActorSample {
    Matrix logits;
    Matrix probs;
    std::vector<int> actions;
    std::vector<double> log_pi;
};
ActorSample sample_actions(const Mlp& actor, const Minibatch& mb, Rng& rng);
/// Evaluates the actor at given actions (no sampling).
ActorSample actor_at(const Mlp& actor, const Minibatch& mb, std::span<const int> actions);

/// Mean over the batch of 0.5 (q_i(s, a) - r - gamma v_target(s'))^2, summed over both
/// critics. Gradients accumulate into g1 / g2 when non-null.
/// Throws NumericalError when a target is non-finite.
double critic_loss(const ActorCritic& model, const Minibatch& mb, Mlp* g1, Mlp* g2);
/// One Adam step on both critics. Returns the loss before the step.
double critic_update(ActorCritic& model, const Minibatch& mb);

/// min_i q_i(s, a_hat) - tau log pi(a_hat | s) + tau log pi^b(a_hat | s); the last term
/// is dropped when log_pb is empty (SAC).
std::vector<double> value_targets(const ActorCritic& model, const Minibatch& mb, std::span<const int> a_hat,
                                  std::span<const double> log_pi, std::span<const double> log_pb);
/// Mean of 0.5 (v(s) - target)^2.
double value_loss(const ActorCritic& model, const Minibatch& mb, std::span<const double> targets, Mlp* gv);
double value_update(ActorCritic& model, const Minibatch& mb, std::span<const double> targets);

/// psi_bar <- rho psi_bar + (1 - rho) psi.
void target_value_update(ActorCritic& model);

/// q_1(s, a_hat) - tau (log pi(a_hat | s) - log pi^b(a_hat | s)); SAC when log_pb is empty.
std::vector<double> actor_brackets(const ActorCritic& model, const Minibatch& mb, std::span<const int> a_hat,
                                   std::span<const double> log_pi, std::span<const double> log_pb);
/// Surrogate -mean(log pi(a_hat | s) * bracket) with the brackets held fixed; its
/// gradient is the negated policy-gradient estimator.
double actor_surrogate(const Mlp& actor, const Minibatch& mb, std::span<const int> a_hat,
                       std::span<const double> brackets, Mlp* grads);
/// One Adam ascent step along the estimator. Returns the estimator's norm.
double actor_update(ActorCritic& model, const Minibatch& mb, std::span<const int> a_hat,
                    std::span<const double> brackets);

/// Exact expectation over a ~ pi(.|s) of grad log pi(a|s) [q(s,a) - tau (log pi(a|s) - log pi^b(a|s))],
/// averaged over the batch. q and log_pb are B x m*m tables over feasible cells; an empty
/// log_pb gives the SAC expectation. `shift` adds a per-state constant to the bracket.
Mlp expected_actor_gradient(const Mlp& actor, const Minibatch& mb, const Matrix& q, const Matrix* log_pb, double tau,
                            std::span<const double> shift = {});

double dqn_loss(const DqnModel& model, const Minibatch& mb, Mlp* grads);
double dqn_update(DqnModel& model, const Minibatch& mb);

struct TrainCurves {
    std::vector<double> critic_loss;
    std::vector<double> value_loss;
    std::vector<double> actor_grad_norm;
};

struct ActorCriticResult {
    ActorCritic model;
    std::vector<nn::Checkpoint> checkpoints;
    TrainCurves curves;
};

struct DqnResult {
    DqnModel model;
    std::vector<nn::Checkpoint> checkpoints;
    TrainCurves curves;
};

/// Batch-constrained soft actor-critic. Each step: minibatch, a_hat ~ pi, critic
/// update, value update, target update, actor update.
ActorCriticResult train_bcsac(const OfflineDataset& data, const BehaviorSource& behavior, const AgentHyper& hyper,
                              Rng& rng);
/// The same loop with the behaviour terms removed.
ActorCriticResult train_sac(const OfflineDataset& data, const AgentHyper& hyper, Rng& rng);
/// One critic, target copy every copy_steps.
DqnResult train_dqn(const OfflineDataset& data, const AgentHyper& hyper, Rng& rng);

/// Maps a state (and its mask) to a feasible action.
using Policy = std::function<env::DnrAction(const env::DnrState&, const topo::SwitchPairMask&)>;

/// Argmax of the actor's masked distribution (ties to the lowest cell). The network
/// weights are copied; `net` must outlive the policy.
Policy greedy_actor_policy(const Mlp& actor, const grid::Network& net, const env::FeatureNorms& norms);
/// Argmax of q over feasible cells.
Policy greedy_dqn_policy(const Mlp& q, const grid::Network& net, const env::FeatureNorms& norms);
Policy stay_policy();
/// Replays recorded actions for hours [t0, t0 + n) and falls back to stay outside them.
Policy replay_policy(const env::TransitionBatch& batch);

struct WeeklyCost {
    double total = 0.0;  // sum of unscaled -R
    std::vector<double> hourly;
    std::vector<env::DnrAction> actions;
    int nonconverged = 0;
};

/// Rolls `policy` greedily for `hours` steps from (initial, t0). A non-convergent hour
/// is charged the worst hourly cost seen so far, keeps the configuration and warns on stderr.
/// Throws RejectedAction if the policy emits a masked-out action.
WeeklyCost evaluate_weekly_cost(const env::DnrEnv& env, const Policy& policy, const topo::Configuration& initial,
                                int t0, int hours = 168);

/// Test-week start hour and starting configuration (the last training configuration).
struct TestWeek {
    int t0 = 0;
    topo::Configuration initial;
    int hours = 168;
};
TestWeek test_week(const env::TransitionBatch& batch);
/// Realised cost of the recorded rows of the test week.
double historical_cost(const env::TransitionBatch& batch);

}  // namespace dnr::agents
