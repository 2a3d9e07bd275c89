#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dnr::tab {

using Rng = std::mt19937_64;

/// Row-major |S| x |A| table (q values or a policy).
struct Table {
    std::size_t states = 0;
    std::size_t actions = 0;
    std::vector<double> data;

    Table() = default;
    Table(std::size_t s, std::size_t a, double fill = 0.0) : states(s), actions(a), data(s * a, fill) {}
    double& operator()(std::size_t s, std::size_t a) { return data[s * actions + a]; }
    double operator()(std::size_t s, std::size_t a) const { return data[s * actions + a]; }

    static Table uniform_policy(std::size_t s, std::size_t a);
    /// Rows drawn from a flat Dirichlet; `full_support` keeps every entry >= 1e-3.
    static Table random_policy(std::size_t s, std::size_t a, Rng& rng, bool full_support = true);
    /// max |a - b|.
    double sup_distance(const Table& other) const;
    /// Throws ContractViolation unless every row is a probability vector.
    void check_policy() const;
};

struct FiniteMdp {
    std::size_t states = 0;
    std::size_t actions = 0;
    std::vector<double> transition;  // P(s' | s, a) at (s * A + a) * S + s'
    Table reward;
    double gamma = 0.9;

    double p(std::size_t s, std::size_t a, std::size_t s2) const {
        return transition[(s * actions + a) * states + s2];
    }
    double& p(std::size_t s, std::size_t a, std::size_t s2) { return transition[(s * actions + a) * states + s2]; }

    /// Throws ContractViolation unless rows are probability vectors and gamma in [0, 1).
    void validate() const;
    /// Rewards uniform on [-1, 1]; transitions Dirichlet, or one-hot when `deterministic`.
    static FiniteMdp random(std::size_t s, std::size_t a, double gamma, Rng& rng, bool deterministic = false);
};

/// D_KL(pi(.|s) || pi^b(.|s)); ContractViolation when pi puts mass outside pi^b's support.
double kl_divergence(const Table& pi, const Table& pb, std::size_t s);

/// v(s) = E_pi[q(s, .)] - tau KL(pi || pi^b)(s).
std::vector<double> soft_state_values(const Table& q, const Table& pi, const Table& pb, double tau);

/// (T^pi q)(s, a) = r(s, a) + gamma E_{s'}[v(s')].
Table kl_backup(const Table& q, const Table& pi, const Table& pb, const FiniteMdp& mdp, double tau);

struct Evaluation {
    Table q;
    int iterations = 0;
};

/// Iterates kl_backup from q = 0 until the sup-norm step is below tol.
Evaluation evaluate_policy_fixed_point(const Table& pi, const Table& pb, const FiniteMdp& mdp, double tau,
                                       double tol, int max_iterations = 100000);
/// Direct solve of (I - gamma P^pi) q = r - gamma tau P kl.
Table evaluate_policy_linear(const Table& pi, const Table& pb, const FiniteMdp& mdp, double tau);

/// pi'(a|s) proportional to pi^b(a|s) exp(q(s,a) / tau). For tau <= 0: argmax of q over
/// pi^b's support, ties (within 1e-12) split evenly.
Table improve_policy(const Table& q, const Table& pb, double tau);

struct PolicyIterationResult {
    Table policy;
    Table q;
    int iterations = 0;
    std::vector<std::vector<double>> value_trace;  // v^d of each evaluated policy
};

/// Alternates exact evaluation and improvement from `initial` (uniform over pi^b's
/// support when empty) until the policy moves less than tol in sup norm.
PolicyIterationResult bc_soft_policy_iteration(const FiniteMdp& mdp, const Table& pb, double tau, double tol,
                                               const Table& initial = {}, int max_iterations = 10000);

struct SampledTransition {
    std::size_t s = 0;
    std::size_t a = 0;
    double r = 0.0;
    std::size_t s2 = 0;
};

/// Empirical MDP of a batch. Pairs absent from the batch are flagged and become
/// terminal with zero reward (their q under the batch equals 0).
struct EmpiricalMdp {
    FiniteMdp mdp;
    std::vector<std::uint8_t> observed;  // per (s, a)
    std::vector<double> continuation;    // 1 when observed, 0 for the terminal convention
};
EmpiricalMdp empirical_mdp(const FiniteMdp& like, const std::vector<SampledTransition>& batch);

/// Normalised discounted state visitation of pi in `mdp` from a uniform start.
std::vector<double> discounted_visitation(const FiniteMdp& mdp, const Table& pi);

struct ExtrapolationError {
    Table per_pair;  // q_pi - q_pi^D
    double total = 0.0;
    std::vector<std::uint8_t> missing;  // per (s, a): 1 when absent from the batch
    std::vector<double> visitation;
};

/// Plain (tau = 0) policy evaluation in the true and empirical MDPs.
ExtrapolationError extrapolation_error(const FiniteMdp& mdp, const std::vector<SampledTransition>& batch,
                                       const Table& pi);

/// Plain Bellman policy evaluation by a direct solve, independent of the KL machinery.
Table plain_policy_evaluation(const FiniteMdp& mdp, const Table& pi);

struct TheoryCheck {
    std::string name;
    bool pass = true;
    double worst = 0.0;  // worst residual, in the check's own sign convention
    int instances = 0;
};

struct TheoryReport {
    std::vector<TheoryCheck> checks;
    double seconds = 0.0;
    bool pass() const;
};

/// Random-MDP certification of the KL backup: contraction, fixed point vs linear
/// solve, monotone improvement and optimality of the converged policy against every
/// deterministic policy (instances with |S| |A| <= 12). |S| <= 6, |A| <= 4,
/// tau log-uniform on [0.01, 10].
TheoryReport verify_theory(int instances, std::uint64_t seed);

}  // namespace dnr::tab
