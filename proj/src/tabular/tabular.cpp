#include "dnr/tabular/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "dnr/error.hpp"

namespace dnr::tab {

namespace {

std::vector<double> dirichlet(std::size_t n, Rng& rng) {
    std::gamma_distribution<double> g(1.0, 1.0);
    std::vector<double> v(n);
    double s = 0.0;
    for (auto& x : v) s += (x = g(rng));
    for (auto& x : v) x /= s;
    return v;
}

void check_shapes(const Table& a, const Table& b, const char* what) {
    require(a.states == b.states && a.actions == b.actions, std::string(what) + ": table shape mismatch");
}

}  // namespace

Table Table::uniform_policy(std::size_t s, std::size_t a) { return Table(s, a, 1.0 / static_cast<double>(a)); }

Table Table::random_policy(std::size_t s, std::size_t a, Rng& rng, bool full_support) {
    Table t(s, a);
    for (std::size_t i = 0; i < s; ++i) {
        auto row = dirichlet(a, rng);
        if (full_support) {
            double sum = 0.0;
            for (auto& x : row) sum += (x = std::max(x, 1e-3));
            for (auto& x : row) x /= sum;
        }
        std::copy(row.begin(), row.end(), t.data.begin() + static_cast<std::ptrdiff_t>(i * a));
    }
    return t;
}

double Table::sup_distance(const Table& other) const {
    check_shapes(*this, other, "sup_distance");
    double d = 0.0;
    for (std::size_t k = 0; k < data.size(); ++k) d = std::max(d, std::abs(data[k] - other.data[k]));
    return d;
}

void Table::check_policy() const {
    for (std::size_t s = 0; s < states; ++s) {
        double sum = 0.0;
        for (std::size_t a = 0; a < actions; ++a) {
            require((*this)(s, a) >= 0.0, "policy has a negative entry");
            sum += (*this)(s, a);
        }
        require(std::abs(sum - 1.0) <= 1e-9, "policy row does not sum to 1");
    }
}

void FiniteMdp::validate() const {
    require(states > 0 && actions > 0, "MDP needs states and actions");
    require(transition.size() == states * actions * states, "MDP transition tensor has the wrong size");
    require(reward.states == states && reward.actions == actions, "MDP reward table has the wrong shape");
    require(gamma >= 0.0 && gamma < 1.0, "discount must lie in [0, 1)");
    for (std::size_t sa = 0; sa < states * actions; ++sa) {
        double sum = 0.0;
        for (std::size_t s2 = 0; s2 < states; ++s2) {
            require(transition[sa * states + s2] >= 0.0, "negative transition probability");
            sum += transition[sa * states + s2];
        }
        require(std::abs(sum - 1.0) <= 1e-9, "transition row does not sum to 1");
    }
}

FiniteMdp FiniteMdp::random(std::size_t s, std::size_t a, double gamma, Rng& rng, bool deterministic) {
    FiniteMdp m;
    m.states = s;
    m.actions = a;
    m.gamma = gamma;
    m.reward = Table(s, a);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& r : m.reward.data) r = u(rng);
    m.transition.assign(s * a * s, 0.0);
    std::uniform_int_distribution<std::size_t> pick(0, s - 1);
    for (std::size_t sa = 0; sa < s * a; ++sa) {
        if (deterministic) {
            m.transition[sa * s + pick(rng)] = 1.0;
        } else {
            const auto row = dirichlet(s, rng);
            std::copy(row.begin(), row.end(), m.transition.begin() + static_cast<std::ptrdiff_t>(sa * s));
        }
    }
    return m;
}

double kl_divergence(const Table& pi, const Table& pb, std::size_t s) {
    double kl = 0.0;
    for (std::size_t a = 0; a < pi.actions; ++a) {
        const double p = pi(s, a);
        if (p <= 0.0) continue;
        require(pb(s, a) > 0.0, "policy puts mass outside the behaviour support (infinite KL)");
        kl += p * (std::log(p) - std::log(pb(s, a)));
    }
    return kl;
}

std::vector<double> soft_state_values(const Table& q, const Table& pi, const Table& pb, double tau) {
    check_shapes(q, pi, "soft_state_values");
    check_shapes(q, pb, "soft_state_values");
    std::vector<double> v(q.states, 0.0);
    for (std::size_t s = 0; s < q.states; ++s) {
        for (std::size_t a = 0; a < q.actions; ++a) v[s] += pi(s, a) * q(s, a);
        if (tau != 0.0) v[s] -= tau * kl_divergence(pi, pb, s);
    }
    return v;
}

Table kl_backup(const Table& q, const Table& pi, const Table& pb, const FiniteMdp& mdp, double tau) {
    require(q.states == mdp.states && q.actions == mdp.actions, "kl_backup: q does not match the MDP");
    const auto v = soft_state_values(q, pi, pb, tau);
    Table out(mdp.states, mdp.actions);
    for (std::size_t s = 0; s < mdp.states; ++s)
        for (std::size_t a = 0; a < mdp.actions; ++a) {
            double ev = 0.0;
            for (std::size_t s2 = 0; s2 < mdp.states; ++s2) ev += mdp.p(s, a, s2) * v[s2];
            out(s, a) = mdp.reward(s, a) + mdp.gamma * ev;
        }
    return out;
}

Evaluation evaluate_policy_fixed_point(const Table& pi, const Table& pb, const FiniteMdp& mdp, double tau, double tol,
                                       int max_iterations) {
    require(tol > 0.0, "evaluate_policy_fixed_point: tol must be positive");
    Evaluation e{Table(mdp.states, mdp.actions), 0};
    for (int k = 1; k <= max_iterations; ++k) {
        Table next = kl_backup(e.q, pi, pb, mdp, tau);
        const double step = next.sup_distance(e.q);
        e.q = std::move(next);
        e.iterations = k;
        if (step < tol) break;
    }
    return e;
}

Table evaluate_policy_linear(const Table& pi, const Table& pb, const FiniteMdp& mdp, double tau) {
    const std::size_t S = mdp.states, A = mdp.actions, N = S * A;
    std::vector<double> kl(S, 0.0);
    if (tau != 0.0)
        for (std::size_t s = 0; s < S; ++s) kl[s] = kl_divergence(pi, pb, s);
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(N));
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            const auto row = static_cast<Eigen::Index>(s * A + a);
            double b = mdp.reward(s, a);
            for (std::size_t s2 = 0; s2 < S; ++s2) {
                const double p = mdp.p(s, a, s2);
                b -= mdp.gamma * tau * p * kl[s2];
                for (std::size_t a2 = 0; a2 < A; ++a2)
                    M(row, static_cast<Eigen::Index>(s2 * A + a2)) -= mdp.gamma * p * pi(s2, a2);
            }
            rhs(row) = b;
        }
    const Eigen::VectorXd q = M.partialPivLu().solve(rhs);
    Table out(S, A);
    for (std::size_t k = 0; k < N; ++k) out.data[k] = q(static_cast<Eigen::Index>(k));
    return out;
}

Table improve_policy(const Table& q, const Table& pb, double tau) {
    check_shapes(q, pb, "improve_policy");
    Table out(q.states, q.actions);
    for (std::size_t s = 0; s < q.states; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < q.actions; ++a)
            if (pb(s, a) > 0.0) best = std::max(best, tau > 0.0 ? q(s, a) / tau + std::log(pb(s, a)) : q(s, a));
        require(std::isfinite(best), "improve_policy: behaviour row has empty support");
        double sum = 0.0;
        for (std::size_t a = 0; a < q.actions; ++a) {
            if (pb(s, a) <= 0.0) continue;
            double w;
            if (tau > 0.0)
                w = std::exp(q(s, a) / tau + std::log(pb(s, a)) - best);
            else
                w = q(s, a) >= best - 1e-12 ? 1.0 : 0.0;
            out(s, a) = w;
            sum += w;
        }
        for (std::size_t a = 0; a < q.actions; ++a) out(s, a) /= sum;
    }
    return out;
}

PolicyIterationResult bc_soft_policy_iteration(const FiniteMdp& mdp, const Table& pb, double tau, double tol,
                                               const Table& initial, int max_iterations) {
    mdp.validate();
    pb.check_policy();
    PolicyIterationResult res;
    if (initial.data.empty()) {
        res.policy = Table(mdp.states, mdp.actions);
        for (std::size_t s = 0; s < mdp.states; ++s) {
            double n = 0.0;
            for (std::size_t a = 0; a < mdp.actions; ++a) n += pb(s, a) > 0.0 ? 1.0 : 0.0;
            for (std::size_t a = 0; a < mdp.actions; ++a) res.policy(s, a) = pb(s, a) > 0.0 ? 1.0 / n : 0.0;
        }
    } else {
        initial.check_policy();
        res.policy = initial;
    }
    for (int k = 1; k <= max_iterations; ++k) {
        res.q = evaluate_policy_linear(res.policy, pb, mdp, tau);
        res.value_trace.push_back(soft_state_values(res.q, res.policy, pb, tau));
        res.iterations = k;
        Table next = improve_policy(res.q, pb, tau);
        const double change = next.sup_distance(res.policy);
        res.policy = std::move(next);
        if (change < tol) {
            res.q = evaluate_policy_linear(res.policy, pb, mdp, tau);
            break;
        }
    }
    return res;
}

EmpiricalMdp empirical_mdp(const FiniteMdp& like, const std::vector<SampledTransition>& batch) {
    require(!batch.empty(), "empirical_mdp: empty batch");
    const std::size_t S = like.states, A = like.actions;
    EmpiricalMdp e;
    e.mdp.states = S;
    e.mdp.actions = A;
    e.mdp.gamma = like.gamma;
    e.mdp.reward = Table(S, A);
    e.mdp.transition.assign(S * A * S, 0.0);
    e.observed.assign(S * A, 0);
    e.continuation.assign(S * A, 0.0);
    std::vector<double> count(S * A, 0.0);
    for (const auto& t : batch) {
        require(t.s < S && t.a < A && t.s2 < S, "empirical_mdp: transition outside the MDP");
        const std::size_t sa = t.s * A + t.a;
        count[sa] += 1.0;
        e.mdp.reward.data[sa] += t.r;
        e.mdp.transition[sa * S + t.s2] += 1.0;
    }
    for (std::size_t sa = 0; sa < S * A; ++sa) {
        if (count[sa] == 0.0) continue;
        e.observed[sa] = 1;
        e.continuation[sa] = 1.0;
        e.mdp.reward.data[sa] /= count[sa];
        for (std::size_t s2 = 0; s2 < S; ++s2) e.mdp.transition[sa * S + s2] /= count[sa];
    }
    return e;
}

namespace {

// q = r + gamma c P^pi q, where c zeroes the continuation of unobserved pairs.
Table solve_plain(const FiniteMdp& mdp, const Table& pi, const std::vector<double>* continuation) {
    const std::size_t S = mdp.states, A = mdp.actions, N = S * A;
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(N));
    for (std::size_t sa = 0; sa < N; ++sa) {
        const double c = continuation ? (*continuation)[sa] : 1.0;
        rhs(static_cast<Eigen::Index>(sa)) = mdp.reward.data[sa];
        for (std::size_t s2 = 0; s2 < S; ++s2)
            for (std::size_t a2 = 0; a2 < A; ++a2)
                M(static_cast<Eigen::Index>(sa), static_cast<Eigen::Index>(s2 * A + a2)) -=
                    c * mdp.gamma * mdp.transition[sa * S + s2] * pi(s2, a2);
    }
    const Eigen::VectorXd q = M.partialPivLu().solve(rhs);
    Table out(S, A);
    for (std::size_t k = 0; k < N; ++k) out.data[k] = q(static_cast<Eigen::Index>(k));
    return out;
}

}  // namespace

Table plain_policy_evaluation(const FiniteMdp& mdp, const Table& pi) { return solve_plain(mdp, pi, nullptr); }

std::vector<double> discounted_visitation(const FiniteMdp& mdp, const Table& pi) {
    const std::size_t S = mdp.states;
    // d^T (I - gamma P_pi) = (1 - gamma) mu0^T
    Eigen::MatrixXd Ppi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S));
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < mdp.actions; ++a)
            for (std::size_t s2 = 0; s2 < S; ++s2)
                Ppi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s2)) += pi(s, a) * mdp.p(s, a, s2);
    const Eigen::MatrixXd M =
        (Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S)) - mdp.gamma * Ppi)
            .transpose();
    const Eigen::VectorXd mu0 =
        Eigen::VectorXd::Constant(static_cast<Eigen::Index>(S), (1.0 - mdp.gamma) / static_cast<double>(S));
    const Eigen::VectorXd d = M.partialPivLu().solve(mu0);
    std::vector<double> out(S);
    const double total = d.sum();
    for (std::size_t s = 0; s < S; ++s) out[s] = d(static_cast<Eigen::Index>(s)) / total;
    return out;
}

ExtrapolationError extrapolation_error(const FiniteMdp& mdp, const std::vector<SampledTransition>& batch,
                                       const Table& pi) {
    mdp.validate();
    pi.check_policy();
    const auto emp = empirical_mdp(mdp, batch);
    const Table q = solve_plain(mdp, pi, nullptr);
    const Table qd = solve_plain(emp.mdp, pi, &emp.continuation);
    ExtrapolationError e;
    e.per_pair = Table(mdp.states, mdp.actions);
    for (std::size_t k = 0; k < q.data.size(); ++k) e.per_pair.data[k] = q.data[k] - qd.data[k];
    e.missing.resize(emp.observed.size());
    for (std::size_t k = 0; k < emp.observed.size(); ++k) e.missing[k] = emp.observed[k] ? 0 : 1;
    e.visitation = discounted_visitation(mdp, pi);
    for (std::size_t s = 0; s < mdp.states; ++s)
        for (std::size_t a = 0; a < mdp.actions; ++a)
            e.total += e.visitation[s] * pi(s, a) * std::abs(e.per_pair(s, a));
    return e;
}

}  // namespace dnr::tab
