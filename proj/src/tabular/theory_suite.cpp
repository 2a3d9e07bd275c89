#include <algorithm>
#include <chrono>
#include <cmath>

#include "dnr/tabular/tabular.hpp"

namespace dnr::tab {

bool TheoryReport::pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const TheoryCheck& c) { return c.pass; });
}

namespace {

Table random_q(std::size_t s, std::size_t a, Rng& rng) {
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    Table q(s, a);
    for (auto& x : q.data) x = u(rng);
    return q;
}

double sup_norm(const Table& a, const Table& b) { return a.sup_distance(b); }

}  // namespace

TheoryReport verify_theory(int instances, std::uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> ds(1, 6), da(1, 4);
    std::uniform_real_distribution<double> dg(0.0, 0.95), dlog(std::log(0.01), std::log(10.0));

    TheoryCheck contraction{"contraction (ratio - gamma <= 1e-12)", true, -1e300, 0};
    TheoryCheck oracle{"fixed point vs linear solve (<= 1e-9)", true, 0.0, 0};
    TheoryCheck improvement{"monotone improvement (min q' - q >= -1e-10)", true, 1e300, 0};
    TheoryCheck optimality{"optimality vs deterministic policies (>= -1e-9)", true, 1e300, 0};

    for (int k = 0; k < instances; ++k) {
        const std::size_t S = ds(rng), A = da(rng);
        const double gamma = dg(rng);
        const double tau = std::exp(dlog(rng));
        const FiniteMdp mdp = FiniteMdp::random(S, A, gamma, rng, k % 4 == 0);
        const Table pb = Table::random_policy(S, A, rng);
        const Table pi = Table::random_policy(S, A, rng);

        const Table q1 = random_q(S, A, rng), q2 = random_q(S, A, rng);
        const double den = sup_norm(q1, q2);
        if (den > 0.0) {
            const double ratio = sup_norm(kl_backup(q1, pi, pb, mdp, tau), kl_backup(q2, pi, pb, mdp, tau)) / den;
            contraction.worst = std::max(contraction.worst, ratio - gamma);
            ++contraction.instances;
        }

        const Table q_lin = evaluate_policy_linear(pi, pb, mdp, tau);
        const Table q_fix = evaluate_policy_fixed_point(pi, pb, mdp, tau, 1e-12).q;
        oracle.worst = std::max(oracle.worst, q_lin.sup_distance(q_fix));
        ++oracle.instances;

        const Table q_next = evaluate_policy_linear(improve_policy(q_lin, pb, tau), pb, mdp, tau);
        for (std::size_t i = 0; i < q_lin.data.size(); ++i)
            improvement.worst = std::min(improvement.worst, q_next.data[i] - q_lin.data[i]);
        ++improvement.instances;

        if (S * A <= 12) {
            const auto pi_star = bc_soft_policy_iteration(mdp, pb, tau, 1e-13);
            std::size_t total = 1;
            for (std::size_t s = 0; s < S; ++s) total *= A;
            for (std::size_t code = 0; code < total; ++code) {
                Table det(S, A);
                std::size_t c = code;
                for (std::size_t s = 0; s < S; ++s, c /= A) det(s, c % A) = 1.0;
                const Table q_det = evaluate_policy_linear(det, pb, mdp, tau);
                for (std::size_t i = 0; i < q_det.data.size(); ++i)
                    optimality.worst = std::min(optimality.worst, pi_star.q.data[i] - q_det.data[i]);
            }
            ++optimality.instances;
        }
    }
    contraction.pass = contraction.worst <= 1e-12;
    oracle.pass = oracle.worst <= 1e-9;
    improvement.pass = improvement.worst >= -1e-10;
    optimality.pass = optimality.instances > 0 && optimality.worst >= -1e-9;

    TheoryReport report;
    report.checks = {contraction, oracle, improvement, optimality};
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace dnr::tab
