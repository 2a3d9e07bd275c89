#include "dnr/grid/power_flow.hpp"

#include <algorithm>
#include <cmath>

#include "dnr/error.hpp"

namespace dnr::grid {

using cd = std::complex<double>;

PowerFlowSolution solve_power_flow(const Network& net, const topo::Configuration& config,
                                   const InjectionFrame& inj, const SweepOptions& opt) {
    return solve_power_flow(net, topo::build_forest(net, config), inj, opt);
}

PowerFlowSolution solve_power_flow(const Network& net, const topo::RadialForest& forest,
                                   const InjectionFrame& inj, const SweepOptions& opt) {
    const std::size_t n = net.bus_count();
    require(inj.p.size() == n && inj.q.size() == n, "injection frame length must equal bus count");

    std::vector<cd> s_inj(n);
    for (std::size_t k = 0; k < n; ++k) s_inj[k] = {inj.p[k], inj.q[k]};
    std::vector<cd> z(n, 0.0);  // impedance of the branch above each bus
    for (std::size_t k = 0; k < n; ++k) {
        const int br = forest.parent_branch[k];
        if (br >= 0) z[k] = {net.branch(br).r_pu, net.branch(br).x_pu};
    }

    PowerFlowSolution sol;
    sol.voltage.assign(n, cd(1.0, 0.0));
    std::vector<cd> current(n);  // current flowing from parent into the subtree of each bus

    auto backward = [&] {
        for (std::size_t k = 0; k < n; ++k) {
            // Drawn current of a net injection S at voltage V is -conj(S / V).
            current[k] = net.is_substation(static_cast<int>(k)) ? cd(0.0)
                                                                 : -std::conj(s_inj[k] / sol.voltage[k]);
        }
        for (auto it = forest.order.rbegin(); it != forest.order.rend(); ++it) {
            const int b = *it;
            const int parent = forest.parent_bus[b];
            if (parent >= 0) current[parent] += current[b];
        }
    };

    for (sol.iterations = 1; sol.iterations <= opt.max_iterations; ++sol.iterations) {
        backward();
        double change = 0.0;
        for (int b : forest.order) {
            const int parent = forest.parent_bus[b];
            if (parent < 0) continue;
            const cd updated = sol.voltage[parent] - z[b] * current[b];
            change = std::max(change, std::abs(updated - sol.voltage[b]));
            sol.voltage[b] = updated;
        }
        if (change < opt.tolerance) {
            sol.converged = true;
            break;
        }
    }
    if (!sol.converged) sol.iterations = opt.max_iterations;
    backward();

    sol.v.resize(n);
    for (std::size_t k = 0; k < n; ++k) sol.v[k] = std::abs(sol.voltage[k]);

    sol.branch_p.assign(net.branch_count(), 0.0);
    sol.branch_loss.assign(net.branch_count(), 0.0);
    sol.injection_p = inj.p;
    for (int s : net.substations()) sol.injection_p[s] = 0.0;
    sol.losses = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const int br = forest.parent_branch[k];
        if (br < 0) continue;
        const int parent = forest.parent_bus[k];
        const double i2 = std::norm(current[k]);
        sol.branch_loss[br] = i2 * net.branch(br).r_pu;
        sol.branch_p[br] = std::real(sol.voltage[parent] * std::conj(current[k]));
        sol.losses += sol.branch_loss[br];
        if (net.is_substation(parent)) sol.injection_p[parent] += sol.branch_p[br];
    }

    // Nodal mismatch from branch currents implied by the voltages.
    sol.max_mismatch = 0.0;
    std::vector<cd> net_out(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        const int br = forest.parent_branch[k];
        if (br < 0) continue;
        const cd i_branch = std::abs(z[k]) > 0.0
                                ? (sol.voltage[forest.parent_bus[k]] - sol.voltage[k]) / z[k]
                                : current[k];
        net_out[forest.parent_bus[k]] += i_branch;
        net_out[k] -= i_branch;
    }
    for (std::size_t k = 0; k < n; ++k) {
        if (net.is_substation(static_cast<int>(k))) continue;
        const cd s_calc = sol.voltage[k] * std::conj(net_out[k]);
        sol.max_mismatch = std::max(sol.max_mismatch, std::abs(s_calc - s_inj[k]));
    }
    return sol;
}

std::vector<PowerFlowSolution> solve_power_flow_batch(const Network& net,
                                                      const topo::Configuration& config,
                                                      std::span<const InjectionFrame> frames,
                                                      Exec exec, const SweepOptions& opt) {
    const auto forest = topo::build_forest(net, config);
    std::vector<PowerFlowSolution> out(frames.size());
    const auto count = static_cast<std::ptrdiff_t>(frames.size());
    if (exec == Exec::Serial) {
        for (std::ptrdiff_t k = 0; k < count; ++k) out[k] = solve_power_flow(net, forest, frames[k], opt);
    } else {
#pragma omp parallel for schedule(dynamic, 8)
        for (std::ptrdiff_t k = 0; k < count; ++k) out[k] = solve_power_flow(net, forest, frames[k], opt);
    }
    return out;
}

double total_losses_kw(const PowerFlowSolution& sol, double s_base_mva) {
    require(sol.converged, "total_losses_kw needs a converged power flow");
    return std::max(0.0, sol.losses) * s_base_mva * 1000.0;
}

double branch_loss_sum(const PowerFlowSolution& sol) {
    double s = 0.0;
    for (double l : sol.branch_loss) s += l;
    return s;
}

double voltage_violation(const PowerFlowSolution& sol, double v_lo, double v_hi,
                         std::span<const int> monitored) {
    require(v_lo < v_hi, "voltage band needs v_lo < v_hi");
    double penalty = 0.0;
    for (int b : monitored) {
        if (b < 0 || static_cast<std::size_t>(b) >= sol.v.size())
            throw ValidationError("monitored bus " + std::to_string(b) + " is not in the network");
        const double v = sol.v[static_cast<std::size_t>(b)];
        penalty += std::max(0.0, v - v_hi) + std::max(0.0, v_lo - v);
    }
    return penalty;
}

}  // namespace dnr::grid
