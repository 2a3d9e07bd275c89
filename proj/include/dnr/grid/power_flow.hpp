#pragma once

#include <complex>
#include <span>
#include <vector>

#include "dnr/grid/network.hpp"
#include "dnr/parallel.hpp"
#include "dnr/topology/topology.hpp"

namespace dnr::grid {

/// Net nodal injections for one hour, p.u. on the feeder base; generation
/// positive, consumption negative. Substation entries are outputs.
struct InjectionFrame {
    int t = 0;
    std::vector<double> p;
    std::vector<double> q;
};

struct PowerFlowSolution {
    std::vector<std::complex<double>> voltage;
    std::vector<double> v;                // magnitudes
    std::vector<double> branch_p;         // real power entering each closed branch at its parent end
    std::vector<double> branch_loss;      // |I|^2 r per branch, zero if open
    std::vector<double> injection_p;      // net real injection per bus, substations filled in
    double losses = 0.0;                  // p^l, p.u.
    double max_mismatch = 0.0;            // max nodal |S| mismatch, p.u.
    bool converged = false;
    int iterations = 0;
};

struct SweepOptions {
    double tolerance = 1e-8;  // on max |V^{k+1} - V^k|
    int max_iterations = 100;
};

/// Backward/forward sweep over each substation-rooted tree. Constant-power loads.
PowerFlowSolution solve_power_flow(const Network& net, const topo::Configuration& config,
                                   const InjectionFrame& inj, const SweepOptions& opt = {});
PowerFlowSolution solve_power_flow(const Network& net, const topo::RadialForest& forest,
                                   const InjectionFrame& inj, const SweepOptions& opt = {});

/// Same configuration, many frames.
std::vector<PowerFlowSolution> solve_power_flow_batch(const Network& net,
                                                      const topo::Configuration& config,
                                                      std::span<const InjectionFrame> frames,
                                                      Exec exec = Exec::Parallel,
                                                      const SweepOptions& opt = {});

/// p^l in kW. Requires a converged solution.
double total_losses_kw(const PowerFlowSolution& sol, double s_base_mva);

/// Sum of |I|^2 r over branches, p.u.
double branch_loss_sum(const PowerFlowSolution& sol);

/// Sum over monitored buses of the distance of v outside [v_lo, v_hi], p.u.
double voltage_violation(const PowerFlowSolution& sol, double v_lo, double v_hi,
                         std::span<const int> monitored);

}  // namespace dnr::grid
