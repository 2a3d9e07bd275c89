// Serial reference vs OpenMP kernels: dense layers and batched power flow.

#include <random>

#include <benchmark/benchmark.h>

#include "dnr/grid/network.hpp"
#include "dnr/grid/power_flow.hpp"
#include "dnr/nn/kernels.hpp"

using namespace dnr;

namespace {

nn::Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    nn::Matrix m(r, c);
    for (auto& x : m.data) x = n(rng);
    return m;
}

void dense_forward(benchmark::State& state, Exec exec) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(1);
    const auto x = random_matrix(64, n, rng), w = random_matrix(n, n, rng);
    const std::vector<double> b(n, 0.1);
    nn::Matrix y(64, n);
    for (auto _ : state) {
        if (exec == Exec::Serial)
            nn::kernels::serial::dense_forward(x, w, b, y);
        else
            nn::kernels::dense_forward(x, w, b, y, Exec::Parallel);
        benchmark::DoNotOptimize(y.data.data());
    }
    state.SetItemsProcessed(state.iterations() * 64 * static_cast<long>(n * n));
}

void dense_backward(benchmark::State& state, Exec exec) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(2);
    const auto x = random_matrix(64, n, rng), w = random_matrix(n, n, rng), dy = random_matrix(64, n, rng);
    nn::Matrix dw(n, n), dx(64, n);
    std::vector<double> db(n);
    for (auto _ : state) {
        if (exec == Exec::Serial) {
            nn::kernels::serial::dense_backward_params(x, dy, dw, db);
            nn::kernels::serial::dense_backward_input(dy, w, dx);
        } else {
            nn::kernels::dense_backward_params(x, dy, dw, db, Exec::Parallel);
            nn::kernels::dense_backward_input(dy, w, dx, Exec::Parallel);
        }
        benchmark::DoNotOptimize(dx.data.data());
    }
}

void power_flow_batch(benchmark::State& state, Exec exec) {
    const auto net = grid::load_feeder(std::string(DNR_DATA_DIR) + "/feeders/" + std::to_string(state.range(0)) +
                                       "bus.json");
    const auto config = topo::Configuration::initial(net);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.3, 1.2);
    std::vector<grid::InjectionFrame> frames(168);
    const double base = net.s_base_mva() * 1000.0;
    for (auto& f : frames) {
        f.p.assign(net.bus_count(), 0.0);
        f.q.assign(net.bus_count(), 0.0);
        for (const auto& b : net.buses()) {
            const double k = u(rng);
            f.p[b.id] = -k * b.nominal_p_kw / base;
            f.q[b.id] = -k * b.nominal_q_kvar / base;
        }
    }
    for (auto _ : state) benchmark::DoNotOptimize(grid::solve_power_flow_batch(net, config, frames, exec));
    state.SetItemsProcessed(state.iterations() * 168);
}

}  // namespace

BENCHMARK_CAPTURE(dense_forward, serial, Exec::Serial)->Arg(100)->Arg(250)->Arg(1400);
BENCHMARK_CAPTURE(dense_forward, parallel, Exec::Parallel)->Arg(100)->Arg(250)->Arg(1400);
BENCHMARK_CAPTURE(dense_backward, serial, Exec::Serial)->Arg(100)->Arg(250);
BENCHMARK_CAPTURE(dense_backward, parallel, Exec::Parallel)->Arg(100)->Arg(250);
BENCHMARK_CAPTURE(power_flow_batch, serial, Exec::Serial)->Arg(33)->Arg(119);
BENCHMARK_CAPTURE(power_flow_batch, parallel, Exec::Parallel)->Arg(33)->Arg(119);

BENCHMARK_MAIN();
