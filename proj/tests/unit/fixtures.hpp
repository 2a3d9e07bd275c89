#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dnr/data/behavior_data.hpp"
#include "dnr/env/transitions.hpp"
#include "dnr/grid/network.hpp"
#include "dnr/grid/power_flow.hpp"

namespace fixtures {

inline std::filesystem::path data_dir() { return DNR_DATA_DIR; }

inline dnr::grid::Network feeder(int buses) {
    return dnr::grid::load_feeder(data_dir() / "feeders" / (std::to_string(buses) + "bus.json"));
}

/// Nominal loads as an injection frame (consumption negative, p.u.).
inline dnr::grid::InjectionFrame nominal_frame(const dnr::grid::Network& net, double scale = 1.0) {
    dnr::grid::InjectionFrame f;
    f.p.assign(net.bus_count(), 0.0);
    f.q.assign(net.bus_count(), 0.0);
    const double kva_base = net.s_base_mva() * 1000.0;
    for (const auto& b : net.buses()) {
        f.p[b.id] = -scale * b.nominal_p_kw / kva_base;
        f.q[b.id] = -scale * b.nominal_q_kvar / kva_base;
    }
    return f;
}

/// Nominal loads with every bus scaled by an independent factor in [lo, hi].
inline dnr::grid::InjectionFrame random_frame(const dnr::grid::Network& net, std::mt19937_64& rng, double lo = 0.2,
                                              double hi = 1.5) {
    std::uniform_real_distribution<double> u(lo, hi);
    auto f = nominal_frame(net);
    for (std::size_t i = 0; i < f.p.size(); ++i) {
        const double k = u(rng);
        f.p[i] *= k;
        f.q[i] *= k;
    }
    return f;
}

/// A few weeks of 16-bus behaviour data; small enough for unit tests.
inline dnr::env::TransitionBatch small_batch(double p_mod = 0.5, int weeks = 3, std::uint64_t seed = 1) {
    const auto net = feeder(16);
    dnr::data::DatasetSpec spec;
    spec.probs = dnr::data::ScenarioProbs::from_ratio(p_mod, 4.0);
    spec.weeks = weeks;
    spec.train_weeks = weeks - 1;
    spec.seed = seed;
    spec.calibration_hours = 96;
    spec.loads.weeks = weeks;
    spec.loads.seed = seed;
    return dnr::data::build_dataset(net, spec);
}

}  // namespace fixtures
