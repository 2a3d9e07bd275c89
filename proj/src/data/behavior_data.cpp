#include "dnr/data/behavior_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "dnr/error.hpp"

namespace dnr::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double tan_phi(double pf) { return std::tan(std::acos(pf)); }

// Normalised solar shape for one hour with a per-day clearness factor.
std::vector<double> solar_shape(std::size_t hours, Rng& rng) {
    std::uniform_real_distribution<double> clear(0.3, 1.0);
    std::vector<double> s(hours, 0.0);
    double day_factor = 1.0;
    for (std::size_t t = 0; t < hours; ++t) {
        if (t % 24 == 0) day_factor = clear(rng);
        const double h = static_cast<double>(t % 24);
        const double season = 1.0 + 0.3 * std::cos(kTwoPi * (static_cast<double>(t) / 8760.0 - 0.5));
        if (h > 6.0 && h < 18.0) s[t] = day_factor * season * std::sin(std::numbers::pi * (h - 6.0) / 12.0);
    }
    return s;
}

void attach_solar(const grid::Network& net, LoadLibrary& lib, double peak_ratio, Rng& rng) {
    for (int label : net.solar_labels) {
        const int bus = net.bus_by_label(label);
        if (net.is_substation(bus)) throw ValidationError("solar bus " + std::to_string(label) + " is a substation");
        const auto& d = lib.demand_kw[static_cast<std::size_t>(bus)];
        double mean = 0.0;
        for (double v : d) mean += v;
        mean /= static_cast<double>(std::max<std::size_t>(d.size(), 1));
        auto shape = solar_shape(lib.hours, rng);
        for (double& v : shape) v *= peak_ratio * mean;
        lib.solar_kw[static_cast<std::size_t>(bus)] = std::move(shape);
    }
}

}  // namespace

void ScenarioProbs::validate() const {
    if (!(p_mod >= 0.0) || !(p_fix >= 0.0) || !(p_rnd >= 0.0))
        throw ValidationError("scenario probabilities must be non-negative");
    if (std::abs(p_mod + p_fix + p_rnd - 1.0) > 1e-9)
        throw ValidationError("scenario probabilities must sum to 1");
}

ScenarioProbs ScenarioProbs::from_ratio(double p_mod, double fix_to_rnd) {
    if (!(p_mod >= 0.0 && p_mod <= 1.0) || !(fix_to_rnd >= 0.0))
        throw ValidationError("P_mod must lie in [0, 1] and the ratio must be non-negative");
    const double rest = 1.0 - p_mod;
    ScenarioProbs p{p_mod, rest * fix_to_rnd / (fix_to_rnd + 1.0), rest / (fix_to_rnd + 1.0)};
    p.validate();
    return p;
}

nlohmann::json ScenarioProbs::to_json() const { return {{"p_mod", p_mod}, {"p_fix", p_fix}, {"p_rnd", p_rnd}}; }

ScenarioProbs ScenarioProbs::from_json(const nlohmann::json& j) {
    ScenarioProbs p{j.at("p_mod").get<double>(), j.at("p_fix").get<double>(), j.at("p_rnd").get<double>()};
    p.validate();
    return p;
}

void SyntheticLoadSpec::validate() const {
    if (weeks <= 0 || customers_per_bus <= 0) throw ValidationError("load spec needs positive weeks and customers");
    if (!(mean_kw > 0.0) || base_sigma < 0.0 || noise_sigma < 0.0 || solar_peak_ratio < 0.0)
        throw ValidationError("load spec has a negative or zero scale");
    if (!(power_factor > 0.0 && power_factor <= 1.0)) throw ValidationError("power factor must lie in (0, 1]");
    if (std::abs(daily_amplitude) + std::abs(weekly_amplitude) + std::abs(annual_amplitude) >= 1.0)
        throw ValidationError("shape amplitudes must keep demand positive (sum below 1)");
}

nlohmann::json SyntheticLoadSpec::to_json() const {
    return {{"weeks", weeks},
            {"customers_per_bus", customers_per_bus},
            {"mean_kw", mean_kw},
            {"base_sigma", base_sigma},
            {"daily_amplitude", daily_amplitude},
            {"weekly_amplitude", weekly_amplitude},
            {"annual_amplitude", annual_amplitude},
            {"noise_sigma", noise_sigma},
            {"solar_peak_ratio", solar_peak_ratio},
            {"power_factor", power_factor},
            {"seed", seed}};
}

SyntheticLoadSpec SyntheticLoadSpec::from_json(const nlohmann::json& j) {
    SyntheticLoadSpec s;
    s.weeks = j.value("weeks", s.weeks);
    s.customers_per_bus = j.value("customers_per_bus", s.customers_per_bus);
    s.mean_kw = j.value("mean_kw", s.mean_kw);
    s.base_sigma = j.value("base_sigma", s.base_sigma);
    s.daily_amplitude = j.value("daily_amplitude", s.daily_amplitude);
    s.weekly_amplitude = j.value("weekly_amplitude", s.weekly_amplitude);
    s.annual_amplitude = j.value("annual_amplitude", s.annual_amplitude);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.solar_peak_ratio = j.value("solar_peak_ratio", s.solar_peak_ratio);
    s.power_factor = j.value("power_factor", s.power_factor);
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
}

double LoadLibrary::q_kvar(std::size_t bus, std::size_t t) const {
    const auto& d = demand_kw[bus];
    return d.empty() ? 0.0 : d[t] * tan_phi(power_factor);
}

double LoadLibrary::net_demand_kw(std::size_t t) const {
    double total = 0.0;
    for (std::size_t b = 0; b < demand_kw.size(); ++b) {
        if (!demand_kw[b].empty()) total += demand_kw[b][t];
        if (!solar_kw[b].empty()) total -= solar_kw[b][t];
    }
    return total;
}

int default_customers_per_bus(const grid::Network& net) { return net.bus_count() > 60 ? 15 : 30; }

LoadLibrary synthetic_library(const grid::Network& net, const SyntheticLoadSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    LoadLibrary lib;
    lib.hours = static_cast<std::size_t>(spec.weeks) * kHoursPerWeek;
    lib.power_factor = spec.power_factor;
    lib.demand_kw.assign(net.bus_count(), {});
    lib.solar_kw.assign(net.bus_count(), {});

    std::lognormal_distribution<double> base(std::log(spec.mean_kw), spec.base_sigma);
    // Mean-one multiplicative noise.
    std::lognormal_distribution<double> noise(-0.5 * spec.noise_sigma * spec.noise_sigma, spec.noise_sigma);
    std::uniform_real_distribution<double> phase(-1.5, 1.5);

    for (int bus : net.load_buses()) {
        auto& series = lib.demand_kw[static_cast<std::size_t>(bus)];
        series.assign(lib.hours, 0.0);
        for (int c = 0; c < spec.customers_per_bus; ++c) {
            const double level = base(rng);
            const double shift = phase(rng);
            for (std::size_t t = 0; t < lib.hours; ++t) {
                const double h = static_cast<double>(t % 24) + shift;
                const double day = static_cast<double>((t / 24) % 7);
                const double daily = 0.7 * std::cos(kTwoPi * (h - 19.0) / 24.0) +
                                     0.3 * std::cos(2.0 * kTwoPi * (h - 8.0) / 24.0);
                const double weekly = day >= 5.0 ? 1.0 : -0.4;
                const double annual = std::cos(kTwoPi * static_cast<double>(t) / 8760.0);
                const double shape = 1.0 + spec.daily_amplitude * daily + spec.weekly_amplitude * weekly +
                                     spec.annual_amplitude * annual;
                series[t] += level * shape * noise(rng);
            }
        }
    }
    attach_solar(net, lib, spec.solar_peak_ratio, rng);
    return lib;
}

LoadLibrary ingest_csv(const grid::Network& net, const std::filesystem::path& meters, int customers_per_bus,
                       std::size_t hours, std::uint64_t solar_seed) {
    if (customers_per_bus <= 0 || hours == 0) throw ValidationError("ingestion needs positive customers and hours");
    std::ifstream in(meters);
    if (!in) throw ParseError("cannot open meter file " + meters.string());

    std::map<long, std::vector<double>> customers;
    std::map<long, std::vector<std::uint8_t>> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream row(line);
        long id = 0;
        long hour = 0;
        double kwh = 0.0;
        if (!(row >> id >> hour >> kwh)) {
            if (lineno == 1) continue;  // header
            throw ParseError(meters.string() + ":" + std::to_string(lineno) +
                             ": expected customer-id, hour-index, kWh");
        }
        if (hour < 0 || static_cast<std::size_t>(hour) >= hours) continue;
        auto& s = customers[id];
        auto& f = seen[id];
        if (s.empty()) {
            s.assign(hours, 0.0);
            f.assign(hours, 0);
        }
        s[static_cast<std::size_t>(hour)] = kwh;
        f[static_cast<std::size_t>(hour)] = 1;
    }

    const auto& loads = net.load_buses();
    const std::size_t needed = loads.size() * static_cast<std::size_t>(customers_per_bus);
    if (customers.size() < needed)
        throw ValidationError("meter file has " + std::to_string(customers.size()) + " customers, " +
                              std::to_string(needed) + " needed (" + std::to_string(customers_per_bus) +
                              " per load bus)");

    std::ostringstream gaps;
    std::size_t gap_count = 0;
    for (const auto& [id, flags] : seen) {
        for (std::size_t t = 0; t < hours; ++t) {
            if (flags[t]) continue;
            std::size_t end = t;
            while (end + 1 < hours && !flags[end + 1]) ++end;
            if (gap_count < 20) gaps << " customer " << id << " hours " << t << "-" << end << ";";
            ++gap_count;
            t = end;
        }
    }
    if (gap_count > 0)
        throw ParseError("meter file has " + std::to_string(gap_count) + " gap(s):" + gaps.str());

    LoadLibrary lib;
    lib.hours = hours;
    lib.demand_kw.assign(net.bus_count(), {});
    lib.solar_kw.assign(net.bus_count(), {});
    auto it = customers.begin();
    for (int bus : loads) {
        auto& series = lib.demand_kw[static_cast<std::size_t>(bus)];
        series.assign(hours, 0.0);
        for (int c = 0; c < customers_per_bus; ++c, ++it)
            for (std::size_t t = 0; t < hours; ++t) series[t] += it->second[t];
    }
    Rng rng(solar_seed);
    attach_solar(net, lib, SyntheticLoadSpec{}.solar_peak_ratio, rng);
    return lib;
}

env::InjectionSeries build_injection_series(const grid::Network& net, const LoadLibrary& lib, double beta) {
    require(lib.demand_kw.size() == net.bus_count(), "build_injection_series: library does not match the network");
    env::InjectionSeries s(lib.hours, net.bus_count());
    const double to_pu = beta / (net.s_base_mva() * 1000.0);
    const double k = tan_phi(lib.power_factor);
    for (std::size_t b = 0; b < net.bus_count(); ++b) {
        const auto& d = lib.demand_kw[b];
        const auto& g = lib.solar_kw[b];
        for (std::size_t t = 0; t < lib.hours; ++t) {
            const double demand = d.empty() ? 0.0 : d[t];
            const double solar = g.empty() ? 0.0 : g[t];
            s.p(t, b) = (solar - demand) * to_pu;
            s.q(t, b) = -demand * k * to_pu;
        }
    }
    return s;
}

std::vector<int> sample_hours(int begin, int end, int count) {
    require(begin < end && count > 0, "sample_hours: empty range");
    std::vector<int> out;
    const int span = end - begin;
    count = std::min(count, span);
    for (int k = 0; k < count; ++k)
        out.push_back(begin + static_cast<int>(static_cast<long>(k) * span / count));
    return out;
}

double loss_ratio(const grid::Network& net, const LoadLibrary& lib, const Configuration& config, double beta,
                  const std::vector<int>& hours) {
    require(!hours.empty(), "loss_ratio: no hours sampled");
    const auto forest = topo::build_forest(net, config);
    const double to_pu = beta / (net.s_base_mva() * 1000.0);
    const double k = tan_phi(lib.power_factor);
    double losses = 0.0, demand = 0.0;
    grid::InjectionFrame f;
    f.p.resize(net.bus_count());
    f.q.resize(net.bus_count());
    for (int t : hours) {
        for (std::size_t b = 0; b < net.bus_count(); ++b) {
            const double d = lib.demand_kw[b].empty() ? 0.0 : lib.demand_kw[b][static_cast<std::size_t>(t)];
            const double g = lib.solar_kw[b].empty() ? 0.0 : lib.solar_kw[b][static_cast<std::size_t>(t)];
            f.p[b] = (g - d) * to_pu;
            f.q[b] = -d * k * to_pu;
        }
        f.t = t;
        const auto sol = grid::solve_power_flow(net, forest, f);
        if (!sol.converged || !std::isfinite(sol.losses)) return std::numeric_limits<double>::infinity();
        losses += grid::total_losses_kw(sol, net.s_base_mva());
        demand += beta * lib.net_demand_kw(static_cast<std::size_t>(t));
    }
    if (!(demand > 0.0)) throw CalibrationError("sampled hours have no positive net demand");
    return losses / demand;
}

CalibrationResult calibrate_beta(const grid::Network& net, const LoadLibrary& lib, const Configuration& base_config,
                                 double target_ratio, const std::vector<int>& hours) {
    if (!(target_ratio > 0.0 && target_ratio < 0.1))
        throw CalibrationError("target loss ratio must lie in (0, 0.1)");
    double lo = std::log(1e-3), hi = std::log(1e3);
    const double r_lo = loss_ratio(net, lib, base_config, std::exp(lo), hours);
    const double r_hi = loss_ratio(net, lib, base_config, std::exp(hi), hours);
    if (!(r_lo <= target_ratio && target_ratio <= r_hi))
        throw CalibrationError("target loss ratio " + std::to_string(target_ratio) + " not bracketed by beta in [1e-3, 1e3] (ratios " +
                               std::to_string(r_lo) + ", " + std::to_string(r_hi) + ")");
    CalibrationResult res;
    for (int it = 1; it <= 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double r = loss_ratio(net, lib, base_config, std::exp(mid), hours);
        res = {std::exp(mid), r, it};
        if (std::abs(r - target_ratio) <= 1e-3 * target_ratio) return res;
        (r < target_ratio ? lo : hi) = mid;
    }
    return res;
}

Perturbation Perturbation::none(const grid::Network& net) {
    return {std::vector<double>(net.branch_count(), 1.0), std::vector<double>(net.branch_count(), 1.0)};
}

Perturbation Perturbation::draw(const grid::Network& net, Rng& rng) {
    std::bernoulli_distribution coin(0.5);
    Perturbation p;
    for (std::size_t b = 0; b < net.branch_count(); ++b) {
        p.r_factor.push_back(coin(rng) ? 1.1 : 0.9);
        p.x_factor.push_back(coin(rng) ? 1.1 : 0.9);
    }
    return p;
}

grid::Network Perturbation::apply(const grid::Network& net) const {
    return net.with_scaled_impedances(r_factor, x_factor);
}

nlohmann::json Perturbation::to_json() const { return {{"r_factor", r_factor}, {"x_factor", x_factor}}; }

Perturbation Perturbation::from_json(const nlohmann::json& j) {
    return {j.at("r_factor").get<std::vector<double>>(), j.at("x_factor").get<std::vector<double>>()};
}

DnrAction greedy_controller(const grid::Network& model, const grid::InjectionFrame& frame,
                            const Configuration& config, const env::RewardParams& params, Exec exec) {
    const auto mask = topo::switch_pair_mask(model, config);
    const DnrAction stay = topo::canonical_stay(mask);
    std::vector<DnrAction> candidates{stay};
    for (const auto& a : mask.feasible_pairs())
        if (!a.is_stay()) candidates.push_back(a);
    const auto info = env::evaluate_actions(model, frame, config, mask, candidates, params, exec);
    std::size_t best = candidates.size();
    double best_cost = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        if (!info[k].converged) continue;
        const double c = info[k].total_cost();
        if (c < best_cost) {
            best_cost = c;
            best = k;
        }
    }
    return best == candidates.size() ? stay : candidates[best];
}

std::vector<DnrAction> operable_moves(const grid::Network& net, const grid::InjectionFrame& frame,
                                      const Configuration& config, const env::RewardParams& params, Exec exec) {
    const auto mask = topo::switch_pair_mask(net, config);
    std::vector<DnrAction> moves;
    for (const auto& a : mask.feasible_pairs())
        if (!a.is_stay()) moves.push_back(a);
    const auto info = env::evaluate_actions(net, frame, config, mask, moves, params, exec);
    std::vector<DnrAction> out;
    for (std::size_t k = 0; k < moves.size(); ++k)
        if (info[k].converged && info[k].violation == 0.0) out.push_back(moves[k]);
    return out;
}

std::vector<double> behavior_distribution(const topo::SwitchPairMask& mask, const DnrAction& controller,
                                          const ScenarioProbs& probs, const std::vector<DnrAction>& moves) {
    const std::size_t m = mask.size();
    require(mask.allows(controller), "behavior_distribution: controller action is infeasible");
    std::vector<double> pi(m * m, 0.0);
    const DnrAction stay = topo::canonical_stay(mask);
    auto cell = [m](const DnrAction& a) { return static_cast<std::size_t>(a.close) * m + static_cast<std::size_t>(a.open); };
    pi[cell(controller.is_stay() ? stay : controller)] += probs.p_mod;
    pi[cell(stay)] += probs.p_fix;
    if (moves.empty()) {
        pi[cell(stay)] += probs.p_rnd;
    } else {
        const double each = probs.p_rnd / static_cast<double>(moves.size());
        for (const auto& a : moves) {
            require(mask.allows(a) && !a.is_stay(), "behavior_distribution: random move is not an exchange");
            pi[cell(a)] += each;
        }
    }
    return pi;
}

std::vector<env::Transition> generate_batch(const env::DnrEnv& env, const grid::Network& model,
                                            const GenerateOptions& opt, Rng& rng) {
    opt.probs.validate();
    const auto& net = env.network();
    std::discrete_distribution<int> scenario_draw({opt.probs.p_mod, opt.probs.p_fix, opt.probs.p_rnd});
    std::vector<env::Transition> rows;
    rows.reserve(static_cast<std::size_t>(opt.hours));
    auto state = env.reset(opt.initial.size() ? opt.initial : Configuration::initial(net), opt.t0);
    for (int k = 0; k < opt.hours; ++k) {
        const auto mask = topo::switch_pair_mask(net, state.config);
        const DnrAction stay = topo::canonical_stay(mask);
        const DnrAction ctl =
            opt.probs.p_mod > 0.0 ? greedy_controller(model, state.injections, state.config, env.params()) : stay;
        const auto scenario = static_cast<env::Scenario>(scenario_draw(rng));
        DnrAction action = stay;
        DnrAction recorded_ctl = ctl.is_stay() ? stay : ctl;
        if (!recorded_ctl.is_stay() &&
            !env::evaluate_action(net, state.injections, state.config, mask, recorded_ctl, env.params()).converged)
            recorded_ctl = stay;
        if (scenario == env::Scenario::ModelBased) {
            action = recorded_ctl;
        } else if (scenario == env::Scenario::Random) {
            const auto moves = operable_moves(net, state.injections, state.config, env.params());
            if (!moves.empty()) {
                std::uniform_int_distribution<std::size_t> pick(0, moves.size() - 1);
                action = moves[pick(rng)];
            }
        }
        auto scenario_out = scenario;
        env::StepResult step;
        try {
            step = env.step(state, action);
        } catch (const NumericalError&) {
            action = greedy_controller(net, state.injections, state.config, env.params());
            step = env.step(state, action);
            scenario_out = env::Scenario::Emergency;
        }
        env::Transition tr;
        tr.t = state.t;
        tr.config = state.config;
        tr.action = action;
        tr.reward = step.reward / env.params().reward_scale;
        tr.loss_cost = step.info.loss_cost;
        tr.switch_cost = step.info.switch_cost;
        tr.penalty = step.info.penalty;
        tr.next_config = step.next.config;
        tr.scenario = scenario_out;
        tr.controller_action = recorded_ctl;
        rows.push_back(std::move(tr));
        state = step.next;
    }
    return rows;
}

nlohmann::json DatasetSpec::to_json() const {
    return {{"probs", probs.to_json()},
            {"weeks", weeks},
            {"train_weeks", train_weeks},
            {"target_loss_ratio", target_loss_ratio},
            {"calibration_hours", calibration_hours},
            {"seed", seed},
            {"loads", loads.to_json()}};
}

env::TransitionBatch build_dataset(const grid::Network& net, const DatasetSpec& spec, Exec exec) {
    auto loads = spec.loads;
    if (loads.weeks < spec.weeks + 1) loads.weeks = spec.weeks + 1;
    return build_dataset(net, synthetic_library(net, loads), spec, exec);
}

env::TransitionBatch build_dataset(const grid::Network& net, const LoadLibrary& lib, const DatasetSpec& spec,
                                   Exec) {
    spec.probs.validate();
    if (spec.train_weeks <= 0 || spec.train_weeks >= spec.weeks)
        throw ValidationError("dataset needs 0 < train_weeks < weeks");
    const int hours = spec.weeks * kHoursPerWeek;
    const int train_hours = spec.train_weeks * kHoursPerWeek;
    if (lib.hours < static_cast<std::size_t>(hours) + 1)
        throw ValidationError("load library covers " + std::to_string(lib.hours) + " hours, " +
                              std::to_string(hours + 1) + " needed");

    const auto base = Configuration::initial(net);
    const auto cal = calibrate_beta(net, lib, base, spec.target_loss_ratio,
                                    sample_hours(0, train_hours, spec.calibration_hours));

    env::TransitionBatch batch;
    batch.feeder = net.name();
    batch.reward = env::RewardParams::for_feeder(net);
    batch.series = build_injection_series(net, lib, cal.beta);
    batch.norms = env::compute_norms(net, batch.series, 0, train_hours);

    Rng rng(spec.seed);
    const auto perturbation = Perturbation::draw(net, rng);
    const auto model = perturbation.apply(net);
    const env::DnrEnv env(net, batch.series, batch.reward);
    GenerateOptions opt;
    opt.probs = spec.probs;
    opt.hours = hours;
    opt.initial = base;
    batch.rows = generate_batch(env, model, opt, rng);
    batch.train_rows = static_cast<std::size_t>(train_hours);

    batch.header["probs"] = spec.probs.to_json();
    batch.header["beta"] = cal.beta;
    batch.header["calibrated_loss_ratio"] = cal.ratio;
    batch.header["seed"] = spec.seed;
    batch.header["perturbation"] = perturbation.to_json();
    batch.header["network"] = nlohmann::json::parse(grid::feeder_to_json(net));
    batch.header["spec"] = spec.to_json();
    return batch;
}

std::vector<double> recorded_behavior(const grid::Network& net, const env::TransitionBatch& batch,
                                      const env::Transition& row) {
    const auto probs = ScenarioProbs::from_json(batch.header.at("probs"));
    const auto mask = topo::switch_pair_mask(net, row.config);
    if (row.scenario == env::Scenario::Emergency) {
        const DnrAction a = row.action.is_stay() ? topo::canonical_stay(mask) : row.action;
        std::vector<double> pi(mask.size() * mask.size(), 0.0);
        pi[static_cast<std::size_t>(a.close) * mask.size() + static_cast<std::size_t>(a.open)] = 1.0;
        return pi;
    }
    std::vector<DnrAction> moves;
    if (probs.p_rnd > 0.0) moves = operable_moves(net, batch.series.frame(row.t), row.config, batch.reward);
    return behavior_distribution(mask, row.controller_action, probs, moves);
}

grid::Network batch_network(const env::TransitionBatch& batch) {
    if (!batch.header.contains("network")) throw ParseError("batch header carries no network");
    return grid::parse_feeder(batch.header.at("network").dump());
}

}  // namespace dnr::data
