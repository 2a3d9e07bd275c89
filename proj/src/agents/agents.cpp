#include "dnr/agents/agents.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>

#include "dnr/error.hpp"
#include "dnr/nn/masked_softmax.hpp"

namespace dnr::agents {

namespace {

std::span<const std::uint8_t> row_of(std::span<const std::uint8_t> mask, std::size_t i, std::size_t m) {
    return mask.subspan(i * m, m);
}

bool row_open(std::span<const std::uint8_t> mask, std::size_t i, std::size_t m) {
    const auto r = row_of(mask, i, m);
    return std::any_of(r.begin(), r.end(), [](std::uint8_t c) { return c != 0; });
}

double floored_log(double p, double floor) { return std::log(std::max(p, floor)); }

std::vector<std::size_t> sample_rows(std::size_t n, std::size_t count, Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> rows(count);
    for (auto& r : rows) r = pick(rng);
    return rows;
}

double grad_norm(const Mlp& g) {
    double s = 0.0;
    for (auto block : g.parameter_blocks())
        for (double v : block) s += v * v;
    return std::sqrt(s);
}

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Mlp make_net(std::size_t in, const AgentHyper& h, std::size_t out, Rng& rng) {
    return Mlp::xavier(Mlp::widths_for(in, h.hidden, h.hidden_layers, out), rng);
}

int argmax_feasible(std::span<const double> values, std::span<const std::uint8_t> mask) {
    int best = -1;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < values.size(); ++c)
        if (mask[c] && (best < 0 || values[c] > best_v)) {
            best = static_cast<int>(c);
            best_v = values[c];
        }
    require(best >= 0, "argmax over an empty mask");
    return best;
}

}  // namespace

std::string to_string(Algo a) {
    switch (a) {
        case Algo::Bcsac: return "bcsac";
        case Algo::Sac: return "sac";
        case Algo::Dqn: return "dqn";
    }
    return "?";
}

Algo parse_algo(const std::string& s) {
    if (s == "bcsac") return Algo::Bcsac;
    if (s == "sac") return Algo::Sac;
    if (s == "dqn") return Algo::Dqn;
    throw ValidationError("unknown algorithm \"" + s + "\" (expected bcsac, sac or dqn)");
}

void AgentHyper::validate() const {
    if (!(learning_rate > 0.0) || hidden == 0 || hidden_layers == 0 || batch_size == 0 || steps < 0)
        throw ValidationError("agent hyperparameters need positive sizes and learning rate");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("discount must lie in [0, 1)");
    if (algo != Algo::Dqn) {
        if (!(tau >= 0.0)) throw ValidationError("temperature must be non-negative");
        if (!(rho > 0.0 && rho < 1.0)) throw ValidationError("Polyak factor must lie in (0, 1)");
    } else if (copy_steps <= 0) {
        throw ValidationError("DQN copy period must be positive");
    }
    if (!(prob_floor > 0.0)) throw ValidationError("probability floor must be positive");
}

nlohmann::json AgentHyper::to_json() const {
    nlohmann::json j{{"learning_rate", learning_rate}, {"hidden", hidden},     {"hidden_layers", hidden_layers},
                     {"batch_size", batch_size},       {"gamma", gamma},       {"steps", steps},
                     {"checkpoint_every", checkpoint_every}, {"prob_floor", prob_floor}};
    if (algo == Algo::Dqn) {
        j["copy_steps"] = copy_steps;
    } else {
        j["tau"] = tau;
        j["rho"] = rho;
    }
    return j;
}

AgentHyper AgentHyper::from_json(const nlohmann::json& j, Algo algo) {
    AgentHyper h;
    h.algo = algo;
    h.learning_rate = j.value("learning_rate", h.learning_rate);
    h.hidden = j.value("hidden", h.hidden);
    h.hidden_layers = j.value("hidden_layers", h.hidden_layers);
    h.tau = j.value("tau", h.tau);
    h.rho = j.value("rho", h.rho);
    h.batch_size = j.value("batch_size", h.batch_size);
    h.gamma = j.value("gamma", h.gamma);
    h.steps = j.value("steps", h.steps);
    h.copy_steps = j.value("copy_steps", h.copy_steps);
    h.checkpoint_every = j.value("checkpoint_every", h.checkpoint_every);
    h.prob_floor = j.value("prob_floor", h.prob_floor);
    h.validate();
    return h;
}

const AgentHyper& FeederHyper::get(Algo a) const {
    switch (a) {
        case Algo::Bcsac: return bcsac;
        case Algo::Sac: return sac;
        case Algo::Dqn: return dqn;
    }
    throw ContractViolation("unknown algorithm");
}

FeederHyper FeederHyper::from_json(const nlohmann::json& j) {
    FeederHyper f;
    f.feeder = j.value("feeder", std::string{});
    const nlohmann::json shared = j.value("shared", nlohmann::json::object());
    auto merged = [&](const char* key) {
        nlohmann::json m = shared;
        if (j.contains(key)) m.update(j.at(key));
        return m;
    };
    try {
        f.dqn = AgentHyper::from_json(merged("dqn"), Algo::Dqn);
        f.sac = AgentHyper::from_json(merged("sac"), Algo::Sac);
        f.bcsac = AgentHyper::from_json(merged("bcsac"), Algo::Bcsac);
        f.cvae = bm::CvaeConfig::from_json(j.value("cvae", nlohmann::json::object()));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("hyperparameter file: ") + e.what());
    }
    f.reward_scale = shared.value("reward_scale", f.reward_scale);
    return f;
}

FeederHyper FeederHyper::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open hyperparameter file " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

double suggest_tau(double typical_abs_reward, double typical_action_count) {
    require(typical_abs_reward > 0.0 && typical_action_count >= 1.0, "suggest_tau: need |r| > 0 and |A| >= 1");
    return typical_action_count / typical_abs_reward;
}

bool tau_within_guidance(double tau, double typical_abs_reward, double typical_action_count) {
    if (!(tau > 0.0)) return false;
    const double ratio = (typical_action_count / tau) / typical_abs_reward;
    return ratio >= 0.1 && ratio <= 10.0;
}

TableBehavior TableBehavior::uniform(const OfflineDataset& data) {
    Matrix t(data.size(), data.cells());
    for (std::size_t r = 0; r < data.size(); ++r) {
        const auto mask = data.mask(r);
        const double n = static_cast<double>(std::count_if(mask.begin(), mask.end(), [](auto c) { return c != 0; }));
        for (std::size_t c = 0; c < mask.size(); ++c) t(r, c) = mask[c] ? 1.0 / n : 0.0;
    }
    return TableBehavior(std::move(t));
}

void TableBehavior::distributions(std::span<const std::size_t> rows, Matrix& out) const {
    out.resize(rows.size(), table_.cols);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        require(rows[k] < table_.rows, "TableBehavior: row outside the table");
        std::copy(table_.row(rows[k]).begin(), table_.row(rows[k]).end(), out.row(k).begin());
    }
}

CvaeBehavior::CvaeBehavior(const bm::CvaeModel& model, const OfflineDataset& data, int samples, std::uint64_t seed,
                           std::size_t cache_limit)
    : model_(&model), data_(&data), samples_(samples), seed_(seed) {
    require(samples >= 1, "CvaeBehavior: need at least one latent sample");
    require(model.state_dim == data.state_dim() && model.cells == data.cells(), "CvaeBehavior: model/data mismatch");
    if (data.size() * data.cells() <= cache_limit) {
        std::vector<std::size_t> all(data.size());
        for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
        compute(all, table_);
        cached_ = true;
    }
}

void CvaeBehavior::distributions(std::span<const std::size_t> rows, Matrix& out) const {
    if (!cached_) return compute(rows, out);
    out.resize(rows.size(), table_.cols);
    for (std::size_t k = 0; k < rows.size(); ++k)
        std::copy(table_.row(rows[k]).begin(), table_.row(rows[k]).end(), out.row(k).begin());
}

void CvaeBehavior::compute(std::span<const std::size_t> rows, Matrix& out) const {
    const std::size_t d = model_->state_dim, dz = model_->latent, C = model_->cells;
    const auto L = static_cast<std::size_t>(samples_);
    out.resize(rows.size(), C);
    constexpr std::size_t kChunk = 128;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> probs(C);
    for (std::size_t begin = 0; begin < rows.size(); begin += kChunk) {
        const std::size_t n = std::min(kChunk, rows.size() - begin);
        Matrix in(n * L, d + dz);
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t row = rows[begin + k];
            Rng rng(mix(seed_ ^ mix(row)));
            const auto s = data_->state(row);
            for (std::size_t l = 0; l < L; ++l) {
                auto dst = in.row(k * L + l);
                std::copy(s.begin(), s.end(), dst.begin());
                for (std::size_t z = 0; z < dz; ++z) dst[d + z] = normal(rng);
            }
        }
        const Matrix logits = nn::forward(model_->decoder, in);
        for (std::size_t k = 0; k < n; ++k) {
            auto dst = out.row(begin + k);
            const auto mask = data_->mask(rows[begin + k]);
            for (std::size_t l = 0; l < L; ++l) {
                nn::masked_softmax(logits.row(k * L + l), mask, probs);
                for (std::size_t c = 0; c < C; ++c) dst[c] += probs[c];
            }
            for (double& v : dst) v /= static_cast<double>(L);
        }
    }
}

Matrix critic_input(const Matrix& states, std::span<const int> close, std::size_t m) {
    require(close.size() == states.rows, "critic_input: row count mismatch");
    Matrix x(states.rows, states.cols + m);
    for (std::size_t r = 0; r < states.rows; ++r) {
        std::copy(states.row(r).begin(), states.row(r).end(), x.row(r).begin());
        require(close[r] >= 0 && static_cast<std::size_t>(close[r]) < m, "critic_input: branch index out of range");
        x(r, states.cols + static_cast<std::size_t>(close[r])) = 1.0;
    }
    return x;
}

Matrix critic_table(const Mlp& critic, const Matrix& states, std::span<const std::span<const std::uint8_t>> masks,
                    std::size_t m) {
    require(masks.size() == states.rows, "critic_table: row count mismatch");
    std::vector<std::size_t> owner;
    std::vector<int> close;
    for (std::size_t r = 0; r < states.rows; ++r)
        for (std::size_t i = 0; i < m; ++i)
            if (row_open(masks[r], i, m)) {
                owner.push_back(r);
                close.push_back(static_cast<int>(i));
            }
    Matrix x(owner.size(), states.cols + m);
    for (std::size_t k = 0; k < owner.size(); ++k) {
        std::copy(states.row(owner[k]).begin(), states.row(owner[k]).end(), x.row(k).begin());
        x(k, states.cols + static_cast<std::size_t>(close[k])) = 1.0;
    }
    const Matrix out = nn::forward(critic, x);
    Matrix table(states.rows, m * m);
    for (std::size_t k = 0; k < owner.size(); ++k) {
        const std::size_t i = static_cast<std::size_t>(close[k]);
        const auto mask = row_of(masks[owner[k]], i, m);
        for (std::size_t j = 0; j < m; ++j)
            if (mask[j]) table(owner[k], i * m + j) = out(k, j);
    }
    return table;
}

Minibatch Minibatch::gather(const OfflineDataset& data, std::vector<std::size_t> rows) {
    Minibatch mb;
    mb.states = data.gather_states(rows);
    mb.next_states = data.gather_states(rows, true);
    for (auto r : rows) {
        mb.actions.push_back(data.action(r));
        mb.rewards.push_back(data.reward(r));
        mb.masks.push_back(data.mask(r));
        mb.next_masks.push_back(data.next_mask(r));
    }
    mb.rows = std::move(rows);
    return mb;
}

ActorCritic ActorCritic::create(std::size_t state_dim, std::size_t m, const AgentHyper& hyper, Rng& rng) {
    hyper.validate();
    ActorCritic ac;
    ac.state_dim = state_dim;
    ac.m = m;
    ac.hyper = hyper;
    ac.q1 = make_net(state_dim + m, hyper, m, rng);
    ac.q2 = make_net(state_dim + m, hyper, m, rng);
    ac.v = make_net(state_dim, hyper, 1, rng);
    ac.v_target = ac.v;
    ac.actor = make_net(state_dim, hyper, m * m, rng);
    ac.opt_q1 = nn::AdamState(ac.q1, hyper.learning_rate);
    ac.opt_q2 = nn::AdamState(ac.q2, hyper.learning_rate);
    ac.opt_v = nn::AdamState(ac.v, hyper.learning_rate);
    ac.opt_actor = nn::AdamState(ac.actor, hyper.learning_rate);
    return ac;
}

nn::Checkpoint ActorCritic::to_checkpoint(const nlohmann::json& meta) const {
    nn::Checkpoint c;
    c.meta = meta;
    c.meta["kind"] = "actor_critic";
    c.meta["algo"] = to_string(hyper.algo);
    c.meta["state_dim"] = state_dim;
    c.meta["branches"] = m;
    c.meta["hyper"] = hyper.to_json();
    c.put("q1", q1);
    c.put("q2", q2);
    c.put("v", v);
    c.put("v_target", v_target);
    c.put("actor", actor);
    return c;
}

ActorCritic ActorCritic::from_checkpoint(const nn::Checkpoint& ckpt) {
    if (ckpt.meta.value("kind", std::string{}) != "actor_critic") throw ParseError("checkpoint is not an actor-critic");
    ActorCritic ac;
    ac.state_dim = ckpt.meta.at("state_dim").get<std::size_t>();
    ac.m = ckpt.meta.at("branches").get<std::size_t>();
    ac.hyper = AgentHyper::from_json(ckpt.meta.at("hyper"), parse_algo(ckpt.meta.at("algo").get<std::string>()));
    ac.q1 = ckpt.net("q1");
    ac.q2 = ckpt.net("q2");
    ac.v = ckpt.net("v");
    ac.v_target = ckpt.net("v_target");
    ac.actor = ckpt.net("actor");
    if (ac.actor.input_dim() != ac.state_dim || ac.actor.output_dim() != ac.m * ac.m)
        throw ParseError("actor-critic checkpoint has inconsistent shapes");
    ac.opt_q1 = nn::AdamState(ac.q1, ac.hyper.learning_rate);
    ac.opt_q2 = nn::AdamState(ac.q2, ac.hyper.learning_rate);
    ac.opt_v = nn::AdamState(ac.v, ac.hyper.learning_rate);
    ac.opt_actor = nn::AdamState(ac.actor, ac.hyper.learning_rate);
    return ac;
}

DqnModel DqnModel::create(std::size_t state_dim, std::size_t m, const AgentHyper& hyper, Rng& rng) {
    hyper.validate();
    DqnModel d;
    d.state_dim = state_dim;
    d.m = m;
    d.hyper = hyper;
    d.q = make_net(state_dim + m, hyper, m, rng);
    d.q_target = d.q;
    d.opt = nn::AdamState(d.q, hyper.learning_rate);
    return d;
}

nn::Checkpoint DqnModel::to_checkpoint(const nlohmann::json& meta) const {
    nn::Checkpoint c;
    c.meta = meta;
    c.meta["kind"] = "dqn";
    c.meta["algo"] = "dqn";
    c.meta["state_dim"] = state_dim;
    c.meta["branches"] = m;
    c.meta["hyper"] = hyper.to_json();
    c.put("q", q);
    c.put("q_target", q_target);
    return c;
}

DqnModel DqnModel::from_checkpoint(const nn::Checkpoint& ckpt) {
    if (ckpt.meta.value("kind", std::string{}) != "dqn") throw ParseError("checkpoint is not a DQN");
    DqnModel d;
    d.state_dim = ckpt.meta.at("state_dim").get<std::size_t>();
    d.m = ckpt.meta.at("branches").get<std::size_t>();
    d.hyper = AgentHyper::from_json(ckpt.meta.at("hyper"), Algo::Dqn);
    d.q = ckpt.net("q");
    d.q_target = ckpt.net("q_target");
    if (d.q.input_dim() != d.state_dim + d.m || d.q.output_dim() != d.m)
        throw ParseError("DQN checkpoint has inconsistent shapes");
    d.opt = nn::AdamState(d.q, d.hyper.learning_rate);
    return d;
}

ActorSample actor_at(const Mlp& actor, const Minibatch& mb, std::span<const int> actions) {
    ActorSample s;
    s.logits = nn::forward(actor, mb.states);
    s.probs.resize(s.logits.rows, s.logits.cols);
    s.actions.assign(actions.begin(), actions.end());
    for (std::size_t r = 0; r < mb.size(); ++r) {
        nn::masked_softmax(s.logits.row(r), mb.masks[r], s.probs.row(r));
        s.log_pi.push_back(nn::masked_log_prob(s.logits.row(r), mb.masks[r], static_cast<std::size_t>(actions[r])));
    }
    return s;
}

ActorSample sample_actions(const Mlp& actor, const Minibatch& mb, Rng& rng) {
    ActorSample s;
    s.logits = nn::forward(actor, mb.states);
    s.probs.resize(s.logits.rows, s.logits.cols);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t r = 0; r < mb.size(); ++r) {
        nn::masked_softmax(s.logits.row(r), mb.masks[r], s.probs.row(r));
        const auto p = s.probs.row(r);
        double x = u(rng), acc = 0.0;
        int a = -1;
        for (std::size_t c = 0; c < p.size(); ++c) {
            if (!mb.masks[r][c]) continue;
            a = static_cast<int>(c);
            acc += p[c];
            if (x < acc) break;
        }
        s.actions.push_back(a);
        s.log_pi.push_back(nn::masked_log_prob(s.logits.row(r), mb.masks[r], static_cast<std::size_t>(a)));
    }
    return s;
}

namespace {

// q(s, a) for the given cells plus the tape for backprop.
Matrix critic_at(const Mlp& q, const Matrix& states, std::span<const int> cells, std::size_t m, nn::MlpTape* tape,
                 std::vector<double>& values) {
    std::vector<int> close(cells.size());
    for (std::size_t r = 0; r < cells.size(); ++r) close[r] = cells[r] / static_cast<int>(m);
    Matrix out = nn::forward(q, critic_input(states, close, m), tape);
    values.resize(cells.size());
    for (std::size_t r = 0; r < cells.size(); ++r)
        values[r] = out(r, static_cast<std::size_t>(cells[r]) % m);
    return out;
}

double regress(const Mlp& q, const Matrix& states, std::span<const int> cells, std::size_t m,
               std::span<const double> targets, Mlp* grads) {
    nn::MlpTape tape;
    std::vector<double> values;
    const Matrix out = critic_at(q, states, cells, m, grads ? &tape : nullptr, values);
    const double B = static_cast<double>(cells.size());
    double loss = 0.0;
    Matrix dy(out.rows, out.cols);
    for (std::size_t r = 0; r < cells.size(); ++r) {
        const double e = values[r] - targets[r];
        loss += 0.5 * e * e / B;
        dy(r, static_cast<std::size_t>(cells[r]) % m) = e / B;
    }
    if (grads) nn::backward(q, tape, dy, *grads);
    return loss;
}

std::vector<double> bootstrap_targets(const Mlp& v_target, const Minibatch& mb, double gamma) {
    const Matrix vn = nn::forward(v_target, mb.next_states);
    std::vector<double> y(mb.size());
    for (std::size_t r = 0; r < mb.size(); ++r) {
        y[r] = mb.rewards[r] + gamma * vn(r, 0);
        if (!std::isfinite(y[r]))
            throw NumericalError("non-finite critic target for dataset row " + std::to_string(mb.rows[r]) +
                                 "; batch rejected");
    }
    return y;
}

}  // namespace

double critic_loss(const ActorCritic& model, const Minibatch& mb, Mlp* g1, Mlp* g2) {
    require(mb.size() > 0, "critic_loss: empty minibatch");
    const auto y = bootstrap_targets(model.v_target, mb, model.hyper.gamma);
    return regress(model.q1, mb.states, mb.actions, model.m, y, g1) +
           regress(model.q2, mb.states, mb.actions, model.m, y, g2);
}

double critic_update(ActorCritic& model, const Minibatch& mb) {
    Mlp g1(model.q1.widths()), g2(model.q2.widths());
    const double loss = critic_loss(model, mb, &g1, &g2);
    nn::adam_step(model.q1, g1, model.opt_q1);
    nn::adam_step(model.q2, g2, model.opt_q2);
    return loss;
}

std::vector<double> value_targets(const ActorCritic& model, const Minibatch& mb, std::span<const int> a_hat,
                                  std::span<const double> log_pi, std::span<const double> log_pb) {
    require(a_hat.size() == mb.size() && log_pi.size() == mb.size(), "value_targets: size mismatch");
    require(log_pb.empty() || log_pb.size() == mb.size(), "value_targets: behaviour size mismatch");
    std::vector<double> v1, v2;
    critic_at(model.q1, mb.states, a_hat, model.m, nullptr, v1);
    critic_at(model.q2, mb.states, a_hat, model.m, nullptr, v2);
    const double tau = model.hyper.tau;
    std::vector<double> t(mb.size());
    for (std::size_t r = 0; r < mb.size(); ++r) {
        t[r] = std::min(v1[r], v2[r]) - tau * log_pi[r];
        if (!log_pb.empty()) t[r] += tau * log_pb[r];
        if (!std::isfinite(t[r]))
            throw NumericalError("non-finite value target for dataset row " + std::to_string(mb.rows[r]) +
                                 "; batch rejected");
    }
    return t;
}

double value_loss(const ActorCritic& model, const Minibatch& mb, std::span<const double> targets, Mlp* gv) {
    require(targets.size() == mb.size() && mb.size() > 0, "value_loss: size mismatch");
    nn::MlpTape tape;
    const Matrix v = nn::forward(model.v, mb.states, gv ? &tape : nullptr);
    const double B = static_cast<double>(mb.size());
    Matrix dy(mb.size(), 1);
    double loss = 0.0;
    for (std::size_t r = 0; r < mb.size(); ++r) {
        const double e = v(r, 0) - targets[r];
        loss += 0.5 * e * e / B;
        dy(r, 0) = e / B;
    }
    if (gv) nn::backward(model.v, tape, dy, *gv);
    return loss;
}

double value_update(ActorCritic& model, const Minibatch& mb, std::span<const double> targets) {
    Mlp g(model.v.widths());
    const double loss = value_loss(model, mb, targets, &g);
    nn::adam_step(model.v, g, model.opt_v);
    return loss;
}

void target_value_update(ActorCritic& model) { nn::polyak_update(model.v_target, model.v, model.hyper.rho); }

std::vector<double> actor_brackets(const ActorCritic& model, const Minibatch& mb, std::span<const int> a_hat,
                                   std::span<const double> log_pi, std::span<const double> log_pb) {
    require(a_hat.size() == mb.size() && log_pi.size() == mb.size(), "actor_brackets: size mismatch");
    std::vector<double> q;
    critic_at(model.q1, mb.states, a_hat, model.m, nullptr, q);
    std::vector<double> b(mb.size());
    for (std::size_t r = 0; r < mb.size(); ++r)
        b[r] = q[r] - model.hyper.tau * (log_pi[r] - (log_pb.empty() ? 0.0 : log_pb[r]));
    return b;
}

double actor_surrogate(const Mlp& actor, const Minibatch& mb, std::span<const int> a_hat,
                       std::span<const double> brackets, Mlp* grads) {
    require(a_hat.size() == mb.size() && brackets.size() == mb.size() && mb.size() > 0,
            "actor_surrogate: size mismatch");
    nn::MlpTape tape;
    const Matrix logits = nn::forward(actor, mb.states, grads ? &tape : nullptr);
    const double B = static_cast<double>(mb.size());
    Matrix dy(logits.rows, logits.cols);
    std::vector<double> probs(logits.cols);
    double loss = 0.0;
    for (std::size_t r = 0; r < mb.size(); ++r) {
        const auto a = static_cast<std::size_t>(a_hat[r]);
        loss -= brackets[r] * nn::masked_log_prob(logits.row(r), mb.masks[r], a) / B;
        if (grads) {
            nn::masked_softmax(logits.row(r), mb.masks[r], probs);
            nn::masked_log_prob_grad(probs, mb.masks[r], a, dy.row(r));
            for (double& v : dy.row(r)) v *= -brackets[r] / B;
        }
    }
    if (grads) nn::backward(actor, tape, dy, *grads);
    return loss;
}

double actor_update(ActorCritic& model, const Minibatch& mb, std::span<const int> a_hat,
                    std::span<const double> brackets) {
    Mlp g(model.actor.widths());
    actor_surrogate(model.actor, mb, a_hat, brackets, &g);
    const double norm = grad_norm(g);
    nn::adam_step(model.actor, g, model.opt_actor);
    return norm;
}

Mlp expected_actor_gradient(const Mlp& actor, const Minibatch& mb, const Matrix& q, const Matrix* log_pb, double tau,
                            std::span<const double> shift) {
    const std::size_t B = mb.size();
    require(B > 0 && q.rows == B && (!log_pb || log_pb->rows == B), "expected_actor_gradient: size mismatch");
    require(shift.empty() || shift.size() == B, "expected_actor_gradient: shift size mismatch");
    nn::MlpTape tape;
    const Matrix logits = nn::forward(actor, mb.states, &tape);
    const std::size_t C = logits.cols;
    Matrix dy(B, C);
    std::vector<double> probs(C);
    for (std::size_t r = 0; r < B; ++r) {
        nn::masked_softmax(logits.row(r), mb.masks[r], probs);
        // sum_a pi(a) (e_a - pi) b(a) = pi * b - pi * E_pi[b]
        std::vector<double> b(C, 0.0);
        double mean_b = 0.0;
        for (std::size_t a = 0; a < C; ++a) {
            if (!mb.masks[r][a]) continue;
            const double log_pi = nn::masked_log_prob(logits.row(r), mb.masks[r], a);
            b[a] = q(r, a) - tau * (log_pi - (log_pb ? (*log_pb)(r, a) : 0.0)) + (shift.empty() ? 0.0 : shift[r]);
            mean_b += probs[a] * b[a];
        }
        for (std::size_t a = 0; a < C; ++a)
            if (mb.masks[r][a]) dy(r, a) = probs[a] * (b[a] - mean_b) / static_cast<double>(B);
    }
    Mlp grads(actor.widths());
    nn::backward(actor, tape, dy, grads);
    return grads;
}

double dqn_loss(const DqnModel& model, const Minibatch& mb, Mlp* grads) {
    require(mb.size() > 0, "dqn_loss: empty minibatch");
    const Matrix qn = critic_table(model.q_target, mb.next_states, mb.next_masks, model.m);
    std::vector<double> y(mb.size());
    for (std::size_t r = 0; r < mb.size(); ++r) {
        const int best = argmax_feasible(qn.row(r), mb.next_masks[r]);
        y[r] = mb.rewards[r] + model.hyper.gamma * qn(r, static_cast<std::size_t>(best));
        if (!std::isfinite(y[r]))
            throw NumericalError("non-finite DQN target for dataset row " + std::to_string(mb.rows[r]) +
                                 "; batch rejected");
    }
    return regress(model.q, mb.states, mb.actions, model.m, y, grads);
}

double dqn_update(DqnModel& model, const Minibatch& mb) {
    Mlp g(model.q.widths());
    const double loss = dqn_loss(model, mb, &g);
    nn::adam_step(model.q, g, model.opt);
    return loss;
}

namespace {

ActorCriticResult train_actor_critic(const OfflineDataset& data, const BehaviorSource* behavior,
                                     const AgentHyper& hyper, Rng& rng) {
    hyper.validate();
    require(data.size() > 0, "training needs a non-empty dataset");
    const long env_calls = env::DnrEnv::step_calls();
    ActorCriticResult res;
    res.model = ActorCritic::create(data.state_dim(), data.branches(), hyper, rng);
    auto& model = res.model;
    Matrix pb;
    for (int step = 1; step <= hyper.steps; ++step) {
        const auto mb = Minibatch::gather(data, sample_rows(data.size(), hyper.batch_size, rng));
        const auto sample = sample_actions(model.actor, mb, rng);
        std::vector<double> log_pb;
        if (behavior) {
            behavior->distributions(mb.rows, pb);
            for (std::size_t r = 0; r < mb.size(); ++r)
                log_pb.push_back(floored_log(pb(r, static_cast<std::size_t>(sample.actions[r])), hyper.prob_floor));
        }
        res.curves.critic_loss.push_back(critic_update(model, mb));
        const auto targets = value_targets(model, mb, sample.actions, sample.log_pi, log_pb);
        res.curves.value_loss.push_back(value_update(model, mb, targets));
        target_value_update(model);
        const auto brackets = actor_brackets(model, mb, sample.actions, sample.log_pi, log_pb);
        res.curves.actor_grad_norm.push_back(actor_update(model, mb, sample.actions, brackets));
        if ((hyper.checkpoint_every > 0 && step % hyper.checkpoint_every == 0) || step == hyper.steps)
            res.checkpoints.push_back(model.to_checkpoint({{"step", step}}));
    }
    require(env::DnrEnv::step_calls() == env_calls, "training interacted with the environment");
    return res;
}

}  // namespace

ActorCriticResult train_bcsac(const OfflineDataset& data, const BehaviorSource& behavior, const AgentHyper& hyper,
                              Rng& rng) {
    return train_actor_critic(data, &behavior, hyper, rng);
}

ActorCriticResult train_sac(const OfflineDataset& data, const AgentHyper& hyper, Rng& rng) {
    return train_actor_critic(data, nullptr, hyper, rng);
}

DqnResult train_dqn(const OfflineDataset& data, const AgentHyper& hyper, Rng& rng) {
    hyper.validate();
    require(data.size() > 0, "training needs a non-empty dataset");
    const long env_calls = env::DnrEnv::step_calls();
    DqnResult res;
    res.model = DqnModel::create(data.state_dim(), data.branches(), hyper, rng);
    for (int step = 1; step <= hyper.steps; ++step) {
        const auto mb = Minibatch::gather(data, sample_rows(data.size(), hyper.batch_size, rng));
        res.curves.critic_loss.push_back(dqn_update(res.model, mb));
        if (step % hyper.copy_steps == 0) res.model.q_target = res.model.q;
        if ((hyper.checkpoint_every > 0 && step % hyper.checkpoint_every == 0) || step == hyper.steps)
            res.checkpoints.push_back(res.model.to_checkpoint({{"step", step}}));
    }
    require(env::DnrEnv::step_calls() == env_calls, "training interacted with the environment");
    return res;
}

Policy greedy_actor_policy(const Mlp& actor, const grid::Network& net, const env::FeatureNorms& norms) {
    return [actor, &net, norms](const env::DnrState& s, const topo::SwitchPairMask& mask) {
        const auto f = env::encode_state(net, norms, s);
        Matrix x(1, f.size());
        std::copy(f.begin(), f.end(), x.row(0).begin());
        const Matrix logits = nn::forward(actor, x, nullptr, Exec::Serial);
        const int cell = argmax_feasible(logits.row(0), mask.cells());
        const int m = static_cast<int>(mask.size());
        return env::DnrAction{cell / m, cell % m};
    };
}

Policy greedy_dqn_policy(const Mlp& q, const grid::Network& net, const env::FeatureNorms& norms) {
    return [q, &net, norms](const env::DnrState& s, const topo::SwitchPairMask& mask) {
        const auto f = env::encode_state(net, norms, s);
        Matrix x(1, f.size());
        std::copy(f.begin(), f.end(), x.row(0).begin());
        const std::span<const std::uint8_t> masks[1] = {mask.cells()};
        const Matrix table = critic_table(q, x, masks, mask.size());
        const int cell = argmax_feasible(table.row(0), mask.cells());
        const int m = static_cast<int>(mask.size());
        return env::DnrAction{cell / m, cell % m};
    };
}

Policy stay_policy() {
    return [](const env::DnrState&, const topo::SwitchPairMask& mask) { return topo::canonical_stay(mask); };
}

Policy replay_policy(const env::TransitionBatch& batch) {
    std::map<int, env::DnrAction> by_hour;
    for (const auto& r : batch.rows) by_hour[r.t] = r.action;
    return [by_hour](const env::DnrState& s, const topo::SwitchPairMask& mask) {
        auto it = by_hour.find(s.t);
        if (it != by_hour.end() && mask.allows(it->second)) return it->second;
        return topo::canonical_stay(mask);
    };
}

WeeklyCost evaluate_weekly_cost(const env::DnrEnv& env, const Policy& policy, const topo::Configuration& initial,
                                int t0, int hours) {
    WeeklyCost out;
    auto state = env.reset(initial, t0);
    double worst = 0.0;
    for (int k = 0; k < hours; ++k) {
        const auto mask = topo::switch_pair_mask(env.network(), state.config);
        const auto action = policy(state, mask);
        if (!mask.allows(action))
            throw RejectedAction("policy emitted masked-out action (" + std::to_string(action.close) + ", " +
                                 std::to_string(action.open) + ") at hour " + std::to_string(state.t));
        out.actions.push_back(action);
        double cost = 0.0;
        try {
            const auto step = env.step(state, action);
            cost = -step.reward;
            state = step.next;
        } catch (const NumericalError& e) {
            ++out.nonconverged;
            cost = worst;
            std::cerr << "warning: " << e.what() << "; charged the worst observed hourly cost\n";
            state = env::DnrState{env.series().frame(state.t + 1), state.config, state.t + 1};
        }
        worst = std::max(worst, cost);
        out.hourly.push_back(cost);
        out.total += cost;
    }
    return out;
}

TestWeek test_week(const env::TransitionBatch& batch) {
    require(batch.train_rows > 0 && batch.train_rows < batch.rows.size(), "test_week: batch has no test rows");
    TestWeek w;
    w.t0 = batch.rows[batch.train_rows].t;
    w.initial = batch.rows[batch.train_rows - 1].next_config;
    w.hours = static_cast<int>(batch.rows.size() - batch.train_rows);
    return w;
}

double historical_cost(const env::TransitionBatch& batch) {
    double c = 0.0;
    for (std::size_t k = batch.train_rows; k < batch.rows.size(); ++k) c += batch.rows[k].unscaled_cost();
    return c;
}

}  // namespace dnr::agents
