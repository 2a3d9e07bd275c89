#include "dnr/bm/cvae.hpp"

#include <algorithm>
#include <cmath>

#include "dnr/error.hpp"
#include "dnr/nn/masked_softmax.hpp"
#include "dnr/nn/optim.hpp"

namespace dnr::bm {

void CvaeConfig::validate() const {
    if (hidden == 0 || hidden_layers == 0 || latent == 0 || batch_size == 0 || steps < 0 || samples < 1)
        throw ValidationError("CVAE config needs positive sizes and at least one latent sample");
    if (!(learning_rate > 0.0) || !(prob_floor > 0.0)) throw ValidationError("CVAE config needs lr > 0 and floor > 0");
}

nlohmann::json CvaeConfig::to_json() const {
    return {{"hidden", hidden},         {"hidden_layers", hidden_layers}, {"latent", latent},
            {"learning_rate", learning_rate}, {"batch_size", batch_size}, {"steps", steps},
            {"samples", samples},       {"prob_floor", prob_floor}};
}

CvaeConfig CvaeConfig::from_json(const nlohmann::json& j) {
    CvaeConfig c;
    c.hidden = j.value("hidden", c.hidden);
    c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
    c.latent = j.value("latent", c.latent);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.samples = j.value("samples", c.samples);
    c.prob_floor = j.value("prob_floor", c.prob_floor);
    c.validate();
    return c;
}

CvaeModel CvaeModel::create(std::size_t state_dim, std::size_t cells, const CvaeConfig& cfg, Rng& rng) {
    cfg.validate();
    CvaeModel m;
    m.state_dim = state_dim;
    m.cells = cells;
    m.latent = cfg.latent;
    m.encoder = Mlp::xavier(Mlp::widths_for(state_dim + cells, cfg.hidden, cfg.hidden_layers, 2 * cfg.latent), rng);
    m.decoder = Mlp::xavier(Mlp::widths_for(state_dim + cfg.latent, cfg.hidden, cfg.hidden_layers, cells), rng);
    return m;
}

CvaeModel CvaeModel::zeros_like() const {
    CvaeModel g = *this;
    g.encoder.zero();
    g.decoder.zero();
    return g;
}

nn::Checkpoint CvaeModel::to_checkpoint(const nlohmann::json& meta) const {
    nn::Checkpoint c;
    c.meta = meta;
    c.meta["kind"] = "cvae";
    c.meta["state_dim"] = state_dim;
    c.meta["cells"] = cells;
    c.meta["latent"] = latent;
    c.put("encoder", encoder);
    c.put("decoder", decoder);
    return c;
}

CvaeModel CvaeModel::from_checkpoint(const nn::Checkpoint& ckpt) {
    if (ckpt.meta.value("kind", std::string{}) != "cvae") throw ParseError("checkpoint does not hold a CVAE");
    CvaeModel m;
    m.state_dim = ckpt.meta.at("state_dim").get<std::size_t>();
    m.cells = ckpt.meta.at("cells").get<std::size_t>();
    m.latent = ckpt.meta.at("latent").get<std::size_t>();
    m.encoder = ckpt.net("encoder");
    m.decoder = ckpt.net("decoder");
    if (m.encoder.input_dim() != m.state_dim + m.cells || m.encoder.output_dim() != 2 * m.latent ||
        m.decoder.input_dim() != m.state_dim + m.latent || m.decoder.output_dim() != m.cells)
        throw ParseError("CVAE checkpoint has inconsistent layer shapes");
    return m;
}

double gaussian_kl(std::span<const double> mu, std::span<const double> logvar) {
    double kl = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) kl += 0.5 * (mu[k] * mu[k] + std::exp(logvar[k]) - 1.0 - logvar[k]);
    return kl;
}

CvaeLoss cvae_loss_and_grads(const CvaeModel& model, const Matrix& states, std::span<const int> actions,
                             std::span<const std::span<const std::uint8_t>> masks, Rng& rng, CvaeModel* grads,
                             const Matrix* noise) {
    const std::size_t B = states.rows, d = model.state_dim, dz = model.latent, C = model.cells;
    require(B > 0 && states.cols == d && actions.size() == B && masks.size() == B, "cvae_loss: batch shape mismatch");
    for (std::size_t r = 0; r < B; ++r)
        require(actions[r] >= 0 && static_cast<std::size_t>(actions[r]) < C && masks[r][actions[r]] != 0,
                "cvae_loss: action is infeasible under its mask");

    Matrix enc_in(B, d + C);
    for (std::size_t r = 0; r < B; ++r) {
        std::copy(states.row(r).begin(), states.row(r).end(), enc_in.row(r).begin());
        enc_in(r, d + static_cast<std::size_t>(actions[r])) = 1.0;
    }
    nn::MlpTape enc_tape, dec_tape;
    const Matrix stats = nn::forward(model.encoder, enc_in, grads ? &enc_tape : nullptr);

    Matrix xi(B, dz);
    if (noise) {
        require(noise->rows == B && noise->cols == dz, "cvae_loss: noise shape mismatch");
        xi = *noise;
    } else {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (double& v : xi.data) v = normal(rng);
    }
    Matrix dec_in(B, d + dz);
    for (std::size_t r = 0; r < B; ++r) {
        std::copy(states.row(r).begin(), states.row(r).end(), dec_in.row(r).begin());
        for (std::size_t k = 0; k < dz; ++k) dec_in(r, d + k) = stats(r, k) + std::exp(0.5 * stats(r, dz + k)) * xi(r, k);
    }
    const Matrix logits = nn::forward(model.decoder, dec_in, grads ? &dec_tape : nullptr);

    CvaeLoss loss;
    Matrix dlogits(B, C);
    std::vector<double> probs(C);
    for (std::size_t r = 0; r < B; ++r) {
        const double rec = -nn::masked_log_prob(logits.row(r), masks[r], static_cast<std::size_t>(actions[r]));
        const auto s = stats.row(r);
        const double kl = gaussian_kl(s.subspan(0, dz), s.subspan(dz, dz));
        loss.reconstruction += rec;
        loss.kl += kl;
        if (grads) {
            nn::masked_softmax(logits.row(r), masks[r], probs);
            nn::masked_log_prob_grad(probs, masks[r], static_cast<std::size_t>(actions[r]), dlogits.row(r));
            for (double& v : dlogits.row(r)) v = -v / static_cast<double>(B);
        }
    }
    loss.reconstruction /= static_cast<double>(B);
    loss.kl /= static_cast<double>(B);
    loss.total = loss.reconstruction + loss.kl;
    if (!grads) return loss;

    const Matrix ddec = nn::backward(model.decoder, dec_tape, dlogits, grads->decoder);
    Matrix dstats(B, 2 * dz);
    const double inv = 1.0 / static_cast<double>(B);
    for (std::size_t r = 0; r < B; ++r)
        for (std::size_t k = 0; k < dz; ++k) {
            const double mu = stats(r, k), lv = stats(r, dz + k);
            const double dzv = ddec(r, d + k);
            const double sigma = std::exp(0.5 * lv);
            dstats(r, k) = dzv + inv * mu;
            dstats(r, dz + k) = dzv * 0.5 * sigma * xi(r, k) + inv * 0.5 * (std::exp(lv) - 1.0);
        }
    nn::backward(model.encoder, enc_tape, dstats, grads->encoder);
    return loss;
}

CvaeTrainResult train_cvae(const rl::OfflineDataset& data, const CvaeConfig& cfg, Rng& rng) {
    return train_cvae(CvaeModel::create(data.state_dim(), data.cells(), cfg, rng), data, cfg, rng);
}

CvaeTrainResult train_cvae(CvaeModel model, const rl::OfflineDataset& data, const CvaeConfig& cfg, Rng& rng) {
    cfg.validate();
    require(data.size() > 0, "train_cvae: empty dataset");
    require(model.state_dim == data.state_dim() && model.cells == data.cells(), "train_cvae: model/data mismatch");
    nn::AdamState enc_opt(model.encoder, cfg.learning_rate), dec_opt(model.decoder, cfg.learning_rate);
    CvaeModel grads = model.zeros_like();
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    CvaeTrainResult res;
    res.loss_curve.reserve(static_cast<std::size_t>(cfg.steps));
    std::vector<std::size_t> rows(cfg.batch_size);
    std::vector<int> actions(cfg.batch_size);
    std::vector<std::span<const std::uint8_t>> masks(cfg.batch_size);
    for (int step = 0; step < cfg.steps; ++step) {
        for (std::size_t k = 0; k < cfg.batch_size; ++k) {
            rows[k] = pick(rng);
            actions[k] = data.action(rows[k]);
            masks[k] = data.mask(rows[k]);
        }
        const Matrix states = data.gather_states(rows);
        grads.encoder.zero();
        grads.decoder.zero();
        const auto loss = cvae_loss_and_grads(model, states, actions, masks, rng, &grads);
        if (!std::isfinite(loss.total))
            throw NumericalError("CVAE loss became non-finite at step " + std::to_string(step) +
                                 " (reconstruction " + std::to_string(loss.reconstruction) + ", kl " +
                                 std::to_string(loss.kl) + ")");
        nn::adam_step(model.encoder, grads.encoder, enc_opt);
        nn::adam_step(model.decoder, grads.decoder, dec_opt);
        res.loss_curve.push_back(loss.total);
    }
    res.model = std::move(model);
    return res;
}

void behavior_distributions(const CvaeModel& model, const Matrix& states,
                            std::span<const std::span<const std::uint8_t>> masks, int samples, Rng& rng,
                            Matrix& out) {
    require(samples >= 1, "behavior_distributions: need at least one latent sample");
    require(states.cols == model.state_dim && masks.size() == states.rows, "behavior_distributions: shape mismatch");
    const std::size_t B = states.rows, d = model.state_dim, dz = model.latent, C = model.cells;
    const auto L = static_cast<std::size_t>(samples);
    out.resize(B, C);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix in(B * L, d + dz);
    for (std::size_t r = 0; r < B; ++r)
        for (std::size_t l = 0; l < L; ++l) {
            auto row = in.row(r * L + l);
            std::copy(states.row(r).begin(), states.row(r).end(), row.begin());
            for (std::size_t k = 0; k < dz; ++k) row[d + k] = normal(rng);
        }
    const Matrix logits = nn::forward(model.decoder, in);
    std::vector<double> probs(C);
    for (std::size_t r = 0; r < B; ++r) {
        auto dst = out.row(r);
        for (std::size_t l = 0; l < L; ++l) {
            nn::masked_softmax(logits.row(r * L + l), masks[r], probs);
            for (std::size_t c = 0; c < C; ++c) dst[c] += probs[c];
        }
        for (double& v : dst) v /= static_cast<double>(L);
    }
}

std::vector<double> behavior_distribution(const CvaeModel& model, std::span<const double> state,
                                          std::span<const std::uint8_t> mask, int samples, Rng& rng) {
    Matrix s(1, state.size());
    std::copy(state.begin(), state.end(), s.row(0).begin());
    Matrix out;
    const std::span<const std::uint8_t> masks[1] = {mask};
    behavior_distributions(model, s, masks, samples, rng, out);
    return out.data;
}

double behavior_prob(const CvaeModel& model, std::span<const double> state, std::span<const std::uint8_t> mask, int a,
                     int samples, Rng& rng) {
    require(a >= 0 && static_cast<std::size_t>(a) < mask.size() && mask[a] != 0,
            "behavior_prob: action is infeasible under the mask");
    return behavior_distribution(model, state, mask, samples, rng)[static_cast<std::size_t>(a)];
}

double tv_distance(std::span<const double> p, std::span<const double> q) {
    require(p.size() == q.size(), "tv_distance: size mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) s += std::abs(p[k] - q[k]);
    return 0.5 * s;
}

double avg_tv_distance(const Matrix& reference, const Matrix& model) {
    require(reference.rows == model.rows && reference.cols == model.cols && reference.rows > 0,
            "avg_tv_distance: shape mismatch");
    double s = 0.0;
    for (std::size_t r = 0; r < reference.rows; ++r) s += tv_distance(reference.row(r), model.row(r));
    return s / static_cast<double>(reference.rows);
}

}  // namespace dnr::bm
