#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dnr/nn/checkpoint.hpp"
#include "dnr/nn/mlp.hpp"
#include "dnr/rl/offline_dataset.hpp"

namespace dnr::bm {

using nn::Matrix;
using nn::Mlp;
using nn::Rng;

struct CvaeConfig {
    std::size_t hidden = 1400;
    std::size_t hidden_layers = 2;
    std::size_t latent = 20;
    double learning_rate = 1e-4;
    std::size_t batch_size = 64;
    int steps = 6000;
    int samples = 10;            // L, latent draws when marginalising the decoder
    double prob_floor = 1e-8;    // applied before logarithms

    void validate() const;
    nlohmann::json to_json() const;
    static CvaeConfig from_json(const nlohmann::json& j);
};

/// Encoder c(z | s, a): [s, onehot(a)] -> [mu, log sigma^2].
/// Decoder g(a | s, z): [s, z] -> m*m logits, masked softmax on top.
struct CvaeModel {
    std::size_t state_dim = 0;
    std::size_t cells = 0;
    std::size_t latent = 0;
    Mlp encoder;
    Mlp decoder;

    static CvaeModel create(std::size_t state_dim, std::size_t cells, const CvaeConfig& cfg, Rng& rng);
    CvaeModel zeros_like() const;

    nn::Checkpoint to_checkpoint(const nlohmann::json& meta = nlohmann::json::object()) const;
    static CvaeModel from_checkpoint(const nn::Checkpoint& ckpt);
};

struct CvaeLoss {
    double total = 0.0;  // mean over the batch of reconstruction + kl
    double reconstruction = 0.0;
    double kl = 0.0;
};

/// KL(N(mu, diag exp(logvar)) || N(0, I)).
double gaussian_kl(std::span<const double> mu, std::span<const double> logvar);

/// Negative ELBO averaged over the batch with one reparameterised draw per row.
/// `noise` (batch x latent) fixes the draws; empty means sample from rng.
/// Gradients are accumulated into `grads` when non-null.
/// Throws ContractViolation when an action is infeasible under its mask.
CvaeLoss cvae_loss_and_grads(const CvaeModel& model, const Matrix& states, std::span<const int> actions,
                             std::span<const std::span<const std::uint8_t>> masks, Rng& rng,
                             CvaeModel* grads, const Matrix* noise = nullptr);

struct CvaeTrainResult {
    CvaeModel model;
    std::vector<double> loss_curve;  // per-step negative ELBO
};

/// Adam on the negative ELBO over uniformly sampled minibatches.
/// Throws NumericalError on a non-finite loss.
CvaeTrainResult train_cvae(const rl::OfflineDataset& data, const CvaeConfig& cfg, Rng& rng);
/// Continues from an existing model (e.g. to train on a toy batch).
CvaeTrainResult train_cvae(CvaeModel model, const rl::OfflineDataset& data, const CvaeConfig& cfg, Rng& rng);

/// (1/L) sum_l g(. | s, z_l), z_l ~ N(0, I); masked-out cells are exactly 0.
std::vector<double> behavior_distribution(const CvaeModel& model, std::span<const double> state,
                                          std::span<const std::uint8_t> mask, int samples, Rng& rng);
/// Same, for many states at once; row k of `out` is the distribution of row k of `states`.
void behavior_distributions(const CvaeModel& model, const Matrix& states,
                            std::span<const std::span<const std::uint8_t>> masks, int samples, Rng& rng,
                            Matrix& out);
/// Monte Carlo estimate of g(a | s); unfloored.
double behavior_prob(const CvaeModel& model, std::span<const double> state, std::span<const std::uint8_t> mask,
                     int a, int samples, Rng& rng);

/// 1/2 sum |p - q|.
double tv_distance(std::span<const double> p, std::span<const double> q);
/// Mean TV distance over paired rows.
double avg_tv_distance(const Matrix& reference, const Matrix& model);

}  // namespace dnr::bm
