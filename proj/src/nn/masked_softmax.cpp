#include "dnr/nn/masked_softmax.hpp"

#include <cmath>
#include <limits>

#include "dnr/error.hpp"

namespace dnr::nn {

namespace {

double masked_max(std::span<const double> logits, std::span<const std::uint8_t> mask) {
    require(logits.size() == mask.size(), "masked softmax: logits and mask differ in size");
    double hi = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        if (!mask[k]) continue;
        any = true;
        hi = std::max(hi, logits[k]);
    }
    require(any, "masked softmax: mask has no feasible cell");
    return hi;
}

}  // namespace

void masked_softmax(std::span<const double> logits, std::span<const std::uint8_t> mask,
                    std::span<double> out) {
    require(out.size() == logits.size(), "masked softmax: output size mismatch");
    const double hi = masked_max(logits, mask);
    double z = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        out[k] = mask[k] ? std::exp(logits[k] - hi) : 0.0;
        z += out[k];
    }
    for (double& p : out) p /= z;
}

double masked_log_prob(std::span<const double> logits, std::span<const std::uint8_t> mask,
                       std::size_t a) {
    require(a < mask.size() && mask[a], "masked_log_prob: action is masked out");
    const double hi = masked_max(logits, mask);
    double z = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k)
        if (mask[k]) z += std::exp(logits[k] - hi);
    return logits[a] - hi - std::log(z);
}

void masked_log_prob_grad(std::span<const double> probs, std::span<const std::uint8_t> mask,
                          std::size_t a, std::span<double> grad_out) {
    require(grad_out.size() == probs.size() && mask.size() == probs.size(),
            "masked_log_prob_grad: size mismatch");
    for (std::size_t k = 0; k < probs.size(); ++k) grad_out[k] = mask[k] ? -probs[k] : 0.0;
    grad_out[a] += 1.0;
}

}  // namespace dnr::nn
