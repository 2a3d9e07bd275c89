#pragma once

#include <cstdint>
#include <span>

namespace dnr::nn {

/// pi_k = exp(h_k) M_k / sum_l exp(h_l) M_l, evaluated with the max masked
/// logit subtracted. Masked-out cells are exactly 0. Throws ContractViolation
/// on an all-zero mask.
void masked_softmax(std::span<const double> logits, std::span<const std::uint8_t> mask,
                    std::span<double> out);

/// log pi_a for a feasible cell a, computed stably from the logits.
double masked_log_prob(std::span<const double> logits, std::span<const std::uint8_t> mask,
                       std::size_t a);

/// d log pi_a / d h = onehot(a) - pi on feasible cells, 0 on masked-out cells.
void masked_log_prob_grad(std::span<const double> probs, std::span<const std::uint8_t> mask,
                          std::size_t a, std::span<double> grad_out);

}  // namespace dnr::nn
