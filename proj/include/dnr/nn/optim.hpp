#pragma once

#include <vector>

#include "dnr/nn/mlp.hpp"

namespace dnr::nn {

struct AdamState {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    AdamState() = default;
    AdamState(const Mlp& model, double lr);
};

/// One bias-corrected Adam descent step on `model` along `grads`.
/// Throws NumericalError (and leaves everything untouched) on a non-finite gradient.
void adam_step(Mlp& model, const Mlp& grads, AdamState& state);

}  // namespace dnr::nn
