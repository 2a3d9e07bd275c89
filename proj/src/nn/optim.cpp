#include "dnr/nn/optim.hpp"

#include <cmath>

#include "dnr/error.hpp"

namespace dnr::nn {

AdamState::AdamState(const Mlp& model, double lr) : learning_rate(lr) {
    for (auto block : model.parameter_blocks()) {
        m.emplace_back(block.size(), 0.0);
        v.emplace_back(block.size(), 0.0);
    }
}

void adam_step(Mlp& model, const Mlp& grads, AdamState& state) {
    require(model.same_shape(grads), "adam_step: gradient shape mismatch");
    auto params = model.parameter_blocks();
    const auto g = grads.parameter_blocks();
    require(state.m.size() == params.size(), "adam_step: optimizer state does not match model");
    for (std::size_t b = 0; b < g.size(); ++b) {
        require(state.m[b].size() == g[b].size(), "adam_step: optimizer state does not match model");
        for (double x : g[b])
            if (!std::isfinite(x))
                throw NumericalError("adam_step: non-finite gradient in parameter block " +
                                     std::to_string(b) + "; update rejected");
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto& m = state.m[b];
        auto& v = state.v[b];
        for (std::size_t k = 0; k < params[b].size(); ++k) {
            const double gk = g[b][k];
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
            params[b][k] -= state.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.epsilon);
        }
    }
}

}  // namespace dnr::nn
