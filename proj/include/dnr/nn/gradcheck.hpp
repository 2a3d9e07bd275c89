#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "dnr/nn/mlp.hpp"

namespace dnr::nn {

struct GradCheckOptions {
    double epsilon = 1e-5;
    std::size_t samples = 200;  // parameters probed per model; 0 = all
    double floor = 1e-6;        // denominator floor for the relative error
    std::uint64_t seed = 7;
};

/// Central differences of `loss` against analytic gradients, over a random
/// subset of parameters. `loss` must read the models through the pointers
/// given here (they are perturbed in place and restored).
/// Returns max |analytic - numeric| / max(|analytic|, |numeric|, floor).
double finite_diff_check(const std::function<double()>& loss,
                         const std::vector<std::pair<Mlp*, const Mlp*>>& model_and_grad,
                         const GradCheckOptions& opt = {});

double finite_diff_check(const std::function<double()>& loss, Mlp& model, const Mlp& grad,
                         const GradCheckOptions& opt = {});

}  // namespace dnr::nn
