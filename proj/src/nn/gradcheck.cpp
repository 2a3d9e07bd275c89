#include "dnr/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dnr/error.hpp"

namespace dnr::nn {

double finite_diff_check(const std::function<double()>& loss,
                         const std::vector<std::pair<Mlp*, const Mlp*>>& model_and_grad,
                         const GradCheckOptions& opt) {
    Rng rng(opt.seed);
    double worst = 0.0;
    for (auto [model, grad] : model_and_grad) {
        require(model->same_shape(*grad), "finite_diff_check: gradient shape mismatch");
        auto params = model->parameter_blocks();
        const auto g = grad->parameter_blocks();
        std::vector<std::pair<std::size_t, std::size_t>> index;
        for (std::size_t b = 0; b < params.size(); ++b)
            for (std::size_t k = 0; k < params[b].size(); ++k) index.emplace_back(b, k);
        std::shuffle(index.begin(), index.end(), rng);
        if (opt.samples > 0 && index.size() > opt.samples) index.resize(opt.samples);

        for (auto [b, k] : index) {
            double& p = params[b][k];
            const double saved = p;
            p = saved + opt.epsilon;
            const double up = loss();
            p = saved - opt.epsilon;
            const double down = loss();
            p = saved;
            const double numeric = (up - down) / (2.0 * opt.epsilon);
            const double analytic = g[b][k];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.floor});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
    }
    return worst;
}

double finite_diff_check(const std::function<double()>& loss, Mlp& model, const Mlp& grad,
                         const GradCheckOptions& opt) {
    return finite_diff_check(loss, {{&model, &grad}}, opt);
}

}  // namespace dnr::nn
