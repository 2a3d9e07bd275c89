#include "dnr/nn/mlp.hpp"

#include <cmath>

#include "dnr/error.hpp"
#include "dnr/nn/kernels.hpp"

namespace dnr::nn {

Mlp::Mlp(const std::vector<std::size_t>& widths) {
    require(widths.size() >= 2, "an MLP needs at least input and output widths");
    for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
        require(widths[k] > 0 && widths[k + 1] > 0, "layer widths must be positive");
        DenseLayer layer;
        layer.w = Matrix(widths[k], widths[k + 1]);
        layer.b.assign(widths[k + 1], 0.0);
        layers.push_back(std::move(layer));
    }
}

Mlp Mlp::xavier(const std::vector<std::size_t>& widths, Rng& rng) {
    Mlp net(widths);
    for (auto& layer : net.layers) {
        const double bound = std::sqrt(6.0 / static_cast<double>(layer.in() + layer.out()));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (double& v : layer.w.data) v = u(rng);
    }
    return net;
}

std::vector<std::size_t> Mlp::widths_for(std::size_t in, std::size_t hidden,
                                         std::size_t hidden_layers, std::size_t out) {
    std::vector<std::size_t> w{in};
    for (std::size_t k = 0; k < hidden_layers; ++k) w.push_back(hidden);
    w.push_back(out);
    return w;
}

std::vector<std::size_t> Mlp::widths() const {
    std::vector<std::size_t> w;
    if (layers.empty()) return w;
    w.push_back(layers.front().in());
    for (const auto& l : layers) w.push_back(l.out());
    return w;
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.data.size() + l.b.size();
    return n;
}

std::vector<std::span<double>> Mlp::parameter_blocks() {
    std::vector<std::span<double>> out;
    for (auto& l : layers) {
        out.emplace_back(l.w.data);
        out.emplace_back(l.b);
    }
    return out;
}

std::vector<std::span<const double>> Mlp::parameter_blocks() const {
    std::vector<std::span<const double>> out;
    for (const auto& l : layers) {
        out.emplace_back(l.w.data);
        out.emplace_back(l.b);
    }
    return out;
}

void Mlp::zero() {
    for (auto& l : layers) {
        l.w.fill(0.0);
        std::fill(l.b.begin(), l.b.end(), 0.0);
    }
}

bool Mlp::same_shape(const Mlp& other) const { return widths() == other.widths(); }

Matrix forward(const Mlp& net, const Matrix& x, MlpTape* tape, Exec exec) {
    require(!net.layers.empty() && x.cols == net.input_dim(), "forward: input width mismatch");
    if (tape) {
        tape->inputs.resize(net.layers.size());
        tape->pre.resize(net.layers.size());
    }
    Matrix act = x;
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        const auto& layer = net.layers[k];
        Matrix y(act.rows, layer.out());
        kernels::dense_forward(act, layer.w, layer.b, y, exec);
        const bool hidden = k + 1 < net.layers.size();
        if (tape) {
            tape->inputs[k] = std::move(act);
            tape->pre[k] = y;
        }
        if (hidden)
            for (double& v : y.data) v = v > 0.0 ? v : 0.0;
        act = std::move(y);
    }
    return act;
}

Matrix backward(const Mlp& net, const MlpTape& tape, const Matrix& dy, Mlp& grads, Exec exec) {
    require(grads.same_shape(net), "backward: gradient buffer shape mismatch");
    require(tape.inputs.size() == net.layers.size(), "backward: tape does not match network");
    Matrix delta = dy;
    for (std::size_t k = net.layers.size(); k-- > 0;) {
        const auto& layer = net.layers[k];
        if (k + 1 < net.layers.size()) {
            const auto& pre = tape.pre[k];
            for (std::size_t e = 0; e < delta.data.size(); ++e)
                if (pre.data[e] <= 0.0) delta.data[e] = 0.0;
        }
        kernels::dense_backward_params(tape.inputs[k], delta, grads.layers[k].w, grads.layers[k].b, exec);
        Matrix dx(delta.rows, layer.in());
        kernels::dense_backward_input(delta, layer.w, dx, exec);
        delta = std::move(dx);
    }
    return delta;
}

void polyak_update(Mlp& target, const Mlp& source, double rho) {
    require(target.same_shape(source), "polyak_update: shape mismatch");
    auto t = target.parameter_blocks();
    auto s = source.parameter_blocks();
    for (std::size_t b = 0; b < t.size(); ++b)
        for (std::size_t k = 0; k < t[b].size(); ++k) t[b][k] = rho * t[b][k] + (1.0 - rho) * s[b][k];
}

}  // namespace dnr::nn
