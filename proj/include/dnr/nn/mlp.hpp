#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dnr/nn/matrix.hpp"
#include "dnr/parallel.hpp"

namespace dnr::nn {

using Rng = std::mt19937_64;

struct DenseLayer {
    Matrix w;               // in x out
    std::vector<double> b;  // out

    std::size_t in() const { return w.rows; }
    std::size_t out() const { return w.cols; }
    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Feedforward network: ReLU on hidden layers, linear output layer.
/// A gradient buffer is an Mlp of identical shape.
class Mlp {
public:
    Mlp() = default;
    /// Zero-initialised network with the given width chain (input, hidden..., output).
    explicit Mlp(const std::vector<std::size_t>& widths);

    /// Xavier-uniform weights, zero biases.
    static Mlp xavier(const std::vector<std::size_t>& widths, Rng& rng);
    static std::vector<std::size_t> widths_for(std::size_t in, std::size_t hidden,
                                               std::size_t hidden_layers, std::size_t out);

    std::size_t input_dim() const { return layers.front().in(); }
    std::size_t output_dim() const { return layers.back().out(); }
    std::vector<std::size_t> widths() const;
    std::size_t parameter_count() const;

    /// Contiguous parameter blocks in a fixed order (w0, b0, w1, b1, ...).
    std::vector<std::span<double>> parameter_blocks();
    std::vector<std::span<const double>> parameter_blocks() const;

    void zero();
    bool same_shape(const Mlp& other) const;

    std::vector<DenseLayer> layers;

    friend bool operator==(const Mlp&, const Mlp&) = default;
};

/// Activations saved by forward() for backward().
struct MlpTape {
    std::vector<Matrix> inputs;  // input of each layer (post-activation of the previous one)
    std::vector<Matrix> pre;     // pre-activation output of each layer
};

/// Batched forward pass; x is batch x input_dim. Records a tape if given.
Matrix forward(const Mlp& net, const Matrix& x, MlpTape* tape = nullptr,
               Exec exec = Exec::Parallel);

/// Accumulates parameter gradients into `grads` and returns d loss / d x.
Matrix backward(const Mlp& net, const MlpTape& tape, const Matrix& dy, Mlp& grads,
                Exec exec = Exec::Parallel);

/// Polyak averaging: target <- rho * target + (1 - rho) * source.
void polyak_update(Mlp& target, const Mlp& source, double rho);

}  // namespace dnr::nn
