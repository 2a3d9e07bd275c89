#pragma once

#include <span>

#include "dnr/nn/matrix.hpp"
#include "dnr/parallel.hpp"

// Dense-layer kernels. Weights are stored input-major (in x out) so the hot
// loops stream contiguous rows. `serial` holds the plain reference loops kept
// for testing; the default entry points dispatch on Exec.
namespace dnr::nn::kernels {

/// y = x * w + b   (x: B x in, w: in x out, y: B x out)
void dense_forward(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y,
                   Exec exec = Exec::Parallel);

/// dw += x^T * dy,  db += column sums of dy
void dense_backward_params(const Matrix& x, const Matrix& dy, Matrix& dw, std::span<double> db,
                           Exec exec = Exec::Parallel);

/// dx = dy * w^T
void dense_backward_input(const Matrix& dy, const Matrix& w, Matrix& dx, Exec exec = Exec::Parallel);

namespace serial {
void dense_forward(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y);
void dense_backward_params(const Matrix& x, const Matrix& dy, Matrix& dw, std::span<double> db);
void dense_backward_input(const Matrix& dy, const Matrix& w, Matrix& dx);
}  // namespace serial

}  // namespace dnr::nn::kernels
