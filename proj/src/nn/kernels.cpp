#include "dnr/nn/kernels.hpp"

#include <cstddef>

#include "dnr/error.hpp"

namespace dnr::nn::kernels {

namespace {

// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

void check_forward(const Matrix& x, const Matrix& w, std::span<const double> b, const Matrix& y) {
    require(x.cols == w.rows && b.size() == w.cols && y.rows == x.rows && y.cols == w.cols,
            "dense_forward: shape mismatch");
}

void check_params(const Matrix& x, const Matrix& dy, const Matrix& dw, std::span<double> db) {
    require(x.rows == dy.rows && dw.rows == x.cols && dw.cols == dy.cols && db.size() == dy.cols,
            "dense_backward_params: shape mismatch");
}

void check_input(const Matrix& dy, const Matrix& w, const Matrix& dx) {
    require(dy.cols == w.cols && dx.rows == dy.rows && dx.cols == w.rows,
            "dense_backward_input: shape mismatch");
}

// Summation order matches the serial reference so both paths agree bit for bit.
inline double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
    return s;
}

}  // namespace

void dense_forward(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y, Exec exec) {
    if (exec == Exec::Serial) return serial::dense_forward(x, w, b, y);
    check_forward(x, w, b, y);
    const std::size_t in = w.rows, out = w.cols;
    const auto rows = static_cast<std::ptrdiff_t>(x.rows);
#pragma omp parallel for schedule(static) if (x.rows * in * out > kParallelWork)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        double* __restrict yr = y.data.data() + static_cast<std::size_t>(r) * out;
        const double* xr = x.data.data() + static_cast<std::size_t>(r) * in;
        for (std::size_t o = 0; o < out; ++o) yr[o] = b[o];
        for (std::size_t k = 0; k < in; ++k) {
            const double xv = xr[k];
            if (xv == 0.0) continue;  // one-hot inputs and ReLU zeros
            const double* __restrict wk = w.data.data() + k * out;
            for (std::size_t o = 0; o < out; ++o) yr[o] += xv * wk[o];
        }
    }
}

void dense_backward_params(const Matrix& x, const Matrix& dy, Matrix& dw, std::span<double> db,
                           Exec exec) {
    if (exec == Exec::Serial) return serial::dense_backward_params(x, dy, dw, db);
    check_params(x, dy, dw, db);
    const std::size_t in = x.cols, out = dy.cols, batch = x.rows;
    const auto ins = static_cast<std::ptrdiff_t>(in);
#pragma omp parallel for schedule(static) if (batch * in * out > kParallelWork)
    for (std::ptrdiff_t k = 0; k < ins; ++k) {
        double* __restrict dwk = dw.data.data() + static_cast<std::size_t>(k) * out;
        for (std::size_t r = 0; r < batch; ++r) {
            const double xv = x.data[r * in + static_cast<std::size_t>(k)];
            if (xv == 0.0) continue;
            const double* __restrict dyr = dy.data.data() + r * out;
            for (std::size_t o = 0; o < out; ++o) dwk[o] += xv * dyr[o];
        }
    }
    for (std::size_t r = 0; r < batch; ++r) {
        const double* dyr = dy.data.data() + r * out;
        for (std::size_t o = 0; o < out; ++o) db[o] += dyr[o];
    }
}

void dense_backward_input(const Matrix& dy, const Matrix& w, Matrix& dx, Exec exec) {
    if (exec == Exec::Serial) return serial::dense_backward_input(dy, w, dx);
    check_input(dy, w, dx);
    const std::size_t in = w.rows, out = w.cols;
    const auto rows = static_cast<std::ptrdiff_t>(dy.rows);
#pragma omp parallel for schedule(static) if (dy.rows * in * out > kParallelWork)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        const double* dyr = dy.data.data() + static_cast<std::size_t>(r) * out;
        double* dxr = dx.data.data() + static_cast<std::size_t>(r) * in;
        for (std::size_t k = 0; k < in; ++k) dxr[k] = dot(dyr, w.data.data() + k * out, out);
    }
}

namespace serial {

void dense_forward(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y) {
    check_forward(x, w, b, y);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t o = 0; o < w.cols; ++o) {
            double acc = b[o];
            for (std::size_t k = 0; k < w.rows; ++k) acc += x(r, k) * w(k, o);
            y(r, o) = acc;
        }
}

void dense_backward_params(const Matrix& x, const Matrix& dy, Matrix& dw, std::span<double> db) {
    check_params(x, dy, dw, db);
    for (std::size_t k = 0; k < dw.rows; ++k)
        for (std::size_t o = 0; o < dw.cols; ++o) {
            double acc = 0.0;
            for (std::size_t r = 0; r < x.rows; ++r) acc += x(r, k) * dy(r, o);
            dw(k, o) += acc;
        }
    for (std::size_t o = 0; o < dy.cols; ++o) {
        double acc = 0.0;
        for (std::size_t r = 0; r < dy.rows; ++r) acc += dy(r, o);
        db[o] += acc;
    }
}

void dense_backward_input(const Matrix& dy, const Matrix& w, Matrix& dx) {
    check_input(dy, w, dx);
    for (std::size_t r = 0; r < dy.rows; ++r)
        for (std::size_t k = 0; k < w.rows; ++k) {
            double acc = 0.0;
            for (std::size_t o = 0; o < w.cols; ++o) acc += dy(r, o) * w(k, o);
            dx(r, k) = acc;
        }
}

}  // namespace serial

}  // namespace dnr::nn::kernels
