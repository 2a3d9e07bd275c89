#pragma once

// Newton-Raphson on the full bus admittance matrix in polar coordinates. Shares no
// code with the sweep: it builds Ybus from the closed branches and solves the nodal
// power equations with substations as slack buses.

#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "dnr/grid/network.hpp"
#include "dnr/topology/topology.hpp"

namespace oracle {

struct NodalSolution {
    std::vector<std::complex<double>> voltage;
    double losses = 0.0;  // real part of the total complex injection, p.u.
    bool converged = false;
};

inline NodalSolution newton_nodal(const dnr::grid::Network& net, const dnr::topo::Configuration& config,
                                  const std::vector<double>& p, const std::vector<double>& q, double tol = 1e-12,
                                  int max_iterations = 50) {
    using C = std::complex<double>;
    const int n = static_cast<int>(net.bus_count());
    Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(n, n);
    for (const auto& br : net.branches()) {
        if (!config.closed(br.id)) continue;
        const C y = 1.0 / C(br.r_pu, br.x_pu);
        Y(br.from, br.from) += y;
        Y(br.to, br.to) += y;
        Y(br.from, br.to) -= y;
        Y(br.to, br.from) -= y;
    }
    std::vector<int> pq;
    for (int i = 0; i < n; ++i)
        if (!net.is_substation(i)) pq.push_back(i);
    const int k = static_cast<int>(pq.size());

    std::vector<double> vm(n, 1.0), va(n, 0.0);
    NodalSolution sol;
    auto voltages = [&] {
        Eigen::VectorXcd v(n);
        for (int i = 0; i < n; ++i) v(i) = std::polar(vm[i], va[i]);
        return v;
    };
    for (int it = 0; it < max_iterations; ++it) {
        const Eigen::VectorXcd v = voltages();
        const Eigen::VectorXcd s = v.cwiseProduct((Y * v).conjugate());
        Eigen::VectorXd f(2 * k);
        for (int a = 0; a < k; ++a) {
            f(a) = s(pq[a]).real() - p[pq[a]];
            f(k + a) = s(pq[a]).imag() - q[pq[a]];
        }
        if (f.cwiseAbs().maxCoeff() < tol) {
            sol.converged = true;
            break;
        }
        // Jacobian of (P, Q) w.r.t. (theta, |V|) at the PQ buses.
        Eigen::MatrixXd J(2 * k, 2 * k);
        for (int a = 0; a < k; ++a) {
            const int i = pq[a];
            for (int b = 0; b < k; ++b) {
                const int j = pq[b];
                const double g = Y(i, j).real(), bb = Y(i, j).imag();
                const double th = va[i] - va[j];
                if (i != j) {
                    J(a, b) = vm[i] * vm[j] * (g * std::sin(th) - bb * std::cos(th));
                    J(a, k + b) = vm[i] * (g * std::cos(th) + bb * std::sin(th));
                    J(k + a, b) = -vm[i] * vm[j] * (g * std::cos(th) + bb * std::sin(th));
                    J(k + a, k + b) = vm[i] * (g * std::sin(th) - bb * std::cos(th));
                } else {
                    const double gii = g, bii = bb;
                    const double P = s(i).real(), Q = s(i).imag();
                    J(a, b) = -Q - bii * vm[i] * vm[i];
                    J(a, k + b) = P / vm[i] + gii * vm[i];
                    J(k + a, b) = P - gii * vm[i] * vm[i];
                    J(k + a, k + b) = Q / vm[i] - bii * vm[i];
                }
            }
        }
        const Eigen::VectorXd dx = J.fullPivLu().solve(-f);
        for (int a = 0; a < k; ++a) {
            va[pq[a]] += dx(a);
            vm[pq[a]] += dx(k + a);
        }
    }
    const Eigen::VectorXcd v = voltages();
    const Eigen::VectorXcd s = v.cwiseProduct((Y * v).conjugate());
    sol.voltage.assign(v.data(), v.data() + n);
    sol.losses = s.sum().real();
    return sol;
}

}  // namespace oracle
