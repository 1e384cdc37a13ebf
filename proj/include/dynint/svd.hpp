#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dynint/matrix.hpp"

namespace dynint {

// Singular values by one-sided Jacobi: rotate column pairs of a working copy
// until all pairs are orthogonal; the column norms are the singular values.
inline std::vector<double> singular_values(const DenseMatrix& a, double tol = 1e-14,
                                           std::size_t max_sweeps = 60) {
    DenseMatrix w = a;
    const std::size_t n = w.cols(), m = w.rows();
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        bool converged = true;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    app += w(i, p) * w(i, p);
                    aqq += w(i, q) * w(i, q);
                    apq += w(i, p) * w(i, q);
                }
                if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
                converged = false;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double vip = w(i, p), viq = w(i, q);
                    w(i, p) = c * vip - s * viq;
                    w(i, q) = s * vip + c * viq;
                }
            }
        }
        if (converged) break;
    }
    std::vector<double> sv(n);
    for (std::size_t j = 0; j < n; ++j) {
        double norm2 = 0.0;
        for (std::size_t i = 0; i < m; ++i) norm2 += w(i, j) * w(i, j);
        sv[j] = std::sqrt(norm2);
    }
    std::sort(sv.begin(), sv.end(), std::greater<double>());
    return sv;
}

// Cyclic Jacobi eigensolver for symmetric matrices. Independent reference
// route: singular values of W are the square roots of eig(W^T W).
inline std::vector<double> symmetric_eigenvalues(DenseMatrix a, double tol = 1e-14,
                                                 std::size_t max_sweeps = 60) {
    const std::size_t n = a.rows();
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off <= tol) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a(p, q) == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(i, q) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a(p, i), aqi = a(q, i);
                    a(p, i) = c * api - s * aqi;
                    a(q, i) = s * api + c * aqi;
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
    std::sort(eig.begin(), eig.end(), std::greater<double>());
    return eig;
}

}  // namespace dynint
