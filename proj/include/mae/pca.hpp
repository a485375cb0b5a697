#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mae/common.hpp"
#include "mae/tensor.hpp"

namespace mae {

struct PcaBasis {
    std::vector<double> mean;                // [D]
    std::vector<std::vector<double>> comps;  // k rows, each [D], orthonormal
    std::vector<double> eigenvalues;         // explained variance, non-increasing
};

namespace detail {

// cyclic Jacobi eigensolver for a symmetric matrix (row-major, size d)
inline void jacobi_eigen(std::vector<double>& a, std::size_t d, std::vector<double>& eigvals,
                         std::vector<double>& eigvecs) {
    eigvecs.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) eigvecs[i * d + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) off += a[p * d + q] * a[p * d + q];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) {
                double apq = a[p * d + q];
                if (std::abs(apq) < 1e-18) continue;
                double app = a[p * d + p], aqq = a[q * d + q];
                double theta = (aqq - app) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::size_t i = 0; i < d; ++i) {
                    double aip = a[i * d + p], aiq = a[i * d + q];
                    a[i * d + p] = c * aip - s * aiq;
                    a[i * d + q] = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    double api = a[p * d + i], aqi = a[q * d + i];
                    a[p * d + i] = c * api - s * aqi;
                    a[q * d + i] = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    double vip = eigvecs[i * d + p], viq = eigvecs[i * d + q];
                    eigvecs[i * d + p] = c * vip - s * viq;
                    eigvecs[i * d + q] = s * vip + c * viq;
                }
            }
    }
    eigvals.resize(d);
    for (std::size_t i = 0; i < d; ++i) eigvals[i] = a[i * d + i];
}

}  // namespace detail

// mean-centered covariance eigendecomposition; top-k eigenvectors by eigenvalue
inline PcaBasis pca_fit(const Tensor& patches, std::size_t k) {
    MAE_CHECK(patches.rank() == 2, "pca_fit: expected [m, D] patches");
    std::size_t m = patches.shape()[0], d = patches.shape()[1];
    MAE_CHECK(k <= d, "pca_fit: k=" << k << " exceeds patch dimension " << d);
    MAE_CHECK(m > k, "pca_fit: need more samples (" << m << ") than components (" << k << ")");

    PcaBasis basis;
    basis.mean.assign(d, 0.0);
    const double* x = patches.data().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) basis.mean[j] += x[i * d + j];
    for (auto& v : basis.mean) v /= static_cast<double>(m);

    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t a = 0; a < d; ++a) {
            double va = x[i * d + a] - basis.mean[a];
            for (std::size_t b = a; b < d; ++b)
                cov[a * d + b] += va * (x[i * d + b] - basis.mean[b]);
        }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            cov[a * d + b] /= static_cast<double>(m);
            cov[b * d + a] = cov[a * d + b];
        }

    std::vector<double> eigvals, eigvecs;
    detail::jacobi_eigen(cov, d, eigvals, eigvecs);

    std::vector<std::size_t> order(d);
    for (std::size_t i = 0; i < d; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&eigvals](std::size_t a, std::size_t b) { return eigvals[a] > eigvals[b]; });

    basis.comps.resize(k);
    basis.eigenvalues.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        basis.eigenvalues[c] = eigvals[order[c]];
        basis.comps[c].resize(d);
        for (std::size_t j = 0; j < d; ++j) basis.comps[c][j] = eigvecs[j * d + order[c]];
    }
    return basis;
}

// (x - mean) . comps^T, row-wise on [.., D] flattened patches
inline std::vector<double> pca_project_row(const PcaBasis& basis, const double* row) {
    std::vector<double> out(basis.comps.size());
    std::size_t d = basis.mean.size();
    for (std::size_t c = 0; c < basis.comps.size(); ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += (row[j] - basis.mean[j]) * basis.comps[c][j];
        out[c] = acc;
    }
    return out;
}

inline std::vector<double> pca_reconstruct_row(const PcaBasis& basis, const std::vector<double>& coeffs) {
    std::size_t d = basis.mean.size();
    std::vector<double> out(basis.mean);
    for (std::size_t c = 0; c < basis.comps.size(); ++c)
        for (std::size_t j = 0; j < d; ++j) out[j] += coeffs[c] * basis.comps[c][j];
    return out;
}

}  // namespace mae
