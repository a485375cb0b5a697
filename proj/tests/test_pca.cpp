#include <cmath>

#include "doctest.h"
#include "mae/pca.hpp"
#include "test_support.hpp"

using namespace mae;
using mae::testing::random_tensor;

namespace {

// power iteration with deflation: an independent oracle for the top components
struct PowerResult {
    std::vector<std::vector<double>> comps;
    std::vector<double> eigenvalues;
};

PowerResult power_iteration_pca(const Tensor& patches, std::size_t k) {
    std::size_t m = patches.shape()[0], d = patches.shape()[1];
    std::vector<double> mean(d, 0.0);
    const double* x = patches.data().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += x[i * d + j];
    for (auto& v : mean) v /= static_cast<double>(m);
    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b)
                cov[a * d + b] += (x[i * d + a] - mean[a]) * (x[i * d + b] - mean[b]);
    for (auto& v : cov) v /= static_cast<double>(m);

    PowerResult res;
    Rng rng(12345);
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<double> v(d);
        for (auto& e : v) e = rng.uniform(-1.0, 1.0);
        double lambda = 0.0;
        for (int it = 0; it < 5000; ++it) {
            std::vector<double> w(d, 0.0);
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = 0; b < d; ++b) w[a] += cov[a * d + b] * v[b];
            double norm = 0.0;
            for (double e : w) norm += e * e;
            norm = std::sqrt(norm);
            for (auto& e : w) e /= norm;
            lambda = norm;
            double delta = 0.0;
            for (std::size_t j = 0; j < d; ++j) delta = std::max(delta, std::abs(w[j] - v[j]));
            v = w;
            if (delta < 1e-13) break;
        }
        res.comps.push_back(v);
        res.eigenvalues.push_back(lambda);
        // deflate
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) cov[a * d + b] -= lambda * v[a] * v[b];
    }
    return res;
}

}  // namespace

TEST_CASE("pca basis is orthonormal with sorted eigenvalues") {
    Rng rng(1);
    Tensor patches = random_tensor({200, 12}, rng, false);
    PcaBasis basis = pca_fit(patches, 6);
    REQUIRE(basis.comps.size() == 6);
    for (std::size_t a = 0; a < 6; ++a)
        for (std::size_t b = 0; b < 6; ++b) {
            double dot = 0.0;
            for (std::size_t j = 0; j < 12; ++j) dot += basis.comps[a][j] * basis.comps[b][j];
            CHECK(dot == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-9));
        }
    for (std::size_t c = 1; c < 6; ++c) CHECK(basis.eigenvalues[c - 1] >= basis.eigenvalues[c] - 1e-12);
}

TEST_CASE("pca matches a power-iteration oracle up to sign") {
    Rng rng(2);
    // anisotropic data so the spectrum is well separated
    Tensor patches = Tensor::zeros({300, 10});
    for (std::size_t i = 0; i < 300; ++i)
        for (std::size_t j = 0; j < 10; ++j)
            patches.data()[i * 10 + j] = rng.uniform(-1.0, 1.0) * std::pow(0.7, static_cast<double>(j)) +
                                         0.3 * static_cast<double>(j);
    PcaBasis basis = pca_fit(patches, 3);
    PowerResult oracle = power_iteration_pca(patches, 3);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(basis.eigenvalues[c] == doctest::Approx(oracle.eigenvalues[c]).epsilon(1e-6));
        double dot = 0.0;
        for (std::size_t j = 0; j < 10; ++j) dot += basis.comps[c][j] * oracle.comps[c][j];
        CHECK(std::abs(dot) == doctest::Approx(1.0).epsilon(1e-4));  // aligned up to sign
    }
}

TEST_CASE("full-rank pca reconstructs exactly") {
    Rng rng(3);
    Tensor patches = random_tensor({64, 8}, rng, false);
    PcaBasis basis = pca_fit(patches, 8);
    for (std::size_t i = 0; i < 64; ++i) {
        auto coeffs = pca_project_row(basis, patches.data().data() + i * 8);
        auto back = pca_reconstruct_row(basis, coeffs);
        for (std::size_t j = 0; j < 8; ++j)
            CHECK(back[j] == doctest::Approx(patches.data()[i * 8 + j]).epsilon(1e-9));
    }
}

TEST_CASE("truncated pca is the best low-rank fit in its span") {
    Rng rng(4);
    // data concentrated in a 2-d subspace plus small noise
    Tensor patches = Tensor::zeros({150, 6});
    for (std::size_t i = 0; i < 150; ++i) {
        double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-1.0, 1.0);
        for (std::size_t j = 0; j < 6; ++j)
            patches.data()[i * 6 + j] = a * std::sin(static_cast<double>(j)) +
                                        b * std::cos(static_cast<double>(2 * j)) +
                                        rng.uniform(-0.01, 0.01);
    }
    PcaBasis basis = pca_fit(patches, 2);
    double total_err = 0.0;
    for (std::size_t i = 0; i < 150; ++i) {
        auto coeffs = pca_project_row(basis, patches.data().data() + i * 6);
        auto back = pca_reconstruct_row(basis, coeffs);
        for (std::size_t j = 0; j < 6; ++j) {
            double e = back[j] - patches.data()[i * 6 + j];
            total_err += e * e;
        }
    }
    CHECK(total_err / 150.0 < 1e-3);  // only the injected noise remains
}

TEST_CASE("pca_fit input validation") {
    Rng rng(5);
    Tensor patches = random_tensor({10, 4}, rng, false);
    CHECK_THROWS_AS(pca_fit(patches, 5), std::invalid_argument);   // k > d
    CHECK_THROWS_AS(pca_fit(patches, 10), std::invalid_argument);  // m <= k
    CHECK_THROWS_AS(pca_fit(random_tensor({4}, rng, false), 2), std::invalid_argument);
}
