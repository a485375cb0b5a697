#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "mae/data.hpp"
#include "mae/rng.hpp"
#include "mae/tensor.hpp"

namespace mae::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& v : t.data()) v = rng.uniform(-scale, scale);
    return t;
}

// Central finite differences against the analytic backward pass. The loss
// closure must re-run the forward path from the inputs' current data.
inline double grad_check(const std::vector<Tensor>& inputs, const std::function<Tensor()>& loss_fn,
                         double h = 1e-5) {
    Tensor loss = loss_fn();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (const auto& in : inputs) analytic.push_back(Tensor(in).grad());

    double worst = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        Tensor in = inputs[t];
        for (std::size_t i = 0; i < in.size(); ++i) {
            double saved = in.data()[i];
            in.data()[i] = saved + h;
            double up = loss_fn().item();
            in.data()[i] = saved - h;
            double down = loss_fn().item();
            in.data()[i] = saved;
            double numeric = (up - down) / (2.0 * h);
            double denom = std::max({std::abs(numeric), std::abs(analytic[t][i]), 1e-6});
            worst = std::max(worst, std::abs(numeric - analytic[t][i]) / denom);
        }
    }
    return worst;
}

// Small two-class corpus: horizontal vs vertical sinusoidal stripes with
// random frequency, phase, colors, and pixel noise.  The frequency range
// controls difficulty: low frequencies are smooth and easy to inpaint.
inline PackedDataset make_desk_corpus(std::size_t n, std::uint64_t seed, std::size_t img_size = 32,
                                      double freq_lo = 2.0, double freq_hi = 5.0) {
    PackedDataset ds;
    ds.height = img_size;
    ds.width = img_size;
    ds.channels = 3;
    ds.n_classes = 2;
    Rng rng = Rng(seed).fork("desk-corpus");
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t label = static_cast<std::uint32_t>(i % 2);
        Rng r = rng.fork(i);
        double freq = r.uniform(freq_lo, freq_hi);
        double phase = r.uniform(0.0, 6.283);
        double c0[3], c1[3];
        for (int c = 0; c < 3; ++c) {
            c0[c] = r.uniform(0.1, 0.9);
            c1[c] = r.uniform(0.1, 0.9);
        }
        std::vector<std::uint8_t> px(img_size * img_size * 3);
        for (std::size_t y = 0; y < img_size; ++y)
            for (std::size_t x = 0; x < img_size; ++x) {
                double axis = label == 0 ? static_cast<double>(y) : static_cast<double>(x);
                double s = 0.5 + 0.5 * std::sin(freq * axis * 6.283 / static_cast<double>(img_size) + phase);
                for (std::size_t c = 0; c < 3; ++c) {
                    double v = c0[c] * s + c1[c] * (1.0 - s) + r.uniform(-0.05, 0.05);
                    px[(y * img_size + x) * 3 + c] =
                        static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
                }
            }
        ds.labels.push_back(label);
        ds.pixels.push_back(std::move(px));
    }
    ds.compute_stats();
    return ds;
}

}  // namespace mae::testing
