#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "mae/common.hpp"
#include "mae/rng.hpp"

namespace mae {

// One masking decision: shuffle/truncate/unshuffle bookkeeping for an image.
// The first len_keep entries of ids_shuffle are the visible patches.
struct MaskPlan {
    std::size_t n = 0;
    std::size_t len_keep = 0;
    std::vector<std::size_t> ids_shuffle;
    std::vector<std::size_t> ids_restore;
    std::vector<std::uint8_t> mask;  // 1 = masked, 0 = visible

    std::vector<std::size_t> visible_ids() const {
        return {ids_shuffle.begin(), ids_shuffle.begin() + static_cast<std::ptrdiff_t>(len_keep)};
    }

    void finish() {
        ids_restore.assign(n, 0);
        for (std::size_t i = 0; i < n; ++i) ids_restore[ids_shuffle[i]] = i;
        mask.assign(n, 1);
        for (std::size_t i = 0; i < len_keep; ++i) mask[ids_shuffle[i]] = 0;
    }
};

inline std::size_t keep_count(std::size_t n, double ratio) {
    auto keep = static_cast<std::size_t>(std::floor(static_cast<double>(n) * (1.0 - ratio)));
    return std::max<std::size_t>(keep, 1);
}

// uniform sampling without replacement via argsort of i.i.d. noise
inline MaskPlan random_mask_plan(std::size_t n, double ratio, Rng& rng) {
    MAE_CHECK(n >= 1, "random_mask_plan: need at least one patch");
    MAE_CHECK(ratio >= 0.0 && ratio < 1.0, "random_mask_plan: ratio " << ratio << " outside [0,1)");
    MaskPlan plan;
    plan.n = n;
    plan.len_keep = keep_count(n, ratio);
    std::vector<double> noise(n);
    for (auto& v : noise) v = rng.uniform();
    plan.ids_shuffle.resize(n);
    std::iota(plan.ids_shuffle.begin(), plan.ids_shuffle.end(), 0);
    std::stable_sort(plan.ids_shuffle.begin(), plan.ids_shuffle.end(),
                     [&noise](std::size_t a, std::size_t b) { return noise[a] < noise[b]; });
    plan.finish();
    return plan;
}

// deterministic plan keeping one of every four patches (even row, even column)
inline MaskPlan grid_mask_plan(std::size_t grid_side) {
    MAE_CHECK(grid_side >= 2 && grid_side % 2 == 0,
              "grid_mask_plan: grid side " << grid_side << " must be even");
    std::size_t n = grid_side * grid_side;
    MaskPlan plan;
    plan.n = n;
    plan.len_keep = n / 4;
    std::vector<std::size_t> kept, removed;
    for (std::size_t r = 0; r < grid_side; ++r)
        for (std::size_t c = 0; c < grid_side; ++c)
            (r % 2 == 0 && c % 2 == 0 ? kept : removed).push_back(r * grid_side + c);
    plan.ids_shuffle = kept;
    plan.ids_shuffle.insert(plan.ids_shuffle.end(), removed.begin(), removed.end());
    plan.finish();
    return plan;
}

// Block-wise sampling: masks a union of random rectangles (area >= 16 patches
// when the grid permits, aspect ratio in [0.3, 1/0.3]) until the target count
// is reached. Final mask count lands in [round(n*r), round(n*r) + grid_side].
inline MaskPlan block_mask_plan(std::size_t grid_side, double ratio, Rng& rng) {
    MAE_CHECK(ratio > 0.0 && ratio < 1.0, "block_mask_plan: ratio " << ratio << " outside (0,1)");
    std::size_t n = grid_side * grid_side;
    auto target = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratio));
    MAE_CHECK(target >= 1 && target < n, "block_mask_plan: degenerate target for ratio " << ratio);
    std::size_t min_area = std::min<std::size_t>(16, n);

    std::vector<std::uint8_t> masked(n, 0);
    std::size_t count = 0;
    std::size_t attempts = 0;
    const std::size_t max_attempts = 10 * n;
    const double log_lo = std::log(0.3), log_hi = std::log(1.0 / 0.3);
    while (count < target) {
        if (++attempts > max_attempts)
            throw std::invalid_argument("block_mask_plan: could not reach target mask count "
                                        "(degenerate geometry)");
        std::size_t remaining = target - count;
        std::size_t area_hi = std::max(min_area, remaining);
        std::size_t area = min_area + static_cast<std::size_t>(rng.uniform() *
                                                               static_cast<double>(area_hi - min_area + 1));
        area = std::min(area, area_hi);
        double aspect = std::exp(rng.uniform(log_lo, log_hi));
        auto bh = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(area) * aspect)));
        auto bw = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(area) / aspect)));
        if (bh < 1 || bw < 1 || bh > grid_side || bw > grid_side) continue;
        std::size_t top = rng.uniform_index(grid_side - bh + 1);
        std::size_t left = rng.uniform_index(grid_side - bw + 1);
        std::size_t fresh = 0;
        for (std::size_t r = top; r < top + bh; ++r)
            for (std::size_t c = left; c < left + bw; ++c)
                if (!masked[r * grid_side + c]) ++fresh;
        if (fresh == 0) continue;
        if (count + fresh > target + grid_side) continue;  // keep the overshoot bound
        for (std::size_t r = top; r < top + bh; ++r)
            for (std::size_t c = left; c < left + bw; ++c) {
                std::size_t idx = r * grid_side + c;
                if (!masked[idx]) {
                    masked[idx] = 1;
                    ++count;
                }
            }
    }

    MaskPlan plan;
    plan.n = n;
    plan.len_keep = n - count;
    std::vector<std::size_t> visible, hidden;
    for (std::size_t i = 0; i < n; ++i) (masked[i] ? hidden : visible).push_back(i);
    auto shuffle_group = [&rng](std::vector<std::size_t>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[rng.uniform_index(i)]);
    };
    shuffle_group(visible);
    shuffle_group(hidden);
    plan.ids_shuffle = visible;
    plan.ids_shuffle.insert(plan.ids_shuffle.end(), hidden.begin(), hidden.end());
    plan.finish();
    return plan;
}

enum class Sampling { random, block, grid };

inline MaskPlan make_mask_plan(Sampling sampling, std::size_t grid_side, double ratio, Rng& rng) {
    switch (sampling) {
        case Sampling::random:
            return random_mask_plan(grid_side * grid_side, ratio, rng);
        case Sampling::block:
            return block_mask_plan(grid_side, ratio, rng);
        case Sampling::grid:
            return grid_mask_plan(grid_side);
    }
    throw std::invalid_argument("unknown sampling strategy");
}

}  // namespace mae
