#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mae/common.hpp"
#include "mae/rng.hpp"
#include "mae/tensor.hpp"

namespace mae {

// On-disk corpus: magic "MAEDS1", u32 {count, height, width, channels,
// n_classes}, then count records of {label u32, pixels H*W*C bytes}.
struct PackedDataset {
    std::size_t height = 0, width = 0, channels = 0, n_classes = 0;
    std::vector<std::uint32_t> labels;
    std::vector<std::vector<std::uint8_t>> pixels;  // row-major RGB, 0-255

    // per-channel standardization constants (sidecar metadata)
    std::vector<double> channel_mean, channel_std;

    std::size_t size() const { return labels.size(); }

    void compute_stats() {
        channel_mean.assign(channels, 0.0);
        channel_std.assign(channels, 0.0);
        std::size_t per_channel = size() * height * width;
        if (per_channel == 0) {
            channel_mean.assign(channels, 0.5);
            channel_std.assign(channels, 0.25);
            return;
        }
        for (const auto& img : pixels)
            for (std::size_t i = 0; i < img.size(); ++i)
                channel_mean[i % channels] += img[i] / 255.0;
        for (auto& v : channel_mean) v /= static_cast<double>(per_channel);
        for (const auto& img : pixels)
            for (std::size_t i = 0; i < img.size(); ++i) {
                double d = img[i] / 255.0 - channel_mean[i % channels];
                channel_std[i % channels] += d * d;
            }
        for (auto& v : channel_std) v = std::max(std::sqrt(v / static_cast<double>(per_channel)), 1e-6);
    }
};

namespace detail {

inline std::uint32_t read_ds_u32(std::istream& is, std::size_t& offset) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataError("dataset truncated at byte offset " + std::to_string(offset));
    offset += 4;
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_ds_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline void save_packed(const PackedDataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open dataset for writing: " + path);
    os.write("MAEDS1", 6);
    detail::write_ds_u32(os, static_cast<std::uint32_t>(ds.size()));
    detail::write_ds_u32(os, static_cast<std::uint32_t>(ds.height));
    detail::write_ds_u32(os, static_cast<std::uint32_t>(ds.width));
    detail::write_ds_u32(os, static_cast<std::uint32_t>(ds.channels));
    detail::write_ds_u32(os, static_cast<std::uint32_t>(ds.n_classes));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        detail::write_ds_u32(os, ds.labels[i]);
        os.write(reinterpret_cast<const char*>(ds.pixels[i].data()),
                 static_cast<std::streamsize>(ds.pixels[i].size()));
    }
    if (!os) throw DataError("failed writing dataset: " + path);

    std::ofstream stats(path + ".stats");
    PackedDataset copy = ds;
    if (copy.channel_mean.size() != copy.channels) copy.compute_stats();
    stats.precision(17);
    for (double v : copy.channel_mean) stats << v << "\n";
    for (double v : copy.channel_std) stats << v << "\n";
}

inline PackedDataset load_packed(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open dataset: " + path);
    char magic[6];
    is.read(magic, 6);
    if (!is || std::string(magic, 6) != "MAEDS1")
        throw DataError("bad dataset magic at byte offset 0 in " + path);
    std::size_t offset = 6;
    PackedDataset ds;
    std::uint32_t count = detail::read_ds_u32(is, offset);
    ds.height = detail::read_ds_u32(is, offset);
    ds.width = detail::read_ds_u32(is, offset);
    ds.channels = detail::read_ds_u32(is, offset);
    ds.n_classes = detail::read_ds_u32(is, offset);
    std::size_t rec = ds.height * ds.width * ds.channels;
    ds.labels.reserve(count);
    ds.pixels.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t label = detail::read_ds_u32(is, offset);
        if (label >= ds.n_classes)
            throw DataError("label " + std::to_string(label) + " >= class count " +
                            std::to_string(ds.n_classes) + " at byte offset " + std::to_string(offset - 4));
        std::vector<std::uint8_t> px(rec);
        is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(rec));
        if (!is) throw DataError("dataset truncated at byte offset " + std::to_string(offset));
        offset += rec;
        ds.labels.push_back(label);
        ds.pixels.push_back(std::move(px));
    }

    std::ifstream stats(path + ".stats");
    if (stats) {
        ds.channel_mean.resize(ds.channels);
        ds.channel_std.resize(ds.channels);
        for (auto& v : ds.channel_mean) stats >> v;
        for (auto& v : ds.channel_std) stats >> v;
        if (!stats) ds.compute_stats();
    } else {
        ds.compute_stats();
    }
    return ds;
}

// ---------------------------------------------------------------------------
// augmentation

enum class AugmentMode { none_center_crop, crop_fixed_size, crop_random_size };

struct AugmentSpec {
    AugmentMode mode = AugmentMode::crop_random_size;
    bool flip = true;
    std::size_t out_size = 32;
    double scale_lo = 0.2, scale_hi = 1.0;
};

// raw bytes -> [H,W,C] doubles in [0,1]
inline std::vector<double> decode_pixels(const std::vector<std::uint8_t>& px) {
    std::vector<double> out(px.size());
    for (std::size_t i = 0; i < px.size(); ++i) out[i] = px[i] / 255.0;
    return out;
}

// bilinear resample with half-pixel centers and clamped edges, from a crop
// window [y0, y0+ch) x [x0, x0+cw) of an h x w x c image
inline std::vector<double> bilinear_crop_resize(const std::vector<double>& img, std::size_t h,
                                                std::size_t w, std::size_t c, double y0, double x0,
                                                double ch, double cw, std::size_t out) {
    std::vector<double> res(out * out * c);
    for (std::size_t oy = 0; oy < out; ++oy)
        for (std::size_t ox = 0; ox < out; ++ox) {
            double sy = y0 + (oy + 0.5) * ch / static_cast<double>(out) - 0.5;
            double sx = x0 + (ox + 0.5) * cw / static_cast<double>(out) - 0.5;
            double fy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
            double fx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
            auto y_lo = static_cast<std::size_t>(fy);
            auto x_lo = static_cast<std::size_t>(fx);
            std::size_t y_hi = std::min(y_lo + 1, h - 1);
            std::size_t x_hi = std::min(x_lo + 1, w - 1);
            double wy = fy - static_cast<double>(y_lo);
            double wx = fx - static_cast<double>(x_lo);
            for (std::size_t ci = 0; ci < c; ++ci) {
                double v00 = img[(y_lo * w + x_lo) * c + ci];
                double v01 = img[(y_lo * w + x_hi) * c + ci];
                double v10 = img[(y_hi * w + x_lo) * c + ci];
                double v11 = img[(y_hi * w + x_hi) * c + ci];
                res[(oy * out + ox) * c + ci] =
                    (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
            }
        }
    return res;
}

inline void standardize(std::vector<double>& img, std::size_t c, const std::vector<double>& mean,
                        const std::vector<double>& stddev) {
    for (std::size_t i = 0; i < img.size(); ++i)
        img[i] = (img[i] - mean[i % c]) / stddev[i % c];
}

inline void unstandardize(std::vector<double>& img, std::size_t c, const std::vector<double>& mean,
                          const std::vector<double>& stddev) {
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = img[i] * stddev[i % c] + mean[i % c];
}

// sample area in scale_range, aspect in [3/4, 4/3], <= 10 retries then center crop
inline std::vector<double> random_resized_crop(const std::vector<double>& img, std::size_t h,
                                               std::size_t w, std::size_t c, const AugmentSpec& spec,
                                               Rng& rng) {
    double area = static_cast<double>(h) * static_cast<double>(w);
    for (int attempt = 0; attempt < 10; ++attempt) {
        double target = area * rng.uniform(spec.scale_lo, spec.scale_hi);
        double aspect = std::exp(rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
        double cw = std::sqrt(target * aspect);
        double ch = std::sqrt(target / aspect);
        if (cw <= static_cast<double>(w) && ch <= static_cast<double>(h)) {
            double y0 = rng.uniform() * (static_cast<double>(h) - ch);
            double x0 = rng.uniform() * (static_cast<double>(w) - cw);
            return bilinear_crop_resize(img, h, w, c, y0, x0, ch, cw, spec.out_size);
        }
    }
    double side = static_cast<double>(std::min(h, w));
    return bilinear_crop_resize(img, h, w, c, (static_cast<double>(h) - side) / 2.0,
                                (static_cast<double>(w) - side) / 2.0, side, side, spec.out_size);
}

// deterministic center window; shorter-side resize first when needed
inline std::vector<double> center_crop(const std::vector<double>& img, std::size_t h, std::size_t w,
                                       std::size_t c, std::size_t out_size) {
    MAE_CHECK(out_size <= std::min(h, w),
              "center_crop: output " << out_size << " exceeds image " << h << "x" << w);
    std::size_t y0 = (h - out_size) / 2;
    std::size_t x0 = (w - out_size) / 2;
    std::vector<double> res(out_size * out_size * c);
    for (std::size_t y = 0; y < out_size; ++y)
        for (std::size_t x = 0; x < out_size; ++x)
            for (std::size_t ci = 0; ci < c; ++ci)
                res[(y * out_size + x) * c + ci] = img[((y0 + y) * w + x0 + x) * c + ci];
    return res;
}

inline void hflip_inplace(std::vector<double>& img, std::size_t h, std::size_t w, std::size_t c) {
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w / 2; ++x)
            for (std::size_t ci = 0; ci < c; ++ci)
                std::swap(img[(y * w + x) * c + ci], img[(y * w + (w - 1 - x)) * c + ci]);
}

// one standardized sample -> [out,out,C]
inline std::vector<double> augment_sample(const PackedDataset& ds, std::size_t index,
                                          const AugmentSpec& spec, Rng& rng) {
    std::vector<double> img = decode_pixels(ds.pixels[index]);
    std::vector<double> out;
    switch (spec.mode) {
        case AugmentMode::crop_random_size:
            out = random_resized_crop(img, ds.height, ds.width, ds.channels, spec, rng);
            break;
        case AugmentMode::crop_fixed_size: {
            // fixed-size window at a random offset
            std::size_t s = spec.out_size;
            MAE_CHECK(s <= std::min(ds.height, ds.width), "crop size exceeds image");
            std::size_t y0 = ds.height == s ? 0 : rng.uniform_index(ds.height - s + 1);
            std::size_t x0 = ds.width == s ? 0 : rng.uniform_index(ds.width - s + 1);
            out = bilinear_crop_resize(img, ds.height, ds.width, ds.channels,
                                       static_cast<double>(y0), static_cast<double>(x0),
                                       static_cast<double>(s), static_cast<double>(s), s);
            break;
        }
        case AugmentMode::none_center_crop:
            out = center_crop(img, ds.height, ds.width, ds.channels, spec.out_size);
            break;
    }
    if (spec.flip && rng.uniform() < 0.5) hflip_inplace(out, spec.out_size, spec.out_size, ds.channels);
    standardize(out, ds.channels, ds.channel_mean, ds.channel_std);
    return out;
}

// ---------------------------------------------------------------------------
// deterministic batching

// epoch-seeded shuffle; the final partial batch is kept
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n_samples,
                                                           std::size_t batch_size,
                                                           std::uint64_t seed, std::uint64_t epoch) {
    MAE_CHECK(batch_size >= 1, "batch size must be >= 1");
    std::vector<std::size_t> order(n_samples);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng(seed).fork("batches").fork(epoch);
    for (std::size_t i = n_samples; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n_samples; start += batch_size) {
        std::size_t end = std::min(n_samples, start + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

// assemble a standardized [b,out,out,C] batch
inline Tensor make_batch(const PackedDataset& ds, const std::vector<std::size_t>& indices,
                         const AugmentSpec& spec, Rng& rng) {
    std::size_t per = spec.out_size * spec.out_size * ds.channels;
    std::vector<double> data(indices.size() * per);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        Rng sample_rng = rng.fork(indices[i]);
        auto img = augment_sample(ds, indices[i], spec, sample_rng);
        std::copy(img.begin(), img.end(), data.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return Tensor::from({indices.size(), spec.out_size, spec.out_size, ds.channels}, std::move(data));
}

}  // namespace mae
