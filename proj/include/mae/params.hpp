#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mae/common.hpp"
#include "mae/rng.hpp"
#include "mae/tensor.hpp"

namespace mae {

enum class Init { zeros, ones, xavier_uniform };

// Named trainable tensors. Initialization draws from a stream forked by
// parameter name, so values do not depend on creation order.
class ParamStore {
public:
    explicit ParamStore(Rng rng = Rng(0)) : rng_(rng) {}

    Tensor create(const std::string& name, Shape shape, Init init) {
        MAE_CHECK(!params_.count(name), "duplicate parameter name: " << name);
        Tensor t = Tensor::zeros(shape, true);
        if (init == Init::ones) {
            for (double& v : t.data()) v = 1.0;
        } else if (init == Init::xavier_uniform) {
            MAE_CHECK(shape.size() == 2, "xavier init expects a matrix, got " << shape_str(shape));
            double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
            Rng r = rng_.fork(name);
            for (double& v : t.data()) v = r.uniform(-bound, bound);
        }
        params_.emplace(name, t);
        return t;
    }

    Tensor get(const std::string& name) const {
        auto it = params_.find(name);
        MAE_CHECK(it != params_.end(), "unknown parameter: " << name);
        return it->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    const std::map<std::string, Tensor>& all() const { return params_; }

    void zero_grads() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

private:
    Rng rng_;
    std::map<std::string, Tensor> params_;  // ordered: checkpoint manifest is deterministic
};

// ---------------------------------------------------------------------------
// MAECKPT1 checkpoint: magic, u32 array count, per array {u32 name len,
// name, u32 rank, u32 extents...}, then raw little-endian f32 payloads
// in manifest order.

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataError(std::string("checkpoint truncated while reading ") + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t u;
    static_assert(sizeof(u) == sizeof(v));
    std::memcpy(&u, &v, 4);
    write_u32(os, u);
}

inline float read_f32(std::istream& is, const char* what) {
    std::uint32_t u = read_u32(is, what);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

}  // namespace detail

inline void save_checkpoint(const ParamStore& store, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write("MAECKPT1", 8);
    detail::write_u32(os, static_cast<std::uint32_t>(store.all().size()));
    for (const auto& [name, t] : store.all()) {
        detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(t.shape().size()));
        for (auto e : t.shape()) detail::write_u32(os, static_cast<std::uint32_t>(e));
    }
    for (const auto& [name, t] : store.all())
        for (double v : t.data()) detail::write_f32(os, static_cast<float>(v));
    if (!os) throw DataError("failed writing checkpoint: " + path);
}

// Loads raw arrays from a checkpoint file.
inline std::map<std::string, std::pair<Shape, std::vector<double>>> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != "MAECKPT1") throw DataError("bad checkpoint magic in " + path);
    std::uint32_t count = detail::read_u32(is, "array count");
    std::vector<std::pair<std::string, Shape>> manifest;
    manifest.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t len = detail::read_u32(is, "name length");
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (!is) throw DataError("checkpoint truncated while reading name");
        std::uint32_t rank = detail::read_u32(is, "rank");
        Shape shape(rank);
        for (auto& e : shape) e = detail::read_u32(is, "extent");
        manifest.emplace_back(std::move(name), std::move(shape));
    }
    std::map<std::string, std::pair<Shape, std::vector<double>>> out;
    for (auto& [name, shape] : manifest) {
        std::vector<double> data(numel(shape));
        for (auto& v : data) v = static_cast<double>(detail::read_f32(is, name.c_str()));
        out.emplace(std::move(name), std::make_pair(std::move(shape), std::move(data)));
    }
    return out;
}

// Copies checkpoint arrays into matching store parameters. Values pass
// through f32, matching what training with a save/load cycle would see;
// callers that need bit-stable resumes round-trip through this on save.
inline void load_into(ParamStore& store, const std::string& path, const std::string& prefix = "") {
    auto arrays = load_checkpoint(path);
    for (auto& [name, entry] : arrays) {
        if (!name.starts_with(prefix)) continue;
        if (!store.contains(name)) continue;
        Tensor t = store.get(name);
        MAE_CHECK(t.shape() == entry.first, "checkpoint array " << name << " has shape "
                                                                << shape_str(entry.first) << ", expected "
                                                                << shape_str(t.shape()));
        t.data() = std::move(entry.second);
    }
}

// Strict variant: every prefixed name must exist on both sides, so an
// architecture mismatch (e.g. different depth) is rejected instead of
// partially loaded.
inline void load_into_strict(ParamStore& store, const std::string& path, const std::string& prefix) {
    auto arrays = load_checkpoint(path);
    for (const auto& [name, t] : store.all())
        if (name.starts_with(prefix) && !arrays.count(name))
            throw DataError("checkpoint " + path + " is missing parameter " + name +
                            " (architecture mismatch?)");
    for (auto& [name, entry] : arrays) {
        if (!name.starts_with(prefix)) continue;
        if (!store.contains(name)) {
            // auxiliary pre-training tensors (e.g. the encoder mask token) are
            // fine to skip, but extra transformer blocks mean a depth mismatch
            if (name.find(".blocks.") != std::string::npos)
                throw DataError("checkpoint " + path + " has unexpected parameter " + name +
                                " (architecture mismatch?)");
            continue;
        }
        Tensor t = store.get(name);
        MAE_CHECK(t.shape() == entry.first, "checkpoint array " << name << " has shape "
                                                                << shape_str(entry.first) << ", expected "
                                                                << shape_str(t.shape()));
        t.data() = std::move(entry.second);
    }
}

}  // namespace mae
