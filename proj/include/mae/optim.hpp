#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mae/params.hpp"

namespace mae {

// linear lr scaling rule: lr = base_lr * batch_size / 256
inline double effective_lr(double base_lr, std::size_t batch_size) {
    MAE_CHECK(batch_size >= 1, "effective_lr: batch size must be >= 1");
    return base_lr * static_cast<double>(batch_size) / 256.0;
}

// linear warmup from 0, then cosine decay to 0
inline double lr_at(std::size_t step, std::size_t warmup_steps, std::size_t total_steps, double peak_lr) {
    MAE_CHECK(warmup_steps <= total_steps, "lr_at: warmup " << warmup_steps << " exceeds total " << total_steps);
    MAE_CHECK(step <= total_steps, "lr_at: step " << step << " exceeds total " << total_steps);
    if (step < warmup_steps || (warmup_steps > 0 && step == warmup_steps))
        return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (total_steps == warmup_steps) return peak_lr;
    double progress = static_cast<double>(step - warmup_steps) /
                      static_cast<double>(total_steps - warmup_steps);
    return peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// ---------------------------------------------------------------------------
// parameter grouping

struct ParamGroup {
    std::vector<std::string> names;
    double lr_mult = 1.0;
    bool weight_decay = true;
};

// biases, norm parameters, and single-vector tokens are excluded from decay
inline bool decay_exempt(const std::string& name, const Tensor& t) {
    if (t.shape().size() <= 1) return true;  // biases, gammas, cls/mask tokens
    return false;
}

// Geometric layer-wise lr multipliers for fine-tuning: head and final norm
// at 1, block i at lambda^(depth-i), embedding/class token at lambda^(depth+1).
inline double layer_decay_mult(const std::string& name, std::size_t depth, double lambda) {
    MAE_CHECK(lambda > 0.0 && lambda <= 1.0, "layer decay must be in (0,1]");
    if (name.starts_with("head.") || name.starts_with("probe.")) return 1.0;
    if (name.starts_with("enc.norm.")) return 1.0;
    auto bpos = name.find(".blocks.");
    if (bpos != std::string::npos) {
        std::size_t start = bpos + 8;
        std::size_t idx = std::stoul(name.substr(start, name.find('.', start) - start));
        return std::pow(lambda, static_cast<double>(depth - idx));
    }
    return std::pow(lambda, static_cast<double>(depth + 1));
}

inline std::vector<ParamGroup> layerwise_groups(const ParamStore& store, std::size_t depth,
                                                double lambda) {
    std::map<double, ParamGroup> with_decay, no_decay;
    for (const auto& [name, t] : store.all()) {
        double mult = layer_decay_mult(name, depth, lambda);
        auto& bucket = decay_exempt(name, t) ? no_decay : with_decay;
        auto [it, inserted] = bucket.try_emplace(mult);
        it->second.lr_mult = mult;
        it->second.weight_decay = !decay_exempt(name, t);
        it->second.names.push_back(name);
    }
    std::vector<ParamGroup> groups;
    for (auto& [mult, g] : with_decay) groups.push_back(std::move(g));
    for (auto& [mult, g] : no_decay) groups.push_back(std::move(g));
    return groups;
}

// ---------------------------------------------------------------------------
// trainability

// Marks the last k encoder blocks plus head and final norm trainable and
// freezes the rest. k = 0 trains the head only; mlp_only additionally
// restricts the last block to its MLP sub-block.
inline void freeze_prefix(ParamStore& store, std::size_t depth, std::size_t k_blocks,
                          bool mlp_only = false) {
    MAE_CHECK(k_blocks <= depth, "freeze_prefix: k=" << k_blocks << " exceeds depth " << depth);
    std::string last_block = "enc.blocks." + std::to_string(depth - 1) + ".";
    for (const auto& [name, t] : store.all()) {
        Tensor tensor = t;
        bool trainable = name.starts_with("head.") || name.starts_with("probe.") ||
                         name.starts_with("enc.norm.");
        if (mlp_only) {
            // half-block mode: only the last block's MLP sub-block (and its norm)
            if (name.starts_with(last_block + "mlp.") || name.starts_with(last_block + "ln2."))
                trainable = true;
        } else if (name.starts_with("enc.blocks.")) {
            std::size_t start = 11;
            std::size_t idx = std::stoul(name.substr(start, name.find('.', start) - start));
            if (idx + k_blocks >= depth) trainable = true;
        }
        tensor.set_requires_grad(trainable);
    }
}

// ---------------------------------------------------------------------------
// optimizers

struct AdamWState {
    std::map<std::string, std::vector<double>> m, v;
    std::size_t step = 0;
};

// decoupled weight decay, bias-corrected moments
inline void adamw_step(ParamStore& store, AdamWState& state,
                       const std::map<std::string, double>& lr_mults, double lr, double wd,
                       double beta1, double beta2, double eps = 1e-8) {
    ++state.step;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (const auto& [name, t] : store.all()) {
        Tensor tensor = t;
        if (!tensor.requires_grad()) continue;
        double mult = 1.0;
        if (auto it = lr_mults.find(name); it != lr_mults.end()) mult = it->second;
        double plr = lr * mult;
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != tensor.size()) m.assign(tensor.size(), 0.0);
        if (v.size() != tensor.size()) v.assign(tensor.size(), 0.0);
        auto& data = tensor.data();
        const auto& grad = tensor.grad();
        bool decay = wd > 0.0 && !decay_exempt(name, tensor);
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (decay) data[i] -= plr * wd * data[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            data[i] -= plr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
}

struct SgdState {
    std::map<std::string, std::vector<double>> velocity;
};

inline void sgd_momentum_step(ParamStore& store, SgdState& state, double lr, double momentum,
                              double wd = 0.0) {
    for (const auto& [name, t] : store.all()) {
        Tensor tensor = t;
        if (!tensor.requires_grad()) continue;
        auto& vel = state.velocity[name];
        if (vel.size() != tensor.size()) vel.assign(tensor.size(), 0.0);
        auto& data = tensor.data();
        const auto& grad = tensor.grad();
        bool decay = wd > 0.0 && !decay_exempt(name, tensor);
        for (std::size_t i = 0; i < data.size(); ++i) {
            double g = grad[i] + (decay ? wd * data[i] : 0.0);
            vel[i] = momentum * vel[i] + g;
            data[i] -= lr * vel[i];
        }
    }
}

// ---------------------------------------------------------------------------
// EMA of parameters: ema <- decay*ema + (1-decay)*params

struct EmaState {
    std::map<std::string, std::vector<double>> shadow;
};

inline void ema_init(EmaState& ema, const ParamStore& store) {
    for (const auto& [name, t] : store.all()) ema.shadow[name] = t.data();
}

inline void ema_update(EmaState& ema, const ParamStore& store, double decay) {
    for (const auto& [name, t] : store.all()) {
        auto& s = ema.shadow[name];
        if (s.size() != t.data().size()) s = t.data();
        for (std::size_t i = 0; i < s.size(); ++i)
            s[i] = decay * s[i] + (1.0 - decay) * t.data()[i];
    }
}

inline void ema_copy_to(const EmaState& ema, ParamStore& store) {
    for (const auto& [name, s] : ema.shadow)
        if (store.contains(name)) store.get(name).data() = s;
}

}  // namespace mae
