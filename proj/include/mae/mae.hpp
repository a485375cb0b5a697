#pragma once

#include <map>
#include <string>
#include <vector>

#include "mae/mask.hpp"
#include "mae/pca.hpp"
#include "mae/vit.hpp"

namespace mae {

enum class TargetKind { raw_pixels, normalized_pixels, pca };

struct MaeConfig {
    ViTConfig encoder;
    std::size_t decoder_depth = 8;
    std::size_t decoder_width = 512;
    std::size_t decoder_heads = 16;
    double mask_ratio = 0.75;
    Sampling sampling = Sampling::random;
    TargetKind target_kind = TargetKind::raw_pixels;
    std::size_t pca_k = 96;
    double norm_eps = 1e-6;

    std::size_t target_dim() const {
        return target_kind == TargetKind::pca ? pca_k : encoder.patch_dim();
    }

    void validate() const {
        encoder.validate();
        MAE_CHECK(mask_ratio >= 0.0 && mask_ratio < 1.0, "mask ratio " << mask_ratio << " outside [0,1)");
        MAE_CHECK(decoder_width % decoder_heads == 0,
                  "decoder width " << decoder_width << " not divisible by " << decoder_heads << " heads");
        if (sampling == Sampling::grid)
            MAE_CHECK(encoder.grid_side() % 2 == 0, "grid sampling needs an even patch grid");
        if (target_kind == TargetKind::pca)
            MAE_CHECK(pca_k <= encoder.patch_dim(), "pca target dimension exceeds patch dimension");
    }
};

struct MaeParams {
    VitParams enc;
    Tensor enc_mask_token;  // only used by the with-mask-tokens-in-encoder ablation
    Tensor proj_w, proj_b;  // encoder width -> decoder width
    Tensor mask_token;      // [decoder_width], shared across masked positions
    std::vector<BlockParams> dec_blocks;
    Tensor dec_norm_g, dec_norm_b;
    Tensor dec_head_w, dec_head_b;  // [decoder_width, target_dim]
    Tensor dec_pos;                 // [N+1, decoder_width] sine-cosine
    std::size_t dec_heads = 0;
};

inline MaeParams make_mae(ParamStore& store, const MaeConfig& cfg) {
    cfg.validate();
    MaeParams p;
    p.enc = make_vit(store, "enc", cfg.encoder);
    p.enc_mask_token = store.create("enc.mask_token", {cfg.encoder.width}, Init::zeros);
    p.proj_w = store.create("dec.proj.w", {cfg.encoder.width, cfg.decoder_width}, Init::xavier_uniform);
    p.proj_b = store.create("dec.proj.b", {cfg.decoder_width}, Init::zeros);
    p.mask_token = store.create("dec.mask_token", {cfg.decoder_width}, Init::zeros);
    std::size_t hidden = static_cast<std::size_t>(cfg.decoder_width * cfg.encoder.mlp_ratio);
    for (std::size_t i = 0; i < cfg.decoder_depth; ++i)
        p.dec_blocks.push_back(
            make_block(store, "dec.blocks." + std::to_string(i), cfg.decoder_width, hidden));
    p.dec_norm_g = store.create("dec.norm.g", {cfg.decoder_width}, Init::ones);
    p.dec_norm_b = store.create("dec.norm.b", {cfg.decoder_width}, Init::zeros);
    p.dec_head_w = store.create("dec.head.w", {cfg.decoder_width, cfg.target_dim()}, Init::xavier_uniform);
    p.dec_head_b = store.create("dec.head.b", {cfg.target_dim()}, Init::zeros);
    p.dec_pos = sincos_pos_embed(cfg.encoder.n_patches() + 1, cfg.decoder_width);
    p.dec_heads = cfg.decoder_heads;
    return p;
}

// ---------------------------------------------------------------------------
// encoder on visible patches only

// [b,H,W,C] -> [b, len_keep+1, d_enc]; plans must share len_keep
inline Tensor encode_visible(const Tensor& images, const std::vector<MaskPlan>& plans,
                             const MaeParams& p) {
    MAE_CHECK(images.rank() == 4 && images.shape()[0] == plans.size(),
              "encode_visible: " << plans.size() << " plans for batch " << shape_str(images.shape()));
    std::size_t len_keep = plans.empty() ? 0 : plans[0].len_keep;
    std::vector<std::vector<std::size_t>> visible;
    visible.reserve(plans.size());
    for (const auto& plan : plans) {
        MAE_CHECK(plan.len_keep == len_keep, "encode_visible: plans must share len_keep across the batch");
        visible.push_back(plan.visible_ids());
    }
    Tensor tokens = embed_patches(images, p.enc);
    Tensor kept = gather_tokens(tokens, visible);
    return encode_tokens(prepend_cls(kept, p.enc), p.enc);
}

// ablation variant: the encoder sees mask tokens at masked positions
inline Tensor encode_with_mask_tokens(const Tensor& images, const std::vector<MaskPlan>& plans,
                                      const MaeParams& p) {
    std::size_t b = images.shape()[0];
    std::size_t n = p.enc.cfg.n_patches();
    Tensor tokens = embed_patches(images, p.enc);
    std::vector<std::vector<std::size_t>> visible, restore;
    for (const auto& plan : plans) {
        visible.push_back(plan.visible_ids());
        restore.push_back(plan.ids_restore);
    }
    std::size_t len_keep = plans[0].len_keep;
    Tensor kept = gather_tokens(tokens, visible);
    Tensor masked = broadcast_token(p.enc_mask_token, b, n - len_keep);
    Tensor full = gather_tokens(concat(kept, masked, 1), restore);
    return encode_tokens(prepend_cls(full, p.enc), p.enc);
}

// ---------------------------------------------------------------------------
// decoder over the full token set

// latents [b, k+1, d_enc] -> predictions [b, n, target_dim] in patch order
inline Tensor decode_full(const Tensor& latents, const std::vector<MaskPlan>& plans,
                          const MaeParams& p) {
    std::size_t b = latents.shape()[0];
    std::size_t k = latents.shape()[1] - 1;  // class token at position 0
    std::size_t n = plans[0].n;
    Tensor x = add_bias(matmul(latents, p.proj_w), p.proj_b);
    Tensor cls = slice_tokens(x, 0, 1);
    Tensor patch_stream = slice_tokens(x, 1, k);
    if (k < n) {
        Tensor masked = broadcast_token(p.mask_token, b, n - k);
        patch_stream = concat(patch_stream, masked, 1);
    }
    // unshuffle: token for patch j sits at ids_restore[j] of the shuffled stream
    std::vector<std::vector<std::size_t>> restore;
    restore.reserve(plans.size());
    for (const auto& plan : plans) restore.push_back(plan.ids_restore);
    Tensor ordered = gather_tokens(patch_stream, restore);
    Tensor full = add_pos(concat(cls, ordered, 1), p.dec_pos);
    for (const auto& blk : p.dec_blocks) full = transformer_block(full, blk, p.dec_heads);
    full = layer_norm(full, p.dec_norm_g, p.dec_norm_b, kLnEps);
    Tensor pred = add_bias(matmul(full, p.dec_head_w), p.dec_head_b);
    return slice_tokens(pred, 1, n);  // class position carries no reconstruction
}

// decoder path for the with-mask-tokens ablation: latents already cover all n patches
inline Tensor decode_all_tokens(const Tensor& latents, const MaeParams& p) {
    std::size_t n = latents.shape()[1] - 1;
    Tensor x = add_pos(add_bias(matmul(latents, p.proj_w), p.proj_b), p.dec_pos);
    for (const auto& blk : p.dec_blocks) x = transformer_block(x, blk, p.dec_heads);
    x = layer_norm(x, p.dec_norm_g, p.dec_norm_b, kLnEps);
    return slice_tokens(add_bias(matmul(x, p.dec_head_w), p.dec_head_b), 1, n);
}

// ---------------------------------------------------------------------------
// reconstruction targets

// per-patch normalization: (x - mu) / sqrt(var + eps), population variance
inline void normalize_patch_rows(std::vector<double>& data, std::size_t rows, std::size_t d, double eps) {
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = data.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) row[j] = (row[j] - mu) * inv;
    }
}

// [b,H,W,C] -> [b, n, target_dim]; never taped
inline Tensor build_target(const Tensor& images, const MaeConfig& cfg, const PcaBasis* basis) {
    Tensor patches = patchify_batch(images, cfg.encoder.patch_size);
    std::size_t b = patches.shape()[0], n = patches.shape()[1], d = patches.shape()[2];
    switch (cfg.target_kind) {
        case TargetKind::raw_pixels:
            return patches;
        case TargetKind::normalized_pixels: {
            std::vector<double> data = patches.data();
            normalize_patch_rows(data, b * n, d, cfg.norm_eps);
            return Tensor::from({b, n, d}, std::move(data));
        }
        case TargetKind::pca: {
            MAE_CHECK(basis != nullptr, "pca target requires a fitted basis");
            MAE_CHECK(basis->comps.size() == cfg.pca_k, "pca basis has " << basis->comps.size()
                                                                         << " components, config wants "
                                                                         << cfg.pca_k);
            std::vector<double> out(b * n * cfg.pca_k);
            for (std::size_t r = 0; r < b * n; ++r) {
                auto coeffs = pca_project_row(*basis, patches.data().data() + r * d);
                std::copy(coeffs.begin(), coeffs.end(), out.begin() + static_cast<std::ptrdiff_t>(r * cfg.pca_k));
            }
            return Tensor::from({b, n, cfg.pca_k}, std::move(out));
        }
    }
    throw std::invalid_argument("unknown target kind");
}

// ---------------------------------------------------------------------------
// one pre-training forward

struct MaeStepResult {
    Tensor loss;
    Tensor pred;  // [b, n, target_dim]; defined only when the batch shares one len_keep
    std::vector<MaskPlan> plans;
};

inline Tensor mae_forward(const Tensor& images, const std::vector<MaskPlan>& plans,
                          const MaeConfig& cfg, const MaeParams& params, const PcaBasis* basis,
                          Tensor* pred_out = nullptr) {
    Tensor latents = encode_visible(images, plans, params);
    Tensor pred = decode_full(latents, plans, params);
    Tensor target = build_target(images, cfg, basis);
    std::vector<std::vector<std::uint8_t>> masks;
    masks.reserve(plans.size());
    for (const auto& plan : plans) masks.push_back(plan.mask);
    if (pred_out) *pred_out = pred;
    return masked_mse(pred, target, masks);
}

// Samples plans, groups images sharing a len_keep (block sampling may differ
// per image), and combines group losses weighted by masked-patch counts so the
// result equals the mean over all masked patches in the batch.
inline MaeStepResult mae_step(const Tensor& images, const MaeConfig& cfg, const MaeParams& params,
                              Rng& rng, const PcaBasis* basis = nullptr) {
    cfg.validate();
    std::size_t b = images.shape()[0];
    MaeStepResult res;
    res.plans.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
        Rng plan_rng = rng.fork(i);
        res.plans.push_back(make_mask_plan(cfg.sampling, cfg.encoder.grid_side(), cfg.mask_ratio, plan_rng));
    }

    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < b; ++i) groups[res.plans[i].len_keep].push_back(i);

    if (groups.size() == 1) {
        res.loss = mae_forward(images, res.plans, cfg, params, basis, &res.pred);
        return res;
    }

    std::size_t h = images.shape()[1], w = images.shape()[2], c = images.shape()[3];
    std::size_t per = h * w * c;
    std::size_t total_masked = 0;
    for (const auto& plan : res.plans) total_masked += plan.n - plan.len_keep;
    Tensor total;
    for (const auto& [len_keep, ids] : groups) {
        std::vector<double> sub(ids.size() * per);
        std::vector<MaskPlan> sub_plans;
        std::size_t group_masked = 0;
        for (std::size_t j = 0; j < ids.size(); ++j) {
            std::copy_n(images.data().data() + ids[j] * per, per, sub.data() + j * per);
            sub_plans.push_back(res.plans[ids[j]]);
            group_masked += res.plans[ids[j]].n - len_keep;
        }
        Tensor sub_images = Tensor::from({ids.size(), h, w, c}, std::move(sub));
        Tensor group_loss = mae_forward(sub_images, sub_plans, cfg, params, basis);
        Tensor weighted =
            scale(group_loss, static_cast<double>(group_masked) / static_cast<double>(total_masked));
        total = total.defined() ? add(total, weighted) : weighted;
    }
    res.loss = total;
    return res;
}

}  // namespace mae
