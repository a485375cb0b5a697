#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mae/params.hpp"
#include "mae/tensor.hpp"

namespace mae {

struct ViTConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 4;
    std::size_t channels = 3;
    std::size_t depth = 4;
    std::size_t width = 64;
    std::size_t heads = 4;
    double mlp_ratio = 4.0;

    std::size_t grid_side() const { return image_size / patch_size; }
    std::size_t n_patches() const { return grid_side() * grid_side(); }
    std::size_t patch_dim() const { return patch_size * patch_size * channels; }
    std::size_t mlp_hidden() const { return static_cast<std::size_t>(width * mlp_ratio); }

    void validate() const {
        MAE_CHECK(image_size % patch_size == 0,
                  "image size " << image_size << " not divisible by patch size " << patch_size);
        MAE_CHECK(width % heads == 0, "width " << width << " not divisible by " << heads << " heads");
    }
};

// standard model presets plus the small desk-scale config used by the tests
inline ViTConfig vit_tiny_desk() { return ViTConfig{32, 4, 3, 4, 64, 4, 4.0}; }
inline ViTConfig vit_base() { return ViTConfig{224, 16, 3, 12, 768, 12, 4.0}; }
inline ViTConfig vit_large() { return ViTConfig{224, 16, 3, 24, 1024, 16, 4.0}; }
inline ViTConfig vit_huge() { return ViTConfig{224, 14, 3, 32, 1280, 16, 4.0}; }

// ---------------------------------------------------------------------------
// patch bookkeeping (pure data movement, not taped: inputs are images)

// [H,W,C] -> [N, p*p*C], rows raster-flattened, row-major over the grid
inline Tensor patchify(const Tensor& image, std::size_t p) {
    MAE_CHECK(image.rank() == 3, "patchify: expected [H,W,C], got " << shape_str(image.shape()));
    std::size_t h = image.shape()[0], w = image.shape()[1], c = image.shape()[2];
    MAE_CHECK(h % p == 0 && w % p == 0,
              "patchify: extents " << h << "x" << w << " not divisible by patch size " << p);
    std::size_t gh = h / p, gw = w / p;
    std::vector<double> out(h * w * c);
    const double* in = image.data().data();
    std::size_t k = 0;
    for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx)
            for (std::size_t py = 0; py < p; ++py)
                for (std::size_t px = 0; px < p; ++px)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        out[k++] = in[((gy * p + py) * w + gx * p + px) * c + ch];
    return Tensor::from({gh * gw, p * p * c}, std::move(out));
}

// exact inverse of patchify
inline Tensor unpatchify(const Tensor& patches, std::size_t grid_h, std::size_t grid_w,
                         std::size_t p, std::size_t c) {
    MAE_CHECK(patches.rank() == 2, "unpatchify: expected [N, p*p*C]");
    MAE_CHECK(patches.shape()[0] == grid_h * grid_w,
              "unpatchify: " << patches.shape()[0] << " patches vs grid " << grid_h << "x" << grid_w);
    MAE_CHECK(patches.shape()[1] == p * p * c, "unpatchify: patch dim mismatch");
    std::size_t h = grid_h * p, w = grid_w * p;
    std::vector<double> out(h * w * c);
    const double* in = patches.data().data();
    std::size_t k = 0;
    for (std::size_t gy = 0; gy < grid_h; ++gy)
        for (std::size_t gx = 0; gx < grid_w; ++gx)
            for (std::size_t py = 0; py < p; ++py)
                for (std::size_t px = 0; px < p; ++px)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        out[((gy * p + py) * w + gx * p + px) * c + ch] = in[k++];
    return Tensor::from({h, w, c}, std::move(out));
}

// [b,H,W,C] -> [b,N,p*p*C]
inline Tensor patchify_batch(const Tensor& images, std::size_t p) {
    MAE_CHECK(images.rank() == 4, "patchify_batch: expected [b,H,W,C]");
    std::size_t b = images.shape()[0], h = images.shape()[1], w = images.shape()[2], c = images.shape()[3];
    MAE_CHECK(h % p == 0 && w % p == 0, "patchify_batch: extents not divisible by patch size");
    std::size_t gh = h / p, gw = w / p;
    std::vector<double> out(images.size());
    std::size_t per = h * w * c;
    for (std::size_t bi = 0; bi < b; ++bi) {
        const double* in = images.data().data() + bi * per;
        double* o = out.data() + bi * per;
        std::size_t k = 0;
        for (std::size_t gy = 0; gy < gh; ++gy)
            for (std::size_t gx = 0; gx < gw; ++gx)
                for (std::size_t py = 0; py < p; ++py)
                    for (std::size_t px = 0; px < p; ++px)
                        for (std::size_t ch = 0; ch < c; ++ch)
                            o[k++] = in[((gy * p + py) * w + gx * p + px) * c + ch];
    }
    return Tensor::from({b, gh * gw, p * p * c}, std::move(out));
}

// fixed sine-cosine table: sin half then cos half, frequency 10000^(2i/d)
inline Tensor sincos_pos_embed(std::size_t n_positions, std::size_t d) {
    MAE_CHECK(d % 2 == 0, "sincos_pos_embed: dimension " << d << " must be even");
    std::vector<double> out(n_positions * d);
    std::size_t half = d / 2;
    for (std::size_t q = 0; q < n_positions; ++q)
        for (std::size_t i = 0; i < half; ++i) {
            double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
            double angle = static_cast<double>(q) * freq;
            out[q * d + i] = std::sin(angle);
            out[q * d + half + i] = std::cos(angle);
        }
    return Tensor::from({n_positions, d}, std::move(out));
}

// ---------------------------------------------------------------------------
// transformer blocks

struct BlockParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

inline BlockParams make_block(ParamStore& store, const std::string& prefix, std::size_t d,
                              std::size_t hidden) {
    BlockParams p;
    p.ln1_g = store.create(prefix + ".ln1.g", {d}, Init::ones);
    p.ln1_b = store.create(prefix + ".ln1.b", {d}, Init::zeros);
    p.wq = store.create(prefix + ".attn.wq", {d, d}, Init::xavier_uniform);
    p.bq = store.create(prefix + ".attn.bq", {d}, Init::zeros);
    p.wk = store.create(prefix + ".attn.wk", {d, d}, Init::xavier_uniform);
    p.bk = store.create(prefix + ".attn.bk", {d}, Init::zeros);
    p.wv = store.create(prefix + ".attn.wv", {d, d}, Init::xavier_uniform);
    p.bv = store.create(prefix + ".attn.bv", {d}, Init::zeros);
    p.wo = store.create(prefix + ".attn.wo", {d, d}, Init::xavier_uniform);
    p.bo = store.create(prefix + ".attn.bo", {d}, Init::zeros);
    p.ln2_g = store.create(prefix + ".ln2.g", {d}, Init::ones);
    p.ln2_b = store.create(prefix + ".ln2.b", {d}, Init::zeros);
    p.mlp_w1 = store.create(prefix + ".mlp.w1", {d, hidden}, Init::xavier_uniform);
    p.mlp_b1 = store.create(prefix + ".mlp.b1", {hidden}, Init::zeros);
    p.mlp_w2 = store.create(prefix + ".mlp.w2", {hidden, d}, Init::xavier_uniform);
    p.mlp_b2 = store.create(prefix + ".mlp.b2", {d}, Init::zeros);
    return p;
}

constexpr double kLnEps = 1e-6;

inline Tensor multi_head_attention(const Tensor& x, const BlockParams& p, std::size_t heads) {
    std::size_t d = x.shape()[2];
    MAE_CHECK(d % heads == 0, "attention: width " << d << " not divisible by " << heads << " heads");
    std::size_t dh = d / heads;
    Tensor q = split_heads(add_bias(matmul(x, p.wq), p.bq), heads);
    Tensor k = split_heads(add_bias(matmul(x, p.wk), p.bk), heads);
    Tensor v = split_heads(add_bias(matmul(x, p.wv), p.bv), heads);
    Tensor scores = scale(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor att = softmax_rows(scores);
    Tensor mixed = merge_heads(matmul(att, v));
    return add_bias(matmul(mixed, p.wo), p.bo);
}

// per-sample residual-branch dropping with survival rescaling
inline std::vector<double> drop_path_factors(std::size_t batch, double rate, Rng& rng) {
    std::vector<double> f(batch, 1.0);
    if (rate <= 0.0) return f;
    double keep = 1.0 - rate;
    for (auto& v : f) v = rng.uniform() < keep ? 1.0 / keep : 0.0;
    return f;
}

// pre-norm residual block: x + MHSA(LN(x)), then + MLP(LN(.))
inline Tensor transformer_block(const Tensor& x, const BlockParams& p, std::size_t heads,
                                double drop_path_rate = 0.0, Rng* rng = nullptr) {
    Tensor attn_out = multi_head_attention(layer_norm(x, p.ln1_g, p.ln1_b, kLnEps), p, heads);
    if (drop_path_rate > 0.0 && rng)
        attn_out = scale_rows(attn_out, drop_path_factors(x.shape()[0], drop_path_rate, *rng));
    Tensor h = add(x, attn_out);
    Tensor mlp_in = layer_norm(h, p.ln2_g, p.ln2_b, kLnEps);
    Tensor mlp_out =
        add_bias(matmul(gelu(add_bias(matmul(mlp_in, p.mlp_w1), p.mlp_b1)), p.mlp_w2), p.mlp_b2);
    if (drop_path_rate > 0.0 && rng)
        mlp_out = scale_rows(mlp_out, drop_path_factors(x.shape()[0], drop_path_rate, *rng));
    return add(h, mlp_out);
}

// ---------------------------------------------------------------------------
// full ViT

struct VitParams {
    ViTConfig cfg;
    Tensor patch_w, patch_b;  // [p*p*C, d], [d]
    Tensor cls;               // [d], zero-initialized
    std::vector<BlockParams> blocks;
    Tensor norm_g, norm_b;
    Tensor pos;  // [N+1, d] sine-cosine, class token at index 0; not trained
};

inline VitParams make_vit(ParamStore& store, const std::string& prefix, const ViTConfig& cfg) {
    cfg.validate();
    VitParams p;
    p.cfg = cfg;
    p.patch_w = store.create(prefix + ".patch_embed.w", {cfg.patch_dim(), cfg.width}, Init::xavier_uniform);
    p.patch_b = store.create(prefix + ".patch_embed.b", {cfg.width}, Init::zeros);
    p.cls = store.create(prefix + ".cls", {cfg.width}, Init::zeros);
    for (std::size_t i = 0; i < cfg.depth; ++i)
        p.blocks.push_back(make_block(store, prefix + ".blocks." + std::to_string(i), cfg.width,
                                      cfg.mlp_hidden()));
    p.norm_g = store.create(prefix + ".norm.g", {cfg.width}, Init::ones);
    p.norm_b = store.create(prefix + ".norm.b", {cfg.width}, Init::zeros);
    p.pos = sincos_pos_embed(cfg.n_patches() + 1, cfg.width);
    return p;
}

// patch tokens with positional embeddings added for all N positions; [b,N,d]
inline Tensor embed_patches(const Tensor& images, const VitParams& p) {
    Tensor patches = patchify_batch(images, p.cfg.patch_size);
    Tensor tokens = add_bias(matmul(patches, p.patch_w), p.patch_b);
    Tensor pos_patches = gather_rows(p.pos, [&] {
        std::vector<std::size_t> ids(p.cfg.n_patches());
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i + 1;
        return ids;
    }());
    return add_pos(tokens, pos_patches);
}

// prepend class token (with its dedicated position 0) to [b,T,d]
inline Tensor prepend_cls(const Tensor& tokens, const VitParams& p) {
    std::size_t b = tokens.shape()[0];
    Tensor cls = broadcast_token(p.cls, b, 1);
    Tensor pos0 = gather_rows(p.pos, {0});
    return concat(add_pos(cls, pos0), tokens, 1);
}

// run the block stack and final LN (the encoder ends with LN)
inline Tensor encode_tokens(const Tensor& tokens, const VitParams& p, double drop_path_rate = 0.0,
                            Rng* rng = nullptr) {
    Tensor x = tokens;
    for (const auto& blk : p.blocks) x = transformer_block(x, blk, p.cfg.heads, drop_path_rate, rng);
    return layer_norm(x, p.norm_g, p.norm_b, kLnEps);
}

// class-token feature of full (unmasked) images: [b, d]
inline Tensor vit_features(const Tensor& images, const VitParams& p, double drop_path_rate = 0.0,
                           Rng* rng = nullptr) {
    Tensor x = encode_tokens(prepend_cls(embed_patches(images, p), p), p, drop_path_rate, rng);
    Tensor cls = slice_tokens(x, 0, 1);
    return reshape(cls, {x.shape()[0], x.shape()[2]});
}

struct HeadParams {
    Tensor w, b;  // [d, n_classes], [n_classes]
};

inline HeadParams make_head(ParamStore& store, const std::string& prefix, std::size_t d,
                            std::size_t n_classes) {
    HeadParams h;
    h.w = store.create(prefix + ".w", {d, n_classes}, Init::xavier_uniform);
    h.b = store.create(prefix + ".b", {n_classes}, Init::zeros);
    return h;
}

// linear head on the class-token output: [b, n_classes]
inline Tensor vit_classify(const Tensor& images, const VitParams& p, const HeadParams& head,
                           double drop_path_rate = 0.0, Rng* rng = nullptr) {
    return add_bias(matmul(vit_features(images, p, drop_path_rate, rng), head.w), head.b);
}

}  // namespace mae
