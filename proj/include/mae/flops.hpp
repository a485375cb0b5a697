#pragma once

#include <cstddef>

#include "mae/mask.hpp"
#include "mae/vit.hpp"

namespace mae {

// Analytic per-block per-token cost: 4d^2 for the QKV/output projections,
// 2*T*d for attention scores and mixing, 2*m*d^2 for the MLP. Norms, softmax
// and biases are sub-1% terms and ignored.
inline double block_flops_per_token(std::size_t tokens, std::size_t width, double mlp_ratio) {
    double d = static_cast<double>(width);
    double t = static_cast<double>(tokens);
    return 4.0 * d * d + 2.0 * t * d + 2.0 * mlp_ratio * d * d;
}

inline double stack_flops(std::size_t tokens, std::size_t width, std::size_t depth, double mlp_ratio) {
    return block_flops_per_token(tokens, width, mlp_ratio) * static_cast<double>(tokens) *
           static_cast<double>(depth);
}

struct FlopsEstimate {
    double encoder_flops = 0.0;
    double decoder_flops = 0.0;
    double total() const { return encoder_flops + decoder_flops; }
};

// Pre-training cost of one forward over one image. The encoder sees
// len_keep+1 tokens (or all n+1 with mask tokens); the decoder always
// sees the full n+1 set.
inline FlopsEstimate flops_estimate(const ViTConfig& encoder, std::size_t decoder_depth,
                                    std::size_t decoder_width, std::size_t n_patches, double mask_ratio,
                                    bool mask_tokens_in_encoder) {
    std::size_t enc_tokens =
        mask_tokens_in_encoder ? n_patches + 1 : keep_count(n_patches, mask_ratio) + 1;
    FlopsEstimate est;
    est.encoder_flops = stack_flops(enc_tokens, encoder.width, encoder.depth, encoder.mlp_ratio);
    est.decoder_flops = stack_flops(n_patches + 1, decoder_width, decoder_depth, encoder.mlp_ratio);
    return est;
}

// FLOPs(with mask tokens in encoder) / FLOPs(without); 1.0 at ratio 0
inline double mask_token_flops_ratio(const ViTConfig& encoder, std::size_t decoder_depth,
                                     std::size_t decoder_width, std::size_t n_patches,
                                     double mask_ratio) {
    double with_tokens =
        flops_estimate(encoder, decoder_depth, decoder_width, n_patches, mask_ratio, true).total();
    double without =
        flops_estimate(encoder, decoder_depth, decoder_width, n_patches, mask_ratio, false).total();
    return with_tokens / without;
}

// decoder-per-token cost as a fraction of encoder-per-token cost
inline double decoder_per_token_fraction(const ViTConfig& encoder, std::size_t decoder_depth,
                                         std::size_t decoder_width, std::size_t n_patches) {
    std::size_t t = n_patches + 1;
    double enc = block_flops_per_token(t, encoder.width, encoder.mlp_ratio) *
                 static_cast<double>(encoder.depth);
    double dec = block_flops_per_token(t, decoder_width, encoder.mlp_ratio) *
                 static_cast<double>(decoder_depth);
    return dec / enc;
}

}  // namespace mae
