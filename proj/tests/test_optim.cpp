#include <cmath>

#include "doctest.h"
#include "mae/optim.hpp"

using namespace mae;

TEST_CASE("effective lr follows the linear scaling rule") {
    CHECK(effective_lr(1.5e-4, 4096) == doctest::Approx(2.4e-3).epsilon(1e-12));
    CHECK(effective_lr(1.0, 256) == doctest::Approx(1.0));
    CHECK(effective_lr(0.1, 64) == doctest::Approx(0.025));
    CHECK_THROWS_AS(effective_lr(0.1, 0), std::invalid_argument);
}

TEST_CASE("lr schedule: linear warmup then cosine decay") {
    const std::size_t warmup = 10, total = 110;
    const double peak = 1.0;
    CHECK(lr_at(5, warmup, total, peak) == doctest::Approx(0.5));
    CHECK(lr_at(10, warmup, total, peak) == doctest::Approx(1.0));
    // cosine midpoint and endpoint
    CHECK(lr_at(60, warmup, total, peak) == doctest::Approx(0.5));
    CHECK(lr_at(110, warmup, total, peak) == doctest::Approx(0.0).epsilon(1e-12));
    // monotone decreasing after warmup
    double prev = lr_at(10, warmup, total, peak);
    for (std::size_t s = 11; s <= 110; ++s) {
        double cur = lr_at(s, warmup, total, peak);
        CHECK(cur <= prev + 1e-15);
        prev = cur;
    }
    CHECK_THROWS_AS(lr_at(5, 20, 10, 1.0), std::invalid_argument);
}

TEST_CASE("layer-wise lr decay multipliers") {
    const std::size_t depth = 4;
    const double lam = 0.75;
    CHECK(layer_decay_mult("head.w", depth, lam) == 1.0);
    CHECK(layer_decay_mult("probe.w", depth, lam) == 1.0);
    CHECK(layer_decay_mult("enc.norm.g", depth, lam) == 1.0);
    CHECK(layer_decay_mult("enc.blocks.3.attn.wq", depth, lam) == doctest::Approx(lam));
    CHECK(layer_decay_mult("enc.blocks.0.mlp.w1", depth, lam) == doctest::Approx(std::pow(lam, 4)));
    CHECK(layer_decay_mult("enc.patch_embed.w", depth, lam) == doctest::Approx(std::pow(lam, 5)));
    CHECK(layer_decay_mult("enc.cls", depth, lam) == doctest::Approx(std::pow(lam, 5)));
}

TEST_CASE("decay exemption by rank") {
    ParamStore store(Rng(0));
    Tensor w = store.create("w", {4, 4}, Init::xavier_uniform);
    Tensor b = store.create("b", {4}, Init::zeros);
    CHECK(!decay_exempt("w", w));
    CHECK(decay_exempt("b", b));
}

TEST_CASE("adamw first step moves by ~lr in the gradient sign direction") {
    ParamStore store(Rng(1));
    Tensor w = store.create("w", {2, 2}, Init::zeros);
    w.grad() = {1.0, -2.0, 0.5, -0.25};
    AdamWState state;
    adamw_step(store, state, {}, 0.1, 0.0, 0.9, 0.999);
    // bias-corrected m/v give exactly g/|g| on step one
    for (double v : w.data()) CHECK(std::abs(std::abs(v) - 0.1) < 1e-6);
    CHECK(w.data()[0] < 0.0);
    CHECK(w.data()[1] > 0.0);
}

TEST_CASE("adamw weight decay is decoupled") {
    ParamStore store(Rng(2));
    Tensor w = store.create("w", {2, 2}, Init::ones);
    w.grad() = {0.0, 0.0, 0.0, 0.0};
    AdamWState state;
    adamw_step(store, state, {}, 0.1, 0.5, 0.9, 0.999);
    // zero gradient: only the multiplicative shrink applies
    for (double v : w.data()) CHECK(v == doctest::Approx(1.0 - 0.1 * 0.5));

    SUBCASE("rank-1 parameters are exempt") {
        Tensor b = store.create("b", {4}, Init::ones);
        b.grad() = {0.0, 0.0, 0.0, 0.0};
        adamw_step(store, state, {}, 0.1, 0.5, 0.9, 0.999);
        for (double v : b.data()) CHECK(v == 1.0);
    }
}

TEST_CASE("adamw honors per-parameter lr multipliers") {
    ParamStore store(Rng(3));
    Tensor a = store.create("a", {1, 1}, Init::zeros);
    Tensor b = store.create("b2", {1, 1}, Init::zeros);
    a.grad() = {1.0};
    b.grad() = {1.0};
    AdamWState state;
    adamw_step(store, state, {{"a", 1.0}, {"b2", 0.5}}, 0.1, 0.0, 0.9, 0.999);
    CHECK(b.data()[0] == doctest::Approx(0.5 * a.data()[0]));
}

TEST_CASE("adamw converges on a quadratic") {
    ParamStore store(Rng(4));
    Tensor w = store.create("w", {1, 1}, Init::ones);
    w.data()[0] = 5.0;
    AdamWState state;
    for (int i = 0; i < 500; ++i) {
        w.grad() = {2.0 * (w.data()[0] - 3.0)};
        adamw_step(store, state, {}, 0.05, 0.0, 0.9, 0.999);
    }
    CHECK(w.data()[0] == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("sgd momentum matches the manual recurrence") {
    ParamStore store(Rng(5));
    Tensor w = store.create("w", {1, 1}, Init::zeros);
    w.data()[0] = 1.0;
    SgdState state;
    double x = 1.0, vel = 0.0;
    for (int i = 0; i < 5; ++i) {
        double g = 2.0 * x;
        w.grad() = {2.0 * w.data()[0]};
        sgd_momentum_step(store, state, 0.1, 0.9);
        vel = 0.9 * vel + g;
        x -= 0.1 * vel;
        CHECK(w.data()[0] == doctest::Approx(x).epsilon(1e-12));
    }
}

TEST_CASE("freeze_prefix controls trainability") {
    ParamStore store(Rng(6));
    const std::size_t depth = 3;
    store.create("enc.patch_embed.w", {4, 4}, Init::xavier_uniform);
    store.create("enc.cls", {4}, Init::zeros);
    for (std::size_t i = 0; i < depth; ++i) {
        std::string p = "enc.blocks." + std::to_string(i) + ".";
        store.create(p + "attn.wq", {4, 4}, Init::xavier_uniform);
        store.create(p + "mlp.w1", {4, 8}, Init::xavier_uniform);
        store.create(p + "ln2.g", {4}, Init::ones);
    }
    store.create("enc.norm.g", {4}, Init::ones);
    store.create("head.w", {4, 2}, Init::xavier_uniform);

    SUBCASE("k = 0 trains head and final norm only") {
        freeze_prefix(store, depth, 0);
        CHECK(store.get("head.w").requires_grad());
        CHECK(store.get("enc.norm.g").requires_grad());
        CHECK(!store.get("enc.patch_embed.w").requires_grad());
        for (std::size_t i = 0; i < depth; ++i)
            CHECK(!store.get("enc.blocks." + std::to_string(i) + ".attn.wq").requires_grad());
    }

    SUBCASE("k = 1 unfreezes the last block") {
        freeze_prefix(store, depth, 1);
        CHECK(store.get("enc.blocks.2.attn.wq").requires_grad());
        CHECK(!store.get("enc.blocks.1.attn.wq").requires_grad());
    }

    SUBCASE("k = depth unfreezes every block but not the embedding") {
        freeze_prefix(store, depth, depth);
        for (std::size_t i = 0; i < depth; ++i)
            CHECK(store.get("enc.blocks." + std::to_string(i) + ".attn.wq").requires_grad());
        CHECK(!store.get("enc.patch_embed.w").requires_grad());
    }

    SUBCASE("mlp_only trains just the last block's mlp half") {
        freeze_prefix(store, depth, 1, true);
        CHECK(store.get("enc.blocks.2.mlp.w1").requires_grad());
        CHECK(store.get("enc.blocks.2.ln2.g").requires_grad());
        CHECK(!store.get("enc.blocks.2.attn.wq").requires_grad());
        CHECK(!store.get("enc.blocks.1.mlp.w1").requires_grad());
    }

    SUBCASE("frozen parameters are untouched by optimizers") {
        freeze_prefix(store, depth, 0);
        auto before = store.get("enc.blocks.0.attn.wq").data();
        for (const auto& [name, t] : store.all()) {
            Tensor tt = t;
            tt.grad().assign(tt.size(), 1.0);
        }
        AdamWState adam;
        adamw_step(store, adam, {}, 0.1, 0.1, 0.9, 0.999);
        SgdState sgd;
        sgd_momentum_step(store, sgd, 0.1, 0.9);
        CHECK(store.get("enc.blocks.0.attn.wq").data() == before);
        CHECK(store.get("head.w").data() != before);
    }
}

TEST_CASE("ema tracks an exponential average") {
    ParamStore store(Rng(7));
    Tensor w = store.create("w", {2}, Init::zeros);
    EmaState ema;
    ema_init(ema, store);
    w.data() = {1.0, 2.0};
    ema_update(ema, store, 0.9);
    CHECK(ema.shadow["w"][0] == doctest::Approx(0.1));
    CHECK(ema.shadow["w"][1] == doctest::Approx(0.2));
    ema_update(ema, store, 0.9);
    CHECK(ema.shadow["w"][0] == doctest::Approx(0.9 * 0.1 + 0.1 * 1.0));
    ema_copy_to(ema, store);
    CHECK(w.data()[0] == doctest::Approx(0.19));
}
