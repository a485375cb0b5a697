#include "doctest.h"
#include "mae/config.hpp"

using namespace mae;

TEST_CASE("defaults match the documented model") {
    RunConfig cfg;
    CHECK(cfg.mae.decoder_depth == 8);
    CHECK(cfg.mae.decoder_width == 512);
    CHECK(cfg.mae.mask_ratio == 0.75);
    CHECK(cfg.mae.sampling == Sampling::random);
    CHECK(cfg.mae.target_kind == TargetKind::raw_pixels);
    CHECK(cfg.mae.pca_k == 96);
    CHECK(cfg.seed == 0);
}

TEST_CASE("model keys are applied") {
    RunConfig cfg = parse_config_text(
        "image_size = 16\n"
        "patch_size = 4\n"
        "depth = 2\n"
        "width = 32\n"
        "heads = 2\n"
        "decoder_depth = 2\n"
        "decoder_width = 48\n"
        "decoder_heads = 4\n"
        "mask_ratio = 0.6\n"
        "sampling = block\n"
        "target = normalized_pixels\n"
        "seed = 7\n");
    CHECK(cfg.mae.encoder.image_size == 16);
    CHECK(cfg.mae.encoder.depth == 2);
    CHECK(cfg.mae.decoder_width == 48);
    CHECK(cfg.mae.mask_ratio == doctest::Approx(0.6));
    CHECK(cfg.mae.sampling == Sampling::block);
    CHECK(cfg.mae.target_kind == TargetKind::normalized_pixels);
    CHECK(cfg.seed == 7);
}

TEST_CASE("comments and blank lines are skipped") {
    RunConfig cfg = parse_config_text("# a comment\n\n   \nseed = 3\n  # another\n");
    CHECK(cfg.seed == 3);
}

TEST_CASE("unknown keys are hard errors with line numbers") {
    CHECK_THROWS_WITH_AS(parse_config_text("seed = 1\nmask_ration = 0.5\n"),
                         doctest::Contains("line 2"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("learning_rate = 0.1\n"),
                         doctest::Contains("unknown key"), ConfigError);
}

TEST_CASE("malformed lines and values") {
    CHECK_THROWS_WITH_AS(parse_config_text("just some words\n"), doctest::Contains("line 1"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("\nmask_ratio = banana\n"), doctest::Contains("line 2"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("sampling = diagonal\n"),
                         doctest::Contains("unknown sampling"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("target = wavelet\n"), doctest::Contains("unknown target"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("base_lr = fast\n"), doctest::Contains("line 1"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("optimizer = lion\n"), doctest::Contains("line 1"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("flip = maybe\n"), doctest::Contains("boolean"),
                         ConfigError);
}

TEST_CASE("recipe keys overlay a preset") {
    RunConfig cfg = parse_config_text(
        "base_lr = 0.01\n"
        "epochs = 50\n"
        "warmup_epochs = 5\n"
        "batch_size = 32\n"
        "optimizer = sgd_momentum\n"
        "layer_decay = 0.65\n"
        "mixup = 0.0\n"
        "augment = none\n"
        "flip = false\n");
    TrainRecipe recipe = finetune_recipe();
    cfg.apply_recipe(recipe);
    CHECK(recipe.base_lr == doctest::Approx(0.01));
    CHECK(recipe.total_epochs == 50);
    CHECK(recipe.warmup_epochs == 5);
    CHECK(recipe.batch_size == 32);
    CHECK(recipe.optimizer == "sgd_momentum");
    CHECK(recipe.layer_decay == doctest::Approx(0.65));
    CHECK(recipe.mixup_alpha == 0.0);
    CHECK(recipe.augment.mode == AugmentMode::none_center_crop);
    CHECK(!recipe.augment.flip);
    // untouched preset values survive
    CHECK(recipe.cutmix_alpha == doctest::Approx(1.0));
    CHECK(recipe.label_smoothing == doctest::Approx(0.1));
}

TEST_CASE("missing config file is a config error") {
    CHECK_THROWS_AS(parse_config_file("does_not_exist.cfg"), ConfigError);
}

TEST_CASE("recipe presets carry the documented values") {
    TrainRecipe pre = pretrain_recipe();
    CHECK(pre.optimizer == "adamw");
    CHECK(pre.base_lr == doctest::Approx(1.5e-4));
    CHECK(pre.weight_decay == doctest::Approx(0.05));
    CHECK(pre.beta1 == doctest::Approx(0.9));
    CHECK(pre.beta2 == doctest::Approx(0.95));
    CHECK(pre.batch_size == 4096);
    CHECK(pre.warmup_epochs == 40);
    CHECK(pre.total_epochs == 800);

    TrainRecipe fin = finetune_recipe();
    CHECK(fin.base_lr == doctest::Approx(1e-3));
    CHECK(fin.beta2 == doctest::Approx(0.999));
    CHECK(fin.layer_decay == doctest::Approx(0.75));
    CHECK(fin.label_smoothing == doctest::Approx(0.1));
    CHECK(fin.mixup_alpha == doctest::Approx(0.8));
    CHECK(fin.cutmix_alpha == doctest::Approx(1.0));
    CHECK(fin.drop_path_rate == doctest::Approx(0.1));
    CHECK(fin.warmup_epochs == 5);
    CHECK(fin.total_epochs == 100);

    TrainRecipe lin = linprobe_recipe();
    CHECK(lin.optimizer == "sgd_momentum");
    CHECK(lin.base_lr == doctest::Approx(0.1));
    CHECK(lin.weight_decay == 0.0);
    CHECK(lin.momentum == doctest::Approx(0.9));
    CHECK(lin.warmup_epochs == 10);
    CHECK(lin.total_epochs == 90);

    TrainRecipe scratch = scratch_recipe();
    CHECK(scratch.weight_decay == doctest::Approx(0.3));
    CHECK(scratch.ema_decay == doctest::Approx(0.9999));
    CHECK(scratch.warmup_epochs == 20);
    CHECK(scratch.total_epochs == 300);
}
