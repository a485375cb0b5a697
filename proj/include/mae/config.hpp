#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "mae/mae.hpp"
#include "mae/train.hpp"

namespace mae {

// Line-oriented `key = value` run configuration. Unknown keys are hard
// errors so sweep typos cannot silently fall back to defaults.
struct RunConfig {
    MaeConfig mae;  // defaults: Tiny-desk encoder, decoder 8x512, ratio 0.75,
                    // random sampling, unnormalized pixels
    std::uint64_t seed = 0;
    std::map<std::string, std::string> recipe_keys;  // applied onto a protocol preset

    void apply_recipe(TrainRecipe& r) const;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

template <typename T>
T parse_number(const std::string& value, const std::string& key, std::size_t line) {
    std::istringstream is(value);
    T v;
    if (!(is >> v) || !(is >> std::ws).eof())
        throw ConfigError("line " + std::to_string(line) + ": bad value '" + value + "' for key '" +
                          key + "'");
    return v;
}

inline bool parse_bool(const std::string& value, const std::string& key, std::size_t line) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("line " + std::to_string(line) + ": bad boolean '" + value + "' for key '" +
                      key + "'");
}

}  // namespace detail

inline void RunConfig::apply_recipe(TrainRecipe& r) const {
    for (const auto& [key, value] : recipe_keys) {
        std::size_t line = 0;  // values were validated at parse time
        if (key == "optimizer") {
            if (value != "adamw" && value != "sgd_momentum")
                throw ConfigError("unknown optimizer '" + value + "'");
            r.optimizer = value;
        } else if (key == "base_lr") r.base_lr = detail::parse_number<double>(value, key, line);
        else if (key == "weight_decay") r.weight_decay = detail::parse_number<double>(value, key, line);
        else if (key == "beta1") r.beta1 = detail::parse_number<double>(value, key, line);
        else if (key == "beta2") r.beta2 = detail::parse_number<double>(value, key, line);
        else if (key == "momentum") r.momentum = detail::parse_number<double>(value, key, line);
        else if (key == "batch_size") r.batch_size = detail::parse_number<std::size_t>(value, key, line);
        else if (key == "warmup_epochs") r.warmup_epochs = detail::parse_number<std::size_t>(value, key, line);
        else if (key == "epochs") r.total_epochs = detail::parse_number<std::size_t>(value, key, line);
        else if (key == "layer_decay") r.layer_decay = detail::parse_number<double>(value, key, line);
        else if (key == "blocks") r.tuned_blocks = detail::parse_number<std::size_t>(value, key, line);
        else if (key == "mlp_only") r.mlp_only = detail::parse_bool(value, key, line);
        else if (key == "label_smoothing") r.label_smoothing = detail::parse_number<double>(value, key, line);
        else if (key == "mixup") r.mixup_alpha = detail::parse_number<double>(value, key, line);
        else if (key == "cutmix") r.cutmix_alpha = detail::parse_number<double>(value, key, line);
        else if (key == "drop_path") r.drop_path_rate = detail::parse_number<double>(value, key, line);
        else if (key == "ema_decay") r.ema_decay = detail::parse_number<double>(value, key, line);
        else if (key == "augment") {
            if (value == "none") r.augment.mode = AugmentMode::none_center_crop;
            else if (value == "fixed") r.augment.mode = AugmentMode::crop_fixed_size;
            else if (value == "random") r.augment.mode = AugmentMode::crop_random_size;
            else throw ConfigError("unknown augment mode '" + value + "'");
        } else if (key == "flip") r.augment.flip = detail::parse_bool(value, key, line);
        else if (key == "scale_lo") r.augment.scale_lo = detail::parse_number<double>(value, key, line);
        else if (key == "scale_hi") r.augment.scale_hi = detail::parse_number<double>(value, key, line);
    }
}

inline RunConfig parse_config_text(const std::string& text) {
    static const std::map<std::string, int> known = {
        // model
        {"image_size", 0}, {"patch_size", 0}, {"channels", 0}, {"depth", 0}, {"width", 0},
        {"heads", 0}, {"mlp_ratio", 0}, {"decoder_depth", 0}, {"decoder_width", 0},
        {"decoder_heads", 0}, {"mask_ratio", 0}, {"sampling", 0}, {"target", 0}, {"pca_k", 0},
        {"norm_eps", 0}, {"seed", 0},
        // recipe
        {"optimizer", 1}, {"base_lr", 1}, {"weight_decay", 1}, {"beta1", 1}, {"beta2", 1},
        {"momentum", 1}, {"batch_size", 1}, {"warmup_epochs", 1}, {"epochs", 1}, {"layer_decay", 1},
        {"blocks", 1}, {"mlp_only", 1}, {"label_smoothing", 1}, {"mixup", 1}, {"cutmix", 1},
        {"drop_path", 1}, {"ema_decay", 1}, {"augment", 1}, {"flip", 1}, {"scale_lo", 1},
        {"scale_hi", 1},
    };

    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::string stripped = detail::trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" +
                              stripped + "'");
        std::string key = detail::trim(stripped.substr(0, eq));
        std::string value = detail::trim(stripped.substr(eq + 1));
        auto it = known.find(key);
        if (it == known.end())
            throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        if (it->second == 1) {
            cfg.recipe_keys[key] = value;
            // validate recipe values eagerly for a line-numbered error
            TrainRecipe probe;
            RunConfig tmp;
            tmp.recipe_keys[key] = value;
            try {
                tmp.apply_recipe(probe);
            } catch (const ConfigError& e) {
                throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
            }
            continue;
        }
        if (key == "image_size") cfg.mae.encoder.image_size = detail::parse_number<std::size_t>(value, key, line_no);
        else if (key == "patch_size") cfg.mae.encoder.patch_size = detail::parse_number<std::size_t>(value, key, line_no);
        else if (key == "channels") cfg.mae.encoder.channels = detail::parse_number<std::size_t>(value, key, line_no);
        else if (key == "depth") cfg.mae.encoder.depth = detail::parse_number<std::size_t>(value, key, line_no);
        else if (key == "width") cfg.mae.encoder.width = detail::parse_number<std::size_t>(value, key, line_no);
        else if (key == "heads") cfg.mae.encoder.heads = detail::parse_number<std::size_t>(value, key, line_no);
        else if (key == "mlp_ratio") cfg.mae.encoder.mlp_ratio = detail::parse_number<double>(value, key, line_no);
        else if (key == "decoder_depth") cfg.mae.decoder_depth = detail::parse_number<std::size_t>(value, key, line_no);
        else if (key == "decoder_width") cfg.mae.decoder_width = detail::parse_number<std::size_t>(value, key, line_no);
        else if (key == "decoder_heads") cfg.mae.decoder_heads = detail::parse_number<std::size_t>(value, key, line_no);
        else if (key == "mask_ratio") cfg.mae.mask_ratio = detail::parse_number<double>(value, key, line_no);
        else if (key == "pca_k") cfg.mae.pca_k = detail::parse_number<std::size_t>(value, key, line_no);
        else if (key == "norm_eps") cfg.mae.norm_eps = detail::parse_number<double>(value, key, line_no);
        else if (key == "seed") cfg.seed = detail::parse_number<std::uint64_t>(value, key, line_no);
        else if (key == "sampling") {
            if (value == "random") cfg.mae.sampling = Sampling::random;
            else if (value == "block") cfg.mae.sampling = Sampling::block;
            else if (value == "grid") cfg.mae.sampling = Sampling::grid;
            else throw ConfigError("line " + std::to_string(line_no) + ": unknown sampling '" + value + "'");
        } else if (key == "target") {
            if (value == "raw_pixels") cfg.mae.target_kind = TargetKind::raw_pixels;
            else if (value == "normalized_pixels") cfg.mae.target_kind = TargetKind::normalized_pixels;
            else if (value == "pca") cfg.mae.target_kind = TargetKind::pca;
            else throw ConfigError("line " + std::to_string(line_no) + ": unknown target '" + value + "'");
        }
    }
    return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

}  // namespace mae
