// mae: masked-autoencoder pre-training, evaluation protocols, reconstruction
// visualization, dataset packing, and an analytic compute report.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mae/config.hpp"
#include "mae/flops.hpp"
#include "mae/image_io.hpp"
#include "mae/mae.hpp"
#include "mae/train.hpp"

namespace fs = std::filesystem;
using namespace mae;

namespace {

struct Common {
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string config;
    std::string out = ".";
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--seed", c.seed, "RNG seed (overrides config)")
        ->each([&c](const std::string&) { c.seed_set = true; });
    cmd->add_option("--config", c.config, "key = value config file");
    cmd->add_option("--out", c.out, "output directory");
}

RunConfig load_run_config(const Common& c) {
    RunConfig rc = c.config.empty() ? RunConfig{} : parse_config_file(c.config);
    if (c.seed_set) rc.seed = c.seed;
    return rc;
}

// ---------------------------------------------------------------------------
// pack

int cmd_pack(const std::string& image_dir, const std::string& labels_path,
             const std::string& out_path) {
    std::ifstream labels(labels_path);
    if (!labels) throw DataError("cannot open labels file: " + labels_path);
    PackedDataset ds;
    ds.channels = 3;
    std::string name;
    std::uint32_t label;
    while (labels >> name >> label) {
        RawImage img = read_ppm((fs::path(image_dir) / name).string());
        if (ds.size() == 0) {
            ds.height = img.height;
            ds.width = img.width;
        } else if (img.height != ds.height || img.width != ds.width) {
            throw DataError("image " + name + " is " + std::to_string(img.height) + "x" +
                            std::to_string(img.width) + ", expected " + std::to_string(ds.height) +
                            "x" + std::to_string(ds.width));
        }
        ds.labels.push_back(label);
        ds.pixels.push_back(std::move(img.pixels));
        ds.n_classes = std::max<std::size_t>(ds.n_classes, label + 1);
    }
    ds.compute_stats();
    save_packed(ds, out_path);
    std::cout << "packed " << ds.size() << " images (" << ds.height << "x" << ds.width << "x"
              << ds.channels << ", " << ds.n_classes << " classes) -> " << out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// training protocols

void write_outputs(const ParamStore& store, const MetricsLog& log, const std::string& out) {
    fs::create_directories(out);
    save_checkpoint(store, (fs::path(out) / "checkpoint.maeckpt").string());
    write_metrics_csv(log, (fs::path(out) / "metrics.csv").string());
}

int cmd_pretrain(const Common& c, const std::string& data_path, double mask_ratio,
                 const std::string& sampling, const std::string& target, long decoder_depth,
                 long decoder_width, long epochs) {
    RunConfig rc = load_run_config(c);
    if (mask_ratio >= 0.0) rc.mae.mask_ratio = mask_ratio;
    if (!sampling.empty()) {
        if (sampling == "random") rc.mae.sampling = Sampling::random;
        else if (sampling == "block") rc.mae.sampling = Sampling::block;
        else if (sampling == "grid") rc.mae.sampling = Sampling::grid;
        else throw ConfigError("unknown sampling '" + sampling + "'");
    }
    if (!target.empty()) {
        if (target == "raw_pixels") rc.mae.target_kind = TargetKind::raw_pixels;
        else if (target == "normalized_pixels") rc.mae.target_kind = TargetKind::normalized_pixels;
        else if (target == "pca") rc.mae.target_kind = TargetKind::pca;
        else throw ConfigError("unknown target '" + target + "'");
    }
    if (decoder_depth > 0) rc.mae.decoder_depth = static_cast<std::size_t>(decoder_depth);
    if (decoder_width > 0) rc.mae.decoder_width = static_cast<std::size_t>(decoder_width);

    PackedDataset train = load_packed(data_path);
    rc.mae.encoder.channels = train.channels;
    rc.mae.validate();

    TrainRecipe recipe = pretrain_recipe();
    rc.apply_recipe(recipe);
    if (epochs > 0) recipe.total_epochs = static_cast<std::size_t>(epochs);
    if (recipe.warmup_epochs > recipe.total_epochs) recipe.warmup_epochs = recipe.total_epochs / 10;

    std::size_t n = rc.mae.encoder.n_patches();
    std::cout << "patches " << n << ", mask ratio " << rc.mae.mask_ratio << ", len_keep "
              << keep_count(n, rc.mae.mask_ratio) << "\n";

    ProtocolRun run;
    run.kind = Protocol::pretrain;
    run.cfg = rc.mae;
    run.recipe = recipe;
    run.train = &train;
    run.seed = rc.seed;
    ParamStore store(Rng(rc.seed).fork("init"));
    MetricsLog log = run_protocol(run, store);
    write_outputs(store, log, c.out);
    if (!log.empty())
        std::cout << "final " << log.back().metric << " " << log.back().value << "\n";
    return 0;
}

int cmd_classify(Protocol kind, const Common& c, const std::string& data_path,
                 const std::string& eval_path, const std::string& checkpoint, long epochs,
                 long blocks, bool mlp_only) {
    RunConfig rc = load_run_config(c);
    PackedDataset train = load_packed(data_path);
    rc.mae.encoder.channels = train.channels;
    PackedDataset eval_ds;
    bool has_eval = !eval_path.empty();
    if (has_eval) eval_ds = load_packed(eval_path);

    TrainRecipe recipe = kind == Protocol::linprobe ? linprobe_recipe()
                         : kind == Protocol::supervised_scratch ? scratch_recipe()
                                                                : finetune_recipe();
    rc.apply_recipe(recipe);
    if (epochs > 0) recipe.total_epochs = static_cast<std::size_t>(epochs);
    if (recipe.warmup_epochs > recipe.total_epochs) recipe.warmup_epochs = recipe.total_epochs / 10;
    if (kind == Protocol::partial_ft) {
        MAE_CHECK(blocks >= 0 && static_cast<std::size_t>(blocks) <= rc.mae.encoder.depth,
                  "--blocks must be in [0, " << rc.mae.encoder.depth << "]");
        recipe.tuned_blocks = static_cast<std::size_t>(blocks);
        recipe.mlp_only = mlp_only;
    }

    ProtocolRun run;
    run.kind = kind;
    run.cfg = rc.mae;
    run.recipe = recipe;
    run.train = &train;
    run.eval = has_eval ? &eval_ds : nullptr;
    run.seed = rc.seed;
    run.init_checkpoint = checkpoint;
    ParamStore store(Rng(rc.seed).fork("init"));
    MetricsLog log = run_protocol(run, store);
    write_outputs(store, log, c.out);
    for (auto it = log.rbegin(); it != log.rend(); ++it)
        if (it->split == "eval") {
            std::cout << "final eval " << it->metric << " " << it->value << "\n";
            break;
        }
    return 0;
}

// ---------------------------------------------------------------------------
// reconstruction triptychs

constexpr std::size_t kSeparator = 4;  // black gap between panels, in pixels

std::vector<std::uint8_t> to_bytes(const std::vector<double>& unit) {
    std::vector<std::uint8_t> out(unit.size());
    for (std::size_t i = 0; i < unit.size(); ++i)
        out[i] = static_cast<std::uint8_t>(std::clamp(unit[i], 0.0, 1.0) * 255.0 + 0.5);
    return out;
}

int cmd_reconstruct(const Common& c, const std::string& data_path, const std::string& checkpoint,
                    std::vector<std::size_t> indices, double mask_ratio) {
    RunConfig rc = load_run_config(c);
    PackedDataset ds = load_packed(data_path);
    rc.mae.encoder.channels = ds.channels;
    if (mask_ratio >= 0.0) rc.mae.mask_ratio = mask_ratio;
    rc.mae.validate();

    ParamStore store(Rng(rc.seed).fork("init"));
    MaeParams params = make_mae(store, rc.mae);
    load_into_strict(store, checkpoint, "");

    std::size_t side = rc.mae.encoder.image_size;
    std::size_t p = rc.mae.encoder.patch_size;
    std::size_t grid = rc.mae.encoder.grid_side();
    std::size_t cch = ds.channels;
    AugmentSpec spec = eval_spec(ds, side);

    PcaBasis basis;
    bool has_basis = false;
    if (rc.mae.target_kind == TargetKind::pca) {
        Rng r0(0);
        std::vector<std::size_t> all_ids(ds.size());
        std::iota(all_ids.begin(), all_ids.end(), 0);
        Tensor images = make_batch(ds, all_ids, spec, r0);
        Tensor patches = patchify_batch(images, p);
        basis = pca_fit(reshape(patches, {patches.shape()[0] * patches.shape()[1], patches.shape()[2]}),
                        rc.mae.pca_k);
        has_basis = true;
    }

    fs::create_directories(c.out);
    for (std::size_t idx : indices) {
        if (idx >= ds.size())
            throw DataError("index " + std::to_string(idx) + " out of range (dataset has " +
                            std::to_string(ds.size()) + " images)");
        Rng plan_rng = Rng(rc.seed).fork("reconstruct").fork(idx);
        std::vector<MaskPlan> plans{make_mask_plan(rc.mae.sampling, grid, rc.mae.mask_ratio, plan_rng)};

        Rng batch_rng(0);
        Tensor images = make_batch(ds, {idx}, spec, batch_rng);
        Tensor latents = encode_visible(images, plans, params);
        Tensor pred = decode_full(latents, plans, params);  // [1, n, target_dim]

        std::size_t n = grid * grid, pd = p * p * cch;
        std::vector<double> pred_patches(n * pd);
        Tensor gt_patches = patchify_batch(images, p);  // standardized ground truth
        switch (rc.mae.target_kind) {
            case TargetKind::raw_pixels:
                pred_patches = pred.data();
                break;
            case TargetKind::normalized_pixels:
                // invert the per-patch normalization with ground-truth statistics
                for (std::size_t r = 0; r < n; ++r) {
                    const double* gt = gt_patches.data().data() + r * pd;
                    double mu = 0.0;
                    for (std::size_t j = 0; j < pd; ++j) mu += gt[j];
                    mu /= static_cast<double>(pd);
                    double var = 0.0;
                    for (std::size_t j = 0; j < pd; ++j) var += (gt[j] - mu) * (gt[j] - mu);
                    var /= static_cast<double>(pd);
                    double sd = std::sqrt(var + rc.mae.norm_eps);
                    for (std::size_t j = 0; j < pd; ++j)
                        pred_patches[r * pd + j] = pred.data()[r * pd + j] * sd + mu;
                }
                break;
            case TargetKind::pca:
                for (std::size_t r = 0; r < n; ++r) {
                    std::vector<double> coeffs(pred.data().begin() + static_cast<std::ptrdiff_t>(r * rc.mae.pca_k),
                                               pred.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * rc.mae.pca_k));
                    auto row = pca_reconstruct_row(basis, coeffs);
                    std::copy(row.begin(), row.end(), pred_patches.begin() + static_cast<std::ptrdiff_t>(r * pd));
                }
                break;
        }
        (void)has_basis;

        Tensor recon_img = unpatchify(Tensor::from({n, pd}, std::move(pred_patches)), grid, grid, p, cch);
        std::vector<double> recon = recon_img.data();
        unstandardize(recon, cch, ds.channel_mean, ds.channel_std);

        std::vector<double> gt = center_crop(decode_pixels(ds.pixels[idx]), ds.height, ds.width, cch, side);
        std::vector<std::uint8_t> gt_bytes = to_bytes(gt);
        std::vector<std::uint8_t> recon_bytes = to_bytes(recon);
        std::vector<std::uint8_t> masked_bytes = gt_bytes;
        for (std::size_t gy = 0; gy < grid; ++gy)
            for (std::size_t gx = 0; gx < grid; ++gx) {
                if (!plans[0].mask[gy * grid + gx]) continue;
                for (std::size_t py = 0; py < p; ++py)
                    for (std::size_t px = 0; px < p; ++px)
                        for (std::size_t ci = 0; ci < cch; ++ci)
                            masked_bytes[((gy * p + py) * side + gx * p + px) * cch + ci] = 128;
            }

        // left masked input, middle reconstruction, right ground truth
        std::size_t out_w = 3 * side + 2 * kSeparator;
        std::vector<std::uint8_t> trip(side * out_w * 3, 0);
        auto blit = [&](const std::vector<std::uint8_t>& panel, std::size_t x_off) {
            for (std::size_t y = 0; y < side; ++y)
                for (std::size_t x = 0; x < side; ++x)
                    for (std::size_t ci = 0; ci < 3; ++ci)
                        trip[(y * out_w + x_off + x) * 3 + ci] =
                            panel[(y * side + x) * cch + (cch == 3 ? ci : 0)];
        };
        blit(masked_bytes, 0);
        blit(recon_bytes, side + kSeparator);
        blit(gt_bytes, 2 * (side + kSeparator));
        std::string path = (fs::path(c.out) / ("recon_" + std::to_string(idx) + ".png")).string();
        write_png_rgb(path, trip, out_w, side);
        std::cout << "wrote " << path << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// compute report

double time_desk_step(bool mask_tokens_in_encoder, const MaeConfig& cfg, const MaeParams& params,
                      ParamStore& store, const Tensor& images, const std::vector<MaskPlan>& plans) {
    Tensor target = build_target(images, cfg, nullptr);
    std::vector<std::vector<std::uint8_t>> masks;
    for (const auto& plan : plans) masks.push_back(plan.mask);
    auto step = [&] {
        Tensor latents = mask_tokens_in_encoder ? encode_with_mask_tokens(images, plans, params)
                                                : encode_visible(images, plans, params);
        Tensor pred = mask_tokens_in_encoder ? decode_all_tokens(latents, params)
                                             : decode_full(latents, plans, params);
        Tensor loss = masked_mse(pred, target, masks);
        store.zero_grads();
        backward(loss);
    };
    step();  // warmup
    double best = 1e30;
    for (int rep = 0; rep < 3; ++rep) {
        auto t0 = std::chrono::steady_clock::now();
        step();
        auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

int cmd_flops(const Common& c, bool measure) {
    struct Preset {
        const char* name;
        ViTConfig cfg;
    };
    const Preset presets[] = {
        {"tiny-desk", vit_tiny_desk()},
        {"vit-b", vit_base()},
        {"vit-l", vit_large()},
        {"vit-h", vit_huge()},
    };
    const double ratios[] = {0.0, 0.5, 0.75, 0.9};
    const std::size_t dec_depths[] = {1, 2, 4, 8};
    const std::size_t dec_width = 512;

    std::ostringstream csv;
    csv << "preset,n_patches,mask_ratio,decoder_depth,decoder_width,total_gflops,"
           "mask_token_ratio,decoder_per_token_fraction\n";
    std::printf("%-10s %5s %6s %6s %6s %12s %8s %8s\n", "preset", "n", "ratio", "ddep", "dwid",
                "gflops", "speedup", "dec/tok");
    for (const auto& preset : presets) {
        std::size_t n = preset.cfg.n_patches();
        for (double r : ratios)
            for (std::size_t dd : dec_depths) {
                double total =
                    flops_estimate(preset.cfg, dd, dec_width, n, r, false).total() / 1e9;
                double ratio = mask_token_flops_ratio(preset.cfg, dd, dec_width, n, r);
                double frac = decoder_per_token_fraction(preset.cfg, dd, dec_width, n);
                std::printf("%-10s %5zu %6.2f %6zu %6zu %12.3f %7.2fx %8.3f\n", preset.name, n, r,
                            dd, dec_width, total, ratio, frac);
                char line[256];
                std::snprintf(line, sizeof(line), "%s,%zu,%g,%zu,%zu,%.6g,%.6g,%.6g\n",
                              preset.name, n, r, dd, dec_width, total, ratio, frac);
                csv << line;
            }
    }
    if (c.out != ".") {
        fs::create_directories(c.out);
        std::ofstream os((fs::path(c.out) / "flops.csv").string());
        os << csv.str();
    }

    if (measure) {
        MaeConfig cfg;
        cfg.encoder = vit_tiny_desk();
        cfg.decoder_depth = 2;
        cfg.decoder_width = 48;
        cfg.decoder_heads = 4;
        ParamStore store(Rng(1).fork("init"));
        MaeParams params = make_mae(store, cfg);
        Rng rng(2);
        std::size_t b = 8, s = cfg.encoder.image_size;
        Tensor images = Tensor::zeros({b, s, s, cfg.encoder.channels});
        for (double& v : images.data()) v = rng.uniform(-1.0, 1.0);
        std::vector<MaskPlan> plans;
        for (std::size_t i = 0; i < b; ++i) {
            Rng pr = rng.fork(i);
            plans.push_back(make_mask_plan(Sampling::random, cfg.encoder.grid_side(), 0.75, pr));
        }
        double with_tokens = time_desk_step(true, cfg, params, store, images, plans);
        double without = time_desk_step(false, cfg, params, store, images, plans);
        std::printf("measured desk step: with mask tokens %.4fs, without %.4fs, speedup %.2fx\n",
                    with_tokens, without, with_tokens / without);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked-autoencoder pre-training and evaluation toolkit"};
    app.require_subcommand(1);

    // pack
    auto* pack = app.add_subcommand("pack", "pack PPM images + labels into a dataset file");
    std::string pack_dir, pack_labels, pack_out;
    pack->add_option("images", pack_dir, "directory of P6 PPM images")->required();
    pack->add_option("labels", pack_labels, "text file: <filename> <label> per line")->required();
    pack->add_option("output", pack_out, "output dataset path")->required();

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "masked-autoencoder pre-training");
    Common pre_c;
    add_common(pre, pre_c);
    std::string pre_data, pre_sampling, pre_target;
    double pre_ratio = -1.0;
    long pre_dd = 0, pre_dw = 0, pre_epochs = 0;
    pre->add_option("--data", pre_data, "packed training dataset")->required();
    pre->add_option("--mask-ratio", pre_ratio, "fraction of patches removed (default 0.75)");
    pre->add_option("--sampling", pre_sampling, "random | block | grid");
    pre->add_option("--target", pre_target, "raw_pixels | normalized_pixels | pca");
    pre->add_option("--decoder-depth", pre_dd, "decoder blocks (default 8)");
    pre->add_option("--decoder-width", pre_dw, "decoder width (default 512)");
    pre->add_option("--epochs", pre_epochs, "override training epochs");

    // classifier protocols
    auto add_classify = [&app](const char* name, const char* help) {
        auto* cmd = app.add_subcommand(name, help);
        return cmd;
    };
    struct ClassifyArgs {
        Common c;
        std::string data, eval, checkpoint;
        long epochs = 0, blocks = 1;
        bool mlp_only = false;
    };
    ClassifyArgs lin, fin, part;
    auto* linprobe = add_classify("linprobe", "linear probe on frozen encoder features");
    auto* finetune = add_classify("finetune", "end-to-end fine-tuning from a checkpoint");
    auto* partialft = add_classify("partialft", "fine-tune only the last k encoder blocks");
    auto bind_classify = [](CLI::App* cmd, ClassifyArgs& a, bool partial) {
        add_common(cmd, a.c);
        cmd->add_option("--data", a.data, "packed training dataset")->required();
        cmd->add_option("--eval", a.eval, "packed held-out dataset");
        cmd->add_option("--checkpoint", a.checkpoint, "pre-trained encoder checkpoint");
        cmd->add_option("--epochs", a.epochs, "override training epochs");
        if (partial) {
            cmd->add_option("--blocks", a.blocks, "number of trainable final blocks");
            cmd->add_flag("--mlp-only", a.mlp_only, "train only the last block's MLP sub-block");
        }
    };
    bind_classify(linprobe, lin, false);
    bind_classify(finetune, fin, false);
    bind_classify(partialft, part, true);

    // reconstruct
    auto* rec = app.add_subcommand("reconstruct", "write masked/reconstruction/truth triptychs");
    Common rec_c;
    add_common(rec, rec_c);
    std::string rec_data, rec_ckpt;
    std::vector<std::size_t> rec_indices;
    double rec_ratio = -1.0;
    rec->add_option("--data", rec_data, "packed dataset")->required();
    rec->add_option("--checkpoint", rec_ckpt, "pre-trained checkpoint")->required();
    rec->add_option("--indices", rec_indices, "dataset indices to render")->required()->delimiter(',');
    rec->add_option("--mask-ratio", rec_ratio, "override the masking ratio");

    // flops
    auto* flops = app.add_subcommand("flops", "analytic compute report and measured timings");
    Common flops_c;
    add_common(flops, flops_c);
    bool flops_measure = false;
    flops->add_flag("--measure", flops_measure, "time one desk-scale training step");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*pack) return cmd_pack(pack_dir, pack_labels, pack_out);
        if (*pre)
            return cmd_pretrain(pre_c, pre_data, pre_ratio, pre_sampling, pre_target, pre_dd,
                                pre_dw, pre_epochs);
        if (*linprobe)
            return cmd_classify(Protocol::linprobe, lin.c, lin.data, lin.eval, lin.checkpoint,
                                lin.epochs, 0, false);
        if (*finetune)
            return cmd_classify(Protocol::finetune, fin.c, fin.data, fin.eval, fin.checkpoint,
                                fin.epochs, 0, false);
        if (*partialft)
            return cmd_classify(Protocol::partial_ft, part.c, part.data, part.eval,
                                part.checkpoint, part.epochs, part.blocks, part.mlp_only);
        if (*rec) return cmd_reconstruct(rec_c, rec_data, rec_ckpt, rec_indices, rec_ratio);
        if (*flops) return cmd_flops(flops_c, flops_measure);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
