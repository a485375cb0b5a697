#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mae/data.hpp"
#include "mae/mae.hpp"
#include "mae/optim.hpp"

namespace mae {

struct TrainRecipe {
    std::string optimizer = "adamw";  // or "sgd_momentum"
    double base_lr = 1.5e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9, beta2 = 0.95;
    double momentum = 0.9;
    std::size_t batch_size = 64;
    std::size_t warmup_epochs = 5;
    std::size_t total_epochs = 100;
    double layer_decay = 1.0;
    std::size_t tuned_blocks = 0;  // partial fine-tuning; depth means full
    bool mlp_only = false;
    double label_smoothing = 0.0;
    double mixup_alpha = 0.0;
    double cutmix_alpha = 0.0;
    double drop_path_rate = 0.0;
    double ema_decay = 0.0;  // 0 disables
    AugmentSpec augment;

    void validate() const {
        MAE_CHECK(warmup_epochs <= total_epochs,
                  "warmup " << warmup_epochs << " exceeds total epochs " << total_epochs);
        MAE_CHECK(layer_decay > 0.0 && layer_decay <= 1.0, "layer decay outside (0,1]");
    }
};

// reference recipe presets (desk runs override epochs/batch)
inline TrainRecipe pretrain_recipe() {
    TrainRecipe r;
    r.optimizer = "adamw";
    r.base_lr = 1.5e-4;
    r.weight_decay = 0.05;
    r.beta1 = 0.9;
    r.beta2 = 0.95;
    r.batch_size = 4096;
    r.warmup_epochs = 40;
    r.total_epochs = 800;
    r.augment = AugmentSpec{AugmentMode::crop_random_size, true, 32, 0.2, 1.0};
    return r;
}

inline TrainRecipe finetune_recipe() {
    TrainRecipe r;
    r.optimizer = "adamw";
    r.base_lr = 1e-3;
    r.weight_decay = 0.05;
    r.beta1 = 0.9;
    r.beta2 = 0.999;
    r.batch_size = 1024;
    r.warmup_epochs = 5;
    r.total_epochs = 100;
    r.layer_decay = 0.75;
    r.label_smoothing = 0.1;
    r.mixup_alpha = 0.8;
    r.cutmix_alpha = 1.0;
    r.drop_path_rate = 0.1;
    r.augment = AugmentSpec{AugmentMode::crop_random_size, true, 32, 0.2, 1.0};
    return r;
}

// LARS replaced by SGD with momentum 0.9 (works similarly at moderate batch)
inline TrainRecipe linprobe_recipe() {
    TrainRecipe r;
    r.optimizer = "sgd_momentum";
    r.base_lr = 0.1;
    r.weight_decay = 0.0;
    r.momentum = 0.9;
    r.batch_size = 16384;
    r.warmup_epochs = 10;
    r.total_epochs = 90;
    r.augment = AugmentSpec{AugmentMode::none_center_crop, false, 32, 0.2, 1.0};
    return r;
}

inline TrainRecipe scratch_recipe() {
    TrainRecipe r;
    r.optimizer = "adamw";
    r.base_lr = 1e-4;
    r.weight_decay = 0.3;
    r.beta1 = 0.9;
    r.beta2 = 0.95;
    r.batch_size = 4096;
    r.warmup_epochs = 20;
    r.total_epochs = 300;
    r.label_smoothing = 0.1;
    r.mixup_alpha = 0.8;
    r.cutmix_alpha = 1.0;
    r.drop_path_rate = 0.1;
    r.ema_decay = 0.9999;
    r.augment = AugmentSpec{AugmentMode::crop_random_size, true, 32, 0.2, 1.0};
    return r;
}

// ---------------------------------------------------------------------------
// metrics log

struct MetricRow {
    std::size_t epoch;
    std::string split;
    std::string metric;
    double value;
};

using MetricsLog = std::vector<MetricRow>;

inline void write_metrics_csv(const MetricsLog& log, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open metrics file for writing: " + path);
    os << "epoch,split,metric,value\n";
    char buf[64];
    for (const auto& row : log) {
        std::snprintf(buf, sizeof(buf), "%.6g", row.value);
        os << row.epoch << ',' << row.split << ',' << row.metric << ',' << buf << '\n';
    }
}

// ---------------------------------------------------------------------------
// classification losses and batch mixing

inline std::vector<double> smoothed_one_hot(const std::vector<std::uint32_t>& labels,
                                            std::size_t n_classes, double smoothing) {
    std::vector<double> y(labels.size() * n_classes, smoothing / static_cast<double>(n_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) y[i * n_classes + labels[i]] += 1.0 - smoothing;
    return y;
}

// mean over the batch of -sum_c y_c log p_c
inline Tensor cross_entropy(const Tensor& logits, const std::vector<double>& soft_labels) {
    MAE_CHECK(logits.size() == soft_labels.size(), "cross_entropy: label matrix size mismatch");
    Tensor logp = log_softmax_rows(logits);
    Tensor y = Tensor::from(logits.shape(), soft_labels);
    return scale(sum_all(mul(logp, y)), -1.0 / static_cast<double>(logits.shape()[0]));
}

inline double accuracy(const Tensor& logits, const std::vector<std::uint32_t>& labels) {
    std::size_t b = logits.shape()[0], k = logits.shape()[1];
    std::size_t correct = 0;
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (logits.data()[i * k + c] > logits.data()[i * k + best]) best = c;
        if (best == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(b);
}

struct MixResult {
    Tensor images;
    std::vector<double> soft_labels;  // rows sum to 1 (before smoothing they already do)
    double lambda = 1.0;
    bool used_cutmix = false;
};

// Per batch, choose mixup (convex pixel blend) or cutmix (rectangular swap);
// labels are blended with the same lambda, recomputed from the actual cut area
// for cutmix. Smoothing is applied to the one-hot targets before blending.
inline MixResult mixup_cutmix(const Tensor& images, const std::vector<std::uint32_t>& labels,
                              std::size_t n_classes, double mixup_alpha, double cutmix_alpha,
                              double smoothing, Rng& rng) {
    std::size_t b = images.shape()[0];
    MAE_CHECK(b >= 2, "mixup_cutmix: need at least two samples");
    std::size_t h = images.shape()[1], w = images.shape()[2], c = images.shape()[3];
    MixResult res;
    res.soft_labels = smoothed_one_hot(labels, n_classes, smoothing);
    if (mixup_alpha <= 0.0 && cutmix_alpha <= 0.0) {
        res.images = images;
        return res;
    }
    bool use_cutmix = cutmix_alpha > 0.0 && (mixup_alpha <= 0.0 || rng.uniform() < 0.5);
    double alpha = use_cutmix ? cutmix_alpha : mixup_alpha;
    double lambda = rng.beta(alpha, alpha);

    std::vector<std::size_t> partner(b);
    for (std::size_t i = 0; i < b; ++i) partner[i] = i;
    for (std::size_t i = b; i > 1; --i) std::swap(partner[i - 1], partner[rng.uniform_index(i)]);

    std::vector<double> mixed = images.data();
    std::size_t per = h * w * c;
    if (use_cutmix) {
        double cut = std::sqrt(1.0 - lambda);
        auto cut_h = static_cast<std::size_t>(std::lround(cut * static_cast<double>(h)));
        auto cut_w = static_cast<std::size_t>(std::lround(cut * static_cast<double>(w)));
        std::size_t cy = rng.uniform_index(h);
        std::size_t cx = rng.uniform_index(w);
        std::size_t y0 = cy < cut_h / 2 ? 0 : cy - cut_h / 2;
        std::size_t x0 = cx < cut_w / 2 ? 0 : cx - cut_w / 2;
        std::size_t y1 = std::min(h, y0 + cut_h);
        std::size_t x1 = std::min(w, x0 + cut_w);
        double area = static_cast<double>((y1 - y0) * (x1 - x0));
        lambda = 1.0 - area / static_cast<double>(h * w);
        for (std::size_t i = 0; i < b; ++i) {
            const double* src = images.data().data() + partner[i] * per;
            double* dst = mixed.data() + i * per;
            for (std::size_t y = y0; y < y1; ++y)
                for (std::size_t x = x0; x < x1; ++x)
                    for (std::size_t ci = 0; ci < c; ++ci)
                        dst[(y * w + x) * c + ci] = src[(y * w + x) * c + ci];
        }
        res.used_cutmix = true;
    } else {
        for (std::size_t i = 0; i < b; ++i) {
            const double* src = images.data().data() + partner[i] * per;
            double* dst = mixed.data() + i * per;
            for (std::size_t j = 0; j < per; ++j)
                dst[j] = lambda * images.data()[i * per + j] + (1.0 - lambda) * src[j];
        }
    }
    res.lambda = lambda;
    std::vector<double> blended(res.soft_labels.size());
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < n_classes; ++k)
            blended[i * n_classes + k] = lambda * res.soft_labels[i * n_classes + k] +
                                         (1.0 - lambda) * res.soft_labels[partner[i] * n_classes + k];
    res.soft_labels = std::move(blended);
    res.images = Tensor::from(images.shape(), std::move(mixed));
    return res;
}

// ---------------------------------------------------------------------------
// linear probing head: affine-free batch normalization + linear classifier

struct ProbeHead {
    Tensor w, b;
    std::vector<double> running_mean, running_var;  // tracked for inference
    double eps = 1e-6;
};

inline Tensor detach(const Tensor& x) { return Tensor::from(x.shape(), x.data()); }

inline Tensor probe_logits(const ProbeHead& head, const Tensor& features) {
    std::size_t b = features.shape()[0], d = features.shape()[1];
    std::vector<double> normed(features.data());
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j)
            normed[i * d + j] = (normed[i * d + j] - head.running_mean[j]) /
                                std::sqrt(head.running_var[j] + head.eps);
    return add_bias(matmul(Tensor::from(features.shape(), std::move(normed)), head.w), head.b);
}

// absorb the normalization into the classifier: identical logits by algebra
inline std::pair<Tensor, Tensor> fold_probe(const ProbeHead& head) {
    std::size_t d = head.w.shape()[0], k = head.w.shape()[1];
    Tensor w = Tensor::zeros({d, k});
    Tensor b = Tensor::zeros({k});
    b.data() = head.b.data();
    for (std::size_t j = 0; j < d; ++j) {
        double inv = 1.0 / std::sqrt(head.running_var[j] + head.eps);
        for (std::size_t c = 0; c < k; ++c) {
            w.data()[j * k + c] = head.w.data()[j * k + c] * inv;
            b.data()[c] -= head.w.data()[j * k + c] * inv * head.running_mean[j];
        }
    }
    return {w, b};
}

// SGD-with-momentum training of the probe on frozen features
inline ProbeHead train_linear_probe(const Tensor& features, const std::vector<std::uint32_t>& labels,
                                    std::size_t n_classes, const TrainRecipe& recipe,
                                    std::uint64_t seed, MetricsLog* log = nullptr,
                                    const Tensor* eval_features = nullptr,
                                    const std::vector<std::uint32_t>* eval_labels = nullptr) {
    recipe.validate();
    std::size_t m = features.shape()[0], d = features.shape()[1];
    ParamStore store(Rng(seed).fork("probe-init"));
    ProbeHead head;
    head.w = store.create("probe.w", {d, n_classes}, Init::xavier_uniform);
    head.b = store.create("probe.b", {n_classes}, Init::zeros);
    head.running_mean.assign(d, 0.0);
    head.running_var.assign(d, 1.0);

    std::size_t batch = std::min(recipe.batch_size, m);
    std::size_t steps_per_epoch = (m + batch - 1) / batch;
    std::size_t total_steps = steps_per_epoch * recipe.total_epochs;
    std::size_t warmup_steps = steps_per_epoch * recipe.warmup_epochs;
    double peak = effective_lr(recipe.base_lr, batch);
    const double bn_momentum = 0.1;

    SgdState sgd;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < recipe.total_epochs; ++epoch) {
        double epoch_loss = 0.0;
        auto batches = batch_indices(m, batch, seed, epoch);
        for (const auto& ids : batches) {
            std::vector<double> feat(ids.size() * d);
            std::vector<std::uint32_t> lab(ids.size());
            for (std::size_t i = 0; i < ids.size(); ++i) {
                std::copy_n(features.data().data() + ids[i] * d, d, feat.data() + i * d);
                lab[i] = labels[ids[i]];
            }
            // affine-free batch norm on frozen features: batch stats in
            // training, running stats tracked for inference
            std::vector<double> mean(d, 0.0), var(d, 0.0);
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = 0; j < d; ++j) mean[j] += feat[i * d + j];
            for (auto& v : mean) v /= static_cast<double>(ids.size());
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = 0; j < d; ++j) {
                    double dv = feat[i * d + j] - mean[j];
                    var[j] += dv * dv;
                }
            for (auto& v : var) v /= static_cast<double>(ids.size());
            for (std::size_t j = 0; j < d; ++j) {
                head.running_mean[j] = (1 - bn_momentum) * head.running_mean[j] + bn_momentum * mean[j];
                head.running_var[j] = (1 - bn_momentum) * head.running_var[j] + bn_momentum * var[j];
                double inv = 1.0 / std::sqrt(var[j] + head.eps);
                for (std::size_t i = 0; i < ids.size(); ++i)
                    feat[i * d + j] = (feat[i * d + j] - mean[j]) * inv;
            }
            Tensor x = Tensor::from({ids.size(), d}, std::move(feat));
            Tensor logits = add_bias(matmul(x, head.w), head.b);
            Tensor loss = cross_entropy(logits, smoothed_one_hot(lab, n_classes, 0.0));
            store.zero_grads();
            backward(loss);
            double lr = lr_at(std::min(step + 1, total_steps), warmup_steps, total_steps, peak);
            sgd_momentum_step(store, sgd, lr, recipe.momentum, recipe.weight_decay);
            ++step;
            epoch_loss += loss.item();
        }
        if (log) log->push_back({epoch, "train", "loss", epoch_loss / static_cast<double>(batches.size())});
        if (log && eval_features && (epoch + 1 == recipe.total_epochs)) {
            Tensor logits = probe_logits(head, *eval_features);
            log->push_back({epoch, "eval", "accuracy", accuracy(logits, *eval_labels)});
        }
    }
    return head;
}

// ---------------------------------------------------------------------------
// protocols

enum class Protocol { pretrain, finetune, linprobe, partial_ft, supervised_scratch };

struct ProtocolRun {
    Protocol kind = Protocol::pretrain;
    MaeConfig cfg;
    TrainRecipe recipe;
    const PackedDataset* train = nullptr;
    const PackedDataset* eval = nullptr;
    std::uint64_t seed = 0;
    std::string init_checkpoint;  // encoder weights for finetune/linprobe/partial_ft
    std::size_t eval_every = 10;
};

inline AugmentSpec eval_spec(const PackedDataset& ds, std::size_t out_size) {
    return AugmentSpec{AugmentMode::none_center_crop, false, out_size, 0.2, 1.0};
}

// class-token features of every listed sample under a deterministic center crop
inline Tensor extract_features(const PackedDataset& ds, const VitParams& enc, std::size_t out_size,
                               std::size_t batch = 64) {
    Rng rng(0);
    AugmentSpec spec = eval_spec(ds, out_size);
    std::size_t d = enc.cfg.width;
    std::vector<double> all(ds.size() * d);
    for (std::size_t start = 0; start < ds.size(); start += batch) {
        std::vector<std::size_t> ids;
        for (std::size_t i = start; i < std::min(ds.size(), start + batch); ++i) ids.push_back(i);
        Tensor images = make_batch(ds, ids, spec, rng);
        Tensor feats = vit_features(images, enc);
        std::copy(feats.data().begin(), feats.data().end(),
                  all.begin() + static_cast<std::ptrdiff_t>(start * d));
    }
    return Tensor::from({ds.size(), d}, std::move(all));
}

inline double eval_classifier(const PackedDataset& ds, const VitParams& enc, const HeadParams& head,
                              std::size_t out_size, std::size_t batch = 64) {
    Rng rng(0);
    AugmentSpec spec = eval_spec(ds, out_size);
    std::size_t correct_total = 0;
    for (std::size_t start = 0; start < ds.size(); start += batch) {
        std::vector<std::size_t> ids;
        std::vector<std::uint32_t> lab;
        for (std::size_t i = start; i < std::min(ds.size(), start + batch); ++i) {
            ids.push_back(i);
            lab.push_back(ds.labels[i]);
        }
        Tensor logits = vit_classify(make_batch(ds, ids, spec, rng), enc, head);
        std::size_t k = logits.shape()[1];
        for (std::size_t i = 0; i < ids.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c)
                if (logits.data()[i * k + c] > logits.data()[i * k + best]) best = c;
            if (best == lab[i]) ++correct_total;
        }
    }
    return static_cast<double>(correct_total) / static_cast<double>(ds.size());
}

// executes one full training protocol; parameters end up in `store`
inline MetricsLog run_protocol(const ProtocolRun& run, ParamStore& store) {
    MAE_CHECK(run.train != nullptr, "run_protocol: missing training dataset");
    run.recipe.validate();
    run.cfg.validate();
    const PackedDataset& train = *run.train;
    MAE_CHECK(train.size() >= 1, "run_protocol: empty training dataset");
    MAE_CHECK(train.height >= run.cfg.encoder.image_size && train.width >= run.cfg.encoder.image_size,
              "dataset images " << train.height << "x" << train.width << " smaller than model input "
                                << run.cfg.encoder.image_size);
    MetricsLog log;
    std::size_t out_size = run.cfg.encoder.image_size;
    std::size_t batch = std::min(run.recipe.batch_size, train.size());
    std::size_t steps_per_epoch = (train.size() + batch - 1) / batch;
    std::size_t total_steps = steps_per_epoch * run.recipe.total_epochs;
    std::size_t warmup_steps = steps_per_epoch * run.recipe.warmup_epochs;
    double peak = effective_lr(run.recipe.base_lr, batch);
    AugmentSpec aug = run.recipe.augment;
    aug.out_size = out_size;

    if (run.kind == Protocol::pretrain) {
        MaeParams params = make_mae(store, run.cfg);
        if (!run.init_checkpoint.empty()) load_into(store, run.init_checkpoint);
        PcaBasis basis;
        bool has_basis = false;
        if (run.cfg.target_kind == TargetKind::pca) {
            // fit the basis on center-cropped training patches
            Rng r0(0);
            std::vector<std::size_t> all_ids(train.size());
            std::iota(all_ids.begin(), all_ids.end(), 0);
            Tensor images = make_batch(train, all_ids, eval_spec(train, out_size), r0);
            Tensor patches = patchify_batch(images, run.cfg.encoder.patch_size);
            basis = pca_fit(reshape(patches, {patches.shape()[0] * patches.shape()[1], patches.shape()[2]}),
                            run.cfg.pca_k);
            has_basis = true;
        }
        AdamWState adam;
        std::size_t step = 0;
        for (std::size_t epoch = 0; epoch < run.recipe.total_epochs; ++epoch) {
            double epoch_loss = 0.0;
            auto batches = batch_indices(train.size(), batch, run.seed, epoch);
            for (std::size_t bi = 0; bi < batches.size(); ++bi) {
                Rng step_rng = Rng(run.seed).fork("pretrain").fork(epoch).fork(bi);
                Rng aug_rng = step_rng.fork("augment");
                Tensor images = make_batch(train, batches[bi], aug, aug_rng);
                Rng mask_rng = step_rng.fork("mask");
                MaeStepResult res = mae_step(images, run.cfg, params, mask_rng,
                                             has_basis ? &basis : nullptr);
                store.zero_grads();
                backward(res.loss);
                double lr = lr_at(std::min(step + 1, total_steps), warmup_steps, total_steps, peak);
                adamw_step(store, adam, {}, lr, run.recipe.weight_decay, run.recipe.beta1,
                           run.recipe.beta2);
                ++step;
                epoch_loss += res.loss.item();
            }
            log.push_back({epoch, "train", "masked_mse", epoch_loss / static_cast<double>(batches.size())});
        }
        return log;
    }

    if (run.kind == Protocol::linprobe) {
        VitParams enc = make_vit(store, "enc", run.cfg.encoder);
        if (!run.init_checkpoint.empty()) load_into_strict(store, run.init_checkpoint, "enc.");
        Tensor feats = detach(extract_features(train, enc, out_size));
        Tensor eval_feats;
        std::vector<std::uint32_t> eval_labels;
        if (run.eval) {
            eval_feats = detach(extract_features(*run.eval, enc, out_size));
            eval_labels = run.eval->labels;
        }
        ProbeHead head = train_linear_probe(feats, train.labels, train.n_classes, run.recipe, run.seed,
                                            &log, run.eval ? &eval_feats : nullptr,
                                            run.eval ? &eval_labels : nullptr);
        // keep the probe in the store so it lands in checkpoints
        Tensor pw = store.create("probe.w", head.w.shape(), Init::zeros);
        pw.data() = head.w.data();
        Tensor pb = store.create("probe.b", head.b.shape(), Init::zeros);
        pb.data() = head.b.data();
        return log;
    }

    // classifier training: finetune, partial_ft, supervised_scratch
    VitParams enc = make_vit(store, "enc", run.cfg.encoder);
    HeadParams head = make_head(store, "head", run.cfg.encoder.width, train.n_classes);
    if (run.kind != Protocol::supervised_scratch && !run.init_checkpoint.empty())
        load_into_strict(store, run.init_checkpoint, "enc.");
    if (run.kind == Protocol::partial_ft)
        freeze_prefix(store, run.cfg.encoder.depth, run.recipe.tuned_blocks, run.recipe.mlp_only);

    std::map<std::string, double> lr_mults;
    if (run.recipe.layer_decay < 1.0)
        for (const auto& [name, t] : store.all())
            lr_mults[name] = layer_decay_mult(name, run.cfg.encoder.depth, run.recipe.layer_decay);

    AdamWState adam;
    EmaState ema;
    if (run.recipe.ema_decay > 0.0) ema_init(ema, store);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < run.recipe.total_epochs; ++epoch) {
        double epoch_loss = 0.0;
        auto batches = batch_indices(train.size(), batch, run.seed, epoch);
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            Rng step_rng = Rng(run.seed).fork("classify").fork(epoch).fork(bi);
            Rng aug_rng = step_rng.fork("augment");
            Tensor images = make_batch(train, batches[bi], aug, aug_rng);
            std::vector<std::uint32_t> lab;
            lab.reserve(batches[bi].size());
            for (auto i : batches[bi]) lab.push_back(train.labels[i]);

            Tensor inputs = images;
            std::vector<double> targets;
            if (batches[bi].size() >= 2 &&
                (run.recipe.mixup_alpha > 0.0 || run.recipe.cutmix_alpha > 0.0)) {
                Rng mix_rng = step_rng.fork("mix");
                MixResult mixed = mixup_cutmix(images, lab, train.n_classes, run.recipe.mixup_alpha,
                                               run.recipe.cutmix_alpha, run.recipe.label_smoothing,
                                               mix_rng);
                inputs = mixed.images;
                targets = std::move(mixed.soft_labels);
            } else {
                targets = smoothed_one_hot(lab, train.n_classes, run.recipe.label_smoothing);
            }

            Rng dp_rng = step_rng.fork("droppath");
            Tensor logits = vit_classify(inputs, enc, head, run.recipe.drop_path_rate, &dp_rng);
            Tensor loss = cross_entropy(logits, targets);
            store.zero_grads();
            backward(loss);
            double lr = lr_at(std::min(step + 1, total_steps), warmup_steps, total_steps, peak);
            adamw_step(store, adam, lr_mults, lr, run.recipe.weight_decay, run.recipe.beta1,
                       run.recipe.beta2);
            if (run.recipe.ema_decay > 0.0) ema_update(ema, store, run.recipe.ema_decay);
            ++step;
            epoch_loss += loss.item();
        }
        log.push_back({epoch, "train", "loss", epoch_loss / static_cast<double>(batches.size())});
        bool last = epoch + 1 == run.recipe.total_epochs;
        if (run.eval && (last || (run.eval_every && (epoch + 1) % run.eval_every == 0)))
            log.push_back({epoch, "eval", "accuracy", eval_classifier(*run.eval, enc, head, out_size)});
        if (run.eval && last && run.recipe.ema_decay > 0.0) {
            // evaluate the EMA weights without disturbing the trained ones
            std::map<std::string, std::vector<double>> saved;
            for (const auto& [name, t] : store.all()) saved[name] = t.data();
            ema_copy_to(ema, store);
            log.push_back({epoch, "eval", "accuracy_ema", eval_classifier(*run.eval, enc, head, out_size)});
            for (const auto& [name, t] : store.all()) store.get(name).data() = saved[name];
        }
    }
    return log;
}

}  // namespace mae
