#include "xdseg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "xdseg/audit.hpp"
#include "xdseg/errors.hpp"
#include "xdseg/evaluate.hpp"
#include "xdseg/losses.hpp"

namespace fs = std::filesystem;

namespace xdseg {

const char* to_string(Stage s) {
    switch (s) {
        case Stage::pretrain_mim: return "pretrain_mim";
        case Stage::pretrain_contrastive: return "pretrain_contrastive";
        case Stage::finetune: return "finetune";
        case Stage::baseline: return "baseline";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Presets

RunConfig RunConfig::desk_mim() {
    RunConfig c;
    c.stage = Stage::pretrain_mim;
    c.domain = Domain::target;
    c.optimizer = OptimizerKind::adamw;
    c.learning_rate = 5e-4;
    c.weight_decay = 0.05;
    c.epochs = 10;
    c.batch_size = 8;
    return c;
}

RunConfig RunConfig::desk_contrastive() {
    RunConfig c;
    c.stage = Stage::pretrain_contrastive;
    c.domain = Domain::target;
    c.optimizer = OptimizerKind::adam;
    c.learning_rate = 1e-3;
    c.weight_decay = 1e-4;
    c.epochs = 40;
    c.batch_size = 8;
    return c;
}

RunConfig RunConfig::desk_finetune() {
    RunConfig c;
    c.stage = Stage::finetune;
    c.domain = Domain::source;
    c.val_split = "val";
    c.optimizer = OptimizerKind::adamw;
    c.learning_rate = 1e-3;
    c.weight_decay = 1e-4;
    c.epochs = 20;
    c.batch_size = 8;
    return c;
}

RunConfig RunConfig::full_mim() {
    RunConfig c = desk_mim();
    c.backbone = BackboneConfig::full224();
    c.augment.output_size = 224;
    c.learning_rate = 5e-4;
    c.weight_decay = 0.05;
    c.epochs = 1200;
    c.batch_size = 128;
    c.mask_patch = 16;
    return c;
}

RunConfig RunConfig::full_contrastive() {
    RunConfig c = desk_contrastive();
    c.backbone = BackboneConfig::full224();
    c.augment.output_size = 224;
    c.optimizer = OptimizerKind::adam;
    c.learning_rate = 1e-5;
    c.weight_decay = 0.05;
    c.epochs = 400;
    c.batch_size = 64;  // scaled down from the reference 1024 for memory
    return c;
}

RunConfig RunConfig::full_finetune() {
    RunConfig c = desk_finetune();
    c.backbone = BackboneConfig::full224();
    c.augment.output_size = 224;
    c.optimizer = OptimizerKind::sgd;
    c.learning_rate = 2e-4;
    c.weight_decay = 0.05;
    c.epochs = 200;
    c.batch_size = 32;
    return c;
}

void RunConfig::validate() const {
    if (manifest_path.empty()) throw ConfigError("run: manifest_path is required");
    if (output_dir.empty()) throw ConfigError("run: output_dir is required");
    if (!(learning_rate > 0.0)) throw ConfigError("run: learning_rate must be positive");
    if (epochs < 1) throw ConfigError("run: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("run: batch_size must be >= 1");
    if (train_splits.empty()) throw ConfigError("run: train_splits must be non-empty");
    if (!(smooth >= 0.0)) throw ConfigError("run: smooth must be non-negative");
    backbone.validate();
    if (stage == Stage::pretrain_mim) {
        if (!(mask_ratio > 0.0 && mask_ratio <= 1.0))
            throw ConfigError("run: mask_ratio must lie in (0,1]");
        if (mask_patch == 0 || backbone.image_size % mask_patch != 0)
            throw ConfigError("run: mask_patch must divide the image size");
        if (static_cast<std::size_t>(mask_ratio * static_cast<double>(
                (backbone.image_size / mask_patch) * (backbone.image_size / mask_patch))) == 0)
            throw ConfigError("run: mask_ratio leaves every patch visible");
    }
    if (stage == Stage::pretrain_contrastive) {
        if (!(temperature > 0.0)) throw ConfigError("run: temperature must be positive");
        augment.validate();
        if (augment.output_size != backbone.image_size)
            throw ConfigError("run: augment.output_size must equal backbone.image_size");
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<const FrameRecord*> collect_frames(const Manifest& m, const RunConfig& cfg) {
    std::vector<const FrameRecord*> out;
    for (const std::string& split : cfg.train_splits)
        for (const FrameRecord* r : m.frames(split, cfg.domain)) out.push_back(r);
    return out;
}

std::vector<Image> load_images(const Manifest& m, const std::vector<const FrameRecord*>& frames,
                               std::size_t size) {
    std::vector<Image> out;
    out.reserve(frames.size());
    for (const FrameRecord* r : frames)
        out.push_back(pad_and_resize(load_png(m.resolve(r->image_path)), size));
    return out;
}

std::vector<Image> load_masks(const Manifest& m, const std::vector<const FrameRecord*>& frames,
                              std::size_t size, const std::string& split) {
    std::vector<Image> out;
    out.reserve(frames.size());
    for (const FrameRecord* r : frames) {
        if (!r->mask_path)
            throw ConfigError("run: frame " + frame_id(*r) + " in split '" + split +
                              "' has no annotation");
        Image mk = pad_and_resize(load_png(m.resolve(*r->mask_path)), size);
        for (float& v : mk.pixels) v = v >= 0.5f ? 1.0f : 0.0f;
        out.push_back(std::move(mk));
    }
    return out;
}

Tensor stack_images(const std::vector<Image>& images, const std::vector<std::size_t>& idx,
                    std::size_t first, std::size_t count) {
    const std::size_t h = images[idx[first]].h, w = images[idx[first]].w;
    Tensor t({count, 1, h, w});
    for (std::size_t i = 0; i < count; ++i)
        std::copy(images[idx[first + i]].pixels.begin(), images[idx[first + i]].pixels.end(),
                  t.data() + i * h * w);
    return t;
}

std::vector<std::string> relativize(std::vector<std::string> paths, const std::string& root) {
    const std::string prefix = root.empty() ? "" : root + "/";
    for (std::string& p : paths)
        if (!prefix.empty() && p.rfind(prefix, 0) == 0) p = p.substr(prefix.size());
    std::sort(paths.begin(), paths.end());
    return paths;
}

nlohmann::json config_json(const RunConfig& cfg) {
    return {{"stage", to_string(cfg.stage)},
            {"manifest", cfg.manifest_path},
            {"domain", to_string(cfg.domain)},
            {"train_splits", cfg.train_splits},
            {"val_split", cfg.val_split},
            {"optimizer", to_string(cfg.optimizer)},
            {"learning_rate", cfg.learning_rate},
            {"weight_decay", cfg.weight_decay},
            {"epochs", cfg.epochs},
            {"batch_size", cfg.batch_size},
            {"temperature", cfg.temperature},
            {"min_frame_gap", cfg.min_frame_gap},
            {"mask_ratio", cfg.mask_ratio},
            {"mask_patch", cfg.mask_patch},
            {"smooth", cfg.smooth},
            {"seed", cfg.seed},
            {"backbone", cfg.backbone.describe()},
            {"backbone_digest", cfg.backbone.digest()}};
}

void write_run_json(const RunConfig& cfg, const TrainLog& log, const TrainResult& res,
                    std::size_t parameter_count, const nlohmann::json& extra) {
    nlohmann::json j;
    j["config"] = config_json(cfg);
    j["parameter_count"] = parameter_count;
    j["files_read"] = res.files_read;
    j["best_epoch"] = log.best_epoch;
    if (log.best_val_loss)
        j["best_val_loss"] = *log.best_val_loss;
    else
        j["best_val_loss"] = nullptr;
    j["checkpoints"] = {{"final", res.final_checkpoint.filename().string()},
                        {"best", res.best_checkpoint.filename().string()}};
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();

    std::ofstream out(fs::path(cfg.output_dir) / "run.json", std::ios::trunc);
    if (!out) throw DataError("cannot write run.json under " + cfg.output_dir);
    out << j.dump(2) << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void write_train_log(const std::filesystem::path& path, const TrainLog& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    for (const EpochRecord& r : log.records) {
        nlohmann::json j{{"epoch", r.epoch}, {"train_loss", r.train_loss},
                         {"wall_time", r.wall_time_sec}};
        j["val_loss"] = r.val_loss ? nlohmann::json(*r.val_loss) : nlohmann::json(nullptr);
        out << j.dump() << '\n';
    }
    nlohmann::json tail{{"best_epoch", log.best_epoch}};
    tail["best_val_loss"] =
        log.best_val_loss ? nlohmann::json(*log.best_val_loss) : nlohmann::json(nullptr);
    out << tail.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Masked image modeling

TrainResult pretrain_mim(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.stage != Stage::pretrain_mim) throw ConfigError("pretrain_mim: wrong stage in config");
    audit::Scope scope;
    fs::create_directories(cfg.output_dir);

    const Manifest m = load_manifest(cfg.manifest_path);
    const auto frames = collect_frames(m, cfg);
    if (frames.empty()) throw ConfigError("pretrain_mim: training split is empty");
    const auto images = load_images(m, frames, cfg.backbone.image_size);

    SegModel model(cfg.backbone, derive_seed(cfg.seed, "model"));
    Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
    Rng order_rng(derive_seed(cfg.seed, "mim.order"));
    Rng mask_rng(derive_seed(cfg.seed, "mim.mask"));

    const std::size_t hw = cfg.backbone.image_size;
    const std::size_t grid = hw / cfg.mask_patch;

    TrainLog log;
    double best = std::numeric_limits<double>::infinity();
    const fs::path final_path = fs::path(cfg.output_dir) / "checkpoint_final.ckpt";
    const fs::path best_path = fs::path(cfg.output_dir) / "checkpoint_best.ckpt";

    std::vector<std::size_t> idx(frames.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        order_rng.shuffle(idx);
        double loss_sum = 0.0;
        std::size_t seen = 0;

        for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
            const std::size_t bn = std::min(cfg.batch_size, idx.size() - start);

            MaskedBatch mb;
            mb.batch = bn;
            mb.height = hw;
            mb.width = hw;
            mb.patch = cfg.mask_patch;
            mb.images.reserve(bn * hw * hw);
            for (std::size_t i = 0; i < bn; ++i)
                for (float v : images[idx[start + i]].pixels) mb.images.push_back(v);
            mb.patch_mask.reserve(bn * grid * grid);
            for (std::size_t i = 0; i < bn; ++i) {
                const auto pm = sample_patch_mask(grid, grid, cfg.mask_ratio, mask_rng);
                mb.patch_mask.insert(mb.patch_mask.end(), pm.begin(), pm.end());
            }

            const std::vector<double> masked = mb.masked_images();
            Tensor input({bn, 1, hw, hw});
            for (std::size_t i = 0; i < masked.size(); ++i)
                input[i] = static_cast<float>(masked[i]);

            const Tensor recon = model.forward_reconstruct(input);
            std::vector<double> recon_d(recon.data(), recon.data() + recon.size());
            const double loss = masked_mae_loss(mb, recon_d);
            const std::vector<double> grad = masked_mae_grad(mb, recon_d);
            Tensor dout({bn, 1, hw, hw});
            for (std::size_t i = 0; i < grad.size(); ++i) dout[i] = static_cast<float>(grad[i]);

            model.zero_grad();
            model.backward_reconstruct(dout);
            opt.step(model.params());

            loss_sum += loss * static_cast<double>(bn);
            seen += bn;
        }

        const double epoch_loss = loss_sum / static_cast<double>(seen);
        log.records.push_back({epoch, epoch_loss, std::nullopt, seconds_since(t0)});
        if (epoch_loss < best) {
            best = epoch_loss;
            log.best_epoch = epoch;
            save_checkpoint(snapshot(model, {"pretrain_mim", cfg.backbone.digest(), cfg.seed,
                                             static_cast<std::int64_t>(epoch)}),
                            best_path);
        }
    }
    log.best_val_loss = best;

    save_checkpoint(snapshot(model, {"pretrain_mim", cfg.backbone.digest(), cfg.seed,
                                     static_cast<std::int64_t>(cfg.epochs)}),
                    final_path);

    TrainResult res;
    res.log = log;
    res.final_checkpoint = final_path;
    res.best_checkpoint = best_path;
    res.files_read = relativize(scope.paths(), m.root);
    write_train_log(fs::path(cfg.output_dir) / "train_log.jsonl", log);
    write_run_json(cfg, log, res, model.parameter_count(), nlohmann::json::object());
    return res;
}

// ---------------------------------------------------------------------------
// Contrastive pretraining

TrainResult pretrain_contrastive(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.stage != Stage::pretrain_contrastive)
        throw ConfigError("pretrain_contrastive: wrong stage in config");
    audit::Scope scope;
    fs::create_directories(cfg.output_dir);

    const Manifest m = load_manifest(cfg.manifest_path);
    const auto frames = collect_frames(m, cfg);
    if (frames.empty()) throw ConfigError("pretrain_contrastive: training split is empty");
    const auto images = load_images(m, frames, cfg.backbone.image_size);

    SegModel model(cfg.backbone, derive_seed(cfg.seed, "model"));
    Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
    Rng order_rng(derive_seed(cfg.seed, "contrastive.order"));
    Rng aug_rng(derive_seed(cfg.seed, "contrastive.augment"));

    const std::size_t n = frames.size();
    const std::size_t bsz = std::min(cfg.batch_size, n);
    const std::size_t steps = std::max<std::size_t>(1, n / bsz);
    const std::size_t hw = cfg.backbone.image_size;

    TrainLog log;
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double loss_sum = 0.0;

        for (std::size_t step = 0; step < steps; ++step) {
            // One batch = bsz frames drawn from the whole training set.
            order_rng.shuffle(pool);

            Tensor views({2 * bsz, 1, hw, hw});
            EmbeddingBatch eb;
            eb.batch = bsz;
            eb.dim = kProjectionDim;
            eb.temperature = cfg.temperature;
            eb.min_frame_gap = cfg.min_frame_gap;
            for (std::size_t i = 0; i < bsz; ++i) {
                const FrameRecord* r = frames[pool[i]];
                eb.video_ids.push_back(r->video_id);
                eb.frame_indices.push_back(r->frame_index);
                auto [v1, v2] = augment_pair(images[pool[i]], cfg.augment, aug_rng);
                std::copy(v1.pixels.begin(), v1.pixels.end(), views.data() + i * hw * hw);
                std::copy(v2.pixels.begin(), v2.pixels.end(),
                          views.data() + (bsz + i) * hw * hw);
            }

            if (bsz < 2) {
                // A single positive pair has no negatives: the loss is
                // identically zero, so the step is a no-op.
                continue;
            }

            const Tensor z = model.forward_embed(views);
            eb.z.assign(z.data(), z.data() + bsz * kProjectionDim);
            eb.z_prime.assign(z.data() + bsz * kProjectionDim,
                              z.data() + 2 * bsz * kProjectionDim);

            const MtNxentGrad g = mt_nxent_loss_grad(eb);
            Tensor dz({2 * bsz, kProjectionDim});
            for (std::size_t i = 0; i < bsz * kProjectionDim; ++i) {
                dz[i] = static_cast<float>(g.d_z[i]);
                dz[bsz * kProjectionDim + i] = static_cast<float>(g.d_z_prime[i]);
            }
            model.zero_grad();
            model.backward_embed(dz);
            opt.step(model.params());
            loss_sum += g.loss;
        }

        const double epoch_loss = bsz < 2 ? 0.0 : loss_sum / static_cast<double>(steps);
        log.records.push_back({epoch, epoch_loss, std::nullopt, seconds_since(t0)});
        if (epoch_loss < best) {
            best = epoch_loss;
            log.best_epoch = epoch;
        }
    }
    log.best_val_loss = best;

    // No validation criterion for this stage: the final epoch is kept.
    const fs::path final_path = fs::path(cfg.output_dir) / "checkpoint_final.ckpt";
    save_checkpoint(snapshot(model, {"pretrain_contrastive", cfg.backbone.digest(), cfg.seed,
                                     static_cast<std::int64_t>(cfg.epochs)}),
                    final_path);

    TrainResult res;
    res.log = log;
    res.final_checkpoint = final_path;
    res.best_checkpoint = final_path;
    res.files_read = relativize(scope.paths(), m.root);
    write_train_log(fs::path(cfg.output_dir) / "train_log.jsonl", log);
    write_run_json(cfg, log, res, model.parameter_count(), nlohmann::json::object());
    return res;
}

// ---------------------------------------------------------------------------
// Supervised fine-tuning

namespace {

double dice_bce_over_batch(SegModel& model, const std::vector<Image>& images,
                           const std::vector<Image>& masks,
                           const std::vector<std::size_t>& idx, std::size_t first,
                           std::size_t count, double smooth, std::size_t hw) {
    const Tensor input = stack_images(images, idx, first, count);
    const Tensor logits = model.forward_segment(input);
    SegPair pair;
    pair.smooth = smooth;
    pair.prediction.resize(logits.size());
    pair.target.reserve(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) pair.prediction[i] = sigmoid(logits[i]);
    for (std::size_t i = 0; i < count; ++i)
        for (float v : masks[idx[first + i]].pixels) pair.target.push_back(v);
    (void)hw;
    return dice_bce_loss(pair);
}

}  // namespace

TrainResult finetune(const RunConfig& cfg, const std::optional<FinetuneInit>& init) {
    cfg.validate();
    if (cfg.stage != Stage::finetune && cfg.stage != Stage::baseline)
        throw ConfigError("finetune: wrong stage in config");
    audit::Scope scope;
    fs::create_directories(cfg.output_dir);

    const Manifest m = load_manifest(cfg.manifest_path);
    const auto train_frames = collect_frames(m, cfg);
    if (train_frames.empty()) throw ConfigError("finetune: training split is empty");
    const std::size_t hw = cfg.backbone.image_size;
    const auto train_images = load_images(m, train_frames, hw);
    const auto train_masks = load_masks(m, train_frames, hw, cfg.train_splits.front());

    std::vector<const FrameRecord*> val_frames;
    std::vector<Image> val_images, val_masks;
    if (!cfg.val_split.empty()) {
        val_frames = m.frames(cfg.val_split, cfg.domain);
        if (val_frames.empty())
            throw ConfigError("finetune: validation split '" + cfg.val_split + "' is empty");
        val_images = load_images(m, val_frames, hw);
        val_masks = load_masks(m, val_frames, hw, cfg.val_split);
    }

    SegModel model(cfg.backbone, derive_seed(cfg.seed, "model"));
    nlohmann::json extra = nlohmann::json::object();
    if (init) {
        for (ParamGroup g : init->groups)
            if (g != ParamGroup::embedding && g != ParamGroup::encoder &&
                g != ParamGroup::projection)
                throw ConfigError(std::string("finetune: group '") + to_string(g) +
                                  "' cannot be transferred; the decoder and heads always "
                                  "start from a fresh draw");
        const Checkpoint ckpt = load_checkpoint(init->checkpoint);
        if (ckpt.meta.config_digest != cfg.backbone.digest())
            throw ConfigError("finetune: checkpoint " + init->checkpoint.string() +
                              " was trained with a different backbone (digest " +
                              ckpt.meta.config_digest + " vs " + cfg.backbone.digest() + ")");
        const TransferReport rep =
            transfer_weights(model, ckpt, init->groups, derive_seed(cfg.seed, "reinit"));
        nlohmann::json jt = nlohmann::json::array();
        for (const auto& g : rep.groups)
            jt.push_back({{"group", to_string(g.group)},
                          {"transferred", g.transferred},
                          {"tensors", g.tensor_count},
                          {"parameters", g.parameter_count},
                          {"digest", g.digest}});
        extra["transfer"] = {{"checkpoint", init->checkpoint.string()}, {"groups", jt}};
    }

    Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
    Rng order_rng(derive_seed(cfg.seed, "finetune.order"));

    TrainLog log;
    double best = std::numeric_limits<double>::infinity();
    const fs::path final_path = fs::path(cfg.output_dir) / "checkpoint_final.ckpt";
    const fs::path best_path = fs::path(cfg.output_dir) / "checkpoint_best.ckpt";
    const char* stage_name = init ? "finetune" : "baseline";

    std::vector<std::size_t> idx(train_frames.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<std::size_t> val_idx(val_frames.size());
    std::iota(val_idx.begin(), val_idx.end(), std::size_t{0});

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        order_rng.shuffle(idx);
        double loss_sum = 0.0;
        std::size_t seen = 0;

        for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
            const std::size_t bn = std::min(cfg.batch_size, idx.size() - start);
            const Tensor input = stack_images(train_images, idx, start, bn);
            const Tensor logits = model.forward_segment(input);

            SegPair pair;
            pair.smooth = cfg.smooth;
            pair.prediction.resize(logits.size());
            for (std::size_t i = 0; i < logits.size(); ++i)
                pair.prediction[i] = sigmoid(logits[i]);
            pair.target.reserve(logits.size());
            for (std::size_t i = 0; i < bn; ++i)
                for (float v : train_masks[idx[start + i]].pixels) pair.target.push_back(v);

            const double loss = dice_bce_loss(pair);
            const std::vector<double> dp = dice_bce_grad(pair);
            Tensor dlogits({bn, 1, hw, hw});
            for (std::size_t i = 0; i < dp.size(); ++i) {
                const double p = pair.prediction[i];
                dlogits[i] = static_cast<float>(dp[i] * p * (1.0 - p));
            }
            model.zero_grad();
            model.backward_segment(dlogits);
            opt.step(model.params());

            loss_sum += loss * static_cast<double>(bn);
            seen += bn;
        }
        const double train_loss = loss_sum / static_cast<double>(seen);

        std::optional<double> val_loss;
        if (!val_frames.empty()) {
            double vsum = 0.0;
            std::size_t vseen = 0;
            for (std::size_t start = 0; start < val_idx.size(); start += cfg.batch_size) {
                const std::size_t bn = std::min(cfg.batch_size, val_idx.size() - start);
                vsum += dice_bce_over_batch(model, val_images, val_masks, val_idx, start, bn,
                                            cfg.smooth, hw) *
                        static_cast<double>(bn);
                vseen += bn;
            }
            val_loss = vsum / static_cast<double>(vseen);
        }

        log.records.push_back({epoch, train_loss, val_loss, seconds_since(t0)});
        const double criterion = val_loss ? *val_loss : train_loss;
        if (criterion < best) {
            best = criterion;
            log.best_epoch = epoch;
            save_checkpoint(snapshot(model, {stage_name, cfg.backbone.digest(), cfg.seed,
                                             static_cast<std::int64_t>(epoch)}),
                            best_path);
        }
    }
    log.best_val_loss = best;

    save_checkpoint(snapshot(model, {stage_name, cfg.backbone.digest(), cfg.seed,
                                     static_cast<std::int64_t>(cfg.epochs)}),
                    final_path);

    TrainResult res;
    res.log = log;
    res.final_checkpoint = final_path;
    res.best_checkpoint = best_path;
    res.files_read = relativize(scope.paths(), m.root);
    write_train_log(fs::path(cfg.output_dir) / "train_log.jsonl", log);
    write_run_json(cfg, log, res, model.parameter_count(), extra);
    return res;
}

// ---------------------------------------------------------------------------
// Inference

void run_inference(const std::filesystem::path& checkpoint_path, const BackboneConfig& backbone,
                   const Manifest& m, const std::string& split, Domain domain,
                   const std::filesystem::path& out_dir, bool png_output,
                   std::size_t batch_size) {
    backbone.validate();
    if (batch_size < 1) throw ConfigError("infer: batch_size must be >= 1");
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    if (ckpt.meta.config_digest != backbone.digest())
        throw ConfigError("infer: checkpoint " + checkpoint_path.string() +
                          " does not match the configured backbone");

    SegModel model(backbone, 0);
    std::set<ParamGroup> all(kAllGroups.begin(), kAllGroups.end());
    transfer_weights(model, ckpt, all, 0);

    const auto frames = m.frames(split, domain);
    if (frames.empty())
        throw DataError("infer: split '" + split + "' has no " + to_string(domain) + " frames");
    fs::create_directories(out_dir);

    const std::size_t hw = backbone.image_size;
    const auto images = load_images(m, frames, hw);
    std::vector<std::size_t> idx(frames.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});

    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        const std::size_t bn = std::min(batch_size, idx.size() - start);
        const Tensor input = stack_images(images, idx, start, bn);
        const Tensor logits = model.forward_segment(input);
        for (std::size_t i = 0; i < bn; ++i) {
            Image prob(hw, hw);
            for (std::size_t p = 0; p < hw * hw; ++p)
                prob.pixels[p] = static_cast<float>(sigmoid(logits[i * hw * hw + p]));
            const std::string id = frame_id(*frames[start + i]);
            save_raster((out_dir / (id + ".f32")).string(), prob);
            if (png_output) save_png((out_dir / (id + ".png")).string(), prob);
        }
    }
}

}  // namespace xdseg
