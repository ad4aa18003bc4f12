#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xdseg/augment.hpp"
#include "xdseg/checkpoint.hpp"
#include "xdseg/manifest.hpp"
#include "xdseg/model.hpp"
#include "xdseg/optim.hpp"

namespace xdseg {

enum class Stage { pretrain_mim, pretrain_contrastive, finetune, baseline };
const char* to_string(Stage s);

struct RunConfig {
    Stage stage = Stage::finetune;
    std::string manifest_path;
    Domain domain = Domain::target;                  // domain feeding this run
    std::vector<std::string> train_splits = {"train"};
    std::string val_split;                           // empty: no validation pass

    OptimizerKind optimizer = OptimizerKind::adamw;
    double learning_rate = 5e-4;
    double weight_decay = 0.05;
    std::size_t epochs = 10;
    std::size_t batch_size = 8;

    double temperature = 0.5;        // contrastive
    std::uint32_t min_frame_gap = 15;
    double mask_ratio = 0.6;         // masked image modeling
    std::size_t mask_patch = 8;      // masked patch edge, pixels
    double smooth = 1.0;             // dice smoothing

    std::uint64_t seed = 0;
    std::string output_dir;
    BackboneConfig backbone = BackboneConfig::desk();
    AugmentationConfig augment;

    // Desk-scale presets sized so the whole pipeline runs in minutes on one
    // core. The full-scale presets carry the reference hyperparameters
    // (AdamW 5e-4 for MIM, Adam 1e-5 for contrastive, SGD 2e-4 for
    // fine-tuning, epochs 1200/400/200).
    static RunConfig desk_mim();
    static RunConfig desk_contrastive();
    static RunConfig desk_finetune();
    static RunConfig full_mim();
    static RunConfig full_contrastive();
    static RunConfig full_finetune();

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    std::optional<double> val_loss;
    double wall_time_sec = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> records;
    std::size_t best_epoch = 0;
    std::optional<double> best_val_loss;  // best train loss when no val pass ran
};

// JSON-lines: one record per epoch, then one summary line.
void write_train_log(const std::filesystem::path& path, const TrainLog& log);

struct TrainResult {
    TrainLog log;
    std::filesystem::path final_checkpoint;
    std::filesystem::path best_checkpoint;
    std::vector<std::string> files_read;  // dataset files opened during the run
};

// Reconstructs randomly masked patches on unlabeled frames; never opens a
// mask file. Saves the final epoch and the best-train-loss checkpoints.
TrainResult pretrain_mim(const RunConfig& cfg);

// MT-NXent over augmented view pairs; batches are drawn uniformly at random
// from the whole training split. Saves the final-epoch checkpoint.
TrainResult pretrain_contrastive(const RunConfig& cfg);

struct FinetuneInit {
    std::filesystem::path checkpoint;
    std::set<ParamGroup> groups;  // transferred; everything else is re-drawn
};

// Supervised DiceBCE training; keeps the checkpoint with the lowest
// validation loss. Without init this is a from-scratch baseline.
TrainResult finetune(const RunConfig& cfg, const std::optional<FinetuneInit>& init);

// Runs a checkpoint over a split and writes one probability raster
// (<frame_id>.f32) per frame; with png_output also an 8-bit PNG.
void run_inference(const std::filesystem::path& checkpoint_path, const BackboneConfig& backbone,
                   const Manifest& m, const std::string& split, Domain domain,
                   const std::filesystem::path& out_dir, bool png_output = false,
                   std::size_t batch_size = 8);

}  // namespace xdseg
