#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xdseg/config.hpp"
#include "xdseg/evaluate.hpp"
#include "xdseg/fusion.hpp"
#include "xdseg/train.hpp"

namespace xdseg {

// One-shot experiment: generate the two-domain phantom, split by patient,
// pretrain on unlabeled target frames (masked modeling + contrastive),
// fine-tune on labeled source data from each pretrained init plus the two
// baselines, infer on the target test split, fuse the SSL branches and
// report. Every stage seed derives from the master seed.
struct PipelineConfig {
    std::uint64_t seed = 7;
    std::filesystem::path out;

    std::size_t source_patients = 10;
    std::size_t target_patients = 12;
    std::size_t videos_per_patient = 1;
    std::size_t frames_per_video = 10;

    RunConfig mim = RunConfig::desk_mim();
    RunConfig contrastive = RunConfig::desk_contrastive();
    RunConfig ft = RunConfig::desk_finetune();

    FusionStrategy strategy = FusionStrategy::entropy;
    FusionScope scope = FusionScope::per_image;

    // Recognized keys: phantom.{source_patients,target_patients,
    // videos_per_patient,frames_per_video}, {mim,contrastive,finetune}.
    // {epochs,batch_size,learning_rate}, fusion.{strategy,scope}.
    void apply(const KeyValueConfig& kv);

    void validate() const;
};

struct PipelineResult {
    std::filesystem::path manifest_path;
    std::filesystem::path report_path;
    std::filesystem::path audit_path;
    std::vector<RunEvaluation> evaluations;       // report order
    std::map<std::string, double> mean_dsc;       // run name -> mean test DSC
    std::map<std::string, bool> isolation;        // audit verdicts
    double fused_threshold = 0.5;                 // calibrated on source val
};

// Run names, in report order.
inline constexpr const char* kRunLowerBound = "lower_bound";
inline constexpr const char* kRunMimBranch = "mim_branch";
inline constexpr const char* kRunContrastiveBranch = "contrastive_branch";
inline constexpr const char* kRunFused = "fused";
inline constexpr const char* kRunUpperBound = "upper_bound";

PipelineResult run_pipeline(const PipelineConfig& cfg);

}  // namespace xdseg
