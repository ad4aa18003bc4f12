#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xdseg/image.hpp"
#include "xdseg/manifest.hpp"

namespace xdseg {

// Masks are images whose pixels are interpreted as foreground when >= 0.5.

// 2|A∩B| / (|A|+|B|); both empty -> 1 (the prediction correctly found nothing).
double dsc(const Image& pred, const Image& gt);
// |A∩B| / |A∪B|; both empty -> 1. Satisfies iou = dsc / (2 - dsc).
double iou(const Image& pred, const Image& gt);

enum class TestMethod { exact, normal_approx };
const char* to_string(TestMethod m);

struct PairedTestResult {
    std::size_t n_effective = 0;  // pairs left after dropping zero differences
    double statistic = 0.0;       // W+ = sum of ranks of positive differences
    double p_value = 1.0;         // two-sided
    TestMethod method = TestMethod::exact;
    bool degenerate = false;      // every difference was zero
};

// Wilcoxon signed-rank test on paired samples: zero differences dropped,
// ties share average ranks, exact null distribution for n_effective <= 25,
// normal approximation with continuity and tie corrections above.
PairedTestResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

struct ImageScore {
    std::string image_id;
    std::string video_id;
    std::string patient_id;
    double dsc = 0.0;
    double iou = 0.0;
};

struct RunEvaluation {
    std::string run_name;
    std::vector<ImageScore> scores;  // manifest order, annotated frames only
    double mean_dsc = 0.0;
    double mean_iou = 0.0;
};

// Stable per-frame prediction file stem: <video_id>_f<frame_index, 3 digits>.
std::string frame_id(const FrameRecord& r);

// Scores <pred_dir>/<frame_id>.f32 (or .png) against the split's annotated
// frames at the given threshold. Every annotated frame needs a prediction;
// missing ones are reported together in one error.
RunEvaluation evaluate_run(const std::string& run_name, const Manifest& m,
                           const std::string& split, Domain domain,
                           const std::filesystem::path& pred_dir, double threshold = 0.5);

void write_scores_csv(const std::filesystem::path& path, const RunEvaluation& eval);
// Rebuilds a RunEvaluation from a scores file so runs can be aggregated
// without rerunning inference.
RunEvaluation read_scores_csv(const std::filesystem::path& path, const std::string& run_name);

// report.json: per-run aggregates plus pairwise Wilcoxon tests on the
// per-image DSC and IoU columns for every run pair. Content depends only on
// the evaluations, so identical inputs give identical bytes.
void emit_report(const std::vector<RunEvaluation>& runs, const std::filesystem::path& json_path);

// Grayscale base with the GT outline in green and the prediction outline in
// red (overlap shows yellow).
void write_overlay_png(const std::filesystem::path& path, const Image& base, const Image& gt,
                       const Image& pred);

}  // namespace xdseg
