#pragma once

#include <string_view>
#include <vector>

#include "xdseg/image.hpp"

namespace xdseg {

enum class FusionStrategy { entropy, margin, average };
enum class FusionScope { per_image, per_batch };

const char* to_string(FusionStrategy s);
FusionStrategy fusion_strategy_from_string(std::string_view s);
const char* to_string(FusionScope s);
FusionScope fusion_scope_from_string(std::string_view s);

// c = 1 + p*log(p) + (1-p)*log(1-p) with probabilities clamped to
// [1e-7, 1-1e-7]. Base-2 logs put c exactly in [0,1]; the natural-log mode
// keeps the formula verbatim with ln, which compresses c into [1-ln2, 1].
Image entropy_confidence(const Image& p, bool natural_log = false);

// c = |2p - 1|, the binary top-two probability margin.
Image margin_confidence(const Image& p);

// (c - min) / (max - min); a constant map maps to all ones so the fusion
// degenerates to the plain average instead of erasing both branches.
Image minmax_normalize(const Image& c);
// Shared min/max across the whole batch of maps.
void minmax_normalize_batch(std::vector<Image>& maps);

struct FusionInputs {
    std::vector<Image> p_g;  // generative-branch probabilities, in [0,1]
    std::vector<Image> p_c;  // contrastive-branch probabilities
    FusionStrategy strategy = FusionStrategy::entropy;
    FusionScope scope = FusionScope::per_image;
    bool natural_log = false;
    double threshold = 0.5;

    void validate() const;
};

struct FusedPrediction {
    std::vector<Image> probabilities;  // y = (p_g*c_g + p_c*c_c) / 2
    std::vector<Image> binary_mask;    // probabilities >= threshold
    std::vector<Image> conf_g, conf_c; // normalized confidences (empty for average)
};

FusedPrediction fuse(const FusionInputs& in);

}  // namespace xdseg
