#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xdseg/rng.hpp"

namespace xdseg {

// Training objectives run in double precision; model activations are cast at
// the loss boundary.

// Exactly floor(ratio * grid_h * grid_w) entries true, uniform without
// replacement.
std::vector<std::uint8_t> sample_patch_mask(std::size_t grid_h, std::size_t grid_w, double ratio,
                                            Rng& rng);

// Batch of single-channel images with a per-image boolean patch grid.
struct MaskedBatch {
    std::size_t batch = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t patch = 0;                 // patch edge in pixels
    std::vector<double> images;            // batch*height*width, in [0,1]
    std::vector<std::uint8_t> patch_mask;  // batch*(height/patch)*(width/patch)

    std::size_t grid_h() const { return height / patch; }
    std::size_t grid_w() const { return width / patch; }
    bool masked_at(std::size_t b, std::size_t y, std::size_t x) const {
        return patch_mask[(b * grid_h() + y / patch) * grid_w() + x / patch] != 0;
    }
    // images with masked patches zeroed, the network input
    std::vector<double> masked_images() const;
    void validate() const;
};

// Mean absolute error over masked-patch pixels only: per-image pixel mean,
// then mean over the batch. Unmasked pixels never contribute.
double masked_mae_loss(const MaskedBatch& b, std::span<const double> reconstruction);
std::vector<double> masked_mae_grad(const MaskedBatch& b, std::span<const double> reconstruction);

struct SegPair {
    std::vector<double> prediction;  // per-pixel probability in [0,1]
    std::vector<double> target;      // {0,1}
    double smooth = 1.0;

    void validate() const;
};

double dice_loss(const SegPair& p);
double bce_loss(const SegPair& p);
double dice_bce_loss(const SegPair& p);
std::vector<double> dice_loss_grad(const SegPair& p);
std::vector<double> bce_loss_grad(const SegPair& p);
std::vector<double> dice_bce_grad(const SegPair& p);

// M_kl = 1 iff k == l, or the samples come from the same video with
// |frame_k - frame_l| < min_frame_gap and (k,l) is not a positive pair.
// Sample order is [z_1..z_B, z'_1..z'_B]; z'_i inherits z_i's metadata.
std::vector<std::uint8_t> build_temporal_mask(const std::vector<std::string>& video_ids,
                                              const std::vector<std::uint32_t>& frame_indices,
                                              std::size_t batch, std::uint32_t min_frame_gap);

struct EmbeddingBatch {
    std::size_t batch = 0;
    std::size_t dim = 0;
    std::vector<double> z;        // batch x dim, rows unit length
    std::vector<double> z_prime;  // batch x dim
    std::vector<std::string> video_ids;
    std::vector<std::uint32_t> frame_indices;
    double temperature = 0.5;
    std::uint32_t min_frame_gap = 15;

    void validate() const;
};

struct MaskedSimilarity {
    std::size_t n = 0;                       // 2B
    std::vector<double> s;                   // cosine similarities / temperature
    std::vector<std::uint8_t> mask;          // temporal mask
    std::vector<double> s_tilde;             // masked entries -> sentinel
    std::vector<std::size_t> positive_index; // y_k per row
};

MaskedSimilarity masked_similarity(const EmbeddingBatch& b);

double mt_nxent_loss(const EmbeddingBatch& b);

struct MtNxentGrad {
    double loss = 0.0;
    std::vector<double> d_z;        // batch x dim
    std::vector<double> d_z_prime;  // batch x dim
};
MtNxentGrad mt_nxent_loss_grad(const EmbeddingBatch& b);

}  // namespace xdseg
