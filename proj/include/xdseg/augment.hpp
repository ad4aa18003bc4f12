#pragma once

#include <cstdint>
#include <utility>

#include "xdseg/image.hpp"
#include "xdseg/rng.hpp"

namespace xdseg {

struct AugmentationConfig {
    double crop_scale_min = 0.5;
    double crop_scale_max = 1.0;
    double aspect_min = 3.0 / 4.0;
    double aspect_max = 4.0 / 3.0;
    double flip_probability = 0.5;
    double jitter_strength = 0.4;  // brightness/contrast/saturation
    double jitter_probability = 0.8;
    std::size_t output_size = 64;

    void validate() const;
};

// A view and the metadata of its origin frame; MT-NXent needs the video id
// and frame index of every sample in the 2B set.
struct AugmentedView {
    Image image;
    std::string video_id;
    std::uint32_t frame_index = 0;
};

// Random resized crop, horizontal flip, grayscale brightness/contrast jitter.
// Saturation is sampled for stream stability but is an identity on one
// channel. Input must already be output_size square.
Image augment(const Image& img, const AugmentationConfig& cfg, Rng& rng);

std::pair<Image, Image> augment_pair(const Image& img, const AugmentationConfig& cfg, Rng& rng);

}  // namespace xdseg
