#pragma once

#include <cstdint>
#include <string>

#include "xdseg/image.hpp"
#include "xdseg/manifest.hpp"

namespace xdseg {

// Synthetic two-domain stand-in for the clinical datasets: videos of a bright
// curvilinear band (bone-surface proxy) drifting over multiplicative speckle.
// Domain B is blurrier, noisier and gain-drifted relative to domain A.
struct PhantomConfig {
    Domain domain = Domain::source;
    std::size_t num_patients = 8;
    std::size_t videos_per_patient = 1;
    std::size_t frames_per_video = 8;
    std::size_t image_size = 64;

    double band_intensity = 0.55;
    double speckle_variance = 0.22;
    double blur_sigma = 0.5;
    double gain_drift = 0.0;
    double drift_rate = 1.5;  // pixels/frame of band motion
    std::uint64_t rng_seed = 0;

    // Fraction of peak band intensity at or above which a pixel is labeled.
    double mask_level_fraction = 0.05;

    static PhantomConfig profile_a(std::uint64_t seed);
    static PhantomConfig profile_b(std::uint64_t seed);

    void validate() const;
};

struct PhantomFrame {
    Image image;
    Image mask;  // {0,1}
};

// Deterministic single-frame renderer (exposed for tests).
PhantomFrame render_phantom_frame(const PhantomConfig& cfg, double band_y, double band_x,
                                  double curvature, double thickness, std::size_t frame_index);

// Writes images/<video>/f###.png and masks/<video>/f###.png under out_dir and
// returns the records (paths relative to out_dir, no split assigned).
Manifest generate_phantom(const PhantomConfig& cfg, const std::string& out_dir);

}  // namespace xdseg
