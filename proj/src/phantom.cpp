#include "xdseg/phantom.hpp"

#include <cmath>
#include <filesystem>

#include "xdseg/errors.hpp"
#include "xdseg/image.hpp"
#include "xdseg/rng.hpp"

namespace fs = std::filesystem;

namespace xdseg {

PhantomConfig PhantomConfig::profile_a(std::uint64_t seed) {
    PhantomConfig c;
    c.domain = Domain::source;
    c.band_intensity = 0.55;
    c.speckle_variance = 0.22;
    c.blur_sigma = 0.5;
    c.gain_drift = 0.0;
    c.rng_seed = seed;
    return c;
}

PhantomConfig PhantomConfig::profile_b(std::uint64_t seed) {
    PhantomConfig c;
    c.domain = Domain::target;
    c.band_intensity = 0.45;
    c.speckle_variance = 0.35;
    c.blur_sigma = 1.3;
    c.gain_drift = 0.15;
    c.rng_seed = seed;
    return c;
}

void PhantomConfig::validate() const {
    if (frames_per_video < 1) throw ConfigError("phantom: frames_per_video must be >= 1");
    if (speckle_variance < 0.0) throw ConfigError("phantom: speckle_variance must be >= 0");
    if (blur_sigma < 0.0) throw ConfigError("phantom: blur_sigma must be >= 0");
    if (image_size < 8) throw ConfigError("phantom: image_size too small");
    if (num_patients < 1 || videos_per_patient < 1) throw ConfigError("phantom: empty dataset");
}

namespace {

constexpr double kBackground = 0.25;

struct VideoGeometry {
    double y0, xc, curvature, thickness, drift_dir;
};

VideoGeometry sample_geometry(const PhantomConfig& cfg, Rng& rng) {
    const double h = static_cast<double>(cfg.image_size);
    VideoGeometry g;
    g.thickness = h / 16.0 * rng.uniform(0.8, 1.3);
    g.curvature = rng.uniform(-0.22, 0.22);
    g.xc = rng.uniform(0.35, 0.65);
    g.drift_dir = rng.bernoulli(0.5) ? 1.0 : -1.0;
    // keep the band inside [0.2h, 0.8h] over the whole drift span
    const double span = cfg.drift_rate * static_cast<double>(cfg.frames_per_video - 1);
    double lo = 0.25 * h, hi = 0.7 * h;
    if (g.drift_dir > 0) hi = std::max(lo + 1.0, hi - span);
    else lo = std::min(hi - 1.0, lo + span);
    g.y0 = rng.uniform(lo, hi);
    return g;
}

PhantomFrame render(const PhantomConfig& cfg, const VideoGeometry& g, std::size_t frame_index,
                    Rng& rng) {
    const std::size_t n = cfg.image_size;
    const double w = static_cast<double>(n);
    Image clean(n, n, static_cast<float>(kBackground));
    Image mask(n, n, 0.0f);

    const double yc_base = g.y0 + g.drift_dir * cfg.drift_rate * static_cast<double>(frame_index);
    const double t = g.thickness;
    // quadratic bump cross-section, exactly zero beyond one thickness
    for (std::size_t x = 0; x < n; ++x) {
        const double xn = (static_cast<double>(x) / w - g.xc) * 2.0;
        const double cy = yc_base + g.curvature * xn * xn * w;
        for (std::size_t y = 0; y < n; ++y) {
            const double dy = (static_cast<double>(y) - cy) / t;
            const double profile = 1.0 - dy * dy;
            if (profile <= 0.0) continue;
            clean.at(y, x) += static_cast<float>(cfg.band_intensity * profile);
            if (profile >= cfg.mask_level_fraction) mask.at(y, x) = 1.0f;
        }
    }

    const double gain =
        1.0 + cfg.gain_drift *
                  std::sin(2.0 * M_PI * static_cast<double>(frame_index) /
                           static_cast<double>(cfg.frames_per_video));
    Image raw(n, n);
    for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
        double speckle = 1.0;
        if (cfg.speckle_variance > 0.0) {
            speckle = 1.0 + cfg.speckle_variance * (rng.rayleigh_unit_mean() - 1.0);
            if (speckle < 0.0) speckle = 0.0;
        }
        raw.pixels[i] = static_cast<float>(std::clamp(gain * clean.pixels[i] * speckle, 0.0, 1.0));
    }
    PhantomFrame out;
    out.image = gaussian_blur(raw, cfg.blur_sigma);
    for (auto& p : out.image.pixels) p = std::clamp(p, 0.0f, 1.0f);
    out.mask = std::move(mask);
    return out;
}

std::string zero_pad(std::size_t v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace

PhantomFrame render_phantom_frame(const PhantomConfig& cfg, double band_y, double band_x,
                                  double curvature, double thickness, std::size_t frame_index) {
    VideoGeometry g{band_y, band_x, curvature, thickness, 1.0};
    Rng rng(derive_seed(cfg.rng_seed, "phantom_frame"));
    return render(cfg, g, frame_index, rng);
}

Manifest generate_phantom(const PhantomConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    const std::string prefix = cfg.domain == Domain::source ? "src" : "tgt";
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    fs::create_directories(fs::path(out_dir) / "masks", ec);
    if (ec) throw DataError("cannot create output directory: " + out_dir);

    Manifest m;
    m.root = out_dir;
    Rng master(derive_seed(cfg.rng_seed, "phantom:" + prefix));
    for (std::size_t p = 0; p < cfg.num_patients; ++p) {
        const std::string patient = prefix + "P" + zero_pad(p, 2);
        for (std::size_t v = 0; v < cfg.videos_per_patient; ++v) {
            const std::string video = patient + "v" + std::to_string(v);
            Rng vrng(master.next_u64());
            const VideoGeometry geom = sample_geometry(cfg, vrng);
            fs::create_directories(fs::path(out_dir) / "images" / video, ec);
            fs::create_directories(fs::path(out_dir) / "masks" / video, ec);
            if (ec) throw DataError("cannot create video directory for " + video);
            for (std::size_t f = 0; f < cfg.frames_per_video; ++f) {
                PhantomFrame frame = render(cfg, geom, f, vrng);
                FrameRecord r;
                r.patient_id = patient;
                r.video_id = video;
                r.frame_index = static_cast<std::uint32_t>(f);
                r.domain = cfg.domain;
                r.image_path = "images/" + video + "/f" + zero_pad(f, 3) + ".png";
                r.mask_path = "masks/" + video + "/f" + zero_pad(f, 3) + ".png";
                save_png(m.resolve(r.image_path), frame.image);
                Image mask8 = frame.mask;
                for (auto& px : mask8.pixels) px = px > 0.5f ? 1.0f : 0.0f;
                save_png(m.resolve(*r.mask_path), mask8);
                m.records.push_back(std::move(r));
            }
        }
    }
    return m;
}

}  // namespace xdseg
