#include "xdseg/augment.hpp"

#include <algorithm>
#include <cmath>

#include "xdseg/errors.hpp"

namespace xdseg {

void AugmentationConfig::validate() const {
    if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0))
        throw ConfigError("augment: require 0 < crop_scale_min <= crop_scale_max <= 1");
    if (!(aspect_min > 0.0 && aspect_min <= aspect_max))
        throw ConfigError("augment: require 0 < aspect_min <= aspect_max");
    for (double p : {flip_probability, jitter_probability})
        if (p < 0.0 || p > 1.0) throw ConfigError("augment: probabilities must be in [0,1]");
    if (output_size == 0) throw ConfigError("augment: output_size must be positive");
}

namespace {

Image crop_region(const Image& img, std::size_t y0, std::size_t x0, std::size_t ch, std::size_t cw) {
    Image out(ch, cw);
    for (std::size_t y = 0; y < ch; ++y)
        for (std::size_t x = 0; x < cw; ++x) out.at(y, x) = img.at(y0 + y, x0 + x);
    return out;
}

Image random_resized_crop(const Image& img, const AugmentationConfig& cfg, Rng& rng) {
    const std::size_t h = img.h, w = img.w;
    const double area = static_cast<double>(h) * static_cast<double>(w);
    std::size_t ch = h, cw = w, y0 = 0, x0 = 0;
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target_area = area * rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max);
        const double log_ratio = rng.uniform(std::log(cfg.aspect_min), std::log(cfg.aspect_max));
        const double aspect = std::exp(log_ratio);
        const auto tw = static_cast<long>(std::lround(std::sqrt(target_area * aspect)));
        const auto th = static_cast<long>(std::lround(std::sqrt(target_area / aspect)));
        if (tw < 1 || th < 1 || tw > static_cast<long>(w) || th > static_cast<long>(h)) continue;
        ch = static_cast<std::size_t>(th);
        cw = static_cast<std::size_t>(tw);
        y0 = h == ch ? 0 : rng.uniform_index(h - ch + 1);
        x0 = w == cw ? 0 : rng.uniform_index(w - cw + 1);
        break;
    }
    if (ch == h && cw == w && y0 == 0 && x0 == 0 && cfg.output_size == h && h == w)
        return img;  // full-frame crop at target size stays bit-identical
    Image cropped = crop_region(img, y0, x0, ch, cw);
    return resize_bilinear(cropped, cfg.output_size, cfg.output_size);
}

void hflip(Image& img) {
    for (std::size_t y = 0; y < img.h; ++y)
        for (std::size_t x = 0; x < img.w / 2; ++x) std::swap(img.at(y, x), img.at(y, img.w - 1 - x));
}

void clamp01(Image& img) {
    for (auto& p : img.pixels) p = std::clamp(p, 0.0f, 1.0f);
}

}  // namespace

Image augment(const Image& img, const AugmentationConfig& cfg, Rng& rng) {
    cfg.validate();
    Image out = random_resized_crop(img, cfg, rng);
    if (rng.bernoulli(cfg.flip_probability)) hflip(out);
    if (rng.bernoulli(cfg.jitter_probability)) {
        const double s = cfg.jitter_strength;
        const float brightness = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - s), 1.0 + s));
        const float contrast = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - s), 1.0 + s));
        rng.uniform(std::max(0.0, 1.0 - s), 1.0 + s);  // saturation draw; identity on grayscale
        for (auto& p : out.pixels) p *= brightness;
        double mean = 0.0;
        for (auto p : out.pixels) mean += p;
        const float m = static_cast<float>(mean / out.pixels.size());
        for (auto& p : out.pixels) p = contrast * p + (1.0f - contrast) * m;
        clamp01(out);
    }
    return out;
}

std::pair<Image, Image> augment_pair(const Image& img, const AugmentationConfig& cfg, Rng& rng) {
    Image a = augment(img, cfg, rng);
    Image b = augment(img, cfg, rng);
    return {std::move(a), std::move(b)};
}

}  // namespace xdseg
