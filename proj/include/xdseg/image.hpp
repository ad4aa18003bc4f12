#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xdseg {

// Grayscale image, float values in [0,1], row-major.
struct Image {
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(std::size_t h_, std::size_t w_, float fill = 0.0f) : h(h_), w(w_), pixels(h_ * w_, fill) {}

    float& at(std::size_t y, std::size_t x) { return pixels[y * w + x]; }
    float at(std::size_t y, std::size_t x) const { return pixels[y * w + x]; }
    bool empty() const { return pixels.empty(); }
};

// 8-bit grayscale PNG. Loads record in the access audit.
Image load_png(const std::string& path);
void save_png(const std::string& path, const Image& img);

// 8-bit RGB PNG (report overlays). rgb is h*w*3 bytes.
void save_png_rgb(const std::string& path, std::size_t h, std::size_t w,
                  const std::vector<std::uint8_t>& rgb);

// 32-bit float raster sidecar with integrity digest, for probability maps.
Image load_raster(const std::string& path);
void save_raster(const std::string& path, const Image& img);

// Loads either format by extension (.png vs .f32).
Image load_probability_map(const std::string& path);

// Centered zero padding on the shorter axis; odd remainders pad one extra
// pixel at the bottom/right.
Image pad_to_square(const Image& img);

// pad_to_square followed by bilinear resize to target x target.
Image pad_and_resize(const Image& img, std::size_t target);

Image gaussian_blur(const Image& img, double sigma);
Image resize_bilinear(const Image& img, std::size_t h, std::size_t w);

inline std::uint8_t quantize8(float v) {
    float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    return static_cast<std::uint8_t>(c * 255.0f + 0.5f);
}

}  // namespace xdseg
