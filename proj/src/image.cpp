#include "xdseg/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>

#include "xdseg/audit.hpp"
#include "xdseg/errors.hpp"
#include "xdseg/kernels.hpp"
#include "xdseg/rng.hpp"

namespace xdseg {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

constexpr char kRasterMagic[8] = {'X', 'D', 'R', 'A', 'S', '1', '\n', '\0'};

}  // namespace

Image load_png(const std::string& path) {
    audit::record_read(path);
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw DataError("cannot open image: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("png init failed: " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("png decode failed: " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_strip_alpha(png);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color & PNG_COLOR_MASK_COLOR || color == PNG_COLOR_TYPE_PALETTE)
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    const std::size_t h = png_get_image_height(png, info);
    const std::size_t w = png_get_image_width(png, info);
    Image img(h, w);
    std::vector<std::uint8_t> row(w);
    for (std::size_t y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (std::size_t x = 0; x < w; ++x) img.at(y, x) = row[x] / 255.0f;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

namespace {

void write_png_impl(const std::string& path, std::size_t h, std::size_t w, int color_type,
                    const std::uint8_t* data, std::size_t row_bytes) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw DataError("cannot write image: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("png init failed: " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("png encode failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < h; ++y)
        png_write_row(png, const_cast<png_bytep>(data + y * row_bytes));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void save_png(const std::string& path, const Image& img) {
    std::vector<std::uint8_t> bytes(img.h * img.w);
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize8(img.pixels[i]);
    write_png_impl(path, img.h, img.w, PNG_COLOR_TYPE_GRAY, bytes.data(), img.w);
}

void save_png_rgb(const std::string& path, std::size_t h, std::size_t w,
                  const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != h * w * 3) throw InvalidInput("rgb buffer size mismatch");
    write_png_impl(path, h, w, PNG_COLOR_TYPE_RGB, rgb.data(), w * 3);
}

Image load_raster(const std::string& path) {
    audit::record_read(path);
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw DataError("cannot open raster: " + path);
    char magic[8];
    if (std::fread(magic, 1, 8, f.get()) != 8 || std::memcmp(magic, kRasterMagic, 8) != 0)
        throw IntegrityError("bad raster magic: " + path);
    std::uint32_t h = 0, w = 0;
    if (std::fread(&h, 4, 1, f.get()) != 1 || std::fread(&w, 4, 1, f.get()) != 1)
        throw IntegrityError("truncated raster header: " + path);
    Image img(h, w);
    if (std::fread(img.pixels.data(), 4, img.pixels.size(), f.get()) != img.pixels.size())
        throw IntegrityError("truncated raster data: " + path);
    std::uint64_t digest = 0;
    if (std::fread(&digest, 8, 1, f.get()) != 1)
        throw IntegrityError("missing raster digest: " + path);
    std::uint64_t expect = fnv1a64(&h, 4, fnv1a64(img.pixels.data(), img.pixels.size() * 4));
    if (digest != expect) throw IntegrityError("raster digest mismatch: " + path);
    return img;
}

void save_raster(const std::string& path, const Image& img) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw DataError("cannot write raster: " + path);
    const std::uint32_t h = static_cast<std::uint32_t>(img.h);
    const std::uint32_t w = static_cast<std::uint32_t>(img.w);
    const std::uint64_t digest = fnv1a64(&h, 4, fnv1a64(img.pixels.data(), img.pixels.size() * 4));
    bool ok = std::fwrite(kRasterMagic, 1, 8, f.get()) == 8 &&
              std::fwrite(&h, 4, 1, f.get()) == 1 && std::fwrite(&w, 4, 1, f.get()) == 1 &&
              std::fwrite(img.pixels.data(), 4, img.pixels.size(), f.get()) == img.pixels.size() &&
              std::fwrite(&digest, 8, 1, f.get()) == 1;
    if (!ok) throw DataError("raster write failed: " + path);
}

Image load_probability_map(const std::string& path) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0) return load_png(path);
    return load_raster(path);
}

Image pad_to_square(const Image& img) {
    if (img.empty()) throw InvalidInput("pad_to_square: empty image");
    const std::size_t side = std::max(img.h, img.w);
    Image out(side, side, 0.0f);
    const std::size_t oy = (side - img.h) / 2;
    const std::size_t ox = (side - img.w) / 2;
    for (std::size_t y = 0; y < img.h; ++y)
        std::memcpy(&out.at(y + oy, ox), img.pixels.data() + y * img.w, img.w * sizeof(float));
    return out;
}

Image pad_and_resize(const Image& img, std::size_t target) {
    if (img.empty() || target == 0) throw InvalidInput("pad_and_resize: empty input");
    Image sq = (img.h == img.w) ? img : pad_to_square(img);
    return resize_bilinear(sq, target, target);
}

Image gaussian_blur(const Image& img, double sigma) {
    Image out(img.h, img.w);
    kernels::gaussian_blur(img.pixels.data(), out.pixels.data(), img.h, img.w, sigma);
    return out;
}

Image resize_bilinear(const Image& img, std::size_t h, std::size_t w) {
    if (img.h == h && img.w == w) return img;
    Image out(h, w);
    kernels::resize_bilinear(img.pixels.data(), img.h, img.w, out.pixels.data(), h, w);
    return out;
}

}  // namespace xdseg
