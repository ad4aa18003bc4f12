#include "xdseg/kernels.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

namespace xdseg::kernels {

namespace {
Backend g_backend = Backend::blas;

inline std::size_t a_index(bool trans, std::size_t i, std::size_t l, std::size_t m, std::size_t k) {
    (void)m;
    return trans ? l * m + i : i * k + l;
}
}  // namespace

Backend backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

void init_backend_from_env() {
    const char* e = std::getenv("XDSEG_KERNEL_BACKEND");
    if (!e) return;
    std::string s(e);
    if (s == "serial") g_backend = Backend::serial;
    else if (s == "openmp") g_backend = Backend::openmp;
    else if (s == "blas") g_backend = Backend::blas;
}

// ---------------------------------------------------------------------------
// gemm

namespace serial {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          float alpha, const float* a, const float* b, float beta, float* c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < k; ++l) {
                float av = a[a_index(trans_a, i, l, m, k)];
                float bv = trans_b ? b[j * k + l] : b[l * n + j];
                acc += static_cast<double>(av) * bv;
            }
            c[i * n + j] = alpha * static_cast<float>(acc) + beta * c[i * n + j];
        }
    }
}

}  // namespace serial

namespace omp {

// ikj ordering keeps the inner loop contiguous over B and C rows.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          float alpha, const float* a, const float* b, float beta, float* c) {
    std::vector<float> bt;
    const float* bp = b;
    if (trans_b) {
        bt.resize(k * n);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t l = 0; l < k; ++l) bt[l * n + j] = b[j * k + l];
        bp = bt.data();
    }
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < m; ++i) {
        float* crow = c + i * n;
        if (beta == 0.0f) std::fill(crow, crow + n, 0.0f);
        else if (beta != 1.0f)
            for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
        for (std::size_t l = 0; l < k; ++l) {
            const float av = alpha * a[a_index(trans_a, i, l, m, k)];
            const float* brow = bp + l * n;
#pragma omp simd
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace omp

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          float alpha, const float* a, const float* b, float beta, float* c) {
    switch (g_backend) {
        case Backend::serial:
            serial::gemm(trans_a, trans_b, m, n, k, alpha, a, b, beta, c);
            return;
        case Backend::openmp:
            omp::gemm(trans_a, trans_b, m, n, k, alpha, a, b, beta, c);
            return;
        case Backend::blas:
            cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                        trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
                        static_cast<int>(n), static_cast<int>(k), alpha, a,
                        static_cast<int>(trans_a ? m : k), b, static_cast<int>(trans_b ? k : n),
                        beta, c, static_cast<int>(n));
            return;
    }
}

// ---------------------------------------------------------------------------
// gaussian blur, separable with clamp-to-edge boundary

namespace {

std::vector<float> blur_taps(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<float> taps(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        taps[i + radius] = static_cast<float>(v);
        sum += v;
    }
    for (auto& t : taps) t = static_cast<float>(t / sum);
    return taps;
}

template <bool Parallel>
void blur_impl(const float* src, float* dst, std::size_t h, std::size_t w, double sigma) {
    if (sigma <= 0.0) {
        if (dst != src) std::memcpy(dst, src, h * w * sizeof(float));
        return;
    }
    const auto taps = blur_taps(sigma);
    const int radius = (static_cast<int>(taps.size()) - 1) / 2;
    std::vector<float> tmp(h * w);
#pragma omp parallel for schedule(static) if (Parallel)
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            float acc = 0.0f;
            for (int t = -radius; t <= radius; ++t) {
                long xx = std::clamp<long>(static_cast<long>(x) + t, 0, static_cast<long>(w) - 1);
                acc += taps[t + radius] * src[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
#pragma omp parallel for schedule(static) if (Parallel)
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            float acc = 0.0f;
            for (int t = -radius; t <= radius; ++t) {
                long yy = std::clamp<long>(static_cast<long>(y) + t, 0, static_cast<long>(h) - 1);
                acc += taps[t + radius] * tmp[yy * w + x];
            }
            dst[y * w + x] = acc;
        }
    }
}

// half-pixel-center source mapping
template <bool Parallel>
void resize_impl(const float* src, std::size_t sh, std::size_t sw, float* dst, std::size_t dh,
                 std::size_t dw) {
    if (sh == dh && sw == dw) {
        if (dst != src) std::memcpy(dst, src, sh * sw * sizeof(float));
        return;
    }
    const double sy = static_cast<double>(sh) / dh;
    const double sx = static_cast<double>(sw) / dw;
#pragma omp parallel for schedule(static) if (Parallel)
    for (std::size_t y = 0; y < dh; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(sh - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, sh - 1);
        const float wy = static_cast<float>(fy - y0);
        for (std::size_t x = 0; x < dw; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(sw - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, sw - 1);
            const float wx = static_cast<float>(fx - x0);
            const float top = src[y0 * sw + x0] * (1.0f - wx) + src[y0 * sw + x1] * wx;
            const float bot = src[y1 * sw + x0] * (1.0f - wx) + src[y1 * sw + x1] * wx;
            dst[y * dw + x] = top * (1.0f - wy) + bot * wy;
        }
    }
}

template <bool Parallel>
void softmax_impl(float* x, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static) if (Parallel)
    for (std::size_t r = 0; r < rows; ++r) {
        float* row = x + r * cols;
        float mx = row[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (std::size_t j = 0; j < cols; ++j) row[j] *= inv;
    }
}

}  // namespace

namespace serial {
void gaussian_blur(const float* src, float* dst, std::size_t h, std::size_t w, double sigma) {
    blur_impl<false>(src, dst, h, w, sigma);
}
void resize_bilinear(const float* src, std::size_t sh, std::size_t sw, float* dst, std::size_t dh,
                     std::size_t dw) {
    resize_impl<false>(src, sh, sw, dst, dh, dw);
}
void softmax_rows(float* x, std::size_t rows, std::size_t cols) { softmax_impl<false>(x, rows, cols); }
}  // namespace serial

namespace omp {
void gaussian_blur(const float* src, float* dst, std::size_t h, std::size_t w, double sigma) {
    blur_impl<true>(src, dst, h, w, sigma);
}
void resize_bilinear(const float* src, std::size_t sh, std::size_t sw, float* dst, std::size_t dh,
                     std::size_t dw) {
    resize_impl<true>(src, sh, sw, dst, dh, dw);
}
void softmax_rows(float* x, std::size_t rows, std::size_t cols) { softmax_impl<true>(x, rows, cols); }
}  // namespace omp

void gaussian_blur(const float* src, float* dst, std::size_t h, std::size_t w, double sigma) {
    if (g_backend == Backend::serial) serial::gaussian_blur(src, dst, h, w, sigma);
    else omp::gaussian_blur(src, dst, h, w, sigma);
}
void resize_bilinear(const float* src, std::size_t sh, std::size_t sw, float* dst, std::size_t dh,
                     std::size_t dw) {
    if (g_backend == Backend::serial) serial::resize_bilinear(src, sh, sw, dst, dh, dw);
    else omp::resize_bilinear(src, sh, sw, dst, dh, dw);
}
void softmax_rows(float* x, std::size_t rows, std::size_t cols) {
    if (g_backend == Backend::serial) serial::softmax_rows(x, rows, cols);
    else omp::softmax_rows(x, rows, cols);
}

// ---------------------------------------------------------------------------
// im2col / col2im

void im2col(const float* img, std::size_t ic, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, float* col) {
    const std::size_t oh = conv_out(h, kh, stride, pad);
    const std::size_t ow = conv_out(w, kw, stride, pad);
    const std::size_t cols = oh * ow;
#pragma omp parallel for schedule(static)
    for (std::size_t c = 0; c < ic; ++c) {
        const float* src = img + c * h * w;
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                float* out = col + ((c * kh + ky) * kw + kx) * cols;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    const bool row_ok = iy >= 0 && iy < static_cast<long>(h);
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        out[oy * ow + ox] = (row_ok && ix >= 0 && ix < static_cast<long>(w))
                                                ? src[iy * w + ix]
                                                : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im(const float* col, std::size_t ic, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, float* img) {
    const std::size_t oh = conv_out(h, kh, stride, pad);
    const std::size_t ow = conv_out(w, kw, stride, pad);
    const std::size_t cols = oh * ow;
#pragma omp parallel for schedule(static)
    for (std::size_t c = 0; c < ic; ++c) {
        float* dst = img + c * h * w;
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                const float* in = col + ((c * kh + ky) * kw + kx) * cols;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        if (ix < 0 || ix >= static_cast<long>(w)) continue;
                        dst[iy * w + ix] += in[oy * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace xdseg::kernels
