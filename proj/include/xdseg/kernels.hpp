#pragma once

#include <cstddef>

namespace xdseg::kernels {

// Hot inner loops live here. Every kernel has a serial reference used by the
// tests and the benchmark; the dispatching entry points pick the configured
// backend (BLAS for gemm, OpenMP elsewhere).
enum class Backend { serial, openmp, blas };

Backend backend();
void set_backend(Backend b);
// Reads XDSEG_KERNEL_BACKEND (serial|openmp|blas); unset keeps the default.
void init_backend_from_env();

// C(MxN) = alpha * op(A) * op(B) + beta * C, packed row-major storage.
// op(A) is MxK (stored KxM when trans_a), op(B) is KxN.
namespace serial {
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          float alpha, const float* a, const float* b, float beta, float* c);
void gaussian_blur(const float* src, float* dst, std::size_t h, std::size_t w, double sigma);
void resize_bilinear(const float* src, std::size_t sh, std::size_t sw,
                     float* dst, std::size_t dh, std::size_t dw);
void softmax_rows(float* x, std::size_t rows, std::size_t cols);
}  // namespace serial

namespace omp {
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          float alpha, const float* a, const float* b, float beta, float* c);
void gaussian_blur(const float* src, float* dst, std::size_t h, std::size_t w, double sigma);
void resize_bilinear(const float* src, std::size_t sh, std::size_t sw,
                     float* dst, std::size_t dh, std::size_t dw);
void softmax_rows(float* x, std::size_t rows, std::size_t cols);
}  // namespace omp

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          float alpha, const float* a, const float* b, float beta, float* c);
void gaussian_blur(const float* src, float* dst, std::size_t h, std::size_t w, double sigma);
void resize_bilinear(const float* src, std::size_t sh, std::size_t sw,
                     float* dst, std::size_t dh, std::size_t dw);
void softmax_rows(float* x, std::size_t rows, std::size_t cols);

// NCHW conv plumbing. col has shape (ic*kh*kw) x (oh*ow) for one image.
void im2col(const float* img, std::size_t ic, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad, float* col);
void col2im(const float* col, std::size_t ic, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad, float* img);

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace xdseg::kernels
