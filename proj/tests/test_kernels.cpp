#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <vector>

#include "oracles.hpp"
#include "xdseg/kernels.hpp"
#include "xdseg/rng.hpp"

using namespace xdseg;
namespace k = xdseg::kernels;

namespace {

std::vector<float> randf(Rng& rng, std::size_t n) {
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(rng.normal());
    return v;
}

// Straightforward triple loop in double precision.
std::vector<float> gemm_oracle(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t kk,
                               float alpha, const std::vector<float>& a,
                               const std::vector<float>& b, float beta,
                               const std::vector<float>& c0) {
    std::vector<float> c(c0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < kk; ++l) {
                const double av = ta ? a[l * m + i] : a[i * kk + l];
                const double bv = tb ? b[j * kk + l] : b[l * n + j];
                acc += av * bv;
            }
            c[i * n + j] = static_cast<float>(alpha * acc + beta * c0[i * n + j]);
        }
    return c;
}

// Mixed error: relative for large values, absolute below 1. Entries are O(10)
// here, so float rounding keeps this below ~1e-4.
void check_close(const std::vector<float>& got, const std::vector<float>& want, double tol) {
    REQUIRE(got.size() == want.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        const double scale = std::max({1.0, std::fabs(double(got[i])), std::fabs(double(want[i]))});
        worst = std::max(worst, std::fabs(double(got[i]) - want[i]) / scale);
    }
    CHECK(worst < tol);
}

}  // namespace

TEST_CASE("gemm: every backend against the scalar oracle, all transpose modes") {
    Rng rng(201);
    for (int it = 0; it < 30; ++it) {
        const std::size_t m = 1 + rng.uniform_index(17);
        const std::size_t n = 1 + rng.uniform_index(17);
        const std::size_t kk = 1 + rng.uniform_index(33);
        const bool ta = rng.bernoulli(0.5), tb = rng.bernoulli(0.5);
        const float alpha = static_cast<float>(rng.uniform(-2.0, 2.0));
        const float beta = it % 3 == 0 ? 0.0f : static_cast<float>(rng.uniform(-1.0, 1.0));
        const auto a = randf(rng, m * kk);
        const auto b = randf(rng, kk * n);
        const auto c0 = randf(rng, m * n);
        const auto want = gemm_oracle(ta, tb, m, n, kk, alpha, a, b, beta, c0);

        auto serial = c0;
        k::serial::gemm(ta, tb, m, n, kk, alpha, a.data(), b.data(), beta, serial.data());
        check_close(serial, want, 1e-4);

        auto omp = c0;
        k::omp::gemm(ta, tb, m, n, kk, alpha, a.data(), b.data(), beta, omp.data());
        check_close(omp, want, 1e-4);

        auto blas = c0;
        k::set_backend(k::Backend::blas);
        k::gemm(ta, tb, m, n, kk, alpha, a.data(), b.data(), beta, blas.data());
        check_close(blas, want, 1e-4);
    }
}

TEST_CASE("gemm identity and zero special cases") {
    Rng rng(202);
    const std::size_t n = 8;
    std::vector<float> eye(n * n, 0.0f);
    for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0f;
    const auto x = randf(rng, n * n);
    std::vector<float> out(n * n, 7.0f);
    k::serial::gemm(false, false, n, n, n, 1.0f, eye.data(), x.data(), 0.0f, out.data());
    CHECK(out == x);
    // alpha = 0, beta = 1 leaves C untouched
    auto c = randf(rng, n * n);
    const auto c0 = c;
    k::serial::gemm(false, false, n, n, n, 0.0f, x.data(), x.data(), 1.0f, c.data());
    CHECK(c == c0);
}

TEST_CASE("backend dispatch: set_backend and environment initialization") {
    k::set_backend(k::Backend::serial);
    CHECK(k::backend() == k::Backend::serial);
    setenv("XDSEG_KERNEL_BACKEND", "openmp", 1);
    k::init_backend_from_env();
    CHECK(k::backend() == k::Backend::openmp);
    setenv("XDSEG_KERNEL_BACKEND", "blas", 1);
    k::init_backend_from_env();
    CHECK(k::backend() == k::Backend::blas);
    unsetenv("XDSEG_KERNEL_BACKEND");
}

TEST_CASE("gaussian blur: parallel equals serial bit for bit") {
    Rng rng(203);
    const std::size_t h = 37, w = 23;
    const auto src = randf(rng, h * w);
    std::vector<float> a(h * w), b(h * w);
    for (double sigma : {0.5, 1.3, 3.0}) {
        k::serial::gaussian_blur(src.data(), a.data(), h, w, sigma);
        k::omp::gaussian_blur(src.data(), b.data(), h, w, sigma);
        CHECK(a == b);
    }
}

TEST_CASE("gaussian blur preserves constants and total mass") {
    const std::size_t h = 16, w = 16;
    std::vector<float> src(h * w, 0.25f), dst(h * w);
    k::serial::gaussian_blur(src.data(), dst.data(), h, w, 1.5);
    for (float v : dst) CHECK(v == doctest::Approx(0.25f).epsilon(1e-6));

    // Away from edges a centered impulse keeps its mass.
    std::vector<float> imp(h * w, 0.0f);
    imp[8 * w + 8] = 1.0f;
    k::serial::gaussian_blur(imp.data(), dst.data(), h, w, 1.0);
    double mass = 0.0;
    for (float v : dst) mass += v;
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-5));
    // ... and stays symmetric around the impulse
    CHECK(dst[8 * w + 6] == doctest::Approx(dst[8 * w + 10]).epsilon(1e-6));
    CHECK(dst[6 * w + 8] == doctest::Approx(dst[10 * w + 8]).epsilon(1e-6));

    // sigma = 0 is the identity
    k::serial::gaussian_blur(imp.data(), dst.data(), h, w, 0.0);
    CHECK(dst == imp);
}

TEST_CASE("bilinear resize: identity, constants, and an exact 2x case") {
    Rng rng(204);
    const std::size_t h = 9, w = 13;
    const auto src = randf(rng, h * w);
    std::vector<float> same(h * w);
    k::serial::resize_bilinear(src.data(), h, w, same.data(), h, w);
    CHECK(same == src);

    std::vector<float> flat(h * w, 0.625f), out(32 * 20);
    k::serial::resize_bilinear(flat.data(), h, w, out.data(), 32, 20);
    for (float v : out) CHECK(v == doctest::Approx(0.625f).epsilon(1e-6));

    // 2x upscale with half-pixel centers: dst(1,1) sits exactly 0.25 of the
    // way between the four source pixels nearest (0.25, 0.25).
    std::vector<float> quad = {0.0f, 1.0f, 2.0f, 3.0f};  // 2x2
    std::vector<float> up(4 * 4);
    k::serial::resize_bilinear(quad.data(), 2, 2, up.data(), 4, 4);
    CHECK(up[0] == doctest::Approx(0.0f));             // clamped corner
    CHECK(up[1 * 4 + 1] == doctest::Approx(0.75f));    // (0.25, 0.25) blend
    CHECK(up[2 * 4 + 2] == doctest::Approx(2.25f));    // (0.75, 0.75) blend
    CHECK(up[3 * 4 + 3] == doctest::Approx(3.0f));     // clamped corner

    std::vector<float> par(32 * 20);
    k::omp::resize_bilinear(flat.data(), h, w, par.data(), 32, 20);
    CHECK(par == out);
}

TEST_CASE("softmax rows: normalization and oracle agreement") {
    Rng rng(205);
    const std::size_t rows = 11, cols = 17;
    auto x = randf(rng, rows * cols);
    for (float& v : x) v *= 10.0f;  // exercise the max-shift
    auto serial = x;
    k::serial::softmax_rows(serial.data(), rows, cols);
    auto omp = x;
    k::omp::softmax_rows(omp.data(), rows, cols);
    CHECK(serial == omp);

    for (std::size_t r = 0; r < rows; ++r) {
        double sum = 0.0, mx = -1e30;
        for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, double(x[r * cols + j]));
        std::vector<double> want(cols);
        double denom = 0.0;
        for (std::size_t j = 0; j < cols; ++j) denom += std::exp(double(x[r * cols + j]) - mx);
        for (std::size_t j = 0; j < cols; ++j)
            want[j] = std::exp(double(x[r * cols + j]) - mx) / denom;
        for (std::size_t j = 0; j < cols; ++j) {
            sum += serial[r * cols + j];
            CHECK(double(serial[r * cols + j]) == doctest::Approx(want[j]).epsilon(1e-5));
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("im2col gathers exactly the padded window values") {
    // 1 channel, 4x4 image, 3x3 kernel, stride 1, pad 1 -> 9 x 16 columns.
    std::vector<float> img(16);
    for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<float>(i + 1);
    std::vector<float> col(9 * 16, -1.0f);
    k::im2col(img.data(), 1, 4, 4, 3, 3, 1, 1, col.data());

    auto at = [&](std::size_t ky, std::size_t kx, std::size_t oy, std::size_t ox) {
        return col[(ky * 3 + kx) * 16 + oy * 4 + ox];
    };
    CHECK(at(0, 0, 0, 0) == 0.0f);   // top-left tap over the padding
    CHECK(at(1, 1, 0, 0) == 1.0f);   // center tap = pixel (0,0)
    CHECK(at(1, 1, 2, 3) == 12.0f);  // center tap = pixel (2,3)
    CHECK(at(2, 2, 3, 3) == 0.0f);   // bottom-right tap over the padding
    CHECK(at(0, 1, 1, 2) == 3.0f);   // pixel (0,2)

    // Full scalar cross-check of every entry.
    for (std::size_t ky = 0; ky < 3; ++ky)
        for (std::size_t kx = 0; kx < 3; ++kx)
            for (std::size_t oy = 0; oy < 4; ++oy)
                for (std::size_t ox = 0; ox < 4; ++ox) {
                    const long iy = long(oy) + long(ky) - 1;
                    const long ix = long(ox) + long(kx) - 1;
                    const float want = (iy >= 0 && iy < 4 && ix >= 0 && ix < 4)
                                           ? img[iy * 4 + ix]
                                           : 0.0f;
                    CHECK(at(ky, kx, oy, ox) == want);
                }
}

TEST_CASE("col2im is the adjoint of im2col") {
    Rng rng(206);
    const std::size_t ic = 3, h = 7, w = 5, kh = 3, kw = 3, stride = 2, pad = 1;
    const std::size_t oh = k::conv_out(h, kh, stride, pad);
    const std::size_t ow = k::conv_out(w, kw, stride, pad);
    const auto x = randf(rng, ic * h * w);
    const auto c = randf(rng, ic * kh * kw * oh * ow);

    std::vector<float> fx(ic * kh * kw * oh * ow);
    k::im2col(x.data(), ic, h, w, kh, kw, stride, pad, fx.data());
    std::vector<float> bc(ic * h * w, 0.0f);
    k::col2im(c.data(), ic, h, w, kh, kw, stride, pad, bc.data());

    double lhs = 0.0, rhs = 0.0;  // <c, im2col(x)> vs <col2im(c), x>
    for (std::size_t i = 0; i < fx.size(); ++i) lhs += double(c[i]) * fx[i];
    for (std::size_t i = 0; i < bc.size(); ++i) rhs += double(bc[i]) * x[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
}

TEST_CASE("col2im accumulates overlapping taps") {
    // stride 1: each interior pixel of a 3x3 image is touched by several
    // kernel taps; all-ones columns count exactly how many.
    const std::size_t h = 3, w = 3, kh = 3, kw = 3;
    const std::size_t oh = k::conv_out(h, kh, 1, 1), ow = k::conv_out(w, kw, 1, 1);
    std::vector<float> col(kh * kw * oh * ow, 1.0f);
    std::vector<float> img(h * w, 0.0f);
    k::col2im(col.data(), 1, h, w, kh, kw, 1, 1, img.data());
    // Center pixel is inside all 9 windows; corners only in 4.
    CHECK(img[4] == 9.0f);
    CHECK(img[0] == 4.0f);
    CHECK(img[2] == 4.0f);
    CHECK(img[1] == 6.0f);
}
