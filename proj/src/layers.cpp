#include "xdseg/layers.hpp"

#include <cmath>
#include <cstring>

#include "xdseg/errors.hpp"
#include "xdseg/kernels.hpp"

namespace xdseg {

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t k, std::size_t s, std::size_t p)
    : in_ch(in),
      out_ch(out),
      kernel(k),
      stride(s),
      pad(p),
      w({out, in, k, k}),
      b({out}),
      dw({out, in, k, k}),
      db({out}) {}

Tensor Conv2d::forward(const Tensor& x) {
    if (x.shape().size() != 4 || x.dim(1) != in_ch)
        throw InvalidInput("Conv2d: input shape " + x.shape_str());
    input_ = x;
    const std::size_t batch = x.dim(0), h = x.dim(2), w_in = x.dim(3);
    out_h_ = kernels::conv_out(h, kernel, stride, pad);
    out_w_ = kernels::conv_out(w_in, kernel, stride, pad);
    const std::size_t cols = in_ch * kernel * kernel;
    const std::size_t positions = out_h_ * out_w_;
    col_.resize(cols * positions);

    Tensor y({batch, out_ch, out_h_, out_w_});
    for (std::size_t i = 0; i < batch; ++i) {
        kernels::im2col(x.data() + i * in_ch * h * w_in, in_ch, h, w_in, kernel, kernel, stride,
                        pad, col_.data());
        float* yi = y.data() + i * out_ch * positions;
        kernels::gemm(false, false, out_ch, positions, cols, 1.0f, w.data(), col_.data(), 0.0f,
                      yi);
        for (std::size_t oc = 0; oc < out_ch; ++oc) {
            const float bias = b[oc];
            float* row = yi + oc * positions;
            for (std::size_t p = 0; p < positions; ++p) row[p] += bias;
        }
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    const std::size_t batch = input_.dim(0), h = input_.dim(2), w_in = input_.dim(3);
    const std::size_t cols = in_ch * kernel * kernel;
    const std::size_t positions = out_h_ * out_w_;

    Tensor dx({batch, in_ch, h, w_in});
    for (std::size_t i = 0; i < batch; ++i) {
        const float* dyi = dy.data() + i * out_ch * positions;
        kernels::im2col(input_.data() + i * in_ch * h * w_in, in_ch, h, w_in, kernel, kernel,
                        stride, pad, col_.data());
        kernels::gemm(false, true, out_ch, cols, positions, 1.0f, dyi, col_.data(), 1.0f,
                      dw.data());
        for (std::size_t oc = 0; oc < out_ch; ++oc) {
            const float* row = dyi + oc * positions;
            double sum = 0.0;
            for (std::size_t p = 0; p < positions; ++p) sum += row[p];
            db[oc] += static_cast<float>(sum);
        }
        // col_ becomes d(col); it is only an output of this gemm
        kernels::gemm(true, false, cols, positions, out_ch, 1.0f, w.data(), dyi, 0.0f,
                      col_.data());
        kernels::col2im(col_.data(), in_ch, h, w_in, kernel, kernel, stride, pad,
                        dx.data() + i * in_ch * h * w_in);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::size_t in, std::size_t out)
    : in_dim(in), out_dim(out), w({out, in}), b({out}), dw({out, in}), db({out}) {}

Tensor Linear::forward(const Tensor& x) {
    if (x.shape().size() != 2 || x.dim(1) != in_dim)
        throw InvalidInput("Linear: input shape " + x.shape_str());
    input_ = x;
    const std::size_t n = x.dim(0);
    Tensor y({n, out_dim});
    kernels::gemm(false, true, n, out_dim, in_dim, 1.0f, x.data(), w.data(), 0.0f, y.data());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out_dim; ++j) y[i * out_dim + j] += b[j];
    return y;
}

Tensor Linear::backward(const Tensor& dy) {
    const std::size_t n = input_.dim(0);
    Tensor dx({n, in_dim});
    kernels::gemm(false, false, n, in_dim, out_dim, 1.0f, dy.data(), w.data(), 0.0f, dx.data());
    kernels::gemm(true, false, out_dim, in_dim, n, 1.0f, dy.data(), input_.data(), 1.0f,
                  dw.data());
    for (std::size_t j = 0; j < out_dim; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += dy[i * out_dim + j];
        db[j] += static_cast<float>(sum);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Activations

Tensor Relu::forward(const Tensor& x) {
    input_ = x;
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] < 0.0f) y[i] = 0.0f;
    return y;
}

Tensor Relu::backward(const Tensor& dy) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
        if (input_[i] <= 0.0f) dx[i] = 0.0f;
    return dx;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor Gelu::forward(const Tensor& x) {
    input_ = x;
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double v = x[i];
        y[i] = static_cast<float>(0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))));
    }
    return y;
}

Tensor Gelu::backward(const Tensor& dy) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) {
        const double v = input_[i];
        const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        const double d =
            0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        dx[i] = static_cast<float>(dy[i] * d);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// LayerNorm

LayerNorm::LayerNorm(std::size_t d)
    : dim(d), gamma({d}, 1.0f), beta({d}), dgamma({d}), dbeta({d}) {}

Tensor LayerNorm::forward(const Tensor& x) {
    if (x.shape().size() != 2 || x.dim(1) != dim)
        throw InvalidInput("LayerNorm: input shape " + x.shape_str());
    const std::size_t n = x.dim(0);
    xhat_ = Tensor({n, dim});
    inv_std_.resize(n);
    Tensor y({n, dim});
    for (std::size_t i = 0; i < n; ++i) {
        const float* row = x.data() + i * dim;
        double mean = 0.0;
        for (std::size_t j = 0; j < dim; ++j) mean += row[j];
        mean /= static_cast<double>(dim);
        double var = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(dim);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std_[i] = static_cast<float>(inv);
        for (std::size_t j = 0; j < dim; ++j) {
            const float xh = static_cast<float>((row[j] - mean) * inv);
            xhat_[i * dim + j] = xh;
            y[i * dim + j] = gamma[j] * xh + beta[j];
        }
    }
    return y;
}

Tensor LayerNorm::backward(const Tensor& dy) {
    const std::size_t n = dy.dim(0);
    Tensor dx({n, dim});
    for (std::size_t i = 0; i < n; ++i) {
        const float* dyr = dy.data() + i * dim;
        const float* xh = xhat_.data() + i * dim;
        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double dxh = static_cast<double>(dyr[j]) * gamma[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
            dgamma[j] += dyr[j] * xh[j];
            dbeta[j] += dyr[j];
        }
        mean_dxh /= static_cast<double>(dim);
        mean_dxh_xh /= static_cast<double>(dim);
        for (std::size_t j = 0; j < dim; ++j) {
            const double dxh = static_cast<double>(dyr[j]) * gamma[j];
            dx[i * dim + j] =
                static_cast<float>(inv_std_[i] * (dxh - mean_dxh - xh[j] * mean_dxh_xh));
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// MultiHeadAttention

MultiHeadAttention::MultiHeadAttention(std::size_t d, std::size_t h)
    : dim(d), heads(h), wq(d, d), wk(d, d), wv(d, d), wo(d, d) {
    if (d % h != 0) throw InvalidInput("MultiHeadAttention: dim not divisible by heads");
}

namespace {

// Copy head h's column block (tokens x head_dim) out of a (rows x dim) matrix.
void gather_head(const float* src, std::size_t row0, std::size_t rows, std::size_t dim,
                 std::size_t h, std::size_t hd, float* dst) {
    for (std::size_t r = 0; r < rows; ++r)
        std::memcpy(dst + r * hd, src + (row0 + r) * dim + h * hd, hd * sizeof(float));
}

void scatter_head_add(const float* src, std::size_t row0, std::size_t rows, std::size_t dim,
                      std::size_t h, std::size_t hd, float* dst) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < hd; ++c) dst[(row0 + r) * dim + h * hd + c] += src[r * hd + c];
}

}  // namespace

Tensor MultiHeadAttention::forward(const Tensor& x, std::size_t batch, std::size_t tokens) {
    batch_ = batch;
    tokens_ = tokens;
    q_ = wq.forward(x);
    k_ = wk.forward(x);
    v_ = wv.forward(x);

    const std::size_t hd = dim / heads;
    const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(hd)));
    probs_.resize(batch * heads * tokens * tokens);

    std::vector<float> qh(tokens * hd), kh(tokens * hd), vh(tokens * hd), ctx_h(tokens * hd);
    Tensor ctx({batch * tokens, dim});
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t row0 = b * tokens;
        for (std::size_t h = 0; h < heads; ++h) {
            gather_head(q_.data(), row0, tokens, dim, h, hd, qh.data());
            gather_head(k_.data(), row0, tokens, dim, h, hd, kh.data());
            gather_head(v_.data(), row0, tokens, dim, h, hd, vh.data());

            float* p = probs_.data() + (b * heads + h) * tokens * tokens;
            kernels::gemm(false, true, tokens, tokens, hd, scale, qh.data(), kh.data(), 0.0f, p);
            kernels::softmax_rows(p, tokens, tokens);
            kernels::gemm(false, false, tokens, hd, tokens, 1.0f, p, vh.data(), 0.0f,
                          ctx_h.data());
            for (std::size_t r = 0; r < tokens; ++r)
                std::memcpy(ctx.data() + (row0 + r) * dim + h * hd, ctx_h.data() + r * hd,
                            hd * sizeof(float));
        }
    }
    return wo.forward(ctx);
}

Tensor MultiHeadAttention::backward(const Tensor& dy) {
    const Tensor dctx = wo.backward(dy);
    const std::size_t hd = dim / heads;
    const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(hd)));

    Tensor dq({batch_ * tokens_, dim}), dk({batch_ * tokens_, dim}), dv({batch_ * tokens_, dim});
    std::vector<float> qh(tokens_ * hd), kh(tokens_ * hd), vh(tokens_ * hd);
    std::vector<float> dctx_h(tokens_ * hd), dhead(tokens_ * hd);
    std::vector<float> dp(tokens_ * tokens_), ds(tokens_ * tokens_);

    for (std::size_t b = 0; b < batch_; ++b) {
        const std::size_t row0 = b * tokens_;
        for (std::size_t h = 0; h < heads; ++h) {
            gather_head(q_.data(), row0, tokens_, dim, h, hd, qh.data());
            gather_head(k_.data(), row0, tokens_, dim, h, hd, kh.data());
            gather_head(v_.data(), row0, tokens_, dim, h, hd, vh.data());
            gather_head(dctx.data(), row0, tokens_, dim, h, hd, dctx_h.data());
            const float* p = probs_.data() + (b * heads + h) * tokens_ * tokens_;

            kernels::gemm(false, true, tokens_, tokens_, hd, 1.0f, dctx_h.data(), vh.data(), 0.0f,
                          dp.data());
            kernels::gemm(true, false, tokens_, hd, tokens_, 1.0f, p, dctx_h.data(), 0.0f,
                          dhead.data());
            scatter_head_add(dhead.data(), row0, tokens_, dim, h, hd, dv.data());

            // softmax backward within each row
            for (std::size_t r = 0; r < tokens_; ++r) {
                const float* pr = p + r * tokens_;
                const float* dpr = dp.data() + r * tokens_;
                double dot = 0.0;
                for (std::size_t c = 0; c < tokens_; ++c) dot += double(pr[c]) * dpr[c];
                float* dsr = ds.data() + r * tokens_;
                for (std::size_t c = 0; c < tokens_; ++c)
                    dsr[c] = static_cast<float>(pr[c] * (dpr[c] - dot));
            }

            kernels::gemm(false, false, tokens_, hd, tokens_, scale, ds.data(), kh.data(), 0.0f,
                          dhead.data());
            scatter_head_add(dhead.data(), row0, tokens_, dim, h, hd, dq.data());
            kernels::gemm(true, false, tokens_, hd, tokens_, scale, ds.data(), qh.data(), 0.0f,
                          dhead.data());
            scatter_head_add(dhead.data(), row0, tokens_, dim, h, hd, dk.data());
        }
    }

    Tensor dx = wq.backward(dq);
    const Tensor dxk = wk.backward(dk);
    const Tensor dxv = wv.backward(dv);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dxk[i] + dxv[i];
    return dx;
}

// ---------------------------------------------------------------------------
// Spatial plumbing

Tensor NearestUpsample2::forward(const Tensor& x) {
    in_shape_ = x.shape();
    const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor y({b, c, 2 * h, 2 * w});
    for (std::size_t i = 0; i < b * c; ++i) {
        const float* src = x.data() + i * h * w;
        float* dst = y.data() + i * 4 * h * w;
        for (std::size_t yy = 0; yy < 2 * h; ++yy)
            for (std::size_t xx = 0; xx < 2 * w; ++xx)
                dst[yy * 2 * w + xx] = src[(yy / 2) * w + xx / 2];
    }
    return y;
}

Tensor NearestUpsample2::backward(const Tensor& dy) {
    const std::size_t b = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
    Tensor dx({b, c, h, w});
    for (std::size_t i = 0; i < b * c; ++i) {
        const float* src = dy.data() + i * 4 * h * w;
        float* dst = dx.data() + i * h * w;
        for (std::size_t yy = 0; yy < 2 * h; ++yy)
            for (std::size_t xx = 0; xx < 2 * w; ++xx)
                dst[(yy / 2) * w + xx / 2] += src[yy * 2 * w + xx];
    }
    return dx;
}

Tensor tokens_to_map(const Tensor& tokens, std::size_t batch, std::size_t grid, std::size_t dim) {
    Tensor map({batch, dim, grid, grid});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < grid * grid; ++s)
            for (std::size_t d = 0; d < dim; ++d)
                map[(b * dim + d) * grid * grid + s] = tokens[(b * grid * grid + s) * dim + d];
    return map;
}

Tensor map_to_tokens(const Tensor& map) {
    const std::size_t b = map.dim(0), dim = map.dim(1), grid = map.dim(2);
    Tensor tokens({b * grid * grid, dim});
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t s = 0; s < grid * grid; ++s)
            for (std::size_t d = 0; d < dim; ++d)
                tokens[(i * grid * grid + s) * dim + d] = map[(i * dim + d) * grid * grid + s];
    return tokens;
}

Tensor MeanPoolTokens::forward(const Tensor& x, std::size_t batch, std::size_t tokens) {
    batch_ = batch;
    tokens_ = tokens;
    const std::size_t dim = x.dim(1);
    Tensor y({batch, dim});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < tokens; ++s)
            for (std::size_t d = 0; d < dim; ++d) y[b * dim + d] += x[(b * tokens + s) * dim + d];
    const float inv = 1.0f / static_cast<float>(tokens);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= inv;
    return y;
}

Tensor MeanPoolTokens::backward(const Tensor& dy) {
    const std::size_t dim = dy.dim(1);
    Tensor dx({batch_ * tokens_, dim});
    const float inv = 1.0f / static_cast<float>(tokens_);
    for (std::size_t b = 0; b < batch_; ++b)
        for (std::size_t s = 0; s < tokens_; ++s)
            for (std::size_t d = 0; d < dim; ++d)
                dx[(b * tokens_ + s) * dim + d] = dy[b * dim + d] * inv;
    return dx;
}

Tensor L2NormalizeRows::forward(const Tensor& x) {
    const std::size_t n = x.dim(0), dim = x.dim(1);
    output_ = Tensor({n, dim});
    inv_norm_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < dim; ++j) sq += double(x[i * dim + j]) * x[i * dim + j];
        const double inv = 1.0 / std::sqrt(std::max(sq, eps));
        inv_norm_[i] = static_cast<float>(inv);
        for (std::size_t j = 0; j < dim; ++j)
            output_[i * dim + j] = static_cast<float>(x[i * dim + j] * inv);
    }
    return output_;
}

Tensor L2NormalizeRows::backward(const Tensor& dy) {
    const std::size_t n = dy.dim(0), dim = dy.dim(1);
    Tensor dx({n, dim});
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < dim; ++j) dot += double(output_[i * dim + j]) * dy[i * dim + j];
        for (std::size_t j = 0; j < dim; ++j)
            dx[i * dim + j] = static_cast<float>(
                (dy[i * dim + j] - output_[i * dim + j] * dot) * inv_norm_[i]);
    }
    return dx;
}

}  // namespace xdseg
