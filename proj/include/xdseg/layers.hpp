#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "xdseg/tensor.hpp"

namespace xdseg {

// Differentiable building blocks. Each layer caches whatever its backward
// pass needs during forward, so backward(dy) must follow the forward(x) it
// belongs to on the same instance. Parameter gradients accumulate until the
// owner clears them.

struct Conv2d {
    std::size_t in_ch = 0, out_ch = 0, kernel = 0, stride = 1, pad = 0;

    Tensor w, b;    // w: out_ch x in_ch x kernel x kernel
    Tensor dw, db;

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t k, std::size_t s, std::size_t p);

    // x: B x in_ch x H x W  ->  B x out_ch x H' x W'
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

  private:
    Tensor input_;
    std::size_t out_h_ = 0, out_w_ = 0;
    std::vector<float> col_;  // scratch for one image
};

struct Linear {
    std::size_t in_dim = 0, out_dim = 0;

    Tensor w, b;    // w: out_dim x in_dim; y = x w^T + b
    Tensor dw, db;

    Linear() = default;
    Linear(std::size_t in, std::size_t out);

    // x: N x in_dim -> N x out_dim
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

  private:
    Tensor input_;
};

struct Relu {
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

  private:
    Tensor input_;
};

// tanh-approximation GELU
struct Gelu {
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

  private:
    Tensor input_;
};

struct LayerNorm {
    std::size_t dim = 0;
    double eps = 1e-5;

    Tensor gamma, beta;
    Tensor dgamma, dbeta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t d);

    // x: N x dim, normalized over the last axis
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

  private:
    Tensor xhat_;
    std::vector<float> inv_std_;
};

struct MultiHeadAttention {
    std::size_t dim = 0, heads = 0;
    Linear wq, wk, wv, wo;

    MultiHeadAttention() = default;
    MultiHeadAttention(std::size_t d, std::size_t h);

    // x: (batch*tokens) x dim, attention runs within each image's token block
    Tensor forward(const Tensor& x, std::size_t batch, std::size_t tokens);
    Tensor backward(const Tensor& dy);

  private:
    std::size_t batch_ = 0, tokens_ = 0;
    Tensor q_, k_, v_;          // (batch*tokens) x dim
    std::vector<float> probs_;  // batch x heads x tokens x tokens
};

// 2x nearest-neighbour upsampling on NCHW maps.
struct NearestUpsample2 {
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

  private:
    std::vector<std::size_t> in_shape_;
};

// (batch*tokens) x dim  ->  batch x dim x grid x grid, token s = y*grid + x.
Tensor tokens_to_map(const Tensor& tokens, std::size_t batch, std::size_t grid, std::size_t dim);
Tensor map_to_tokens(const Tensor& map);  // exact inverse, used for the gradients

// Mean over each image's token block: (batch*tokens) x dim -> batch x dim.
struct MeanPoolTokens {
    Tensor forward(const Tensor& x, std::size_t batch, std::size_t tokens);
    Tensor backward(const Tensor& dy);

  private:
    std::size_t batch_ = 0, tokens_ = 0;
};

struct L2NormalizeRows {
    double eps = 1e-12;

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

  private:
    Tensor output_;
    std::vector<float> inv_norm_;
};

}  // namespace xdseg
