#include "xdseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>

#include "xdseg/errors.hpp"

namespace xdseg {

namespace {

// Masked similarity entries must never win a row maximum or contribute to a
// softmax denominator; the most negative finite double guarantees both
// without introducing NaN through inf - inf.
constexpr double kMaskedScore = std::numeric_limits<double>::lowest();

constexpr double kProbClamp = 1e-7;

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

}  // namespace

std::vector<std::uint8_t> sample_patch_mask(std::size_t grid_h, std::size_t grid_w, double ratio,
                                            Rng& rng) {
    if (grid_h == 0 || grid_w == 0) throw InvalidInput("sample_patch_mask: empty grid");
    if (!(ratio >= 0.0 && ratio <= 1.0))
        throw InvalidInput("sample_patch_mask: ratio must lie in [0,1]");
    const std::size_t n = grid_h * grid_w;
    const std::size_t k = static_cast<std::size_t>(ratio * static_cast<double>(n));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);

    std::vector<std::uint8_t> mask(n, 0);
    for (std::size_t i = 0; i < k; ++i) mask[order[i]] = 1;
    return mask;
}

void MaskedBatch::validate() const {
    if (batch == 0) throw InvalidInput("MaskedBatch: batch must be positive");
    if (patch == 0) throw InvalidInput("MaskedBatch: patch must be positive");
    if (height % patch != 0 || width % patch != 0)
        throw InvalidInput("MaskedBatch: patch must divide height and width");
    if (images.size() != batch * height * width)
        throw InvalidInput("MaskedBatch: images size does not match batch*height*width");
    if (patch_mask.size() != batch * grid_h() * grid_w())
        throw InvalidInput("MaskedBatch: patch_mask size does not match the patch grid");
    for (double v : images)
        if (!(v >= 0.0 && v <= 1.0)) throw InvalidInput("MaskedBatch: pixel outside [0,1]");
}

std::vector<double> MaskedBatch::masked_images() const {
    std::vector<double> out = images;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x)
                if (masked_at(b, y, x)) out[(b * height + y) * width + x] = 0.0;
    return out;
}

double masked_mae_loss(const MaskedBatch& b, std::span<const double> reconstruction) {
    b.validate();
    if (reconstruction.size() != b.images.size())
        throw InvalidInput("masked_mae_loss: reconstruction size mismatch");

    double total = 0.0;
    for (std::size_t i = 0; i < b.batch; ++i) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t y = 0; y < b.height; ++y)
            for (std::size_t x = 0; x < b.width; ++x)
                if (b.masked_at(i, y, x)) {
                    const std::size_t idx = (i * b.height + y) * b.width + x;
                    sum += std::abs(reconstruction[idx] - b.images[idx]);
                    ++count;
                }
        if (count == 0)
            throw InvalidInput("masked_mae_loss: image has no masked patches; the loss is undefined");
        total += sum / static_cast<double>(count);
    }
    return total / static_cast<double>(b.batch);
}

std::vector<double> masked_mae_grad(const MaskedBatch& b, std::span<const double> reconstruction) {
    b.validate();
    if (reconstruction.size() != b.images.size())
        throw InvalidInput("masked_mae_grad: reconstruction size mismatch");

    std::vector<double> grad(b.images.size(), 0.0);
    for (std::size_t i = 0; i < b.batch; ++i) {
        std::size_t count = 0;
        for (std::size_t y = 0; y < b.height; ++y)
            for (std::size_t x = 0; x < b.width; ++x)
                if (b.masked_at(i, y, x)) ++count;
        if (count == 0)
            throw InvalidInput("masked_mae_grad: image has no masked patches; the loss is undefined");
        const double scale = 1.0 / (static_cast<double>(count) * static_cast<double>(b.batch));
        for (std::size_t y = 0; y < b.height; ++y)
            for (std::size_t x = 0; x < b.width; ++x)
                if (b.masked_at(i, y, x)) {
                    const std::size_t idx = (i * b.height + y) * b.width + x;
                    const double d = reconstruction[idx] - b.images[idx];
                    grad[idx] = (d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0));
                }
    }
    return grad;
}

void SegPair::validate() const {
    if (prediction.empty()) throw InvalidInput("SegPair: empty prediction");
    if (prediction.size() != target.size())
        throw InvalidInput("SegPair: prediction and target sizes differ");
    if (!(smooth >= 0.0)) throw InvalidInput("SegPair: smooth must be non-negative");
    for (double p : prediction)
        if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("SegPair: prediction outside [0,1]");
    for (double t : target)
        if (t != 0.0 && t != 1.0) throw InvalidInput("SegPair: target must be binary");
}

double dice_loss(const SegPair& p) {
    p.validate();
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (std::size_t i = 0; i < p.prediction.size(); ++i) {
        inter += p.prediction[i] * p.target[i];
        psum += p.prediction[i];
        tsum += p.target[i];
    }
    return 1.0 - (2.0 * inter + p.smooth) / (psum + tsum + p.smooth);
}

std::vector<double> dice_loss_grad(const SegPair& p) {
    p.validate();
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (std::size_t i = 0; i < p.prediction.size(); ++i) {
        inter += p.prediction[i] * p.target[i];
        psum += p.prediction[i];
        tsum += p.target[i];
    }
    const double denom = psum + tsum + p.smooth;
    const double num = 2.0 * inter + p.smooth;
    std::vector<double> grad(p.prediction.size());
    for (std::size_t i = 0; i < grad.size(); ++i)
        grad[i] = num / (denom * denom) - 2.0 * p.target[i] / denom;
    return grad;
}

double bce_loss(const SegPair& p) {
    p.validate();
    double sum = 0.0;
    for (std::size_t i = 0; i < p.prediction.size(); ++i) {
        const double q = clamp_prob(p.prediction[i]);
        sum -= p.target[i] * std::log(q) + (1.0 - p.target[i]) * std::log(1.0 - q);
    }
    return sum / static_cast<double>(p.prediction.size());
}

std::vector<double> bce_loss_grad(const SegPair& p) {
    p.validate();
    const double inv_n = 1.0 / static_cast<double>(p.prediction.size());
    std::vector<double> grad(p.prediction.size(), 0.0);
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double q = clamp_prob(p.prediction[i]);
        // Inside the clamp interval the loss is flat in the raw prediction.
        if (q != p.prediction[i]) continue;
        grad[i] = inv_n * (-p.target[i] / q + (1.0 - p.target[i]) / (1.0 - q));
    }
    return grad;
}

double dice_bce_loss(const SegPair& p) { return dice_loss(p) + bce_loss(p); }

std::vector<double> dice_bce_grad(const SegPair& p) {
    std::vector<double> grad = dice_loss_grad(p);
    const std::vector<double> b = bce_loss_grad(p);
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += b[i];
    return grad;
}

std::vector<std::uint8_t> build_temporal_mask(const std::vector<std::string>& video_ids,
                                              const std::vector<std::uint32_t>& frame_indices,
                                              std::size_t batch, std::uint32_t min_frame_gap) {
    if (batch == 0) throw InvalidInput("build_temporal_mask: batch must be positive");
    if (video_ids.size() != batch || frame_indices.size() != batch)
        throw InvalidInput("build_temporal_mask: metadata length does not match batch");

    const std::size_t n = 2 * batch;
    std::vector<std::uint8_t> mask(n * n, 0);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t mk = k % batch;  // both views inherit the source frame's metadata
        const std::size_t partner = (k < batch) ? k + batch : k - batch;
        for (std::size_t l = 0; l < n; ++l) {
            if (k == l) {
                mask[k * n + l] = 1;
                continue;
            }
            if (l == partner) continue;  // the positive pair always stays visible
            const std::size_t ml = l % batch;
            if (video_ids[mk] != video_ids[ml]) continue;
            const std::int64_t gap = std::llabs(static_cast<std::int64_t>(frame_indices[mk]) -
                                                static_cast<std::int64_t>(frame_indices[ml]));
            if (gap < static_cast<std::int64_t>(min_frame_gap)) mask[k * n + l] = 1;
        }
    }
    return mask;
}

void EmbeddingBatch::validate() const {
    if (batch == 0) throw InvalidInput("EmbeddingBatch: batch must be positive");
    if (dim == 0) throw InvalidInput("EmbeddingBatch: dim must be positive");
    if (z.size() != batch * dim || z_prime.size() != batch * dim)
        throw InvalidInput("EmbeddingBatch: embedding size does not match batch*dim");
    if (video_ids.size() != batch || frame_indices.size() != batch)
        throw InvalidInput("EmbeddingBatch: metadata length does not match batch");
    if (!(temperature > 0.0)) throw InvalidInput("EmbeddingBatch: temperature must be positive");

    // Rows are produced by an explicit L2-normalisation layer; the tolerance
    // only needs to catch un-normalised inputs, not accumulation noise.
    for (const auto* rows : {&z, &z_prime})
        for (std::size_t i = 0; i < batch; ++i) {
            double sq = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double v = (*rows)[i * dim + d];
                sq += v * v;
            }
            if (std::abs(std::sqrt(sq) - 1.0) > 1e-3)
                throw InvalidInput("EmbeddingBatch: row " + std::to_string(i) +
                                   " is not unit length");
        }
}

MaskedSimilarity masked_similarity(const EmbeddingBatch& b) {
    b.validate();
    const std::size_t n = 2 * b.batch;

    // Row-major stack [z_1..z_B, z'_1..z'_B].
    auto row = [&](std::size_t k) -> const double* {
        return (k < b.batch) ? &b.z[k * b.dim] : &b.z_prime[(k - b.batch) * b.dim];
    };

    MaskedSimilarity out;
    out.n = n;
    out.s.resize(n * n);
    out.mask = build_temporal_mask(b.video_ids, b.frame_indices, b.batch, b.min_frame_gap);
    out.s_tilde.resize(n * n);
    out.positive_index.resize(n);

    for (std::size_t k = 0; k < n; ++k) {
        out.positive_index[k] = (k < b.batch) ? k + b.batch : k - b.batch;
        const double* uk = row(k);
        for (std::size_t l = 0; l < n; ++l) {
            const double* ul = row(l);
            double dot = 0.0;
            for (std::size_t d = 0; d < b.dim; ++d) dot += uk[d] * ul[d];
            const double sij = dot / b.temperature;
            out.s[k * n + l] = sij;
            out.s_tilde[k * n + l] = out.mask[k * n + l] ? kMaskedScore : sij;
        }
    }
    return out;
}

double mt_nxent_loss(const EmbeddingBatch& b) {
    const MaskedSimilarity ms = masked_similarity(b);
    const std::size_t n = ms.n;

    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        double row_max = kMaskedScore;
        for (std::size_t l = 0; l < n; ++l)
            if (!ms.mask[k * n + l]) row_max = std::max(row_max, ms.s[k * n + l]);
        double denom = 0.0;
        for (std::size_t l = 0; l < n; ++l)
            if (!ms.mask[k * n + l]) denom += std::exp(ms.s[k * n + l] - row_max);
        const double pos = ms.s[k * n + ms.positive_index[k]];
        total -= pos - row_max - std::log(denom);
    }
    return total / static_cast<double>(n);
}

MtNxentGrad mt_nxent_loss_grad(const EmbeddingBatch& b) {
    const MaskedSimilarity ms = masked_similarity(b);
    const std::size_t n = ms.n;

    // dL/ds_{kl} = (p_{kl} - [l == y_k]) / n over visible entries.
    std::vector<double> g(n * n, 0.0);
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        double row_max = kMaskedScore;
        for (std::size_t l = 0; l < n; ++l)
            if (!ms.mask[k * n + l]) row_max = std::max(row_max, ms.s[k * n + l]);
        double denom = 0.0;
        for (std::size_t l = 0; l < n; ++l)
            if (!ms.mask[k * n + l]) denom += std::exp(ms.s[k * n + l] - row_max);
        for (std::size_t l = 0; l < n; ++l) {
            if (ms.mask[k * n + l]) continue;
            const double p = std::exp(ms.s[k * n + l] - row_max) / denom;
            g[k * n + l] = (p - (l == ms.positive_index[k] ? 1.0 : 0.0)) / static_cast<double>(n);
        }
        const double pos = ms.s[k * n + ms.positive_index[k]];
        total -= pos - row_max - std::log(denom);
    }

    auto row = [&](std::size_t k) -> const double* {
        return (k < b.batch) ? &b.z[k * b.dim] : &b.z_prime[(k - b.batch) * b.dim];
    };

    // s_{kl} = u_k . u_l / tau, so dL/du_a = sum_l (g_{al} + g_{la}) u_l / tau.
    MtNxentGrad out;
    out.loss = total / static_cast<double>(n);
    out.d_z.assign(b.batch * b.dim, 0.0);
    out.d_z_prime.assign(b.batch * b.dim, 0.0);
    for (std::size_t a = 0; a < n; ++a) {
        double* dst = (a < b.batch) ? &out.d_z[a * b.dim] : &out.d_z_prime[(a - b.batch) * b.dim];
        for (std::size_t l = 0; l < n; ++l) {
            const double coeff = (g[a * n + l] + g[l * n + a]) / b.temperature;
            if (coeff == 0.0) continue;
            const double* ul = row(l);
            for (std::size_t d = 0; d < b.dim; ++d) dst[d] += coeff * ul[d];
        }
    }
    return out;
}

}  // namespace xdseg
