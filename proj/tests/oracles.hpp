#pragma once

// Independent reference implementations used to check the library's
// vectorized/optimized code. Everything here is the plainest possible scalar
// loop written straight from the published formulas — no shared helpers with
// the code under test beyond basic containers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

namespace oracle {

inline double clamp_p(double p, double lo = 1e-7) {
    return std::min(std::max(p, lo), 1.0 - lo);
}

// ---- reconstruction / segmentation losses --------------------------------

// Mean absolute error over masked pixels only, averaged per image then over
// the batch.
inline double masked_mae(const std::vector<std::vector<double>>& images,
                         const std::vector<std::vector<double>>& recon,
                         const std::vector<std::vector<bool>>& masked) {
    double total = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t px = 0; px < images[i].size(); ++px) {
            if (!masked[i][px]) continue;
            sum += std::fabs(recon[i][px] - images[i][px]);
            ++count;
        }
        total += sum / static_cast<double>(count);
    }
    return total / static_cast<double>(images.size());
}

inline double dice_loss(const std::vector<double>& p, const std::vector<double>& t,
                        double smooth = 1.0) {
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += p[i] * t[i];
        psum += p[i];
        tsum += t[i];
    }
    return 1.0 - (2.0 * inter + smooth) / (psum + tsum + smooth);
}

inline double bce_loss(const std::vector<double>& p, const std::vector<double>& t) {
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = clamp_p(p[i]);
        sum += -(t[i] * std::log(q) + (1.0 - t[i]) * std::log(1.0 - q));
    }
    return sum / static_cast<double>(p.size());
}

inline double dice_bce_loss(const std::vector<double>& p, const std::vector<double>& t,
                            double smooth = 1.0) {
    return dice_loss(p, t, smooth) + bce_loss(p, t);
}

// ---- contrastive ---------------------------------------------------------

// Plain NT-Xent (SimCLR): similarity matrix over the 2B stacked views,
// diagonal excluded, positives are (k, k±B). Row-major z of unit rows.
inline double nt_xent(const std::vector<std::vector<double>>& u, double tau) {
    const std::size_t n = u.size();  // 2B
    const std::size_t b = n / 2;
    double loss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t pos = k < b ? k + b : k - b;
        double denom = 0.0, num = 0.0;
        for (std::size_t l = 0; l < n; ++l) {
            if (l == k) continue;
            double dot = 0.0;
            for (std::size_t d = 0; d < u[k].size(); ++d) dot += u[k][d] * u[l][d];
            const double e = std::exp(dot / tau);
            denom += e;
            if (l == pos) num = e;
        }
        loss += -std::log(num / denom);
    }
    return loss / static_cast<double>(n);
}

// Temporal mask straight from its definition: entry (k, l) is masked out of
// the denominator iff k == l, or the samples come from the same video within
// the frame-gap window — except that the positive partner always stays.
inline std::vector<std::uint8_t> temporal_mask(const std::vector<int>& video,
                                               const std::vector<std::uint32_t>& frame,
                                               std::uint32_t min_gap) {
    const std::size_t n = video.size();  // 2B
    const std::size_t b = n / 2;
    std::vector<std::uint8_t> mask(n * n, 0);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t l = 0; l < n; ++l) {
            const std::size_t pos = k < b ? k + b : k - b;
            bool drop = false;
            if (k == l) drop = true;
            if (l != k && l != pos && video[k] == video[l]) {
                const std::uint32_t gap = frame[k] > frame[l] ? frame[k] - frame[l]
                                                              : frame[l] - frame[k];
                if (gap < min_gap) drop = true;
            }
            mask[k * n + l] = drop ? 1 : 0;
        }
    return mask;
}

// MT-NXent from the formula: softmax over the row with masked entries
// removed from the denominator.
inline double mt_nxent(const std::vector<std::vector<double>>& u,
                       const std::vector<std::uint8_t>& mask, double tau) {
    const std::size_t n = u.size();
    const std::size_t b = n / 2;
    double loss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t pos = k < b ? k + b : k - b;
        double denom = 0.0, num = 0.0;
        for (std::size_t l = 0; l < n; ++l) {
            if (mask[k * n + l]) continue;
            double dot = 0.0;
            for (std::size_t d = 0; d < u[k].size(); ++d) dot += u[k][d] * u[l][d];
            const double e = std::exp(dot / tau);
            denom += e;
            if (l == pos) num = e;
        }
        loss += -std::log(num / denom);
    }
    return loss / static_cast<double>(n);
}

// ---- confidence fusion ---------------------------------------------------

inline double entropy_conf(double p, bool natural_log = false) {
    const double q = clamp_p(p);
    const double base = natural_log ? 1.0 : std::log(2.0);
    return 1.0 + (q * std::log(q) + (1.0 - q) * std::log(1.0 - q)) / base;
}

inline double margin_conf(double p) { return std::fabs(2.0 * p - 1.0); }

inline std::vector<double> minmax(const std::vector<double>& c) {
    const double lo = *std::min_element(c.begin(), c.end());
    const double hi = *std::max_element(c.begin(), c.end());
    std::vector<double> out(c.size(), 1.0);
    if (hi > lo)
        for (std::size_t i = 0; i < c.size(); ++i) out[i] = (c[i] - lo) / (hi - lo);
    return out;
}

inline std::vector<double> fuse(const std::vector<double>& pg, const std::vector<double>& pc,
                                const std::vector<double>& cg, const std::vector<double>& cc) {
    std::vector<double> out(pg.size());
    for (std::size_t i = 0; i < pg.size(); ++i)
        out[i] = 0.5 * (pg[i] * cg[i] + pc[i] * cc[i]);
    return out;
}

// ---- metrics -------------------------------------------------------------

inline double dsc(const std::vector<bool>& a, const std::vector<bool>& b) {
    std::size_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += a[i] && b[i];
        na += a[i];
        nb += b[i];
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

inline double iou(const std::vector<bool>& a, const std::vector<bool>& b) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += a[i] && b[i];
        uni += a[i] || b[i];
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---- statistics ----------------------------------------------------------

// Exact two-sided Wilcoxon signed-rank p-value by enumerating all 2^n sign
// assignments of the ranked absolute differences (zero differences dropped,
// ties averaged). Doubly exponential but fine for n <= ~16.
inline double wilcoxon_exact_p(const std::vector<double>& diffs) {
    std::vector<double> mag;
    for (double d : diffs)
        if (d != 0.0) mag.push_back(std::fabs(d));
    const std::size_t n = mag.size();
    if (n == 0) return 1.0;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return mag[a] < mag[b]; });
    std::vector<double> rank(n, 0.0);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && mag[order[j]] == mag[order[i]]) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t t = i; t < j; ++t) rank[order[t]] = avg;
        i = j;
    }

    double w_obs = 0.0;
    std::size_t ri = 0;
    for (double d : diffs) {
        if (d == 0.0) continue;
        if (d > 0.0) w_obs += rank[ri];
        ++ri;
    }

    // Null: each sign equally likely. Count assignments at least as extreme
    // on either side.
    const double mu = std::accumulate(rank.begin(), rank.end(), 0.0) / 2.0;
    const double dev = std::fabs(w_obs - mu);
    std::size_t extreme = 0;
    const std::uint64_t total = 1ull << n;
    for (std::uint64_t bits = 0; bits < total; ++bits) {
        double w = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (bits & (1ull << i)) w += rank[i];
        if (std::fabs(w - mu) >= dev - 1e-12) ++extreme;
    }
    const double p = static_cast<double>(extreme) / static_cast<double>(total);
    return std::min(1.0, p);
}

// ---- numerical derivatives -----------------------------------------------

// Central finite difference of a scalar function of one coordinate.
inline double central_diff(const std::function<double(double)>& f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double a, double b) {
    const double scale = std::max({std::fabs(a), std::fabs(b), 1e-8});
    return std::fabs(a - b) / scale;
}

}  // namespace oracle
