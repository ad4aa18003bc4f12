#include "xdseg/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xdseg/errors.hpp"

namespace xdseg {

const char* to_string(FusionStrategy s) {
    switch (s) {
        case FusionStrategy::entropy: return "entropy";
        case FusionStrategy::margin: return "margin";
        case FusionStrategy::average: return "average";
    }
    return "?";
}

FusionStrategy fusion_strategy_from_string(std::string_view s) {
    if (s == "entropy") return FusionStrategy::entropy;
    if (s == "margin") return FusionStrategy::margin;
    if (s == "average") return FusionStrategy::average;
    throw ConfigError("unknown fusion strategy '" + std::string(s) + "'");
}

const char* to_string(FusionScope s) {
    return s == FusionScope::per_image ? "per_image" : "per_batch";
}

FusionScope fusion_scope_from_string(std::string_view s) {
    if (s == "per_image") return FusionScope::per_image;
    if (s == "per_batch") return FusionScope::per_batch;
    throw ConfigError("unknown fusion scope '" + std::string(s) + "'");
}

Image entropy_confidence(const Image& p, bool natural_log) {
    const double log_base = natural_log ? 1.0 : std::log(2.0);
    Image c(p.h, p.w);
    for (std::size_t i = 0; i < p.pixels.size(); ++i) {
        const double q = std::clamp(static_cast<double>(p.pixels[i]), 1e-7, 1.0 - 1e-7);
        const double h = -(q * std::log(q) + (1.0 - q) * std::log(1.0 - q)) / log_base;
        c.pixels[i] = static_cast<float>(1.0 - h);
    }
    return c;
}

Image margin_confidence(const Image& p) {
    Image c(p.h, p.w);
    for (std::size_t i = 0; i < p.pixels.size(); ++i)
        c.pixels[i] = static_cast<float>(std::abs(2.0 * static_cast<double>(p.pixels[i]) - 1.0));
    return c;
}

namespace {

// The whole head runs in double and rounds to float once at the output, so
// results stay within one float ulp of an exact evaluation.

using DoubleMap = std::vector<double>;

DoubleMap raw_confidence(const Image& p, FusionStrategy strategy, bool natural_log) {
    const double log_base = natural_log ? 1.0 : std::log(2.0);
    DoubleMap c(p.pixels.size());
    for (std::size_t i = 0; i < p.pixels.size(); ++i) {
        const double v = static_cast<double>(p.pixels[i]);
        if (strategy == FusionStrategy::margin) {
            c[i] = std::abs(2.0 * v - 1.0);
        } else {
            const double q = std::clamp(v, 1e-7, 1.0 - 1e-7);
            c[i] = 1.0 - (-(q * std::log(q) + (1.0 - q) * std::log(1.0 - q)) / log_base);
        }
    }
    return c;
}

void normalize_span(std::vector<DoubleMap*>& maps) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const DoubleMap* m : maps)
        for (double v : *m) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (!(hi > lo)) {
        for (DoubleMap* m : maps) std::fill(m->begin(), m->end(), 1.0);
        return;
    }
    const double inv = 1.0 / (hi - lo);
    for (DoubleMap* m : maps)
        for (double& v : *m) v = (v - lo) * inv;
}

Image to_image(const DoubleMap& m, std::size_t h, std::size_t w) {
    Image out(h, w);
    for (std::size_t i = 0; i < m.size(); ++i) out.pixels[i] = static_cast<float>(m[i]);
    return out;
}

}  // namespace

Image minmax_normalize(const Image& c) {
    DoubleMap d(c.pixels.begin(), c.pixels.end());
    std::vector<DoubleMap*> one{&d};
    normalize_span(one);
    return to_image(d, c.h, c.w);
}

void minmax_normalize_batch(std::vector<Image>& maps) {
    std::vector<DoubleMap> d;
    d.reserve(maps.size());
    for (const Image& m : maps) d.emplace_back(m.pixels.begin(), m.pixels.end());
    std::vector<DoubleMap*> all;
    for (DoubleMap& m : d) all.push_back(&m);
    normalize_span(all);
    for (std::size_t i = 0; i < maps.size(); ++i)
        maps[i] = to_image(d[i], maps[i].h, maps[i].w);
}

void FusionInputs::validate() const {
    if (p_g.empty()) throw InvalidInput("fuse: no inputs");
    if (p_g.size() != p_c.size())
        throw InvalidInput("fuse: branch image counts differ (" + std::to_string(p_g.size()) +
                           " vs " + std::to_string(p_c.size()) + ")");
    for (std::size_t i = 0; i < p_g.size(); ++i) {
        if (p_g[i].h != p_c[i].h || p_g[i].w != p_c[i].w)
            throw InvalidInput("fuse: shape mismatch at image " + std::to_string(i));
        for (const Image* m : {&p_g[i], &p_c[i]})
            for (float v : m->pixels)
                if (!(v >= 0.0f && v <= 1.0f))
                    throw InvalidInput("fuse: probability outside [0,1] at image " +
                                       std::to_string(i));
    }
}

FusedPrediction fuse(const FusionInputs& in) {
    in.validate();
    const std::size_t n = in.p_g.size();

    FusedPrediction out;
    std::vector<DoubleMap> conf_g;
    std::vector<DoubleMap> conf_c;
    if (in.strategy != FusionStrategy::average) {
        conf_g.reserve(n);
        conf_c.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            conf_g.push_back(raw_confidence(in.p_g[i], in.strategy, in.natural_log));
            conf_c.push_back(raw_confidence(in.p_c[i], in.strategy, in.natural_log));
        }
        if (in.scope == FusionScope::per_batch) {
            std::vector<DoubleMap*> all_g;
            std::vector<DoubleMap*> all_c;
            for (DoubleMap& m : conf_g) all_g.push_back(&m);
            for (DoubleMap& m : conf_c) all_c.push_back(&m);
            normalize_span(all_g);
            normalize_span(all_c);
        } else {
            for (DoubleMap& m : conf_g) {
                std::vector<DoubleMap*> one{&m};
                normalize_span(one);
            }
            for (DoubleMap& m : conf_c) {
                std::vector<DoubleMap*> one{&m};
                normalize_span(one);
            }
        }
        out.conf_g.reserve(n);
        out.conf_c.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            out.conf_g.push_back(to_image(conf_g[i], in.p_g[i].h, in.p_g[i].w));
            out.conf_c.push_back(to_image(conf_c[i], in.p_c[i].h, in.p_c[i].w));
        }
    }

    out.probabilities.reserve(n);
    out.binary_mask.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Image y(in.p_g[i].h, in.p_g[i].w);
        for (std::size_t j = 0; j < y.pixels.size(); ++j) {
            const double pg = static_cast<double>(in.p_g[i].pixels[j]);
            const double pc = static_cast<double>(in.p_c[i].pixels[j]);
            double v;
            if (in.strategy == FusionStrategy::average) {
                v = 0.5 * (pg + pc);
            } else {
                v = 0.5 * (pg * conf_g[i][j] + pc * conf_c[i][j]);
            }
            y.pixels[j] = static_cast<float>(v);
        }
        Image mask(y.h, y.w);
        for (std::size_t j = 0; j < y.pixels.size(); ++j)
            mask.pixels[j] = y.pixels[j] >= static_cast<float>(in.threshold) ? 1.0f : 0.0f;
        out.probabilities.push_back(std::move(y));
        out.binary_mask.push_back(std::move(mask));
    }
    return out;
}

}  // namespace xdseg
