#include "xdseg/model.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "xdseg/errors.hpp"
#include "xdseg/rng.hpp"

namespace xdseg {

const char* to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::embedding: return "embedding";
        case ParamGroup::encoder: return "encoder";
        case ParamGroup::decoder: return "decoder";
        case ParamGroup::head: return "head";
        case ParamGroup::projection: return "projection";
    }
    return "?";
}

ParamGroup param_group_from_string(std::string_view s) {
    for (ParamGroup g : kAllGroups)
        if (s == to_string(g)) return g;
    throw InvalidInput("unknown parameter group '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// BackboneConfig

BackboneConfig BackboneConfig::desk() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::full224() {
    BackboneConfig c;
    c.image_size = 224;
    c.embed_channels = {32, 64, 128};
    c.encoder_depth = 12;
    c.encoder_dim = 768;
    c.encoder_heads = 12;
    c.mlp_ratio = 4;
    c.decoder_channels = {256, 128, 64, 16};
    c.token_patch = 2;
    return c;
}

BackboneConfig BackboneConfig::tiny() {
    BackboneConfig c;
    c.image_size = 16;
    c.embed_channels = {4, 8};
    c.encoder_depth = 2;
    c.encoder_dim = 16;
    c.encoder_heads = 2;
    c.mlp_ratio = 2;
    c.decoder_channels = {8, 8};
    c.token_patch = 1;
    return c;
}

std::size_t BackboneConfig::total_downsample() const {
    return (std::size_t{1} << embed_channels.size()) * token_patch;
}

std::size_t BackboneConfig::token_grid() const { return image_size / total_downsample(); }

std::size_t BackboneConfig::token_count() const { return token_grid() * token_grid(); }

std::size_t BackboneConfig::upsample_stages() const {
    std::size_t n = 0;
    for (std::size_t g = token_grid(); g < image_size; g *= 2) ++n;
    return n;
}

void BackboneConfig::validate() const {
    if (embed_channels.empty()) throw ConfigError("backbone: embed_channels must be non-empty");
    if (decoder_channels.empty()) throw ConfigError("backbone: decoder_channels must be non-empty");
    if (token_patch == 0) throw ConfigError("backbone: token_patch must be positive");
    if (image_size == 0 || image_size % total_downsample() != 0)
        throw ConfigError("backbone: image_size must be divisible by the total downsampling (" +
                          std::to_string(total_downsample()) + ")");
    if (encoder_depth == 0) throw ConfigError("backbone: encoder_depth must be positive");
    if (encoder_heads == 0 || encoder_dim % encoder_heads != 0)
        throw ConfigError("backbone: encoder_dim must be divisible by encoder_heads");
    if (mlp_ratio == 0) throw ConfigError("backbone: mlp_ratio must be positive");
    // the decoder must be able to climb back to full resolution by doubling
    std::size_t g = token_grid();
    std::size_t ups = 0;
    while (g < image_size) {
        g *= 2;
        ++ups;
    }
    if (g != image_size)
        throw ConfigError("backbone: image_size / token_grid must be a power of two");
    if (ups > decoder_channels.size())
        throw ConfigError("backbone: decoder needs at least " + std::to_string(ups) +
                          " stages to reach image resolution");
}

std::string BackboneConfig::describe() const {
    std::ostringstream os;
    os << "backbone-v1;image=" << image_size << ";embed=";
    for (std::size_t i = 0; i < embed_channels.size(); ++i)
        os << (i ? "," : "") << embed_channels[i];
    os << ";depth=" << encoder_depth << ";dim=" << encoder_dim << ";heads=" << encoder_heads
       << ";mlp=" << mlp_ratio << ";decoder=";
    for (std::size_t i = 0; i < decoder_channels.size(); ++i)
        os << (i ? "," : "") << decoder_channels[i];
    os << ";token_patch=" << token_patch << ";proj=" << kProjectionDim;
    return os.str();
}

std::string BackboneConfig::digest() const {
    const std::string d = describe();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(d)));
    return buf;
}

// ---------------------------------------------------------------------------
// SegModel

SegModel::SegModel(BackboneConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    cfg_.validate();

    std::size_t in_ch = 1;
    for (std::size_t c : cfg_.embed_channels) {
        stem_.emplace_back(in_ch, c, 3, 2, 1);
        stem_act_.emplace_back();
        in_ch = c;
    }
    token_embed_ = Conv2d(in_ch, cfg_.encoder_dim, cfg_.token_patch, cfg_.token_patch, 0);
    pos_embed_ = Tensor({cfg_.token_count(), cfg_.encoder_dim});
    d_pos_embed_ = Tensor::zeros_like(pos_embed_);

    blocks_.reserve(cfg_.encoder_depth);
    for (std::size_t i = 0; i < cfg_.encoder_depth; ++i) {
        EncoderBlock b;
        b.norm1 = LayerNorm(cfg_.encoder_dim);
        b.attn = MultiHeadAttention(cfg_.encoder_dim, cfg_.encoder_heads);
        b.norm2 = LayerNorm(cfg_.encoder_dim);
        b.fc1 = Linear(cfg_.encoder_dim, cfg_.encoder_dim * cfg_.mlp_ratio);
        b.fc2 = Linear(cfg_.encoder_dim * cfg_.mlp_ratio, cfg_.encoder_dim);
        blocks_.push_back(std::move(b));
    }
    final_norm_ = LayerNorm(cfg_.encoder_dim);

    const std::size_t ups = cfg_.upsample_stages();
    std::size_t dec_in = cfg_.encoder_dim;
    for (std::size_t i = 0; i < cfg_.decoder_channels.size(); ++i) {
        DecoderStage s;
        s.upsample = i < ups;
        s.conv = Conv2d(dec_in, cfg_.decoder_channels[i], 3, 1, 1);
        decoder_.push_back(std::move(s));
        dec_in = cfg_.decoder_channels[i];
    }

    seg_head_ = Conv2d(dec_in, 1, 1, 1, 0);
    recon_head_ = Conv2d(dec_in, 1, 1, 1, 0);

    proj_fc1_ = Linear(cfg_.encoder_dim, cfg_.encoder_dim);
    proj_fc2_ = Linear(cfg_.encoder_dim, kProjectionDim);

    build_registry();
    for (const ParamRef& r : refs_) init_tensor(r, seed_);
}

void SegModel::build_registry() {
    auto add = [&](const std::string& name, ParamGroup g, Tensor& v, Tensor& d) {
        refs_.push_back({name, g, &v, &d});
    };
    for (std::size_t i = 0; i < stem_.size(); ++i) {
        const std::string p = "embedding.stem" + std::to_string(i);
        add(p + ".weight", ParamGroup::embedding, stem_[i].w, stem_[i].dw);
        add(p + ".bias", ParamGroup::embedding, stem_[i].b, stem_[i].db);
    }
    add("embedding.token.weight", ParamGroup::embedding, token_embed_.w, token_embed_.dw);
    add("embedding.token.bias", ParamGroup::embedding, token_embed_.b, token_embed_.db);
    add("embedding.pos", ParamGroup::embedding, pos_embed_, d_pos_embed_);

    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        EncoderBlock& b = blocks_[i];
        const std::string p = "encoder.block" + std::to_string(i);
        add(p + ".norm1.gamma", ParamGroup::encoder, b.norm1.gamma, b.norm1.dgamma);
        add(p + ".norm1.beta", ParamGroup::encoder, b.norm1.beta, b.norm1.dbeta);
        const std::pair<const char*, Linear*> attn_lins[] = {
            {"wq", &b.attn.wq}, {"wk", &b.attn.wk}, {"wv", &b.attn.wv}, {"wo", &b.attn.wo}};
        for (auto [tag, lin] : attn_lins) {
            add(p + ".attn." + tag + ".weight", ParamGroup::encoder, lin->w, lin->dw);
            add(p + ".attn." + tag + ".bias", ParamGroup::encoder, lin->b, lin->db);
        }
        add(p + ".norm2.gamma", ParamGroup::encoder, b.norm2.gamma, b.norm2.dgamma);
        add(p + ".norm2.beta", ParamGroup::encoder, b.norm2.beta, b.norm2.dbeta);
        add(p + ".mlp.fc1.weight", ParamGroup::encoder, b.fc1.w, b.fc1.dw);
        add(p + ".mlp.fc1.bias", ParamGroup::encoder, b.fc1.b, b.fc1.db);
        add(p + ".mlp.fc2.weight", ParamGroup::encoder, b.fc2.w, b.fc2.dw);
        add(p + ".mlp.fc2.bias", ParamGroup::encoder, b.fc2.b, b.fc2.db);
    }
    add("encoder.norm.gamma", ParamGroup::encoder, final_norm_.gamma, final_norm_.dgamma);
    add("encoder.norm.beta", ParamGroup::encoder, final_norm_.beta, final_norm_.dbeta);

    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        const std::string p = "decoder.stage" + std::to_string(i);
        add(p + ".weight", ParamGroup::decoder, decoder_[i].conv.w, decoder_[i].conv.dw);
        add(p + ".bias", ParamGroup::decoder, decoder_[i].conv.b, decoder_[i].conv.db);
    }

    add("head.seg.weight", ParamGroup::head, seg_head_.w, seg_head_.dw);
    add("head.seg.bias", ParamGroup::head, seg_head_.b, seg_head_.db);
    add("head.recon.weight", ParamGroup::head, recon_head_.w, recon_head_.dw);
    add("head.recon.bias", ParamGroup::head, recon_head_.b, recon_head_.db);

    add("projection.fc1.weight", ParamGroup::projection, proj_fc1_.w, proj_fc1_.dw);
    add("projection.fc1.bias", ParamGroup::projection, proj_fc1_.b, proj_fc1_.db);
    add("projection.fc2.weight", ParamGroup::projection, proj_fc2_.w, proj_fc2_.dw);
    add("projection.fc2.bias", ParamGroup::projection, proj_fc2_.b, proj_fc2_.db);
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(),
                                                 suffix) == 0;
}

}  // namespace

void SegModel::init_tensor(const ParamRef& ref, std::uint64_t seed) {
    Tensor& t = *ref.value;
    if (ends_with(ref.name, ".bias") || ends_with(ref.name, ".beta")) {
        t.fill(0.0f);
        return;
    }
    if (ends_with(ref.name, ".gamma")) {
        t.fill(1.0f);
        return;
    }
    Rng rng(derive_seed(seed, ref.name));
    if (ref.name == "embedding.pos") {
        for (std::size_t i = 0; i < t.size(); ++i)
            t[i] = static_cast<float>(rng.normal(0.0, 0.02));
        return;
    }
    // He-normal for conv and linear weights: fan-in is everything but dim 0.
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < t.shape().size(); ++d) fan_in *= t.dim(d);
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<float>(rng.normal(0.0, std));
}

void SegModel::reinit_group(ParamGroup g, std::uint64_t seed) {
    for (const ParamRef& r : refs_)
        if (r.group == g) init_tensor(r, seed);
}

std::size_t SegModel::parameter_count() const {
    std::size_t n = 0;
    for (const ParamRef& r : refs_) n += r.value->size();
    return n;
}

void SegModel::zero_grad() {
    for (const ParamRef& r : refs_) r.grad->fill(0.0f);
}

// ---------------------------------------------------------------------------
// Forward / backward

Tensor SegModel::encode(const Tensor& images) {
    if (images.shape().size() != 4 || images.dim(1) != 1 || images.dim(2) != cfg_.image_size ||
        images.dim(3) != cfg_.image_size)
        throw InvalidInput("model: expected Bx1x" + std::to_string(cfg_.image_size) + "x" +
                           std::to_string(cfg_.image_size) + " input, got " + images.shape_str());
    batch_ = images.dim(0);

    Tensor x = images;
    for (std::size_t i = 0; i < stem_.size(); ++i) x = stem_act_[i].forward(stem_[i].forward(x));
    x = token_embed_.forward(x);

    Tensor tokens = map_to_tokens(x);
    const std::size_t s = cfg_.token_count(), d = cfg_.encoder_dim;
    for (std::size_t b = 0; b < batch_; ++b)
        for (std::size_t i = 0; i < s * d; ++i) tokens[b * s * d + i] += pos_embed_[i];

    for (EncoderBlock& blk : blocks_) {
        Tensor a = blk.attn.forward(blk.norm1.forward(tokens), batch_, s);
        for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] += a[i];
        Tensor m = blk.fc2.forward(blk.act.forward(blk.fc1.forward(blk.norm2.forward(tokens))));
        for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] += m[i];
    }
    return final_norm_.forward(tokens);
}

Tensor SegModel::encode_backward(const Tensor& dtok) {
    Tensor d = final_norm_.backward(dtok);
    for (std::size_t i = blocks_.size(); i-- > 0;) {
        EncoderBlock& blk = blocks_[i];
        Tensor du = blk.norm2.backward(
            blk.fc1.backward(blk.act.backward(blk.fc2.backward(d))));
        for (std::size_t j = 0; j < d.size(); ++j) d[j] += du[j];
        Tensor da = blk.norm1.backward(blk.attn.backward(d));
        for (std::size_t j = 0; j < d.size(); ++j) d[j] += da[j];
    }

    const std::size_t s = cfg_.token_count(), dim = cfg_.encoder_dim;
    for (std::size_t b = 0; b < batch_; ++b)
        for (std::size_t i = 0; i < s * dim; ++i) d_pos_embed_[i] += d[b * s * dim + i];

    Tensor dx = token_embed_.backward(tokens_to_map(d, batch_, cfg_.token_grid(), dim));
    for (std::size_t i = stem_.size(); i-- > 0;)
        dx = stem_[i].backward(stem_act_[i].backward(dx));
    return dx;
}

Tensor SegModel::decode(const Tensor& tokens) {
    Tensor x = tokens_to_map(tokens, batch_, cfg_.token_grid(), cfg_.encoder_dim);
    for (DecoderStage& s : decoder_) {
        if (s.upsample) x = s.up.forward(x);
        x = s.act.forward(s.conv.forward(x));
    }
    return x;
}

Tensor SegModel::decode_backward(const Tensor& dfeat) {
    Tensor d = dfeat;
    for (std::size_t i = decoder_.size(); i-- > 0;) {
        DecoderStage& s = decoder_[i];
        d = s.conv.backward(s.act.backward(d));
        if (s.upsample) d = s.up.backward(d);
    }
    return map_to_tokens(d);
}

Tensor SegModel::forward_segment(const Tensor& images) {
    return seg_head_.forward(decode(encode(images)));
}

Tensor SegModel::backward_segment(const Tensor& dlogits) {
    return encode_backward(decode_backward(seg_head_.backward(dlogits)));
}

Tensor SegModel::forward_reconstruct(const Tensor& images) {
    return recon_head_.forward(decode(encode(images)));
}

Tensor SegModel::backward_reconstruct(const Tensor& dout) {
    return encode_backward(decode_backward(recon_head_.backward(dout)));
}

Tensor SegModel::forward_embed(const Tensor& images) {
    Tensor tokens = encode(images);
    Tensor pooled = pool_.forward(tokens, batch_, cfg_.token_count());
    Tensor h = proj_fc2_.forward(proj_act_.forward(proj_fc1_.forward(pooled)));
    return proj_norm_.forward(h);
}

Tensor SegModel::backward_embed(const Tensor& dz) {
    Tensor dh = proj_fc1_.backward(proj_act_.backward(proj_fc2_.backward(proj_norm_.backward(dz))));
    return encode_backward(pool_.backward(dh));
}

}  // namespace xdseg
