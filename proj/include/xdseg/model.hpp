#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "xdseg/layers.hpp"
#include "xdseg/tensor.hpp"

namespace xdseg {

// Every parameter belongs to exactly one of these groups; weight transfer
// between training stages works at group granularity.
enum class ParamGroup { embedding, encoder, decoder, head, projection };

inline constexpr std::array<ParamGroup, 5> kAllGroups = {
    ParamGroup::embedding, ParamGroup::encoder, ParamGroup::decoder, ParamGroup::head,
    ParamGroup::projection};

const char* to_string(ParamGroup g);
ParamGroup param_group_from_string(std::string_view s);

// Contrastive projection output width (fixed by the loss setup).
inline constexpr std::size_t kProjectionDim = 128;

struct BackboneConfig {
    std::size_t image_size = 64;
    std::vector<std::size_t> embed_channels = {16, 32};  // conv stem, each stage halves H and W
    std::size_t encoder_depth = 4;
    std::size_t encoder_dim = 128;
    std::size_t encoder_heads = 4;
    std::size_t mlp_ratio = 2;
    std::vector<std::size_t> decoder_channels = {64, 32, 16};
    std::size_t token_patch = 1;  // extra tokenization stride after the stem

    // Desk-scale default: trains in minutes on one core while keeping the
    // stem / encoder / decoder / heads / projection partition intact.
    static BackboneConfig desk();
    // Paper-scale geometry (224 px, 12x768 encoder, four decoder stages).
    static BackboneConfig full224();
    // Minimal config for gradient checks and unit tests.
    static BackboneConfig tiny();

    void validate() const;
    std::size_t total_downsample() const;  // stem stages x token_patch
    std::size_t token_grid() const;        // tokens per side
    std::size_t token_count() const;
    std::size_t upsample_stages() const;   // decoder stages that double resolution
    std::string describe() const;          // stable key=value text
    std::string digest() const;            // hex hash of describe()
};

struct ParamRef {
    std::string name;
    ParamGroup group;
    Tensor* value;
    Tensor* grad;
};

// Shared backbone with three forward paths: per-pixel segmentation logits,
// per-pixel reconstruction, and L2-normalized contrastive embeddings.
// Activation caches are per-instance: run one forward/backward pair at a
// time, and call the backward that matches the last forward.
class SegModel {
  public:
    SegModel(BackboneConfig cfg, std::uint64_t seed);

    const BackboneConfig& config() const { return cfg_; }
    const std::vector<ParamRef>& params() { return refs_; }
    std::size_t parameter_count() const;
    void zero_grad();

    // images: B x 1 x image_size x image_size
    Tensor forward_segment(const Tensor& images);     // -> B x 1 x H x W logits
    Tensor backward_segment(const Tensor& dlogits);   // -> gradient w.r.t. images

    Tensor forward_reconstruct(const Tensor& images); // -> B x 1 x H x W
    Tensor backward_reconstruct(const Tensor& dout);

    Tensor forward_embed(const Tensor& images);       // -> B x kProjectionDim, unit rows
    Tensor backward_embed(const Tensor& dz);

    // Draw fresh values for one group from the per-tensor init distribution.
    void reinit_group(ParamGroup g, std::uint64_t seed);

  private:
    struct EncoderBlock {
        LayerNorm norm1;
        MultiHeadAttention attn;
        LayerNorm norm2;
        Linear fc1;
        Gelu act;
        Linear fc2;
    };
    struct DecoderStage {
        bool upsample = false;
        NearestUpsample2 up;
        Conv2d conv;
        Relu act;
    };

    Tensor encode(const Tensor& images);          // -> (B*tokens) x dim
    Tensor encode_backward(const Tensor& dtok);
    Tensor decode(const Tensor& tokens);          // -> B x C x H x W features
    Tensor decode_backward(const Tensor& dfeat);  // -> gradient w.r.t. tokens

    void build_registry();
    void init_tensor(const ParamRef& ref, std::uint64_t seed);

    BackboneConfig cfg_;
    std::uint64_t seed_;

    std::vector<Conv2d> stem_;
    std::vector<Relu> stem_act_;
    Conv2d token_embed_;
    Tensor pos_embed_, d_pos_embed_;
    std::vector<EncoderBlock> blocks_;
    LayerNorm final_norm_;
    std::vector<DecoderStage> decoder_;
    Conv2d seg_head_, recon_head_;
    Linear proj_fc1_;
    Relu proj_act_;
    Linear proj_fc2_;
    L2NormalizeRows proj_norm_;
    MeanPoolTokens pool_;

    std::size_t batch_ = 0;  // batch of the forward pass being differentiated
    std::vector<ParamRef> refs_;
};

}  // namespace xdseg
