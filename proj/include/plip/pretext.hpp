#pragma once

#include <optional>
#include <string>
#include <vector>

#include "plip/encoders.hpp"

namespace plip::pt {

using ag::Var;

struct LossWeights {
    double vlm = 1.0;
    double lambda1 = 1.0;  // colorization
    double lambda2 = 1.0;  // attribute prediction
    double epsilon = 1e-8; // CMPM smoothing

    void validate() const;
};

struct CmpmOptions {
    double epsilon = 1e-8;
    bool symmetric = true;       // add the text->image direction
    bool normalize_text = true;  // normalize the projected-onto side
};

/// Cross-modal projection matching. `ids` may be empty, in which case row i
/// only matches row i.
Var cmpm_loss(const Var& visual, const Var& textual, const std::vector<std::int64_t>& ids,
              const CmpmOptions& opt = {});

/// Mean over the masked tokens of -log p(target); 0 for an empty mask.
Var vap_loss_from_logits(const Var& logits, const std::vector<std::int64_t>& targets);

/// MSE between a predicted color image and its target (both [N,3,H,W]).
Var sic_loss_from_prediction(const Var& prediction, const Tensor& target);

/// w_vlm * L_vlm + lambda1 * L_sic + lambda2 * L_vap. Invalid terms count as 0.
Var combine_losses(const Var& vlm, const Var& sic, const Var& vap, const LossWeights& w);

/// Text-conditioned channel gating: F[c] * sigmoid(g_c(t)), g a 2-layer bottleneck.
class SeFusion {
public:
    SeFusion() = default;
    SeFusion(nn::ParamStore& store, const std::string& name, std::int64_t channels, std::int64_t text_dim,
             std::int64_t reduction, nn::Rng& rng);

    Var gates(const enc::GlobalEmbedding& t) const;
    Var operator()(const Var& features, const enc::GlobalEmbedding& t) const;

    /// Test hook: replace every gate with a constant.
    void set_gate_override(std::optional<double> g) { override_ = g; }

private:
    nn::Linear squeeze_, excite_;
    std::optional<double> override_;
};

/// SE fusion on the fused gray pyramid, then two stride-2 deconvolutions back to
/// input resolution and a sigmoid RGB head.
class SicDecoder {
public:
    SicDecoder() = default;
    SicDecoder(nn::ParamStore& store, const std::string& name, std::int64_t fused_channels, std::int64_t text_dim,
               std::int64_t hidden, std::int64_t se_reduction, nn::Rng& rng);

    /// Output cropped to out_h x out_w.
    Var operator()(const Var& fused, const enc::GlobalEmbedding& t, std::int64_t out_h, std::int64_t out_w) const;

    SeFusion& se() { return se_; }

private:
    SeFusion se_;
    nn::Conv2d reduce_;
    nn::ConvTranspose2d up1_, up2_;
    nn::Conv2d rgb_;
};

class VapHead {
public:
    VapHead() = default;
    /// With `concat`, the hidden state and visual embedding are concatenated instead of added.
    VapHead(nn::ParamStore& store, const std::string& name, std::int64_t dim, std::int64_t vocab, bool concat,
            nn::Rng& rng);

    /// hidden/visual: [M, d] -> logits [M, vocab], through dense + silu + layer norm + decoder
    Var operator()(const Var& hidden, const Var& visual) const;
    std::int64_t vocab() const { return vocab_; }
    nn::Linear& output_layer() { return out_; }

private:
    nn::Linear transform_;
    nn::LayerNorm ln_;
    nn::Linear out_;
    std::int64_t vocab_ = 0;
    bool concat_ = false;
};

struct PlipConfig {
    enc::EncoderConfig encoder;
    LossWeights weights;
    bool vap_concat = false;
    double mask_rate = 1.0;
    std::int64_t se_reduction = 4;
    std::int64_t sic_hidden = 32;
    bool cmpm_symmetric = true;

    void validate() const;
    std::string canonical() const;
};

/// One training batch; captions and masked captions are framed (BOS ... EOS).
struct PlipBatch {
    Tensor color;  // [N,3,H,W]
    Tensor gray;   // [N,1,H,W]
    std::vector<data::TokenSequence> captions;
    std::vector<data::MaskedCaption> masked;
    std::vector<std::int64_t> ids;

    std::size_t size() const { return ids.size(); }
};

struct LossBreakdown {
    Var total;
    double total_value = 0, vlm = 0, sic = 0, vap = 0;
    std::int64_t masked_tokens = 0;
};

class PlipModel {
public:
    PlipModel(const PlipConfig& cfg, std::uint64_t seed);
    PlipModel(const PlipModel&) = delete;
    PlipModel& operator=(const PlipModel&) = delete;

    const PlipConfig& config() const { return cfg_; }
    /// Loss weights are a training choice; the architecture does not depend on them.
    void set_weights(const LossWeights& w) {
        w.validate();
        cfg_.weights = w;
    }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }

    const enc::VisualEncoder& visual() const { return visual_; }
    const enc::TextEncoder& text() const { return text_; }
    SicDecoder& sic() { return sic_; }
    const SicDecoder& sic() const { return sic_; }
    VapHead& vap() { return vap_; }
    const VapHead& vap() const { return vap_; }

    Var sic_prediction(const Tensor& gray, const std::vector<data::TokenSequence>& captions) const;
    Var vap_logits(const Tensor& color, const std::vector<data::MaskedCaption>& masked,
                   std::vector<std::int64_t>* targets) const;

    /// Terms with zero weight are skipped unless `all_terms` is set.
    LossBreakdown loss(const PlipBatch& batch, bool all_terms = false) const;

    /// Eval-mode global embeddings, [N, d].
    Tensor embed_images(const Tensor& images) const;
    Tensor embed_texts(const std::vector<data::TokenSequence>& captions) const;

    /// Backbone = both encoders (everything the retrieval protocols embed with).
    std::uint64_t backbone_hash() const;

private:
    PlipConfig cfg_;
    nn::ParamStore store_;
    enc::VisualEncoder visual_;
    enc::TextEncoder text_;
    SicDecoder sic_;
    VapHead vap_;
};

}  // namespace plip::pt
