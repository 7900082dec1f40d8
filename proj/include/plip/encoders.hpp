#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plip/data.hpp"
#include "plip/nn.hpp"

namespace plip::enc {

using ag::Var;

struct EncoderConfig {
    std::int64_t embed_dim = 64;
    std::vector<std::int64_t> pyramid_strides{4, 8, 16, 32};
    std::vector<std::int64_t> stage_widths{8, 16, 32, 64};
    std::int64_t blocks_per_stage = 2;
    std::int64_t text_layers = 2;
    std::int64_t text_heads = 4;
    std::int64_t text_ffn = 128;
    std::int64_t vocab_size = 0;
    std::int64_t max_caption_len = 48;  // framed, includes BOS and EOS
    std::int64_t max_attr_len = 8;
    /// Inputs are reflect-padded on the bottom/right to a multiple of this.
    std::int64_t pad_multiple = 32;

    void validate() const;
    /// Canonical "key=value" lines; identical configs give identical text.
    std::string canonical() const;
};

enum class Modality { visual, textual };

struct GlobalEmbedding {
    Var vectors;  // [N, d]
    Modality modality = Modality::visual;
};

/// One map per stride, [N, C_s, H_s, W_s], plus the padding that was applied to the input.
struct PyramidFeatures {
    std::vector<Var> maps;
    std::vector<std::int64_t> strides;
    std::int64_t input_height = 0;  // before padding
    std::int64_t input_width = 0;
    std::int64_t pad_bottom = 0;
    std::int64_t pad_right = 0;
};

struct TokenHiddenStates {
    Var states;                        // [N, L, d], L = longest sequence in the batch
    std::vector<std::int64_t> lengths; // non-PAD rows per sample
};

/// Shared visual backbone: a 1x1 adapter per input channel count, a stride-4
/// stem, then four stages whose outputs form the pyramid.
class VisualEncoder {
public:
    VisualEncoder() = default;
    VisualEncoder(nn::ParamStore& store, const std::string& name, const EncoderConfig& cfg, nn::Rng& rng);

    /// images: [N, C, H, W] with C in {1, 3}.
    PyramidFeatures pyramid(const Var& images) const;
    GlobalEmbedding pool(const PyramidFeatures& p) const;
    std::pair<PyramidFeatures, GlobalEmbedding> encode(const Var& images) const;

private:
    EncoderConfig cfg_;
    nn::Conv2d adapter_gray_, adapter_color_;
    nn::Conv2d stem1_, stem2_;
    std::vector<std::vector<nn::Conv2d>> stages_;
    nn::Linear head_;
};

class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(nn::ParamStore& store, const std::string& name, const EncoderConfig& cfg, nn::Rng& rng);

    struct Output {
        TokenHiddenStates hidden;
        GlobalEmbedding global;
        std::size_t truncated = 0;  // sequences cut to max_caption_len
    };

    /// Sequences are expected framed (BOS ... EOS); longer ones are truncated.
    Output encode(const std::vector<data::TokenSequence>& batch) const;

private:
    EncoderConfig cfg_;
    nn::Embedding tokens_, positions_;
    std::vector<nn::TransformerBlock> layers_;
    nn::LayerNorm final_ln_;
    nn::Linear pooler_;
};

/// Bilinear-upsamples every level to the finest grid and concatenates channels.
Var fuse_pyramid(const PyramidFeatures& p);

/// Stacks [C, H, W] images into one [N, C, H, W] tensor.
Tensor stack_images(const std::vector<Tensor>& images);

}  // namespace plip::enc
