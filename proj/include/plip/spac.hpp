#pragma once

#include <array>
#include <string>
#include <vector>

#include "plip/encoders.hpp"

// Attribute-union captioner: a pyramid prefix encoder with one projection
// branch per attribute (plus a relation branch), style encoders over the
// concatenated prefixes, and one shared causal generator.

namespace plip::spac {

using ag::Var;

struct SpacConfig {
    std::int64_t n_branches = 7;  // attribute branches + one relation branch
    std::int64_t n_styles = 2;
    std::int64_t prefix_len = 4;
    std::int64_t gen_layers = 2;
    std::int64_t gen_heads = 4;
    std::int64_t gen_ffn = 128;
    std::int64_t style_hidden = 128;
    double lambda = 1.0;
    std::int64_t max_attr_len = 8;      // predicted tokens including EOS
    std::int64_t max_caption_len = 48;  // predicted tokens including EOS
    /// Visual backbone of the prefix encoder; embed_dim is the token width.
    enc::EncoderConfig encoder;

    std::int64_t attribute_branches() const { return n_branches - 1; }
    void validate() const;
    std::string canonical() const;
};

/// The caption a style index is trained on: spac_style_{k+1} when present.
const data::Caption& caption_for_style(const data::PersonRecord& rec, std::int64_t style);

struct SpacBatch {
    Tensor images;  // [N,3,H,W]
    /// attrs[b][k]: words of attribute k (no specials), k < attribute_branches().
    std::vector<std::vector<data::TokenSequence>> attrs;
    std::vector<data::TokenSequence> captions;  // words only
    std::vector<std::int64_t> styles;

    std::size_t size() const { return captions.size(); }
};

SpacBatch make_spac_batch(const std::vector<const data::PersonRecord*>& records, const std::vector<Tensor>& images,
                          const std::vector<std::int64_t>& styles, const data::Vocabulary& vocab, const SpacConfig& cfg);

struct SpacLoss {
    Var total;  // mean over records of caption NLL + lambda * attribute NLL
    double caption_nll = 0, attr_nll = 0;
    std::int64_t caption_tokens = 0, attr_tokens = 0;

    double nats_per_token() const {
        const auto n = caption_tokens + attr_tokens;
        return n ? (caption_nll + attr_nll) / static_cast<double>(n) : 0.0;
    }
};

enum class DecodeMode { greedy, top_k };

struct GenerateOptions {
    std::int64_t style = 0;
    DecodeMode mode = DecodeMode::greedy;
    std::int64_t top_k = 5;
    std::uint64_t seed = 0;
    std::int64_t max_len = 48;
};

struct Generated {
    std::string caption;
    std::vector<std::string> attributes;  // one per attribute branch
    std::vector<std::int64_t> caption_ids;
};

class SpacModel {
public:
    SpacModel(const SpacConfig& cfg, std::uint64_t seed);
    SpacModel(const SpacModel&) = delete;
    SpacModel& operator=(const SpacModel&) = delete;

    const SpacConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }

    /// n prefixes, each [N, prefix_len, d].
    std::vector<Var> compute_prefixes(const Tensor& images) const;
    /// m stylized embeddings, each [N, prefix_len, d]; needs all n prefixes.
    std::vector<Var> stylize(const std::vector<Var>& prefixes) const;

    /// Generator logits [B, P + T, V] for prefixes [B, P, d] followed by tokens.
    Var generator_logits(const Var& prefixes, const std::vector<std::vector<std::int64_t>>& tokens) const;

    SpacLoss loss(const SpacBatch& batch) const;

    std::vector<Generated> generate(const Tensor& images, const data::Vocabulary& vocab,
                                    const GenerateOptions& opt) const;

    /// Output projection of the generator (zeroing it makes the generator uniform).
    nn::Linear& output_layer() { return out_; }

private:
    std::vector<std::vector<std::int64_t>> decode(const Var& prefixes, std::int64_t max_len,
                                                  const GenerateOptions& opt, std::uint64_t stream) const;

    SpacConfig cfg_;
    nn::ParamStore store_;
    enc::VisualEncoder pe_;
    std::vector<nn::Linear> branches_;
    std::vector<nn::Linear> style_in_, style_out_;
    nn::Embedding tokens_, positions_;
    std::vector<nn::TransformerBlock> layers_;
    nn::LayerNorm final_ln_;
    nn::Linear out_;
};

}  // namespace plip::spac
