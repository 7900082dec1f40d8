#include "plip/encoders.hpp"

#include <sstream>

namespace plip::enc {

void EncoderConfig::validate() const {
    if (embed_dim <= 0) throw ConfigError("embed_dim must be positive");
    if (pyramid_strides.empty() || pyramid_strides.size() != stage_widths.size()) {
        throw ConfigError("pyramid_strides and stage_widths must be non-empty and of equal length");
    }
    for (std::size_t i = 0; i < pyramid_strides.size(); ++i) {
        const auto s = pyramid_strides[i];
        if (s <= 0 || (s & (s - 1)) != 0) throw ConfigError("pyramid strides must be powers of two");
        if (i == 0 && s != 4) throw ConfigError("the finest pyramid stride must be 4");
        if (i > 0 && s != 2 * pyramid_strides[i - 1]) throw ConfigError("pyramid strides must double per stage");
        if (stage_widths[i] <= 0) throw ConfigError("stage widths must be positive");
    }
    if (blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be at least 1");
    if (text_layers < 0 || text_heads <= 0 || embed_dim % text_heads != 0 || text_ffn <= 0) {
        throw ConfigError("invalid text encoder shape");
    }
    if (vocab_size <= data::special::count) throw ConfigError("vocab_size must exceed the reserved token count");
    if (max_caption_len < 3 || max_attr_len < 2) throw ConfigError("maximum lengths are too small");
    if (pad_multiple < 1) throw ConfigError("pad_multiple must be positive");
}

std::string EncoderConfig::canonical() const {
    std::ostringstream os;
    auto list = [&os](const char* key, const std::vector<std::int64_t>& v) {
        os << key << '=';
        for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
        os << '\n';
    };
    os << "embed_dim=" << embed_dim << '\n';
    list("pyramid_strides", pyramid_strides);
    list("stage_widths", stage_widths);
    os << "blocks_per_stage=" << blocks_per_stage << '\n'
       << "text_layers=" << text_layers << '\n'
       << "text_heads=" << text_heads << '\n'
       << "text_ffn=" << text_ffn << '\n'
       << "vocab_size=" << vocab_size << '\n'
       << "max_caption_len=" << max_caption_len << '\n'
       << "max_attr_len=" << max_attr_len << '\n'
       << "pad_multiple=" << pad_multiple << '\n';
    return os.str();
}

VisualEncoder::VisualEncoder(nn::ParamStore& store, const std::string& name, const EncoderConfig& cfg, nn::Rng& rng)
    : cfg_(cfg) {
    cfg.validate();
    const auto w0 = cfg.stage_widths[0];
    adapter_gray_ = nn::Conv2d(store, name + ".adapter1", 1, w0, 1, 1, 0, rng);
    adapter_color_ = nn::Conv2d(store, name + ".adapter3", 3, w0, 1, 1, 0, rng);
    stem1_ = nn::Conv2d(store, name + ".stem1", w0, w0, 3, 2, 1, rng);
    stem2_ = nn::Conv2d(store, name + ".stem2", w0, w0, 3, 2, 1, rng);
    std::int64_t prev = w0;
    for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
        const auto w = cfg.stage_widths[s];
        std::vector<nn::Conv2d> blocks;
        for (std::int64_t b = 0; b < cfg.blocks_per_stage; ++b) {
            const std::string bn = name + ".stage" + std::to_string(s) + ".block" + std::to_string(b);
            // The first block of every stage after the first halves resolution.
            const bool down = s > 0 && b == 0;
            blocks.emplace_back(store, bn, down ? prev : w, w, 3, down ? 2 : 1, 1, rng);
        }
        stages_.push_back(std::move(blocks));
        prev = w;
    }
    head_ = nn::Linear(store, name + ".head", cfg.stage_widths.back(), cfg.embed_dim, rng);
}

PyramidFeatures VisualEncoder::pyramid(const Var& images) const {
    if (images.value().rank() != 4) throw ShapeError("encode_image expects [N,C,H,W], got " + shape_string(images.shape()));
    if (!images.value().all_finite()) throw NumericError("encode_image: non-finite input");
    const auto c = images.dim(1);
    if (c != 1 && c != 3) throw ShapeError("encode_image supports 1 or 3 channels, got " + std::to_string(c));

    PyramidFeatures out;
    out.input_height = images.dim(2);
    out.input_width = images.dim(3);
    const auto m = cfg_.pad_multiple;
    out.pad_bottom = (m - out.input_height % m) % m;
    out.pad_right = (m - out.input_width % m) % m;
    Var x = images;
    if (out.pad_bottom || out.pad_right) x = ag::reflect_pad(x, 0, out.pad_bottom, 0, out.pad_right);

    x = (c == 1) ? adapter_gray_(x) : adapter_color_(x);
    x = ag::silu(stem1_(x));
    x = ag::silu(stem2_(x));
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        for (std::size_t b = 0; b < stages_[s].size(); ++b) {
            const bool down = s > 0 && b == 0;
            if (down)
                x = ag::silu(stages_[s][b](x));
            else
                x = ag::add(x, stages_[s][b](ag::silu(x)));
        }
        out.maps.push_back(x);
        out.strides.push_back(cfg_.pyramid_strides[s]);
    }
    return out;
}

GlobalEmbedding VisualEncoder::pool(const PyramidFeatures& p) const {
    return {head_(ag::global_avg_pool(p.maps.back())), Modality::visual};
}

std::pair<PyramidFeatures, GlobalEmbedding> VisualEncoder::encode(const Var& images) const {
    PyramidFeatures p = pyramid(images);
    GlobalEmbedding g = pool(p);
    return {std::move(p), std::move(g)};
}

TextEncoder::TextEncoder(nn::ParamStore& store, const std::string& name, const EncoderConfig& cfg, nn::Rng& rng)
    : cfg_(cfg) {
    cfg.validate();
    tokens_ = nn::Embedding(store, name + ".tokens", cfg.vocab_size, cfg.embed_dim, rng);
    positions_ = nn::Embedding(store, name + ".positions", cfg.max_caption_len, cfg.embed_dim, rng);
    for (std::int64_t l = 0; l < cfg.text_layers; ++l)
        layers_.emplace_back(store, name + ".layer" + std::to_string(l), cfg.embed_dim, cfg.text_heads, cfg.text_ffn, rng);
    final_ln_ = nn::LayerNorm(store, name + ".ln_final", cfg.embed_dim);
    pooler_ = nn::Linear(store, name + ".pooler", cfg.embed_dim, cfg.embed_dim, rng);
}

TextEncoder::Output TextEncoder::encode(const std::vector<data::TokenSequence>& batch) const {
    if (batch.empty()) throw DataError("encode_text on an empty batch");
    Output out;
    const auto max_len = static_cast<std::size_t>(cfg_.max_caption_len);
    std::vector<std::vector<std::int64_t>> seqs;
    std::int64_t longest = 1;
    for (const auto& s : batch) {
        std::vector<std::int64_t> ids = s.ids;
        if (ids.size() > max_len) {
            ids.resize(max_len);
            ++out.truncated;
        }
        for (auto id : ids)
            if (id < 0 || id >= cfg_.vocab_size) {
                throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                                std::to_string(cfg_.vocab_size));
            }
        data::TokenSequence ts{ids};
        auto len = static_cast<std::int64_t>(ts.length());
        if (len == 0) throw DataError("encode_text on an empty sequence");
        out.hidden.lengths.push_back(len);
        longest = std::max(longest, static_cast<std::int64_t>(ids.size()));
        seqs.push_back(std::move(ids));
    }
    const auto n = static_cast<std::int64_t>(batch.size());
    std::vector<std::int64_t> flat_ids, flat_pos;
    flat_ids.reserve(static_cast<std::size_t>(n * longest));
    for (const auto& ids : seqs) {
        for (std::int64_t t = 0; t < longest; ++t) {
            flat_ids.push_back(t < static_cast<std::int64_t>(ids.size()) ? ids[static_cast<std::size_t>(t)] : data::special::pad);
            flat_pos.push_back(t);
        }
    }
    Var x = ag::add(tokens_(flat_ids), positions_(flat_pos));
    x = ag::reshape(x, {n, longest, cfg_.embed_dim});
    const Tensor mask = nn::key_padding_mask(out.hidden.lengths, longest);
    for (const auto& layer : layers_) x = layer(x, mask);
    x = final_ln_(x);
    out.hidden.states = x;

    std::vector<std::int64_t> first_rows;
    for (std::int64_t b = 0; b < n; ++b) first_rows.push_back(b * longest);
    Var first = ag::gather_rows(ag::reshape(x, {n * longest, cfg_.embed_dim}), first_rows);
    out.global = {pooler_(first), Modality::textual};
    return out;
}

Var fuse_pyramid(const PyramidFeatures& p) {
    if (p.maps.empty()) throw ShapeError("fuse_pyramid on an empty pyramid");
    const auto h = p.maps[0].dim(2), w = p.maps[0].dim(3);
    std::vector<Var> parts;
    for (const auto& m : p.maps)
        parts.push_back((m.dim(2) == h && m.dim(3) == w) ? m : ag::upsample_bilinear(m, h, w));
    return ag::concat(parts, 1);
}

Tensor stack_images(const std::vector<Tensor>& images) {
    if (images.empty()) throw ShapeError("stack_images on an empty list");
    const Shape one = images[0].shape();
    if (one.size() != 3) throw ShapeError("stack_images expects [C,H,W] images");
    Shape s{static_cast<std::int64_t>(images.size()), one[0], one[1], one[2]};
    Tensor out(s);
    const std::size_t per = images[0].size();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].shape() != one) throw ShapeError("stack_images: images differ in shape");
        std::copy(images[i].storage().begin(), images[i].storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return out;
}

}  // namespace plip::enc
