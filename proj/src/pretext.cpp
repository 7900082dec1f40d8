#include "plip/pretext.hpp"

#include <cmath>
#include <sstream>

namespace plip::pt {

void LossWeights::validate() const {
    if (!(vlm >= 0) || !(lambda1 >= 0) || !(lambda2 >= 0)) throw ConfigError("loss weights must be non-negative");
    if (!(epsilon > 0) || epsilon > 1e-4) throw ConfigError("CMPM epsilon must lie in (0, 1e-4]");
}

namespace {

Var transpose2d(const Var& x) { return ag::permute(x, {1, 0}); }

// sum_ij p_ij (log p_ij - log(q_ij + eps)) / N with p = softmax_j(a_i . b_j / |b_j|)
Var projection_kl(const Var& a, const Var& b, const Tensor& log_q, bool normalize_b) {
    const Var bn = normalize_b ? ag::normalize_rows(b) : b;
    const Var logp = ag::log_softmax_last(ag::matmul(a, transpose2d(bn)));
    const Var p = ag::exp(logp);
    const Var kl = ag::sum(ag::mul(p, ag::sub(logp, ag::constant(log_q))));
    return ag::scale(kl, 1.0 / static_cast<double>(a.dim(0)));
}

}  // namespace

Var cmpm_loss(const Var& visual, const Var& textual, const std::vector<std::int64_t>& ids, const CmpmOptions& opt) {
    if (visual.value().rank() != 2 || visual.shape() != textual.shape()) {
        throw ShapeError("cmpm_loss expects matching [N,d] embeddings, got " + shape_string(visual.shape()) + " and " +
                         shape_string(textual.shape()));
    }
    const auto n = visual.dim(0);
    if (n == 0) throw DataError("cmpm_loss on an empty batch");
    if (!ids.empty() && static_cast<std::int64_t>(ids.size()) != n) throw ShapeError("cmpm_loss: ids size mismatch");
    if (!visual.value().all_finite() || !textual.value().all_finite()) throw NumericError("cmpm_loss: non-finite embeddings");
    if (!(opt.epsilon > 0)) throw ConfigError("cmpm_loss: epsilon must be positive");

    Tensor log_q({n, n});
    for (std::int64_t i = 0; i < n; ++i) {
        double row = 0;
        for (std::int64_t j = 0; j < n; ++j) row += (ids.empty() ? i == j : ids[i] == ids[j]) ? 1.0 : 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
            const double match = (ids.empty() ? i == j : ids[i] == ids[j]) ? 1.0 : 0.0;
            log_q.at({i, j}) = std::log(match / row + opt.epsilon);
        }
    }
    Var loss = projection_kl(visual, textual, log_q, opt.normalize_text);
    if (opt.symmetric) loss = ag::add(loss, projection_kl(textual, visual, log_q, opt.normalize_text));
    return loss;
}

Var vap_loss_from_logits(const Var& logits, const std::vector<std::int64_t>& targets) {
    if (targets.empty()) return ag::constant(Tensor::scalar(0.0));
    if (logits.value().rank() != 2 || logits.dim(0) != static_cast<std::int64_t>(targets.size())) {
        throw ShapeError("vap_loss: logits " + shape_string(logits.shape()) + " vs " + std::to_string(targets.size()) +
                         " targets");
    }
    for (auto t : targets)
        if (t < 0 || t >= logits.dim(1)) {
            throw DataError("vap_loss: target id " + std::to_string(t) + " outside vocabulary of size " +
                            std::to_string(logits.dim(1)));
        }
    return ag::scale(ag::cross_entropy_sum(logits, targets), 1.0 / static_cast<double>(targets.size()));
}

Var sic_loss_from_prediction(const Var& prediction, const Tensor& target) {
    if (prediction.shape() != target.shape()) {
        throw ShapeError("sic_loss: prediction " + shape_string(prediction.shape()) + " vs target " +
                         shape_string(target.shape()));
    }
    for (double v : target.values())
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("sic_loss: target values must lie in [0,1]");
    return ag::mse(prediction, target);
}

Var combine_losses(const Var& vlm, const Var& sic, const Var& vap, const LossWeights& w) {
    Var total;
    auto accumulate = [&total](const Var& term, double weight) {
        if (!term.valid() || weight == 0.0) return;
        Var t = weight == 1.0 ? term : ag::scale(term, weight);
        total = total.valid() ? ag::add(total, t) : t;
    };
    accumulate(vlm, w.vlm);
    accumulate(sic, w.lambda1);
    accumulate(vap, w.lambda2);
    return total.valid() ? total : ag::constant(Tensor::scalar(0.0));
}

SeFusion::SeFusion(nn::ParamStore& store, const std::string& name, std::int64_t channels, std::int64_t text_dim,
                   std::int64_t reduction, nn::Rng& rng) {
    const auto hidden = std::max<std::int64_t>(1, channels / reduction);
    squeeze_ = nn::Linear(store, name + ".squeeze", text_dim, hidden, rng);
    excite_ = nn::Linear(store, name + ".excite", hidden, channels, rng);
}

Var SeFusion::gates(const enc::GlobalEmbedding& t) const {
    if (t.modality != enc::Modality::textual) throw DataError("se_fuse needs a textual embedding");
    if (override_) return ag::constant(Tensor({t.vectors.dim(0), excite_.weight.dim(1)}, *override_));
    return ag::sigmoid(excite_(ag::silu(squeeze_(t.vectors))));
}

Var SeFusion::operator()(const Var& features, const enc::GlobalEmbedding& t) const {
    if (features.value().rank() != 4 || features.dim(1) != excite_.weight.dim(1) || features.dim(0) != t.vectors.dim(0)) {
        throw ShapeError("se_fuse: feature map " + shape_string(features.shape()) + " does not fit the gate layer");
    }
    return ag::channel_scale(features, gates(t));
}

SicDecoder::SicDecoder(nn::ParamStore& store, const std::string& name, std::int64_t fused_channels,
                       std::int64_t text_dim, std::int64_t hidden, std::int64_t se_reduction, nn::Rng& rng) {
    se_ = SeFusion(store, name + ".se", fused_channels, text_dim, se_reduction, rng);
    reduce_ = nn::Conv2d(store, name + ".reduce", fused_channels, hidden, 1, 1, 0, rng);
    up1_ = nn::ConvTranspose2d(store, name + ".up1", hidden, hidden / 2, 4, 2, 1, rng);
    up2_ = nn::ConvTranspose2d(store, name + ".up2", hidden / 2, hidden / 4, 4, 2, 1, rng);
    rgb_ = nn::Conv2d(store, name + ".rgb", hidden / 4, 3, 1, 1, 0, rng);
}

Var SicDecoder::operator()(const Var& fused, const enc::GlobalEmbedding& t, std::int64_t out_h, std::int64_t out_w) const {
    Var x = se_(fused, t);
    x = ag::silu(reduce_(x));
    x = ag::silu(up1_(x));
    x = ag::silu(up2_(x));
    x = ag::sigmoid(rgb_(x));
    if (x.dim(2) < out_h || x.dim(3) < out_w) throw ShapeError("sic decoder output smaller than the target image");
    if (x.dim(2) != out_h) x = ag::slice(x, 2, 0, out_h);
    if (x.dim(3) != out_w) x = ag::slice(x, 3, 0, out_w);
    return x;
}

VapHead::VapHead(nn::ParamStore& store, const std::string& name, std::int64_t dim, std::int64_t vocab, bool concat,
                 nn::Rng& rng)
    : vocab_(vocab), concat_(concat) {
    transform_ = nn::Linear(store, name + ".transform", concat ? 2 * dim : dim, dim, rng);
    ln_ = nn::LayerNorm(store, name + ".ln", dim);
    out_ = nn::Linear(store, name + ".out", dim, vocab, rng);
}

Var VapHead::operator()(const Var& hidden, const Var& visual) const {
    if (hidden.shape() != visual.shape()) throw ShapeError("vap head: hidden and visual rows differ in shape");
    const Var x = concat_ ? ag::concat({hidden, visual}, 1) : ag::add(hidden, visual);
    return out_(ln_(ag::silu(transform_(x))));
}

void PlipConfig::validate() const {
    encoder.validate();
    weights.validate();
    if (!(mask_rate > 0 && mask_rate <= 1)) throw ConfigError("mask_rate must lie in (0, 1]");
    if (se_reduction < 1) throw ConfigError("se_reduction must be at least 1");
    if (sic_hidden < 4 || sic_hidden % 4 != 0) throw ConfigError("sic_hidden must be a positive multiple of 4");
}

std::string PlipConfig::canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << encoder.canonical() << "vap_concat=" << (vap_concat ? "true" : "false") << '\n'
       << "mask_rate=" << mask_rate << '\n'
       << "se_reduction=" << se_reduction << '\n'
       << "sic_hidden=" << sic_hidden << '\n'
       << "cmpm_symmetric=" << (cmpm_symmetric ? "true" : "false") << '\n'
       << "cmpm_epsilon=" << weights.epsilon << '\n';
    return os.str();
}

PlipModel::PlipModel(const PlipConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    nn::Rng rng(seed);
    visual_ = enc::VisualEncoder(store_, "visual", cfg.encoder, rng);
    text_ = enc::TextEncoder(store_, "text", cfg.encoder, rng);
    std::int64_t fused = 0;
    for (auto w : cfg.encoder.stage_widths) fused += w;
    sic_ = SicDecoder(store_, "sic", fused, cfg.encoder.embed_dim, cfg.sic_hidden, cfg.se_reduction, rng);
    vap_ = VapHead(store_, "vap", cfg.encoder.embed_dim, cfg.encoder.vocab_size, cfg.vap_concat, rng);
}

Var PlipModel::sic_prediction(const Tensor& gray, const std::vector<data::TokenSequence>& captions) const {
    const auto tg = text_.encode(captions).global;
    const auto p = visual_.pyramid(ag::constant(gray));
    return sic_(enc::fuse_pyramid(p), tg, p.input_height, p.input_width);
}

namespace {

struct MaskedRows {
    std::vector<std::int64_t> hidden_rows, sample_rows, targets;
};

MaskedRows masked_rows(const std::vector<data::MaskedCaption>& masked, std::int64_t longest, std::int64_t max_len) {
    MaskedRows r;
    for (std::size_t b = 0; b < masked.size(); ++b) {
        const auto& m = masked[b];
        if (m.mask_positions.size() != m.target_words.size()) throw DataError("masked caption: positions/targets mismatch");
        for (std::size_t k = 0; k < m.mask_positions.size(); ++k) {
            const auto pos = m.mask_positions[k];
            if (pos < 0 || pos >= max_len) continue;  // cut by truncation
            r.hidden_rows.push_back(static_cast<std::int64_t>(b) * longest + pos);
            r.sample_rows.push_back(static_cast<std::int64_t>(b));
            r.targets.push_back(m.target_words[k]);
        }
    }
    return r;
}

}  // namespace

Var PlipModel::vap_logits(const Tensor& color, const std::vector<data::MaskedCaption>& masked,
                          std::vector<std::int64_t>* targets) const {
    const Var v = visual_.encode(ag::constant(color)).second.vectors;
    std::vector<data::TokenSequence> seqs;
    for (const auto& m : masked) seqs.push_back(m.tokens);
    const auto out = text_.encode(seqs);
    const auto& h = out.hidden.states;
    const auto longest = h.dim(1), d = h.dim(2);
    const auto rows = masked_rows(masked, longest, cfg_.encoder.max_caption_len);
    if (targets) *targets = rows.targets;
    if (rows.targets.empty()) return Var{};
    const Var hm = ag::gather_rows(ag::reshape(h, {h.dim(0) * longest, d}), rows.hidden_rows);
    const Var vm = ag::gather_rows(v, rows.sample_rows);
    return vap_(hm, vm);
}

LossBreakdown PlipModel::loss(const PlipBatch& batch, bool all_terms) const {
    const auto n = static_cast<std::int64_t>(batch.size());
    if (n == 0) throw DataError("empty training batch");
    if (batch.color.rank() != 4 || batch.color.dim(0) != n || batch.color.dim(1) != 3)
        throw ShapeError("batch color images must be [N,3,H,W], got " + shape_string(batch.color.shape()));
    if (batch.gray.rank() != 4 || batch.gray.dim(0) != n || batch.gray.dim(1) != 1 ||
        batch.gray.dim(2) != batch.color.dim(2) || batch.gray.dim(3) != batch.color.dim(3))
        throw ShapeError("batch gray images must be [N,1,H,W] aligned with the color images");
    if (static_cast<std::int64_t>(batch.captions.size()) != n) throw ShapeError("batch captions size mismatch");

    const auto& w = cfg_.weights;
    const bool do_vlm = all_terms || w.vlm > 0;
    const bool do_sic = all_terms || w.lambda1 > 0;
    const bool do_vap = all_terms || w.lambda2 > 0;
    if (do_vap && static_cast<std::int64_t>(batch.masked.size()) != n) throw ShapeError("batch masked captions size mismatch");

    LossBreakdown out;
    enc::GlobalEmbedding v, t;
    const Var color = ag::constant(batch.color);
    if (do_vlm || do_vap) v = visual_.encode(color).second;
    if (do_vlm || do_sic) t = text_.encode(batch.captions).global;

    Var vlm, sic, vap;
    if (do_vlm) {
        vlm = cmpm_loss(v.vectors, t.vectors, batch.ids, {w.epsilon, cfg_.cmpm_symmetric, true});
        out.vlm = vlm.item();
    }
    if (do_sic) {
        const auto p = visual_.pyramid(ag::constant(batch.gray));
        const Var pred = sic_(enc::fuse_pyramid(p), t, p.input_height, p.input_width);
        sic = sic_loss_from_prediction(pred, batch.color);
        out.sic = sic.item();
    }
    if (do_vap) {
        std::vector<data::TokenSequence> seqs;
        for (const auto& m : batch.masked) seqs.push_back(m.tokens);
        const auto enc_out = text_.encode(seqs);
        const auto& h = enc_out.hidden.states;
        const auto rows = masked_rows(batch.masked, h.dim(1), cfg_.encoder.max_caption_len);
        if (!rows.targets.empty()) {
            const Var hm = ag::gather_rows(ag::reshape(h, {h.dim(0) * h.dim(1), h.dim(2)}), rows.hidden_rows);
            vap = vap_loss_from_logits(vap_(hm, ag::gather_rows(v.vectors, rows.sample_rows)), rows.targets);
        } else {
            vap = vap_loss_from_logits(Var{}, {});
        }
        out.vap = vap.item();
        out.masked_tokens = static_cast<std::int64_t>(rows.targets.size());
    }
    out.total = combine_losses(vlm, sic, vap, w);
    out.total_value = out.total.item();
    return out;
}

namespace {
constexpr std::int64_t kEmbedChunk = 32;
}

Tensor PlipModel::embed_images(const Tensor& images) const {
    if (images.rank() != 4) throw ShapeError("embed_images expects [N,C,H,W]");
    ag::NoGradGuard guard;
    const auto n = images.dim(0), d = cfg_.encoder.embed_dim;
    Tensor out({n, d});
    const auto per = static_cast<std::size_t>(images.size() / static_cast<std::size_t>(std::max<std::int64_t>(n, 1)));
    for (std::int64_t b = 0; b < n; b += kEmbedChunk) {
        const auto m = std::min(kEmbedChunk, n - b);
        Tensor chunk({m, images.dim(1), images.dim(2), images.dim(3)});
        std::copy_n(images.storage().begin() + static_cast<std::ptrdiff_t>(b * static_cast<std::int64_t>(per)),
                    static_cast<std::ptrdiff_t>(m * static_cast<std::int64_t>(per)), chunk.storage().begin());
        const auto g = visual_.encode(ag::constant(chunk)).second.vectors.value();
        std::copy(g.storage().begin(), g.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(b * d));
    }
    return out;
}

Tensor PlipModel::embed_texts(const std::vector<data::TokenSequence>& captions) const {
    ag::NoGradGuard guard;
    const auto n = static_cast<std::int64_t>(captions.size()), d = cfg_.encoder.embed_dim;
    Tensor out({n, d});
    for (std::int64_t b = 0; b < n; b += kEmbedChunk) {
        const auto m = std::min(kEmbedChunk, n - b);
        std::vector<data::TokenSequence> chunk(captions.begin() + b, captions.begin() + b + m);
        const auto g = text_.encode(chunk).global.vectors.value();
        std::copy(g.storage().begin(), g.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(b * d));
    }
    return out;
}

std::uint64_t PlipModel::backbone_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, v] : store_.entries()) {
        if (name.rfind("visual.", 0) != 0 && name.rfind("text.", 0) != 0) continue;
        mix(name.data(), name.size());
        mix(v.value().data(), v.value().size() * sizeof(double));
    }
    return h;
}

}  // namespace plip::pt
