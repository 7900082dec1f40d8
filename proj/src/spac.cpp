#include "plip/spac.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "plip/synthetic.hpp"

namespace plip::spac {

void SpacConfig::validate() const {
    encoder.validate();
    if (n_branches < 2) throw ConfigError("SPAC needs at least 2 prefix branches");
    if (attribute_branches() > static_cast<std::int64_t>(data::SlotSchema::kSlotCount))
        throw ConfigError("SPAC has more attribute branches than attribute slots");
    if (n_styles < 1) throw ConfigError("SPAC needs at least one style encoder");
    if (prefix_len < 1) throw ConfigError("prefix_len must be positive");
    if (gen_layers < 1 || gen_heads < 1 || encoder.embed_dim % gen_heads != 0 || gen_ffn < 1 || style_hidden < 1)
        throw ConfigError("invalid SPAC generator shape");
    if (!(lambda >= 0)) throw ConfigError("SPAC lambda must be non-negative");
    if (max_attr_len < 1 || max_caption_len < 1) throw ConfigError("SPAC maximum lengths must be positive");
}

std::string SpacConfig::canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << encoder.canonical() << "n_branches=" << n_branches << '\n'
       << "n_styles=" << n_styles << '\n'
       << "prefix_len=" << prefix_len << '\n'
       << "gen_layers=" << gen_layers << '\n'
       << "gen_heads=" << gen_heads << '\n'
       << "gen_ffn=" << gen_ffn << '\n'
       << "style_hidden=" << style_hidden << '\n'
       << "spac_max_attr_len=" << max_attr_len << '\n'
       << "spac_max_caption_len=" << max_caption_len << '\n';
    return os.str();
}

const data::Caption& caption_for_style(const data::PersonRecord& rec, std::int64_t style) {
    if (rec.captions.empty()) throw DataError("record " + rec.image_ref + " has no captions");
    if (style < 0) throw ConfigError("negative style index");
    if (style < 2) {
        const auto want = style == 0 ? data::CaptionStyle::spac_style_1 : data::CaptionStyle::spac_style_2;
        for (const auto& c : rec.captions)
            if (c.style == want) return c;
    }
    return rec.captions[static_cast<std::size_t>(style) % rec.captions.size()];
}

namespace {

data::TokenSequence truncated(data::TokenSequence s, std::int64_t max_predicted) {
    // one predicted slot is reserved for EOS
    const auto keep = static_cast<std::size_t>(std::max<std::int64_t>(0, max_predicted - 1));
    if (s.ids.size() > keep) s.ids.resize(keep);
    return s;
}

}  // namespace

SpacBatch make_spac_batch(const std::vector<const data::PersonRecord*>& records, const std::vector<Tensor>& images,
                          const std::vector<std::int64_t>& styles, const data::Vocabulary& vocab, const SpacConfig& cfg) {
    if (records.size() != images.size() || records.size() != styles.size())
        throw ShapeError("make_spac_batch: records, images and styles differ in count");
    SpacBatch b;
    b.images = enc::stack_images(images);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& rec = *records[i];
        std::vector<data::TokenSequence> attrs;
        for (std::int64_t k = 0; k < cfg.attribute_branches(); ++k)
            attrs.push_back(truncated(vocab.encode(rec.attributes.values()[static_cast<std::size_t>(k)]), cfg.max_attr_len));
        b.attrs.push_back(std::move(attrs));
        b.captions.push_back(truncated(vocab.encode(caption_for_style(rec, styles[i]).text), cfg.max_caption_len));
        b.styles.push_back(styles[i]);
    }
    return b;
}

SpacModel::SpacModel(const SpacConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    nn::Rng rng(seed);
    const auto d = cfg.encoder.embed_dim;
    const auto pd = cfg.prefix_len * d;
    std::int64_t feat = 0;
    for (auto w : cfg.encoder.stage_widths) feat += w;
    pe_ = enc::VisualEncoder(store_, "spac.pe", cfg.encoder, rng);
    for (std::int64_t k = 0; k < cfg.n_branches; ++k)
        branches_.emplace_back(store_, "spac.branch" + std::to_string(k), feat, pd, rng);
    for (std::int64_t s = 0; s < cfg.n_styles; ++s) {
        style_in_.emplace_back(store_, "spac.style" + std::to_string(s) + ".in", cfg.n_branches * pd, cfg.style_hidden, rng);
        style_out_.emplace_back(store_, "spac.style" + std::to_string(s) + ".out", cfg.style_hidden, pd, rng);
    }
    tokens_ = nn::Embedding(store_, "spac.gen.tokens", cfg.encoder.vocab_size, d, rng);
    positions_ = nn::Embedding(store_, "spac.gen.positions",
                               cfg.prefix_len + std::max(cfg.max_attr_len, cfg.max_caption_len), d, rng);
    for (std::int64_t l = 0; l < cfg.gen_layers; ++l)
        layers_.emplace_back(store_, "spac.gen.layer" + std::to_string(l), d, cfg.gen_heads, cfg.gen_ffn, rng);
    final_ln_ = nn::LayerNorm(store_, "spac.gen.ln_final", d);
    out_ = nn::Linear(store_, "spac.gen.out", d, cfg.encoder.vocab_size, rng);
}

std::vector<Var> SpacModel::compute_prefixes(const Tensor& images) const {
    const auto p = pe_.pyramid(ag::constant(images));
    std::vector<Var> pooled;
    for (const auto& m : p.maps) pooled.push_back(ag::global_avg_pool(m));
    const Var feat = ag::concat(pooled, 1);
    const auto n = images.dim(0);
    std::vector<Var> e;
    for (const auto& br : branches_) e.push_back(ag::reshape(br(feat), {n, cfg_.prefix_len, cfg_.encoder.embed_dim}));
    return e;
}

std::vector<Var> SpacModel::stylize(const std::vector<Var>& prefixes) const {
    if (static_cast<std::int64_t>(prefixes.size()) != cfg_.n_branches)
        throw DataError("stylize needs all " + std::to_string(cfg_.n_branches) + " prefixes, got " +
                        std::to_string(prefixes.size()));
    const auto n = prefixes[0].dim(0);
    const auto pd = cfg_.prefix_len * cfg_.encoder.embed_dim;
    std::vector<Var> flat;
    for (const auto& e : prefixes) flat.push_back(ag::reshape(e, {n, pd}));
    const Var cat = ag::concat(flat, 1);
    std::vector<Var> c;
    for (std::size_t s = 0; s < style_in_.size(); ++s)
        c.push_back(ag::reshape(style_out_[s](ag::silu(style_in_[s](cat))), {n, cfg_.prefix_len, cfg_.encoder.embed_dim}));
    return c;
}

Var SpacModel::generator_logits(const Var& prefixes, const std::vector<std::vector<std::int64_t>>& tokens) const {
    const auto b = prefixes.dim(0), p = prefixes.dim(1), d = prefixes.dim(2);
    if (static_cast<std::int64_t>(tokens.size()) != b) throw ShapeError("generator: prefixes and token rows differ in count");
    std::int64_t t = 0;
    for (const auto& row : tokens) t = std::max(t, static_cast<std::int64_t>(row.size()));
    const auto len = p + t;
    if (len > positions_.count()) throw DataError("generator input longer than the position table");

    Var x = prefixes;
    std::vector<std::int64_t> lengths;
    if (t > 0) {
        std::vector<std::int64_t> ids;
        ids.reserve(static_cast<std::size_t>(b * t));
        for (const auto& row : tokens) {
            for (std::int64_t i = 0; i < t; ++i) {
                const auto id = i < static_cast<std::int64_t>(row.size()) ? row[static_cast<std::size_t>(i)] : data::special::pad;
                if (id < 0 || id >= tokens_.count())
                    throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                                    std::to_string(tokens_.count()));
                ids.push_back(id);
            }
        }
        x = ag::concat({prefixes, ag::reshape(tokens_(ids), {b, t, d})}, 1);
    }
    for (const auto& row : tokens) lengths.push_back(p + static_cast<std::int64_t>(row.size()));
    std::vector<std::int64_t> pos(static_cast<std::size_t>(b * len));
    for (std::int64_t i = 0; i < b * len; ++i) pos[static_cast<std::size_t>(i)] = i % len;
    x = ag::add(x, ag::reshape(positions_(pos), {b, len, d}));
    const Tensor mask = nn::causal_mask(lengths, len);
    for (const auto& layer : layers_) x = layer(x, mask);
    return out_(final_ln_(x));
}

SpacLoss SpacModel::loss(const SpacBatch& batch) const {
    const auto n = static_cast<std::int64_t>(batch.size());
    if (n == 0) throw DataError("empty SPAC batch");
    if (batch.images.rank() != 4 || batch.images.dim(0) != n) throw ShapeError("SPAC batch images do not match records");
    if (static_cast<std::int64_t>(batch.attrs.size()) != n || static_cast<std::int64_t>(batch.styles.size()) != n)
        throw ShapeError("SPAC batch fields differ in count");
    const auto na = cfg_.attribute_branches();
    const auto nb = cfg_.n_branches;
    const auto p = cfg_.prefix_len, d = cfg_.encoder.embed_dim;

    const auto e = compute_prefixes(batch.images);
    const auto c = stylize(e);
    std::vector<Var> all(e);
    all.insert(all.end(), c.begin(), c.end());
    const Var table = ag::reshape(ag::concat(all, 0), {(nb + cfg_.n_styles) * n, p * d});

    std::vector<std::int64_t> rows;
    std::vector<std::vector<std::int64_t>> inputs, targets;
    std::vector<bool> is_caption;
    for (std::int64_t b = 0; b < n; ++b) {
        if (static_cast<std::int64_t>(batch.attrs[b].size()) != na) throw ShapeError("SPAC batch: wrong attribute count");
        const auto style = batch.styles[static_cast<std::size_t>(b)];
        if (style < 0 || style >= cfg_.n_styles)
            throw ConfigError("style index " + std::to_string(style) + " out of range [0, " + std::to_string(cfg_.n_styles) + ")");
        auto add_seq = [&](std::int64_t prefix_row, const data::TokenSequence& words, bool caption) {
            std::vector<std::int64_t> y = words.ids;
            for (auto id : y)
                if (id < 0 || id >= cfg_.encoder.vocab_size) throw DataError("SPAC target id " + std::to_string(id) + " outside vocabulary");
            y.push_back(data::special::eos);
            rows.push_back(prefix_row);
            inputs.emplace_back(y.begin(), y.end() - 1);
            targets.push_back(std::move(y));
            is_caption.push_back(caption);
        };
        for (std::int64_t k = 0; k < na; ++k) add_seq(k * n + b, batch.attrs[b][static_cast<std::size_t>(k)], false);
        add_seq((nb + style) * n + b, batch.captions[static_cast<std::size_t>(b)], true);
    }
    const auto s = static_cast<std::int64_t>(rows.size());
    const Var prefixes = ag::reshape(ag::gather_rows(table, rows), {s, p, d});
    const Var logits = generator_logits(prefixes, inputs);
    const auto len = logits.dim(1);
    const Var flat = ag::reshape(logits, {s * len, cfg_.encoder.vocab_size});

    std::vector<std::int64_t> cap_t(static_cast<std::size_t>(s * len), -1), attr_t(cap_t);
    SpacLoss out;
    for (std::int64_t i = 0; i < s; ++i) {
        auto& dst = is_caption[static_cast<std::size_t>(i)] ? cap_t : attr_t;
        const auto& y = targets[static_cast<std::size_t>(i)];
        for (std::size_t t = 0; t < y.size(); ++t)
            dst[static_cast<std::size_t>(i * len + p - 1 + static_cast<std::int64_t>(t))] = y[t];
        (is_caption[static_cast<std::size_t>(i)] ? out.caption_tokens : out.attr_tokens) += static_cast<std::int64_t>(y.size());
    }
    const Var cap = ag::cross_entropy_sum(flat, cap_t);
    const Var attr = ag::cross_entropy_sum(flat, attr_t);
    out.caption_nll = cap.item();
    out.attr_nll = attr.item();
    Var total = cfg_.lambda == 0.0 ? cap : ag::add(cap, ag::scale(attr, cfg_.lambda));
    out.total = ag::scale(total, 1.0 / static_cast<double>(n));
    return out;
}

std::vector<std::vector<std::int64_t>> SpacModel::decode(const Var& prefixes, std::int64_t max_len,
                                                         const GenerateOptions& opt, std::uint64_t stream) const {
    const auto b = prefixes.dim(0), p = prefixes.dim(1);
    const auto v = cfg_.encoder.vocab_size;
    std::vector<std::vector<std::int64_t>> seqs(static_cast<std::size_t>(b));
    std::vector<bool> done(static_cast<std::size_t>(b), false);
    std::mt19937_64 rng(data::mix_seed(opt.seed, stream));
    for (std::int64_t step = 0; step < max_len; ++step) {
        const Tensor logits = generator_logits(prefixes, seqs).value();
        const auto len = logits.dim(1);
        bool any = false;
        for (std::int64_t i = 0; i < b; ++i) {
            if (done[static_cast<std::size_t>(i)]) continue;
            auto& seq = seqs[static_cast<std::size_t>(i)];
            const double* row = logits.data() + (i * len + p - 1 + static_cast<std::int64_t>(seq.size())) * v;
            // candidates: EOS and ordinary words
            std::vector<std::int64_t> cand{data::special::eos};
            for (std::int64_t id = data::special::count; id < v; ++id) cand.push_back(id);
            std::int64_t pick = cand[0];
            if (opt.mode == DecodeMode::greedy) {
                for (auto id : cand)
                    if (row[id] > row[pick]) pick = id;
            } else {
                const auto k = std::min<std::size_t>(static_cast<std::size_t>(std::max<std::int64_t>(opt.top_k, 1)), cand.size());
                std::stable_sort(cand.begin(), cand.end(), [row](std::int64_t a, std::int64_t c) { return row[a] > row[c]; });
                cand.resize(k);
                std::vector<double> w;
                for (auto id : cand) w.push_back(std::exp(row[id] - row[cand[0]]));
                std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
                pick = cand[dist(rng)];
            }
            if (pick == data::special::eos) {
                done[static_cast<std::size_t>(i)] = true;
            } else {
                seq.push_back(pick);
                any = true;
            }
        }
        if (!any) break;
    }
    return seqs;
}

std::vector<Generated> SpacModel::generate(const Tensor& images, const data::Vocabulary& vocab,
                                           const GenerateOptions& opt) const {
    if (opt.style < 0 || opt.style >= cfg_.n_styles)
        throw ConfigError("style index " + std::to_string(opt.style) + " out of range [0, " + std::to_string(cfg_.n_styles) + ")");
    if (opt.max_len < 1 || opt.max_len > cfg_.max_caption_len)
        throw ConfigError("max_len must lie in [1, " + std::to_string(cfg_.max_caption_len) + "]");
    if (opt.mode == DecodeMode::top_k && opt.top_k < 1) throw ConfigError("top_k must be positive");
    if (vocab.size() != cfg_.encoder.vocab_size) throw ConfigError("vocabulary size does not match the model");
    ag::NoGradGuard guard;
    const auto n = images.dim(0);
    const auto e = compute_prefixes(images);
    const auto c = stylize(e);

    auto to_text = [&vocab](const std::vector<std::int64_t>& ids) {
        std::vector<std::string> words;
        for (auto id : ids) words.push_back(vocab.word(id));
        return data::detokenize(words);
    };
    std::vector<Generated> out(static_cast<std::size_t>(n));
    const auto caps = decode(c[static_cast<std::size_t>(opt.style)], opt.max_len, opt, 0);
    for (std::int64_t i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)].caption_ids = caps[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(i)].caption = to_text(caps[static_cast<std::size_t>(i)]);
    }
    const auto attr_len = std::min(opt.max_len, cfg_.max_attr_len);
    for (std::int64_t k = 0; k < cfg_.attribute_branches(); ++k) {
        const auto seqs = decode(e[static_cast<std::size_t>(k)], attr_len, opt, static_cast<std::uint64_t>(k + 1));
        for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)].attributes.push_back(to_text(seqs[static_cast<std::size_t>(i)]));
    }
    return out;
}

}  // namespace plip::spac
