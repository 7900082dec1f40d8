#include "plip/nn.hpp"

#include <cmath>
#include <cstring>

namespace plip::nn {

Var ParamStore::add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    Var v = ag::parameter(std::move(init));
    index_[name] = entries_.size();
    entries_.emplace_back(name, v);
    return v;
}

Var ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return entries_[it->second].second;
}

std::int64_t ParamStore::numel() const {
    std::int64_t n = 0;
    for (const auto& [_, v] : entries_) n += static_cast<std::int64_t>(v.value().size());
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [_, v] : entries_) v.zero_grad();
}

std::uint64_t ParamStore::hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, v] : entries_) {
        mix(name.data(), name.size());
        mix(v.value().data(), v.value().size() * sizeof(double));
    }
    return h;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, _] : entries_)
        if (name.rfind(prefix, 0) == 0) out.push_back(name);
    return out;
}

Tensor randn(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.storage()) v = dist(rng);
    return t;
}

Linear::Linear(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng, bool with_bias) {
    weight = store.add(name + ".weight", randn({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
    if (with_bias) bias = store.add(name + ".bias", Tensor(Shape{out}));
}

Conv2d::Conv2d(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out, int kernel, int stride,
               int pad, Rng& rng)
    : stride_(stride), pad_(pad) {
    double fan_in = static_cast<double>(in * kernel * kernel);
    weight = store.add(name + ".weight", randn({out, in, kernel, kernel}, std::sqrt(2.0 / fan_in), rng));
    bias = store.add(name + ".bias", Tensor(Shape{out}));
}

ConvTranspose2d::ConvTranspose2d(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out,
                                 int kernel, int stride, int pad, Rng& rng)
    : stride_(stride), pad_(pad) {
    // Each output pixel receives about in * (kernel / stride)^2 taps.
    double taps = static_cast<double>(in) * (static_cast<double>(kernel) / stride) * (static_cast<double>(kernel) / stride);
    weight = store.add(name + ".weight", randn({in, out, kernel, kernel}, std::sqrt(1.0 / taps), rng));
    bias = store.add(name + ".bias", Tensor(Shape{out}));
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::int64_t n) {
    gamma = store.add(name + ".gamma", Tensor(Shape{n}, 1.0));
    beta = store.add(name + ".beta", Tensor(Shape{n}));
}

Embedding::Embedding(ParamStore& store, const std::string& name, std::int64_t count, std::int64_t dim, Rng& rng) {
    table = store.add(name + ".table", randn({count, dim}, 0.5, rng));
}

TransformerBlock::TransformerBlock(ParamStore& store, const std::string& name, std::int64_t width,
                                   std::int64_t heads, std::int64_t ffn_width, Rng& rng)
    : width_(width), heads_(heads) {
    if (heads <= 0 || width % heads != 0) {
        throw ConfigError("transformer width " + std::to_string(width) + " not divisible by heads " +
                          std::to_string(heads));
    }
    ln1_ = LayerNorm(store, name + ".ln1", width);
    qkv_ = Linear(store, name + ".qkv", width, 3 * width, rng);
    proj_ = Linear(store, name + ".proj", width, width, rng);
    ln2_ = LayerNorm(store, name + ".ln2", width);
    ff1_ = Linear(store, name + ".ff1", width, ffn_width, rng);
    ff2_ = Linear(store, name + ".ff2", ffn_width, width, rng);
}

Var TransformerBlock::operator()(const Var& x, const Tensor& mask) const {
    const std::int64_t b = x.dim(0), len = x.dim(1), d = width_, h = heads_, dh = d / h;
    if (mask.shape() != Shape{b, len, len}) {
        throw ShapeError("attention mask " + shape_string(mask.shape()) + " does not match input " +
                         shape_string(x.shape()));
    }
    Tensor head_mask(Shape{b * h, len, len});
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t hi = 0; hi < h; ++hi)
            std::memcpy(head_mask.data() + (bi * h + hi) * len * len, mask.data() + bi * len * len,
                        sizeof(double) * static_cast<std::size_t>(len * len));

    auto split_heads = [&](const Var& t) {
        return ag::reshape(ag::permute(ag::reshape(t, {b, len, h, dh}), {0, 2, 1, 3}), {b * h, len, dh});
    };
    Var qkv = qkv_(ln1_(x));
    Var q = split_heads(ag::slice(qkv, 2, 0, d));
    Var k = split_heads(ag::slice(qkv, 2, d, d));
    Var v = split_heads(ag::slice(qkv, 2, 2 * d, d));
    Var scores = ag::add(ag::scale(ag::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh))),
                         ag::constant(std::move(head_mask)));
    Var att = ag::bmm(ag::softmax_last(scores), v);
    Var merged = ag::reshape(ag::permute(ag::reshape(att, {b, h, len, dh}), {0, 2, 1, 3}), {b, len, d});
    Var y = ag::add(x, proj_(merged));
    return ag::add(y, ff2_(ag::silu(ff1_(ln2_(y)))));
}

Tensor key_padding_mask(std::span<const std::int64_t> lengths, std::int64_t max_len) {
    const auto b = static_cast<std::int64_t>(lengths.size());
    Tensor m(Shape{b, max_len, max_len});
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t i = 0; i < max_len; ++i)
            for (std::int64_t j = lengths[static_cast<std::size_t>(bi)]; j < max_len; ++j)
                m[static_cast<std::size_t>((bi * max_len + i) * max_len + j)] = kMaskedLogit;
    return m;
}

Tensor causal_mask(std::span<const std::int64_t> lengths, std::int64_t max_len) {
    Tensor m = key_padding_mask(lengths, max_len);
    const auto b = static_cast<std::int64_t>(lengths.size());
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t i = 0; i < max_len; ++i)
            for (std::int64_t j = i + 1; j < max_len; ++j)
                m[static_cast<std::size_t>((bi * max_len + i) * max_len + j)] = kMaskedLogit;
    return m;
}

}  // namespace plip::nn
