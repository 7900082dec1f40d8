#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "plip/autograd.hpp"

namespace plip::nn {

using Rng = std::mt19937_64;
using ag::Var;

/// Ordered collection of named trainable tensors. Names are unique and the
/// insertion order is the serialization order.
class ParamStore {
public:
    Var add(const std::string& name, Tensor init);
    Var get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::size_t size() const noexcept { return entries_.size(); }
    std::int64_t numel() const;
    const std::vector<std::pair<std::string, Var>>& entries() const noexcept { return entries_; }

    void zero_grad();
    /// FNV-1a over names and raw parameter bytes.
    std::uint64_t hash() const;
    /// Names matching prefix, in store order.
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;

private:
    std::vector<std::pair<std::string, Var>> entries_;
    std::map<std::string, std::size_t> index_;
};

Tensor randn(Shape shape, double stddev, Rng& rng);

class Linear {
public:
    Linear() = default;
    Linear(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng, bool bias = true);
    Var operator()(const Var& x) const { return ag::linear(x, weight, bias); }

    Var weight, bias;
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out, int kernel, int stride,
           int pad, Rng& rng);
    Var operator()(const Var& x) const { return ag::conv2d(x, weight, bias, stride_, pad_); }

    Var weight, bias;

private:
    int stride_ = 1, pad_ = 0;
};

class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out, int kernel,
                    int stride, int pad, Rng& rng);
    Var operator()(const Var& x) const { return ag::conv_transpose2d(x, weight, bias, stride_, pad_); }

    Var weight, bias;

private:
    int stride_ = 1, pad_ = 0;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParamStore& store, const std::string& name, std::int64_t n);
    Var operator()(const Var& x) const { return ag::layer_norm_last(x, gamma, beta); }

    Var gamma, beta;
};

class Embedding {
public:
    Embedding() = default;
    Embedding(ParamStore& store, const std::string& name, std::int64_t count, std::int64_t dim, Rng& rng);
    Var operator()(std::span<const std::int64_t> ids) const { return ag::gather_rows(table, ids); }
    std::int64_t count() const { return table.dim(0); }

    Var table;
};

/// Pre-norm transformer block over a [batch, length, width] tensor.
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(ParamStore& store, const std::string& name, std::int64_t width, std::int64_t heads,
                     std::int64_t ffn_width, Rng& rng);

    /// `mask` is an additive [batch, length, length] attention bias (0 or a large
    /// negative value); it is broadcast over heads.
    Var operator()(const Var& x, const Tensor& mask) const;

private:
    std::int64_t width_ = 0, heads_ = 1;
    LayerNorm ln1_, ln2_;
    Linear qkv_, proj_, ff1_, ff2_;
};

/// Additive bias that hides key positions >= length[b] from every query.
Tensor key_padding_mask(std::span<const std::int64_t> lengths, std::int64_t max_len);
/// Key padding plus causal masking.
Tensor causal_mask(std::span<const std::int64_t> lengths, std::int64_t max_len);

inline constexpr double kMaskedLogit = -1e9;

}  // namespace plip::nn
