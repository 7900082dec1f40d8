#pragma once

// Shared fixtures for the test suites and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <unistd.h>
#include <string>
#include <vector>

#include "plip/evaluation.hpp"
#include "plip/synthetic.hpp"

namespace plip::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = u(rng);
    return t;
}

struct Probe {
    std::string param;
    std::size_t index = 0;
    double analytic = 0, numeric = 0;

    double rel_error() const {
        const double scale = std::max(std::abs(analytic), std::abs(numeric));
        return scale < 1e-9 ? std::abs(analytic - numeric) : std::abs(analytic - numeric) / scale;
    }
};

/// Fourth-order central differences at `count` random entries of parameters the loss reaches.
inline std::vector<Probe> gradient_probes(nn::ParamStore& store, const std::function<ag::Var()>& loss, std::size_t count,
                                          std::uint64_t seed, double h = 1e-3) {
    store.zero_grad();
    ag::backward(loss());
    std::vector<std::pair<std::string, std::size_t>> candidates;
    for (auto& [name, p] : store.entries()) {
        const auto& g = p.grad();
        if (g.empty()) continue;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (g[i] != 0.0) candidates.emplace_back(name, i);
    }
    std::mt19937_64 rng(seed);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    if (candidates.size() > count) candidates.resize(count);

    std::vector<Probe> out;
    for (const auto& [name, i] : candidates) {
        auto p = store.get(name);
        Probe pr{name, i, p.grad()[i], 0};
        const double x = p.value()[i];
        ag::NoGradGuard ng;
        auto at = [&](double dx) {
            p.mutable_value()[i] = x + dx;
            return loss().item();
        };
        pr.numeric = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h);
        p.mutable_value()[i] = x;
        out.push_back(pr);
    }
    store.zero_grad();
    return out;
}

inline double worst(const std::vector<Probe>& probes) {
    double w = 0;
    for (const auto& p : probes) w = std::max(w, p.rel_error());
    return w;
}

/// Small enough for finite differences over every loss.
inline enc::EncoderConfig toy_encoder(std::int64_t vocab_size) {
    enc::EncoderConfig e;
    e.embed_dim = 8;
    e.pyramid_strides = {4, 8};
    e.stage_widths = {4, 8};
    e.blocks_per_stage = 1;
    e.text_layers = 1;
    e.text_heads = 2;
    e.text_ffn = 16;
    e.vocab_size = vocab_size;
    e.max_caption_len = 24;
    e.max_attr_len = 8;
    e.pad_multiple = 8;
    return e;
}

inline pt::PlipConfig toy_plip(std::int64_t vocab_size) {
    pt::PlipConfig c;
    c.encoder = toy_encoder(vocab_size);
    c.se_reduction = 2;
    c.sic_hidden = 8;
    return c;
}

inline spac::SpacConfig toy_spac(std::int64_t vocab_size) {
    spac::SpacConfig c;
    c.encoder = toy_encoder(vocab_size);
    c.prefix_len = 2;
    c.gen_layers = 1;
    c.gen_heads = 2;
    c.gen_ffn = 16;
    c.style_hidden = 16;
    c.max_caption_len = 24;
    return c;
}

struct ToyData {
    std::vector<data::PersonRecord> records;
    data::Vocabulary vocab;
    std::vector<Tensor> images;
};

inline ToyData toy_data(std::int64_t ids, std::int64_t per_id, std::uint64_t seed, std::int64_t h = 16,
                        std::int64_t w = 8) {
    ToyData d;
    data::SynthOptions opt;
    opt.height = h;
    opt.width = w;
    d.records = data::synth_manifest(ids, per_id, seed, opt);
    d.vocab = data::Vocabulary::from_records(d.records);
    d.images = train::load_images(d.records, {});
    return d;
}

// Ranking oracle: the position of item j is the number of items that beat it,
// counted pairwise without sorting.
inline std::size_t brute_position(const Tensor& sim, std::size_t q, std::size_t j) {
    const auto n = static_cast<std::size_t>(sim.dim(1));
    const double* row = sim.data() + q * n;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (row[i] > row[j] || (row[i] == row[j] && i < j)) ++pos;
    return pos;
}

inline double brute_rank_at_k(const Tensor& sim, const std::vector<std::int64_t>& qids,
                              const std::vector<std::int64_t>& gids, std::int64_t k) {
    std::size_t hits = 0;
    for (std::size_t q = 0; q < qids.size(); ++q) {
        bool hit = false;
        for (std::size_t j = 0; j < gids.size(); ++j)
            if (gids[j] == qids[q] && brute_position(sim, q, j) < static_cast<std::size_t>(k)) hit = true;
        hits += hit;
    }
    return static_cast<double>(hits) / static_cast<double>(qids.size());
}

inline double brute_mean_ap(const Tensor& sim, const std::vector<std::int64_t>& qids,
                            const std::vector<std::int64_t>& gids) {
    double total = 0;
    for (std::size_t q = 0; q < qids.size(); ++q) {
        std::vector<std::size_t> positions;
        for (std::size_t j = 0; j < gids.size(); ++j)
            if (gids[j] == qids[q]) positions.push_back(brute_position(sim, q, j));
        std::sort(positions.begin(), positions.end());
        double ap = 0;
        for (std::size_t r = 0; r < positions.size(); ++r)
            ap += static_cast<double>(r + 1) / static_cast<double>(positions[r] + 1);
        total += ap / static_cast<double>(positions.size());
    }
    return total / static_cast<double>(qids.size());
}

struct MetricInstance {
    Tensor sim;
    std::vector<std::int64_t> qids, gids;
};

/// Random similarity matrix (coarse values, so ties occur) where every query has a match.
inline MetricInstance random_metric_instance(std::mt19937_64& rng, std::int64_t max_size = 20) {
    std::uniform_int_distribution<std::int64_t> size(1, max_size), level(0, 6);
    const auto m = size(rng), n = size(rng);
    std::uniform_int_distribution<std::int64_t> id(0, std::max<std::int64_t>(0, n / 2));
    MetricInstance inst;
    for (std::int64_t j = 0; j < n; ++j) inst.gids.push_back(id(rng));
    std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
    for (std::int64_t i = 0; i < m; ++i) inst.qids.push_back(inst.gids[static_cast<std::size_t>(pick(rng))]);
    inst.sim = Tensor({m, n});
    for (auto& v : inst.sim.values()) v = static_cast<double>(level(rng)) / 6.0 - 0.5;
    return inst;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() / ("plip_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

inline std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

}  // namespace plip::testing
