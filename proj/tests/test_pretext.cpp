#include <doctest.h>

#include "support.hpp"

using namespace plip;
using plip::testing::random_tensor;

namespace {

// Direct p/q/KL evaluation of one CMPM direction, no autograd.
double cmpm_direction(const Tensor& a, const Tensor& b, const std::vector<std::int64_t>& ids, double eps,
                      bool normalize_b = true) {
    const auto n = a.dim(0), d = a.dim(1);
    double total = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        std::vector<double> s(static_cast<std::size_t>(n));
        for (std::int64_t j = 0; j < n; ++j) {
            double dot = 0, norm = 0;
            for (std::int64_t k = 0; k < d; ++k) {
                dot += a.at({i, k}) * b.at({j, k});
                norm += b.at({j, k}) * b.at({j, k});
            }
            s[static_cast<std::size_t>(j)] = normalize_b ? dot / std::sqrt(norm) : dot;
        }
        double z = 0;
        for (double v : s) z += std::exp(v);
        double matches = 0;
        for (std::int64_t j = 0; j < n; ++j) matches += ids[i] == ids[j];
        for (std::int64_t j = 0; j < n; ++j) {
            const double p = std::exp(s[static_cast<std::size_t>(j)]) / z;
            const double q = (ids[i] == ids[j] ? 1.0 : 0.0) / matches;
            total += p * std::log(p / (q + eps));
        }
    }
    return total / static_cast<double>(n);
}

double cmpm_value(const Tensor& v, const Tensor& t, const std::vector<std::int64_t>& ids, pt::CmpmOptions opt = {}) {
    return pt::cmpm_loss(ag::constant(v), ag::constant(t), ids, opt).item();
}

struct PlipFixture {
    plip::testing::ToyData data = plip::testing::toy_data(3, 2, 5);
    pt::PlipModel model{plip::testing::toy_plip(data.vocab.size()), 11};
    pt::PlipBatch batch =
        train::make_plip_batch(data.records, plip::testing::iota(data.records.size()), data.images, data.vocab, model.config(), 3);
};

// fresh gradient of one scalar w.r.t. every parameter
std::vector<Tensor> grads_of(nn::ParamStore& store, const ag::Var& loss) {
    store.zero_grad();
    ag::backward(loss);
    std::vector<Tensor> out;
    for (auto& [name, p] : store.entries()) out.push_back(p.grad().empty() ? Tensor::zeros_like(p.value()) : p.grad());
    store.zero_grad();
    return out;
}

}  // namespace

TEST_CASE("cmpm on the 2x2 orthonormal case matches the hand oracle") {
    const double eps = 1e-8;
    const double e = std::exp(1.0);
    const double p_hit = e / (e + 1), p_miss = 1 / (e + 1);
    const double one_row = p_hit * std::log(p_hit / (1 + eps)) + p_miss * std::log(p_miss / eps);
    // two rows averaged, then the text->image direction is identical
    const double oracle = 2 * one_row;
    Tensor eye({2, 2}, std::vector<double>{1, 0, 0, 1});
    CHECK(std::abs(cmpm_value(eye, eye, {0, 1}) - oracle) < 1e-10);
    CHECK(std::abs(cmpm_value(eye, eye, {}) - oracle) < 1e-10);
    CHECK(std::abs(cmpm_value(eye, eye, {0, 1}, {eps, false, true}) - one_row) < 1e-10);
}

TEST_CASE("cmpm with a single pair is zero up to the smoothing term") {
    std::mt19937_64 rng(1);
    const Tensor v = random_tensor({1, 5}, rng), t = random_tensor({1, 5}, rng);
    const double l = cmpm_value(v, t, {7});
    CHECK(std::abs(l) < 1e-7);
    CHECK(l >= -10 * 1e-8);
}

TEST_CASE("cmpm agrees with a direct oracle on random batches") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<std::int64_t> id(0, 3), size(1, 9);
    for (int trial = 0; trial < 50; ++trial) {
        const auto n = size(rng);
        const Tensor v = random_tensor({n, 6}, rng, -2, 2), t = random_tensor({n, 6}, rng, -2, 2);
        std::vector<std::int64_t> ids;
        for (std::int64_t i = 0; i < n; ++i) ids.push_back(id(rng));
        const double oracle = cmpm_direction(v, t, ids, 1e-8) + cmpm_direction(t, v, ids, 1e-8);
        CHECK(cmpm_value(v, t, ids) == doctest::Approx(oracle).epsilon(1e-10));
        CHECK(cmpm_value(v, t, ids) >= -10 * 1e-8 * static_cast<double>(n));
    }
}

TEST_CASE("cmpm ignores the scale of the projected-onto side") {
    std::mt19937_64 rng(3);
    const Tensor v = random_tensor({5, 4}, rng), t = random_tensor({5, 4}, rng);
    const std::vector<std::int64_t> ids{0, 1, 1, 2, 0};
    const pt::CmpmOptions one_way{1e-8, false, true};
    for (double s : {0.01, 0.5, 3.0, 250.0}) {
        Tensor ts = t;
        for (auto& x : ts.values()) x *= s;
        CHECK(cmpm_value(v, ts, ids, one_way) == doctest::Approx(cmpm_value(v, t, ids, one_way)).epsilon(1e-12));
    }
}

TEST_CASE("cmpm is invariant to a common row permutation") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const std::int64_t n = 6;
        const Tensor v = random_tensor({n, 3}, rng, -2, 2), t = random_tensor({n, 3}, rng, -2, 2);
        std::vector<std::int64_t> ids{0, 0, 1, 2, 2, 2};
        auto perm = plip::testing::iota(n);
        std::shuffle(perm.begin(), perm.end(), rng);
        Tensor vp({n, 3}), tp({n, 3});
        std::vector<std::int64_t> ip;
        for (std::int64_t i = 0; i < n; ++i) {
            const auto j = static_cast<std::int64_t>(perm[static_cast<std::size_t>(i)]);
            for (std::int64_t k = 0; k < 3; ++k) {
                vp.at({i, k}) = v.at({j, k});
                tp.at({i, k}) = t.at({j, k});
            }
            ip.push_back(ids[static_cast<std::size_t>(j)]);
        }
        CHECK(cmpm_value(vp, tp, ip) == doctest::Approx(cmpm_value(v, t, ids)).epsilon(1e-12));
    }
}

TEST_CASE("lowering a mismatched score lowers cmpm") {
    // T = I, so V[0][1] is exactly the score of image 0 against the wrong caption
    Tensor t({2, 2}, std::vector<double>{1, 0, 0, 1});
    const pt::CmpmOptions one_way{1e-8, false, true};
    double prev = INFINITY;
    for (double s : {2.0, 1.0, 0.5, 0.0, -0.5, -1.0}) {
        Tensor v({2, 2}, std::vector<double>{1, s, 0.2, 1});
        const double l = cmpm_value(v, t, {0, 1}, one_way);
        CHECK(l < prev);
        prev = l;
    }
}

TEST_CASE("cmpm input errors") {
    CHECK_THROWS_AS(pt::cmpm_loss(ag::constant(Tensor({0, 3})), ag::constant(Tensor({0, 3})), {}), DataError);
    CHECK_THROWS_AS(pt::cmpm_loss(ag::constant(Tensor({2, 3})), ag::constant(Tensor({2, 4})), {}), ShapeError);
    CHECK_THROWS_AS(pt::cmpm_loss(ag::constant(Tensor({2, 3}, 1.0)), ag::constant(Tensor({2, 3}, 1.0)), {1}), ShapeError);
    Tensor t({2, 2}, std::vector<double>{1, 0, 0, 0});  // second caption has zero norm
    CHECK_THROWS_AS(cmpm_value(Tensor({2, 2}, 1.0), t, {0, 1}), NumericError);
    Tensor bad({2, 2}, 1.0);
    bad[1] = std::nan("");
    CHECK_THROWS_AS(cmpm_value(bad, Tensor({2, 2}, 1.0), {}), NumericError);
}

TEST_CASE("vap loss oracles") {
    for (std::int64_t m : {1, 3, 8}) {
        Tensor logits({m, 100}, 0.25);
        std::vector<std::int64_t> targets;
        for (std::int64_t k = 0; k < m; ++k) targets.push_back((k * 37) % 100);
        CHECK(std::abs(pt::vap_loss_from_logits(ag::constant(logits), targets).item() - std::log(100.0)) < 1e-10);
    }
    CHECK(pt::vap_loss_from_logits(ag::Var{}, {}).item() == 0.0);

    Tensor sharp({2, 100});
    sharp.at({0, 4}) = 20;
    sharp.at({1, 99}) = 20;
    CHECK(pt::vap_loss_from_logits(ag::constant(sharp), {4, 99}).item() < 1e-6);

    CHECK_THROWS_AS(pt::vap_loss_from_logits(ag::constant(sharp), {4, 100}), DataError);
    CHECK_THROWS_AS(pt::vap_loss_from_logits(ag::constant(sharp), {4}), ShapeError);
}

TEST_CASE("sic loss oracles") {
    std::mt19937_64 rng(5);
    const Tensor target = random_tensor({2, 3, 4, 4}, rng, 0, 0.5);
    CHECK(pt::sic_loss_from_prediction(ag::constant(target), target).item() == 0.0);
    for (double c : {0.5, 0.25, 0.125}) {
        Tensor pred = target;
        for (auto& v : pred.values()) v += c;
        CHECK(pt::sic_loss_from_prediction(ag::constant(pred), target).item() == c * c);
    }
    CHECK_THROWS_AS(pt::sic_loss_from_prediction(ag::constant(Tensor({1, 3, 4, 4})), Tensor({1, 3, 4, 5})), ShapeError);
    Tensor high({1, 3, 2, 2}, 0.5);
    high[3] = 1.5;
    CHECK_THROWS_AS(pt::sic_loss_from_prediction(ag::constant(Tensor({1, 3, 2, 2})), high), DataError);
}

TEST_CASE("se fusion gates") {
    nn::ParamStore store;
    nn::Rng rng(6);
    pt::SeFusion se(store, "se", 6, 4, 2, rng);
    std::mt19937_64 g(7);
    const Tensor f = random_tensor({2, 6, 3, 2}, g);
    const enc::GlobalEmbedding t{ag::constant(random_tensor({2, 4}, g)), enc::Modality::textual};

    se.set_gate_override(1.0);
    CHECK(se(ag::constant(f), t).value() == f);
    se.set_gate_override(0.0);
    const Tensor closed = se(ag::constant(f), t).value();
    for (double v : closed.values()) CHECK(v == 0.0);
    se.set_gate_override(std::nullopt);

    // gate_c = sigmoid(W2 silu(W1 t + b1) + b2), weights read back from the store
    const Tensor w1 = store.get("se.squeeze.weight").value(), b1 = store.get("se.squeeze.bias").value();
    const Tensor w2 = store.get("se.excite.weight").value(), b2 = store.get("se.excite.bias").value();
    const auto hidden = b1.size(), channels = b2.size();
    REQUIRE(channels == 6);
    const Tensor out = se(ag::constant(f), t).value();
    double err = 0;
    for (std::int64_t n = 0; n < 2; ++n) {
        std::vector<double> h(hidden);
        for (std::size_t j = 0; j < hidden; ++j) {
            double a = b1[j];
            for (std::int64_t k = 0; k < 4; ++k) a += t.vectors.value().at({n, k}) * w1.at({k, static_cast<std::int64_t>(j)});
            h[j] = a / (1 + std::exp(-a));
        }
        for (std::size_t c = 0; c < channels; ++c) {
            double a = b2[c];
            for (std::size_t j = 0; j < hidden; ++j) a += h[j] * w2.at({static_cast<std::int64_t>(j), static_cast<std::int64_t>(c)});
            const double gate = 1 / (1 + std::exp(-a));
            for (std::int64_t y = 0; y < 3; ++y)
                for (std::int64_t x = 0; x < 2; ++x) {
                    const auto ci = static_cast<std::int64_t>(c);
                    err = std::max(err, std::abs(out.at({n, ci, y, x}) - gate * f.at({n, ci, y, x})));
                }
        }
    }
    CHECK(err < 1e-14);

    const enc::GlobalEmbedding wrong{t.vectors, enc::Modality::visual};
    CHECK_THROWS_AS(se(ag::constant(f), wrong), DataError);
    CHECK_THROWS_AS(se(ag::constant(Tensor({2, 5, 3, 2})), t), ShapeError);
}

TEST_CASE("sic decoder restores the input resolution") {
    PlipFixture fx;
    auto pred = fx.model.sic_prediction(fx.batch.gray, fx.batch.captions).value();
    CHECK(pred.shape() == Shape{6, 3, 16, 8});
    for (double v : pred.values()) CHECK((v > 0 && v < 1));
}

TEST_CASE("with gates frozen open the colorization ignores the caption") {
    PlipFixture fx;
    fx.model.sic().se().set_gate_override(1.0);
    auto other = fx.batch.captions;
    std::rotate(other.begin(), other.begin() + 1, other.end());
    const Tensor a = fx.model.sic_prediction(fx.batch.gray, fx.batch.captions).value();
    const Tensor b = fx.model.sic_prediction(fx.batch.gray, other).value();
    CHECK(a == b);
    fx.model.sic().se().set_gate_override(std::nullopt);
    CHECK(a != fx.model.sic_prediction(fx.batch.gray, other).value());
}

TEST_CASE("combined loss arithmetic") {
    const auto c = [](double v) { return ag::constant(Tensor::scalar(v)); };
    CHECK(pt::combine_losses(c(1), c(2), c(3), {}).item() == 6.0);
    CHECK(pt::combine_losses(c(1), c(2), c(3), {1, 0, 0, 1e-8}).item() == 1.0);
    CHECK(pt::combine_losses(c(1), c(2), c(3), {1, 0.5, 2, 1e-8}).item() == 8.0);
    CHECK(pt::combine_losses(c(1), ag::Var{}, c(3), {}).item() == 4.0);
    CHECK(pt::combine_losses(ag::Var{}, ag::Var{}, ag::Var{}, {}).item() == 0.0);
}

TEST_CASE("total loss breakdown on a model batch") {
    PlipFixture fx;
    auto all = fx.model.loss(fx.batch, true);
    CHECK(all.vlm >= -10 * 1e-8 * 6);
    CHECK(all.sic >= 0);
    CHECK(all.vap >= 0);
    CHECK(all.masked_tokens > 0);
    CHECK(all.total_value == doctest::Approx(all.vlm + all.sic + all.vap).epsilon(1e-12));

    fx.model.set_weights({1, 0, 0, 1e-8});
    auto only = fx.model.loss(fx.batch);
    CHECK(only.total_value == doctest::Approx(all.vlm).epsilon(1e-12));
    CHECK(only.sic == 0.0);
    CHECK(only.vap == 0.0);

    fx.model.set_weights({1, 0.5, 2, 1e-8});
    CHECK(fx.model.loss(fx.batch).total_value == doctest::Approx(all.vlm + 0.5 * all.sic + 2 * all.vap).epsilon(1e-12));
}

TEST_CASE("gradient of the total is the weighted sum of task gradients") {
    PlipFixture fx;
    const pt::LossWeights w{1, 0.5, 2, 1e-8};
    fx.model.set_weights(w);
    auto& store = fx.model.params();
    const auto total = grads_of(store, fx.model.loss(fx.batch).total);
    const auto parts = fx.model.loss(fx.batch, true);
    fx.model.set_weights({1, 0, 0, 1e-8});
    const auto g_vlm = grads_of(store, fx.model.loss(fx.batch).total);
    fx.model.set_weights({0, 1, 0, 1e-8});
    const auto g_sic = grads_of(store, fx.model.loss(fx.batch).total);
    fx.model.set_weights({0, 0, 1, 1e-8});
    const auto g_vap = grads_of(store, fx.model.loss(fx.batch).total);
    double err = 0;
    for (std::size_t p = 0; p < total.size(); ++p)
        for (std::size_t i = 0; i < total[p].size(); ++i) {
            const double expect = g_vlm[p][i] + w.lambda1 * g_sic[p][i] + w.lambda2 * g_vap[p][i];
            err = std::max(err, std::abs(total[p][i] - expect) / std::max(1.0, std::abs(expect)));
        }
    CHECK(err < 1e-12);
    CHECK(parts.total_value > 0);
}

TEST_CASE("every loss passes a finite-difference gradient check") {
    PlipFixture fx;
    auto& store = fx.model.params();
    auto check = [&](const char* what, const pt::LossWeights& w) {
        fx.model.set_weights(w);
        auto probes = plip::testing::gradient_probes(store, [&] { return fx.model.loss(fx.batch).total; }, 10, 21);
        INFO(std::string(what));
        CHECK(probes.size() == 10);
        CHECK(plip::testing::worst(probes) < 1e-4);
    };
    check("vlm", {1, 0, 0, 1e-8});
    check("sic", {0, 1, 0, 1e-8});
    check("vap", {0, 0, 1, 1e-8});
    check("total", {1, 1, 1, 1e-8});
}

TEST_CASE("vap head width and the concatenation switch") {
    for (bool concat : {false, true}) {
        auto cfg = plip::testing::toy_plip(40);
        cfg.vap_concat = concat;
        nn::ParamStore store;
        nn::Rng rng(1);
        pt::VapHead head(store, "vap", 8, 40, concat, rng);
        std::mt19937_64 g(2);
        auto logits = head(ag::constant(random_tensor({3, 8}, g)), ag::constant(random_tensor({3, 8}, g)));
        CHECK(logits.shape() == Shape{3, 40});
        CHECK(store.get("vap.transform.weight").dim(0) == (concat ? 16 : 8));
        CHECK_THROWS_AS(head(ag::constant(Tensor({3, 8})), ag::constant(Tensor({2, 8}))), ShapeError);
    }
}

TEST_CASE("loss weight and model config validation") {
    CHECK_NOTHROW(pt::LossWeights{}.validate());
    CHECK_THROWS_AS((pt::LossWeights{1, -1, 1, 1e-8}.validate()), ConfigError);
    CHECK_THROWS_AS((pt::LossWeights{1, 1, -0.1, 1e-8}.validate()), ConfigError);
    CHECK_THROWS_AS((pt::LossWeights{1, 1, 1, 0}.validate()), ConfigError);
    CHECK_THROWS_AS((pt::LossWeights{1, 1, 1, 1e-3}.validate()), ConfigError);
    auto cfg = plip::testing::toy_plip(30);
    cfg.mask_rate = 0;
    CHECK_THROWS_AS(pt::PlipModel(cfg, 1), ConfigError);
    cfg = plip::testing::toy_plip(30);
    cfg.sic_hidden = 6;
    CHECK_THROWS_AS(pt::PlipModel(cfg, 1), ConfigError);
}

TEST_CASE("backbone hash covers the encoders only") {
    PlipFixture fx;
    const auto h = fx.model.backbone_hash();
    fx.model.params().get("vap.out.bias").mutable_value()[0] += 1;
    CHECK(fx.model.backbone_hash() == h);
    fx.model.params().get("text.pooler.bias").mutable_value()[0] += 1;
    CHECK(fx.model.backbone_hash() != h);
}
