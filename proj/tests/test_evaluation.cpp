#include <doctest.h>

#include <set>

#include "support.hpp"

using namespace plip;
using plip::testing::random_tensor;

namespace {

Tensor matrix(std::int64_t m, std::int64_t n, std::vector<double> v) { return Tensor({m, n}, std::move(v)); }

std::set<std::int64_t> ids_of(const std::vector<data::PersonRecord>& recs) {
    std::set<std::int64_t> s;
    for (const auto& r : recs) s.insert(r.identity);
    return s;
}

struct EvalFixture {
    plip::testing::ToyData data;
    pt::PlipModel model;
    eval::EvalSet set;

    EvalFixture(std::int64_t ids, std::int64_t per_id, std::uint64_t seed)
        : data(plip::testing::toy_data(ids, per_id, seed)),
          model(plip::testing::toy_plip(data.vocab.size()), seed + 100),
          set{&data.records, &data.images} {}
};

}  // namespace

TEST_CASE("metrics equal the brute-force oracle on random instances") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const auto inst = plip::testing::random_metric_instance(rng);
        const auto n = inst.sim.dim(1);
        for (std::int64_t k : {std::int64_t{1}, std::int64_t{2}, std::int64_t{5}, std::int64_t{10}, n}) {
            CHECK(eval::rank_at_k(inst.sim, inst.qids, inst.gids, k) ==
                  plip::testing::brute_rank_at_k(inst.sim, inst.qids, inst.gids, k));
        }
        CHECK(eval::mean_ap(inst.sim, inst.qids, inst.gids) == plip::testing::brute_mean_ap(inst.sim, inst.qids, inst.gids));
    }
}

TEST_CASE("rank_at_k worked examples") {
    // identity similarity: every query's match comes first
    Tensor eye({4, 4});
    for (std::int64_t i = 0; i < 4; ++i) eye.at({i, i}) = 1;
    CHECK(eval::rank_at_k(eye, {0, 1, 2, 3}, {0, 1, 2, 3}, 1) == 1.0);

    // matches at ranks 1, 2 and 4 of a 5-item gallery
    const Tensor sim = matrix(3, 5, {0.9, 0.8, 0.7, 0.6, 0.5,  //
                                     0.9, 0.8, 0.7, 0.6, 0.5,  //
                                     0.9, 0.8, 0.7, 0.6, 0.5});
    const std::vector<std::int64_t> g{1, 2, 3, 4, 5};
    const std::vector<std::int64_t> q{1, 2, 4};
    CHECK(eval::rank_at_k(sim, q, g, 1) == doctest::Approx(1.0 / 3));
    CHECK(eval::rank_at_k(sim, q, g, 2) == doctest::Approx(2.0 / 3));
    CHECK(eval::rank_at_k(sim, q, g, 5) == 1.0);
    CHECK(eval::rank_at_k(sim, q, g, 50) == 1.0);

    // ties go to the lower gallery index
    const Tensor flat = matrix(1, 3, {0.5, 0.5, 0.5});
    CHECK(eval::rank_at_k(flat, {7}, {1, 7, 7}, 1) == 0.0);
    CHECK(eval::rank_at_k(flat, {1}, {1, 7, 7}, 1) == 1.0);
    CHECK(eval::ranking(flat, 0) == std::vector<std::size_t>{0, 1, 2});

    // a query without any match counts as a miss
    CHECK(eval::rank_at_k(eye, {0, 9, 2, 3}, {0, 1, 2, 3}, 4) == 0.75);
}

TEST_CASE("mean_ap worked examples") {
    const Tensor sim = matrix(1, 3, {0.9, 0.5, 0.1});
    CHECK(eval::mean_ap(sim, {3}, {3, 4, 3}) == doctest::Approx((1 + 2.0 / 3) / 2).epsilon(1e-12));
    CHECK(eval::mean_ap(sim, {3}, {3, 3, 4}) == 1.0);
    CHECK(eval::mean_ap(matrix(1, 1, {0.2}), {5}, {5}) == 1.0);
    CHECK(eval::mean_ap(matrix(2, 2, {0.1, 0.9, 0.9, 0.1}), {0, 1}, {0, 1}) == doctest::Approx(0.5));
}

TEST_CASE("metric input errors") {
    const Tensor sim = matrix(2, 2, {1, 0, 0, 1});
    CHECK_THROWS_AS(eval::rank_at_k(sim, {0, 1}, {0, 1}, 0), ConfigError);
    CHECK_THROWS_AS(eval::rank_at_k(Tensor({2, 0}), {0, 1}, {}, 1), DataError);
    CHECK_THROWS_AS(eval::rank_at_k(sim, {0}, {0, 1}, 1), ShapeError);
    CHECK_THROWS_WITH_AS(eval::mean_ap(matrix(4, 2, {1, 0, 0, 1, 1, 0, 0, 1}), {0, 5, 1, 6}, {0, 1}),
                         "mean_ap: queries without a gallery match: 1,3", DataError);

    eval::RetrievalIndex idx;
    idx.gallery = Tensor({0, 3});
    idx.queries = Tensor({1, 3}, 1.0);
    idx.query_ids = {0};
    CHECK_THROWS_AS(eval::rank_at_k(idx, 1), DataError);
    CHECK_THROWS_AS(eval::cosine_similarity(Tensor({1, 2}, 1.0), Tensor({2, 2})), NumericError);
    CHECK_THROWS_AS(eval::cosine_similarity(Tensor({1, 2}, 1.0), Tensor({2, 3}, 1.0)), ShapeError);
}

TEST_CASE("metrics ignore gallery order and grow with k") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const std::int64_t m = 6, n = 12;
        eval::RetrievalIndex idx;
        idx.gallery = random_tensor({n, 4}, rng);
        idx.queries = random_tensor({m, 4}, rng);
        for (std::int64_t j = 0; j < n; ++j) idx.gallery_ids.push_back(j % 4);
        for (std::int64_t i = 0; i < m; ++i) idx.query_ids.push_back(i % 4);

        auto perm = plip::testing::iota(n);
        std::shuffle(perm.begin(), perm.end(), rng);
        eval::RetrievalIndex shuffled = idx;
        for (std::int64_t j = 0; j < n; ++j) {
            const auto src = static_cast<std::int64_t>(perm[static_cast<std::size_t>(j)]);
            for (std::int64_t k = 0; k < 4; ++k) shuffled.gallery.at({j, k}) = idx.gallery.at({src, k});
            shuffled.gallery_ids[static_cast<std::size_t>(j)] = idx.gallery_ids[static_cast<std::size_t>(src)];
        }
        double prev = 0;
        for (std::int64_t k = 1; k <= n; ++k) {
            const double r = eval::rank_at_k(idx, k);
            CHECK(r == eval::rank_at_k(shuffled, k));
            CHECK(r >= prev);
            prev = r;
        }
        CHECK(prev == 1.0);
        CHECK(eval::mean_ap(idx) == doctest::Approx(eval::mean_ap(shuffled)).epsilon(1e-12));
    }
}

TEST_CASE("cosine similarity ignores row scale") {
    std::mt19937_64 rng(8);
    const Tensor q = random_tensor({3, 5}, rng), g = random_tensor({4, 5}, rng);
    Tensor q2 = q;
    for (std::int64_t j = 0; j < 5; ++j) q2.at({1, j}) *= 7.5;
    const Tensor a = eval::cosine_similarity(q, g), b = eval::cosine_similarity(q2, g);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    for (double v : a.values()) CHECK((v >= -1 && v <= 1));
    CHECK(eval::cosine_similarity(q, q).at({2, 2}) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("metrics report json round trip") {
    eval::MetricsReport r;
    r.protocol = "few-shot:30%";
    r.r1 = 0.25;
    r.r5 = 0.5;
    r.map = 1.0 / 3;
    r.cmc1 = 0.1;
    r.attr_groups["gender"] = 0.125;
    r.seed = 9;
    r.config_hash = "00ff";
    r.queries = 4;
    r.gallery = 12;
    const auto j = r.to_json();
    CHECK(j["r10"].is_null());
    CHECK(eval::MetricsReport::from_json(j) == r);
    CHECK(eval::MetricsReport::from_json(nlohmann::json::parse(j.dump())) == r);
}

TEST_CASE("few-shot splits keep whole identities") {
    const auto recs = data::synth_manifest(10, 3, 4);
    CHECK(eval::few_shot_split(recs, 0, 1).empty());
    CHECK(eval::few_shot_split(recs, 100, 1) == recs);

    const auto half = eval::few_shot_split(recs, 50, 1);
    CHECK(ids_of(half).size() == 5);
    CHECK(half.size() == 15);
    CHECK(eval::few_shot_split(recs, 50, 1) == half);
    CHECK(ids_of(eval::few_shot_split(recs, 50, 2)) != ids_of(half));
    CHECK(ids_of(eval::few_shot_split(recs, 30, 1)).size() == 3);
    CHECK(ids_of(eval::few_shot_split(recs, 31, 1)).size() == 4);
    CHECK(ids_of(eval::few_shot_split(recs, 1, 1)).size() == 1);

    // record order is preserved
    std::size_t cursor = 0;
    for (const auto& r : half) {
        while (!(recs[cursor] == r)) ++cursor;
        ++cursor;
    }
    CHECK(cursor <= recs.size());
    CHECK_THROWS_AS(eval::few_shot_split(recs, 101, 1), ConfigError);
    CHECK_THROWS_AS(eval::few_shot_split(recs, -1, 1), ConfigError);
}

TEST_CASE("identity splits are disjoint and sized") {
    const auto recs = data::synth_manifest(20, 2, 4);
    const auto [tr, te] = eval::split_identities(recs, 0.3, 5);
    CHECK(ids_of(te).size() == 6);
    CHECK(ids_of(tr).size() == 14);
    CHECK(tr.size() + te.size() == recs.size());
    for (auto id : ids_of(te)) CHECK(ids_of(tr).count(id) == 0);
    CHECK(eval::split_identities(recs, 0.3, 5).second == te);
    CHECK(eval::split_identities(recs, 0.01, 5).second.size() == 2);
    CHECK_THROWS_AS(eval::split_identities(recs, 1.0, 5), ConfigError);
    CHECK_THROWS_AS(eval::split_identities(data::synth_manifest(1, 3, 4), 0.5, 5), DataError);
}

TEST_CASE("zero-shot retrieval is deterministic and well formed") {
    EvalFixture fx(6, 3, 2);
    const auto a = eval::zero_shot_retrieval(fx.model, fx.data.vocab, fx.set);
    const auto b = eval::zero_shot_retrieval(fx.model, fx.data.vocab, fx.set);
    CHECK(a == b);
    CHECK(a.protocol == "zero-shot");
    CHECK(a.gallery == 18);
    CHECK(a.queries == static_cast<std::int64_t>(18 * fx.data.records[0].captions.size()));
    for (const auto& v : {a.r1, a.r5, a.r10, a.map, a.cmc1, a.cmc5, a.cmc10, a.i2i_map}) {
        REQUIRE(v.has_value());
        CHECK((*v >= 0 && *v <= 1));
    }
    CHECK(*a.r1 <= *a.r5);
    CHECK(*a.r5 <= *a.r10);
    CHECK(a.config_hash.size() == 16);
}

TEST_CASE("random weights retrieve at chance level") {
    // mean over several untrained models; binomial noise on the pooled queries
    double hits = 0, queries = 0;
    const std::int64_t ids = 12;
    for (std::uint64_t s = 0; s < 6; ++s) {
        EvalFixture fx(ids, 2, 30 + s);
        const auto r = eval::zero_shot_retrieval(fx.model, fx.data.vocab, fx.set);
        hits += *r.r1 * static_cast<double>(r.queries);
        queries += static_cast<double>(r.queries);
    }
    const double p = 1.0 / static_cast<double>(ids);
    const double rate = hits / queries;
    const double sigma = std::sqrt(p * (1 - p) / queries);
    MESSAGE("chance R@1 " << rate << " expected " << p << " sigma " << sigma);
    CHECK(std::abs(rate - p) < 5 * sigma + 0.03);
}

TEST_CASE("linear probe trains only the probe") {
    EvalFixture fx(6, 2, 3);
    const auto backbone = fx.model.backbone_hash();
    const auto all = fx.model.params().hash();
    eval::ProbeConfig pc;
    pc.steps = 0;
    const auto none = eval::linear_probe(fx.model, fx.data.vocab, fx.set, fx.set, pc);
    auto zs = eval::zero_shot_retrieval(fx.model, fx.data.vocab, fx.set);
    CHECK(none.protocol == "linear-probe");
    zs.protocol = none.protocol;
    CHECK(zs == none);

    pc.steps = 150;
    eval::Probe trained(8);
    const auto probed = eval::linear_probe(fx.model, fx.data.vocab, fx.set, fx.set, pc, &trained);
    CHECK(fx.model.backbone_hash() == backbone);
    CHECK(fx.model.params().hash() == all);
    CHECK(trained.store.hash() != eval::Probe(8).store.hash());
    MESSAGE("probe R@1 " << *none.r1 << " -> " << *probed.r1);
    CHECK(*probed.r1 > *none.r1);
    CHECK(*probed.map > *none.map);

    pc.batch_size = 1;
    CHECK_THROWS_AS(eval::linear_probe(fx.model, fx.data.vocab, fx.set, fx.set, pc), ConfigError);
}

TEST_CASE("fine-tune with zero epochs equals zero-shot") {
    EvalFixture fx(4, 2, 4);
    const auto zs = eval::zero_shot_retrieval(fx.model, fx.data.vocab, fx.set);
    train::TrainConfig tc;
    tc.epochs = 0;
    tc.batch_size = 4;
    auto ft = eval::finetune_eval(fx.model, fx.data.vocab, fx.set, fx.set, tc);
    CHECK(ft.protocol == "fine-tune");
    ft.protocol = zs.protocol;
    CHECK(ft == zs);
    CHECK(fx.model.config().weights.lambda1 == 0);
    CHECK(fx.model.config().weights.lambda2 == 0);

    tc.epochs = 2;
    tc.base_lr = 0.01;
    EvalFixture a(4, 2, 4), b(4, 2, 4);
    CHECK(eval::finetune_eval(a.model, a.data.vocab, a.set, a.set, tc) ==
          eval::finetune_eval(b.model, b.data.vocab, b.set, b.set, tc));
}

TEST_CASE("attribute metrics on a hand example") {
    eval::AttributeSentenceBank bank;
    bank.groups.push_back({"g", "slot", {{"a", "an a", "a"}, {"b", "a b", "b"}}});
    eval::AttributePredictions p;
    p.truth = {{0, 0, 1, -1}};
    p.predicted = {{0, 1, 1, 0}};
    const auto r = eval::attribute_metrics(bank, p);
    CHECK(r.attr_groups.at("g") == 0.5);
    CHECK(*r.attr_ma == doctest::Approx((0.5 + (1 + 2.0 / 3) / 2) / 2).epsilon(1e-12));
    CHECK(*r.attr_acc == doctest::Approx(0.5));
    CHECK(*r.attr_f1 == doctest::Approx(2 * 0.5 * 0.75 / 1.25).epsilon(1e-12));

    p.truth = {{0, 1}};
    p.predicted = {{0, 1, 1}};
    CHECK_THROWS_AS(eval::attribute_metrics(bank, p), ShapeError);
}

TEST_CASE("attribute prediction picks the closest sentence") {
    std::mt19937_64 rng(9);
    const Tensor imgs = random_tensor({5, 6}, rng);
    Tensor sentences = random_tensor({4, 6}, rng);
    for (std::int64_t k = 0; k < 6; ++k) sentences.at({2, k}) = imgs.at({3, k});
    const auto pred = eval::predict_group(imgs, sentences);
    CHECK(pred[3] == 2);

    Tensor scaled = imgs;
    for (std::int64_t i = 0; i < 5; ++i)
        for (std::int64_t k = 0; k < 6; ++k) scaled.at({i, k}) *= 0.1 + static_cast<double>(i);
    CHECK(eval::predict_group(scaled, sentences) == pred);

    // a single candidate is always chosen
    const auto one = eval::predict_group(imgs, random_tensor({1, 6}, rng));
    CHECK(one == std::vector<std::int64_t>(5, 0));
    CHECK_THROWS_AS(eval::predict_group(imgs, Tensor({0, 6})), DataError);
}

TEST_CASE("forced single choice scores the ground-truth frequency") {
    EvalFixture fx(6, 2, 5);
    eval::AttributeSentenceBank bank;
    bank.groups.push_back({"only-man", data::SlotSchema{}.names()[0], {{"man", "A photo of a man.", "man"}}});
    const auto r = eval::zero_shot_attributes(fx.model, fx.data.vocab, fx.set, bank);
    double men = 0;
    for (const auto& rec : fx.data.records) men += eval::ground_truth(bank.groups[0], rec) == 0;
    CHECK(r.attr_groups.at("only-man") == doctest::Approx(men / static_cast<double>(fx.data.records.size())));
}

TEST_CASE("default attribute bank") {
    const auto bank = eval::default_attribute_bank();
    CHECK_NOTHROW(bank.validate());
    CHECK(bank.groups.size() == 7);
    const auto back = eval::AttributeSentenceBank::from_json(bank.to_json());
    CHECK(back.to_json() == bank.to_json());

    // every synthetic record has a ground truth in every group
    const auto recs = data::synth_manifest(8, 2, 3);
    for (const auto& g : bank.groups)
        for (const auto& r : recs) CHECK(eval::ground_truth(g, r) >= 0);

    CHECK_THROWS_AS(eval::AttributeSentenceBank::from_json(nlohmann::json::parse(R"({"groups":[{"name":"x"}]})")),
                    ConfigError);
    CHECK_THROWS_AS(eval::AttributeSentenceBank::from_json(
                        nlohmann::json::parse(R"({"groups":[{"name":"x","slot":"s","candidates":[]}]})")),
                    ConfigError);
}

TEST_CASE("ground truth matches whole tokens") {
    eval::AttributeGroup g{"upper-type", "upper", {{"t-shirt", "s", "t-shirt"}, {"shirt", "s", "shirt"}}};
    data::PersonRecord rec;
    rec.attributes.set(data::SlotSchema{}.names()[2], "a red t-shirt");
    g.slot = data::SlotSchema{}.names()[2];
    CHECK(eval::ground_truth(g, rec) == 0);
    rec.attributes.set(g.slot, "a blue shirt");
    CHECK(eval::ground_truth(g, rec) == 1);
    rec.attributes.set(g.slot, "a blue shirtless top");
    CHECK(eval::ground_truth(g, rec) == -1);
}

TEST_CASE("zero-shot attributes report every group") {
    EvalFixture fx(6, 2, 6);
    const auto bank = eval::default_attribute_bank();
    const auto r = eval::zero_shot_attributes(fx.model, fx.data.vocab, fx.set, bank);
    CHECK(r.attr_groups.size() == 7);
    for (const auto& [_, v] : r.attr_groups) CHECK((v >= 0 && v <= 1));
    CHECK((*r.attr_ma >= 0 && *r.attr_ma <= 1));
    CHECK(r == eval::zero_shot_attributes(fx.model, fx.data.vocab, fx.set, bank));
}

TEST_CASE("task sets") {
    CHECK(eval::TaskSet::parse("vlm,sic").name() == "vlm+sic");
    CHECK(eval::TaskSet::parse("vap+vlm").name() == "vlm+vap");
    CHECK_THROWS_AS(eval::TaskSet::parse("vlm,mlm"), ConfigError);
    CHECK_THROWS_AS(eval::TaskSet::parse(""), ConfigError);
    const auto w = eval::TaskSet::parse("vlm").weights(0.5, 2, 1e-8);
    CHECK(w.vlm == 1);
    CHECK(w.lambda1 == 0);
    CHECK(w.lambda2 == 0);
    const auto all = eval::TaskSet::parse("vlm,sic,vap").weights(0.5, 2, 1e-8);
    CHECK(all.lambda1 == 0.5);
    CHECK(all.lambda2 == 2);

    std::set<std::string> names;
    for (const auto& t : eval::all_task_subsets()) names.insert(t.name());
    CHECK(names.size() == 7);
    CHECK(eval::all_task_subsets().front().name() == "vlm");
    CHECK(eval::all_task_subsets().back().name() == "vlm+sic+vap");
}

TEST_CASE("seed summaries use the sample deviation") {
    const auto s = eval::summarize({1, 2, 3, 4});
    CHECK(s.mean == 2.5);
    CHECK(s.std == doctest::Approx(std::sqrt(5.0 / 3)).epsilon(1e-14));
    CHECK(eval::summarize({0.3}).std == 0);
    CHECK(eval::summarize({}).mean == 0);
}

TEST_CASE("a small ablation table") {
    auto d = plip::testing::toy_data(8, 2, 7);
    eval::AblationConfig cfg;
    cfg.subsets = {eval::TaskSet::parse("vlm"), eval::TaskSet::parse("sic,vap")};
    cfg.seeds = {0, 1};
    cfg.test_fraction = 0.5;
    cfg.model = plip::testing::toy_plip(d.vocab.size());
    cfg.train.epochs = 1;
    cfg.train.batch_size = 4;
    cfg.train.base_lr = 0.01;
    std::vector<std::string> progress;
    const auto t = eval::ablation_run(d.records, d.images, d.vocab, cfg, [&](const std::string& s) { progress.push_back(s); });
    REQUIRE(t.rows.size() == 2);
    CHECK(progress.size() == 4);
    const auto* vlm = t.find("vlm");
    const auto* pre = t.find("sic+vap");
    REQUIRE(vlm);
    REQUIRE(pre);
    CHECK(vlm->runs.size() == 2);
    CHECK(vlm->summary.count("r1") == 1);
    CHECK(pre->summary.count("r1") == 0);
    CHECK(pre->summary.count("cmc1") == 1);
    CHECK_FALSE(pre->runs[0].r1.has_value());
    std::vector<double> r1s{*vlm->runs[0].r1, *vlm->runs[1].r1};
    CHECK(vlm->summary.at("r1").mean == eval::summarize(r1s).mean);
    CHECK(vlm->summary.at("r1").std == eval::summarize(r1s).std);
    CHECK(t.render().find("sic+vap        | -") != std::string::npos);
    CHECK(t.to_json()["rows"].size() == 2);
    CHECK(t.find("vap") == nullptr);

    // rerunning gives the same table
    CHECK(eval::ablation_run(d.records, d.images, d.vocab, cfg).to_json() == t.to_json());
}
