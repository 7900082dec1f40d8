#include "plip/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "plip/synthetic.hpp"

namespace plip::eval {

void RetrievalIndex::validate() const {
    if (gallery.rank() != 2 || queries.rank() != 2) throw ShapeError("retrieval index expects 2-D embeddings");
    if (gallery.dim(0) == 0) throw DataError("retrieval gallery is empty");
    if (gallery.dim(1) != queries.dim(1)) throw ShapeError("query and gallery embedding widths differ");
    if (static_cast<std::int64_t>(gallery_ids.size()) != gallery.dim(0) ||
        static_cast<std::int64_t>(query_ids.size()) != queries.dim(0))
        throw ShapeError("retrieval ids do not match the embedding rows");
    for (auto id : gallery_ids)
        if (id < 0) throw DataError("negative gallery id");
    for (auto id : query_ids)
        if (id < 0) throw DataError("negative query id");
}

Tensor cosine_similarity(const Tensor& queries, const Tensor& gallery) {
    if (queries.rank() != 2 || gallery.rank() != 2 || queries.dim(1) != gallery.dim(1))
        throw ShapeError("cosine_similarity: incompatible shapes " + shape_string(queries.shape()) + " and " +
                         shape_string(gallery.shape()));
    const auto m = queries.dim(0), n = gallery.dim(0), d = queries.dim(1);
    auto norms = [d](const Tensor& x) {
        std::vector<double> out(static_cast<std::size_t>(x.dim(0)));
        for (std::int64_t i = 0; i < x.dim(0); ++i) {
            double s = 0;
            for (std::int64_t k = 0; k < d; ++k) s += x[static_cast<std::size_t>(i * d + k)] * x[static_cast<std::size_t>(i * d + k)];
            if (s == 0) throw NumericError("cosine_similarity: zero-norm embedding row " + std::to_string(i));
            out[static_cast<std::size_t>(i)] = std::sqrt(s);
        }
        return out;
    };
    const auto qn = norms(queries), gn = norms(gallery);
    Tensor sim({m, n});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::int64_t k = 0; k < d; ++k)
                s += queries[static_cast<std::size_t>(i * d + k)] * gallery[static_cast<std::size_t>(j * d + k)];
            sim[static_cast<std::size_t>(i * n + j)] = s / (qn[static_cast<std::size_t>(i)] * gn[static_cast<std::size_t>(j)]);
        }
    return sim;
}

std::vector<std::size_t> ranking(const Tensor& sim, std::size_t query) {
    const auto n = static_cast<std::size_t>(sim.dim(1));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const double* row = sim.data() + query * n;
    std::stable_sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    return order;
}

namespace {

void check_sim(const Tensor& sim, const std::vector<std::int64_t>& qids, const std::vector<std::int64_t>& gids) {
    if (sim.rank() != 2) throw ShapeError("similarity matrix must be 2-D");
    if (sim.dim(1) == 0 || gids.empty()) throw DataError("retrieval gallery is empty");
    if (static_cast<std::int64_t>(qids.size()) != sim.dim(0) || static_cast<std::int64_t>(gids.size()) != sim.dim(1))
        throw ShapeError("retrieval ids do not match the similarity matrix");
}

}  // namespace

double rank_at_k(const Tensor& sim, const std::vector<std::int64_t>& qids, const std::vector<std::int64_t>& gids,
                 std::int64_t k) {
    if (k < 1) throw ConfigError("rank_at_k needs k >= 1");
    check_sim(sim, qids, gids);
    if (qids.empty()) throw DataError("retrieval has no queries");
    std::size_t hits = 0;
    for (std::size_t q = 0; q < qids.size(); ++q) {
        const auto order = ranking(sim, q);
        const auto top = std::min(order.size(), static_cast<std::size_t>(k));
        for (std::size_t r = 0; r < top; ++r)
            if (gids[order[r]] == qids[q]) {
                ++hits;
                break;
            }
    }
    return static_cast<double>(hits) / static_cast<double>(qids.size());
}

double mean_ap(const Tensor& sim, const std::vector<std::int64_t>& qids, const std::vector<std::int64_t>& gids) {
    check_sim(sim, qids, gids);
    if (qids.empty()) throw DataError("retrieval has no queries");
    std::vector<std::size_t> matchless;
    double total = 0;
    for (std::size_t q = 0; q < qids.size(); ++q) {
        const auto order = ranking(sim, q);
        double ap = 0;
        std::size_t found = 0;
        for (std::size_t r = 0; r < order.size(); ++r)
            if (gids[order[r]] == qids[q]) {
                ++found;
                ap += static_cast<double>(found) / static_cast<double>(r + 1);
            }
        if (found == 0) {
            matchless.push_back(q);
            continue;
        }
        total += ap / static_cast<double>(found);
    }
    if (!matchless.empty()) {
        std::string list;
        for (std::size_t i = 0; i < matchless.size(); ++i) list += (i ? "," : "") + std::to_string(matchless[i]);
        throw DataError("mean_ap: queries without a gallery match: " + list);
    }
    return total / static_cast<double>(qids.size());
}

double rank_at_k(const RetrievalIndex& index, std::int64_t k) {
    index.validate();
    return rank_at_k(cosine_similarity(index.queries, index.gallery), index.query_ids, index.gallery_ids, k);
}

double mean_ap(const RetrievalIndex& index) {
    index.validate();
    return mean_ap(cosine_similarity(index.queries, index.gallery), index.query_ids, index.gallery_ids);
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j;
    j["protocol"] = protocol;
    auto opt = [&j](const char* key, const std::optional<double>& v) { j[key] = v ? nlohmann::json(*v) : nlohmann::json(); };
    opt("r1", r1);
    opt("r5", r5);
    opt("r10", r10);
    opt("map", map);
    opt("cmc1", cmc1);
    opt("cmc5", cmc5);
    opt("cmc10", cmc10);
    opt("i2i_map", i2i_map);
    opt("attr_ma", attr_ma);
    opt("attr_acc", attr_acc);
    opt("attr_f1", attr_f1);
    j["attr_groups"] = attr_groups;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    j["queries"] = queries;
    j["gallery"] = gallery;
    return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.protocol = j.at("protocol").get<std::string>();
    auto opt = [&j](const char* key) -> std::optional<double> {
        if (!j.contains(key) || j[key].is_null()) return std::nullopt;
        return j[key].get<double>();
    };
    r.r1 = opt("r1");
    r.r5 = opt("r5");
    r.r10 = opt("r10");
    r.map = opt("map");
    r.cmc1 = opt("cmc1");
    r.cmc5 = opt("cmc5");
    r.cmc10 = opt("cmc10");
    r.i2i_map = opt("i2i_map");
    r.attr_ma = opt("attr_ma");
    r.attr_acc = opt("attr_acc");
    r.attr_f1 = opt("attr_f1");
    r.attr_groups = j.value("attr_groups", std::map<std::string, double>{});
    r.seed = j.value("seed", std::uint64_t{0});
    r.config_hash = j.value("config_hash", std::string{});
    r.queries = j.value("queries", std::int64_t{0});
    r.gallery = j.value("gallery", std::int64_t{0});
    return r;
}

Probe::Probe(std::int64_t dim) {
    nn::Rng rng(0);
    visual = nn::Linear(store, "probe.visual", dim, dim, rng);
    textual = nn::Linear(store, "probe.textual", dim, dim, rng);
    for (auto* l : {&visual, &textual}) {
        auto& w = l->weight.mutable_value();
        w.fill(0.0);
        for (std::int64_t i = 0; i < dim; ++i) w.at({i, i}) = 1.0;
    }
}

Tensor Probe::apply_visual(const Tensor& x) const {
    ag::NoGradGuard g;
    return visual(ag::constant(x)).value();
}

Tensor Probe::apply_textual(const Tensor& x) const {
    ag::NoGradGuard g;
    return textual(ag::constant(x)).value();
}

namespace {

struct Embedded {
    Tensor images;
    std::vector<std::int64_t> image_ids;
    Tensor captions;
    std::vector<std::int64_t> caption_ids;
    std::vector<std::size_t> caption_record;  // record index of each caption
};

Embedded embed_set(const pt::PlipModel& model, const data::Vocabulary& vocab, const EvalSet& set) {
    if (!set.records || !set.images || set.records->size() != set.images->size())
        throw DataError("evaluation set needs one image per record");
    if (set.records->empty()) throw DataError("evaluation manifest is empty");
    if (vocab.size() != model.config().encoder.vocab_size) throw ConfigError("vocabulary size does not match the model");
    Embedded e;
    e.images = model.embed_images(enc::stack_images(*set.images));
    std::vector<data::TokenSequence> seqs;
    const auto max_len = static_cast<std::size_t>(model.config().encoder.max_caption_len);
    for (std::size_t i = 0; i < set.records->size(); ++i) {
        const auto& r = (*set.records)[i];
        e.image_ids.push_back(r.identity);
        for (const auto& c : r.captions) {
            seqs.push_back(vocab.encode_framed(c.text, max_len));
            e.caption_ids.push_back(r.identity);
            e.caption_record.push_back(i);
        }
    }
    e.captions = model.embed_texts(seqs);
    return e;
}

Tensor select_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    const auto d = x.dim(1);
    Tensor out({static_cast<std::int64_t>(rows.size()), d});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(x.data() + rows[i] * static_cast<std::size_t>(d), d, out.data() + i * static_cast<std::size_t>(d));
    return out;
}

MetricsReport metrics_from_embeddings(const Embedded& e, const std::string& protocol) {
    MetricsReport r;
    r.protocol = protocol;
    const Tensor t2i = cosine_similarity(e.captions, e.images);
    r.r1 = rank_at_k(t2i, e.caption_ids, e.image_ids, 1);
    r.r5 = rank_at_k(t2i, e.caption_ids, e.image_ids, 5);
    r.r10 = rank_at_k(t2i, e.caption_ids, e.image_ids, 10);
    r.map = mean_ap(t2i, e.caption_ids, e.image_ids);
    r.queries = static_cast<std::int64_t>(e.caption_ids.size());
    r.gallery = static_cast<std::int64_t>(e.image_ids.size());

    // image -> image: first image of every identity queries the rest
    std::set<std::int64_t> seen;
    std::vector<std::size_t> q, g;
    for (std::size_t i = 0; i < e.image_ids.size(); ++i) (seen.insert(e.image_ids[i]).second ? q : g).push_back(i);
    std::set<std::int64_t> gallery_ids;
    for (auto i : g) gallery_ids.insert(e.image_ids[i]);
    std::vector<std::size_t> q_kept;
    for (auto i : q)
        if (gallery_ids.count(e.image_ids[i])) q_kept.push_back(i);
    if (!q_kept.empty()) {
        std::vector<std::int64_t> qids, gids;
        for (auto i : q_kept) qids.push_back(e.image_ids[i]);
        for (auto i : g) gids.push_back(e.image_ids[i]);
        const Tensor sim = cosine_similarity(select_rows(e.images, q_kept), select_rows(e.images, g));
        r.cmc1 = rank_at_k(sim, qids, gids, 1);
        r.cmc5 = rank_at_k(sim, qids, gids, 5);
        r.cmc10 = rank_at_k(sim, qids, gids, 10);
        r.i2i_map = mean_ap(sim, qids, gids);
    }
    return r;
}

}  // namespace

MetricsReport evaluate_retrieval(const pt::PlipModel& model, const data::Vocabulary& vocab, const EvalSet& set,
                                 const std::string& protocol, const Probe* probe) {
    Embedded e = embed_set(model, vocab, set);
    if (probe) {
        e.images = probe->apply_visual(e.images);
        e.captions = probe->apply_textual(e.captions);
    }
    auto r = metrics_from_embeddings(e, protocol);
    r.config_hash = ckpt::hash_hex(ckpt::config_hash(model.config().canonical()));
    return r;
}

MetricsReport zero_shot_retrieval(const pt::PlipModel& model, const data::Vocabulary& vocab, const EvalSet& test) {
    return evaluate_retrieval(model, vocab, test, "zero-shot");
}

MetricsReport linear_probe(const pt::PlipModel& model, const data::Vocabulary& vocab, const EvalSet& train,
                           const EvalSet& test, const ProbeConfig& cfg, Probe* probe_out) {
    if (cfg.steps < 0 || cfg.batch_size < 2 || !(cfg.lr > 0)) throw ConfigError("invalid linear probe configuration");
    const Embedded e = embed_set(model, vocab, train);
    Probe probe(model.config().encoder.embed_dim);
    train::TrainConfig tc;
    tc.base_lr = cfg.lr;
    tc.momentum = cfg.momentum;
    tc.batch_size = cfg.batch_size;
    train::Optimizer opt(tc, probe.store);
    const auto& recs = *train.records;
    std::vector<std::vector<std::size_t>> captions_of(recs.size());
    for (std::size_t c = 0; c < e.caption_record.size(); ++c) captions_of[e.caption_record[c]].push_back(c);

    std::vector<std::vector<std::size_t>> batches;
    std::int64_t epoch = 0;
    std::size_t next = 0;
    for (std::int64_t step = 0; step < cfg.steps; ++step) {
        if (next >= batches.size()) {
            batches = train::identity_batches(recs, cfg.batch_size, 2, data::mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch++)));
            next = 0;
        }
        const auto& b = batches[next++];
        std::vector<std::size_t> img_rows, cap_rows;
        std::vector<std::int64_t> ids;
        for (std::size_t k = 0; k < b.size(); ++k) {
            img_rows.push_back(b[k]);
            const auto& cs = captions_of[b[k]];
            cap_rows.push_back(cs[data::mix_seed(cfg.seed + 1, static_cast<std::uint64_t>(step) * 1315423911ULL + k) % cs.size()]);
            ids.push_back(recs[b[k]].identity);
        }
        probe.store.zero_grad();
        const ag::Var v = probe.visual(ag::constant(select_rows(e.images, img_rows)));
        const ag::Var t = probe.textual(ag::constant(select_rows(e.captions, cap_rows)));
        const ag::Var loss = pt::cmpm_loss(v, t, ids, {model.config().weights.epsilon, model.config().cmpm_symmetric, true});
        if (!std::isfinite(loss.item())) throw NumericError("linear probe diverged at step " + std::to_string(step));
        ag::backward(loss);
        opt.step(probe.store, cfg.lr);
    }
    auto r = evaluate_retrieval(model, vocab, test, "linear-probe", &probe);
    r.seed = cfg.seed;
    if (probe_out) *probe_out = std::move(probe);
    return r;
}

MetricsReport finetune_eval(pt::PlipModel& model, const data::Vocabulary& vocab, const EvalSet& train,
                            const EvalSet& test, const train::TrainConfig& cfg, const train::TrainIO& io) {
    auto w = model.config().weights;
    w.vlm = 1.0;
    w.lambda1 = 0.0;
    w.lambda2 = 0.0;
    model.set_weights(w);
    if (!train.records || !train.images) throw DataError("fine-tune needs a training set");
    train::train_plip(model, *train.records, vocab, cfg, io, train.images);
    auto r = evaluate_retrieval(model, vocab, test, "fine-tune");
    r.seed = cfg.seed;
    return r;
}

namespace {

std::vector<std::int64_t> unique_ids(const std::vector<data::PersonRecord>& records) {
    std::set<std::int64_t> s;
    for (const auto& r : records) s.insert(r.identity);
    return {s.begin(), s.end()};
}

std::vector<data::PersonRecord> keep_ids(const std::vector<data::PersonRecord>& records, const std::set<std::int64_t>& ids,
                                         bool keep) {
    std::vector<data::PersonRecord> out;
    for (const auto& r : records)
        if (ids.count(r.identity) == static_cast<std::size_t>(keep)) out.push_back(r);
    return out;
}

}  // namespace

std::vector<data::PersonRecord> few_shot_split(const std::vector<data::PersonRecord>& records, double percent,
                                               std::uint64_t seed) {
    if (!(percent >= 0 && percent <= 100)) throw ConfigError("few-shot percentage must lie in [0, 100]");
    auto ids = unique_ids(records);
    // ceil with a small guard so that e.g. 30% of 10 is exactly 3
    const auto want = static_cast<std::size_t>(std::ceil(percent * static_cast<double>(ids.size()) / 100.0 - 1e-9));
    std::mt19937_64 rng(data::mix_seed(seed, 0x5eed));
    std::shuffle(ids.begin(), ids.end(), rng);
    return keep_ids(records, std::set<std::int64_t>(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(want, ids.size()))), true);
}

std::pair<std::vector<data::PersonRecord>, std::vector<data::PersonRecord>> split_identities(
    const std::vector<data::PersonRecord>& records, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("test fraction must lie in (0, 1)");
    auto ids = unique_ids(records);
    if (ids.size() < 2) throw DataError("an identity split needs at least two identities");
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ids.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, ids.size() - 1);
    std::mt19937_64 rng(data::mix_seed(seed, 0x7e57));
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::set<std::int64_t> test(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
    return {keep_ids(records, test, false), keep_ids(records, test, true)};
}

void AttributeSentenceBank::validate() const {
    if (groups.empty()) throw ConfigError("attribute bank has no groups");
    for (const auto& g : groups) {
        if (g.candidates.empty()) throw ConfigError("attribute group '" + g.name + "' has no candidates");
        for (const auto& c : g.candidates)
            if (c.sentence.empty() || c.label.empty())
                throw ConfigError("attribute group '" + g.name + "' has an empty label or sentence");
    }
}

nlohmann::json AttributeSentenceBank::to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& g : groups) {
        nlohmann::json c = nlohmann::json::array();
        for (const auto& cand : g.candidates)
            c.push_back({{"label", cand.label}, {"sentence", cand.sentence}, {"match", cand.match}});
        j.push_back({{"name", g.name}, {"slot", g.slot}, {"candidates", c}});
    }
    return {{"groups", j}};
}

AttributeSentenceBank AttributeSentenceBank::from_json(const nlohmann::json& j) {
    AttributeSentenceBank b;
    try {
        for (const auto& g : j.at("groups")) {
            AttributeGroup grp;
            grp.name = g.at("name").get<std::string>();
            grp.slot = g.at("slot").get<std::string>();
            for (const auto& c : g.at("candidates")) {
                AttributeCandidate cand;
                cand.label = c.at("label").get<std::string>();
                cand.sentence = c.at("sentence").get<std::string>();
                cand.match = c.value("match", cand.label);
                grp.candidates.push_back(std::move(cand));
            }
            b.groups.push_back(std::move(grp));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed attribute bank: ") + e.what());
    }
    b.validate();
    return b;
}

AttributeSentenceBank AttributeSentenceBank::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read attribute bank " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("attribute bank " + path.string() + ": " + e.what());
    }
}

AttributeSentenceBank default_attribute_bank() {
    const data::SlotSchema schema;
    const auto& slot = schema.names();
    AttributeSentenceBank b;
    auto group = [&b](std::string name, std::string s, std::vector<std::pair<std::string, std::string>> items) {
        AttributeGroup g{std::move(name), std::move(s), {}};
        for (auto& [label, sentence] : items) g.candidates.push_back({label, sentence, label});
        b.groups.push_back(std::move(g));
    };
    group("gender", slot[0], {{"man", "A photo of a man."}, {"woman", "A photo of a woman."}});
    group("headwear", slot[1], {{"hat", "The person has a hat."}, {"hair", "The person has hair."}});
    group("upper-type", slot[2],
          {{"t-shirt", "The person is wearing a t-shirt."},
           {"shirt", "The person is wearing a shirt."},
           {"jacket", "The person is wearing a jacket."}});
    std::vector<std::pair<std::string, std::string>> colors;
    for (const auto& c : data::clothing_palette()) {
        const std::string n(c.name);
        colors.emplace_back(n, "The person is wearing a " + n + " jacket, a " + n + " shirt or a " + n + " t-shirt.");
    }
    group("upper-color", slot[2], colors);
    group("lower-type", slot[3],
          {{"pants", "The person is wearing pants."}, {"shorts", "The person is wearing shorts."}, {"skirt", "The person is wearing a skirt."}});
    group("footwear", slot[4], {{"shoes", "The person is wearing shoes."}, {"boots", "The person is wearing boots."}});
    group("belongings", slot[5],
          {{"backpack", "The person is carrying a backpack."},
           {"handbag", "The person is carrying a handbag."},
           {"shoulder bag", "The person is carrying a shoulder bag."}});
    return b;
}

std::int64_t ground_truth(const AttributeGroup& g, const data::PersonRecord& rec) {
    std::vector<std::string> text;
    for (auto& t : data::tokenize(rec.attributes.get(g.slot))) text.push_back(std::move(t.text));
    for (std::size_t c = 0; c < g.candidates.size(); ++c) {
        std::vector<std::string> phrase;
        for (auto& t : data::tokenize(g.candidates[c].match)) phrase.push_back(std::move(t.text));
        if (phrase.empty() || phrase.size() > text.size()) continue;
        for (std::size_t s = 0; s + phrase.size() <= text.size(); ++s)
            if (std::equal(phrase.begin(), phrase.end(), text.begin() + static_cast<std::ptrdiff_t>(s)))
                return static_cast<std::int64_t>(c);
    }
    return -1;
}

std::vector<std::int64_t> predict_group(const Tensor& image_emb, const Tensor& sentence_emb) {
    if (sentence_emb.rank() != 2 || sentence_emb.dim(0) == 0) throw DataError("attribute group has no candidates");
    const Tensor sim = cosine_similarity(image_emb, sentence_emb);
    std::vector<std::int64_t> out;
    for (std::int64_t i = 0; i < sim.dim(0); ++i) out.push_back(static_cast<std::int64_t>(ranking(sim, static_cast<std::size_t>(i))[0]));
    return out;
}

MetricsReport attribute_metrics(const AttributeSentenceBank& bank, const AttributePredictions& p) {
    if (p.predicted.size() != bank.groups.size() || p.truth.size() != bank.groups.size())
        throw ShapeError("attribute predictions do not match the bank");
    const std::size_t n = p.predicted.empty() ? 0 : p.predicted[0].size();
    if (n == 0) throw DataError("no samples for attribute evaluation");
    MetricsReport r;
    r.protocol = "zero-shot";
    double ma_sum = 0;
    std::size_t ma_count = 0;
    std::vector<std::size_t> inter(n, 0), pred_n(n, 0), truth_n(n, 0);
    for (std::size_t g = 0; g < bank.groups.size(); ++g) {
        const auto& pred = p.predicted[g];
        const auto& truth = p.truth[g];
        if (pred.size() != n || truth.size() != n) throw ShapeError("attribute predictions differ in length");
        std::size_t correct = 0;
        for (std::size_t i = 0; i < n; ++i) {
            correct += pred[i] == truth[i];
            ++pred_n[i];
            if (truth[i] >= 0) ++truth_n[i];
            if (truth[i] >= 0 && pred[i] == truth[i]) ++inter[i];
        }
        r.attr_groups[bank.groups[g].name] = static_cast<double>(correct) / static_cast<double>(n);
        for (std::size_t c = 0; c < bank.groups[g].candidates.size(); ++c) {
            std::size_t tp = 0, pos = 0, tn = 0, neg = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const bool is = truth[i] == static_cast<std::int64_t>(c);
                const bool said = pred[i] == static_cast<std::int64_t>(c);
                if (is) {
                    ++pos;
                    tp += said;
                } else {
                    ++neg;
                    tn += !said;
                }
            }
            if (pos && neg)
                ma_sum += 0.5 * (static_cast<double>(tp) / static_cast<double>(pos) + static_cast<double>(tn) / static_cast<double>(neg));
            else
                ma_sum += pos ? static_cast<double>(tp) / static_cast<double>(pos) : static_cast<double>(tn) / static_cast<double>(neg);
            ++ma_count;
        }
    }
    double acc = 0, prec = 0, rec = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double uni = static_cast<double>(pred_n[i] + truth_n[i] - inter[i]);
        acc += uni > 0 ? static_cast<double>(inter[i]) / uni : 1.0;
        prec += static_cast<double>(inter[i]) / static_cast<double>(pred_n[i]);
        rec += truth_n[i] ? static_cast<double>(inter[i]) / static_cast<double>(truth_n[i]) : 1.0;
    }
    acc /= static_cast<double>(n);
    prec /= static_cast<double>(n);
    rec /= static_cast<double>(n);
    r.attr_ma = ma_sum / static_cast<double>(ma_count);
    r.attr_acc = acc;
    r.attr_f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    r.queries = static_cast<std::int64_t>(n);
    return r;
}

MetricsReport zero_shot_attributes(const pt::PlipModel& model, const data::Vocabulary& vocab, const EvalSet& set,
                                   const AttributeSentenceBank& bank) {
    bank.validate();
    if (!set.records || !set.images || set.records->size() != set.images->size() || set.records->empty())
        throw DataError("attribute evaluation needs one image per record");
    const Tensor img = model.embed_images(enc::stack_images(*set.images));
    AttributePredictions p;
    const auto max_len = static_cast<std::size_t>(model.config().encoder.max_caption_len);
    for (const auto& g : bank.groups) {
        std::vector<data::TokenSequence> seqs;
        for (const auto& c : g.candidates) seqs.push_back(vocab.encode_framed(c.sentence, max_len));
        p.predicted.push_back(predict_group(img, model.embed_texts(seqs)));
        std::vector<std::int64_t> truth;
        for (const auto& r : *set.records) truth.push_back(ground_truth(g, r));
        p.truth.push_back(std::move(truth));
    }
    auto r = attribute_metrics(bank, p);
    r.config_hash = ckpt::hash_hex(ckpt::config_hash(model.config().canonical()));
    return r;
}

std::string TaskSet::name() const {
    std::string out;
    auto add = [&out](bool on, const char* n) {
        if (on) out += (out.empty() ? "" : "+") + std::string(n);
    };
    add(vlm, "vlm");
    add(sic, "sic");
    add(vap, "vap");
    return out.empty() ? "none" : out;
}

TaskSet TaskSet::parse(const std::string& text) {
    TaskSet t;
    std::string item;
    std::stringstream ss(text);
    while (std::getline(ss, item, text.find('+') != std::string::npos ? '+' : ',')) {
        if (item == "vlm") t.vlm = true;
        else if (item == "sic") t.sic = true;
        else if (item == "vap") t.vap = true;
        else if (!item.empty()) throw ConfigError("unknown pretext task '" + item + "' (expected vlm, sic, vap)");
    }
    if (!t.vlm && !t.sic && !t.vap) throw ConfigError("task set is empty");
    return t;
}

pt::LossWeights TaskSet::weights(double lambda1, double lambda2, double epsilon) const {
    pt::LossWeights w;
    w.vlm = vlm ? 1.0 : 0.0;
    w.lambda1 = sic ? lambda1 : 0.0;
    w.lambda2 = vap ? lambda2 : 0.0;
    w.epsilon = epsilon;
    return w;
}

std::vector<TaskSet> all_task_subsets() {
    return {{true, false, false}, {false, true, false}, {false, false, true}, {false, true, true},
            {true, true, false},  {true, false, true},  {true, true, true}};
}

Summary summarize(const std::vector<double>& v) {
    Summary s;
    if (v.empty()) return s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double sq = 0;
        for (double x : v) sq += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(sq / static_cast<double>(v.size() - 1));
    }
    return s;
}

namespace {

const char* const kSummaryMetrics[] = {"r1", "r5", "r10", "map", "cmc1", "cmc5", "cmc10", "i2i_map"};

std::optional<double> metric(const MetricsReport& r, const std::string& key) {
    if (key == "r1") return r.r1;
    if (key == "r5") return r.r5;
    if (key == "r10") return r.r10;
    if (key == "map") return r.map;
    if (key == "cmc1") return r.cmc1;
    if (key == "cmc5") return r.cmc5;
    if (key == "cmc10") return r.cmc10;
    if (key == "i2i_map") return r.i2i_map;
    return std::nullopt;
}

std::string cell(const std::optional<double>& v) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
    return buf;
}

std::string cell(const std::map<std::string, Summary>& s, const std::string& key) {
    auto it = s.find(key);
    if (it == s.end()) return "-";
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.2f+-%.2f", it->second.mean * 100.0, it->second.std * 100.0);
    return buf;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

}  // namespace

nlohmann::json AblationTable::to_json() const {
    nlohmann::json rows_j = nlohmann::json::array();
    for (const auto& row : rows) {
        nlohmann::json runs = nlohmann::json::array();
        for (const auto& r : row.runs) runs.push_back(r.to_json());
        nlohmann::json summary = nlohmann::json::object();
        for (const auto& [k, s] : row.summary) summary[k] = {{"mean", s.mean}, {"std", s.std}};
        rows_j.push_back({{"tasks", row.tasks.name()}, {"runs", runs}, {"summary", summary}});
    }
    return {{"rows", rows_j}};
}

std::string AblationTable::render() const {
    std::ostringstream os;
    os << pad("tasks", 14) << " | " << pad("R@1", 12) << " | " << pad("R@5", 12) << " | " << pad("R@10", 12) << " | "
       << pad("mAP", 12) << " | " << pad("cmc1", 12) << '\n';
    for (const auto& row : rows) {
        os << pad(row.tasks.name(), 14) << " | " << pad(cell(row.summary, "r1"), 12) << " | "
           << pad(cell(row.summary, "r5"), 12) << " | " << pad(cell(row.summary, "r10"), 12) << " | "
           << pad(cell(row.summary, "map"), 12) << " | " << pad(cell(row.summary, "cmc1"), 12) << '\n';
    }
    return os.str();
}

const AblationRow* AblationTable::find(const std::string& name) const {
    for (const auto& r : rows)
        if (r.tasks.name() == name) return &r;
    return nullptr;
}

AblationTable ablation_run(const std::vector<data::PersonRecord>& records, const std::vector<Tensor>& images,
                           const data::Vocabulary& vocab, const AblationConfig& cfg,
                           const std::function<void(const std::string&)>& progress) {
    if (records.size() != images.size()) throw DataError("ablation needs one image per record");
    if (cfg.subsets.empty() || cfg.seeds.empty()) throw ConfigError("ablation needs at least one subset and one seed");
    const auto [train_recs, test_recs] = split_identities(records, cfg.test_fraction, cfg.split_seed);
    auto images_for = [&](const std::vector<data::PersonRecord>& subset) {
        // both halves keep the original record order
        std::vector<Tensor> out;
        std::size_t cursor = 0;
        for (const auto& r : subset) {
            while (cursor < records.size() && !(records[cursor] == r)) ++cursor;
            if (cursor == records.size()) throw DataError("ablation split lost a record");
            out.push_back(images[cursor++]);
        }
        return out;
    };
    const auto train_imgs = images_for(train_recs);
    const auto test_imgs = images_for(test_recs);
    const EvalSet test{&test_recs, &test_imgs};

    AblationTable table;
    for (const auto& tasks : cfg.subsets) {
        AblationRow row;
        row.tasks = tasks;
        for (auto seed : cfg.seeds) {
            pt::PlipConfig mc = cfg.model;
            mc.weights = tasks.weights(cfg.model.weights.lambda1, cfg.model.weights.lambda2, cfg.model.weights.epsilon);
            pt::PlipModel model(mc, data::mix_seed(seed, 0xab1a));
            train::TrainConfig tc = cfg.train;
            tc.seed = seed;
            train::train_plip(model, train_recs, vocab, tc, {}, &train_imgs);
            auto r = zero_shot_retrieval(model, vocab, test);
            r.seed = seed;
            if (!tasks.vlm) {
                // without the matching task the text side is never aligned with images
                r.r1.reset();
                r.r5.reset();
                r.r10.reset();
                r.map.reset();
            }
            if (progress) progress(tasks.name() + " seed " + std::to_string(seed) + " R@1 " + cell(r.r1) + " cmc1 " + cell(r.cmc1));
            row.runs.push_back(std::move(r));
        }
        for (const char* key : kSummaryMetrics) {
            std::vector<double> v;
            for (const auto& r : row.runs)
                if (auto m = metric(r, key)) v.push_back(*m);
            if (v.size() == row.runs.size()) row.summary[key] = summarize(v);
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

std::string render_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    std::ostringstream os;
    os << pad("method", 16) << " | " << pad("R@1", 6) << " | " << pad("R@5", 6) << " | " << pad("R@10", 6) << " | "
       << pad("mAP", 6) << " | " << pad("cmc1", 6) << '\n';
    for (const auto& [name, r] : rows)
        os << pad(name, 16) << " | " << pad(cell(r.r1), 6) << " | " << pad(cell(r.r5), 6) << " | " << pad(cell(r.r10), 6)
           << " | " << pad(cell(r.map), 6) << " | " << pad(cell(r.cmc1), 6) << '\n';
    return os.str();
}

}  // namespace plip::eval
