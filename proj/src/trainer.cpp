#include "plip/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <thread>

#include "plip/synthetic.hpp"

namespace plip::train {

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (!(base_lr > 0)) throw ConfigError("learning rate must be positive");
    if (!(decay > 0)) throw ConfigError("lr decay factor must be positive");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
        if (i > 0 && milestones[i] <= milestones[i - 1]) throw ConfigError("lr milestones must be strictly increasing");
        if (milestones[i] <= 0 || (epochs > 0 && milestones[i] >= epochs))
            throw ConfigError("lr milestones must lie strictly between 0 and epochs");
    }
    if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be non-negative");
    if (optimizer != "sgd" && optimizer != "adam") throw ConfigError("optimizer must be sgd or adam, got '" + optimizer + "'");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
    if (!(grad_clip >= 0)) throw ConfigError("grad_clip must be non-negative");
    if (images_per_identity < 1) throw ConfigError("images_per_identity must be positive");
}

TrainConfig TrainConfig::schedule_preset() {
    TrainConfig c;
    c.epochs = 70;
    c.batch_size = 512;
    c.base_lr = 1e-3;
    c.milestones = {30, 50};
    c.decay = 0.1;
    return c;
}

double lr_at_epoch(const TrainConfig& cfg, std::int64_t epoch) {
    double lr = cfg.base_lr;
    for (auto m : cfg.milestones)
        if (epoch >= m) lr *= cfg.decay;
    return lr;
}

Optimizer::Optimizer(const TrainConfig& cfg, const nn::ParamStore& store) : cfg_(cfg) {
    for (const auto& [_, p] : store.entries()) {
        m_.emplace_back(p.shape());
        if (cfg.optimizer == "adam") v_.emplace_back(p.shape());
    }
}

void Optimizer::step(nn::ParamStore& store, double lr) {
    const auto& entries = store.entries();
    if (entries.size() != m_.size()) throw ConfigError("optimizer state does not match the parameter store");
    ++t_;
    const bool adam = cfg_.optimizer == "adam";
    const double bc1 = adam ? 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_)) : 1.0;
    const double bc2 = adam ? 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_)) : 1.0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        ag::Var p = entries[i].second;
        if (p.grad().size() != p.value().size()) continue;  // untouched this step
        auto& w = p.mutable_value();
        const auto& g = p.grad();
        auto& m = m_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j] + cfg_.weight_decay * w[j];
            if (adam) {
                m[j] = cfg_.adam_beta1 * m[j] + (1 - cfg_.adam_beta1) * gj;
                auto& v = v_[i][j];
                v = cfg_.adam_beta2 * v + (1 - cfg_.adam_beta2) * gj * gj;
                w[j] -= lr * (m[j] / bc1) / (std::sqrt(v / bc2) + cfg_.adam_eps);
            } else {
                m[j] = cfg_.momentum * m[j] + gj;
                w[j] -= lr * m[j];
            }
        }
    }
}

void Optimizer::save_state(ckpt::Checkpoint& ck) const {
    ck.extra["optimizer"] = {{"kind", cfg_.optimizer}, {"t", t_}};
    for (std::size_t i = 0; i < m_.size(); ++i) ck.tensors.emplace_back("optim.m." + std::to_string(i), m_[i]);
    for (std::size_t i = 0; i < v_.size(); ++i) ck.tensors.emplace_back("optim.v." + std::to_string(i), v_[i]);
}

void Optimizer::load_state(const ckpt::Checkpoint& ck) {
    if (!ck.extra.contains("optimizer")) throw DataError("checkpoint has no optimizer state");
    if (ck.extra["optimizer"].value("kind", std::string{}) != cfg_.optimizer)
        throw ConfigError("checkpoint optimizer differs from the configured one");
    t_ = ck.extra["optimizer"].value("t", std::int64_t{0});
    auto fetch = [&ck](std::vector<Tensor>& dst, const std::string& key) {
        for (std::size_t i = 0; i < dst.size(); ++i) {
            const Tensor* t = ck.find(key + std::to_string(i));
            if (!t || t->shape() != dst[i].shape()) throw ConfigError("checkpoint optimizer state does not match the model");
            dst[i] = *t;
        }
    };
    fetch(m_, "optim.m.");
    fetch(v_, "optim.v.");
}

double clip_grad_norm(nn::ParamStore& store, double max_norm) {
    double sq = 0;
    for (const auto& [_, p] : store.entries())
        for (double g : p.grad().values()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (const auto& [_, p] : store.entries()) {
            ag::Var v = p;
            if (v.grad().size() == 0) continue;
            for (auto& g : v.mutable_grad().storage()) g *= s;
        }
    }
    return norm;
}

std::vector<std::vector<std::size_t>> identity_batches(const std::vector<data::PersonRecord>& records,
                                                       std::int64_t batch_size, std::int64_t images_per_identity,
                                                       std::uint64_t seed) {
    std::map<std::int64_t, std::vector<std::size_t>> by_id;
    for (std::size_t i = 0; i < records.size(); ++i) by_id[records[i].identity].push_back(i);
    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> groups;
    for (auto& [_, idx] : by_id) {
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t s = 0; s < idx.size(); s += static_cast<std::size_t>(images_per_identity)) {
            const auto e = std::min(idx.size(), s + static_cast<std::size_t>(images_per_identity));
            groups.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s), idx.begin() + static_cast<std::ptrdiff_t>(e));
        }
    }
    std::shuffle(groups.begin(), groups.end(), rng);
    std::vector<std::size_t> order;
    for (const auto& g : groups) order.insert(order.end(), g.begin(), g.end());
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(batch_size)) {
        const auto e = std::min(order.size(), s + static_cast<std::size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s), order.begin() + static_cast<std::ptrdiff_t>(e));
    }
    // A trailing single sample has no negatives; fold it into the previous batch.
    if (batches.size() > 1 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back()[0]);
        batches.pop_back();
    }
    return batches;
}

std::size_t worker_count() {
    const char* env = std::getenv("PLIP_NUM_WORKERS");
    if (!env || !*env) return 1;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError(std::string("PLIP_NUM_WORKERS must be a positive integer, got '") + env + "'");
    return static_cast<std::size_t>(v);
}

std::vector<Tensor> load_images(const std::vector<data::PersonRecord>& records, const std::filesystem::path& base_dir) {
    std::vector<Tensor> out(records.size());
    const auto workers = std::min(worker_count(), std::max<std::size_t>(records.size(), 1));
    std::vector<std::exception_ptr> errors(workers);
    auto work = [&](std::size_t w) {
        try {
            for (std::size_t i = w; i < records.size(); i += workers) out[i] = data::load_image(records[i].image_ref, base_dir);
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    if (workers <= 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    for (std::size_t i = 1; i < out.size(); ++i)
        if (out[i].shape() != out[0].shape())
            throw DataError("image " + records[i].image_ref + " has shape " + shape_string(out[i].shape()) +
                            ", expected " + shape_string(out[0].shape()));
    return out;
}

pt::PlipBatch make_plip_batch(const std::vector<data::PersonRecord>& records, const std::vector<std::size_t>& indices,
                              const std::vector<Tensor>& color, const data::Vocabulary& vocab,
                              const pt::PlipConfig& cfg, std::uint64_t seed) {
    pt::PlipBatch b;
    std::vector<Tensor> col, gray;
    const auto max_len = static_cast<std::size_t>(cfg.encoder.max_caption_len);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const auto i = indices[k];
        const auto& rec = records.at(i);
        col.push_back(color.at(i));
        gray.push_back(data::to_grayscale(color[i]));
        const std::uint64_t s = data::mix_seed(seed, k);
        const auto ci = static_cast<std::size_t>(s % rec.captions.size());
        b.captions.push_back(vocab.encode_framed(rec.captions[ci].text, max_len));
        try {
            b.masked.push_back(data::mask_attribute_phrases(rec, ci, cfg.mask_rate, data::mix_seed(s, 1), vocab).framed());
        } catch (const DataError&) {
            // no attribute phrase in this caption: nothing to predict for it
            data::MaskedCaption plain;
            plain.tokens = vocab.encode(rec.captions[ci].text);
            b.masked.push_back(plain.framed());
        }
        b.ids.push_back(rec.identity);
    }
    b.color = enc::stack_images(col);
    b.gray = enc::stack_images(gray);
    return b;
}

namespace {

class CsvLog {
public:
    CsvLog(const std::filesystem::path& path, const std::string& header, bool append) {
        if (path.empty()) return;
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        const bool fresh = !append || !std::filesystem::exists(path);
        out_.open(path, fresh ? std::ios::trunc : std::ios::app);
        if (!out_) throw DataError("cannot open loss log " + path.string());
        if (fresh) out_ << header << '\n';
    }
    void row(const StepLog& s) {
        if (!out_.is_open()) return;
        out_ << s.step << ',' << cfg::format_double(s.loss);
        for (double t : s.terms) out_ << ',' << cfg::format_double(t);
        out_ << ',' << cfg::format_double(s.lr) << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::int64_t step) {
    char name[32];
    std::snprintf(name, sizeof name, "step_%08lld.ckpt", static_cast<long long>(step));
    return dir / name;
}

struct LoopSpec {
    std::string kind;
    std::string config_text;
    std::string csv_header;
    std::size_t n_records = 0;
    // computes the loss on the batch (graph attached) and returns the log terms
    std::function<std::pair<ag::Var, std::vector<double>>(std::int64_t step, std::int64_t epoch,
                                                           const std::vector<std::vector<std::size_t>>& batches,
                                                           std::size_t batch_index)>
        compute;
    std::function<std::vector<std::vector<std::size_t>>(std::int64_t epoch)> batches;
};

TrainResult run_loop(nn::ParamStore& store, const data::Vocabulary& vocab, const TrainConfig& cfg, const TrainIO& io,
                     const LoopSpec& spec) {
    cfg.validate();
    if (spec.n_records == 0) throw DataError("training manifest is empty");
    Optimizer opt(cfg, store);
    TrainResult result;
    std::int64_t start = 0;
    if (!io.resume_from.empty()) {
        const auto ck = ckpt::load(io.resume_from);
        if (ck.kind != spec.kind) throw ConfigError("cannot resume a " + spec.kind + " run from a " + ck.kind + " checkpoint");
        if (ck.config_text != spec.config_text) throw ConfigError("resume checkpoint was written with a different model config");
        ckpt::restore_params(ck, store);
        opt.load_state(ck);
        start = ck.global_step;
    }

    const auto first = spec.batches(0);
    const auto per_epoch = static_cast<std::int64_t>(first.size());
    std::int64_t total = cfg.epochs * per_epoch;
    if (cfg.max_steps >= 0) total = std::min(total, cfg.max_steps);

    auto save = [&](std::int64_t step) {
        if (io.checkpoint_dir.empty()) return std::filesystem::path{};
        auto ck = make_checkpoint(spec.kind, spec.config_text, store, vocab, step);
        ck.epoch = per_epoch ? step / per_epoch : 0;
        ck.extra["train_config"] = train_config_text(cfg);
        opt.save_state(ck);
        const auto path = checkpoint_path(io.checkpoint_dir, step);
        ckpt::save(path, ck);
        result.checkpoints.push_back(path);
        return path;
    };

    std::filesystem::path last_good = io.resume_from;
    if (start == 0) last_good = save(0);
    CsvLog csv(io.loss_csv, spec.csv_header, start > 0);

    std::int64_t cached_epoch = -1;
    std::vector<std::vector<std::size_t>> batches;
    for (std::int64_t step = start; step < total; ++step) {
        const auto epoch = step / per_epoch;
        if (epoch != cached_epoch) {
            batches = epoch == 0 ? first : spec.batches(epoch);
            cached_epoch = epoch;
        }
        const double lr = lr_at_epoch(cfg, epoch);
        store.zero_grad();
        auto [loss, terms] = spec.compute(step, epoch, batches, static_cast<std::size_t>(step % per_epoch));
        const double value = loss.item();
        if (!std::isfinite(value)) {
            throw NumericError("non-finite loss at step " + std::to_string(step) + "; last good checkpoint: " +
                               (last_good.empty() ? std::string("none") : last_good.string()));
        }
        ag::backward(loss);
        const double norm = clip_grad_norm(store, cfg.grad_clip);
        if (!std::isfinite(norm)) {
            throw NumericError("non-finite gradient at step " + std::to_string(step) + "; last good checkpoint: " +
                               (last_good.empty() ? std::string("none") : last_good.string()));
        }
        opt.step(store, lr);
        StepLog log{step, value, std::move(terms), lr};
        csv.row(log);
        if (io.on_step) io.on_step(log);
        result.log.push_back(std::move(log));
        if (cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0 && step + 1 < total)
            last_good = save(step + 1);
    }
    result.final_step = std::max(start, total);
    if (result.final_step > 0 && result.final_step != start) save(result.final_step);
    store.zero_grad();
    return result;
}

}  // namespace

TrainResult train_plip(pt::PlipModel& model, const std::vector<data::PersonRecord>& records,
                       const data::Vocabulary& vocab, const TrainConfig& cfg, const TrainIO& io,
                       const std::vector<Tensor>* images) {
    if (vocab.size() != model.config().encoder.vocab_size) throw ConfigError("vocabulary size does not match the model");
    std::vector<Tensor> owned;
    if (!images) {
        owned = load_images(records, io.image_base);
        images = &owned;
    }
    if (images->size() != records.size()) throw DataError("image cache does not match the manifest");
    LoopSpec spec;
    spec.kind = "plip";
    spec.config_text = model.config().canonical();
    spec.csv_header = "step,L,L_vlm,L_sic,L_vap,lr";
    spec.n_records = records.size();
    spec.batches = [&](std::int64_t epoch) {
        return identity_batches(records, cfg.batch_size, cfg.images_per_identity,
                                data::mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    };
    spec.compute = [&](std::int64_t step, std::int64_t, const std::vector<std::vector<std::size_t>>& batches,
                       std::size_t bi) {
        const auto batch = make_plip_batch(records, batches[bi], *images, vocab, model.config(),
                                           data::mix_seed(cfg.seed ^ 0x9e3779b97f4a7c15ULL, static_cast<std::uint64_t>(step)));
        auto l = model.loss(batch);
        return std::make_pair(l.total, std::vector<double>{l.vlm, l.sic, l.vap});
    };
    return run_loop(model.params(), vocab, cfg, io, spec);
}

TrainResult train_spac(spac::SpacModel& model, const std::vector<data::PersonRecord>& records,
                       const data::Vocabulary& vocab, const TrainConfig& cfg, const TrainIO& io,
                       const std::vector<Tensor>* images) {
    if (vocab.size() != model.config().encoder.vocab_size) throw ConfigError("vocabulary size does not match the model");
    std::vector<Tensor> owned;
    if (!images) {
        owned = load_images(records, io.image_base);
        images = &owned;
    }
    if (images->size() != records.size()) throw DataError("image cache does not match the manifest");
    LoopSpec spec;
    spec.kind = "spac";
    spec.config_text = model.config().canonical();
    spec.csv_header = "step,L,caption_nll,attr_nll,nats_per_token,lr";
    spec.n_records = records.size();
    const auto n = static_cast<std::int64_t>(records.size());
    spec.batches = [&, n](std::int64_t epoch) {
        std::vector<std::size_t> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(data::mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::vector<std::size_t>> out;
        for (std::int64_t s = 0; s < n; s += cfg.batch_size)
            out.emplace_back(order.begin() + s, order.begin() + std::min(n, s + cfg.batch_size));
        return out;
    };
    spec.compute = [&](std::int64_t, std::int64_t epoch, const std::vector<std::vector<std::size_t>>& batches,
                       std::size_t bi) {
        std::vector<const data::PersonRecord*> recs;
        std::vector<Tensor> imgs;
        std::vector<std::int64_t> styles;
        const std::int64_t offset = static_cast<std::int64_t>(bi) * cfg.batch_size;
        for (std::size_t k = 0; k < batches[bi].size(); ++k) {
            const auto i = batches[bi][k];
            recs.push_back(&records[i]);
            imgs.push_back((*images)[i]);
            styles.push_back(round_robin_style(epoch, offset + static_cast<std::int64_t>(k), model.config().n_styles));
        }
        const auto batch = spac::make_spac_batch(recs, imgs, styles, vocab, model.config());
        auto l = model.loss(batch);
        return std::make_pair(l.total, std::vector<double>{l.caption_nll, l.attr_nll, l.nats_per_token()});
    };
    return run_loop(model.params(), vocab, cfg, io, spec);
}

std::vector<std::string> model_config_keys() {
    return {"embed_dim",    "pyramid_strides", "stage_widths",   "blocks_per_stage", "text_layers",
            "text_heads",   "text_ffn",        "vocab_size",     "max_caption_len",  "max_attr_len",
            "pad_multiple", "vap_concat",      "mask_rate",      "se_reduction",     "sic_hidden",
            "cmpm_symmetric", "cmpm_epsilon",  "vlm_weight",     "lambda1",          "lambda2",
            "n_branches",   "n_styles",        "prefix_len",     "gen_layers",       "gen_heads",
            "gen_ffn",      "style_hidden",    "spac_lambda",    "spac_max_attr_len", "spac_max_caption_len"};
}

std::vector<std::string> train_config_keys() {
    return {"epochs",       "batch_size", "lr",         "milestones", "decay",     "seed",
            "checkpoint_interval", "max_steps", "optimizer", "momentum", "weight_decay", "adam_beta1",
            "adam_beta2",   "adam_eps",   "grad_clip",  "images_per_identity"};
}

namespace {

enc::EncoderConfig encoder_from(const cfg::ConfigMap& m, std::int64_t vocab_size) {
    enc::EncoderConfig e;
    e.embed_dim = m.get_int("embed_dim", e.embed_dim);
    e.pyramid_strides = m.get_int_list("pyramid_strides", e.pyramid_strides);
    e.stage_widths = m.get_int_list("stage_widths", e.stage_widths);
    e.blocks_per_stage = m.get_int("blocks_per_stage", e.blocks_per_stage);
    e.text_layers = m.get_int("text_layers", e.text_layers);
    e.text_heads = m.get_int("text_heads", e.text_heads);
    e.text_ffn = m.get_int("text_ffn", e.text_ffn);
    e.vocab_size = vocab_size;
    if (m.has("vocab_size") && m.get_int("vocab_size", 0) != vocab_size)
        throw ConfigError("config vocab_size " + m.get_string("vocab_size", "") + " differs from the vocabulary (" +
                          std::to_string(vocab_size) + ")");
    e.max_caption_len = m.get_int("max_caption_len", e.max_caption_len);
    e.max_attr_len = m.get_int("max_attr_len", e.max_attr_len);
    e.pad_multiple = m.get_int("pad_multiple", e.pad_multiple);
    return e;
}

}  // namespace

pt::PlipConfig plip_config_from(const cfg::ConfigMap& m, std::int64_t vocab_size) {
    pt::PlipConfig c;
    c.encoder = encoder_from(m, vocab_size);
    c.vap_concat = m.get_bool("vap_concat", c.vap_concat);
    c.mask_rate = m.get_double("mask_rate", c.mask_rate);
    c.se_reduction = m.get_int("se_reduction", c.se_reduction);
    c.sic_hidden = m.get_int("sic_hidden", c.sic_hidden);
    c.cmpm_symmetric = m.get_bool("cmpm_symmetric", c.cmpm_symmetric);
    c.weights.epsilon = m.get_double("cmpm_epsilon", c.weights.epsilon);
    c.weights.vlm = m.get_double("vlm_weight", c.weights.vlm);
    c.weights.lambda1 = m.get_double("lambda1", c.weights.lambda1);
    c.weights.lambda2 = m.get_double("lambda2", c.weights.lambda2);
    c.validate();
    return c;
}

spac::SpacConfig spac_config_from(const cfg::ConfigMap& m, std::int64_t vocab_size) {
    spac::SpacConfig c;
    c.encoder = encoder_from(m, vocab_size);
    c.n_branches = m.get_int("n_branches", c.n_branches);
    c.n_styles = m.get_int("n_styles", c.n_styles);
    c.prefix_len = m.get_int("prefix_len", c.prefix_len);
    c.gen_layers = m.get_int("gen_layers", c.gen_layers);
    c.gen_heads = m.get_int("gen_heads", c.gen_heads);
    c.gen_ffn = m.get_int("gen_ffn", c.gen_ffn);
    c.style_hidden = m.get_int("style_hidden", c.style_hidden);
    c.lambda = m.get_double("spac_lambda", c.lambda);
    c.max_attr_len = m.get_int("spac_max_attr_len", c.max_attr_len);
    c.max_caption_len = m.get_int("spac_max_caption_len", c.max_caption_len);
    c.validate();
    return c;
}

TrainConfig train_config_from(const cfg::ConfigMap& m) {
    TrainConfig c;
    c.epochs = m.get_int("epochs", c.epochs);
    c.batch_size = m.get_int("batch_size", c.batch_size);
    c.base_lr = m.get_double("lr", c.base_lr);
    c.milestones = m.get_int_list("milestones", c.milestones);
    c.decay = m.get_double("decay", c.decay);
    const auto seed = m.get_int("seed", 0);
    if (seed < 0) throw ConfigError("seed must be non-negative");
    c.seed = static_cast<std::uint64_t>(seed);
    c.checkpoint_interval = m.get_int("checkpoint_interval", c.checkpoint_interval);
    c.max_steps = m.get_int("max_steps", c.max_steps);
    c.optimizer = m.get_string("optimizer", c.optimizer);
    c.momentum = m.get_double("momentum", c.momentum);
    c.weight_decay = m.get_double("weight_decay", c.weight_decay);
    c.adam_beta1 = m.get_double("adam_beta1", c.adam_beta1);
    c.adam_beta2 = m.get_double("adam_beta2", c.adam_beta2);
    c.adam_eps = m.get_double("adam_eps", c.adam_eps);
    c.grad_clip = m.get_double("grad_clip", c.grad_clip);
    c.images_per_identity = m.get_int("images_per_identity", c.images_per_identity);
    c.validate();
    return c;
}

std::string train_config_text(const TrainConfig& c) {
    cfg::ConfigMap m;
    m.set("epochs", std::to_string(c.epochs));
    m.set("batch_size", std::to_string(c.batch_size));
    m.set("lr", cfg::format_double(c.base_lr));
    m.set("milestones", cfg::join_ints(c.milestones));
    m.set("decay", cfg::format_double(c.decay));
    m.set("seed", std::to_string(c.seed));
    m.set("checkpoint_interval", std::to_string(c.checkpoint_interval));
    m.set("max_steps", std::to_string(c.max_steps));
    m.set("optimizer", c.optimizer);
    m.set("momentum", cfg::format_double(c.momentum));
    m.set("weight_decay", cfg::format_double(c.weight_decay));
    m.set("adam_beta1", cfg::format_double(c.adam_beta1));
    m.set("adam_beta2", cfg::format_double(c.adam_beta2));
    m.set("adam_eps", cfg::format_double(c.adam_eps));
    m.set("grad_clip", cfg::format_double(c.grad_clip));
    m.set("images_per_identity", std::to_string(c.images_per_identity));
    return m.to_text();
}

ckpt::Checkpoint make_checkpoint(const std::string& kind, const std::string& config_text,
                                 const nn::ParamStore& store, const data::Vocabulary& vocab, std::int64_t step) {
    ckpt::Checkpoint ck;
    ck.kind = kind;
    ck.config_text = config_text;
    ck.global_step = step;
    ck.vocab = vocab.words();
    ckpt::add_params(ck, store);
    return ck;
}

LoadedPlip load_plip(const std::filesystem::path& path) {
    const auto ck = ckpt::load(path);
    if (ck.kind != "plip") throw ConfigError(path.string() + " is a " + ck.kind + " checkpoint, expected plip");
    LoadedPlip out;
    out.vocab = data::Vocabulary(ck.vocab);
    const auto m = cfg::ConfigMap::parse(ck.config_text, path.string());
    out.model = std::make_unique<pt::PlipModel>(plip_config_from(m, out.vocab.size()), 0);
    ckpt::restore_params(ck, out.model->params());
    out.step = ck.global_step;
    return out;
}

LoadedSpac load_spac(const std::filesystem::path& path) {
    const auto ck = ckpt::load(path);
    if (ck.kind != "spac") throw ConfigError(path.string() + " is a " + ck.kind + " checkpoint, expected spac");
    LoadedSpac out;
    out.vocab = data::Vocabulary(ck.vocab);
    const auto m = cfg::ConfigMap::parse(ck.config_text, path.string());
    out.model = std::make_unique<spac::SpacModel>(spac_config_from(m, out.vocab.size()), 0);
    ckpt::restore_params(ck, out.model->params());
    out.step = ck.global_step;
    return out;
}

}  // namespace plip::train
