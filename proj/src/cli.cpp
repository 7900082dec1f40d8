#include "plip/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <list>
#include <map>
#include <sstream>

#include "plip/evaluation.hpp"
#include "plip/synthetic.hpp"

namespace plip::cli {

namespace fs = std::filesystem;

namespace {

// keys only the CLI reads
const std::vector<std::string> kCommandKeys = {
    "manifest",  "train_manifest", "checkpoint", "bank",        "tasks",      "style",      "percent",
    "protocol",  "ids",            "per_id",     "height",      "width",      "seeds",      "subsets",
    "decode",    "top_k",          "resume",     "test_fraction", "split_seed", "probe_steps", "probe_batch_size",
    "probe_lr",  "spac_lambda"};

std::vector<std::string> known_keys() {
    auto k = train::model_config_keys();
    for (const auto& t : train::train_config_keys()) k.push_back(t);
    for (const auto& t : kCommandKeys) k.push_back(t);
    return k;
}

struct Sub {
    CLI::App* app = nullptr;
    std::string config, out;
    bool force = false;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void flag(const std::string& name, const std::string& help) {
        std::string key = name.substr(2);
        std::replace(key.begin(), key.end(), '-', '_');
        options[key] = app->add_option(name, values[key], help);
    }

    cfg::ConfigMap resolve() const {
        cfg::ConfigMap m;
        if (!config.empty()) m = cfg::ConfigMap::load(config);
        for (const auto& [key, opt] : options)
            if (opt->count() > 0) m.set(key, values.at(key));
        m.check_known(known_keys());
        return m;
    }
};

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path.string());
    f << text;
    if (!f) throw DataError("write failed for " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

/// Everything is written under a hidden sibling directory and renamed into place at the end.
class Staging {
public:
    Staging(const fs::path& out, bool force) : out_(out) {
        if (out.empty()) throw ConfigError("--out is required");
        if (fs::exists(out) && !force) throw ConfigError("output directory " + out.string() + " exists (use --force)");
        const auto parent = out.parent_path();
        if (!parent.empty()) fs::create_directories(parent);
        stage_ = parent / ("." + out.filename().string() + ".partial");
        fs::remove_all(stage_);
        fs::create_directories(stage_ / "logs");
    }
    const fs::path& dir() const { return stage_; }
    void commit() {
        if (fs::exists(out_)) fs::remove_all(out_);
        fs::rename(stage_, out_);
    }

private:
    fs::path out_, stage_;
};

class RunLog {
public:
    RunLog(const fs::path& path, std::ostream& echo) : file_(path, std::ios::binary | std::ios::trunc), echo_(echo) {
        if (!file_) throw DataError("cannot write " + path.string());
    }
    void operator()(const std::string& line) {
        file_ << line << '\n';
        file_.flush();
        echo_ << line << '\n';
    }

private:
    std::ofstream file_;
    std::ostream& echo_;
};

std::string required(const cfg::ConfigMap& m, const std::string& key) {
    auto v = m.get_string(key, "");
    if (v.empty()) {
        std::string flag = key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        throw ConfigError("missing --" + flag + " (or '" + key + "' in the config file)");
    }
    return v;
}

struct LoadedSet {
    std::vector<data::PersonRecord> records;
    std::vector<Tensor> images;
    fs::path base;
};

LoadedSet load_set(const std::string& manifest) {
    LoadedSet s;
    s.records = data::load_manifest(manifest);
    if (s.records.empty()) throw DataError("manifest " + manifest + " has no records");
    s.base = fs::path(manifest).parent_path();
    s.images = train::load_images(s.records, s.base);
    return s;
}

fs::path resolve_checkpoint(const fs::path& p) {
    if (!fs::is_directory(p)) return p;
    const fs::path dir = fs::is_directory(p / "checkpoints") ? p / "checkpoints" : p;
    std::vector<fs::path> found;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".ckpt") found.push_back(e.path());
    if (found.empty()) throw DataError("no checkpoint found in " + dir.string());
    std::sort(found.begin(), found.end());
    return found.back();
}

/// Model settings with --tasks applied on top of the explicit weights.
cfg::ConfigMap apply_tasks(cfg::ConfigMap m) {
    if (!m.has("tasks")) return m;
    const auto t = eval::TaskSet::parse(m.get_string("tasks", ""));
    if (!t.vlm) m.set("vlm_weight", "0");
    if (!t.sic) m.set("lambda1", "0");
    if (!t.vap) m.set("lambda2", "0");
    return m;
}

std::string resolved_text(const std::string& command, cfg::ConfigMap m, const std::string& model_canonical,
                          const train::TrainConfig* tc) {
    if (!model_canonical.empty()) m.merge(cfg::ConfigMap::parse(model_canonical, "model"));
    if (tc) m.merge(cfg::ConfigMap::parse(train::train_config_text(*tc), "train"));
    return "# plip " + command + "\n" + m.to_text();
}

std::vector<std::string> filenames(const std::vector<fs::path>& paths) {
    std::vector<std::string> out;
    for (const auto& p : paths) out.push_back(p.filename().string());
    return out;
}

nlohmann::json train_summary(const std::string& kind, const train::TrainResult& r, const std::string& config_hash) {
    nlohmann::json j;
    j["kind"] = kind;
    j["final_step"] = r.final_step;
    j["steps_run"] = r.log.size();
    j["config_hash"] = config_hash;
    j["checkpoints"] = filenames(r.checkpoints);
    if (!r.log.empty()) {
        j["first_loss"] = r.log.front().loss;
        j["final_loss"] = r.log.back().loss;
    }
    return j;
}

train::TrainIO train_io(const fs::path& dir, const fs::path& image_base, const cfg::ConfigMap& m, RunLog& log) {
    train::TrainIO io;
    io.checkpoint_dir = dir / "checkpoints";
    io.loss_csv = dir / "logs" / "loss.csv";
    io.image_base = image_base;
    if (m.has("resume")) io.resume_from = resolve_checkpoint(m.get_string("resume", ""));
    io.on_step = [&log](const train::StepLog& s) {
        if (s.step % 50 == 0) log("step " + std::to_string(s.step) + " loss " + cfg::format_double(s.loss));
    };
    return io;
}

// ---------------------------------------------------------------------------

void cmd_synth(const cfg::ConfigMap& m, const fs::path& dir, RunLog& log) {
    const auto ids = m.get_int("ids", 10), per_id = m.get_int("per_id", 4);
    const auto seed = m.get_int("seed", 0);
    if (seed < 0) throw ConfigError("seed must be non-negative");
    data::SynthOptions opt;
    opt.height = m.get_int("height", opt.height);
    opt.width = m.get_int("width", opt.width);
    const auto recs = data::synth_manifest(ids, per_id, static_cast<std::uint64_t>(seed), opt);
    fs::create_directories(dir / "data");
    data::write_manifest(dir / "data" / "manifest.jsonl", recs);
    const auto vocab = data::Vocabulary::from_records(recs);
    cfg::ConfigMap r = m;
    r.set("ids", std::to_string(ids));
    r.set("per_id", std::to_string(per_id));
    r.set("seed", std::to_string(seed));
    r.set("height", std::to_string(opt.height));
    r.set("width", std::to_string(opt.width));
    write_text(dir / "resolved_config.txt", resolved_text("synth-data", r, "", nullptr));
    write_json(dir / "reports" / "summary.json",
               {{"records", recs.size()}, {"identities", ids}, {"vocab_size", vocab.size()}, {"seed", seed}});
    log("wrote " + std::to_string(recs.size()) + " records to data/manifest.jsonl");
}

void cmd_train_plip(const cfg::ConfigMap& raw, const fs::path& dir, RunLog& log) {
    const auto m = apply_tasks(raw);
    const auto set = load_set(required(m, "manifest"));
    const auto vocab = data::Vocabulary::from_records(set.records);
    const auto mc = train::plip_config_from(m, vocab.size());
    const auto tc = train::train_config_from(m);
    cfg::ConfigMap r = m;
    r.set("vlm_weight", cfg::format_double(mc.weights.vlm));
    r.set("lambda1", cfg::format_double(mc.weights.lambda1));
    r.set("lambda2", cfg::format_double(mc.weights.lambda2));
    write_text(dir / "resolved_config.txt", resolved_text("train-plip", r, mc.canonical(), &tc));
    pt::PlipModel model(mc, tc.seed);
    log("plip: " + std::to_string(set.records.size()) + " records, vocab " + std::to_string(vocab.size()) + ", " +
        std::to_string(model.params().numel()) + " parameters");
    const auto res = train::train_plip(model, set.records, vocab, tc, train_io(dir, set.base, m, log), &set.images);
    write_json(dir / "reports" / "train_summary.json",
               train_summary("plip", res, ckpt::hash_hex(ckpt::config_hash(mc.canonical()))));
    log("finished at step " + std::to_string(res.final_step));
}

void cmd_train_spac(const cfg::ConfigMap& m, const fs::path& dir, RunLog& log) {
    const auto set = load_set(required(m, "manifest"));
    const auto vocab = data::Vocabulary::from_records(set.records);
    const auto sc = train::spac_config_from(m, vocab.size());
    const auto tc = train::train_config_from(m);
    write_text(dir / "resolved_config.txt", resolved_text("train-spac", m, sc.canonical(), &tc));
    spac::SpacModel model(sc, tc.seed);
    log("spac: " + std::to_string(set.records.size()) + " records, vocab " + std::to_string(vocab.size()) + ", " +
        std::to_string(model.params().numel()) + " parameters");
    const auto res = train::train_spac(model, set.records, vocab, tc, train_io(dir, set.base, m, log), &set.images);
    auto summary = train_summary("spac", res, ckpt::hash_hex(ckpt::config_hash(sc.canonical())));
    if (!res.log.empty()) summary["final_nats_per_token"] = res.log.back().terms.at(2);
    write_json(dir / "reports" / "train_summary.json", summary);
    log("finished at step " + std::to_string(res.final_step));
}

std::int64_t parse_style_index(const std::string& s, std::int64_t n_styles) {
    std::int64_t k = -1;
    if (s.rfind("spac_style_", 0) == 0) {
        k = std::stoll(s.substr(11)) - 1;
    } else {
        try {
            k = std::stoll(s) - 1;
        } catch (const std::exception&) {
            throw ConfigError("style '" + s + "' is not 1.." + std::to_string(n_styles) + " or spac_style_<k>");
        }
    }
    if (k < 0 || k >= n_styles) throw ConfigError("style must lie in 1.." + std::to_string(n_styles));
    return k;
}

void cmd_generate(const cfg::ConfigMap& m, const fs::path& dir, RunLog& log) {
    const auto ck_path = resolve_checkpoint(required(m, "checkpoint"));
    auto loaded = train::load_spac(ck_path);
    const auto& model = *loaded.model;
    const auto set = load_set(required(m, "manifest"));
    spac::GenerateOptions opt;
    opt.style = parse_style_index(m.get_string("style", "1"), model.config().n_styles);
    const auto decode = m.get_string("decode", "greedy");
    if (decode == "greedy") opt.mode = spac::DecodeMode::greedy;
    else if (decode == "top-k" || decode == "top_k") opt.mode = spac::DecodeMode::top_k;
    else throw ConfigError("decode must be greedy or top-k");
    opt.top_k = m.get_int("top_k", opt.top_k);
    const auto seed = m.get_int("seed", 0);
    if (seed < 0) throw ConfigError("seed must be non-negative");
    opt.max_len = model.config().max_caption_len;
    cfg::ConfigMap r = m;
    r.set("style", std::to_string(opt.style + 1));
    r.set("decode", decode);
    r.set("top_k", std::to_string(opt.top_k));
    r.set("seed", std::to_string(seed));
    write_text(dir / "resolved_config.txt", resolved_text("spac-generate", r, model.config().canonical(), nullptr));

    const data::SlotSchema schema;
    const std::string style = "spac_style_" + std::to_string(opt.style + 1);
    std::ostringstream rows;
    constexpr std::size_t kChunk = 16;
    for (std::size_t start = 0; start < set.records.size(); start += kChunk) {
        const auto end = std::min(set.records.size(), start + kChunk);
        std::vector<Tensor> chunk(set.images.begin() + static_cast<std::ptrdiff_t>(start),
                                  set.images.begin() + static_cast<std::ptrdiff_t>(end));
        opt.seed = data::mix_seed(static_cast<std::uint64_t>(seed), start);
        const auto gen = model.generate(enc::stack_images(chunk), loaded.vocab, opt);
        for (std::size_t i = 0; i < gen.size(); ++i) {
            const auto& rec = set.records[start + i];
            nlohmann::json attrs = nlohmann::json::object();
            for (std::size_t k = 0; k < gen[i].attributes.size(); ++k) {
                const auto name = k < schema.names().size() ? schema.names()[k] : "attr" + std::to_string(k);
                attrs[name] = gen[i].attributes[k];
            }
            nlohmann::json row{{"image", rec.image_ref},
                               {"identity", rec.identity},
                               {"style", style},
                               {"caption", gen[i].caption},
                               {"attributes", attrs}};
            rows << row.dump() << '\n';
        }
    }
    write_text(dir / "reports" / "captions.jsonl", rows.str());
    log("generated " + std::to_string(set.records.size()) + " captions in style " + std::to_string(opt.style + 1));
}

void cmd_eval_retrieval(const cfg::ConfigMap& m, const fs::path& dir, RunLog& log) {
    const auto ck_path = resolve_checkpoint(required(m, "checkpoint"));
    auto loaded = train::load_plip(ck_path);
    auto& model = *loaded.model;
    const auto test = load_set(required(m, "manifest"));
    const eval::EvalSet test_set{&test.records, &test.images};
    const auto protocol = m.get_string("protocol", "zero-shot");
    const auto seed = m.get_int("seed", 0);
    if (seed < 0) throw ConfigError("seed must be non-negative");
    cfg::ConfigMap r = m;
    r.set("protocol", protocol);
    eval::MetricsReport report;
    train::TrainConfig tc;
    bool trains = false;

    if (protocol == "zero-shot") {
        write_text(dir / "resolved_config.txt", resolved_text("eval-retrieval", r, model.config().canonical(), nullptr));
        report = eval::zero_shot_retrieval(model, loaded.vocab, test_set);
    } else if (protocol == "linear-probe") {
        const auto train_set = load_set(required(m, "train_manifest"));
        eval::ProbeConfig pc;
        pc.steps = m.get_int("probe_steps", pc.steps);
        pc.batch_size = m.get_int("probe_batch_size", pc.batch_size);
        pc.lr = m.get_double("probe_lr", pc.lr);
        pc.seed = static_cast<std::uint64_t>(seed);
        r.set("probe_steps", std::to_string(pc.steps));
        r.set("probe_batch_size", std::to_string(pc.batch_size));
        r.set("probe_lr", cfg::format_double(pc.lr));
        write_text(dir / "resolved_config.txt", resolved_text("eval-retrieval", r, model.config().canonical(), nullptr));
        report = eval::linear_probe(model, loaded.vocab, {&train_set.records, &train_set.images}, test_set, pc);
    } else if (protocol == "fine-tune" || protocol == "few-shot") {
        tc = train::train_config_from(m);
        trains = true;
        auto train_set = load_set(required(m, "train_manifest"));
        double percent = 100;
        if (protocol == "few-shot") {
            percent = m.get_double("percent", 10);
            const auto kept = eval::few_shot_split(train_set.records, percent, tc.seed);
            std::vector<Tensor> imgs;
            std::size_t cursor = 0;
            for (const auto& rec : kept) {
                while (!(train_set.records[cursor] == rec)) ++cursor;
                imgs.push_back(train_set.images[cursor++]);
            }
            train_set.records = kept;
            train_set.images = std::move(imgs);
            r.set("percent", cfg::format_double(percent));
            log("few-shot: kept " + std::to_string(kept.size()) + " training records");
        }
        write_text(dir / "resolved_config.txt", resolved_text("eval-retrieval", r, model.config().canonical(), &tc));
        if (train_set.records.empty()) {
            report = eval::zero_shot_retrieval(model, loaded.vocab, test_set);
        } else {
            auto io = train_io(dir, train_set.base, m, log);
            report = eval::finetune_eval(model, loaded.vocab, {&train_set.records, &train_set.images}, test_set, tc, io);
        }
        if (protocol == "few-shot") {
            char name[48];
            std::snprintf(name, sizeof name, "few-shot:%g%%", percent);
            report.protocol = name;
        }
    } else {
        throw ConfigError("unknown protocol '" + protocol + "' (zero-shot, linear-probe, fine-tune, few-shot)");
    }
    report.seed = static_cast<std::uint64_t>(seed);
    (void)trains;
    write_json(dir / "reports" / "metrics.json", report.to_json());
    write_text(dir / "reports" / "metrics.txt", eval::render_table({{report.protocol, report}}));
    log(eval::render_table({{report.protocol, report}}));
}

void cmd_eval_attr(const cfg::ConfigMap& m, const fs::path& dir, RunLog& log) {
    const auto ck_path = resolve_checkpoint(required(m, "checkpoint"));
    auto loaded = train::load_plip(ck_path);
    const auto set = load_set(required(m, "manifest"));
    const auto bank = m.has("bank") ? eval::AttributeSentenceBank::load(m.get_string("bank", ""))
                                    : eval::default_attribute_bank();
    write_text(dir / "resolved_config.txt", resolved_text("eval-attr", m, loaded.model->config().canonical(), nullptr));
    write_json(dir / "reports" / "bank.json", bank.to_json());
    const auto report = eval::zero_shot_attributes(*loaded.model, loaded.vocab, {&set.records, &set.images}, bank);
    write_json(dir / "reports" / "attributes.json", report.to_json());
    char line[128];
    std::snprintf(line, sizeof line, "mA %.2f  Acc %.2f  F1 %.2f", *report.attr_ma * 100, *report.attr_acc * 100,
                  *report.attr_f1 * 100);
    log(line);
}

void cmd_ablate(const cfg::ConfigMap& m, const fs::path& dir, RunLog& log) {
    const auto set = load_set(required(m, "manifest"));
    const auto vocab = data::Vocabulary::from_records(set.records);
    eval::AblationConfig ac;
    ac.model = train::plip_config_from(m, vocab.size());
    ac.train = train::train_config_from(m);
    if (m.has("subsets")) {
        ac.subsets.clear();
        std::stringstream ss(m.get_string("subsets", ""));
        std::string item;
        while (std::getline(ss, item, ';'))
            if (!item.empty()) ac.subsets.push_back(eval::TaskSet::parse(item));
    }
    ac.seeds.clear();
    for (auto s : m.get_int_list("seeds", {0, 1, 2})) {
        if (s < 0) throw ConfigError("seeds must be non-negative");
        ac.seeds.push_back(static_cast<std::uint64_t>(s));
    }
    ac.test_fraction = m.get_double("test_fraction", ac.test_fraction);
    ac.split_seed = static_cast<std::uint64_t>(m.get_int("split_seed", 0));
    cfg::ConfigMap r = m;
    std::string subsets;
    for (const auto& t : ac.subsets) subsets += (subsets.empty() ? "" : ";") + t.name();
    r.set("subsets", subsets);
    std::vector<std::int64_t> seeds(ac.seeds.begin(), ac.seeds.end());
    r.set("seeds", cfg::join_ints(seeds));
    r.set("test_fraction", cfg::format_double(ac.test_fraction));
    r.set("split_seed", std::to_string(ac.split_seed));
    r.set("lambda1", cfg::format_double(ac.model.weights.lambda1));
    r.set("lambda2", cfg::format_double(ac.model.weights.lambda2));
    write_text(dir / "resolved_config.txt", resolved_text("ablate", r, ac.model.canonical(), &ac.train));
    const auto table = eval::ablation_run(set.records, set.images, vocab, ac, [&log](const std::string& s) { log(s); });
    write_json(dir / "reports" / "ablation.json", table.to_json());
    write_text(dir / "reports" / "ablation.txt", table.render());
    log(table.render());
}

using Handler = void (*)(const cfg::ConfigMap&, const fs::path&, RunLog&);

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"PLIP language-image pre-training lab"};
    app.name(args.empty() ? "plip" : fs::path(args[0]).filename().string());
    app.require_subcommand(1);
    app.footer("exit codes: 0 ok, 2 usage, 3 config error, 4 data error, 5 numeric error");

    std::list<Sub> subs;
    std::map<CLI::App*, Handler> handlers;
    auto make = [&](const std::string& name, const std::string& help, Handler h,
                    const std::vector<std::pair<std::string, std::string>>& flags) {
        subs.emplace_back();
        auto& s = subs.back();
        s.app = app.add_subcommand(name, help);
        s.app->add_option("--config", s.config, "key=value config file; flags override it")->check(CLI::ExistingFile);
        s.app->add_option("--out", s.out, "output directory (created atomically)")->required();
        s.app->add_flag("--force", s.force, "replace an existing output directory");
        for (const auto& [flag, h2] : flags) s.flag(flag, h2);
        handlers[s.app] = h;
    };

    const std::pair<std::string, std::string> seed{"--seed", "random seed"}, epochs{"--epochs", "training epochs"},
        batch{"--batch-size", "batch size"}, lr{"--lr", "base learning rate"},
        manifest{"--manifest", "JSON Lines manifest"}, checkpoint{"--checkpoint", "checkpoint file or run directory"},
        optimizer{"--optimizer", "sgd or adam"}, max_steps{"--max-steps", "cap on the total step count"},
        interval{"--checkpoint-interval", "steps between checkpoints (0: initial and final only)"},
        resume{"--resume", "checkpoint to resume from"}, lambda1{"--lambda1", "colorization loss weight"},
        lambda2{"--lambda2", "attribute prediction loss weight"};

    make("synth-data", "write a procedural manifest", cmd_synth,
         {{"--ids", "number of identities"}, {"--per-id", "images per identity"}, seed, {"--height", "image height"},
          {"--width", "image width"}});
    make("train-plip", "pre-train the PLIP model", cmd_train_plip,
         {manifest, seed, epochs, batch, lr, lambda1, lambda2, {"--tasks", "comma list of vlm,sic,vap"}, optimizer,
          max_steps, interval, resume});
    make("train-spac", "train the caption generator", cmd_train_spac,
         {manifest, seed, epochs, batch, lr, {"--spac-lambda", "attribute loss weight"}, optimizer, max_steps, interval,
          resume});
    make("spac-generate", "caption images with a trained generator", cmd_generate,
         {checkpoint, manifest, {"--style", "style index (1-based) or spac_style_<k>"},
          {"--decode", "greedy or top-k"}, {"--top-k", "k for top-k sampling"}, seed});
    make("eval-retrieval", "text->image and image->image retrieval", cmd_eval_retrieval,
         {checkpoint, manifest, {"--train-manifest", "training manifest for probe / fine-tune / few-shot"},
          {"--protocol", "zero-shot, linear-probe, fine-tune or few-shot"},
          {"--percent", "few-shot percentage of training identities"}, seed, epochs, batch, lr, optimizer,
          {"--probe-steps", "linear probe steps"}});
    make("eval-attr", "zero-shot attribute recognition", cmd_eval_attr,
         {checkpoint, manifest, {"--bank", "attribute sentence bank (JSON)"}});
    make("ablate", "pretext-task ablation", cmd_ablate,
         {manifest, {"--seeds", "comma list of seeds"}, {"--subsets", "';'-separated task sets, e.g. vlm;vlm,sic,vap"},
          epochs, batch, lr, lambda1, lambda2, optimizer, {"--test-fraction", "held-out identity fraction"},
          {"--split-seed", "seed of the identity split"}});

    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n\n";
        // help of the subcommand being parsed, if any
        CLI::App* target = &app;
        for (auto& s : subs)
            if (s.app->parsed()) target = s.app;
        err << target->help();
        return kUsage;
    }

    const Sub* active = nullptr;
    for (const auto& s : subs)
        if (s.app->parsed()) active = &s;
    if (!active) {
        err << app.help();
        return kUsage;
    }
    const std::string name = active->app->get_name();
    try {
        const auto m = active->resolve();
        Staging stage(active->out, active->force);
        RunLog log(stage.dir() / "logs" / "run.log", out);
        handlers.at(active->app)(m, stage.dir(), log);
        stage.commit();
        return kOk;
    } catch (const Error& e) {
        err << name << ": " << category_name(e.category()) << " error: " << e.what() << '\n';
        switch (e.category()) {
            case ErrorCategory::config: return kConfigError;
            case ErrorCategory::data: return kDataError;
            case ErrorCategory::numeric: return kNumericError;
        }
        return kFailure;
    } catch (const fs::filesystem_error& e) {
        err << name << ": data error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::exception& e) {
        err << name << ": internal error: " << e.what() << '\n';
        return kFailure;
    }
}

int dispatch(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return dispatch(args, std::cout, std::cerr);
}

}  // namespace plip::cli
