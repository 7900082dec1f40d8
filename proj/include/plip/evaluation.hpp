#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "plip/trainer.hpp"

namespace plip::eval {

struct RetrievalIndex {
    Tensor gallery;  // [N, d]
    std::vector<std::int64_t> gallery_ids;
    Tensor queries;  // [M, d]
    std::vector<std::int64_t> query_ids;

    void validate() const;
};

/// [M, N] cosine similarities between query rows and gallery rows.
Tensor cosine_similarity(const Tensor& queries, const Tensor& gallery);

/// Gallery indices by descending similarity; ties go to the lower index.
std::vector<std::size_t> ranking(const Tensor& sim, std::size_t query);

double rank_at_k(const Tensor& sim, const std::vector<std::int64_t>& query_ids,
                 const std::vector<std::int64_t>& gallery_ids, std::int64_t k);
double mean_ap(const Tensor& sim, const std::vector<std::int64_t>& query_ids,
               const std::vector<std::int64_t>& gallery_ids);
double rank_at_k(const RetrievalIndex& index, std::int64_t k);
double mean_ap(const RetrievalIndex& index);

struct MetricsReport {
    std::string protocol;  // zero-shot | linear-probe | fine-tune | few-shot:<p>%
    std::optional<double> r1, r5, r10, map;           // text -> image
    std::optional<double> cmc1, cmc5, cmc10, i2i_map;  // image -> image
    std::optional<double> attr_ma, attr_acc, attr_f1;
    std::map<std::string, double> attr_groups;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::int64_t queries = 0, gallery = 0;

    nlohmann::json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

struct EvalSet {
    const std::vector<data::PersonRecord>* records = nullptr;
    const std::vector<Tensor>* images = nullptr;
};

/// Optional per-modality linear maps applied after the frozen encoders.
struct Probe {
    nn::ParamStore store;
    nn::Linear visual, textual;

    Probe(std::int64_t dim);
    Tensor apply_visual(const Tensor& x) const;
    Tensor apply_textual(const Tensor& x) const;
};

/// Text->image over every caption, plus image->image with the first image of each
/// identity as query and the remaining images as gallery.
MetricsReport evaluate_retrieval(const pt::PlipModel& model, const data::Vocabulary& vocab, const EvalSet& set,
                                 const std::string& protocol, const Probe* probe = nullptr);

MetricsReport zero_shot_retrieval(const pt::PlipModel& model, const data::Vocabulary& vocab, const EvalSet& test);

struct ProbeConfig {
    std::int64_t steps = 200;
    std::int64_t batch_size = 16;
    double lr = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 0;
};

/// Trains only the probe, on embeddings of the frozen backbone.
MetricsReport linear_probe(const pt::PlipModel& model, const data::Vocabulary& vocab, const EvalSet& train,
                           const EvalSet& test, const ProbeConfig& cfg, Probe* probe_out = nullptr);

/// Trains the whole model with the matching loss only, then evaluates it.
MetricsReport finetune_eval(pt::PlipModel& model, const data::Vocabulary& vocab, const EvalSet& train,
                            const EvalSet& test, const train::TrainConfig& cfg, const train::TrainIO& io = {});

/// Keeps ceil(p * N_id / 100) identities, chosen by seed, with all their records (order preserved).
std::vector<data::PersonRecord> few_shot_split(const std::vector<data::PersonRecord>& records, double percent,
                                               std::uint64_t seed);

/// Seeded identity-disjoint split; the second part holds round(fraction * N_id) identities.
std::pair<std::vector<data::PersonRecord>, std::vector<data::PersonRecord>> split_identities(
    const std::vector<data::PersonRecord>& records, double test_fraction, std::uint64_t seed);

struct AttributeCandidate {
    std::string label;
    std::string sentence;
    std::string match;  // phrase looked up in the record's attribute text
};

struct AttributeGroup {
    std::string name;
    std::string slot;
    std::vector<AttributeCandidate> candidates;
};

struct AttributeSentenceBank {
    std::vector<AttributeGroup> groups;

    void validate() const;
    nlohmann::json to_json() const;
    static AttributeSentenceBank from_json(const nlohmann::json& j);
    static AttributeSentenceBank load(const std::filesystem::path& path);
};

/// Groups for the procedural dataset: gender, headwear, garment types and the upper-body color.
AttributeSentenceBank default_attribute_bank();

/// Index of the first candidate whose phrase occurs (as whole tokens) in the record, or -1.
std::int64_t ground_truth(const AttributeGroup& g, const data::PersonRecord& rec);

struct AttributePredictions {
    std::vector<std::vector<std::int64_t>> predicted;  // [group][sample]
    std::vector<std::vector<std::int64_t>> truth;
};

/// Argmax cosine per group between image embeddings [N,d] and sentence embeddings.
std::vector<std::int64_t> predict_group(const Tensor& image_emb, const Tensor& sentence_emb);

/// mA (mean of (TPR+TNR)/2 over candidate labels), instance accuracy and F1, per-group accuracy.
MetricsReport attribute_metrics(const AttributeSentenceBank& bank, const AttributePredictions& p);

MetricsReport zero_shot_attributes(const pt::PlipModel& model, const data::Vocabulary& vocab, const EvalSet& set,
                                   const AttributeSentenceBank& bank);

struct TaskSet {
    bool vlm = false, sic = false, vap = false;
    std::string name() const;
    static TaskSet parse(const std::string& text);  // e.g. "vlm,sic"
    pt::LossWeights weights(double lambda1, double lambda2, double epsilon) const;
};

/// The seven non-empty subsets in table order.
std::vector<TaskSet> all_task_subsets();

struct AblationConfig {
    std::vector<TaskSet> subsets = all_task_subsets();
    std::vector<std::uint64_t> seeds{0, 1, 2};
    double test_fraction = 0.3;
    std::uint64_t split_seed = 0;
    pt::PlipConfig model;
    train::TrainConfig train;
};

struct Summary {
    double mean = 0, std = 0;  // std uses the n-1 denominator; 0 for a single value
};
Summary summarize(const std::vector<double>& v);

struct AblationRow {
    TaskSet tasks;
    std::vector<MetricsReport> runs;  // one per seed
    std::map<std::string, Summary> summary;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    nlohmann::json to_json() const;
    std::string render() const;
    const AblationRow* find(const std::string& name) const;
};

AblationTable ablation_run(const std::vector<data::PersonRecord>& records, const std::vector<Tensor>& images,
                           const data::Vocabulary& vocab, const AblationConfig& cfg,
                           const std::function<void(const std::string&)>& progress = {});

/// Plain-text rows: method | R@1 | R@5 | R@10 | mAP | cmc1.
std::string render_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace plip::eval
