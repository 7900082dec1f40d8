#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "plip/checkpoint.hpp"
#include "plip/config.hpp"
#include "plip/pretext.hpp"
#include "plip/spac.hpp"

namespace plip::train {

struct TrainConfig {
    std::int64_t epochs = 20;
    std::int64_t batch_size = 16;
    double base_lr = 0.05;
    std::vector<std::int64_t> milestones;
    double decay = 0.1;
    std::uint64_t seed = 0;
    std::int64_t checkpoint_interval = 0;  // steps; 0 keeps only the initial and final checkpoints
    std::int64_t max_steps = -1;           // optional cap on the total step count
    std::string optimizer = "sgd";         // sgd | adam
    double momentum = 0.9;
    double weight_decay = 0.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 0.0;  // global L2 norm; 0 disables
    std::int64_t images_per_identity = 2;

    void validate() const;
    /// 70 epochs, batch 512, lr 1e-3 decayed by 10x at epochs 30 and 50.
    static TrainConfig schedule_preset();
};

/// Pure function of the epoch: base_lr * decay^(number of milestones <= epoch).
double lr_at_epoch(const TrainConfig& cfg, std::int64_t epoch);

class Optimizer {
public:
    Optimizer(const TrainConfig& cfg, const nn::ParamStore& store);
    void step(nn::ParamStore& store, double lr);
    void save_state(ckpt::Checkpoint& ck) const;
    void load_state(const ckpt::Checkpoint& ck);

private:
    TrainConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::int64_t t_ = 0;
};

/// Scales all gradients so their global L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(nn::ParamStore& store, double max_norm);

/// Record indices per batch for one epoch. Each identity's images are split into
/// groups of `images_per_identity`, groups are shuffled and then cut into batches.
std::vector<std::vector<std::size_t>> identity_batches(const std::vector<data::PersonRecord>& records,
                                                       std::int64_t batch_size, std::int64_t images_per_identity,
                                                       std::uint64_t seed);

/// Worker count from PLIP_NUM_WORKERS (default 1).
std::size_t worker_count();
std::vector<Tensor> load_images(const std::vector<data::PersonRecord>& records, const std::filesystem::path& base_dir);

pt::PlipBatch make_plip_batch(const std::vector<data::PersonRecord>& records, const std::vector<std::size_t>& indices,
                              const std::vector<Tensor>& color, const data::Vocabulary& vocab,
                              const pt::PlipConfig& cfg, std::uint64_t seed);

struct StepLog {
    std::int64_t step = 0;
    double loss = 0;
    std::vector<double> terms;  // PLIP: vlm, sic, vap. SPAC: caption nll, attribute nll, nats/token
    double lr = 0;
};

struct TrainIO {
    std::filesystem::path checkpoint_dir;  // empty: no checkpoints
    std::filesystem::path loss_csv;        // empty: no CSV
    std::filesystem::path image_base;
    std::filesystem::path resume_from;
    std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
    std::vector<std::filesystem::path> checkpoints;
    std::vector<StepLog> log;
    std::int64_t final_step = 0;
};

TrainResult train_plip(pt::PlipModel& model, const std::vector<data::PersonRecord>& records,
                       const data::Vocabulary& vocab, const TrainConfig& cfg, const TrainIO& io = {},
                       const std::vector<Tensor>* images = nullptr);

TrainResult train_spac(spac::SpacModel& model, const std::vector<data::PersonRecord>& records,
                       const data::Vocabulary& vocab, const TrainConfig& cfg, const TrainIO& io = {},
                       const std::vector<Tensor>* images = nullptr);

/// Style index of the j-th sample of an epoch.
inline std::int64_t round_robin_style(std::int64_t epoch, std::int64_t position, std::int64_t n_styles) {
    return (epoch + position) % n_styles;
}

// Config binding: the same keys are used by config files, checkpoints and the CLI.
std::vector<std::string> model_config_keys();
std::vector<std::string> train_config_keys();
pt::PlipConfig plip_config_from(const cfg::ConfigMap& m, std::int64_t vocab_size);
spac::SpacConfig spac_config_from(const cfg::ConfigMap& m, std::int64_t vocab_size);
TrainConfig train_config_from(const cfg::ConfigMap& m);
std::string train_config_text(const TrainConfig& c);

ckpt::Checkpoint make_checkpoint(const std::string& kind, const std::string& config_text,
                                 const nn::ParamStore& store, const data::Vocabulary& vocab, std::int64_t step);

struct LoadedPlip {
    std::unique_ptr<pt::PlipModel> model;
    data::Vocabulary vocab;
    std::int64_t step = 0;
};
struct LoadedSpac {
    std::unique_ptr<spac::SpacModel> model;
    data::Vocabulary vocab;
    std::int64_t step = 0;
};
LoadedPlip load_plip(const std::filesystem::path& path);
LoadedSpac load_spac(const std::filesystem::path& path);

}  // namespace plip::train
