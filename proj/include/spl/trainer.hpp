#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "spl/config.hpp"
#include "spl/data.hpp"
#include "spl/losses.hpp"
#include "spl/model.hpp"
#include "spl/teacher.hpp"

namespace spl::train {

inline constexpr int64_t kCheckpointSchemaVersion = 1;

// Step decay: lr_initial before decay_epoch, lr_finetune from then on.
double lr_schedule(int64_t epoch, const config::TrainConfig& train);

// max_steps when set, otherwise (decay_epoch + finetune_epochs) full epochs.
int64_t planned_steps(const config::TrainConfig& train, std::size_t n_images);

// Images and masks held in memory, each (1, C, H, W).
struct TrainingSet {
    std::vector<torch::Tensor> images;
    std::vector<torch::Tensor> masks;
    double fill = data::kDefaultFill;
};

// Loads the image directory and either the mask directory or a generated mask pool.
TrainingSet load_training_set(const config::RunConfig& config);

// Stroke masks spread evenly over the configured buckets.
std::vector<torch::Tensor> generate_mask_pool(const config::DataConfig& data, int64_t count);

// Shuffled image order per epoch (incomplete tail batches are dropped) and a
// uniformly drawn mask per sample. The whole state serializes to a string.
class BatchSampler {
public:
    BatchSampler(std::size_t n_images, std::size_t n_masks, int64_t batch_size, uint64_t seed);

    struct Batch {
        std::vector<std::size_t> images;
        std::vector<std::size_t> masks;
    };

    Batch next();
    int64_t epoch() const { return epoch_; }

    std::string state() const;
    void restore(const std::string& state);

private:
    void reshuffle();

    std::size_t n_images_;
    std::size_t n_masks_;
    int64_t batch_size_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    int64_t epoch_ = 0;
};

data::MaskedSample assemble(const TrainingSet& set, const BatchSampler::Batch& batch);

class Trainer {
public:
    Trainer(config::RunConfig config, teacher::Teacher teacher);

    // One discriminator update on detached outputs, then one update of
    // E_I, E_S, the adapter and the decoder against the weighted objective.
    // Throws DivergenceError on non-finite losses; l_img, l_prior and the
    // discriminator loss are checked before any parameter moves.
    losses::LossReport train_step(const data::MaskedSample& batch);

    // Draws batches from `set` until `steps` more steps have run; lr follows
    // lr_schedule on the sampler's epoch. Writes one CSV row per log interval.
    void fit(const TrainingSet& set, int64_t steps, std::ostream* log = nullptr,
             const std::function<void(int64_t, const losses::LossReport&)>& on_step = {});

    void set_learning_rate(double lr);
    double learning_rate() const { return lr_; }

    const config::RunConfig& config() const { return config_; }
    model::SplNet& net() { return net_; }
    model::PatchDiscriminator& discriminator() { return disc_; }
    const teacher::Teacher& teacher() const { return teacher_; }
    int64_t step() const { return step_; }
    int64_t epoch() const { return sampler_ ? sampler_->epoch() : 0; }
    const torch::optim::Adam& generator_optimizer() const { return *opt_g_; }
    const torch::optim::Adam& discriminator_optimizer() const { return *opt_d_; }

    void save_checkpoint(const std::filesystem::path& path) const;

private:
    friend Trainer load_checkpoint(const std::filesystem::path& path,
                                   const std::optional<model::ModelConfig>& expected);

    config::RunConfig config_;
    teacher::Teacher teacher_;
    model::SplNet net_{nullptr};
    model::PatchDiscriminator disc_{nullptr};
    std::unique_ptr<torch::optim::Adam> opt_g_;
    std::unique_ptr<torch::optim::Adam> opt_d_;
    std::optional<BatchSampler> sampler_;
    int64_t step_ = 0;
    double lr_ = 0.0;
};

// Rebuilds a trainer from a checkpoint. With `expected`, a different stored
// model configuration is a ConfigError. Unknown schema versions are refused.
Trainer load_checkpoint(const std::filesystem::path& path,
                        const std::optional<model::ModelConfig>& expected = std::nullopt);

struct CheckpointEntry {
    std::string name;
    std::string dtype;
    std::vector<int64_t> shape;
};

// Tensor listing stored in a checkpoint's manifest.
std::vector<CheckpointEntry> read_checkpoint_manifest(const std::filesystem::path& path);

}  // namespace spl::train
