#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spl/losses.hpp"
#include "spl/model.hpp"
#include "spl/teacher.hpp"

namespace spl::config {

struct TrainConfig {
    std::string profile = "places2";
    double lr_initial = 1e-4;
    double lr_finetune = 1e-5;
    double beta1 = 0.0;
    double beta2 = 0.9;
    int64_t decay_epoch = 30;
    int64_t finetune_epochs = 10;
    int64_t batch_size = 8;
    int64_t max_steps = 0;  // > 0 overrides the epoch budget
    uint64_t seed = 0;
    int64_t log_every = 1;
    int64_t checkpoint_every = 0;  // steps; 0 writes only the final checkpoint

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct DataConfig {
    std::string image_dir;
    std::string mask_dir;  // empty: generate masks
    int64_t image_size = 256;
    bool center_crop = false;
    double fill = 0.0;
    std::vector<std::string> mask_buckets{"0%-10%", "10%-20%", "20%-30%", "30%-40%", "40%-50%", "50%-60%"};
    int64_t generated_masks = 120;  // spread evenly over mask_buckets
    uint64_t mask_seed = 0;

    void validate() const;
    bool operator==(const DataConfig&) const = default;
};

struct TeacherConfig {
    std::string name = "standin";  // "standin" or the name of a registry entry
    uint64_t seed = 7;
    std::string alternate;  // registry entry used by the alt-teacher ablation
    std::vector<teacher::RegistryEntry> registry;

    bool operator==(const TeacherConfig&) const;
};

struct EvalConfig {
    bool composite = true;
    uint64_t pairing_seed = 0;

    bool operator==(const EvalConfig&) const = default;
};

struct RunConfig {
    model::ModelConfig model;
    losses::LossConfig loss;
    TrainConfig train;
    DataConfig data;
    TeacherConfig teacher;
    EvalConfig eval;

    void validate() const;
};

// Named presets. "places2", "celeba" and "streetview" carry the published
// optimizer schedule at full width; "desk" is a CPU-sized variant.
RunConfig preset(std::string_view profile);
std::vector<std::string> preset_names();

nlohmann::json to_json(const RunConfig& config);
RunConfig from_json(const nlohmann::json& doc);

// Copies `patch` into `base`; every key of `patch` must already exist in
// `base` with a compatible type. Throws ConfigError naming the offending key.
void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& where = "");

// "a.b.c=value"; value is parsed as JSON when possible, otherwise as a string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

// Starts from the preset named by the file's "train.profile" (or `profile`),
// merges the file strictly, then the overrides.
RunConfig resolve(const std::filesystem::path& file, const std::vector<std::string>& overrides,
                  std::string_view profile = "places2");

// The configured teacher; its channel count must equal model.d.
teacher::Teacher make_teacher(const RunConfig& config);

}  // namespace spl::config
