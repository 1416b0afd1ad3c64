#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "spl/errors.hpp"

namespace spl::teacher {

// The backbone layout named in a weight file is not in the registry.
class UnsupportedBackboneError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

// Per-backbone input statistics. Pipeline images in [-1, 1] are first mapped
// to [0, 1], then standardized with (x - mean) / std. The default maps back to
// [-1, 1] exactly.
struct InputNorm {
    std::array<double, 3> mean{0.5, 0.5, 0.5};
    std::array<double, 3> std{0.5, 0.5, 0.5};
};

// Stack of 4x4 stride-2 convolutions; stage i has native stride 2^(i+1).
struct BackboneLayout {
    std::string name;
    std::vector<int64_t> hidden_channels;  // widths of all stages but the last
};

const BackboneLayout& find_layout(const std::string& name);
std::vector<std::string> registered_layouts();

struct TeacherSpec {
    std::string name;
    int64_t out_channels = 0;
    int64_t native_stride = 8;
    static constexpr int64_t kDownsampleFactor = 8;
    static constexpr bool kFrozen = true;
};

// Registry entry as it appears in configuration files.
struct RegistryEntry {
    std::string name;
    std::string weights_path;
    std::string layout;
    int64_t layer = -1;  // stage index; -1 selects the last stage
    int64_t native_stride = 8;
    int64_t d = 64;
    InputNorm input_norm;
};

struct ConvStackImpl : torch::nn::Module {
    ConvStackImpl(int64_t in_channels, std::vector<int64_t> widths);

    // Runs stages [0, last_stage] with LeakyReLU(0.2) between them.
    torch::Tensor forward(torch::Tensor x, int64_t last_stage);

    int64_t num_stages() const { return static_cast<int64_t>(stages->size()); }
    int64_t stage_channels(int64_t stage) const { return widths_.at(static_cast<std::size_t>(stage)); }

    torch::nn::ModuleList stages{nullptr};

private:
    std::vector<int64_t> widths_;
};
TORCH_MODULE(ConvStack);

// Frozen feature extractor H. Every forward runs without autograd and all
// parameters have requires_grad == false.
class Teacher {
public:
    Teacher(TeacherSpec spec, std::string layout, ConvStack net, int64_t layer, InputNorm norm);

    const TeacherSpec& spec() const { return spec_; }
    const std::string& layout() const { return layout_; }

    // image_up: (N, 3, 2H, 2W) with 2H, 2W divisible by 8.
    // Returns (N, d, 2H/8, 2W/8), i.e. (N, d, H/4, W/4).
    torch::Tensor features(const torch::Tensor& image_up) const;

    // Output of the selected stage before the stride adapter.
    torch::Tensor native_features(const torch::Tensor& image_up) const;

    std::vector<torch::Tensor> parameters() const { return net_->parameters(); }

    // Raw parameter bytes; equal strings mean identical parameters.
    std::string weight_bytes() const;
    void save(const std::filesystem::path& path) const;
    void write(torch::serialize::OutputArchive& archive) const;

    // Registry entry that reloads this teacher from a written archive.
    RegistryEntry descriptor() const;

    void to(torch::Device device);

private:
    TeacherSpec spec_;
    std::string layout_;
    ConvStack net_;
    int64_t layer_;
    InputNorm norm_;
};

// Three stride-2 4x4 convolutions 3 -> 32 -> 64 -> d, weights drawn from `seed`.
Teacher build_standin_teacher(uint64_t seed, int64_t d);

// Same scheme on any registered layout; used to create alternative teachers.
Teacher build_seeded_teacher(const std::string& layout, uint64_t seed, int64_t d);

// Loads a weight file written by Teacher::save. The file's layout must be
// registered, the selected stage must emit `entry.d` channels, and a stage
// whose native stride differs from 8 is resampled bilinearly to stride 8.
Teacher load_external_teacher(const RegistryEntry& entry);

// Same checks as load_external_teacher, reading from an already opened archive.
Teacher read_teacher(torch::serialize::InputArchive& archive, const RegistryEntry& entry);

}  // namespace spl::teacher
