#pragma once

#include <cstdint>

#include <torch/torch.h>

#include "spl/data.hpp"

namespace spl::model {

struct ModelConfig {
    int64_t c = 256;             // width of image features and semantic priors
    int64_t d = 64;              // teacher channels
    int64_t spade_hidden = 128;  // hidden width of the modulation parameter network
    int64_t n_spade_blocks = 8;
    int64_t n_prior_blocks = 5;
    int64_t disc_base = 64;  // first discriminator stage width
    bool use_spade = true;   // false: concatenate the prior once before plain residual blocks
    bool use_prior = true;   // false: "w/o S", the prior loss is dropped

    // Throws ConfigError.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

inline constexpr double kInstanceNormEps = 1e-5;

// Per-sample, per-channel (x - mean) / sqrt(var + eps) with biased variance and
// no learned affine parameters.
torch::Tensor instance_normalize(const torch::Tensor& x, double eps = kInstanceNormEps);

struct ModulationParams {
    torch::Tensor gamma;
    torch::Tensor beta;
};

// Spatially-adaptive modulation: gamma * IN(feature) + beta with (gamma, beta)
// predicted from the prior by conv3x3 -> ReLU -> {conv3x3, conv3x3}.
struct SpadeImpl : torch::nn::Module {
    SpadeImpl(int64_t feature_channels, int64_t prior_channels, int64_t hidden);

    ModulationParams params(const torch::Tensor& prior);
    torch::Tensor forward(const torch::Tensor& feature, const torch::Tensor& prior);

    torch::nn::Conv2d shared{nullptr}, gamma{nullptr}, beta{nullptr};
};
TORCH_MODULE(Spade);

// Two modulate -> ReLU -> conv3x3 stages plus a modulated 1x1 skip path.
struct SpadeResBlockImpl : torch::nn::Module {
    SpadeResBlockImpl(int64_t channels, int64_t prior_channels, int64_t hidden);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& prior);

    Spade norm_0{nullptr}, norm_1{nullptr}, norm_skip{nullptr};
    torch::nn::Conv2d conv_0{nullptr}, conv_1{nullptr}, conv_skip{nullptr};
};
TORCH_MODULE(SpadeResBlock);

// conv3x3 -> IN -> ReLU -> conv3x3 -> IN, identity skip.
struct PlainResBlockImpl : torch::nn::Module {
    explicit PlainResBlockImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv_0{nullptr}, conv_1{nullptr};
};
TORCH_MODULE(PlainResBlock);

// E_I: (corrupted, mask) at H x W -> (N, c, H/4, W/4).
struct ImageEncoderImpl : torch::nn::Module {
    explicit ImageEncoderImpl(int64_t c);
    torch::Tensor forward(const data::SourceView& input);

    torch::nn::Conv2d stem{nullptr}, down_0{nullptr}, down_1{nullptr};
};
TORCH_MODULE(ImageEncoder);

// E_S: (corrupted, mask) at 2H x 2W -> (N, c, H/4, W/4). Three stride-2
// convolutions followed by residual blocks.
struct SemanticLearnerImpl : torch::nn::Module {
    SemanticLearnerImpl(int64_t c, int64_t n_blocks);
    torch::Tensor forward(const data::EnlargedView& input);

    torch::nn::Conv2d down_0{nullptr}, down_1{nullptr}, down_2{nullptr};
    torch::nn::ModuleList blocks{nullptr};
};
TORCH_MODULE(SemanticLearner);

// 1x1 convolution mapping the learned prior (c channels) onto the teacher's d.
struct PriorAdapterImpl : torch::nn::Module {
    PriorAdapterImpl(int64_t c, int64_t d);
    torch::Tensor forward(const torch::Tensor& prior);

    torch::nn::Conv2d proj{nullptr};
};
TORCH_MODULE(PriorAdapter);

// Residual trunk at H/4 followed by two nearest x2 + conv3x3 stages and a
// tanh output convolution.
struct GeneratorImpl : torch::nn::Module {
    explicit GeneratorImpl(const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& feature, const torch::Tensor& prior);

    ModelConfig config;
    torch::nn::ModuleList spade_blocks{nullptr};
    torch::nn::Conv2d fuse{nullptr};  // concat ablation only
    torch::nn::ModuleList plain_blocks{nullptr};
    torch::nn::Conv2d up_0{nullptr}, up_1{nullptr}, out{nullptr};
};
TORCH_MODULE(Generator);

// Convolution whose weight is divided by its largest singular value, estimated
// with one power iteration per training-mode forward.
struct SpectralConv2dImpl : torch::nn::Module {
    SpectralConv2dImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding);
    torch::Tensor forward(const torch::Tensor& x);
    torch::Tensor normalized_weight();

    torch::Tensor weight_orig, bias, u;
    int64_t stride, padding;
};
TORCH_MODULE(SpectralConv2d);

// Four stride-2 stages and a stride-1 scoring convolution; sigmoid scores, one
// per 16x16 patch stride.
struct PatchDiscriminatorImpl : torch::nn::Module {
    explicit PatchDiscriminatorImpl(int64_t base);
    torch::Tensor forward(const torch::Tensor& image);

    torch::nn::ModuleList stages{nullptr};
    SpectralConv2d score{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

struct ForwardResult {
    torch::Tensor output;   // (N, 3, H, W)
    torch::Tensor feature;  // F_m (N, c, H/4, W/4)
    torch::Tensor prior;    // S_m (N, c, H/4, W/4)
    torch::Tensor adapted;  // S'_m (N, d, H/4, W/4)
};

// Generator side of the model: E_I, E_S, the 1x1 adapter and the decoder.
struct SplNetImpl : torch::nn::Module {
    explicit SplNetImpl(const ModelConfig& config);
    ForwardResult forward(const data::MaskedSample& sample);

    ModelConfig config;
    ImageEncoder image_encoder{nullptr};
    SemanticLearner semantic_learner{nullptr};
    PriorAdapter adapter{nullptr};
    Generator generator{nullptr};
};
TORCH_MODULE(SplNet);

// output * mask + image * (1 - mask)
torch::Tensor composite(const torch::Tensor& output, const data::MaskedSample& sample);

}  // namespace spl::model
