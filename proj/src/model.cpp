#include "spl/model.hpp"

#include <cmath>
#include <sstream>

#include "spl/errors.hpp"

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace spl::model {

namespace {

nn::Conv2dOptions conv_options(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding,
                               bool bias = true) {
    return nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(bias);
}

torch::Tensor leaky(const torch::Tensor& x) {
    return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2));
}

torch::Tensor upsample2x(const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kNearest));
}

void require_input(const torch::Tensor& t, int64_t channels, const char* what) {
    if (!t.defined() || t.dim() != 4 || t.size(1) != channels) {
        std::ostringstream msg;
        msg << what << ": expected (N, " << channels << ", H, W)";
        if (t.defined()) msg << ", got " << t.sizes();
        throw DimensionError(msg.str());
    }
}

void require_aligned(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.size(0) != b.size(0) || a.size(2) != b.size(2) || a.size(3) != b.size(3)) {
        std::ostringstream msg;
        msg << what << ": misaligned inputs " << a.sizes() << " vs " << b.sizes();
        throw DimensionError(msg.str());
    }
}

void require_divisible(const torch::Tensor& t, int64_t factor, const char* what) {
    if (t.size(2) % factor != 0 || t.size(3) % factor != 0) {
        std::ostringstream msg;
        msg << what << ": spatial size " << t.size(2) << "x" << t.size(3) << " must be divisible by " << factor;
        throw DimensionError(msg.str());
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (c < 4 || c % 4 != 0) throw ConfigError("model.c must be a positive multiple of 4");
    if (d < 1) throw ConfigError("model.d must be >= 1");
    if (spade_hidden < 1) throw ConfigError("model.spade_hidden must be >= 1");
    if (n_spade_blocks < 1) throw ConfigError("model.n_spade_blocks must be >= 1");
    if (n_prior_blocks < 0) throw ConfigError("model.n_prior_blocks must be >= 0");
    if (disc_base < 1) throw ConfigError("model.disc_base must be >= 1");
}

torch::Tensor instance_normalize(const torch::Tensor& x, double eps) {
    auto mean = x.mean({2, 3}, /*keepdim=*/true);
    auto centered = x - mean;
    auto var = centered.pow(2).mean({2, 3}, /*keepdim=*/true);
    return centered / torch::sqrt(var + eps);
}

// ---------------------------------------------------------------------------
// SPADE
// ---------------------------------------------------------------------------

SpadeImpl::SpadeImpl(int64_t feature_channels, int64_t prior_channels, int64_t hidden) {
    shared = register_module("shared", nn::Conv2d(conv_options(prior_channels, hidden, 3, 1, 1)));
    gamma = register_module("gamma", nn::Conv2d(conv_options(hidden, feature_channels, 3, 1, 1)));
    beta = register_module("beta", nn::Conv2d(conv_options(hidden, feature_channels, 3, 1, 1)));
    // Start close to plain instance normalization.
    torch::NoGradGuard no_grad;
    gamma->bias.fill_(1.0);
}

ModulationParams SpadeImpl::params(const torch::Tensor& prior) {
    auto hidden = F::relu(shared->forward(prior));
    return {gamma->forward(hidden), beta->forward(hidden)};
}

torch::Tensor SpadeImpl::forward(const torch::Tensor& feature, const torch::Tensor& prior) {
    require_aligned(feature, prior, "spade_modulate");
    auto [g, b] = params(prior);
    if (g.size(1) != feature.size(1)) {
        throw DimensionError("spade_modulate: feature has " + std::to_string(feature.size(1)) +
                             " channels, modulation emits " + std::to_string(g.size(1)));
    }
    return g * instance_normalize(feature) + b;
}

SpadeResBlockImpl::SpadeResBlockImpl(int64_t channels, int64_t prior_channels, int64_t hidden) {
    norm_0 = register_module("norm_0", Spade(channels, prior_channels, hidden));
    norm_1 = register_module("norm_1", Spade(channels, prior_channels, hidden));
    norm_skip = register_module("norm_skip", Spade(channels, prior_channels, hidden));
    // Every conv output here is instance-normalized downstream, so a bias would be inert.
    conv_0 = register_module("conv_0", nn::Conv2d(conv_options(channels, channels, 3, 1, 1, false)));
    conv_1 = register_module("conv_1", nn::Conv2d(conv_options(channels, channels, 3, 1, 1, false)));
    conv_skip = register_module("conv_skip", nn::Conv2d(conv_options(channels, channels, 1, 1, 0, false)));
}

torch::Tensor SpadeResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& prior) {
    auto dx = conv_0->forward(F::relu(norm_0->forward(x, prior)));
    dx = conv_1->forward(F::relu(norm_1->forward(dx, prior)));
    auto skip = conv_skip->forward(norm_skip->forward(x, prior));
    return skip + dx;
}

PlainResBlockImpl::PlainResBlockImpl(int64_t channels) {
    conv_0 = register_module("conv_0", nn::Conv2d(conv_options(channels, channels, 3, 1, 1, false)));
    conv_1 = register_module("conv_1", nn::Conv2d(conv_options(channels, channels, 3, 1, 1, false)));
}

torch::Tensor PlainResBlockImpl::forward(const torch::Tensor& x) {
    auto dx = F::relu(instance_normalize(conv_0->forward(x)));
    dx = instance_normalize(conv_1->forward(dx));
    return x + dx;
}

// ---------------------------------------------------------------------------
// Encoders
// ---------------------------------------------------------------------------

ImageEncoderImpl::ImageEncoderImpl(int64_t c) {
    stem = register_module(
        "stem", nn::Conv2d(conv_options(4, c / 4, 7, 1, 3).padding_mode(torch::kReflect)));
    down_0 = register_module("down_0", nn::Conv2d(conv_options(c / 4, c / 2, 4, 2, 1)));
    down_1 = register_module("down_1", nn::Conv2d(conv_options(c / 2, c, 4, 2, 1, false)));
}

torch::Tensor ImageEncoderImpl::forward(const data::SourceView& input) {
    require_input(input.corrupted, 3, "image_encode(corrupted)");
    require_input(input.mask, 1, "image_encode(mask)");
    require_aligned(input.corrupted, input.mask, "image_encode");
    require_divisible(input.corrupted, 4, "image_encode");

    auto x = torch::cat({input.corrupted, input.mask}, 1);
    x = leaky(stem->forward(x));
    x = leaky(down_0->forward(x));
    return down_1->forward(x);
}

SemanticLearnerImpl::SemanticLearnerImpl(int64_t c, int64_t n_blocks) {
    down_0 = register_module("down_0", nn::Conv2d(conv_options(4, c / 4, 4, 2, 1)));
    down_1 = register_module("down_1", nn::Conv2d(conv_options(c / 4, c / 2, 4, 2, 1)));
    down_2 = register_module("down_2", nn::Conv2d(conv_options(c / 2, c, 4, 2, 1)));
    blocks = register_module("blocks", nn::ModuleList());
    for (int64_t i = 0; i < n_blocks; ++i) {
        nn::Sequential block(nn::Conv2d(conv_options(c, c, 3, 1, 1)),
                             nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)),
                             nn::Conv2d(conv_options(c, c, 3, 1, 1)));
        blocks->push_back(block);
    }
}

torch::Tensor SemanticLearnerImpl::forward(const data::EnlargedView& input) {
    require_input(input.corrupted, 3, "semantic_encode(corrupted_up)");
    require_input(input.mask, 1, "semantic_encode(mask_up)");
    require_aligned(input.corrupted, input.mask, "semantic_encode");
    require_divisible(input.corrupted, 8, "semantic_encode");

    auto x = torch::cat({input.corrupted, input.mask}, 1);
    x = leaky(down_0->forward(x));
    x = leaky(down_1->forward(x));
    x = leaky(down_2->forward(x));
    for (const auto& block : *blocks) {
        x = x + block->as<nn::Sequential>()->forward(x);
    }
    return x;
}

PriorAdapterImpl::PriorAdapterImpl(int64_t c, int64_t d) {
    proj = register_module("proj", nn::Conv2d(conv_options(c, d, 1, 1, 0)));
}

torch::Tensor PriorAdapterImpl::forward(const torch::Tensor& prior) {
    require_input(prior, proj->options.in_channels(), "adapt_prior");
    return proj->forward(prior);
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

GeneratorImpl::GeneratorImpl(const ModelConfig& cfg) : config(cfg) {
    config.validate();
    const int64_t c = config.c;
    if (config.use_spade) {
        spade_blocks = register_module("spade_blocks", nn::ModuleList());
        for (int64_t i = 0; i < config.n_spade_blocks; ++i) {
            spade_blocks->push_back(SpadeResBlock(c, c, config.spade_hidden));
        }
    } else {
        fuse = register_module("fuse", nn::Conv2d(conv_options(2 * c, c, 1, 1, 0, false)));
        plain_blocks = register_module("plain_blocks", nn::ModuleList());
        for (int64_t i = 0; i < config.n_spade_blocks; ++i) {
            plain_blocks->push_back(PlainResBlock(c));
        }
    }
    up_0 = register_module("up_0", nn::Conv2d(conv_options(c, c / 2, 3, 1, 1)));
    up_1 = register_module("up_1", nn::Conv2d(conv_options(c / 2, c / 4, 3, 1, 1)));
    out = register_module("out",
                          nn::Conv2d(conv_options(c / 4, 3, 7, 1, 3).padding_mode(torch::kReflect)));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& feature, const torch::Tensor& prior) {
    // A width other than config.c means the encoders and decoder were built
    // from different configurations.
    for (const auto* t : {&feature, &prior}) {
        if (t->defined() && t->dim() == 4 && t->size(1) != config.c) {
            throw ConfigError("decode: input has " + std::to_string(t->size(1)) + " channels but model.c = " +
                              std::to_string(config.c));
        }
    }
    require_input(feature, config.c, "decode(feature)");
    require_input(prior, config.c, "decode(prior)");
    require_aligned(feature, prior, "decode");

    torch::Tensor x;
    if (config.use_spade) {
        x = feature;
        for (const auto& block : *spade_blocks) {
            x = block->as<SpadeResBlock>()->forward(x, prior);
        }
    } else {
        x = fuse->forward(torch::cat({feature, prior}, 1));
        for (const auto& block : *plain_blocks) {
            x = block->as<PlainResBlock>()->forward(x);
        }
    }
    x = F::relu(x);
    x = F::relu(up_0->forward(upsample2x(x)));
    x = F::relu(up_1->forward(upsample2x(x)));
    return torch::tanh(out->forward(x));
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

SpectralConv2dImpl::SpectralConv2dImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride_,
                                       int64_t padding_)
    : stride(stride_), padding(padding_) {
    weight_orig = register_parameter("weight_orig", torch::empty({out, in, kernel, kernel}));
    bias = register_parameter("bias", torch::empty({out}));
    u = register_buffer("u", torch::empty({out}));

    torch::NoGradGuard no_grad;
    nn::init::kaiming_uniform_(weight_orig, std::sqrt(5.0));
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
    bias.uniform_(-bound, bound);
    u.normal_();
    u.div_(u.norm().clamp_min(1e-12));
}

torch::Tensor SpectralConv2dImpl::normalized_weight() {
    auto mat = weight_orig.view({weight_orig.size(0), -1});
    torch::Tensor u_now, v_now;
    {
        torch::NoGradGuard no_grad;
        auto wd = mat.detach();
        v_now = F::normalize(torch::mv(wd.t(), u), F::NormalizeFuncOptions().dim(0).eps(1e-12));
        if (is_training()) {
            u.copy_(F::normalize(torch::mv(wd, v_now), F::NormalizeFuncOptions().dim(0).eps(1e-12)));
            v_now = F::normalize(torch::mv(wd.t(), u), F::NormalizeFuncOptions().dim(0).eps(1e-12));
        }
        u_now = u.clone();
    }
    auto sigma = torch::dot(u_now, torch::mv(mat, v_now));
    return weight_orig / sigma;
}

torch::Tensor SpectralConv2dImpl::forward(const torch::Tensor& x) {
    return F::conv2d(x, normalized_weight(), F::Conv2dFuncOptions().bias(bias).stride(stride).padding(padding));
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int64_t base) {
    stages = register_module("stages", nn::ModuleList());
    int64_t in = 3;
    for (int64_t i = 0; i < 4; ++i) {
        const int64_t out = base << i;
        stages->push_back(SpectralConv2d(in, out, 4, 2, 1));
        in = out;
    }
    score = register_module("score", SpectralConv2d(in, 1, 3, 1, 1));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& image) {
    require_input(image, 3, "discriminate");
    auto x = image;
    for (const auto& stage : *stages) {
        x = leaky(stage->as<SpectralConv2d>()->forward(x));
    }
    return torch::sigmoid(score->forward(x));
}

// ---------------------------------------------------------------------------
// Full generator side
// ---------------------------------------------------------------------------

SplNetImpl::SplNetImpl(const ModelConfig& cfg) : config(cfg) {
    config.validate();
    image_encoder = register_module("image_encoder", ImageEncoder(config.c));
    semantic_learner = register_module("semantic_learner", SemanticLearner(config.c, config.n_prior_blocks));
    adapter = register_module("adapter", PriorAdapter(config.c, config.d));
    generator = register_module("generator", Generator(config));
}

ForwardResult SplNetImpl::forward(const data::MaskedSample& sample) {
    ForwardResult r;
    r.feature = image_encoder->forward(sample.source());
    r.prior = semantic_learner->forward(sample.enlarged);
    r.adapted = adapter->forward(r.prior);
    r.output = generator->forward(r.feature, r.prior);
    return r;
}

torch::Tensor composite(const torch::Tensor& output, const data::MaskedSample& sample) {
    if (output.sizes() != sample.image.sizes()) {
        std::ostringstream msg;
        msg << "composite: output " << output.sizes() << " vs image " << sample.image.sizes();
        throw DimensionError(msg.str());
    }
    return output * sample.mask + sample.image * (1 - sample.mask);
}

}  // namespace spl::model
