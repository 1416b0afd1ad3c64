#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <torch/torch.h>

namespace spl::losses {

enum class GanVariant {
    // -mean(log(1 - D(fake))), the saturating form.
    PaperLiteral,
    // -mean(log D(fake)).
    NonSaturating,
};

GanVariant parse_gan_variant(std::string_view name);
std::string_view to_string(GanVariant variant);

struct LossConfig {
    double lambda_img = 10.0;
    double lambda_adv = 1.0;
    double lambda_prior = 1.0;
    double alpha = 3.0;  // extra weight of holes in the prior loss
    double delta = 5.0;  // extra weight of holes in the reconstruction loss
    GanVariant gan_variant = GanVariant::NonSaturating;
    bool use_prior = true;

    void validate() const;
    bool operator==(const LossConfig&) const = default;
};

inline constexpr double kScoreClamp = 1e-7;

// Nearest-neighbour resize of M to the teacher's spatial size.
torch::Tensor resize_mask_to(const torch::Tensor& mask, const torch::Tensor& like);

// mean(|S - S'_m| * (1 + alpha * M_s)); mask_s is (N, 1, h, w) and broadcasts over channels.
torch::Tensor prior_loss(const torch::Tensor& target, const torch::Tensor& adapted, const torch::Tensor& mask_s,
                         double alpha);

// mean(|I - I_hat| * (1 + delta * M)); the mask broadcasts over the colour channels.
torch::Tensor reconstruction_loss(const torch::Tensor& original, const torch::Tensor& output,
                                  const torch::Tensor& mask, double delta);

torch::Tensor generator_adv_loss(const torch::Tensor& fake_scores, GanVariant variant);

// -mean(log D(real)) - mean(log(1 - D(fake))), the minimized form.
torch::Tensor discriminator_adv_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);

// lambda_img * l_img + lambda_adv * l_adv + lambda_prior * l_prior, the prior
// term omitted when use_prior is false.
torch::Tensor objective(const torch::Tensor& l_img, const torch::Tensor& l_adv_g, const torch::Tensor& l_prior,
                        const LossConfig& config);

struct LossComponents {
    double l_img = 0.0;
    double l_prior = 0.0;
    double l_adv_g = 0.0;
    double l_adv_d = 0.0;
};

struct LossReport {
    double l_img = 0.0;
    double l_prior = 0.0;
    double l_adv_g = 0.0;
    double l_adv_d = 0.0;
    double total = 0.0;

    bool operator==(const LossReport&) const = default;
};

// Throws DivergenceError when any component is not finite.
LossReport total_loss(const LossComponents& components, const LossConfig& config);

std::string log_header();
std::string log_row(int64_t step, const LossReport& report, double lr);

}  // namespace spl::losses
