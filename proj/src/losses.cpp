#include "spl/losses.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "spl/errors.hpp"

namespace F = torch::nn::functional;

namespace spl::losses {

namespace {

void require_same(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) {
        std::ostringstream msg;
        msg << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
        throw DimensionError(msg.str());
    }
}

void require_mask_for(const torch::Tensor& mask, const torch::Tensor& like, const char* what) {
    if (mask.dim() != 4 || like.dim() != 4 || mask.size(1) != 1 || mask.size(0) != like.size(0) ||
        mask.size(2) != like.size(2) || mask.size(3) != like.size(3)) {
        std::ostringstream msg;
        msg << what << ": mask " << mask.sizes() << " does not align with " << like.sizes();
        throw DimensionError(msg.str());
    }
}

torch::Tensor clamp_scores(const torch::Tensor& scores) {
    return scores.clamp(kScoreClamp, 1.0 - kScoreClamp);
}

}  // namespace

GanVariant parse_gan_variant(std::string_view name) {
    if (name == "paper-literal") return GanVariant::PaperLiteral;
    if (name == "nonsaturating") return GanVariant::NonSaturating;
    throw ConfigError("unknown gan variant '" + std::string(name) + "'");
}

std::string_view to_string(GanVariant variant) {
    return variant == GanVariant::PaperLiteral ? "paper-literal" : "nonsaturating";
}

void LossConfig::validate() const {
    if (lambda_img < 0 || lambda_adv < 0 || lambda_prior < 0 || alpha < 0 || delta < 0) {
        throw ConfigError("loss weights must be non-negative");
    }
}

torch::Tensor resize_mask_to(const torch::Tensor& mask, const torch::Tensor& like) {
    return F::interpolate(mask, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{like.size(2), like.size(3)})
                                    .mode(torch::kNearest));
}

torch::Tensor prior_loss(const torch::Tensor& target, const torch::Tensor& adapted, const torch::Tensor& mask_s,
                         double alpha) {
    require_same(target, adapted, "prior_loss");
    require_mask_for(mask_s, target, "prior_loss");
    return ((target - adapted).abs() * (1.0 + alpha * mask_s)).mean();
}

torch::Tensor reconstruction_loss(const torch::Tensor& original, const torch::Tensor& output,
                                  const torch::Tensor& mask, double delta) {
    require_same(original, output, "reconstruction_loss");
    require_mask_for(mask, original, "reconstruction_loss");
    return ((original - output).abs() * (1.0 + delta * mask)).mean();
}

torch::Tensor generator_adv_loss(const torch::Tensor& fake_scores, GanVariant variant) {
    auto s = clamp_scores(fake_scores);
    if (variant == GanVariant::PaperLiteral) {
        return -torch::log(1.0 - s).mean();
    }
    return -torch::log(s).mean();
}

torch::Tensor discriminator_adv_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
    auto real = clamp_scores(real_scores);
    auto fake = clamp_scores(fake_scores);
    return -torch::log(real).mean() - torch::log(1.0 - fake).mean();
}

torch::Tensor objective(const torch::Tensor& l_img, const torch::Tensor& l_adv_g, const torch::Tensor& l_prior,
                        const LossConfig& config) {
    auto total = config.lambda_img * l_img + config.lambda_adv * l_adv_g;
    if (config.use_prior) total = total + config.lambda_prior * l_prior;
    return total;
}

LossReport total_loss(const LossComponents& c, const LossConfig& config) {
    if (!std::isfinite(c.l_img) || !std::isfinite(c.l_prior) || !std::isfinite(c.l_adv_g) ||
        !std::isfinite(c.l_adv_d)) {
        std::ostringstream msg;
        msg << "training diverged: l_img=" << c.l_img << " l_prior=" << c.l_prior << " l_adv_g=" << c.l_adv_g
            << " l_adv_d=" << c.l_adv_d;
        throw DivergenceError(msg.str());
    }
    LossReport r;
    r.l_img = c.l_img;
    r.l_prior = config.use_prior ? c.l_prior : 0.0;
    r.l_adv_g = c.l_adv_g;
    r.l_adv_d = c.l_adv_d;
    r.total = config.lambda_img * r.l_img + config.lambda_adv * r.l_adv_g + config.lambda_prior * r.l_prior;
    return r;
}

std::string log_header() { return "step,l_img,l_prior,l_adv_g,l_adv_d,total,lr\n"; }

std::string log_row(int64_t step, const LossReport& r, double lr) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(step), r.l_img,
                  r.l_prior, r.l_adv_g, r.l_adv_d, r.total, lr);
    return buf;
}

}  // namespace spl::losses
