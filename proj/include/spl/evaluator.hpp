#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "spl/data.hpp"
#include "spl/model.hpp"

namespace spl::eval {

// Metrics take images in [0, 1] with identical shapes, (N, C, H, W) or (C, H, W).

inline constexpr double kMseFloor = 1e-12;  // caps PSNR at 120 dB

struct MetricTriple {
    double psnr = 0.0;
    double ssim = 0.0;
    double mae = 0.0;
};

double mae(const torch::Tensor& reference, const torch::Tensor& candidate);
double psnr(const torch::Tensor& reference, const torch::Tensor& candidate);

// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
// C2 = 0.03^2, averaged over valid window positions and channels.
double ssim(const torch::Tensor& reference, const torch::Tensor& candidate);

MetricTriple measure(const torch::Tensor& reference, const torch::Tensor& candidate);

// [-1, 1] -> [0, 1]
torch::Tensor to_unit_range(const torch::Tensor& image);

struct SampleResult {
    std::string image_id;
    std::string mask_id;
    double ratio = 0.0;
    MetricTriple metrics;
};

struct ReportRow {
    std::string label;
    int64_t count = 0;
    MetricTriple mean;  // NaN when count == 0
};

// Six bucket rows, then "20%-40%", "40%-60%" and "All". Aggregate rows average
// their samples directly rather than the bucket means.
struct BucketedReport {
    std::vector<ReportRow> rows;
    std::vector<SampleResult> samples;

    const ReportRow& row(std::string_view label) const;
    std::string to_csv() const;
    nlohmann::json to_json() const;
};

BucketedReport aggregate(std::vector<SampleResult> samples);

// Produces the raw (N, 3, H, W) output in [-1, 1] for a sample.
using Inpainter = std::function<torch::Tensor(const data::MaskedSample&)>;

Inpainter model_inpainter(model::SplNet net);

// Runs every manifest pair in order. Throws ProtocolError when the manifest
// names unknown images or masks, or leaves dataset images unpaired.
BucketedReport evaluate(const Inpainter& inpaint, std::span<const data::NamedTensor> images,
                        std::span<const data::NamedTensor> masks, std::span<const data::PairEntry> pairing,
                        bool composite, double fill = data::kDefaultFill);

// One CSV per run keyed by run name: columns run, metric, buckets..., All.
std::string comparison_csv(const std::vector<std::pair<std::string, BucketedReport>>& runs);

}  // namespace spl::eval
