#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace spl::data {

// Images are float tensors (N, 3, H, W) in [-1, 1]; masks are float tensors
// (N, 1, H, W) holding exactly 0 or 1, with 1 marking a missing pixel.

inline constexpr double kDefaultFill = 0.0;

// Inputs of the image encoder: corrupted image and mask at the working size.
struct SourceView {
    torch::Tensor corrupted;
    torch::Tensor mask;
};

// Inputs of the semantic learner and the teacher, at twice the working size.
struct EnlargedView {
    torch::Tensor image;
    torch::Tensor corrupted;
    torch::Tensor mask;
};

struct MaskedSample {
    torch::Tensor image;
    torch::Tensor mask;
    torch::Tensor corrupted;
    EnlargedView enlarged;

    SourceView source() const { return {corrupted, mask}; }
    int64_t batch() const { return image.size(0); }
    int64_t height() const { return image.size(2); }
    int64_t width() const { return image.size(3); }
};

struct RatioBucket {
    std::string_view label;
    double lower;
    double upper;

    bool contains(double ratio) const { return ratio >= lower && ratio < upper; }
};

inline constexpr std::array<RatioBucket, 6> kRatioBuckets{{
    {"0%-10%", 0.0, 0.1},
    {"10%-20%", 0.1, 0.2},
    {"20%-30%", 0.2, 0.3},
    {"30%-40%", 0.3, 0.4},
    {"40%-50%", 0.4, 0.5},
    {"50%-60%", 0.5, 0.6},
}};

// ---------------------------------------------------------------------------
// Image and mask preparation
// ---------------------------------------------------------------------------

// Decodes an image file into an 8-bit RGB matrix.
cv::Mat load_rgb(const std::filesystem::path& path);

// `raw` must be CV_8UC3 in RGB order. Returns (1, 3, target, target) in [-1, 1].
// With `center_crop`, the largest centered square is taken before resizing.
torch::Tensor preprocess(const cv::Mat& raw, int64_t target_size, bool center_crop);

// Single-channel mask file; pixels >= 128 become 1. Returns (1, 1, H, W).
torch::Tensor load_mask(const std::filesystem::path& path);

// Nearest-neighbour resize that keeps the mask binary.
torch::Tensor resize_mask(const torch::Tensor& mask, int64_t height, int64_t width);

void save_mask_png(const torch::Tensor& mask, const std::filesystem::path& path);

// image * (1 - mask) + fill * mask
torch::Tensor corrupt(const torch::Tensor& image, const torch::Tensor& mask, double fill = kDefaultFill);

// Bilinear x2 for the image, nearest x2 for the mask; the corrupted image is
// recomputed from the upsampled pair so hole borders stay exact.
EnlargedView upsample_pair(const torch::Tensor& image, const torch::Tensor& mask,
                           double fill = kDefaultFill);

MaskedSample make_sample(const torch::Tensor& image, const torch::Tensor& mask,
                         double fill = kDefaultFill);

// ---------------------------------------------------------------------------
// Mask statistics and generation
// ---------------------------------------------------------------------------

// Fraction of ones over all elements.
double mask_ratio(const torch::Tensor& mask);

// Throws ProtocolError for ratios outside [0, 0.6).
const RatioBucket& bucket_of(double ratio);
std::size_t bucket_index(double ratio);
const RatioBucket& bucket_by_label(std::string_view label);

// Independent stream for worker `index` of a run seeded with `seed`.
uint64_t derive_seed(uint64_t seed, uint64_t index);

// Free-form strokes (random walks with random thickness) until the ratio falls
// inside `bucket`. Returns (1, 1, height, width). Deterministic in `seed`.
torch::Tensor generate_irregular_mask(uint64_t seed, const RatioBucket& bucket,
                                      int64_t height, int64_t width);

// ---------------------------------------------------------------------------
// Evaluation pairing
// ---------------------------------------------------------------------------

struct PairEntry {
    std::string image_id;
    std::string mask_id;

    bool operator==(const PairEntry&) const = default;
};

// One mask per image. Masks are drawn without repetition while the pool lasts.
std::vector<PairEntry> build_eval_pairing(std::span<const std::string> image_ids,
                                          std::span<const std::string> mask_ids, uint64_t seed);

std::string format_manifest(std::span<const PairEntry> pairs);
std::vector<PairEntry> parse_manifest(std::string_view text);
void write_manifest(const std::filesystem::path& path, std::span<const PairEntry> pairs);
std::vector<PairEntry> read_manifest(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Directories
// ---------------------------------------------------------------------------

struct NamedTensor {
    std::string id;  // file stem
    torch::Tensor tensor;
};

// All *.png / *.jpg / *.jpeg files, sorted by file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

std::vector<NamedTensor> load_image_dir(const std::filesystem::path& dir, int64_t target_size,
                                        bool center_crop);
std::vector<NamedTensor> load_mask_dir(const std::filesystem::path& dir, int64_t height,
                                       int64_t width);

// Converts (1, 3, H, W) in [-1, 1] to an 8-bit RGB matrix and back to disk.
cv::Mat to_rgb8(const torch::Tensor& image);
void save_image_png(const torch::Tensor& image, const std::filesystem::path& path);

// Procedural RGB scene (smooth background, a few soft shapes) for fixtures and demos.
cv::Mat render_synthetic_scene(uint64_t seed, int size);

}  // namespace spl::data
