#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace spl::viz {

inline constexpr int64_t kDefaultClusters = 8;
inline constexpr int kMaxIterations = 100;

struct KMeansResult {
    std::vector<int64_t> labels;      // one per point
    torch::Tensor centroids;          // (k_used, dim), float64
    int64_t k_used = 0;
    int iterations = 0;
    bool reduced_k = false;           // fewer distinct points than requested k
};

// Lloyd iterations from a k-means++ seeding drawn with mt19937_64(seed). Stops
// at an assignment fixpoint or after kMaxIterations. Ties go to the lower index.
KMeansResult kmeans(const torch::Tensor& points, int64_t k, uint64_t seed);

// (1, C, h, w) feature map -> (h * w, C) points in row-major spatial order.
torch::Tensor feature_points(const torch::Tensor& feature_map);

// Fixed 16-colour table (RGB). Cluster i is drawn with palette()[i % 16].
const std::array<cv::Vec3b, 16>& palette();

// Colours an h x w label map and upsamples it to out_h x out_w with nearest neighbour.
// Returns an 8-bit RGB matrix.
cv::Mat colorize_labels(const std::vector<int64_t>& labels, int h, int w, int out_h, int out_w);

}  // namespace spl::viz
