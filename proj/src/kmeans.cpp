#include "spl/kmeans.hpp"

#include <limits>
#include <random>
#include <set>

#include <opencv2/imgproc.hpp>

#include "spl/errors.hpp"

namespace spl::viz {

namespace {

double squared_distance(const double* a, const double* b, int64_t dim) {
    double s = 0.0;
    for (int64_t j = 0; j < dim; ++j) {
        const double diff = a[j] - b[j];
        s += diff * diff;
    }
    return s;
}

int64_t count_distinct(const double* data, int64_t n, int64_t dim) {
    std::set<std::vector<double>> seen;
    for (int64_t i = 0; i < n; ++i) seen.emplace(data + i * dim, data + (i + 1) * dim);
    return static_cast<int64_t>(seen.size());
}

}  // namespace

KMeansResult kmeans(const torch::Tensor& points, int64_t k, uint64_t seed) {
    if (k < 2) throw ConfigError("k-means needs k >= 2, got " + std::to_string(k));
    if (points.dim() != 2 || points.size(0) == 0) throw DimensionError("k-means expects a non-empty (n, dim) tensor");

    const auto x = points.detach().to(torch::kCPU, torch::kFloat64).contiguous();
    const int64_t n = x.size(0);
    const int64_t dim = x.size(1);
    const double* data = x.data_ptr<double>();

    KMeansResult result;
    const int64_t distinct = count_distinct(data, n, dim);
    result.k_used = std::min(k, distinct);
    result.reduced_k = result.k_used < k;
    const int64_t kk = result.k_used;

    // k-means++ seeding
    std::mt19937_64 rng(seed);
    std::vector<double> centroids(static_cast<std::size_t>(kk * dim));
    std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    auto set_centroid = [&](int64_t c, int64_t point) {
        std::copy(data + point * dim, data + (point + 1) * dim, centroids.begin() + c * dim);
        for (int64_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], squared_distance(data + i * dim, &centroids[c * dim], dim));
        }
    };
    set_centroid(0, std::uniform_int_distribution<int64_t>(0, n - 1)(rng));
    for (int64_t c = 1; c < kk; ++c) {
        // kk <= distinct guarantees some point has positive distance.
        std::discrete_distribution<int64_t> pick(nearest.begin(), nearest.end());
        set_centroid(c, pick(rng));
    }

    result.labels.assign(static_cast<std::size_t>(n), -1);
    std::vector<double> sums(centroids.size());
    std::vector<int64_t> counts(static_cast<std::size_t>(kk));
    for (result.iterations = 0; result.iterations < kMaxIterations;) {
        bool changed = false;
        for (int64_t i = 0; i < n; ++i) {
            int64_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int64_t c = 0; c < kk; ++c) {
                const double d = squared_distance(data + i * dim, &centroids[c * dim], dim);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (result.labels[i] != best) {
                result.labels[i] = best;
                changed = true;
            }
        }
        ++result.iterations;
        if (!changed) break;

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int64_t i = 0; i < n; ++i) {
            const int64_t c = result.labels[i];
            ++counts[c];
            for (int64_t j = 0; j < dim; ++j) sums[c * dim + j] += data[i * dim + j];
        }
        for (int64_t c = 0; c < kk; ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its centroid
            for (int64_t j = 0; j < dim; ++j) centroids[c * dim + j] = sums[c * dim + j] / counts[c];
        }
    }

    result.centroids = torch::from_blob(centroids.data(), {kk, dim}, torch::kFloat64).clone();
    return result;
}

torch::Tensor feature_points(const torch::Tensor& feature_map) {
    if (feature_map.dim() != 4 || feature_map.size(0) != 1) {
        throw DimensionError("feature_points expects a (1, C, h, w) map");
    }
    const int64_t c = feature_map.size(1);
    return feature_map.detach()[0].reshape({c, -1}).t().contiguous();
}

const std::array<cv::Vec3b, 16>& palette() {
    static const std::array<cv::Vec3b, 16> colors{{
        {230, 25, 75},   {60, 180, 75},   {255, 225, 25},  {0, 130, 200},
        {245, 130, 48},  {145, 30, 180},  {70, 240, 240},  {240, 50, 230},
        {210, 245, 60},  {250, 190, 212}, {0, 128, 128},   {220, 190, 255},
        {170, 110, 40},  {255, 250, 200}, {128, 0, 0},     {0, 0, 128},
    }};
    return colors;
}

cv::Mat colorize_labels(const std::vector<int64_t>& labels, int h, int w, int out_h, int out_w) {
    if (static_cast<int64_t>(labels.size()) != static_cast<int64_t>(h) * w) {
        throw DimensionError("label count does not match the label map size");
    }
    cv::Mat small(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) small.at<cv::Vec3b>(y, x) = palette()[labels[y * w + x] % 16];
    }
    cv::Mat out;
    cv::resize(small, out, cv::Size(out_w, out_h), 0, 0, cv::INTER_NEAREST);
    return out;
}

}  // namespace spl::viz
