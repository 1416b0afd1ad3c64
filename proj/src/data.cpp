#include "spl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "spl/errors.hpp"

namespace F = torch::nn::functional;
namespace fs = std::filesystem;

namespace spl::data {

namespace {

void require_nchw(const torch::Tensor& t, int64_t channels, std::string_view what) {
    if (!t.defined() || t.dim() != 4 || t.size(1) != channels) {
        std::ostringstream msg;
        msg << what << ": expected (N, " << channels << ", H, W)";
        if (t.defined()) msg << ", got " << t.sizes();
        throw DimensionError(msg.str());
    }
}

void require_same_spatial(const torch::Tensor& a, const torch::Tensor& b, std::string_view what) {
    if (a.size(0) != b.size(0) || a.size(2) != b.size(2) || a.size(3) != b.size(3)) {
        std::ostringstream msg;
        msg << what << ": misaligned inputs " << a.sizes() << " vs " << b.sizes();
        throw DimensionError(msg.str());
    }
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

bool has_image_extension(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

cv::Mat load_rgb(const fs::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) {
        throw DecodeError("cannot decode image " + path.string());
    }
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return rgb;
}

torch::Tensor preprocess(const cv::Mat& raw, int64_t target_size, bool center_crop) {
    if (target_size <= 0 || target_size % 4 != 0) {
        throw ConfigError("target size must be a positive multiple of 4, got " +
                          std::to_string(target_size));
    }
    if (raw.empty() || raw.type() != CV_8UC3) {
        throw DecodeError("preprocess expects an 8-bit 3-channel RGB image");
    }

    cv::Mat view = raw;
    if (center_crop && raw.rows != raw.cols) {
        const int side = std::min(raw.rows, raw.cols);
        const cv::Rect roi((raw.cols - side) / 2, (raw.rows - side) / 2, side, side);
        view = raw(roi);
    }

    cv::Mat resized;
    const int t = static_cast<int>(target_size);
    if (view.rows == t && view.cols == t) {
        resized = view.clone();
    } else {
        const bool shrinking = view.rows >= t && view.cols >= t;
        cv::resize(view, resized, cv::Size(t, t), 0.0, 0.0, shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
    }
    if (!resized.isContinuous()) resized = resized.clone();

    auto tensor = torch::from_blob(resized.data, {t, t, 3}, torch::kUInt8)
                      .permute({2, 0, 1})
                      .to(torch::kFloat32)
                      .div(127.5)
                      .sub(1.0);
    return tensor.unsqueeze(0).contiguous();
}

torch::Tensor load_mask(const fs::path& path) {
    cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (gray.empty()) {
        throw DecodeError("cannot decode mask " + path.string());
    }
    if (!gray.isContinuous()) gray = gray.clone();
    auto pixels = torch::from_blob(gray.data, {1, 1, gray.rows, gray.cols}, torch::kUInt8);
    return pixels.ge(128).to(torch::kFloat32);
}

torch::Tensor resize_mask(const torch::Tensor& mask, int64_t height, int64_t width) {
    require_nchw(mask, 1, "resize_mask");
    if (mask.size(2) == height && mask.size(3) == width) return mask;
    return F::interpolate(mask, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{height, width})
                                    .mode(torch::kNearest));
}

void save_mask_png(const torch::Tensor& mask, const fs::path& path) {
    require_nchw(mask, 1, "save_mask_png");
    auto pixels = mask[0][0].mul(255).to(torch::kUInt8).contiguous();
    cv::Mat gray(static_cast<int>(pixels.size(0)), static_cast<int>(pixels.size(1)), CV_8UC1,
                 pixels.data_ptr());
    if (!cv::imwrite(path.string(), gray)) {
        throw Error("cannot write " + path.string());
    }
}

torch::Tensor corrupt(const torch::Tensor& image, const torch::Tensor& mask, double fill) {
    require_nchw(image, 3, "corrupt(image)");
    require_nchw(mask, 1, "corrupt(mask)");
    require_same_spatial(image, mask, "corrupt");
    return image * (1 - mask) + fill * mask;
}

EnlargedView upsample_pair(const torch::Tensor& image, const torch::Tensor& mask, double fill) {
    require_nchw(image, 3, "upsample_pair(image)");
    require_nchw(mask, 1, "upsample_pair(mask)");
    require_same_spatial(image, mask, "upsample_pair");

    const std::vector<double> scale{2.0, 2.0};
    auto image_up = F::interpolate(image, F::InterpolateFuncOptions()
                                              .scale_factor(scale)
                                              .mode(torch::kBilinear)
                                              .align_corners(false));
    auto mask_up =
        F::interpolate(mask, F::InterpolateFuncOptions().scale_factor(scale).mode(torch::kNearest));
    auto corrupted_up = corrupt(image_up, mask_up, fill);
    return {image_up, corrupted_up, mask_up};
}

MaskedSample make_sample(const torch::Tensor& image, const torch::Tensor& mask, double fill) {
    MaskedSample sample;
    sample.image = image;
    sample.mask = mask;
    sample.corrupted = corrupt(image, mask, fill);
    sample.enlarged = upsample_pair(image, mask, fill);
    return sample;
}

double mask_ratio(const torch::Tensor& mask) {
    if (!mask.defined() || mask.numel() == 0) {
        throw DimensionError("mask_ratio: empty mask");
    }
    return mask.sum(torch::kFloat64).item<double>() / static_cast<double>(mask.numel());
}

std::size_t bucket_index(double ratio) {
    if (!(ratio >= 0.0) || ratio >= kRatioBuckets.back().upper) {
        std::ostringstream msg;
        msg << "mask ratio " << ratio << " lies outside the evaluation protocol [0, 0.6)";
        throw ProtocolError(msg.str());
    }
    for (std::size_t i = 0; i < kRatioBuckets.size(); ++i) {
        if (kRatioBuckets[i].contains(ratio)) return i;
    }
    throw ProtocolError("unreachable bucket lookup");
}

const RatioBucket& bucket_of(double ratio) { return kRatioBuckets[bucket_index(ratio)]; }

const RatioBucket& bucket_by_label(std::string_view label) {
    for (const auto& bucket : kRatioBuckets) {
        if (bucket.label == label) return bucket;
    }
    throw ConfigError("unknown mask bucket '" + std::string(label) + "'");
}

uint64_t derive_seed(uint64_t seed, uint64_t index) {
    return splitmix64(splitmix64(seed) ^ (index * 0xd1b54a32d192ed03ULL + 1));
}

torch::Tensor generate_irregular_mask(uint64_t seed, const RatioBucket& bucket, int64_t height,
                                      int64_t width) {
    if (height <= 0 || width <= 0 || height % 4 != 0 || width % 4 != 0) {
        throw ConfigError("mask size must be positive multiples of 4");
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int h = static_cast<int>(height);
    const int w = static_cast<int>(width);
    const double total = static_cast<double>(height * width);
    const int side = std::min(h, w);

    // Aim for the middle of the interval so small overshoots stay inside it.
    const double target = bucket.lower + (bucket.upper - bucket.lower) * (0.25 + 0.5 * unit(rng));

    cv::Mat canvas = cv::Mat::zeros(h, w, CV_8UC1);
    double ratio = 0.0;
    double max_thickness = std::max(2.0, side / 8.0);
    double max_length = std::max(4.0, side / 4.0);

    constexpr int kMaxStrokeAttempts = 2000;
    for (int attempt = 0; attempt < kMaxStrokeAttempts && ratio < target; ++attempt) {
        cv::Mat trial = canvas.clone();
        cv::Point2d point(unit(rng) * w, unit(rng) * h);
        double angle = unit(rng) * 2.0 * M_PI;
        const int vertices = 2 + static_cast<int>(unit(rng) * 8);
        for (int v = 0; v < vertices; ++v) {
            angle += (unit(rng) - 0.5) * 1.5;
            const double length = 2.0 + unit(rng) * max_length;
            const int thickness = 1 + static_cast<int>(unit(rng) * max_thickness);
            cv::Point2d next(std::clamp(point.x + length * std::cos(angle), 0.0, w - 1.0),
                             std::clamp(point.y + length * std::sin(angle), 0.0, h - 1.0));
            cv::line(trial, point, next, cv::Scalar(255), thickness, cv::LINE_8);
            cv::circle(trial, next, thickness / 2, cv::Scalar(255), cv::FILLED, cv::LINE_8);
            point = next;
        }
        const double trial_ratio = cv::countNonZero(trial) / total;
        if (trial_ratio < bucket.upper) {
            canvas = trial;
            ratio = trial_ratio;
        } else {
            max_thickness = std::max(1.0, max_thickness * 0.7);
            max_length = std::max(2.0, max_length * 0.7);
        }
    }

    if (!bucket.contains(ratio)) {
        std::ostringstream msg;
        msg << "mask generation missed bucket " << bucket.label << " (achieved ratio " << ratio << ")";
        throw GenerationError(msg.str(), ratio);
    }

    auto pixels = torch::from_blob(canvas.data, {1, 1, height, width}, torch::kUInt8);
    return pixels.gt(0).to(torch::kFloat32);
}

std::vector<PairEntry> build_eval_pairing(std::span<const std::string> image_ids,
                                          std::span<const std::string> mask_ids, uint64_t seed) {
    if (image_ids.empty() || mask_ids.empty()) {
        throw ConfigError("evaluation pairing needs non-empty image and mask pools");
    }
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(mask_ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<PairEntry> pairs;
    pairs.reserve(image_ids.size());
    std::size_t cursor = order.size();
    for (const auto& image_id : image_ids) {
        if (cursor == order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        pairs.push_back({image_id, mask_ids[order[cursor++]]});
    }
    return pairs;
}

std::string format_manifest(std::span<const PairEntry> pairs) {
    std::string out;
    for (const auto& p : pairs) {
        out += p.image_id;
        out += '\t';
        out += p.mask_id;
        out += '\n';
    }
    return out;
}

std::vector<PairEntry> parse_manifest(std::string_view text) {
    std::vector<PairEntry> pairs;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto eol = text.find('\n');
        auto line = text.substr(0, eol);
        text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos || tab == 0 || tab + 1 == line.size() ||
            line.find('\t', tab + 1) != std::string_view::npos) {
            throw ProtocolError("malformed manifest line " + std::to_string(line_no));
        }
        pairs.push_back({std::string(line.substr(0, tab)), std::string(line.substr(tab + 1))});
    }
    return pairs;
}

void write_manifest(const fs::path& path, std::span<const PairEntry> pairs) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write manifest " + path.string());
    out << format_manifest(pairs);
}

std::vector<PairEntry> read_manifest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ProtocolError("cannot read manifest " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_manifest(buffer.str());
}

std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw ConfigError("not a directory: " + dir.string());
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && has_image_extension(entry.path())) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

std::vector<NamedTensor> load_image_dir(const fs::path& dir, int64_t target_size, bool center_crop) {
    std::vector<NamedTensor> images;
    for (const auto& file : list_images(dir)) {
        images.push_back({file.stem().string(), preprocess(load_rgb(file), target_size, center_crop)});
    }
    return images;
}

std::vector<NamedTensor> load_mask_dir(const fs::path& dir, int64_t height, int64_t width) {
    std::vector<NamedTensor> masks;
    for (const auto& file : list_images(dir)) {
        masks.push_back({file.stem().string(), resize_mask(load_mask(file), height, width)});
    }
    return masks;
}

cv::Mat to_rgb8(const torch::Tensor& image) {
    require_nchw(image, 3, "to_rgb8");
    auto pixels = image[0]
                      .detach()
                      .to(torch::kFloat32)
                      .add(1.0)
                      .mul(127.5)
                      .round()
                      .clamp(0, 255)
                      .to(torch::kUInt8)
                      .permute({1, 2, 0})
                      .contiguous();
    cv::Mat rgb(static_cast<int>(pixels.size(0)), static_cast<int>(pixels.size(1)), CV_8UC3,
                pixels.data_ptr());
    return rgb.clone();
}

void save_image_png(const torch::Tensor& image, const fs::path& path) {
    cv::Mat bgr;
    cv::cvtColor(to_rgb8(image), bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path.string(), bgr)) {
        throw Error("cannot write " + path.string());
    }
}

cv::Mat render_synthetic_scene(uint64_t seed, int size) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto colour = [&] { return cv::Vec3d(unit(rng) * 255, unit(rng) * 255, unit(rng) * 255); };

    cv::Mat scene(size, size, CV_8UC3);
    const cv::Vec3d top = colour();
    const cv::Vec3d bottom = colour();
    const double tilt = unit(rng) - 0.5;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double t = std::clamp((y + tilt * x) / static_cast<double>(size), 0.0, 1.0);
            const cv::Vec3d c = top * (1 - t) + bottom * t;
            scene.at<cv::Vec3b>(y, x) = cv::Vec3b(cv::saturate_cast<uchar>(c[0]),
                                                  cv::saturate_cast<uchar>(c[1]),
                                                  cv::saturate_cast<uchar>(c[2]));
        }
    }

    const int shapes = 2 + static_cast<int>(unit(rng) * 3);
    for (int i = 0; i < shapes; ++i) {
        const cv::Vec3d c = colour();
        const cv::Scalar fill(c[0], c[1], c[2]);
        const cv::Point centre(static_cast<int>(unit(rng) * size), static_cast<int>(unit(rng) * size));
        const int radius = std::max(2, static_cast<int>((0.1 + 0.25 * unit(rng)) * size));
        if (unit(rng) < 0.5) {
            cv::circle(scene, centre, radius, fill, cv::FILLED, cv::LINE_8);
        } else {
            const cv::Point corner(centre.x + radius, centre.y + static_cast<int>(radius * (0.5 + unit(rng))));
            cv::rectangle(scene, centre, corner, fill, cv::FILLED, cv::LINE_8);
        }
    }
    cv::GaussianBlur(scene, scene, cv::Size(0, 0), 1.0);
    return scene;
}

}  // namespace spl::data
