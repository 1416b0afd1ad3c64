#include "spl/evaluator.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "spl/errors.hpp"

namespace F = torch::nn::functional;

namespace spl::eval {

namespace {

constexpr int64_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

torch::Tensor as_nchw_double(const torch::Tensor& t) {
    auto x = t.detach().to(torch::kFloat64);
    if (x.dim() == 3) x = x.unsqueeze(0);
    if (x.dim() != 4) throw DimensionError("metrics expect (N, C, H, W) or (C, H, W) images");
    return x;
}

void require_same(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes()) {
        std::ostringstream msg;
        msg << "metric inputs differ in shape: " << a.sizes() << " vs " << b.sizes();
        throw DimensionError(msg.str());
    }
}

torch::Tensor gaussian_window(int64_t channels) {
    auto coords = torch::arange(kWindow, torch::kFloat64) - (kWindow - 1) / 2.0;
    auto g = torch::exp(-coords.pow(2) / (2 * kSigma * kSigma));
    g = g / g.sum();
    return torch::outer(g, g).expand({channels, 1, kWindow, kWindow}).contiguous();
}

const std::vector<std::string>& row_labels() {
    static const std::vector<std::string> labels = [] {
        std::vector<std::string> l;
        for (const auto& b : data::kRatioBuckets) l.emplace_back(b.label);
        l.insert(l.end(), {"20%-40%", "40%-60%", "All"});
        return l;
    }();
    return labels;
}

bool in_row(const std::string& label, double ratio) {
    if (label == "All") return true;
    if (label == "20%-40%") return ratio >= 0.2 && ratio < 0.4;
    if (label == "40%-60%") return ratio >= 0.4 && ratio < 0.6;
    return data::bucket_of(ratio).label == label;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

nlohmann::json number_or_null(double v) { return std::isnan(v) ? nlohmann::json() : nlohmann::json(v); }

}  // namespace

torch::Tensor to_unit_range(const torch::Tensor& image) { return (image + 1.0) * 0.5; }

double mae(const torch::Tensor& reference, const torch::Tensor& candidate) {
    auto r = as_nchw_double(reference);
    auto c = as_nchw_double(candidate);
    require_same(r, c);
    return (r - c).abs().mean().item<double>();
}

double psnr(const torch::Tensor& reference, const torch::Tensor& candidate) {
    auto r = as_nchw_double(reference);
    auto c = as_nchw_double(candidate);
    require_same(r, c);
    const double mse = (r - c).pow(2).mean().item<double>();
    return 10.0 * std::log10(1.0 / std::max(mse, kMseFloor));
}

double ssim(const torch::Tensor& reference, const torch::Tensor& candidate) {
    auto x = as_nchw_double(reference);
    auto y = as_nchw_double(candidate);
    require_same(x, y);
    if (x.size(2) < kWindow || x.size(3) < kWindow) {
        throw ConfigError("SSIM needs images of at least 11x11 pixels");
    }
    const int64_t channels = x.size(1);
    auto w = gaussian_window(channels);
    auto filter = [&](const torch::Tensor& t) {
        return F::conv2d(t, w, F::Conv2dFuncOptions().groups(channels));
    };

    auto mu_x = filter(x);
    auto mu_y = filter(y);
    auto sigma_xx = filter(x * x) - mu_x * mu_x;
    auto sigma_yy = filter(y * y) - mu_y * mu_y;
    auto sigma_xy = filter(x * y) - mu_x * mu_y;

    auto map = ((2 * mu_x * mu_y + kC1) * (2 * sigma_xy + kC2)) /
               ((mu_x * mu_x + mu_y * mu_y + kC1) * (sigma_xx + sigma_yy + kC2));
    return map.mean().item<double>();
}

MetricTriple measure(const torch::Tensor& reference, const torch::Tensor& candidate) {
    return {psnr(reference, candidate), ssim(reference, candidate), mae(reference, candidate)};
}

const ReportRow& BucketedReport::row(std::string_view label) const {
    for (const auto& r : rows) {
        if (r.label == label) return r;
    }
    throw ConfigError("report has no row '" + std::string(label) + "'");
}

BucketedReport aggregate(std::vector<SampleResult> samples) {
    BucketedReport report;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& label : row_labels()) {
        ReportRow row{label, 0, {0.0, 0.0, 0.0}};
        for (const auto& s : samples) {
            if (!in_row(label, s.ratio)) continue;
            ++row.count;
            row.mean.psnr += s.metrics.psnr;
            row.mean.ssim += s.metrics.ssim;
            row.mean.mae += s.metrics.mae;
        }
        if (row.count == 0) {
            row.mean = {nan, nan, nan};
        } else {
            const auto n = static_cast<double>(row.count);
            row.mean = {row.mean.psnr / n, row.mean.ssim / n, row.mean.mae / n};
        }
        report.rows.push_back(row);
    }
    report.samples = std::move(samples);
    return report;
}

std::string BucketedReport::to_csv() const {
    std::string out = "metric";
    for (const auto& r : rows) out += "," + r.label;
    out += "\n";
    auto line = [&](const char* name, auto get) {
        out += name;
        for (const auto& r : rows) out += "," + get(r);
        out += "\n";
    };
    line("PSNR", [](const ReportRow& r) { return fmt(r.mean.psnr); });
    line("SSIM", [](const ReportRow& r) { return fmt(r.mean.ssim); });
    line("MAE", [](const ReportRow& r) { return fmt(r.mean.mae); });
    line("count", [](const ReportRow& r) { return std::to_string(r.count); });
    return out;
}

nlohmann::json BucketedReport::to_json() const {
    nlohmann::json doc;
    doc["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
        doc["rows"].push_back({{"label", r.label},
                               {"count", r.count},
                               {"psnr", number_or_null(r.mean.psnr)},
                               {"ssim", number_or_null(r.mean.ssim)},
                               {"mae", number_or_null(r.mean.mae)}});
    }
    doc["samples"] = nlohmann::json::array();
    for (const auto& s : samples) {
        doc["samples"].push_back({{"image_id", s.image_id},
                                  {"mask_id", s.mask_id},
                                  {"mask_ratio", s.ratio},
                                  {"bucket", std::string(data::bucket_of(s.ratio).label)},
                                  {"psnr", s.metrics.psnr},
                                  {"ssim", s.metrics.ssim},
                                  {"mae", s.metrics.mae}});
    }
    return doc;
}

Inpainter model_inpainter(model::SplNet net) {
    return [net](const data::MaskedSample& sample) mutable {
        torch::NoGradGuard no_grad;
        net->eval();
        return net->forward(sample).output;
    };
}

BucketedReport evaluate(const Inpainter& inpaint, std::span<const data::NamedTensor> images,
                        std::span<const data::NamedTensor> masks, std::span<const data::PairEntry> pairing,
                        bool composite, double fill) {
    std::map<std::string, const torch::Tensor*> image_by_id, mask_by_id;
    for (const auto& i : images) image_by_id[i.id] = &i.tensor;
    for (const auto& m : masks) mask_by_id[m.id] = &m.tensor;

    std::vector<std::string> missing;
    std::set<std::string> paired;
    for (const auto& p : pairing) {
        if (!image_by_id.count(p.image_id)) missing.push_back("image:" + p.image_id);
        if (!mask_by_id.count(p.mask_id)) missing.push_back("mask:" + p.mask_id);
        paired.insert(p.image_id);
    }
    for (const auto& i : images) {
        if (!paired.count(i.id)) missing.push_back("unpaired image:" + i.id);
    }
    if (!missing.empty()) {
        std::string msg = "evaluation manifest does not match the dataset:";
        for (const auto& m : missing) msg += " " + m;
        throw ProtocolError(msg);
    }

    std::vector<SampleResult> results;
    results.reserve(pairing.size());
    for (const auto& p : pairing) {
        const auto& image = *image_by_id.at(p.image_id);
        const auto& mask = *mask_by_id.at(p.mask_id);
        if (mask.size(2) != image.size(2) || mask.size(3) != image.size(3)) {
            throw ProtocolError("mask " + p.mask_id + " does not match the size of image " + p.image_id);
        }
        const auto sample = data::make_sample(image, mask, fill);
        auto output = inpaint(sample).detach();
        if (composite) output = model::composite(output, sample);

        SampleResult r;
        r.image_id = p.image_id;
        r.mask_id = p.mask_id;
        r.ratio = data::mask_ratio(mask);
        data::bucket_index(r.ratio);  // ProtocolError for masks outside [0, 0.6)
        r.metrics = measure(to_unit_range(sample.image), to_unit_range(output.clamp(-1.0, 1.0)));
        results.push_back(r);
    }
    return aggregate(std::move(results));
}

std::string comparison_csv(const std::vector<std::pair<std::string, BucketedReport>>& runs) {
    std::string out;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        std::istringstream csv(runs[i].second.to_csv());
        std::string line;
        bool header = true;
        while (std::getline(csv, line)) {
            if (header) {
                if (i == 0) out += "run," + line + "\n";
                header = false;
                continue;
            }
            out += runs[i].first + "," + line + "\n";
        }
    }
    return out;
}

}  // namespace spl::eval
