#include "spl/teacher.hpp"

#include <cmath>
#include <map>
#include <sstream>

namespace F = torch::nn::functional;
namespace fs = std::filesystem;

namespace spl::teacher {

namespace {

const std::map<std::string, BackboneLayout>& layout_registry() {
    static const std::map<std::string, BackboneLayout> registry{
        {"standin-s8", {"standin-s8", {32, 64}}},
        {"standin-s16", {"standin-s16", {32, 64, 128}}},
    };
    return registry;
}

constexpr const char* kLayoutKey = "layout";

void freeze(ConvStack& net) {
    for (auto& p : net->parameters()) p.set_requires_grad(false);
    net->eval();
}

int64_t stride_of_stage(int64_t stage) { return int64_t{1} << (stage + 1); }

}  // namespace

const BackboneLayout& find_layout(const std::string& name) {
    const auto& registry = layout_registry();
    auto it = registry.find(name);
    if (it == registry.end()) {
        throw UnsupportedBackboneError("unsupported teacher backbone layout '" + name + "'");
    }
    return it->second;
}

std::vector<std::string> registered_layouts() {
    std::vector<std::string> names;
    for (const auto& [name, _] : layout_registry()) names.push_back(name);
    return names;
}

ConvStackImpl::ConvStackImpl(int64_t in_channels, std::vector<int64_t> widths) : widths_(std::move(widths)) {
    stages = register_module("stages", torch::nn::ModuleList());
    int64_t in = in_channels;
    for (int64_t out : widths_) {
        stages->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
        in = out;
    }
}

torch::Tensor ConvStackImpl::forward(torch::Tensor x, int64_t last_stage) {
    for (int64_t i = 0; i <= last_stage; ++i) {
        x = stages[i]->as<torch::nn::Conv2d>()->forward(x);
        if (i < last_stage) x = F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2));
    }
    return x;
}

Teacher::Teacher(TeacherSpec spec, std::string layout, ConvStack net, int64_t layer, InputNorm norm)
    : spec_(std::move(spec)), layout_(std::move(layout)), net_(std::move(net)), layer_(layer), norm_(norm) {
    freeze(net_);
}

torch::Tensor Teacher::native_features(const torch::Tensor& image_up) const {
    if (image_up.dim() != 4 || image_up.size(1) != 3) {
        std::ostringstream msg;
        msg << "teacher expects (N, 3, H, W), got " << image_up.sizes();
        throw DimensionError(msg.str());
    }
    if (image_up.size(2) % TeacherSpec::kDownsampleFactor != 0 ||
        image_up.size(3) % TeacherSpec::kDownsampleFactor != 0) {
        std::ostringstream msg;
        msg << "teacher input spatial size must be divisible by 8, got " << image_up.size(2) << "x"
            << image_up.size(3);
        throw DimensionError(msg.str());
    }

    torch::NoGradGuard no_grad;
    auto opts = image_up.options();
    auto mean = torch::tensor({norm_.mean[0], norm_.mean[1], norm_.mean[2]}, opts).view({1, 3, 1, 1});
    auto stdev = torch::tensor({norm_.std[0], norm_.std[1], norm_.std[2]}, opts).view({1, 3, 1, 1});
    auto x = ((image_up + 1.0) * 0.5 - mean) / stdev;
    return net_.ptr()->forward(x, layer_);
}

torch::Tensor Teacher::features(const torch::Tensor& image_up) const {
    auto native = native_features(image_up);
    if (spec_.native_stride == TeacherSpec::kDownsampleFactor) return native;

    torch::NoGradGuard no_grad;
    const std::vector<int64_t> size{image_up.size(2) / TeacherSpec::kDownsampleFactor,
                                    image_up.size(3) / TeacherSpec::kDownsampleFactor};
    return F::interpolate(native,
                          F::InterpolateFuncOptions().size(size).mode(torch::kBilinear).align_corners(false));
}

std::string Teacher::weight_bytes() const {
    std::string bytes;
    for (const auto& item : net_->named_parameters()) {
        auto cpu = item.value().detach().to(torch::kCPU).contiguous();
        bytes += item.key();
        bytes.append(static_cast<const char*>(cpu.data_ptr()), cpu.numel() * cpu.element_size());
    }
    return bytes;
}

void Teacher::write(torch::serialize::OutputArchive& archive) const {
    // Flat "stages.i.weight" keys so external tools can write compatible files.
    for (const auto& item : net_->named_parameters()) archive.write(item.key(), item.value());
    archive.write(kLayoutKey, c10::IValue(layout_));
}

void Teacher::save(const fs::path& path) const {
    torch::serialize::OutputArchive archive;
    write(archive);
    archive.save_to(path.string());
}

RegistryEntry Teacher::descriptor() const {
    RegistryEntry e;
    e.name = spec_.name;
    e.layout = layout_;
    e.layer = layer_;
    e.native_stride = spec_.native_stride;
    e.d = spec_.out_channels;
    e.input_norm = norm_;
    return e;
}

void Teacher::to(torch::Device device) { net_->to(device); }

Teacher build_seeded_teacher(const std::string& layout, uint64_t seed, int64_t d) {
    if (d < 1) throw ConfigError("teacher channel count d must be >= 1");
    const auto& spec_layout = find_layout(layout);
    auto widths = spec_layout.hidden_channels;
    widths.push_back(d);
    ConvStack net(3, widths);

    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    torch::NoGradGuard no_grad;
    for (auto& item : net->named_parameters()) {
        auto& p = item.value();
        if (p.dim() == 4) {
            const double fan_in = static_cast<double>(p.size(1) * p.size(2) * p.size(3));
            const double gain = std::sqrt(2.0 / (1.0 + 0.2 * 0.2));
            p.copy_(torch::randn(p.sizes(), gen, p.options()) * (gain / std::sqrt(fan_in)));
        } else {
            p.copy_(torch::randn(p.sizes(), gen, p.options()) * 0.05);
        }
    }

    const int64_t last = net->num_stages() - 1;
    TeacherSpec spec{layout + "-seed" + std::to_string(seed), d, stride_of_stage(last)};
    return Teacher(std::move(spec), layout, std::move(net), last, InputNorm{});
}

Teacher build_standin_teacher(uint64_t seed, int64_t d) { return build_seeded_teacher("standin-s8", seed, d); }

Teacher load_external_teacher(const RegistryEntry& entry) {
    const fs::path path(entry.weights_path);
    if (!fs::is_regular_file(path)) {
        throw LoadError("teacher weight file not found: " + path.string());
    }
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(path.string());
    } catch (const c10::Error& e) {
        throw LoadError("cannot read teacher weights " + path.string() + ": " + e.what_without_backtrace());
    }
    return read_teacher(archive, entry);
}

Teacher read_teacher(torch::serialize::InputArchive& archive, const RegistryEntry& entry) {
    std::string layout_name;
    try {
        c10::IValue layout_value;
        archive.read(kLayoutKey, layout_value);
        layout_name = layout_value.toStringRef();
    } catch (const c10::Error& e) {
        throw LoadError(std::string("teacher archive has no layout record: ") + e.what_without_backtrace());
    }

    const auto& layout = find_layout(layout_name);
    const auto n_stages = static_cast<int64_t>(layout.hidden_channels.size()) + 1;
    const int64_t layer = entry.layer < 0 ? n_stages - 1 : entry.layer;
    if (layer >= n_stages) {
        throw ConfigError("teacher layer " + std::to_string(layer) + " does not exist in layout " + layout_name);
    }

    torch::Tensor last_weight;
    const std::string last_key = "stages." + std::to_string(n_stages - 1) + ".weight";
    if (!archive.try_read(last_key, last_weight) || last_weight.dim() != 4) {
        throw LoadError("teacher weight file is missing " + last_key);
    }
    auto widths = layout.hidden_channels;
    widths.push_back(last_weight.size(0));
    ConvStack net(3, widths);

    {
        torch::NoGradGuard no_grad;
        for (auto& item : net->named_parameters()) {
            torch::Tensor stored;
            if (!archive.try_read(item.key(), stored)) {
                throw LoadError("teacher weight file is missing " + item.key());
            }
            if (stored.sizes() != item.value().sizes()) {
                std::ostringstream msg;
                msg << "teacher tensor " << item.key() << " has shape " << stored.sizes() << ", layout "
                    << layout_name << " expects " << item.value().sizes();
                throw LoadError(msg.str());
            }
            item.value().copy_(stored);
        }
    }

    if (net->stage_channels(layer) != entry.d) {
        throw ConfigError("teacher stage " + std::to_string(layer) + " emits " +
                          std::to_string(net->stage_channels(layer)) + " channels but d = " +
                          std::to_string(entry.d));
    }
    const int64_t native_stride = stride_of_stage(layer);
    if (entry.native_stride != native_stride) {
        throw ConfigError("registry declares native stride " + std::to_string(entry.native_stride) +
                          " but stage " + std::to_string(layer) + " has stride " + std::to_string(native_stride));
    }

    TeacherSpec spec{entry.name, entry.d, native_stride};
    return Teacher(std::move(spec), layout_name, std::move(net), layer, entry.input_norm);
}

}  // namespace spl::teacher
