#include "spl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>

#include "spl/errors.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace spl::train {

namespace {

// FNV-1a over the raw bytes of a tensor, for divergence diagnostics.
uint64_t tensor_hash(const torch::Tensor& t) {
    auto cpu = t.detach().to(torch::kCPU).contiguous();
    const auto* bytes = static_cast<const unsigned char*>(cpu.data_ptr());
    uint64_t h = 1469598103934665603ULL;
    for (int64_t i = 0; i < cpu.numel() * static_cast<int64_t>(cpu.element_size()); ++i) {
        h = (h ^ bytes[i]) * 1099511628211ULL;
    }
    return h;
}

void set_requires_grad(torch::nn::Module& module, bool flag) {
    for (auto& p : module.parameters()) p.set_requires_grad(flag);
}

std::string dtype_name(const torch::Tensor& t) { return std::string(c10::toString(t.scalar_type())); }

void list_tensors(const std::string& prefix, torch::nn::Module& module, json& out) {
    for (const auto& item : module.named_parameters()) {
        out.push_back({{"name", prefix + item.key()},
                       {"dtype", dtype_name(item.value())},
                       {"shape", item.value().sizes().vec()}});
    }
    for (const auto& item : module.named_buffers()) {
        out.push_back({{"name", prefix + item.key()},
                       {"dtype", dtype_name(item.value())},
                       {"shape", item.value().sizes().vec()}});
    }
}

torch::serialize::InputArchive open_archive(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw LoadError("checkpoint not found: " + path.string());
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(path.string());
    } catch (const c10::Error& e) {
        throw LoadError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
    return archive;
}

c10::IValue read_value(torch::serialize::InputArchive& archive, const std::string& key) {
    c10::IValue value;
    if (!archive.try_read(key, value)) throw LoadError("checkpoint is missing '" + key + "'");
    return value;
}

}  // namespace

double lr_schedule(int64_t epoch, const config::TrainConfig& train) {
    return epoch < train.decay_epoch ? train.lr_initial : train.lr_finetune;
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

int64_t planned_steps(const config::TrainConfig& train, std::size_t n_images) {
    if (train.max_steps > 0) return train.max_steps;
    const auto per_epoch = static_cast<int64_t>(n_images) / train.batch_size;
    return (train.decay_epoch + train.finetune_epochs) * per_epoch;
}

std::vector<torch::Tensor> generate_mask_pool(const config::DataConfig& data, int64_t count) {
    std::vector<torch::Tensor> pool;
    pool.reserve(static_cast<std::size_t>(count));
    const auto n_buckets = static_cast<int64_t>(data.mask_buckets.size());
    for (int64_t i = 0; i < count; ++i) {
        const auto& bucket = data::bucket_by_label(data.mask_buckets[static_cast<std::size_t>(i % n_buckets)]);
        pool.push_back(data::generate_irregular_mask(data::derive_seed(data.mask_seed, static_cast<uint64_t>(i)),
                                                     bucket, data.image_size, data.image_size));
    }
    return pool;
}

TrainingSet load_training_set(const config::RunConfig& config) {
    TrainingSet set;
    set.fill = config.data.fill;
    for (auto& item : data::load_image_dir(config.data.image_dir, config.data.image_size, config.data.center_crop)) {
        set.images.push_back(std::move(item.tensor));
    }
    if (set.images.empty()) throw ConfigError("no images found in " + config.data.image_dir);

    if (!config.data.mask_dir.empty()) {
        for (auto& item : data::load_mask_dir(config.data.mask_dir, config.data.image_size, config.data.image_size)) {
            set.masks.push_back(std::move(item.tensor));
        }
    } else {
        set.masks = generate_mask_pool(config.data, config.data.generated_masks);
    }
    if (set.masks.empty()) throw ConfigError("the mask pool is empty");
    return set;
}

BatchSampler::BatchSampler(std::size_t n_images, std::size_t n_masks, int64_t batch_size, uint64_t seed)
    : n_images_(n_images), n_masks_(n_masks), batch_size_(batch_size), rng_(seed) {
    if (n_images == 0 || n_masks == 0) throw ConfigError("training needs at least one image and one mask");
    if (batch_size < 1 || static_cast<std::size_t>(batch_size) > n_images) {
        throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds the " + std::to_string(n_images) +
                          " training images");
    }
    order_.resize(n_images);
    reshuffle();
}

void BatchSampler::reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
}

BatchSampler::Batch BatchSampler::next() {
    if (cursor_ + static_cast<std::size_t>(batch_size_) > order_.size()) {
        ++epoch_;
        reshuffle();
    }
    Batch batch;
    std::uniform_int_distribution<std::size_t> pick(0, n_masks_ - 1);
    for (int64_t i = 0; i < batch_size_; ++i) {
        batch.images.push_back(order_[cursor_++]);
        batch.masks.push_back(pick(rng_));
    }
    return batch;
}

std::string BatchSampler::state() const {
    std::ostringstream out;
    out << n_images_ << ' ' << n_masks_ << ' ' << batch_size_ << ' ' << cursor_ << ' ' << epoch_ << ' ';
    for (auto i : order_) out << i << ' ';
    out << rng_;
    return out.str();
}

void BatchSampler::restore(const std::string& state) {
    std::istringstream in(state);
    std::size_t n_images = 0, n_masks = 0;
    int64_t batch_size = 0;
    in >> n_images >> n_masks >> batch_size;
    if (!in || n_images != n_images_ || n_masks != n_masks_ || batch_size != batch_size_) {
        throw ConfigError("stored sampler state does not match the training set (" + std::to_string(n_images) +
                          " images, " + std::to_string(n_masks) + " masks)");
    }
    in >> cursor_ >> epoch_;
    for (auto& i : order_) in >> i;
    in >> rng_;
    if (!in) throw LoadError("corrupt sampler state");
}

data::MaskedSample assemble(const TrainingSet& set, const BatchSampler::Batch& batch) {
    std::vector<torch::Tensor> images, masks;
    for (auto i : batch.images) images.push_back(set.images.at(i));
    for (auto i : batch.masks) masks.push_back(set.masks.at(i));
    return data::make_sample(torch::cat(images, 0), torch::cat(masks, 0), set.fill);
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(config::RunConfig config, teacher::Teacher teacher)
    : config_(std::move(config)), teacher_(std::move(teacher)) {
    config_.validate();
    config_.loss.use_prior = config_.model.use_prior;
    if (teacher_.spec().out_channels != config_.model.d) {
        throw ConfigError("teacher emits " + std::to_string(teacher_.spec().out_channels) +
                          " channels but model.d = " + std::to_string(config_.model.d));
    }

    torch::manual_seed(config_.train.seed);
    net_ = model::SplNet(config_.model);
    disc_ = model::PatchDiscriminator(config_.model.disc_base);

    lr_ = lr_schedule(0, config_.train);
    const auto options = torch::optim::AdamOptions(lr_).betas({config_.train.beta1, config_.train.beta2});
    opt_g_ = std::make_unique<torch::optim::Adam>(net_->parameters(), options);
    opt_d_ = std::make_unique<torch::optim::Adam>(disc_->parameters(), options);
}

void Trainer::set_learning_rate(double lr) {
    lr_ = lr;
    for (auto* opt : {opt_g_.get(), opt_d_.get()}) {
        for (auto& group : opt->param_groups()) {
            static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
        }
    }
}

losses::LossReport Trainer::train_step(const data::MaskedSample& batch) {
    const auto& lc = config_.loss;
    net_->train();
    disc_->train();

    auto target = teacher_.features(batch.enlarged.image);
    auto result = net_->forward(batch);

    auto diverged = [&](const std::string& what) {
        std::ostringstream msg;
        msg << what << " (step " << step_ + 1 << ", input hash " << std::hex << tensor_hash(batch.image) << ")";
        return DivergenceError(msg.str());
    };

    auto l_img = losses::reconstruction_loss(batch.image, result.output, batch.mask, lc.delta);
    auto mask_s = losses::resize_mask_to(batch.mask, target);
    auto l_prior = losses::prior_loss(target, result.adapted, mask_s, lc.alpha);

    set_requires_grad(*disc_, true);
    opt_d_->zero_grad();
    auto real_scores = disc_->forward(batch.image);
    auto fake_scores = disc_->forward(result.output.detach());
    auto l_adv_d = losses::discriminator_adv_loss(real_scores, fake_scores);

    // Everything that does not depend on the updated discriminator is checked
    // before any parameter moves.
    losses::LossComponents components{l_img.item<double>(), l_prior.item<double>(), 0.0, l_adv_d.item<double>()};
    if (!std::isfinite(components.l_img) || !std::isfinite(components.l_adv_d) ||
        (lc.use_prior && !std::isfinite(components.l_prior))) {
        std::ostringstream what;
        what << "training diverged: l_img=" << components.l_img << " l_prior=" << components.l_prior
             << " l_adv_d=" << components.l_adv_d;
        throw diverged(what.str());
    }
    l_adv_d.backward();
    opt_d_->step();

    // Generator-side update against the updated, now fixed, discriminator.
    set_requires_grad(*disc_, false);
    auto l_adv_g = losses::generator_adv_loss(disc_->forward(result.output), lc.gan_variant);
    components.l_adv_g = l_adv_g.item<double>();
    losses::LossReport report;
    try {
        report = losses::total_loss(components, lc);
    } catch (const DivergenceError& e) {
        throw diverged(e.what());
    }

    opt_g_->zero_grad();
    losses::objective(l_img, l_adv_g, l_prior, lc).backward();
    opt_g_->step();
    set_requires_grad(*disc_, true);

    ++step_;
    return report;
}

void Trainer::fit(const TrainingSet& set, int64_t steps, std::ostream* log,
                  const std::function<void(int64_t, const losses::LossReport&)>& on_step) {
    if (!sampler_) {
        sampler_.emplace(set.images.size(), set.masks.size(), config_.train.batch_size,
                         data::derive_seed(config_.train.seed, 1));
    }
    for (int64_t i = 0; i < steps; ++i) {
        const auto batch = sampler_->next();
        const double lr = lr_schedule(sampler_->epoch(), config_.train);
        if (lr != lr_) set_learning_rate(lr);

        const auto report = train_step(assemble(set, batch));
        if (log != nullptr && step_ % config_.train.log_every == 0) {
            *log << losses::log_row(step_, report, lr_);
        }
        if (on_step) on_step(step_, report);
    }
}

void Trainer::save_checkpoint(const fs::path& path) const {
    torch::serialize::OutputArchive root;
    root.write("schema_version", c10::IValue(kCheckpointSchemaVersion));
    root.write("config", c10::IValue(config::to_json(config_).dump()));

    json manifest = json::array();
    list_tensors("net/", *net_.ptr(), manifest);
    list_tensors("disc/", *disc_.ptr(), manifest);
    root.write("manifest", c10::IValue(manifest.dump()));

    torch::serialize::OutputArchive net_archive, disc_archive, opt_g_archive, opt_d_archive, teacher_archive;
    net_->save(net_archive);
    disc_->save(disc_archive);
    opt_g_->save(opt_g_archive);
    opt_d_->save(opt_d_archive);
    teacher_.write(teacher_archive);
    root.write("net", net_archive);
    root.write("disc", disc_archive);
    root.write("opt_g", opt_g_archive);
    root.write("opt_d", opt_d_archive);
    root.write("teacher", teacher_archive);

    const auto entry = teacher_.descriptor();
    root.write("teacher_entry", c10::IValue(json{{"name", entry.name},
                                                 {"layer", entry.layer},
                                                 {"native_stride", entry.native_stride},
                                                 {"d", entry.d},
                                                 {"mean", entry.input_norm.mean},
                                                 {"std", entry.input_norm.std}}
                                                .dump()));

    root.write("step", c10::IValue(step_));
    root.write("lr", c10::IValue(lr_));
    root.write("sampler", c10::IValue(sampler_ ? sampler_->state() : std::string()));
    root.write("torch_rng", at::detail::getDefaultCPUGenerator().get_state());

    const fs::path tmp = path.string() + ".tmp";
    root.save_to(tmp.string());
    fs::rename(tmp, path);
}

Trainer load_checkpoint(const fs::path& path, const std::optional<model::ModelConfig>& expected) {
    auto root = open_archive(path);

    const int64_t version = read_value(root, "schema_version").toInt();
    if (version != kCheckpointSchemaVersion) {
        throw LoadError("checkpoint schema version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kCheckpointSchemaVersion) + ")");
    }

    const auto cfg = config::from_json(json::parse(read_value(root, "config").toStringRef()));
    if (expected && !(cfg.model == *expected)) {
        throw ConfigError("checkpoint model configuration differs from the requested one");
    }

    const auto te = json::parse(read_value(root, "teacher_entry").toStringRef());
    teacher::RegistryEntry entry;
    entry.name = te.at("name").get<std::string>();
    entry.layer = te.at("layer").get<int64_t>();
    entry.native_stride = te.at("native_stride").get<int64_t>();
    entry.d = te.at("d").get<int64_t>();
    entry.input_norm.mean = te.at("mean").get<std::array<double, 3>>();
    entry.input_norm.std = te.at("std").get<std::array<double, 3>>();

    torch::serialize::InputArchive net_archive, disc_archive, opt_g_archive, opt_d_archive, teacher_archive;
    for (auto [key, archive] : {std::pair{"net", &net_archive}, std::pair{"disc", &disc_archive},
                                std::pair{"opt_g", &opt_g_archive}, std::pair{"opt_d", &opt_d_archive},
                                std::pair{"teacher", &teacher_archive}}) {
        if (!root.try_read(key, *archive)) throw LoadError(std::string("checkpoint is missing '") + key + "'");
    }

    Trainer trainer(cfg, teacher::read_teacher(teacher_archive, entry));
    try {
        trainer.net_->load(net_archive);
        trainer.disc_->load(disc_archive);
        trainer.opt_g_->load(opt_g_archive);
        trainer.opt_d_->load(opt_d_archive);
    } catch (const c10::Error& e) {
        throw LoadError("checkpoint tensors do not match the stored configuration: " +
                        std::string(e.what_without_backtrace()));
    }

    trainer.step_ = read_value(root, "step").toInt();
    trainer.set_learning_rate(read_value(root, "lr").toDouble());
    const auto sampler_state = read_value(root, "sampler").toStringRef();
    if (!sampler_state.empty()) {
        std::istringstream in(sampler_state);
        std::size_t n_images = 0, n_masks = 0;
        in >> n_images >> n_masks;
        trainer.sampler_.emplace(n_images, n_masks, cfg.train.batch_size, 0);
        trainer.sampler_->restore(sampler_state);
    }

    torch::Tensor rng_state;
    if (!root.try_read("torch_rng", rng_state)) throw LoadError("checkpoint is missing 'torch_rng'");
    auto generator = at::detail::getDefaultCPUGenerator();
    generator.set_state(rng_state);
    return trainer;
}

std::vector<CheckpointEntry> read_checkpoint_manifest(const fs::path& path) {
    auto root = open_archive(path);
    std::vector<CheckpointEntry> entries;
    for (const auto& e : json::parse(read_value(root, "manifest").toStringRef())) {
        entries.push_back({e.at("name").get<std::string>(), e.at("dtype").get<std::string>(),
                           e.at("shape").get<std::vector<int64_t>>()});
    }
    return entries;
}

}  // namespace spl::train
