#include "spl/commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "spl/errors.hpp"
#include "spl/losses.hpp"
#include "spl/teacher.hpp"
#include "spl/trainer.hpp"

namespace spl::cli {

namespace {

std::string indexed_name(const char* prefix, int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%05lld", prefix, static_cast<long long>(i));
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

void write_rgb_png(const cv::Mat& rgb, const fs::path& path) {
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path.string(), bgr)) throw ConfigError("cannot write " + path.string());
}

data::MaskedSample inference_sample(const fs::path& image_path, const fs::path& mask_path, double fill) {
    auto image = load_inference_image(image_path);
    auto mask = data::load_mask(mask_path);
    if (mask.size(2) != image.size(2) || mask.size(3) != image.size(3)) {
        mask = data::resize_mask(mask, image.size(2), image.size(3));
    }
    return data::make_sample(image, mask, fill);
}

}  // namespace

config::RunConfig resolve_run(const RunOptions& options) {
    auto overrides = options.overrides;
    if (options.seed) overrides.push_back("train.seed=" + std::to_string(*options.seed));
    auto config = config::resolve(options.config, overrides, options.profile);
    config.validate();
    return config;
}

void record_run(const fs::path& out_dir, const config::RunConfig& config) {
    fs::create_directories(out_dir);
    write_text(out_dir / "resolved_config.json", config::to_json(config).dump(2) + "\n");
    const nlohmann::json seeds{{"train.seed", config.train.seed},
                               {"sampler_seed", data::derive_seed(config.train.seed, 1)},
                               {"data.mask_seed", config.data.mask_seed},
                               {"teacher.seed", config.teacher.seed},
                               {"eval.pairing_seed", config.eval.pairing_seed}};
    write_text(out_dir / "seeds.json", seeds.dump(2) + "\n");
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const DivergenceError*>(&e)) return 4;
    if (dynamic_cast<const DecodeError*>(&e) || dynamic_cast<const LoadError*>(&e) ||
        dynamic_cast<const ProtocolError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
        dynamic_cast<const GenerationError*>(&e)) {
        return 3;
    }
    return 1;
}

TrainOutcome cmd_train(const config::RunConfig& config, const fs::path& out_dir) {
    record_run(out_dir, config);
    const auto set = train::load_training_set(config);
    train::Trainer trainer(config, config::make_teacher(config));

    TrainOutcome outcome;
    outcome.log = out_dir / "train_log.csv";
    outcome.checkpoint = out_dir / "checkpoint.pt";
    outcome.steps = train::planned_steps(config.train, set.images.size());

    std::ofstream log(outcome.log);
    if (!log) throw ConfigError("cannot write " + outcome.log.string());
    log << losses::log_header();

    const int64_t every = config.train.checkpoint_every;
    trainer.fit(set, outcome.steps, &log, [&](int64_t step, const losses::LossReport&) {
        if (every > 0 && step % every == 0 && step < outcome.steps) {
            log.flush();
            trainer.save_checkpoint(out_dir / ("checkpoint_step" + std::to_string(step) + ".pt"));
        }
    });
    trainer.save_checkpoint(outcome.checkpoint);
    return outcome;
}

std::vector<data::NamedTensor> eval_masks(const config::RunConfig& config) {
    const auto size = config.data.image_size;
    if (!config.data.mask_dir.empty()) return data::load_mask_dir(config.data.mask_dir, size, size);
    std::vector<data::NamedTensor> masks;
    auto pool = train::generate_mask_pool(config.data, config.data.generated_masks);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        masks.push_back({indexed_name("mask", static_cast<int64_t>(i)), std::move(pool[i])});
    }
    return masks;
}

eval::BucketedReport cmd_eval(const fs::path& checkpoint, const config::RunConfig& config,
                              const fs::path& out_dir, const std::optional<fs::path>& manifest,
                              std::optional<bool> composite) {
    fs::create_directories(out_dir);
    auto trainer = train::load_checkpoint(checkpoint);
    const auto images = data::load_image_dir(config.data.image_dir, config.data.image_size, config.data.center_crop);
    const auto masks = eval_masks(config);

    std::vector<data::PairEntry> pairing;
    if (manifest) {
        pairing = data::read_manifest(*manifest);
    } else {
        std::vector<std::string> image_ids, mask_ids;
        for (const auto& i : images) image_ids.push_back(i.id);
        for (const auto& m : masks) mask_ids.push_back(m.id);
        pairing = data::build_eval_pairing(image_ids, mask_ids, config.eval.pairing_seed);
        data::write_manifest(out_dir / "pairing.tsv", pairing);
    }

    const auto report = eval::evaluate(eval::model_inpainter(trainer.net()), images, masks, pairing,
                                       composite.value_or(config.eval.composite), config.data.fill);
    write_text(out_dir / "report.csv", report.to_csv());
    write_text(out_dir / "report.json", report.to_json().dump(2) + "\n");
    return report;
}

torch::Tensor load_inference_image(const fs::path& path) {
    const auto rgb = data::load_rgb(path);
    if (rgb.rows % 4 != 0 || rgb.cols % 4 != 0) {
        throw ConfigError("image " + path.string() + " is " + std::to_string(rgb.cols) + "x" +
                          std::to_string(rgb.rows) + "; both sides must be divisible by 4");
    }
    cv::Mat scaled;
    rgb.convertTo(scaled, CV_32FC3, 1.0 / 127.5, -1.0);
    return torch::from_blob(scaled.data, {1, rgb.rows, rgb.cols, 3}, torch::kFloat32).permute({0, 3, 1, 2}).clone();
}

void cmd_infer(const fs::path& checkpoint, const fs::path& image, const fs::path& mask, const fs::path& out_dir) {
    auto trainer = train::load_checkpoint(checkpoint);
    const auto sample = inference_sample(image, mask, trainer.config().data.fill);
    const auto raw = eval::model_inpainter(trainer.net())(sample);
    const auto composited = model::composite(raw, sample);

    fs::create_directories(out_dir);
    const auto original = data::to_rgb8(sample.image);
    const auto corrupted = data::to_rgb8(sample.corrupted);
    const auto raw_rgb = data::to_rgb8(raw.clamp(-1.0, 1.0));
    const auto composited_rgb = data::to_rgb8(composited.clamp(-1.0, 1.0));
    write_rgb_png(corrupted, out_dir / "corrupted.png");
    write_rgb_png(raw_rgb, out_dir / "raw.png");
    write_rgb_png(composited_rgb, out_dir / "composited.png");

    cv::Mat grid;
    cv::hconcat(std::vector<cv::Mat>{original, corrupted, raw_rgb, composited_rgb}, grid);
    write_rgb_png(grid, out_dir / "grid.png");
}

viz::KMeansResult cmd_visualize_priors(const fs::path& checkpoint, const fs::path& image, const fs::path& mask,
                                       int64_t k, uint64_t seed, const fs::path& out_png) {
    if (k < 2) throw ConfigError("visualize-priors needs k >= 2");
    auto trainer = train::load_checkpoint(checkpoint);
    const auto sample = inference_sample(image, mask, trainer.config().data.fill);

    torch::Tensor prior;
    {
        torch::NoGradGuard no_grad;
        trainer.net()->eval();
        prior = trainer.net()->forward(sample).prior;
    }
    auto result = viz::kmeans(viz::feature_points(prior), k, seed);
    if (result.reduced_k) {
        std::cerr << "warning: only " << result.k_used << " distinct prior vectors, using k = " << result.k_used
                  << " instead of " << k << "\n";
    }
    const auto colors = viz::colorize_labels(result.labels, static_cast<int>(prior.size(2)),
                                             static_cast<int>(prior.size(3)), static_cast<int>(sample.height()),
                                             static_cast<int>(sample.width()));
    if (out_png.has_parent_path()) fs::create_directories(out_png.parent_path());
    write_rgb_png(colors, out_png);
    return result;
}

std::vector<fs::path> cmd_make_masks(const std::string& bucket, int64_t count, int64_t size, uint64_t seed,
                                     const fs::path& out_dir) {
    if (count < 1) throw ConfigError("make-masks needs count >= 1");
    if (size < 1) throw ConfigError("make-masks needs size >= 1");
    const auto& b = data::bucket_by_label(bucket);
    fs::create_directories(out_dir);
    std::vector<fs::path> written;
    for (int64_t i = 0; i < count; ++i) {
        const auto mask = data::generate_irregular_mask(data::derive_seed(seed, static_cast<uint64_t>(i)), b, size, size);
        const auto path = out_dir / (indexed_name("mask", i) + ".png");
        data::save_mask_png(mask, path);
        written.push_back(path);
    }
    return written;
}

void cmd_make_pairing(const fs::path& image_dir, const fs::path& mask_dir, uint64_t seed, const fs::path& out_file) {
    std::vector<std::string> image_ids, mask_ids;
    for (const auto& p : data::list_images(image_dir)) image_ids.push_back(p.stem().string());
    for (const auto& p : data::list_images(mask_dir)) mask_ids.push_back(p.stem().string());
    const auto pairing = data::build_eval_pairing(image_ids, mask_ids, seed);
    if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
    data::write_manifest(out_file, pairing);
}

config::RunConfig ablated_config(const config::RunConfig& base, const std::string& ablation) {
    auto c = base;
    if (ablation == "wo-S") {
        c.model.use_prior = false;
        c.loss.use_prior = false;
    } else if (ablation == "concat") {
        c.model.use_spade = false;
    } else if (ablation == "alt-teacher") {
        if (c.teacher.alternate.empty()) {
            throw ConfigError("alt-teacher ablation needs teacher.alternate to name a registered backbone");
        }
        c.teacher.name = c.teacher.alternate;
        config::make_teacher(c);  // fails early when the entry is missing or unusable
    } else {
        throw ConfigError("unknown ablation '" + ablation + "' (expected wo-S, concat or alt-teacher)");
    }
    c.validate();
    return c;
}

AblationOutcome cmd_ablate(const config::RunConfig& base, const std::string& ablation, const fs::path& out_dir,
                           const std::optional<fs::path>& base_checkpoint) {
    const auto variant = ablated_config(base, ablation);
    fs::create_directories(out_dir);

    const fs::path base_ckpt = base_checkpoint ? *base_checkpoint : cmd_train(base, out_dir / "base").checkpoint;
    const auto ablated_ckpt = cmd_train(variant, out_dir / ablation).checkpoint;

    AblationOutcome outcome;
    outcome.base = cmd_eval(base_ckpt, base, out_dir / "eval-base", std::nullopt);
    const auto manifest = out_dir / "eval-base" / "pairing.tsv";
    outcome.ablated = cmd_eval(ablated_ckpt, variant, out_dir / ("eval-" + ablation), manifest);

    outcome.comparison_csv = out_dir / "comparison.csv";
    write_text(outcome.comparison_csv, eval::comparison_csv({{"base", outcome.base}, {ablation, outcome.ablated}}));
    return outcome;
}

}  // namespace spl::cli
