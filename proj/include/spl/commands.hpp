#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "spl/config.hpp"
#include "spl/data.hpp"
#include "spl/evaluator.hpp"
#include "spl/kmeans.hpp"

// Entry points behind the `spl` command-line tool. Each one reads its inputs,
// writes into an output location and never modifies the inputs.
namespace spl::cli {

namespace fs = std::filesystem;

struct RunOptions {
    fs::path config;                     // optional JSON file
    std::vector<std::string> overrides;  // "a.b=value"
    std::optional<uint64_t> seed;        // replaces train.seed
    std::string profile = "places2";     // preset used when the file names none
};

config::RunConfig resolve_run(const RunOptions& options);

// Writes resolved_config.json (the full config plus the seeds in effect).
void record_run(const fs::path& out_dir, const config::RunConfig& config);

// Exit status for an exception escaping a command: 2 configuration,
// 3 data or protocol, 4 numerical divergence, 1 anything else.
int exit_code_for(const std::exception& e);

struct TrainOutcome {
    fs::path checkpoint;
    fs::path log;
    int64_t steps = 0;
};

// Trains per `config` and writes train_log.csv and checkpoint.pt into out_dir.
TrainOutcome cmd_train(const config::RunConfig& config, const fs::path& out_dir);

// Evaluation masks: mask_dir when set, otherwise the generated pool named mask_00000, ...
std::vector<data::NamedTensor> eval_masks(const config::RunConfig& config);

// Evaluates a checkpoint on data.image_dir. Without a manifest one is built
// from eval.pairing_seed and written to out_dir/pairing.tsv. Writes report.csv
// and report.json.
eval::BucketedReport cmd_eval(const fs::path& checkpoint, const config::RunConfig& config,
                              const fs::path& out_dir, const std::optional<fs::path>& manifest,
                              std::optional<bool> composite = std::nullopt);

// Loads an RGB image at its own size; both sides must be divisible by 4.
torch::Tensor load_inference_image(const fs::path& path);

// Writes corrupted.png, raw.png, composited.png and grid.png into out_dir.
void cmd_infer(const fs::path& checkpoint, const fs::path& image, const fs::path& mask, const fs::path& out_dir);

// Clusters the semantic learner's prior map and writes a colour map PNG.
viz::KMeansResult cmd_visualize_priors(const fs::path& checkpoint, const fs::path& image, const fs::path& mask,
                                       int64_t k, uint64_t seed, const fs::path& out_png);

// Writes `count` stroke masks of one ratio bucket as mask_00000.png, ...
std::vector<fs::path> cmd_make_masks(const std::string& bucket, int64_t count, int64_t size, uint64_t seed,
                                     const fs::path& out_dir);

void cmd_make_pairing(const fs::path& image_dir, const fs::path& mask_dir, uint64_t seed, const fs::path& out_file);

// "wo-S", "concat" or "alt-teacher" applied to a base config.
config::RunConfig ablated_config(const config::RunConfig& base, const std::string& ablation);

struct AblationOutcome {
    eval::BucketedReport base;
    eval::BucketedReport ablated;
    fs::path comparison_csv;
};

// Trains the ablated run (and the base run unless `base_checkpoint` is given),
// evaluates both on one pairing manifest and writes comparison.csv.
AblationOutcome cmd_ablate(const config::RunConfig& base, const std::string& ablation, const fs::path& out_dir,
                           const std::optional<fs::path>& base_checkpoint = std::nullopt);

}  // namespace spl::cli
