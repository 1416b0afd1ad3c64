#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "spl/commands.hpp"
#include "spl/errors.hpp"
#include "spl/teacher.hpp"

namespace fs = std::filesystem;
using namespace spl;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    std::optional<uint64_t> seed;
    std::string profile = "places2";

    cli::RunOptions options() const { return {config, overrides, seed, profile}; }
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
    cmd->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.overrides, "override a key, e.g. --set train.batch_size=4")->allow_extra_args(false);
    cmd->add_option("--profile", c.profile, "preset used when the config names none")
        ->check(CLI::IsMember(config::preset_names()));
    cmd->add_option("--seed", c.seed, "replaces train.seed");
    auto* out = cmd->add_option("--out", c.out, "output directory");
    if (out_required) out->required();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semantic-prior image inpainting: training, evaluation and visualization"};
    app.require_subcommand(1);

    Common common;
    std::string checkpoint, image, mask, manifest, bucket, images_dir, masks_dir, ablation, base_checkpoint, layout;
    int64_t k = viz::kDefaultClusters, count = 10, size = 256, d = 64;
    bool raw_metrics = false;

    auto* train = app.add_subcommand("train", "train a model");
    add_common(train, common);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint per mask-ratio bucket");
    add_common(eval, common);
    eval->add_option("checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    eval->add_option("--manifest", manifest, "pairing manifest (id<TAB>mask per line)")->check(CLI::ExistingFile);
    eval->add_flag("--no-composite", raw_metrics, "score raw outputs instead of composited ones");

    auto* infer = app.add_subcommand("infer", "inpaint one image");
    add_common(infer, common);
    infer->add_option("checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    infer->add_option("image", image)->required()->check(CLI::ExistingFile);
    infer->add_option("mask", mask)->required()->check(CLI::ExistingFile);

    auto* priors = app.add_subcommand("visualize-priors", "k-means colour map of the learned semantic priors");
    add_common(priors, common);
    priors->add_option("checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    priors->add_option("image", image)->required()->check(CLI::ExistingFile);
    priors->add_option("mask", mask)->required()->check(CLI::ExistingFile);
    priors->add_option("-k,--clusters", k, "cluster count")->check(CLI::Range(int64_t{2}, int64_t{1} << 20));

    auto* masks = app.add_subcommand("make-masks", "generate irregular stroke masks of one ratio bucket");
    add_common(masks, common);
    masks->add_option("--bucket", bucket, "e.g. 20%-30%")->required();
    masks->add_option("--count", count)->check(CLI::PositiveNumber);
    masks->add_option("--size", size)->check(CLI::PositiveNumber);

    auto* pairing = app.add_subcommand("make-pairing", "fix a mask for every evaluation image");
    add_common(pairing, common);
    pairing->add_option("--images", images_dir)->required()->check(CLI::ExistingDirectory);
    pairing->add_option("--masks", masks_dir)->required()->check(CLI::ExistingDirectory);

    auto* ablate = app.add_subcommand("ablate", "train and evaluate an ablation next to the base run");
    add_common(ablate, common);
    ablate->add_option("ablation", ablation)->required()->check(CLI::IsMember({"wo-S", "concat", "alt-teacher"}));
    ablate->add_option("--base-checkpoint", base_checkpoint, "reuse a trained base run")->check(CLI::ExistingFile);

    auto* make_teacher = app.add_subcommand("make-teacher", "write seeded teacher weights for the registry");
    add_common(make_teacher, common);
    make_teacher->add_option("--layout", layout)->required();
    make_teacher->add_option("--channels", d, "output channels of the last stage")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const fs::path out = common.out;
        if (*train) {
            const auto config = cli::resolve_run(common.options());
            const auto result = cli::cmd_train(config, out);
            std::cout << "trained " << result.steps << " steps, checkpoint " << result.checkpoint.string() << "\n";
        } else if (*eval) {
            const auto config = cli::resolve_run(common.options());
            cli::record_run(out, config);
            std::optional<fs::path> m;
            if (!manifest.empty()) m = manifest;
            std::optional<bool> composite;
            if (raw_metrics) composite = false;
            std::cout << cli::cmd_eval(checkpoint, config, out, m, composite).to_csv();
        } else if (*infer) {
            cli::cmd_infer(checkpoint, image, mask, out);
        } else if (*priors) {
            const auto config = cli::resolve_run(common.options());
            const auto result =
                cli::cmd_visualize_priors(checkpoint, image, mask, k, config.train.seed, out / "priors.png");
            std::cout << "k = " << result.k_used << ", " << result.iterations << " iterations\n";
        } else if (*masks) {
            const uint64_t seed = common.seed.value_or(0);
            const auto written = cli::cmd_make_masks(bucket, count, size, seed, out);
            std::cout << "wrote " << written.size() << " masks\n";
        } else if (*pairing) {
            cli::cmd_make_pairing(images_dir, masks_dir, common.seed.value_or(0), out / "pairing.tsv");
        } else if (*ablate) {
            const auto config = cli::resolve_run(common.options());
            std::optional<fs::path> base;
            if (!base_checkpoint.empty()) base = base_checkpoint;
            const auto result = cli::cmd_ablate(config, ablation, out, base);
            std::cout << "comparison written to " << result.comparison_csv.string() << "\n";
        } else if (*make_teacher) {
            const auto t = teacher::build_seeded_teacher(layout, common.seed.value_or(0), d);
            fs::create_directories(out);
            t.save(out / "teacher.pt");
            std::cout << "native stride " << t.spec().native_stride << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cli::exit_code_for(e);
    }
    return 0;
}
