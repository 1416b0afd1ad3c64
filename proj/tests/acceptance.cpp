// Runs acceptance criteria 1-9 and prints one PASS/FAIL line per criterion.
// Exit status is non-zero when any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "metric_oracles.hpp"
#include "spl/commands.hpp"
#include "spl/config.hpp"
#include "spl/evaluator.hpp"
#include "spl/losses.hpp"
#include "spl/model.hpp"
#include "spl/teacher.hpp"
#include "spl/trainer.hpp"
#include "test_util.hpp"

using namespace spl;
namespace fs = std::filesystem;

namespace {

// Collects failed checks for one criterion.
struct Checks {
    std::vector<std::string> failures;
    std::ostringstream notes;

    void expect(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
    void near(double got, double want, double tol, const std::string& what) {
        if (!(std::abs(got - want) <= tol)) {
            std::ostringstream s;
            s << what << ": got " << got << ", want " << want << " +- " << tol;
            failures.push_back(s.str());
        }
    }
};

bool report(int id, const std::string& title, const std::function<void(Checks&)>& body) {
    Checks checks;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(checks);
    } catch (const std::exception& e) {
        checks.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = checks.failures.empty();
    std::printf("criterion %d: %s  %s (%.1fs)%s%s\n", id, ok ? "PASS" : "FAIL", title.c_str(), secs,
                checks.notes.str().empty() ? "" : "  ", checks.notes.str().c_str());
    for (const auto& f : checks.failures) std::printf("    %s\n", f.c_str());
    std::fflush(stdout);
    return ok;
}

torch::Tensor grid(std::initializer_list<double> v, int64_t h, int64_t w) {
    return torch::tensor(std::vector<double>(v), torch::kFloat64).view({1, 1, h, w});
}

double scalar(const torch::Tensor& t) { return t.item<double>(); }

std::vector<int64_t> dims(std::initializer_list<int64_t> v) { return v; }

// ---- 1 -------------------------------------------------------------------

void shape_chain(Checks& c) {
    auto cfg = config::preset("places2");
    torch::manual_seed(0);
    model::SplNet net(cfg.model);
    net->eval();
    auto teacher = config::make_teacher(cfg);
    torch::NoGradGuard no_grad;
    for (int64_t size : {64, 128, 256}) {
        auto image = spl::testing::random_image(1, size, size, static_cast<uint64_t>(size));
        auto mask = spl::testing::random_mask(1, size, size, 0.3, static_cast<uint64_t>(size));
        auto sample = data::make_sample(image, mask);
        auto r = net->forward(sample);
        const auto q = size / 4;
        const auto tag = std::to_string(size);
        c.expect(r.feature.sizes() == dims({1, cfg.model.c, q, q}), "F_m shape at " + tag);
        c.expect(r.prior.sizes() == dims({1, cfg.model.c, q, q}), "S_m shape at " + tag);
        c.expect(r.adapted.sizes() == dims({1, cfg.model.d, q, q}), "S'_m shape at " + tag);
        c.expect(r.output.sizes() == dims({1, 3, size, size}), "output shape at " + tag);
        c.expect(teacher.features(sample.enlarged.image).sizes() == r.adapted.sizes(), "teacher target shape at " + tag);
    }
}

// ---- 2 -------------------------------------------------------------------

void loss_oracles(Checks& c) {
    constexpr double tol = 1e-6;
    auto s = grid({1, 2, 3, 4}, 2, 2);
    auto sm = grid({0, 2, 3, 0}, 2, 2);
    auto ms = grid({1, 0, 0, 1}, 2, 2);
    c.near(scalar(losses::prior_loss(s, sm, ms, 3.0)), 5.0, tol, "prior_loss hand example");

    auto image = torch::full({1, 3, 1, 1}, 0.5, torch::kFloat64);
    auto output = torch::zeros({1, 3, 1, 1}, torch::kFloat64);
    auto hole = torch::ones({1, 1, 1, 1}, torch::kFloat64);
    c.near(scalar(losses::reconstruction_loss(image, output, hole, 5.0)), 3.0, tol, "reconstruction_loss hand example");

    auto half = torch::full({1, 1, 2, 2}, 0.5, torch::kFloat64);
    c.near(scalar(losses::generator_adv_loss(half, losses::GanVariant::NonSaturating)), 0.6931, 1e-4 + tol,
           "nonsaturating at 0.5");
    c.near(scalar(losses::generator_adv_loss(half, losses::GanVariant::PaperLiteral)), 0.6931, 1e-4 + tol,
           "paper-literal at 0.5");
    c.near(scalar(losses::generator_adv_loss(half, losses::GanVariant::NonSaturating)), -std::log(0.5), tol,
           "nonsaturating closed form");
    c.near(scalar(losses::discriminator_adv_loss(half, half)), 1.3863, 1e-4 + tol, "discriminator at 0.5");
    c.near(scalar(losses::discriminator_adv_loss(half, half)), -2 * std::log(0.5), tol, "discriminator closed form");

    losses::LossConfig lc;
    c.near(losses::total_loss({1.0, 3.0, 2.0, 0.5}, lc).total, 15.0, tol, "total_loss");
    auto wo = lc;
    wo.use_prior = false;
    c.near(losses::total_loss({1.0, 3.0, 2.0, 0.5}, wo).total, 12.0, tol, "total_loss without prior");

    c.expect(lc.lambda_img == 10.0 && lc.lambda_adv == 1.0 && lc.lambda_prior == 1.0 && lc.alpha == 3.0 &&
                 lc.delta == 5.0,
             "loss weight defaults (10, 1, 1, 3, 5)");
}

// ---- 3 -------------------------------------------------------------------

void gradients(Checks& c) {
    using spl::testing::gradient_relative_error;
    constexpr double tol = 1e-3;
    double worst = 0.0;
    auto check = [&](double err, const std::string& what) {
        worst = std::max(worst, err);
        c.expect(err < tol, what + " relative error " + std::to_string(err));
    };
    for (uint64_t seed = 0; seed < 5; ++seed) {
        torch::manual_seed(seed);
        auto mask = spl::testing::random_mask(1, 3, 3, 0.5, seed).to(torch::kFloat64);
        auto target = torch::randn({1, 2, 3, 3}, torch::kFloat64);
        check(gradient_relative_error([&](const torch::Tensor& x) { return losses::prior_loss(target, x, mask, 3.0); },
                                      torch::randn({1, 2, 3, 3}, torch::kFloat64)),
              "prior_loss");
        auto image = torch::randn({1, 3, 3, 3}, torch::kFloat64);
        check(gradient_relative_error(
                  [&](const torch::Tensor& x) { return losses::reconstruction_loss(image, x, mask, 5.0); },
                  torch::randn({1, 3, 3, 3}, torch::kFloat64)),
              "reconstruction_loss");
        auto scores = torch::rand({1, 1, 3, 3}, torch::kFloat64) * 0.8 + 0.1;
        auto real = torch::rand({1, 1, 3, 3}, torch::kFloat64) * 0.8 + 0.1;
        for (auto v : {losses::GanVariant::NonSaturating, losses::GanVariant::PaperLiteral}) {
            check(gradient_relative_error([&](const torch::Tensor& x) { return losses::generator_adv_loss(x, v); },
                                          scores),
                  "generator_adv_loss " + std::string(losses::to_string(v)));
        }
        check(gradient_relative_error([&](const torch::Tensor& x) { return losses::discriminator_adv_loss(real, x); },
                                      scores),
              "discriminator_adv_loss (fake)");
        check(gradient_relative_error([&](const torch::Tensor& x) { return losses::discriminator_adv_loss(x, scores); },
                                      real),
              "discriminator_adv_loss (real)");

        model::Spade spade(3, 2, 4);
        spade->to(torch::kFloat64);
        auto feature = torch::randn({1, 3, 3, 3}, torch::kFloat64);
        auto prior = torch::randn({1, 2, 3, 3}, torch::kFloat64);
        auto w = torch::randn({1, 3, 3, 3}, torch::kFloat64);
        check(gradient_relative_error([&](const torch::Tensor& x) { return (spade->forward(x, prior) * w).sum(); },
                                      feature),
              "spade_modulate wrt feature");
        check(gradient_relative_error([&](const torch::Tensor& x) { return (spade->forward(feature, x) * w).sum(); },
                                      prior),
              "spade_modulate wrt prior");

        model::PriorAdapter adapter(5, 3);
        adapter->to(torch::kFloat64);
        auto wa = torch::randn({1, 3, 3, 3}, torch::kFloat64);
        check(gradient_relative_error([&](const torch::Tensor& x) { return (adapter->forward(x) * wa).sum(); },
                                      torch::randn({1, 5, 3, 3}, torch::kFloat64)),
              "adapt_prior");
    }
    c.notes << "worst relative error " << worst;
}

// ---- shared training data --------------------------------------------------

train::TrainingSet desk_set(const config::RunConfig& cfg) {
    train::TrainingSet set;
    for (int i = 0; i < 16; ++i) {
        set.images.push_back(
            data::preprocess(data::render_synthetic_scene(static_cast<uint64_t>(i), 64), cfg.data.image_size, false));
    }
    set.masks = train::generate_mask_pool(cfg.data, cfg.data.generated_masks);
    set.fill = cfg.data.fill;
    return set;
}

// ---- 4 -------------------------------------------------------------------

void distillation(Checks& c) {
    auto cfg = config::preset("desk");
    auto set = desk_set(cfg);
    std::vector<torch::Tensor> images, masks;
    for (int i = 0; i < 4; ++i) {
        images.push_back(set.images[static_cast<std::size_t>(i)]);
        masks.push_back(set.masks[static_cast<std::size_t>(i * 16)]);
    }
    auto batch = data::make_sample(torch::cat(images), torch::cat(masks), cfg.data.fill);
    auto teacher = config::make_teacher(cfg);
    auto target = teacher.features(batch.enlarged.image);
    auto mask_s = losses::resize_mask_to(batch.mask, target);

    torch::manual_seed(cfg.train.seed);
    model::SplNet net(cfg.model);
    net->train();
    std::vector<torch::Tensor> params = net->semantic_learner->parameters();
    for (const auto& p : net->adapter->parameters()) params.push_back(p);
    torch::optim::Adam opt(params, torch::optim::AdamOptions(cfg.train.lr_initial)
                                       .betas({cfg.train.beta1, cfg.train.beta2}));
    auto loss_now = [&] {
        auto prior = net->semantic_learner->forward(batch.enlarged);
        return losses::prior_loss(target, net->adapter->forward(prior), mask_s, cfg.loss.alpha);
    };
    const double initial = scalar(loss_now());
    double last = initial;
    for (int step = 0; step < 300; ++step) {
        opt.zero_grad();
        auto l = loss_now();
        l.backward();
        opt.step();
    }
    last = scalar(loss_now());
    const double reduction = 1.0 - last / initial;
    c.notes << "prior_loss " << initial << " -> " << last << " (" << 100 * reduction << "% lower)";
    c.expect(reduction >= 0.5, "prior_loss reduction below 50%");
}

// ---- 5, 6, 9 ---------------------------------------------------------------

struct OverfitRun {
    std::vector<double> totals;
    double composited_psnr = 0.0;
    std::string teacher_before, teacher_at_500;
};

OverfitRun overfit(const config::RunConfig& cfg, const train::TrainingSet& set, int64_t steps) {
    OverfitRun run;
    train::Trainer trainer(cfg, config::make_teacher(cfg));
    run.teacher_before = trainer.teacher().weight_bytes();
    trainer.fit(set, steps, nullptr, [&](int64_t step, const losses::LossReport& r) {
        run.totals.push_back(r.total);
        if (step == 500) run.teacher_at_500 = trainer.teacher().weight_bytes();
    });

    // Each training image against a fixed mask from the pool.
    auto net = trainer.net();
    net->eval();
    torch::NoGradGuard no_grad;
    double sum = 0.0;
    const std::size_t stride = set.masks.size() / set.images.size();
    for (std::size_t i = 0; i < set.images.size(); ++i) {
        auto sample = data::make_sample(set.images[i], set.masks[i * stride], set.fill);
        auto out = model::composite(net->forward(sample).output.clamp(-1, 1), sample);
        sum += eval::psnr(eval::to_unit_range(out), eval::to_unit_range(sample.image));
    }
    run.composited_psnr = sum / static_cast<double>(set.images.size());
    return run;
}

std::vector<double> window_means(const std::vector<double>& totals, std::size_t window, std::size_t limit) {
    std::vector<double> means;
    for (std::size_t start = 0; start + window <= std::min(limit, totals.size()); start += window) {
        double s = 0.0;
        for (std::size_t i = start; i < start + window; ++i) s += totals[i];
        means.push_back(s / static_cast<double>(window));
    }
    return means;
}

config::RunConfig tiny_config(const fs::path& image_dir) {
    auto c = config::preset("desk");
    c.model.c = 16;
    c.model.d = 8;
    c.model.spade_hidden = 8;
    c.model.n_spade_blocks = 2;
    c.model.n_prior_blocks = 1;
    c.model.disc_base = 8;
    c.data.image_size = 32;
    c.data.image_dir = image_dir.string();
    c.data.generated_masks = 8;
    c.train.batch_size = 2;
    c.train.max_steps = 3;
    return c;
}

// ---- 6 (structural half) -------------------------------------------------

void ablation_structure(Checks& c) {
    spl::testing::TempDir dir("acceptance-wo");
    spl::testing::write_scene_dir(dir / "images", 4, 32);
    auto wo = cli::ablated_config(tiny_config(dir / "images"), "wo-S");
    auto set = train::load_training_set(wo);
    train::Trainer trainer(wo, config::make_teacher(wo));
    bool prior_zero = true;
    bool adapter_grad_zero = true;
    trainer.fit(set, 5, nullptr, [&](int64_t, const losses::LossReport& r) {
        prior_zero = prior_zero && r.l_prior == 0.0;
        for (const auto& p : trainer.net()->adapter->parameters()) {
            if (p.grad().defined() && p.grad().abs().max().item<double>() != 0.0) adapter_grad_zero = false;
        }
    });
    c.expect(prior_zero, "wo-S logged a non-zero l_prior");
    c.expect(adapter_grad_zero, "wo-S adapter received a gradient");

    auto concat = cli::ablated_config(tiny_config(dir / "images"), "concat");
    auto spade = tiny_config(dir / "images");
    torch::NoGradGuard no_grad;
    for (int64_t size : {32, 64}) {
        auto sample = data::make_sample(spl::testing::random_image(1, size, size, 1),
                                        spl::testing::random_mask(1, size, size, 0.3, 1));
        model::SplNet a(spade.model), b(concat.model);
        auto ra = a->forward(sample);
        auto rb = b->forward(sample);
        c.expect(ra.output.sizes() == rb.output.sizes() && ra.feature.sizes() == rb.feature.sizes() &&
                     ra.prior.sizes() == rb.prior.sizes() && ra.adapted.sizes() == rb.adapted.sizes(),
                 "concat changed a shape at " + std::to_string(size));
    }
}

// ---- 7 -------------------------------------------------------------------

void metric_oracles(Checks& c) {
    namespace oracle = spl::testing::oracle;
    double worst = 0.0;
    for (uint64_t s = 0; s < 100; ++s) {
        auto gen = at::make_generator<at::CPUGeneratorImpl>(1000 + s);
        const int64_t h = 11 + static_cast<int64_t>(s % 7);
        const int64_t w = 11 + static_cast<int64_t>((s / 7) % 5);
        auto x = torch::rand({3, h, w}, gen, torch::kFloat64);
        auto y = (x + 0.3 * torch::rand({3, h, w}, gen, torch::kFloat64) - 0.15).clamp(0, 1);
        const double e = std::max({std::abs(eval::mae(x, y) - oracle::mae(x, y)),
                                   std::abs(eval::psnr(x, y) - oracle::psnr(x, y)),
                                   std::abs(eval::ssim(x, y) - oracle::ssim(x, y))});
        worst = std::max(worst, e);
        c.expect(eval::ssim(x, x) == 1.0, "ssim(x, x) != 1 for pair " + std::to_string(s));
        c.expect(eval::mae(x, x) == 0.0, "mae(x, x) != 0 for pair " + std::to_string(s));
    }
    c.expect(worst <= 1e-6, "oracle disagreement " + std::to_string(worst));

    std::vector<eval::SampleResult> samples;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ratio(0.0, 0.6);
    for (int i = 0; i < 200; ++i) samples.push_back({"i" + std::to_string(i), "m", ratio(rng), {20.0, 0.5, 0.1}});
    auto r = eval::aggregate(samples);
    int64_t total = 0;
    for (std::size_t i = 0; i < 6; ++i) total += r.rows[i].count;
    c.expect(total == r.row("All").count && total == 200, "bucket counts do not sum to All");
    c.notes << "worst oracle gap " << worst;
}

// ---- 8 -------------------------------------------------------------------

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void determinism(Checks& c) {
    spl::testing::TempDir dir("acceptance-det");
    spl::testing::write_scene_dir(dir / "images", 6, 32);
    auto cfg = tiny_config(dir / "images");
    const auto ckpt = cli::cmd_train(cfg, dir / "run").checkpoint;
    cli::cmd_eval(ckpt, cfg, dir / "eval1", std::nullopt);
    cli::cmd_eval(ckpt, cfg, dir / "eval2", dir / "eval1" / "pairing.tsv");
    c.expect(file_bytes(dir / "eval1" / "report.csv") == file_bytes(dir / "eval2" / "report.csv"),
             "report.csv differs between runs");
    c.expect(file_bytes(dir / "eval1" / "report.json") == file_bytes(dir / "eval2" / "report.json"),
             "report.json differs between runs");

    auto set = train::load_training_set(cfg);
    train::Trainer trainer(cfg, config::make_teacher(cfg));
    trainer.fit(set, 4, nullptr, {});
    trainer.save_checkpoint(dir / "mid.pt");
    losses::LossReport live, resumed;
    trainer.fit(set, 1, nullptr, [&](int64_t, const losses::LossReport& r) { live = r; });
    auto restored = train::load_checkpoint(dir / "mid.pt");
    restored.fit(set, 1, nullptr, [&](int64_t, const losses::LossReport& r) { resumed = r; });
    c.expect(live == resumed, "resumed step differs from uninterrupted step");
}

}  // namespace

int main() {
    torch::set_num_threads(1);
    bool all = true;
    all &= report(1, "shape chain at 64/128/256", shape_chain);
    all &= report(2, "loss oracles and weight defaults", loss_oracles);
    all &= report(3, "finite-difference gradients", gradients);
    all &= report(4, "distillation halves prior_loss in 300 steps", distillation);

    // Criterion 5 and the learning half of 6 share the desk-profile runs; 9 reads the SPADE run.
    auto desk = config::preset("desk");
    auto set = desk_set(desk);
    OverfitRun spade_run, concat_run;
    bool spade_ok = false;
    all &= report(5, "desk overfit: PSNR > 25 dB, decreasing window means", [&](Checks& c) {
        spade_run = overfit(desk, set, 2000);
        spade_ok = true;
        const auto means = window_means(spade_run.totals, 100, 1000);
        c.expect(means.size() == 10, "fewer than 1000 steps logged");
        for (std::size_t i = 1; i < means.size(); ++i) {
            if (!(means[i] < means[i - 1])) {
                c.expect(false, "window " + std::to_string(i + 1) + " mean " + std::to_string(means[i]) +
                                    " not below " + std::to_string(means[i - 1]));
            }
        }
        c.expect(spade_run.composited_psnr > 25.0, "composited PSNR " + std::to_string(spade_run.composited_psnr));
        c.notes << "PSNR " << spade_run.composited_psnr << " dB; window means";
        for (double m : means) c.notes << " " << m;
    });
    all &= report(6, "ablations: wo-S, concat shapes, SPADE >= concat", [&](Checks& c) {
        ablation_structure(c);
        c.expect(spade_ok, "SPADE run unavailable");
        auto concat = desk;
        concat.model.use_spade = false;
        concat_run = overfit(concat, set, 2000);
        c.expect(spade_run.composited_psnr >= concat_run.composited_psnr,
                 "SPADE PSNR " + std::to_string(spade_run.composited_psnr) + " below concat " +
                     std::to_string(concat_run.composited_psnr));
        c.notes << "SPADE " << spade_run.composited_psnr << " dB, concat " << concat_run.composited_psnr << " dB";
    });
    all &= report(7, "metric oracles and bucket partition", metric_oracles);
    all &= report(8, "report and checkpoint determinism", determinism);
    all &= report(9, "teacher frozen over 500 steps", [&](Checks& c) {
        c.expect(spade_ok, "SPADE run unavailable");
        c.expect(!spade_run.teacher_at_500.empty() && spade_run.teacher_at_500 == spade_run.teacher_before,
                 "teacher bytes changed");
    });
    std::printf("%s\n", all ? "all criteria passed" : "some criteria failed");
    return all ? 0 : 1;
}
