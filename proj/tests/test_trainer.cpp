#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "spl/errors.hpp"
#include "spl/trainer.hpp"
#include "test_util.hpp"

using namespace spl;
using spl::testing::TempDir;

namespace {

// Desk profile narrowed further so each step takes milliseconds.
config::RunConfig tiny_config(uint64_t seed = 3) {
    auto c = config::preset("desk");
    c.model.c = 16;
    c.model.d = 8;
    c.model.spade_hidden = 8;
    c.model.n_spade_blocks = 2;
    c.model.n_prior_blocks = 1;
    c.model.disc_base = 8;
    c.data.image_size = 32;
    c.data.generated_masks = 8;
    c.train.batch_size = 2;
    c.train.seed = seed;
    return c;
}

train::TrainingSet synthetic_set(const config::RunConfig& c, int n_images) {
    train::TrainingSet set;
    for (int i = 0; i < n_images; ++i) {
        set.images.push_back(data::preprocess(data::render_synthetic_scene(static_cast<uint64_t>(i), 48),
                                              c.data.image_size, false));
    }
    set.masks = train::generate_mask_pool(c.data, c.data.generated_masks);
    return set;
}

std::map<std::string, torch::Tensor> snapshot(const torch::nn::Module& m) {
    std::map<std::string, torch::Tensor> out;
    for (const auto& item : m.named_parameters()) out[item.key()] = item.value().detach().clone();
    return out;
}

bool unchanged(const torch::nn::Module& m, const std::map<std::string, torch::Tensor>& before) {
    for (const auto& item : m.named_parameters()) {
        if (!torch::equal(item.value(), before.at(item.key()))) return false;
    }
    return true;
}

std::vector<losses::LossReport> run(const config::RunConfig& c, const train::TrainingSet& set, int steps) {
    train::Trainer t(c, config::make_teacher(c));
    std::vector<losses::LossReport> reports;
    t.fit(set, steps, nullptr, [&](int64_t, const losses::LossReport& r) { reports.push_back(r); });
    return reports;
}

}  // namespace

TEST(LrSchedule, ProfileDecay) {
    EXPECT_EQ(train::lr_schedule(29, config::preset("places2").train), 1e-4);
    EXPECT_EQ(train::lr_schedule(30, config::preset("places2").train), 1e-5);
    EXPECT_EQ(train::lr_schedule(49, config::preset("streetview").train), 1e-4);
    EXPECT_EQ(train::lr_schedule(50, config::preset("streetview").train), 1e-5);
    for (const auto& p : config::preset_names()) EXPECT_EQ(train::lr_schedule(0, config::preset(p).train), 1e-4);
}

TEST(PlannedSteps, EpochBudgetOrCap) {
    auto t = config::preset("places2").train;
    EXPECT_EQ(train::planned_steps(t, 100), 40 * 12);
    t.max_steps = 7;
    EXPECT_EQ(train::planned_steps(t, 100), 7);
}

TEST(BatchSampler, DropsTailAndCoversEachEpoch) {
    train::BatchSampler s(10, 3, 4, 1);
    std::multiset<std::size_t> seen;
    for (int i = 0; i < 2; ++i) {
        auto b = s.next();
        ASSERT_EQ(b.images.size(), 4u);
        ASSERT_EQ(b.masks.size(), 4u);
        for (auto m : b.masks) EXPECT_LT(m, 3u);
        seen.insert(b.images.begin(), b.images.end());
    }
    EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 8u);  // no repeats inside an epoch
    EXPECT_EQ(s.epoch(), 0);
    s.next();  // 2 images left over are dropped
    EXPECT_EQ(s.epoch(), 1);
    EXPECT_THROW(train::BatchSampler(3, 1, 4, 0), ConfigError);
}

TEST(BatchSampler, StateRestoresExactly) {
    train::BatchSampler a(9, 5, 2, 42);
    for (int i = 0; i < 7; ++i) a.next();
    train::BatchSampler b(9, 5, 2, 0);
    b.restore(a.state());
    for (int i = 0; i < 20; ++i) {
        auto x = a.next(), y = b.next();
        EXPECT_EQ(x.images, y.images);
        EXPECT_EQ(x.masks, y.masks);
    }
    EXPECT_EQ(a.epoch(), b.epoch());
}

TEST(MaskPool, FollowsConfiguredBuckets) {
    auto c = tiny_config();
    c.data.mask_buckets = {"0%-10%", "30%-40%"};
    auto pool = train::generate_mask_pool(c.data, 6);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        EXPECT_EQ(data::bucket_of(data::mask_ratio(pool[i])).label, c.data.mask_buckets[i % 2]);
    }
}

TEST(Trainer, ZeroWeightsLeaveGeneratorUntouched) {
    auto c = tiny_config();
    c.loss.lambda_img = c.loss.lambda_adv = c.loss.lambda_prior = 0.0;
    auto set = synthetic_set(c, 4);
    train::Trainer t(c, config::make_teacher(c));
    const auto g_before = snapshot(*t.net());
    const auto d_before = snapshot(*t.discriminator());
    t.fit(set, 3);
    EXPECT_TRUE(unchanged(*t.net(), g_before));
    EXPECT_FALSE(unchanged(*t.discriminator(), d_before));
}

TEST(Trainer, OptimizersPartitionParameters) {
    auto c = tiny_config();
    train::Trainer t(c, config::make_teacher(c));
    std::set<const void*> g, d, teacher;
    for (const auto& p : t.generator_optimizer().param_groups().at(0).params()) g.insert(p.unsafeGetTensorImpl());
    for (const auto& p : t.discriminator_optimizer().param_groups().at(0).params()) d.insert(p.unsafeGetTensorImpl());
    for (const auto& p : t.teacher().parameters()) teacher.insert(p.unsafeGetTensorImpl());
    EXPECT_EQ(g.size(), t.net()->parameters().size());
    EXPECT_EQ(d.size(), t.discriminator()->parameters().size());
    for (auto* p : g) {
        EXPECT_FALSE(d.count(p));
        EXPECT_FALSE(teacher.count(p));
    }
    for (auto* p : d) EXPECT_FALSE(teacher.count(p));
}

TEST(Trainer, TeacherBytesNeverChange) {
    auto c = tiny_config();
    auto set = synthetic_set(c, 4);
    train::Trainer t(c, config::make_teacher(c));
    const auto before = t.teacher().weight_bytes();
    t.fit(set, 10);
    EXPECT_EQ(t.teacher().weight_bytes(), before);
}

TEST(Trainer, IdenticalSeedsGiveIdenticalStreams) {
    auto c = tiny_config(11);
    auto set = synthetic_set(c, 4);
    auto a = run(c, set, 6);
    auto b = run(c, set, 6);
    ASSERT_EQ(a.size(), 6u);
    EXPECT_EQ(a, b);
    auto other = tiny_config(12);
    EXPECT_NE(run(other, set, 6), a);
}

TEST(Trainer, WithoutPriorAdapterGetsNoGradient) {
    auto c = tiny_config();
    c.model.use_prior = false;
    c.loss.use_prior = false;
    auto set = synthetic_set(c, 4);
    train::Trainer t(c, config::make_teacher(c));
    const auto adapter_before = snapshot(*t.net()->adapter);
    std::vector<losses::LossReport> reports;
    t.fit(set, 4, nullptr, [&](int64_t, const losses::LossReport& r) { reports.push_back(r); });
    for (const auto& r : reports) EXPECT_EQ(r.l_prior, 0.0);
    for (const auto& p : t.net()->adapter->parameters()) {
        EXPECT_TRUE(!p.grad().defined() || p.grad().abs().max().item<float>() == 0.0f);
    }
    EXPECT_TRUE(unchanged(*t.net()->adapter, adapter_before));
}

TEST(Trainer, NonFiniteInputAbortsBeforeUpdates) {
    auto c = tiny_config();
    train::Trainer t(c, config::make_teacher(c));
    auto image = spl::testing::random_image(2, 32, 32, 1);
    image[0][0][3][3] = std::numeric_limits<float>::quiet_NaN();
    auto sample = data::make_sample(image, spl::testing::random_mask(2, 32, 32, 0.3, 2));
    const auto g = snapshot(*t.net());
    const auto d = snapshot(*t.discriminator());
    try {
        t.train_step(sample);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_NE(std::string(e.what()).find("input hash"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("l_img="), std::string::npos);
    }
    EXPECT_TRUE(unchanged(*t.net(), g));
    EXPECT_TRUE(unchanged(*t.discriminator(), d));
    EXPECT_EQ(t.step(), 0);
}

TEST(Trainer, OverfitsFixedBatchIn200Steps) {
    auto c = config::preset("desk");
    c.model.c = 32;
    c.model.spade_hidden = 16;
    c.train.batch_size = 8;
    auto set = synthetic_set(c, 8);
    set.images.clear();
    for (uint64_t i = 0; i < 8; ++i) {
        set.images.push_back(data::preprocess(data::render_synthetic_scene(i, 64), 64, false));
    }
    std::vector<torch::Tensor> masks;
    for (int i = 0; i < 8; ++i) masks.push_back(set.masks[static_cast<std::size_t>(i)]);
    auto batch = data::make_sample(torch::cat(set.images), torch::cat(masks));

    train::Trainer t(c, config::make_teacher(c));
    const double first = t.train_step(batch).total;
    double last = first;
    for (int i = 1; i < 200; ++i) last = t.train_step(batch).total;
    EXPECT_LT(last, first);
}

TEST(Trainer, LogRowsFollowInterval) {
    auto c = tiny_config();
    c.train.log_every = 2;
    auto set = synthetic_set(c, 4);
    train::Trainer t(c, config::make_teacher(c));
    std::ostringstream log;
    t.fit(set, 5, &log);
    std::istringstream lines(log.str());
    std::vector<std::string> rows;
    for (std::string line; std::getline(lines, line);) rows.push_back(line);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].rfind("2,", 0), 0u);
    EXPECT_EQ(rows[1].rfind("4,", 0), 0u);
}

TEST(Checkpoint, ContinuationIsExact) {
    TempDir dir("ckpt");
    auto c = tiny_config(5);
    auto set = synthetic_set(c, 5);

    train::Trainer uninterrupted(c, config::make_teacher(c));
    uninterrupted.fit(set, 4);
    uninterrupted.save_checkpoint(dir / "mid.pt");
    std::vector<losses::LossReport> expected;
    uninterrupted.fit(set, 3, nullptr, [&](int64_t, const losses::LossReport& r) { expected.push_back(r); });

    auto resumed = train::load_checkpoint(dir / "mid.pt", c.model);
    EXPECT_EQ(resumed.step(), 4);
    std::vector<losses::LossReport> got;
    resumed.fit(set, 3, nullptr, [&](int64_t, const losses::LossReport& r) { got.push_back(r); });
    EXPECT_EQ(got, expected);
    EXPECT_EQ(resumed.teacher().weight_bytes(), uninterrupted.teacher().weight_bytes());
}

TEST(Checkpoint, ManifestListsEveryTensorOnce) {
    TempDir dir("ckpt");
    auto c = tiny_config();
    train::Trainer t(c, config::make_teacher(c));
    t.save_checkpoint(dir / "c.pt");
    auto entries = train::read_checkpoint_manifest(dir / "c.pt");
    std::map<std::string, int> counts;
    for (const auto& e : entries) ++counts[e.name];
    for (const auto& [name, n] : counts) EXPECT_EQ(n, 1) << name;
    for (const auto& item : t.net()->named_parameters()) {
        ASSERT_TRUE(counts.count("net/" + item.key())) << item.key();
    }
    for (const auto& item : t.discriminator()->named_parameters()) {
        ASSERT_TRUE(counts.count("disc/" + item.key())) << item.key();
    }
    for (const auto& e : entries) {
        if (e.name == "net/image_encoder.stem.weight") {
            EXPECT_EQ(e.dtype, "Float");
            EXPECT_EQ(e.shape.size(), 4u);
        }
    }
    EXPECT_FALSE(std::filesystem::exists(dir / "c.pt.tmp"));
}

TEST(Checkpoint, MismatchedModelIsRefused) {
    TempDir dir("ckpt");
    auto c = tiny_config();
    train::Trainer t(c, config::make_teacher(c));
    t.save_checkpoint(dir / "c.pt");
    auto other = c.model;
    other.c = 32;
    EXPECT_THROW(train::load_checkpoint(dir / "c.pt", other), ConfigError);
    EXPECT_NO_THROW(train::load_checkpoint(dir / "c.pt", c.model));
}

TEST(Checkpoint, UnknownSchemaVersionIsRefused) {
    TempDir dir("ckpt");
    torch::serialize::OutputArchive archive;
    archive.write("schema_version", c10::IValue(int64_t{99}));
    archive.save_to((dir / "future.pt").string());
    try {
        train::load_checkpoint(dir / "future.pt");
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_NE(std::string(e.what()).find("99"), std::string::npos);
    }
    EXPECT_THROW(train::load_checkpoint(dir / "nothing.pt"), LoadError);
}
