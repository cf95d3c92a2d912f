#include <cmath>

#include <gtest/gtest.h>

#include "clifgan/contrastive.hpp"
#include "clifgan/log.hpp"
#include "clifgan/tensors.hpp"
#include "support/oracles.hpp"

using namespace clifgan;
using namespace clifgan::contrastive;
namespace F = torch::nn::functional;

namespace {

struct Quiet : ::testing::Environment {
    void SetUp() override { log::set_level(log::Level::error); }
};
const auto* quiet = ::testing::AddGlobalTestEnvironment(new Quiet);

torch::Tensor unit_rows(torch::Tensor z) { return F::normalize(z, F::NormalizeFuncOptions().dim(1)); }

std::vector<std::vector<double>> rows(const torch::Tensor& z) {
    std::vector<std::vector<double>> out(z.size(0), std::vector<double>(z.size(1)));
    for (int64_t i = 0; i < z.size(0); ++i)
        for (int64_t d = 0; d < z.size(1); ++d) out[i][d] = z[i][d].item<double>();
    return out;
}

segnet::TrainSchedule schedule(int epochs, std::uint64_t seed) {
    segnet::TrainSchedule s;
    s.batch_size = 4;
    s.max_epochs = epochs;
    s.early_stop_patience = 10000;
    s.initial_lr = 0.05;
    s.weight_decay = 0;
    s.seed = seed;
    return s;
}

}  // namespace

TEST(ProjectionHead, ShapeAndUnitNorm) {
    seed_torch(1);
    ContrastiveConfig cfg;
    cfg.embedding_dim = 16;
    auto model = attach_projection_head(segnet::build_segmodel(segnet::SegModelConfig::desk()), cfg);
    const auto z = model->forward(torch::randn({2, 3, 64, 64}));
    EXPECT_EQ(z.sizes(), (std::vector<int64_t>{2, 16, 16, 16}));
    EXPECT_LT((z.norm(2, 1) - 1).abs().max().item<double>(), 1e-5);
}

TEST(ProjectionHead, DetachRestoresSegmentationOutput) {
    seed_torch(2);
    auto base = segnet::build_segmodel(segnet::SegModelConfig::desk());
    auto model = attach_projection_head(base, ContrastiveConfig{});
    auto back = detach_projection_head(model);
    back->eval();
    EXPECT_EQ(back->forward(torch::randn({1, 3, 32, 32})).sizes(), (std::vector<int64_t>{1, 5, 32, 32}));
}

TEST(Config, Defaults) {
    ContrastiveConfig cfg;
    EXPECT_FALSE(cfg.use_color_distortion);
    EXPECT_DOUBLE_EQ(cfg.temperature, 0.1);
    EXPECT_EQ(cfg.pixels_per_class, 64);
    cfg.temperature = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.pixels_per_class = 1;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Loss, ClosedFormForOrthogonalClasses) {
    for (int n : {2, 3, 5}) {
        auto z = torch::zeros({2 * n, 4}, torch::kFloat64);
        std::vector<int> labels;
        for (int i = 0; i < 2 * n; ++i) {
            z[i][i < n ? 0 : 1] = 1.0;
            labels.push_back(i < n ? 1 : 3);
        }
        const double tau = 0.1;
        const double e = std::exp(1.0 / tau);
        const double want = -std::log((n - 1) * e / ((n - 1) * e + n));
        EXPECT_NEAR(sampled_pixel_loss(z, labels, tau).item<double>(), want, 1e-12);
    }
}

TEST(Loss, SingleClassBatchContributesZero) {
    DamageMask one(4, 4, 2);
    const auto emb = unit_rows(torch::randn({1, 8, 4, 4}));
    Rng rng(3);
    LossStats stats;
    EXPECT_EQ(within_image_loss(emb, {one}, ContrastiveConfig{}, rng, &stats).item<double>(), 0.0);
    EXPECT_EQ(stats.images_skipped, 1);
}

TEST(Loss, MatchesBruteForceOnSixPixels) {
    torch::manual_seed(4);
    Rng rng(4);
    for (int k = 0; k < 50; ++k) {
        const auto z = unit_rows(torch::randn({6, 5}, torch::kFloat64));
        std::vector<int> labels(6);
        for (auto& l : labels) l = uniform_int(rng, 0, 2);
        const auto got = sampled_pixel_loss(z, labels, 0.1);
        const auto want = oracle::pixel_contrastive(rows(z), labels, 0.1);
        ASSERT_EQ(got.defined(), want.has_value());
        if (want) EXPECT_NEAR(got.item<double>(), *want, 1e-9 * std::max(1.0, *want));
    }
}

TEST(Loss, PermutationInvariant) {
    torch::manual_seed(5);
    const auto z = unit_rows(torch::randn({8, 6}, torch::kFloat64));
    const std::vector<int> labels{0, 0, 1, 1, 1, 2, 2, 0};
    const std::vector<int64_t> perm{3, 7, 0, 5, 1, 6, 2, 4};
    std::vector<int> plabels;
    for (auto i : perm) plabels.push_back(labels[i]);
    const auto zp = z.index_select(0, torch::tensor(perm));
    EXPECT_NEAR(sampled_pixel_loss(z, labels, 0.1).item<double>(), sampled_pixel_loss(zp, plabels, 0.1).item<double>(), 1e-12);
}

TEST(Loss, RotationInvariant) {
    torch::manual_seed(6);
    const auto z = unit_rows(torch::randn({9, 5}, torch::kFloat64));
    const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 1, 2};
    const auto q = std::get<0>(torch::linalg_qr(torch::randn({5, 5}, torch::kFloat64)));
    const double a = sampled_pixel_loss(z, labels, 0.1).item<double>();
    const double b = sampled_pixel_loss(z.matmul(q), labels, 0.1).item<double>();
    EXPECT_NEAR(a, b, 1e-6 * std::abs(a));
}

TEST(Loss, OnlySameImagePixelsInteract) {
    torch::manual_seed(7);
    DamageMask labels(4, 4, 0);
    for (int x = 0; x < 4; ++x) labels(2, x) = labels(3, x) = 1;
    DamageMask other(4, 4, 3);
    other(0, 0) = other(0, 1) = 4;
    const auto emb = unit_rows(torch::randn({2, 8, 4, 4}, torch::kFloat64));
    auto zeroed = emb.clone();
    zeroed[1].zero_();
    ContrastiveConfig cfg;
    Rng a(1), b(1), c(1);
    const double alone = within_image_loss(emb.slice(0, 0, 1), {labels}, cfg, a).item<double>();
    LossStats stats;
    const double with_zeroed_other = within_image_loss(zeroed, {labels, DamageMask(4, 4, 0)}, cfg, b, &stats).item<double>();
    EXPECT_NEAR(alone, with_zeroed_other, 1e-12);
    EXPECT_EQ(stats.images_used, 1);
    const double both = within_image_loss(emb, {labels, other}, cfg, c).item<double>();
    EXPECT_TRUE(std::isfinite(both));
}

TEST(Sampling, EdgeCases) {
    Rng rng(8);
    std::vector<int> sampled;
    DamageMask single(4, 4, 1);
    EXPECT_TRUE(sample_pixels(single, 8, rng, &sampled).empty());

    DamageMask mixed(4, 4, 0);
    mixed(0, 0) = 2;  // a lone pixel is not eligible
    mixed(3, 3) = 255;
    EXPECT_TRUE(sample_pixels(mixed, 8, rng, &sampled).empty());

    mixed(0, 1) = 2;
    const auto picked = sample_pixels(mixed, 5, rng, &sampled);
    ASSERT_EQ(picked.size(), sampled.size());
    EXPECT_EQ(std::count(sampled.begin(), sampled.end(), 0), 5);
    EXPECT_EQ(std::count(sampled.begin(), sampled.end(), 2), 2);
    for (auto [y, x] : picked) EXPECT_NE(mixed(y, x), 255);
}

TEST(Sampling, DownsampleLabelsNearest) {
    auto masks = torch::zeros({1, 8, 8}, torch::kInt64);
    masks[0].slice(0, 4, 8).slice(1, 4, 8).fill_(3);
    const auto small = downsample_labels(masks, 2, 2);
    ASSERT_EQ(small.size(), 1u);
    EXPECT_EQ(small[0](0, 0), 0);
    EXPECT_EQ(small[0](1, 1), 3);
}

TEST(Pretrain, LossDecreasesOnFixedBatch) {
    seed_torch(9);
    const auto tiles = data::generate_synthetic_dataset({}, 4, 9);
    std::vector<std::shared_ptr<const data::TileSample>> all;
    for (std::size_t i = 0; i < tiles.size(); ++i) all.push_back(tiles.load(i));
    const auto batch = make_batch(all);
    ContrastiveConfig cfg;
    cfg.embedding_dim = 16;
    auto model = attach_projection_head(segnet::build_segmodel(segnet::SegModelConfig::desk()), cfg);
    torch::optim::SGD opt(model->parameters(), torch::optim::SGDOptions(0.01).momentum(0.9));
    model->train();
    auto loss_at = [&] {
        Rng rng(9);
        const auto emb = model->forward(batch.post);
        return within_image_loss(emb, downsample_labels(batch.post_mask, emb.size(2), emb.size(3)), cfg, rng);
    };
    std::vector<double> trace;
    for (int it = 0; it < 50; ++it) {
        opt.zero_grad();
        auto loss = loss_at();
        trace.push_back(loss.item<double>());
        loss.backward();
        opt.step();
    }
    EXPECT_LT(trace.back(), trace.front());
    EXPECT_LT(trace.back(), 0.8 * trace.front());
}

TEST(Pretrain, DeterministicUnderSeed) {
    const auto tiles = data::generate_synthetic_dataset({}, 4, 10);
    ContrastiveConfig cfg;
    cfg.embedding_dim = 8;
    cfg.pretrain_epochs = 2;
    auto run = [&] {
        seed_torch(10);
        auto model = attach_projection_head(segnet::build_segmodel(segnet::SegModelConfig::desk()), cfg);
        return pretrain(model, tiles, cfg, schedule(2, 10));
    };
    const auto a = run(), b = run();
    ASSERT_EQ(a.train_log.size(), b.train_log.size());
    for (std::size_t i = 0; i < a.train_log.size(); ++i) EXPECT_EQ(a.train_log[i].train_loss, b.train_log[i].train_loss);
    EXPECT_EQ(a.provenance, CheckpointProvenance::contrastive_pretrained);
}

TEST(Finetune, StartsFromPretrainedBackbone) {
    seed_torch(11);
    const auto tiles = data::generate_synthetic_dataset({}, 4, 11);
    ContrastiveConfig cfg;
    cfg.embedding_dim = 8;
    cfg.pretrain_epochs = 1;
    auto model = attach_projection_head(segnet::build_segmodel(segnet::SegModelConfig::desk()), cfg);
    const auto pre = pretrain(model, tiles, cfg, schedule(1, 11));
    auto seg = model_from_pretrained(pre);
    for (const auto& p : seg->backbone->named_parameters()) {
        const auto* stored = pre.find("model.backbone." + p.key());
        ASSERT_NE(stored, nullptr) << p.key();
        EXPECT_TRUE(torch::equal(*stored, p.value())) << p.key();
    }
    seg->eval();
    EXPECT_EQ(seg->forward(torch::randn({1, 3, 64, 64})).sizes(), (std::vector<int64_t>{1, 5, 64, 64}));

    auto vanilla = segnet::make_checkpoint(seg, CheckpointProvenance::vanilla);
    EXPECT_THROW(model_from_pretrained(vanilla), Error);

    const auto ft = finetune(pre, tiles, tiles, schedule(1, 11));
    EXPECT_EQ(ft.provenance, CheckpointProvenance::contrastive_finetuned);
    EXPECT_GE(ft.train_time_seconds, pre.train_time_seconds);
}

TEST(Finetune, PretrainedReachesLowLossInFewerEpochs) {
    const auto tiles = data::generate_synthetic_dataset({}, 4, 12);
    auto epochs_to = [](const std::vector<TrainLogRecord>& log) {
        for (const auto& r : log)
            if (r.train_loss < 0.05) return r.epoch + 1;
        return static_cast<int>(log.size()) + 1;
    };
    std::vector<int> scratch, tuned;
    for (std::uint64_t seed : {1, 2, 3}) {
        seed_torch(seed);
        auto m = segnet::build_segmodel(segnet::SegModelConfig::desk());
        scratch.push_back(epochs_to(segnet::train_vanilla(m, tiles, tiles, schedule(400, seed)).train_log));

        seed_torch(seed);
        ContrastiveConfig cfg;
        cfg.embedding_dim = 32;
        cfg.pretrain_epochs = 100;
        cfg.seed = seed;
        auto cm = attach_projection_head(segnet::build_segmodel(segnet::SegModelConfig::desk()), cfg);
        const auto pre = pretrain(cm, tiles, cfg, schedule(100, seed));
        tuned.push_back(epochs_to(finetune(pre, tiles, tiles, schedule(400, seed)).train_log));
    }
    std::sort(scratch.begin(), scratch.end());
    std::sort(tuned.begin(), tuned.end());
    EXPECT_LT(tuned[1], scratch[1]) << "median epochs: pretrained " << tuned[1] << " vs scratch " << scratch[1];
}
