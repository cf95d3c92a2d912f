#include <cmath>

#include <gtest/gtest.h>

#include "clifgan/fuse.hpp"
#include "clifgan/gan.hpp"
#include "clifgan/log.hpp"
#include "clifgan/tensors.hpp"

using namespace clifgan;
using namespace clifgan::gan;

namespace {

struct Quiet : ::testing::Environment {
    void SetUp() override { log::set_level(log::Level::error); }
};
const auto* quiet = ::testing::AddGlobalTestEnvironment(new Quiet);

GeneratorConfig small_generator(Variant v, int depth = 4) {
    GeneratorConfig c;
    c.variant = v;
    c.depth = depth;
    c.base_channels = 8;
    return c;
}

DiscriminatorConfig small_discriminator() {
    DiscriminatorConfig c;
    c.base_channels = 8;
    return c;
}

GanTrainConfig quick_training(int epochs) {
    GanTrainConfig c;
    c.epochs = epochs;
    c.batch_size = 4;
    c.image_size = 64;
    c.seed = 5;
    return c;
}

// n separated 2×2 buildings, 20 per band of 4 rows.
DamageMask building_grid(int n) {
    const int per_row = 20;
    DamageMask f(((n + per_row - 1) / per_row) * 4, per_row * 4, 0);
    for (int b = 0; b < n; ++b) {
        const int y = (b / per_row) * 4, x = (b % per_row) * 4;
        f(y, x) = f(y, x + 1) = f(y + 1, x) = f(y + 1, x + 1) = 1;
    }
    return f;
}

}  // namespace

TEST(EditMask, SetAllFillsFootprintsWithTarget) {
    Rng scene(1);
    const auto s = data::generate_synthetic_scene({}, scene);
    MaskEditSpec spec;
    spec.mode = EditMode::set_all;
    spec.target_level = 4;
    Rng rng(1);
    const auto out = edit_mask(s.post_mask, s.pre_mask, spec, rng);
    EXPECT_TRUE(label_set(out) == (std::set<std::uint8_t>{0, 4}));
    for (std::size_t i = 0; i < out.area(); ++i) EXPECT_EQ(out.cells()[i] != 0, s.pre_mask.cells()[i] != 0);
}

TEST(EditMask, DegenerateDistributionGivesNoDamage) {
    const auto f = building_grid(12);
    MaskEditSpec spec;
    spec.level_distribution = {1, 0, 0, 0};
    Rng rng(2);
    const auto out = edit_mask(f, f, spec, rng);
    EXPECT_EQ(out, f);
}

TEST(EditMask, RandomizedLevelsFollowDistribution) {
    const auto f = building_grid(400);
    ASSERT_EQ(fuse::connected_components(f, 1).second, 400);
    MaskEditSpec spec;
    Rng rng(3);
    const auto out = edit_mask(f, f, spec, rng);
    std::array<int, 5> buildings{};
    const auto [ids, n] = fuse::connected_components(f, 1);
    std::vector<int> level(n + 1, -1);
    for (std::size_t i = 0; i < out.area(); ++i) {
        const int id = ids.cells()[i];
        if (id == 0) continue;
        if (level[id] < 0) {
            level[id] = out.cells()[i];
            ++buildings[level[id]];
        }
        EXPECT_EQ(level[id], out.cells()[i]) << "building " << id << " is not uniform";
    }
    const double sigma = std::sqrt(400 * 0.25 * 0.75);
    for (int l = 1; l <= 4; ++l) EXPECT_LE(std::abs(buildings[l] - 100), 4 * sigma) << "level " << l;
    EXPECT_EQ(buildings[0], 0);
}

TEST(EditMask, PerBuildingMapAndBackgroundPreserved) {
    DamageMask f(4, 8, 0);
    f(1, 1) = f(1, 2) = 1;
    f(2, 5) = f(2, 6) = 1;
    DamageMask current = f;
    current(2, 6) = 3;
    MaskEditSpec spec;
    spec.mode = EditMode::per_building_map;
    spec.mapping = {{2, 4}};
    Rng rng(4);
    const auto out = edit_mask(current, f, spec, rng);
    EXPECT_EQ(out(1, 1), 1);
    EXPECT_EQ(out(1, 2), 1);
    EXPECT_EQ(out(2, 5), 4);
    EXPECT_EQ(out(2, 6), 4);
    for (std::size_t i = 0; i < out.area(); ++i)
        if (f.cells()[i] == 0) EXPECT_EQ(out.cells()[i], 0);
}

TEST(EditMask, InvalidSpecsRejected) {
    MaskEditSpec spec;
    spec.level_distribution = {0.5, 0.5, 0.5, 0};
    EXPECT_THROW(spec.validate(), ConfigError);
    spec = {};
    spec.mode = EditMode::set_all;
    spec.target_level = 0;
    EXPECT_THROW(spec.validate(), ConfigError);
    DamageMask bad(2, 2, 2);
    Rng rng(5);
    EXPECT_THROW(edit_mask(bad, bad, MaskEditSpec{}, rng), Error);
}

TEST(Generator, ShapeContracts) {
    seed_torch(6);
    torch::NoGradGuard guard;
    for (int size : {64, 128, 256}) {
        auto g1 = UnetGenerator(small_generator(Variant::gan1, 6));
        auto g2 = UnetGenerator(small_generator(Variant::gan2, 6));
        g1->eval();
        g2->eval();
        const auto x = torch::randn({1, 4, size, size});
        EXPECT_EQ(g1->forward(x).sizes(), (std::vector<int64_t>{1, 3, size, size}));
        EXPECT_EQ(g2->forward(x).sizes(), (std::vector<int64_t>{1, 4, size, size}));
    }
}

TEST(Generator, OutputInTanhRange) {
    seed_torch(7);
    auto g = UnetGenerator(small_generator(Variant::gan2));
    const auto y = g->forward(torch::randn({2, 4, 64, 64}) * 10);
    EXPECT_LE(y.abs().max().item<double>(), 1.0);
}

TEST(Generator, IndivisibleInputRejected) {
    auto g = UnetGenerator(small_generator(Variant::gan1, 4));
    EXPECT_THROW(g->forward(torch::randn({1, 4, 40, 40})), ConfigError);
}

TEST(Generator, DefaultsFollowPix2Pix) {
    GanTrainConfig t;
    EXPECT_EQ(t.image_size, 256);
    EXPECT_DOUBLE_EQ(t.l1_weight, 100);
    EXPECT_DOUBLE_EQ(t.lr, 2e-4);
    EXPECT_DOUBLE_EQ(t.beta1, 0.5);
    EXPECT_EQ(GeneratorConfig{}.in_channels(), 4);
}

TEST(Discriminator, PatchGridShrinksWithLayers) {
    seed_torch(8);
    torch::NoGradGuard guard;
    for (int layers : {1, 2, 3}) {
        DiscriminatorConfig c = small_discriminator();
        c.layers = layers;
        PatchDiscriminator d(4, 3, c);
        d->eval();
        for (int size : {64, 128}) {
            const auto y = d->forward(torch::randn({1, 4, size, size}), torch::randn({1, 3, size, size}));
            EXPECT_EQ(y.dim(), 4);
            EXPECT_EQ(y.size(2), patch_grid_size(size, layers));
            EXPECT_EQ(y.size(2), size >> layers);
            EXPECT_GT(y.size(2) * y.size(3), 1);
        }
    }
}

TEST(Encoding, LevelsRoundTrip) {
    DamageMask m(2, 3);
    const std::uint8_t values[6] = {0, 1, 2, 3, 4, 255};
    for (int i = 0; i < 6; ++i) m(i / 3, i % 3) = values[i];
    const auto t = encode_mask(m);
    EXPECT_EQ(t.sizes(), (std::vector<int64_t>{1, 1, 2, 3}));
    const double want[6] = {-1, -0.5, 0, 0.5, 1, -1};
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(t[0][0][i / 3][i % 3].item<double>(), want[i], 1e-7);
    auto decoded = decode_mask(t);
    m(1, 2) = 0;
    EXPECT_EQ(decoded, m);
}

TEST(Encoding, NearestLevelTable) {
    // value -> level units 4(v+1)/2
    EXPECT_EQ(decode_level(0.49), 3);   // 2.98
    EXPECT_EQ(decode_level(0.24), 2);   // 2.48
    EXPECT_EQ(decode_level(0.26), 3);   // 2.52
    EXPECT_EQ(decode_level(-0.76), 0);  // 0.48
    EXPECT_EQ(decode_level(-0.74), 1);  // 0.52
    EXPECT_EQ(decode_level(0.76), 4);   // 3.52
    EXPECT_EQ(decode_level(-1.5), 0);
    EXPECT_EQ(decode_level(1.5), 4);
}

TEST(Training, GradientReachesGenerator) {
    seed_torch(9);
    auto g = UnetGenerator(small_generator(Variant::gan2));
    PatchDiscriminator d(4, 4, small_discriminator());
    const auto x = torch::randn({2, 4, 64, 64});
    const auto target = torch::rand({2, 4, 64, 64}) * 2 - 1;
    g->train();
    const auto fake = g->forward(x);
    const auto logits = d->forward(x, fake);
    const auto loss = torch::binary_cross_entropy_with_logits(logits, torch::ones_like(logits)) +
                      100 * torch::l1_loss(fake, target);
    loss.backward();
    std::int64_t total = 0, nonzero = 0;
    for (const auto& p : g->parameters()) {
        total += p.numel();
        nonzero += p.grad().ne(0).sum().item<int64_t>();
    }
    EXPECT_GE(static_cast<double>(nonzero) / total, 0.99);
}

TEST(Training, SeededLossTraceIsDeterministic) {
    const auto tiles = data::generate_synthetic_dataset({}, 4, 10);
    auto run = [&] {
        seed_torch(10);
        auto pair = build_gan(Variant::gan1, small_generator(Variant::gan1), small_discriminator());
        return train_gan(pair, tiles, quick_training(2)).trace;
    };
    const auto a = run(), b = run();
    ASSERT_EQ(a.size(), 2u);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].d_loss, b[i].d_loss);
        EXPECT_EQ(a[i].g_adversarial, b[i].g_adversarial);
        EXPECT_EQ(a[i].g_l1, b[i].g_l1);
    }
}

TEST(Training, DiscriminatorSeparatesAfterOverfit) {
    const auto tiles = data::generate_synthetic_dataset({}, 4, 11);
    seed_torch(11);
    auto pair = build_gan(Variant::gan1, small_generator(Variant::gan1), small_discriminator());
    train_gan(pair, tiles, quick_training(150));
    std::vector<std::shared_ptr<const data::TileSample>> all;
    for (std::size_t i = 0; i < tiles.size(); ++i) all.push_back(tiles.load(i));
    const auto batch = make_batch(all);
    torch::NoGradGuard guard;
    pair.generator->eval();
    pair.discriminator->eval();
    std::vector<torch::Tensor> inputs;
    for (const auto& t : all) inputs.push_back(generator_input(t->pre_image, t->post_mask));
    const auto cond = torch::cat(inputs, 0);
    const auto fake = pair.generator->forward(cond);
    const double real_score = pair.discriminator->forward(cond, batch.post).mean().item<double>();
    const double fake_score = pair.discriminator->forward(cond, fake).mean().item<double>();
    EXPECT_GT(real_score, fake_score);
}

TEST(Synthesis, Gan1PassesMaskThrough) {
    seed_torch(12);
    auto g = UnetGenerator(small_generator(Variant::gan1));
    Rng rng(12);
    const auto s = data::generate_synthetic_scene({}, rng);
    const auto out = synthesize(g, s.pre_image, s.post_mask, "syn");
    EXPECT_EQ(out.post_mask, s.post_mask);
    EXPECT_EQ(out.provenance, data::Provenance::gan1_synthetic);
    EXPECT_NO_THROW(data::validate(out));
    for (float v : out.post_image.data()) {
        EXPECT_GE(v, 0.f);
        EXPECT_LE(v, 1.f);
    }
}

TEST(Synthesis, Gan2DecodesItsMaskChannel) {
    seed_torch(13);
    auto g = UnetGenerator(small_generator(Variant::gan2));
    Rng rng(13);
    const auto s = data::generate_synthetic_scene({}, rng);
    const auto out = synthesize(g, s.pre_image, s.post_mask);
    EXPECT_EQ(out.provenance, data::Provenance::gan2_synthetic);
    EXPECT_TRUE(mask_is_valid(out.post_mask));
    for (auto v : label_set(out.post_mask)) EXPECT_LE(v, 4);
}

TEST(Augment, AppendsOneSyntheticPerBaseEntry) {
    seed_torch(14);
    auto g = UnetGenerator(small_generator(Variant::gan1));
    const auto base = data::generate_synthetic_dataset({}, 6, 14);
    Rng rng(14);
    const auto out = augment_dataset(base, g, static_cast<int>(base.size()), MaskEditSpec{}, rng);
    ASSERT_EQ(out.size(), 2 * base.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto s = out.load(i);
        if (i < base.size())
            EXPECT_EQ(s->provenance, data::Provenance::toy_synthetic);
        else
            EXPECT_EQ(s->provenance, data::Provenance::gan1_synthetic);
    }
    EXPECT_THROW(augment_dataset(base, g, 0, MaskEditSpec{}, rng), ConfigError);
}

TEST(Augment, TenPercentRegimeDoublesTo560) {
    seed_torch(15);
    auto g = UnetGenerator(small_generator(Variant::gan1));
    const auto base = data::generate_synthetic_dataset({}, 280, 15);
    Rng rng(15);
    const auto out = augment_dataset(base, g, 280, MaskEditSpec{}, rng);
    EXPECT_EQ(out.size(), 560u);
    int synthetic = 0;
    for (const auto& e : out.entries()) synthetic += e.provenance == data::Provenance::gan1_synthetic;
    EXPECT_EQ(synthetic, 280);
}

TEST(Checkpoint, GeneratorReloads) {
    seed_torch(16);
    const auto tiles = data::generate_synthetic_dataset({}, 4, 16);
    auto pair = build_gan(Variant::gan2, small_generator(Variant::gan2), small_discriminator());
    auto result = train_gan(pair, tiles, quick_training(1));
    auto g = load_generator(result.generator);
    auto d = load_discriminator(result.discriminator);
    g->eval();
    pair.generator->eval();
    torch::NoGradGuard guard;
    const auto x = torch::randn({1, 4, 64, 64});
    EXPECT_TRUE(torch::equal(g->forward(x), pair.generator->forward(x)));
    EXPECT_EQ(result.generator.provenance, CheckpointProvenance::gan_generator);
    EXPECT_EQ(result.discriminator.provenance, CheckpointProvenance::gan_discriminator);
}
