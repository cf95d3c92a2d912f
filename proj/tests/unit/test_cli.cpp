#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "clifgan/cli.hpp"
#include "clifgan/image_io.hpp"
#include "clifgan/log.hpp"
#include "clifgan/overlay.hpp"

using namespace clifgan;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Quiet : ::testing::Environment {
    void SetUp() override { log::set_level(log::Level::error); }
};
const auto* quiet = ::testing::AddGlobalTestEnvironment(new Quiet);

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("clifgan_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run(const std::vector<std::string>& args, std::string* out_text = nullptr) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (out_text) *out_text = out.str() + err.str();
    return code;
}

std::vector<json> run_manifests(const fs::path& out) {
    std::vector<json> docs;
    if (!fs::exists(out / "runs")) return docs;
    for (const auto& e : fs::directory_iterator(out / "runs")) {
        std::ifstream in(e.path());
        docs.push_back(json::parse(in));
    }
    return docs;
}

fs::path write_json(const fs::path& dir, const std::string& name, const json& j) {
    const auto p = dir / name;
    std::ofstream(p) << j.dump(2);
    return p;
}

}  // namespace

TEST(Cli, HelpExitsZero) {
    std::string text;
    EXPECT_EQ(run({"--help"}, &text), cli::ok);
    EXPECT_NE(text.find("synth-data"), std::string::npos);
    EXPECT_NE(text.find("render"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run({}), cli::usage_error);
    EXPECT_EQ(run({"no-such-command"}), cli::usage_error);
    EXPECT_EQ(run({"--gan", "gan3", "synth-data"}), cli::usage_error);
    EXPECT_EQ(run({"--data-fraction", "1.5", "synth-data"}), cli::usage_error);
    EXPECT_EQ(run({"--config", "/nonexistent/config.json", "synth-data"}), cli::usage_error);
}

TEST(Cli, BadConfigExitsTwoAndWritesManifest) {
    const auto dir = scratch("badcfg");
    const auto cfg = write_json(dir, "cfg.json", json{{"no_such_section", 1}});
    EXPECT_EQ(run({"--config", cfg.string(), "--out", (dir / "out").string(), "synth-data"}), cli::usage_error);
    const auto docs = run_manifests(dir / "out");
    ASSERT_EQ(docs.size(), 1u);
    EXPECT_EQ(docs[0].at("exit_code"), 2);
    EXPECT_TRUE(docs[0].contains("error"));
}

TEST(Cli, RuntimeFailureExitsOne) {
    const auto dir = scratch("runtime");
    EXPECT_EQ(run({"--out", dir.string(), "train-seg", "--train", (dir / "missing.json").string()}),
              cli::runtime_failure);
    const auto docs = run_manifests(dir);
    ASSERT_EQ(docs.size(), 1u);
    EXPECT_EQ(docs[0].at("exit_code"), 1);
}

TEST(Cli, SynthDataWritesSplitsAndManifest) {
    const auto dir = scratch("synth");
    const auto cfg = write_json(dir, "cfg.json", json{{"data", {{"count", 10}, {"train_fraction", 0.8}}}});
    ASSERT_EQ(run({"--config", cfg.string(), "--seed", "4", "--out", (dir / "out").string(), "synth-data"}), cli::ok);
    const auto train = data::load_manifest(dir / "out" / "data" / "train" / "manifest.json");
    const auto val = data::load_manifest(dir / "out" / "data" / "val" / "manifest.json");
    EXPECT_EQ(train.size() + val.size(), 10u);
    EXPECT_EQ(val.size(), 2u);
    const auto docs = run_manifests(dir / "out");
    ASSERT_EQ(docs.size(), 1u);
    const auto& m = docs[0];
    EXPECT_EQ(m.at("command"), "synth-data");
    EXPECT_EQ(m.at("seed"), 4);
    EXPECT_EQ(m.at("exit_code"), 0);
    EXPECT_EQ(m.at("outputs").size(), 2u);
    EXPECT_TRUE(m.at("inputs").contains(cfg.string()));
    for (const char* key : {"argv", "config", "start", "end", "wall_seconds"}) EXPECT_TRUE(m.contains(key)) << key;
}

TEST(Cli, SameSeedSameData) {
    const auto dir = scratch("seeded");
    const auto cfg = write_json(dir, "cfg.json", json{{"data", {{"count", 4}}}});
    for (const char* sub : {"a", "b"})
        ASSERT_EQ(run({"--config", cfg.string(), "--seed", "9", "--out", (dir / sub).string(), "synth-data"}), cli::ok);
    const auto a = data::load_manifest(dir / "a" / "data" / "train" / "manifest.json");
    const auto b = data::load_manifest(dir / "b" / "data" / "train" / "manifest.json");
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.load(i)->post_mask, b.load(i)->post_mask);
}

TEST(Cli, OutDirectoryFromEnvironment) {
    const auto dir = scratch("env");
    const auto cfg = write_json(dir, "cfg.json", json{{"data", {{"count", 2}, {"train_fraction", 0.5}}}});
    setenv("CLIFGAN_OUT", (dir / "envout").c_str(), 1);
    const int code = run({"--config", cfg.string(), "synth-data"});
    unsetenv("CLIFGAN_OUT");
    ASSERT_EQ(code, cli::ok);
    EXPECT_TRUE(fs::exists(dir / "envout" / "data" / "train" / "manifest.json"));
    EXPECT_EQ(run_manifests(dir / "envout").size(), 1u);
}

TEST(Config, JsonRoundTrip) {
    cli::PipelineConfig c;
    c.seed = 17;
    c.data_fraction = 0.25;
    c.use_gan = "gan2";
    c.head_channels = 24;
    c.morphology.min_region_area = 5;
    c.aggregation = metrics::Aggregation::macro;
    json j = c;
    const auto back = j.get<cli::PipelineConfig>();
    EXPECT_EQ(json(back), j);
    EXPECT_EQ(back.seed, 17u);
    EXPECT_EQ(back.use_gan, "gan2");
    EXPECT_EQ(back.morphology.min_region_area, 5);
}

TEST(Config, ShippedDeskConfigLoads) {
    const auto c = cli::load_config(fs::path(CLIFGAN_SOURCE_DIR) / "configs" / "desk.json");
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.train_seg.max_epochs, 60);
}

TEST(Config, StageSeedsDeriveFromGlobalSeed) {
    cli::PipelineConfig a, b;
    a.seed = b.seed = 3;
    EXPECT_EQ(cli::stage_seed(a, "train-seg"), cli::stage_seed(b, "train-seg"));
    EXPECT_NE(cli::stage_seed(a, "train-seg"), cli::stage_seed(a, "train-gan"));
    b.seed = 4;
    EXPECT_NE(cli::stage_seed(a, "train-seg"), cli::stage_seed(b, "train-seg"));
}

TEST(Config, InvalidValuesRejected) {
    cli::PipelineConfig c;
    c.data_fraction = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.use_gan = "gan9";
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Overlay, BackgroundLeavesImageUntouched) {
    Image img(3, 4, 5);
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 5; ++x) img(ch, y, x) = static_cast<float>((ch * 31 + y * 7 + x) % 17) / 16.f;
    DamageMask mask(4, 5, 0);
    mask(3, 4) = label::ignore;
    EXPECT_EQ(overlay::render_overlay(img, mask).data(), img.data());
}

TEST(Overlay, ClassColorsAtExactPixels) {
    Image img(3, 3, 3, 0.f);
    DamageMask mask(3, 3, 0);
    mask(0, 2) = 1;
    mask(2, 1) = 4;
    const auto out = overlay::render_overlay(img, mask, 1.0);
    EXPECT_FLOAT_EQ(out(0, 0, 2), 1.f);
    EXPECT_FLOAT_EQ(out(1, 0, 2), 0.f);
    EXPECT_FLOAT_EQ(out(2, 0, 2), 0.f);
    EXPECT_FLOAT_EQ(out(0, 2, 1), 1.f);
    EXPECT_FLOAT_EQ(out(1, 2, 1), 1.f);
    EXPECT_FLOAT_EQ(out(2, 2, 1), 0.f);
    EXPECT_FLOAT_EQ(out(0, 1, 1), 0.f);
    const auto half = overlay::render_overlay(img, mask, 0.5);
    EXPECT_FLOAT_EQ(half(0, 0, 2), 0.5f);
}

TEST(Overlay, RenderCommandWritesPngAndPalette) {
    const auto dir = scratch("render");
    Image img(3, 6, 6, 0.25f);
    DamageMask mask(6, 6, 0);
    mask(1, 1) = 2;
    io::write_png_rgb(img, dir / "tile.png");
    io::write_png_mask(mask, dir / "mask.png");
    ASSERT_EQ(run({"--out", (dir / "out").string(), "render", "--image", (dir / "tile.png").string(), "--mask",
                   (dir / "mask.png").string()}),
              cli::ok);
    const auto png = dir / "out" / "render" / "tile_overlay.png";
    const auto got = io::read_png_rgb(png);
    const auto want = overlay::render_overlay(io::read_png_rgb(dir / "tile.png"), mask);
    for (std::size_t i = 0; i < got.data().size(); ++i) EXPECT_NEAR(got.data()[i], want.data()[i], 1.0 / 255 + 1e-6);
    std::ifstream in(png.string() + ".json");
    ASSERT_TRUE(in);
    const auto meta = json::parse(in);
    EXPECT_EQ(meta.at("classes").at("1").at("rgb"), json({255, 0, 0}));
    EXPECT_EQ(meta.at("classes").at("4").at("rgb"), json({255, 255, 0}));
    EXPECT_EQ(run({"--out", (dir / "out").string(), "render", "--image", (dir / "tile.png").string()}),
              cli::usage_error);
}
