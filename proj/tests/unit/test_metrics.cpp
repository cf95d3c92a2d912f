#include <gtest/gtest.h>

#include "clifgan/log.hpp"
#include "clifgan/metrics.hpp"
#include "support/oracles.hpp"

using namespace clifgan;
using namespace clifgan::metrics;

namespace {

DamageMask grid(std::initializer_list<std::initializer_list<int>> rows) {
    const int h = static_cast<int>(rows.size()), w = static_cast<int>(rows.begin()->size());
    DamageMask m(h, w);
    int y = 0;
    for (const auto& r : rows) {
        int x = 0;
        for (int v : r) m(y, x++) = static_cast<std::uint8_t>(v);
        ++y;
    }
    return m;
}

DamageMask random_mask(Rng& rng, int h, int w) {
    DamageMask m(h, w);
    for (auto& v : m.cells()) {
        const int r = uniform_int(rng, 0, 5);
        v = r == 5 ? 255 : static_cast<std::uint8_t>(r);
    }
    return m;
}

data::DatasetManifest as_manifest(const std::vector<DamageMask>& truths) {
    data::DatasetManifest m;
    int k = 0;
    for (const auto& truth : truths) {
        data::TileSample s;
        s.id = "t" + std::to_string(k++);
        s.pre_image = s.post_image = Image(3, truth.height(), truth.width());
        s.pre_mask = DamageMask(truth.size());
        for (std::size_t i = 0; i < truth.area(); ++i) s.pre_mask.cells()[i] = truth.cells()[i] != 0;
        s.post_mask = truth;
        m.add(std::move(s));
    }
    return m;
}

}  // namespace

TEST(SegF1, PerfectPrediction) {
    const auto t = grid({{0, 1}, {2, 0}});
    EXPECT_DOUBLE_EQ(seg_f1(t, t), 1.0);
}

TEST(SegF1, DisjointBuildingsScoreZero) {
    EXPECT_DOUBLE_EQ(seg_f1(grid({{1, 0}, {0, 0}}), grid({{0, 0}, {0, 3}})), 0.0);
}

TEST(SegF1, HandCountedConfusion) {
    // TP = 2, FP = 1, FN = 1.
    const auto truth = grid({{1, 1, 0, 0}, {1, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}});
    const auto pred = grid({{1, 1, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 2}, {0, 0, 0, 0}});
    EXPECT_NEAR(seg_f1(pred, truth), 2.0 * 2 / (4 + 1 + 1), 1e-12);
    EXPECT_NEAR(seg_f1(pred, truth), 0.6667, 5e-5);
}

TEST(SegF1, EmptyOnEmptyIsOne) { EXPECT_DOUBLE_EQ(seg_f1(DamageMask(3, 3, 0), DamageMask(3, 3, 0)), 1.0); }

TEST(ClsF1, PerfectWithAllClasses) {
    const auto t = grid({{1, 2}, {3, 4}});
    const auto r = cls_f1(t, t);
    ASSERT_TRUE(r.overall);
    EXPECT_DOUBLE_EQ(*r.overall, 1.0);
    for (const auto& c : r.per_class) EXPECT_EQ(c, 1.0);
}

TEST(ClsF1, ZeroClassMakesHarmonicMeanZero) {
    const auto truth = grid({{1, 1}, {2, 2}});
    const auto pred = grid({{1, 1}, {3, 3}});
    EXPECT_DOUBLE_EQ(*cls_f1(pred, truth).overall, 0.0);
}

TEST(ClsF1, HarmonicMeanOfHalfAndOne) {
    // class 1: TP 1, FN 2 -> F1 0.5; class 2 exact -> F1 1.0
    const auto truth = grid({{1, 1, 1, 0}, {2, 2, 0, 0}});
    const auto pred = grid({{1, 0, 0, 0}, {2, 2, 0, 0}});
    const auto r = cls_f1(pred, truth);
    EXPECT_NEAR(*r.per_class[0], 0.5, 1e-12);
    EXPECT_NEAR(*r.per_class[1], 1.0, 1e-12);
    EXPECT_FALSE(r.per_class[2].has_value());
    EXPECT_NEAR(*r.overall, 2.0 / (1 / 0.5 + 1 / 1.0), 1e-12);
    EXPECT_NEAR(*r.overall, 0.6667, 5e-5);
}

TEST(ClsF1, UndefinedWithoutTruthBuildings) {
    const auto saved = log::level();
    log::set_level(log::Level::off);
    EXPECT_FALSE(cls_f1(grid({{1, 0}}), grid({{0, 0}})).overall.has_value());
    log::set_level(saved);
}

TEST(Metrics, MatchOracleOnRandomPairs) {
    Rng rng(21);
    for (int k = 0; k < 100; ++k) {
        const int h = uniform_int(rng, 1, 12), w = uniform_int(rng, 1, 12);
        const auto truth = random_mask(rng, h, w), pred = random_mask(rng, h, w);
        EXPECT_NEAR(seg_f1(pred, truth), oracle::seg_f1(pred, truth), 1e-9);
        const auto a = cls_f1(pred, truth);
        const auto b = oracle::cls_f1(pred, truth);
        ASSERT_EQ(a.overall.has_value(), b.overall.has_value());
        if (a.overall) EXPECT_NEAR(*a.overall, *b.overall, 1e-9);
        for (int c = 0; c < 4; ++c) {
            ASSERT_EQ(a.per_class[c].has_value(), b.per_class[c].has_value());
            if (a.per_class[c]) EXPECT_NEAR(*a.per_class[c], *b.per_class[c], 1e-9);
        }
    }
}

TEST(Metrics, BoundedAndSegSymmetric) {
    Rng rng(22);
    for (int k = 0; k < 100; ++k) {
        const int h = uniform_int(rng, 1, 10), w = uniform_int(rng, 1, 10);
        auto truth = random_mask(rng, h, w), pred = random_mask(rng, h, w);
        for (auto& v : truth.cells()) v = v == 255 ? 0 : v;
        for (auto& v : pred.cells()) v = v == 255 ? 0 : v;
        const double f = seg_f1(pred, truth);
        EXPECT_GE(f, 0.0);
        EXPECT_LE(f, 1.0);
        EXPECT_NEAR(f, seg_f1(truth, pred), 1e-12);
        const auto c = cls_f1(pred, truth);
        if (c.overall) {
            EXPECT_GE(*c.overall, 0.0);
            EXPECT_LE(*c.overall, 1.0);
        }
    }
}

TEST(Metrics, IgnorePixelsNeverCount) {
    Rng rng(23);
    for (int k = 0; k < 50; ++k) {
        auto truth = random_mask(rng, 8, 8), pred = random_mask(rng, 8, 8);
        auto pred2 = pred;
        for (std::size_t i = 0; i < truth.area(); ++i)
            if (truth.cells()[i] == 255) pred2.cells()[i] = static_cast<std::uint8_t>(uniform_int(rng, 0, 4));
        EXPECT_EQ(confusion(pred, truth), confusion(pred2, truth));
    }
}

TEST(Metrics, MicroAggregationSumsConfusion) {
    Rng rng(24);
    const auto t1 = random_mask(rng, 5, 7), p1 = random_mask(rng, 5, 7);
    const auto t2 = random_mask(rng, 5, 7), p2 = random_mask(rng, 5, 7);
    DamageMask tc(5, 14), pc(5, 14);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 7; ++x) {
            tc(y, x) = t1(y, x), tc(y, x + 7) = t2(y, x);
            pc(y, x) = p1(y, x), pc(y, x + 7) = p2(y, x);
        }
    auto sum = confusion(p1, t1);
    sum += confusion(p2, t2);
    EXPECT_EQ(confusion(pc, tc), sum);
    EXPECT_NEAR(seg_f1(sum), seg_f1(pc, tc), 1e-12);

    const auto data = as_manifest({t1, t2});
    const std::map<std::string, DamageMask> preds{{"t0", p1}, {"t1", p2}};
    const auto report = evaluate([&](const data::TileSample& s) { return preds.at(s.id); }, data, 0, 0);
    EXPECT_EQ(report.confusion, sum);
    EXPECT_NEAR(report.segmentation_f1, seg_f1(sum), 1e-12);
}

TEST(Metrics, MacroAggregationAveragesTiles) {
    const auto t1 = grid({{1, 0}}), p1 = grid({{1, 0}});
    const auto t2 = grid({{1, 1, 0, 0}}), p2 = grid({{0, 1, 1, 0}});
    const auto data = as_manifest({t1, t2});
    const std::map<std::string, DamageMask> preds{{"t0", p1}, {"t1", p2}};
    const auto report =
        evaluate([&](const data::TileSample& s) { return preds.at(s.id); }, data, 0, 0, "m", "d", Aggregation::macro);
    EXPECT_NEAR(report.segmentation_f1, (1.0 + 0.5) / 2, 1e-12);
    EXPECT_NE(report.notes.find("macro"), std::string::npos);
}

TEST(Metrics, OverfitStyleSelfEvaluationIsPerfect) {
    const auto t = grid({{0, 1, 1}, {0, 4, 4}});
    const auto data = as_manifest({t});
    const auto r = evaluate([&](const data::TileSample& s) { return s.post_mask; }, data, 123, 4.5, "self", "fixture");
    EXPECT_DOUBLE_EQ(r.segmentation_f1, 1.0);
    EXPECT_DOUBLE_EQ(*r.classification_f1, 1.0);
    EXPECT_EQ(r.model_size_bytes, 123u);
    EXPECT_EQ(r.method_tag, "self");
    EXPECT_EQ(r.dataset_tag, "fixture");
    EXPECT_NE(r.notes.find("pixel-level"), std::string::npos);
}

TEST(Metrics, ConfusionTotalCountsScoredPixels) {
    const auto truth = grid({{0, 255, 1}, {2, 255, 0}});
    EXPECT_EQ(confusion(truth, truth).total(), 4u);
}

TEST(Report, JsonRoundTrip) {
    EvalReport r;
    r.segmentation_f1 = 0.893;
    r.classification_f1 = 0.664;
    r.per_class_f1 = {0.9, std::nullopt, 0.5, 0.1};
    r.model_size_bytes = 9'700'000;
    r.train_time_seconds = 40980;
    r.method_tag = "transfer learning and fusion";
    nlohmann::json j = r;
    const auto back = j.get<EvalReport>();
    EXPECT_EQ(back.segmentation_f1, r.segmentation_f1);
    EXPECT_EQ(back.classification_f1, r.classification_f1);
    EXPECT_EQ(back.per_class_f1, r.per_class_f1);
    EXPECT_EQ(back.model_size_bytes, r.model_size_bytes);
    EXPECT_EQ(back.method_tag, r.method_tag);
}

TEST(Format, SizesAsInTableOne) {
    EXPECT_EQ(format_size(228'000'000), "228 MB");
    EXPECT_EQ(format_size(441'000'000), "441 MB");
    EXPECT_EQ(format_size(40'000'000), "40 MB");
    EXPECT_EQ(format_size(9'700'000), "9.7 MB");
}

TEST(Format, DurationsAsInTableTwo) {
    EXPECT_EQ(format_duration(11 * 3600 + 23 * 60), "11 hrs 23 mins");
    EXPECT_EQ(format_duration(3600 + 2 * 60), "1 hr 2 mins");
    EXPECT_EQ(format_duration(2 * 3600 + 6 * 60), "2 hrs 6 mins");
    EXPECT_EQ(format_duration(2 * 3600 + 8 * 60), "2 hrs 8 mins");
}

TEST(Tables, TableTwoRows) {
    auto row = [](const char* tag, double secs, double cls, double seg) {
        EvalReport r;
        r.dataset_tag = tag;
        r.train_time_seconds = secs;
        r.classification_f1 = cls;
        r.segmentation_f1 = seg;
        return r;
    };
    const auto t = render_table2({row("Full data", 40980, 0.664, 0.893), row("10% data", 3720, 0.565, 0.862),
                                  row("10% data + GAN-1", 7560, 0.592, 0.874), row("10% data + GAN-2", 7680, 0.511, 0.803)});
    for (const char* cell : {"Training time", "classification F1", "segmentation F1", "Full data", "11 hrs 23 mins", "0.664",
                             "0.893", "1 hr 2 mins", "0.565", "0.862", "2 hrs 6 mins", "0.592", "0.874", "2 hrs 8 mins",
                             "0.511", "0.803"})
        EXPECT_NE(t.find(cell), std::string::npos) << cell;
    EXPECT_LT(t.find("Full data"), t.find("10% data + GAN-1"));
}

TEST(Tables, TableOneExpressesFusionReference) {
    EvalReport r;
    r.method_tag = "transfer learning and fusion";
    r.model_size_bytes = 9'700'000;
    r.segmentation_f1 = 0.893;
    r.classification_f1 = 0.664;
    const auto t = render_table1({r});
    for (const char* cell : {"size", "9.7 MB", "Segmentation F1", "0.893", "Classification F1", "0.664"})
        EXPECT_NE(t.find(cell), std::string::npos) << cell;
}
