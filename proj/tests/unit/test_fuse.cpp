#include <gtest/gtest.h>

#include "clifgan/fuse.hpp"
#include "support/oracles.hpp"

using namespace clifgan;
using namespace clifgan::fuse;

namespace {

DamageMask random_mask(Rng& rng, int h, int w, int max_label) {
    DamageMask m(h, w);
    for (auto& v : m.cells()) v = static_cast<std::uint8_t>(uniform_int(rng, 0, max_label));
    return m;
}

BinaryGrid to_grid(const oracle::Bits& b) {
    BinaryGrid g(static_cast<int>(b.size()), static_cast<int>(b[0].size()));
    for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x) g(y, x) = static_cast<std::uint8_t>(b[y][x]);
    return g;
}

oracle::Bits to_bits(const BinaryGrid& g) {
    oracle::Bits b(g.height(), std::vector<int>(g.width()));
    for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x) b[y][x] = g(y, x) != 0;
    return b;
}

const std::uint8_t legend[6] = {0, 1, 2, 3, 4, 255};

}  // namespace

TEST(Vote, StrictMajority) { EXPECT_EQ(vote(2, 2, 3), 2); }

TEST(Vote, ThreeWayTieGoesToMostSevere) {
    EXPECT_EQ(vote(1, 2, 3), 3);
    EXPECT_EQ(vote(0, 4, 1), 4);
}

TEST(Vote, IgnoreNeverWinsATie) { EXPECT_EQ(vote(255, 1, 0), 1); }

TEST(Vote, PermutationInvariantAndMajorityLaw) {
    for (auto a : legend)
        for (auto b : legend)
            for (auto c : legend) {
                const auto v = vote(a, b, c);
                EXPECT_EQ(v, vote(a, c, b));
                EXPECT_EQ(v, vote(b, a, c));
                EXPECT_EQ(v, vote(b, c, a));
                EXPECT_EQ(v, vote(c, a, b));
                EXPECT_EQ(v, vote(c, b, a));
                EXPECT_EQ(vote(a, a, c), a);
            }
}

TEST(Vote, UnanimousMasksAreBitIdentical) {
    Rng rng(31);
    const auto m = random_mask(rng, 9, 11, 4);
    EXPECT_EQ(majority_vote(m, m, m), m);
    const auto x = random_mask(rng, 9, 11, 4);
    EXPECT_EQ(majority_vote(m, x, m), m);
    EXPECT_THROW(majority_vote(m, m, DamageMask(3, 3)), Error);
}

TEST(Morphology, EmptyMaskStaysEmpty) { EXPECT_EQ(morph_filter(DamageMask(9, 9, 0), {}), DamageMask(9, 9, 0)); }

TEST(Morphology, IsolatedPixelIsRemoved) {
    DamageMask m(9, 9, 0);
    m(4, 4) = 4;
    EXPECT_EQ(morph_filter(m, {}), DamageMask(9, 9, 0));
    EXPECT_EQ(oracle::morph_filter(m, 3, 2), DamageMask(9, 9, 0));
}

TEST(Morphology, SolidBlockUnchanged) {
    DamageMask m(16, 16, 0);
    for (int y = 3; y < 13; ++y)
        for (int x = 3; x < 13; ++x) m(y, x) = 2;
    EXPECT_EQ(morph_filter(m, {}), m);
    EXPECT_EQ(oracle::morph_filter(m, 3, 2), m);
}

TEST(Morphology, BinaryOpsMatchOracle) {
    Rng rng(32);
    for (int k = 0; k < 50; ++k) {
        const auto g = random_mask(rng, uniform_int(rng, 1, 14), uniform_int(rng, 1, 14), 1);
        for (int side : {1, 3, 5}) {
            const auto b = to_bits(g);
            EXPECT_EQ(to_bits(open(g, side)), oracle::open(b, side));
            EXPECT_EQ(to_bits(close(g, side)), oracle::close(b, side));
        }
    }
}

TEST(Morphology, ErodeDilateOnUnboundedPlane) {
    BinaryGrid g(3, 3, 1);
    EXPECT_EQ(erode(g, 3), to_grid({{0, 0, 0}, {0, 1, 0}, {0, 0, 0}}));
    BinaryGrid dot(3, 3, 0);
    dot(1, 1) = 1;
    EXPECT_EQ(dilate(dot, 3), BinaryGrid(3, 3, 1));
}

TEST(Morphology, AllNeighbourhoodPatternsMatchOracle) {
    for (int pattern = 0; pattern < 512; ++pattern)
        for (int cls : {1, 3}) {
            DamageMask m(9, 9, 0);
            for (int b = 0; b < 9; ++b)
                if (pattern & (1 << b)) m(3 + b / 3, 3 + b % 3) = static_cast<std::uint8_t>(cls);
            ASSERT_EQ(morph_filter(m, {}), oracle::morph_filter(m, 3, 2)) << "pattern " << pattern;
        }
}

TEST(Morphology, MultiClassMatchesOracle) {
    Rng rng(33);
    MorphologyConfig cfg;
    for (int k = 0; k < 40; ++k) {
        auto m = random_mask(rng, uniform_int(rng, 4, 16), uniform_int(rng, 4, 16), 4);
        for (auto& v : m.cells())
            if (uniform01(rng) < 0.05) v = 255;
        cfg.min_region_area = uniform_int(rng, 0, 4);
        ASSERT_EQ(morph_filter(m, cfg), oracle::morph_filter(m, 3, cfg.min_region_area)) << "case " << k;
    }
}

TEST(Morphology, OpenClosePassIsIdempotent) {
    Rng rng(34);
    for (int k = 0; k < 60; ++k) {
        DamageMask m(20, 20, 0);
        for (int r = uniform_int(rng, 1, 6); r > 0; --r) {
            const int y0 = uniform_int(rng, 0, 17), x0 = uniform_int(rng, 0, 17);
            const int y1 = std::min(20, y0 + uniform_int(rng, 1, 8)), x1 = std::min(20, x0 + uniform_int(rng, 1, 8));
            const auto c = static_cast<std::uint8_t>(uniform_int(rng, 1, 4));
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) m(y, x) = c;
        }
        for (auto& v : m.cells())
            if (uniform01(rng) < 0.1) v = static_cast<std::uint8_t>(uniform_int(rng, 0, 4));
        const auto once = open_close_pass(m, 3);
        EXPECT_EQ(open_close_pass(once, 3), once) << "case " << k;
    }
}

TEST(Morphology, LabelSetNeverGrows) {
    Rng rng(35);
    for (int k = 0; k < 40; ++k) {
        const auto m = random_mask(rng, 12, 12, 4);
        auto allowed = label_set(m);
        allowed.insert(0);
        for (auto v : label_set(morph_filter(m, {}))) EXPECT_TRUE(allowed.count(v));
    }
}

TEST(Morphology, PruningDropsSmallComponents) {
    DamageMask m(5, 5, 0);
    m(0, 0) = 1;
    m(2, 2) = m(2, 3) = 1;
    m(4, 4) = m(4, 3) = m(3, 4) = 2;
    const auto p = prune_small_regions(m, 3);
    EXPECT_EQ(p(0, 0), 0);
    EXPECT_EQ(p(2, 2), 0);
    EXPECT_EQ(p(4, 4), 2);
    EXPECT_EQ(prune_small_regions(m, 0), m);
}

TEST(Components, FourConnectivity) {
    DamageMask m(3, 3, 0);
    m(0, 0) = m(1, 1) = m(2, 2) = 1;
    m(0, 1) = 1;
    const auto [labels, count] = connected_components(m, 1);
    EXPECT_EQ(count, 2);
    EXPECT_EQ(labels(0, 0), labels(1, 1));
    EXPECT_NE(labels(1, 1), labels(2, 2));
    EXPECT_EQ(labels(1, 0), 0);
}

TEST(Fuse, AgreeingMembersReduceToFilter) {
    Rng rng(36);
    const auto m = random_mask(rng, 16, 16, 4);
    EXPECT_EQ(fuse_masks(m, m, m, {}), morph_filter(m, {}));
}

TEST(Fuse, Deterministic) {
    Rng rng(37);
    const auto a = random_mask(rng, 16, 16, 4), b = random_mask(rng, 16, 16, 4), c = random_mask(rng, 16, 16, 4);
    EXPECT_EQ(fuse_masks(a, b, c, {}), fuse_masks(a, b, c, {}));
}

TEST(Fuse, ConfigValidation) {
    MorphologyConfig cfg;
    cfg.side = 2;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.side = 3;
    cfg.min_region_area = -1;
    EXPECT_THROW(cfg.validate(), ConfigError);
}
