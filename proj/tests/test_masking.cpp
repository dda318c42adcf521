#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "maskdm/masking.hpp"

using namespace maskdm;
using compute::Tensor;

namespace {

std::size_t hidden(const Mask& m) { return m.grid().n_tokens() - m.visible(); }

bool tiles_are_uniform(const Mask& m, std::size_t b) {
    const TokenGrid& g = m.grid();
    for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t c = 0; c < g.cols; ++c) {
            const std::size_t anchor = (r / b * b) * g.cols + (c / b * b);
            if (m.is_visible(r * g.cols + c) != m.is_visible(anchor)) {
                return false;
            }
        }
    }
    return true;
}

// Visible tokens form one side x side square; returns the side or 0.
std::size_t square_side(const Mask& m) {
    const TokenGrid& g = m.grid();
    std::size_t r0 = g.rows, r1 = 0, c0 = g.cols, c1 = 0;
    for (std::size_t idx : m.tau()) {
        r0 = std::min(r0, idx / g.cols), r1 = std::max(r1, idx / g.cols);
        c0 = std::min(c0, idx % g.cols), c1 = std::max(c1, idx % g.cols);
    }
    const std::size_t h = r1 - r0 + 1, w = c1 - c0 + 1;
    return h == w && h * w == m.visible() ? h : 0;
}

}  // namespace

TEST(TokenGrid, PatchMustDivideImage) {
    EXPECT_EQ(TokenGrid::for_image(16, 8, 4), (TokenGrid{4, 2}));
    EXPECT_THROW(TokenGrid::for_image(10, 8, 4), ConfigError);
    EXPECT_THROW(TokenGrid::for_image(8, 8, 0), ConfigError);
}

TEST(MaskedCount, RoundsHalvesUp) {
    EXPECT_EQ(masked_count(0.5, 3), 2u);
    EXPECT_EQ(masked_count(0.5, 2), 1u);
    EXPECT_EQ(masked_count(0.75, 64), 48u);
    EXPECT_EQ(masked_count(0.0, 64), 0u);
    EXPECT_EQ(masked_count(0.1, 4), 0u);
}

TEST(MaskSpec, ParsesCliForms) {
    EXPECT_EQ(MaskSpec::parse("patch:0.5"), (MaskSpec{MaskStrategy::patch, 1, 0.5}));
    EXPECT_EQ(MaskSpec::parse("block2:0.5"), (MaskSpec{MaskStrategy::block, 2, 0.5}));
    EXPECT_EQ(MaskSpec::parse("block4:0.9"), (MaskSpec{MaskStrategy::block, 4, 0.9}));
    EXPECT_EQ(MaskSpec::parse("crop:0.9").strategy, MaskStrategy::crop);
    for (const char* spec : {"block2:0.5", "patch:0.25", "crop:0.9"}) {
        EXPECT_EQ(MaskSpec::parse(spec).to_string(), spec);
    }
    for (const char* bad : {"patch", "patch:1", "patch:-0.1", "block:0.5", "block0:0.5", "blob:0.5", "patch:x"}) {
        EXPECT_THROW(MaskSpec::parse(bad), ConfigError) << bad;
    }
}

TEST(MaskSpec, BlockMustDivideGrid) {
    EXPECT_THROW(MaskSpec::parse("block3:0.5").validate(TokenGrid{8, 8}), ConfigError);
    EXPECT_NO_THROW(MaskSpec::parse("block4:0.5").validate(TokenGrid{8, 8}));
}

TEST(PatchMask, ExactVisibleCount) {
    Rng rng(1);
    const Mask m = sample_patch_mask(TokenGrid{8, 8}, 0.75, rng);
    EXPECT_EQ(m.visible(), 16u);
    EXPECT_DOUBLE_EQ(m.achieved_rate(), 0.75);
}

TEST(PatchMask, ZeroRateKeepsEverything) {
    Rng rng(1);
    const Mask m = sample_patch_mask(TokenGrid{8, 8}, 0.0, rng);
    std::vector<std::size_t> all(64);
    std::iota(all.begin(), all.end(), 0);
    EXPECT_EQ(m.tau(), all);
}

TEST(PatchMask, RejectsRateOutsideRange) {
    Rng rng(1);
    EXPECT_THROW(sample_patch_mask(TokenGrid{4, 4}, 1.0, rng), ConfigError);
    EXPECT_THROW(sample_patch_mask(TokenGrid{4, 4}, -0.2, rng), ConfigError);
}

TEST(PatchMask, EveryTokenMaskedAtTheRequestedFrequency) {
    Rng rng(2);
    std::vector<int> masked(64, 0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        const Mask m = sample_patch_mask(TokenGrid{8, 8}, 0.5, rng);
        for (std::size_t k = 0; k < 64; ++k) {
            masked[k] += m.is_visible(k) ? 0 : 1;
        }
    }
    for (int count : masked) {
        EXPECT_NEAR(count / static_cast<double>(draws), 0.5, 0.02);
    }
}

TEST(BlockMask, HalfTheTilesOfAnEightByEightGrid) {
    Rng rng(3);
    const Mask m = sample_block_mask(TokenGrid{8, 8}, 2, 0.5, rng);
    EXPECT_EQ(hidden(m), 32u);
    EXPECT_TRUE(tiles_are_uniform(m, 2));
}

TEST(BlockMask, WholeImageTileIsAFullMask) {
    Rng rng(3);
    EXPECT_THROW(sample_block_mask(TokenGrid{4, 4}, 4, 0.5, rng), FullMaskError);
}

TEST(BlockMask, IndivisibleBlockIsAConfigError) {
    Rng rng(3);
    EXPECT_THROW(sample_block_mask(TokenGrid{8, 8}, 3, 0.5, rng), ConfigError);
}

TEST(BlockMask, UnitBlockReducesToPatchMasking) {
    Rng a(4), b(4);
    for (int i = 0; i < 10000; ++i) {
        const Mask pm = sample_patch_mask(TokenGrid{6, 6}, 0.3, a);
        const Mask bm = sample_block_mask(TokenGrid{6, 6}, 1, 0.3, b);
        ASSERT_EQ(hidden(pm), hidden(bm));
        ASSERT_EQ(pm.bits(), bm.bits());
    }
}

TEST(CropMask, SideFromArithmetic) {
    Rng rng(5);
    const Mask m = sample_crop_mask(TokenGrid{16, 16}, 0.9, rng);
    EXPECT_EQ(m.visible(), 25u);
    EXPECT_EQ(square_side(m), 5u);
    EXPECT_NEAR(m.achieved_rate(), 1 - 25.0 / 256, 1e-12);
    EXPECT_NEAR(m.achieved_rate(), 0.9023, 1e-4);
}

TEST(CropMask, ZeroRateIsTheWholeImage) {
    Rng rng(5);
    const Mask m = sample_crop_mask(TokenGrid{16, 16}, 0.0, rng);
    EXPECT_EQ(m.visible(), 256u);
    EXPECT_EQ(m.achieved_rate(), 0.0);
}

TEST(CropMask, PlacementsStayInBounds) {
    Rng rng(6);
    const TokenGrid grid{8, 8};
    for (int i = 0; i < 10000; ++i) {
        const Mask m = sample_crop_mask(grid, 0.6, rng);
        const std::size_t side = square_side(m);
        ASSERT_EQ(side, 5u);
        ASSERT_LE(m.tau().front() / grid.cols, grid.rows - side);
        ASSERT_LE(m.tau().front() % grid.cols, grid.cols - side);
    }
}

// Exact counts, tile structure, contiguous squares and seed determinism.
TEST(MaskInvariants, HoldForEveryStrategy) {
    const TokenGrid grid{8, 8};
    for (const char* text : {"patch:0.5", "patch:0.9", "block2:0.5", "block4:0.5", "block2:0.9", "crop:0.5",
                             "crop:0.9"}) {
        const MaskSpec spec = MaskSpec::parse(text);
        Rng rng(7), replay(7);
        std::size_t first_count = 0;
        for (int i = 0; i < 2000; ++i) {
            const Mask m = sample_mask(grid, spec, rng);
            ASSERT_EQ(m, sample_mask(grid, spec, replay)) << text;
            ASSERT_TRUE(std::is_sorted(m.tau().begin(), m.tau().end()));
            ASSERT_EQ(std::adjacent_find(m.tau().begin(), m.tau().end()), m.tau().end());
            ASSERT_EQ(static_cast<std::size_t>(std::count(m.bits().begin(), m.bits().end(), 1)), m.visible());
            if (i == 0) {
                first_count = m.visible();
            }
            ASSERT_EQ(m.visible(), first_count) << text;
            if (spec.strategy == MaskStrategy::block) {
                ASSERT_TRUE(tiles_are_uniform(m, spec.block)) << text;
                ASSERT_EQ(hidden(m), masked_count(spec.rate, 64 / (spec.block * spec.block)) * spec.block * spec.block);
            } else if (spec.strategy == MaskStrategy::crop) {
                ASSERT_NE(square_side(m), 0u) << text;
            } else {
                ASSERT_EQ(hidden(m), masked_count(spec.rate, 64));
            }
        }
    }
}

TEST(MaskType, RejectsEmptyAndMismatchedBits) {
    EXPECT_THROW(Mask(TokenGrid{1, 2}, {0, 0}, MaskSpec{}), FullMaskError);
    EXPECT_THROW(Mask(TokenGrid{1, 2}, {1}, MaskSpec{}), ContractError);
    EXPECT_EQ(Mask::full(TokenGrid{2, 2}).visible(), 4u);
}

TEST(ApplyMask, SelectsRowsInOrder) {
    const Tensor<float> tokens({3, 2}, std::vector<float>{1, 2, 3, 4, 5, 6});
    const Mask m(TokenGrid{1, 3}, {1, 0, 1}, MaskSpec{});
    EXPECT_EQ(apply_mask(tokens, m).buffer(), (std::vector<float>{1, 2, 5, 6}));
    EXPECT_EQ(apply_mask(tokens, Mask::full(TokenGrid{1, 3})), tokens);
    EXPECT_THROW(apply_mask(Tensor<float>({4, 2}), m), ContractError);

    Tensor<float> back({3, 2});
    scatter_visible(apply_mask(tokens, m), m, back);
    EXPECT_EQ(back.buffer(), (std::vector<float>{1, 2, 0, 0, 5, 6}));
}

TEST(PositionTable, HasATimeRow) {
    const Tensor<double> table = sinusoidal_position_table<double>(TokenGrid{4, 4}, 8);
    EXPECT_EQ(table.shape(), (compute::Shape{17, 8}));
    for (std::size_t j = 0; j < 8; ++j) {
        EXPECT_EQ(table[16 * 8 + j], 0.0);
    }
    EXPECT_NE(std::vector<double>(table.buffer().begin(), table.buffer().begin() + 8),
              std::vector<double>(table.buffer().begin() + 8, table.buffer().begin() + 16));
}
