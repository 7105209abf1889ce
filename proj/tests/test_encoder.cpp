#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <random>

#include "nflow/encoder.hpp"
#include "test_support.hpp"

namespace nflow {
namespace {

using testing::all_indices;
using testing::max_relative_error;
using testing::random_slice;

EncoderConfig small_config(std::uint32_t dim = 16, std::int32_t radius = 3) {
    EncoderConfig cfg;
    cfg.dim = dim;
    cfg.delta_x = radius;
    cfg.delta_y = radius;
    cfg.delta_t = 0.016;
    cfg.precision = Precision::f64;
    return cfg;
}

TEST(EncoderConfig, Validation) {
    EncoderConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.delta_x = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.sigma2 = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.dim = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.delta_t = -1;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(SpatialPhaseTable, ZeroOffsetIsOne) {
    const auto cfg = small_config();
    const auto table = precompute_spatial_phases<double>(generate_bases(cfg), cfg);
    for (std::size_t j = 0; j < cfg.dim; ++j) {
        EXPECT_EQ(table.at(0, 0, j), std::complex<double>(1.0, 0.0));
    }
}

TEST(SpatialPhaseTable, ConjugateSymmetryAndUnitModulus) {
    const auto cfg = small_config(32, 4);
    const auto table = precompute_spatial_phases<float>(generate_bases(cfg), cfg);
    for (int dy = -4; dy <= 4; ++dy) {
        for (int dx = -4; dx <= 4; ++dx) {
            for (std::size_t j = 0; j < cfg.dim; ++j) {
                const auto z = table.at(dx, dy, j);
                EXPECT_NEAR(std::abs(z), 1.0f, 1e-6f);
                const auto p = z * table.at(-dx, -dy, j);
                EXPECT_NEAR(p.real(), 1.0f, 1e-6f);
                EXPECT_NEAR(p.imag(), 0.0f, 1e-6f);
            }
        }
    }
}

TEST(SpatialPhaseTable, EdgeEntryMatchesFormula) {
    const auto cfg = small_config();
    const auto bases = generate_bases(cfg);
    const auto table = precompute_spatial_phases<double>(bases, cfg);
    for (std::size_t j = 0; j < cfg.dim; ++j) {
        EXPECT_DOUBLE_EQ(table.at(cfg.delta_x, 0, j).real(), std::cos(bases.x[j]));
        EXPECT_DOUBLE_EQ(table.at(cfg.delta_x, 0, j).imag(), std::sin(bases.x[j]));
        EXPECT_DOUBLE_EQ(table.at(0, -cfg.delta_y, j).imag(), std::sin(-bases.y[j]));
    }
}

PixelGrid<double> grid_for(const EventSlice &slice, const EncoderConfig &cfg, const Bases &bases,
                           unsigned threads = 1) {
    PixelGrid<double> grid(slice.geometry(), cfg.dim, cfg.delta_x, cfg.delta_y);
    accumulate_grid<double>(slice, bases.t, cfg, grid, threads);
    return grid;
}

TEST(AccumulateGrid, TwoEventsAtZeroTime) {
    const auto cfg = small_config();
    const auto bases = generate_bases(cfg);
    const EventSlice slice({{0.0, 3, 4, {}}, {0.0, 3, 4, {}}}, 0.0, cfg.window(), {8, 8});
    const auto grid = grid_for(slice, cfg, bases);
    EXPECT_EQ(grid.count_at(3, 4), 2u);
    EXPECT_EQ(grid.total_count(), 2u);
    for (std::size_t j = 0; j < cfg.dim; ++j) {
        EXPECT_EQ(grid.embed_at(3, 4, j), std::complex<double>(2.0, 0.0));
    }
}

TEST(AccumulateGrid, UnitPhaseArgument) {
    const auto cfg = small_config();
    const auto bases = generate_bases(cfg);
    const EventSlice slice({{cfg.delta_t, 3, 4, {}}}, 0.0, cfg.window(), {8, 8});
    const auto grid = grid_for(slice, cfg, bases);
    for (std::size_t j = 0; j < cfg.dim; ++j) {
        EXPECT_DOUBLE_EQ(grid.embed_at(3, 4, j).real(), std::cos(bases.t[j]));
        EXPECT_DOUBLE_EQ(grid.embed_at(3, 4, j).imag(), std::sin(bases.t[j]));
    }
}

TEST(AccumulateGrid, EmptySliceIsZero) {
    const auto cfg = small_config();
    const auto bases = generate_bases(cfg);
    const auto grid = grid_for(EventSlice({}, 0.0, cfg.window(), {8, 8}), cfg, bases);
    EXPECT_EQ(grid.total_count(), 0u);
    for (int y = -cfg.delta_y; y < 8 + cfg.delta_y; ++y) {
        for (int x = -cfg.delta_x; x < 8 + cfg.delta_x; ++x) {
            EXPECT_EQ(grid.count_at(x, y), 0u);
            EXPECT_EQ(grid.embed_at(x, y, 0), std::complex<double>(0.0, 0.0));
        }
    }
}

TEST(AccumulateGrid, RejectsUnrebasedSlice) {
    const auto cfg = small_config();
    const auto bases = generate_bases(cfg);
    const EventSlice slice({{5.0, 1, 1, {}}}, 5.0, cfg.window(), {8, 8});
    PixelGrid<double> grid(slice.geometry(), cfg.dim, cfg.delta_x, cfg.delta_y);
    EXPECT_THROW(accumulate_grid<double>(slice, bases.t, cfg, grid), std::invalid_argument);
}

// Conservation and modulus bound over random slices; also removal of one
// event re-accumulated from scratch.
TEST(AccumulateGrid, ConservationAndRemoval) {
    const auto cfg = small_config(8, 2);
    const auto bases = generate_bases(cfg);
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto slice = random_slice(rng, 1 + rng() % 300, {12, 9}, cfg.window(), trial % 2 == 0);
        const auto grid = grid_for(slice, cfg, bases);
        EXPECT_EQ(grid.total_count(), slice.size());
        for (int y = 0; y < 9; ++y) {
            for (int x = 0; x < 12; ++x) {
                for (std::size_t j = 0; j < cfg.dim; ++j) {
                    EXPECT_LE(std::abs(grid.embed_at(x, y, j)), grid.count_at(x, y) + 1e-9);
                }
            }
        }
        const std::size_t drop = rng() % slice.size();
        auto events = slice.events();
        const Event removed = events[drop];
        events.erase(events.begin() + static_cast<std::ptrdiff_t>(drop));
        const auto grid2 = grid_for(EventSlice(events, 0.0, cfg.window(), slice.geometry()), cfg, bases);
        EXPECT_EQ(grid2.count_at(removed.x, removed.y) + 1, grid.count_at(removed.x, removed.y));
        for (std::size_t j = 0; j < cfg.dim; ++j) {
            const auto diff = grid.embed_at(removed.x, removed.y, j) - grid2.embed_at(removed.x, removed.y, j);
            const double angle = removed.t / cfg.delta_t * bases.t[j];
            EXPECT_NEAR(diff.real(), std::cos(angle), 1e-9);
            EXPECT_NEAR(diff.imag(), std::sin(angle), 1e-9);
        }
    }
}

TEST(AccumulateGrid, ThreadCountDoesNotChangeBits) {
    const auto cfg = small_config(16, 3);
    const auto bases = generate_bases(cfg);
    std::mt19937_64 rng(8);
    const auto slice = random_slice(rng, 2000, {40, 30}, cfg.window(), true);
    const auto one = grid_for(slice, cfg, bases, 1);
    const auto four = grid_for(slice, cfg, bases, 4);
    for (int y = 0; y < 30; ++y) {
        for (int x = 0; x < 40; ++x) {
            ASSERT_EQ(one.count_at(x, y), four.count_at(x, y));
            for (std::size_t j = 0; j < cfg.dim; ++j) {
                ASSERT_EQ(one.embed_at(x, y, j), four.embed_at(x, y, j));
            }
        }
    }
}

TEST(PixelGrid, ClearResetsTouchedCells) {
    const auto cfg = small_config();
    const auto bases = generate_bases(cfg);
    std::mt19937_64 rng(1);
    const auto slice = random_slice(rng, 50, {8, 8}, cfg.window());
    auto grid = grid_for(slice, cfg, bases);
    grid.clear();
    EXPECT_EQ(grid.total_count(), 0u);
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            EXPECT_EQ(grid.count_at(x, y), 0u);
            EXPECT_EQ(grid.embed_at(x, y, 3), std::complex<double>(0.0, 0.0));
        }
    }
}

TEST(PoolEmbedding, SingleEventIsAllOnes) {
    const auto cfg = small_config();
    const auto bases = generate_bases(cfg);
    const auto table = precompute_spatial_phases<double>(bases, cfg);
    for (double t : {0.0, 0.005, 0.0123, 0.031}) {
        const EventSlice slice({{t, 5, 2, {}}}, 0.0, cfg.window(), {8, 8});
        const auto grid = grid_for(slice, cfg, bases);
        const auto emb = pool_embedding(grid, table, slice[0], bases, cfg);
        EXPECT_EQ(emb.count, 1u);
        for (const auto &v : emb.values) {
            EXPECT_EQ(v, std::complex<double>(1.0, 0.0)) << "t=" << t;
        }
    }
}

TEST(PoolEmbedding, TwoEventsSamePixel) {
    const auto cfg = small_config();
    const auto bases = generate_bases(cfg);
    const auto table = precompute_spatial_phases<double>(bases, cfg);
    const EventSlice slice({{0.0, 3, 3, {}}, {cfg.delta_t, 3, 3, {}}}, 0.0, cfg.window(), {8, 8});
    const auto grid = grid_for(slice, cfg, bases);
    const auto emb = pool_embedding(grid, table, slice[0], bases, cfg);
    EXPECT_EQ(emb.count, 2u);
    for (std::size_t j = 0; j < cfg.dim; ++j) {
        const auto want = (1.0 + std::polar(1.0, bases.t[j])) / 2.0;
        EXPECT_NEAR(emb.values[j].real(), want.real(), 1e-14);
        EXPECT_NEAR(emb.values[j].imag(), want.imag(), 1e-14);
    }
}

TEST(PoolEmbedding, EmptyNeighbourhoodIsAnError) {
    const auto cfg = small_config(8, 1);
    const auto bases = generate_bases(cfg);
    const auto table = precompute_spatial_phases<double>(bases, cfg);
    const EventSlice slice({{0.0, 0, 0, {}}}, 0.0, cfg.window(), {8, 8});
    const auto grid = grid_for(slice, cfg, bases);
    const Event far{0.0, 7, 7, {}};
    EXPECT_THROW(pool_embedding(grid, table, far, bases, cfg), EmptyNeighborhoodError);
    EXPECT_THROW(oracle_encode(slice, far, cfg, bases), EmptyNeighborhoodError);
}

TEST(PoolEmbedding, MatchesOracleOnRandomSlices) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 30; ++trial) {
        auto cfg = small_config(32, 1 + static_cast<int>(rng() % 6));
        cfg.delta_y = 1 + static_cast<int>(rng() % 6);
        const auto bases = generate_bases(cfg);
        const CameraGeometry g{1 + static_cast<int>(rng() % 32), 1 + static_cast<int>(rng() % 32)};
        const auto slice = random_slice(rng, 1 + rng() % 200, g, cfg.window(), trial % 3 == 0);
        const auto grid = grid_for(slice, cfg, bases);
        const auto table = precompute_spatial_phases<double>(bases, cfg);
        for (const auto &q : slice.events()) {
            const auto pooled = pool_embedding(grid, table, q, bases, cfg);
            const auto direct = oracle_encode(slice, q, cfg, bases);
            EXPECT_EQ(pooled.count, direct.count);
            EXPECT_LT(max_relative_error(pooled, direct), 1e-6);
            for (const auto &v : pooled.values) {
                EXPECT_LE(std::abs(v), 1.0 + 1e-6);
            }
        }
    }
}

TEST(Encode, SingleEventSlice) {
    auto cfg = small_config();
    const EventSlice slice({{7.25, 2, 2, {}}}, 7.25, cfg.window(), {4, 4});
    const auto q = all_indices(1);
    const auto embs = encode<double>(slice, q, cfg);
    ASSERT_EQ(embs.size(), 1u);
    for (const auto &v : embs[0].values) {
        EXPECT_EQ(v, std::complex<double>(1.0, 0.0));
    }
    const auto embs32 = encode<float>(slice, q, cfg);
    for (const auto &v : embs32[0].values) {
        EXPECT_EQ(v, std::complex<float>(1.0f, 0.0f));
    }
}

TEST(Encode, EmptyQuerySetStillBuildsGrid) {
    const auto cfg = small_config();
    std::mt19937_64 rng(4);
    const auto slice = random_slice(rng, 20, {8, 8}, cfg.window());
    Encoder<double> enc(cfg, slice.geometry());
    enc.build(slice);
    EXPECT_EQ(enc.grid().total_count(), 20u);
    EXPECT_TRUE(enc.embed_many({}).empty());
    EXPECT_TRUE(encode<double>(slice, {}, cfg).empty());
}

TEST(Encode, QueryOrderIndependence) {
    const auto cfg = small_config();
    std::mt19937_64 rng(6);
    const auto slice = random_slice(rng, 60, {10, 10}, cfg.window());
    auto q = all_indices(slice.size());
    const auto base = encode<double>(slice, q, cfg);
    std::shuffle(q.begin(), q.end(), rng);
    const auto shuffled = encode<double>(slice, q, cfg, 3);
    for (std::size_t i = 0; i < q.size(); ++i) {
        EXPECT_EQ(shuffled[i].values, base[q[i]].values);
    }
    const std::vector<std::size_t> bad{slice.size()};
    EXPECT_THROW(encode<double>(slice, bad, cfg), std::out_of_range);
}

TEST(Encode, RebasesAbsoluteTimestamps) {
    const auto cfg = small_config();
    std::mt19937_64 rng(9);
    const auto local = random_slice(rng, 80, {10, 10}, cfg.window());
    std::vector<Event> shifted = local.events();
    for (auto &e : shifted) {
        e.t += 1.0e5;
    }
    const EventSlice absolute(shifted, 1.0e5, cfg.window(), local.geometry());
    const auto q = all_indices(local.size());
    const auto a = encode<double>(local, q, cfg);
    const auto b = encode<double>(absolute, q, cfg);
    for (std::size_t i = 0; i < q.size(); ++i) {
        for (std::size_t j = 0; j < cfg.dim; ++j) {
            // Timestamps near 1e5 s carry ~1.5e-11 s of representation error.
            EXPECT_NEAR(std::abs(a[i].values[j] - b[i].values[j]), 0.0, 1e-7);
        }
    }
}

TEST(Kde, DirectExamples) {
    auto cfg = small_config();
    const EventSlice slice({{0.0, 4, 4, {}}}, 0.0, cfg.window(), {8, 8});
    EXPECT_DOUBLE_EQ(kde_direct(slice, slice[0], {0, 0, 0}, cfg), 1.0);
    EXPECT_DOUBLE_EQ(kde_direct(slice, slice[0], {cfg.delta_t, 0, 0}, cfg), std::exp(-cfg.sigma2 / 2.0));
    EXPECT_DOUBLE_EQ(kde_direct(slice, slice[0], {0, 0, -static_cast<double>(cfg.delta_y)}, cfg),
                     std::exp(-cfg.sigma2 / 2.0));
    std::mt19937_64 rng(10);
    const auto many = random_slice(rng, 50, {8, 8}, cfg.window());
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int i = 0; i < 100; ++i) {
        const double g = kde_direct(many, many[i % 50], {u(rng) * cfg.delta_t, u(rng) * 3, u(rng) * 3}, cfg);
        EXPECT_GE(g, 0.0);
        EXPECT_LE(g, 1.0);
    }
}

TEST(Kde, ReconstructionAtEventIsOne) {
    auto cfg = small_config(64);
    const auto bases = generate_bases(cfg);
    const EventSlice slice({{0.0, 4, 4, {}}}, 0.0, cfg.window(), {8, 8});
    const auto emb = oracle_encode(slice, slice[0], cfg, bases);
    EXPECT_NEAR(reconstruct_density(emb, {0, 0, 0}, bases, cfg), 1.0, 1e-15);
    Embedding<double> wrong;
    wrong.values.resize(3);
    EXPECT_THROW(reconstruct_density(wrong, {0, 0, 0}, bases, cfg), DimensionMismatch);
}

} // namespace
} // namespace nflow
