#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cropuf/device.hpp"
#include "cropuf/grid.hpp"
#include "cropuf/path.hpp"
#include "oracle.hpp"

using namespace cropuf;

namespace {

// the two worked 4x4 delay matrices used throughout the suites
const std::vector<std::vector<double>> kMatA = {
    {3, 6, 8, 5}, {9, 7, 4, 5}, {5, 4, 6, 5}, {2, 5, 6, 3}};
const std::vector<std::vector<double>> kMatB = {
    {2, 4, 6, 5}, {5, 1, 3, 2}, {8, 6, 5, 7}, {3, 6, 4, 5}};
// matB after the column-2/column-4 rearrangement; row sums {17,21,19,15}
const std::vector<std::vector<double>> kMatBAdj = {
    {2, 4, 6, 5}, {5, 6, 3, 7}, {8, 1, 5, 5}, {3, 6, 4, 2}};

Grid grid_of(const std::vector<std::vector<double>>& rows) {
    Grid g(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.m; ++j) g.at(i, j) = rows[i][j];
    return g;
}

PufInstance device_of(const std::vector<std::vector<double>>& rows, double jitter = 0.0) {
    PufParams params;
    params.jitter_sigma_rel = jitter;
    return PufInstance::from_delays(grid_of(rows), params);
}

PathConfig straight_row(int row, int m) {
    PathConfig p;
    p.rows.assign(m, row);
    return p;
}

// responses of straight-row comparisons under the identity configuration;
// pairs are zero-based
std::vector<int> straight_responses(const PufInstance& dev, const std::vector<std::pair<int, int>>& pairs) {
    std::vector<int> bits;
    for (auto [a, b] : pairs) {
        Challenge c{StageConfig::identity(dev.n(), dev.m()), a, b};
        bits.push_back(respond(dev, c, EnvCondition{dev.params().temp_ref}, nullptr));
    }
    return bits;
}

}  // namespace

// --- worked-example vectors -------------------------------------------------

TEST(PathDelay, StraightRowSumsOfMatrixA) {
    PufInstance dev = device_of(kMatA);
    EnvCondition env{25.0};
    EXPECT_DOUBLE_EQ(path_delay(dev, straight_row(0, 4), env), 22.0);
    EXPECT_DOUBLE_EQ(path_delay(dev, straight_row(1, 4), env), 25.0);
    EXPECT_DOUBLE_EQ(path_delay(dev, straight_row(2, 4), env), 20.0);
    EXPECT_DOUBLE_EQ(path_delay(dev, straight_row(3, 4), env), 16.0);
}

TEST(PathDelay, StraightRowSumOfMatrixB) {
    // hand sum of the third row: 8+6+5+7
    PufInstance dev = device_of(kMatB);
    EXPECT_DOUBLE_EQ(path_delay(dev, straight_row(2, 4), EnvCondition{25.0}), 26.0);
}

TEST(PathDelay, CrossedPathsAgreeWithBruteForce) {
    PufInstance dev = device_of(kMatA);
    EnvCondition env{25.0};
    for (const auto& rows : oracle::all_paths(4, 4)) {
        PathConfig p{rows};
        EXPECT_DOUBLE_EQ(path_delay(dev, p, env), oracle::path_sum(kMatA, rows));
    }
}

TEST(Respond, WorkedChallengeSetsProduce011) {
    auto bits_a = straight_responses(device_of(kMatA), {{0, 1}, {1, 2}, {2, 3}});
    auto bits_b = straight_responses(device_of(kMatB), {{0, 2}, {2, 3}, {3, 1}});
    EXPECT_EQ(bits_a, (std::vector<int>{0, 1, 1}));
    EXPECT_EQ(bits_b, (std::vector<int>{0, 1, 1}));
}

TEST(Respond, WorkedChallengeSetsProduce010) {
    auto bits_a = straight_responses(device_of(kMatA), {{3, 1}, {1, 2}, {2, 0}});
    auto bits_b = straight_responses(device_of(kMatBAdj), {{0, 1}, {1, 3}, {3, 2}});
    EXPECT_EQ(bits_a, (std::vector<int>{0, 1, 0}));
    EXPECT_EQ(bits_b, (std::vector<int>{0, 1, 0}));
}

TEST(Respond, AdjustedMatrixBRowSums) {
    PufInstance dev = device_of(kMatBAdj);
    EnvCondition env{25.0};
    EXPECT_DOUBLE_EQ(path_delay(dev, straight_row(0, 4), env), 17.0);
    EXPECT_DOUBLE_EQ(path_delay(dev, straight_row(1, 4), env), 21.0);
    EXPECT_DOUBLE_EQ(path_delay(dev, straight_row(2, 4), env), 19.0);
    EXPECT_DOUBLE_EQ(path_delay(dev, straight_row(3, 4), env), 15.0);
}

// --- sampling -----------------------------------------------------------------

TEST(SamplePuf, ZeroVarianceGivesNominalEverywhere) {
    PufParams params;
    params.n = 3;
    params.m = 5;
    params.sigma_process = 0.0;
    params.temp_coeff_sigma = 0.0;
    PufInstance dev = sample_puf(params);
    for (double v : dev.delays().a) EXPECT_DOUBLE_EQ(v, params.nominal_delay);
    EXPECT_TRUE(dev.fuse_intact());
}

TEST(SamplePuf, SameSeedSameDevice) {
    PufParams params;
    params.seed = 1234;
    PufInstance a = sample_puf(params);
    PufInstance b = sample_puf(params);
    EXPECT_EQ(a.delays(), b.delays());
    EXPECT_EQ(a.temp_coeffs(), b.temp_coeffs());
}

TEST(SamplePuf, EntryStatisticsMatchTheDistribution) {
    PufParams params;
    params.n = 3;
    params.m = 5;
    params.nominal_delay = 100.0;
    params.sigma_process = 5.0;
    const int samples = 10000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < samples; ++i) {
        params.seed = static_cast<std::uint64_t>(i);
        double v = sample_puf(params).delays().at(0, 0);
        sum += v;
        sumsq += v * v;
    }
    double mean = sum / samples;
    double stddev = std::sqrt(sumsq / samples - mean * mean);
    EXPECT_NEAR(mean, 100.0, 0.2);
    EXPECT_NEAR(stddev, 5.0, 0.2);
}

TEST(SamplePuf, RejectsInvalidParams) {
    PufParams params;
    params.m = 4;  // even
    EXPECT_THROW(sample_puf(params), ParamError);
    params.m = 5;
    params.n = 2;
    EXPECT_THROW(sample_puf(params), ParamError);
    params.n = 4;
    params.sigma_process = 50.0;  // nominal no longer > 3 sigma
    EXPECT_THROW(sample_puf(params), ParamError);
}

// --- temperature model ----------------------------------------------------------

TEST(EffectiveDelay, ReferencePointAndLinearSlope) {
    Grid delays(3, 5, 100.0);
    Grid coeffs(3, 5, 0.001);
    PufParams params;
    PufInstance dev(delays, coeffs, params);
    EXPECT_DOUBLE_EQ(effective_delay(dev, 0, 0, EnvCondition{25.0}), 100.0);
    EXPECT_DOUBLE_EQ(effective_delay(dev, 0, 0, EnvCondition{75.0}), 105.0);
    EXPECT_DOUBLE_EQ(effective_delay(dev, 0, 0, EnvCondition{-25.0}), 95.0);
}

TEST(EffectiveDelay, OutOfRangeTemperatureThrows) {
    Grid delays(3, 5, 100.0);
    Grid coeffs(3, 5, -0.05);
    PufInstance dev(delays, coeffs, PufParams{});
    EXPECT_THROW(effective_delay(dev, 0, 0, EnvCondition{50.0}), EnvRangeError);
}

// --- counter -----------------------------------------------------------------

TEST(CounterReading, NoiselessReciprocal) {
    PufInstance dev = device_of(kMatA);
    Rng rng(0);
    auto r = counter_reading(dev, straight_row(0, 4), EnvCondition{25.0}, rng);
    EXPECT_DOUBLE_EQ(r.counts, 1.0 / 22.0);
}

TEST(CounterReading, UniformMatrixGivesWindowOverTotal) {
    Grid delays(4, 5, 7.0);
    PufParams params;
    params.jitter_sigma_rel = 0.0;
    params.counter_window = 3.0;
    PufInstance dev = PufInstance::from_delays(delays, params);
    Rng rng(0);
    PathConfig crooked{{0, 3, 1, 2, 0}};
    auto r = counter_reading(dev, crooked, EnvCondition{25.0}, rng);
    EXPECT_DOUBLE_EQ(r.counts, 3.0 / (5.0 * 7.0));
}

TEST(CounterReading, JitterScaleMatchesMonteCarlo) {
    PufParams params;
    params.jitter_sigma_rel = 1e-3;
    params.seed = 7;
    PufInstance dev = sample_puf(params);
    Rng rng(99);
    PathConfig path = straight_row(0, params.m);
    const int reps = 10000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < reps; ++i) {
        double c = counter_reading(dev, path, EnvCondition{25.0}, rng).counts;
        sum += c;
        sumsq += c * c;
    }
    double mean = sum / reps;
    double rel_std = std::sqrt(sumsq / reps - mean * mean) / mean;
    EXPECT_NEAR(rel_std, 1e-3, 0.15e-3);
}

TEST(CounterReading, BurnedFuseRefuses) {
    PufInstance dev = device_of(kMatA);
    dev.burn_fuse();
    Rng rng(0);
    EXPECT_THROW(counter_reading(dev, straight_row(0, 4), EnvCondition{25.0}, rng), FuseBurnedError);
    EXPECT_FALSE(dev.fuse_intact());
}

TEST(CounterReading, IntegerModeTruncates) {
    Grid delays(4, 5, 10.0);
    PufParams params;
    params.jitter_sigma_rel = 0.0;
    params.counter_window = 1e4;
    params.integer_counts = true;
    PufInstance dev = PufInstance::from_delays(delays, params);
    Rng rng(0);
    auto r = counter_reading(dev, straight_row(1, 5), EnvCondition{25.0}, rng);
    EXPECT_DOUBLE_EQ(r.counts, 200.0);  // floor(1e4 / 50)
}

// --- configuration decomposition ----------------------------------------------

TEST(LoopsOfConfig, IdentityGivesStraightRows) {
    auto loops = loops_of_config(StageConfig::identity(4, 5));
    ASSERT_EQ(loops.size(), 4u);
    for (int r = 0; r < 4; ++r) EXPECT_EQ(loops[r], straight_row(r, 5));
}

TEST(LoopsOfConfig, CyclicFirstTransition) {
    StageConfig s = StageConfig::identity(4, 5);
    s.perms[0] = {1, 2, 3, 0};
    auto loops = loops_of_config(s);
    EXPECT_EQ(loops[0].rows, (std::vector<int>{0, 1, 1, 1, 1}));
    EXPECT_EQ(loops[3].rows, (std::vector<int>{3, 0, 0, 0, 0}));
}

TEST(LoopsOfConfig, ExhaustiveCellPartitionForAllSmallConfigs) {
    // n=3, m=5: all 6^4 = 1296 configurations
    auto perms = oracle::all_permutations(3);
    std::uint64_t checked = 0;
    for (const auto& p0 : perms)
        for (const auto& p1 : perms)
            for (const auto& p2 : perms)
                for (const auto& p3 : perms) {
                    StageConfig s{{p0, p1, p2, p3}};
                    auto loops = loops_of_config(s);
                    for (int j = 0; j < 5; ++j) {
                        std::set<int> rows_at_stage;
                        for (int r = 0; r < 3; ++r) rows_at_stage.insert(loops[r].rows[j]);
                        ASSERT_EQ(rows_at_stage.size(), 3u);
                    }
                    ++checked;
                }
    EXPECT_EQ(checked, 1296u);
}

TEST(LoopsOfConfig, ColumnMultisetsPreserved) {
    // rearranging a column never changes the multiset of values in it
    Grid g = grid_of(kMatA);
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        StageConfig s = random_stage_config(4, 4, rng);
        auto loops = loops_of_config(s);
        for (int j = 0; j < 4; ++j) {
            std::multiset<double> original, decomposed;
            for (int i = 0; i < 4; ++i) {
                original.insert(g.at(i, j));
                decomposed.insert(g.at(loops[i].rows[j], j));
            }
            EXPECT_EQ(original, decomposed);
        }
    }
}

// --- challenge construction -----------------------------------------------------

TEST(ConfigForPaths, StraightRowsRoundTrip) {
    PathConfig p0 = straight_row(0, 5), p1 = straight_row(1, 5);
    Challenge c = config_for_paths(p0, p1, 4);
    EXPECT_EQ(c.a, 0);
    EXPECT_EQ(c.b, 1);
    auto loops = loops_of_config(c.config);
    EXPECT_EQ(loops[0], p0);
    EXPECT_EQ(loops[1], p1);
}

TEST(ConfigForPaths, SharedCellIsInfeasible) {
    PathConfig p1{{0, 1, 2, 3, 0}};
    PathConfig p2{{1, 1, 3, 2, 1}};  // stage 1 collides
    EXPECT_THROW(config_for_paths(p1, p2, 4), InfeasiblePairError);
}

TEST(ConfigForPaths, RandomDisjointPairsRoundTripAndCompareCorrectPaths) {
    PufParams params;
    params.seed = 21;
    params.jitter_sigma_rel = 0.0;
    PufInstance dev = sample_puf(params);
    std::vector<std::vector<double>> w(4, std::vector<double>(5));
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) w[i][j] = dev.delays().at(i, j);

    Rng rng(17);
    int done = 0;
    while (done < 200) {
        PathConfig p1, p2;
        for (int j = 0; j < 5; ++j) {
            p1.rows.push_back(static_cast<int>(rng.below(4)));
            p2.rows.push_back(static_cast<int>(rng.below(4)));
        }
        if (!column_disjoint(p1, p2)) continue;
        Challenge c = config_for_paths(p1, p2, 4);
        auto loops = loops_of_config(c.config);
        ASSERT_EQ(loops[c.a], p1);
        ASSERT_EQ(loops[c.b], p2);
        int expected = oracle::path_sum(w, p1.rows) > oracle::path_sum(w, p2.rows) ? 1 : 0;
        EXPECT_EQ(respond(dev, c, EnvCondition{25.0}, nullptr), expected);
        ++done;
    }
}

// --- enumeration ------------------------------------------------------------------

TEST(EnumeratePaths, CountsAndOrder) {
    EXPECT_EQ(enumerate_paths(2, 5).size(), 32u);
    auto paths = enumerate_paths(4, 5);
    EXPECT_EQ(paths.size(), 1024u);
    EXPECT_EQ(paths.front().rows, (std::vector<int>{0, 0, 0, 0, 0}));
    EXPECT_EQ(paths.back().rows, (std::vector<int>{3, 3, 3, 3, 3}));
    for (std::size_t k = 0; k < paths.size(); ++k) {
        EXPECT_EQ(path_to_index(paths[k], 4), k);
        EXPECT_EQ(path_from_index(k, 4, 5), paths[k]);
    }
}

// --- properties -------------------------------------------------------------------

TEST(Properties, GaugeShiftsLeaveEveryPathSumUnchanged) {
    Grid g = grid_of(kMatA);
    Grid shifted = with_column_shifts(g, {2.5, -1.0, -3.5, 2.0});  // sums to zero
    for (const auto& rows : oracle::all_paths(4, 4)) {
        PathConfig p{rows};
        EXPECT_NEAR(path_sum(g, p), path_sum(shifted, p), 1e-12);
    }
}

TEST(Properties, GaugeShiftsLeaveResponsesUnchanged) {
    PufParams params;
    params.seed = 3;
    PufInstance dev = sample_puf(params);
    Grid shifted = with_column_shifts(dev.delays(), {1.0, -2.0, 0.5, 0.25, 0.25});
    PufParams quiet = params;
    quiet.jitter_sigma_rel = 0.0;
    PufInstance dev2 = PufInstance::from_delays(shifted, quiet);
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        Challenge c = random_challenge(4, 5, rng);
        EXPECT_EQ(respond(dev, c, EnvCondition{25.0}, nullptr), respond(dev2, c, EnvCondition{25.0}, nullptr));
    }
}

TEST(Properties, ResponseAntisymmetry) {
    PufParams params;
    params.seed = 4;
    PufInstance dev = sample_puf(params);
    Rng rng(12);
    for (int trial = 0; trial < 300; ++trial) {
        Challenge c = random_challenge(4, 5, rng);
        Challenge flipped = c;
        std::swap(flipped.a, flipped.b);
        int bit = respond(dev, c, EnvCondition{25.0}, nullptr);
        EXPECT_EQ(respond(dev, flipped, EnvCondition{25.0}, nullptr), 1 - bit);
    }
}

TEST(Properties, JitteredRespondIsDeterministicGivenRngState) {
    PufParams params;
    params.seed = 5;
    PufInstance dev = sample_puf(params);
    Challenge c = random_challenge(4, 5, *std::make_unique<Rng>(1));
    Rng r1(42), r2(42);
    for (int i = 0; i < 50; ++i)
        EXPECT_EQ(respond(dev, c, EnvCondition{50.0}, &r1), respond(dev, c, EnvCondition{50.0}, &r2));
}

TEST(Properties, FuseSurvivesOnlyRawCounts) {
    PufParams params;
    params.seed = 6;
    PufInstance dev = sample_puf(params);
    Challenge c = random_challenge(4, 5, *std::make_unique<Rng>(2));
    int before = respond(dev, c, EnvCondition{25.0}, nullptr);
    dev.burn_fuse();
    EXPECT_EQ(respond(dev, c, EnvCondition{25.0}, nullptr), before);
}

TEST(Validation, BadChallengesAreRejected) {
    PufInstance dev = device_of(kMatA);
    Challenge same_pair{StageConfig::identity(4, 4), 2, 2};
    EXPECT_THROW(respond(dev, same_pair, EnvCondition{25.0}, nullptr), DataError);
    Challenge bad_perm{StageConfig::identity(4, 4), 0, 1};
    bad_perm.config.perms[1] = {0, 0, 1, 2};
    EXPECT_THROW(respond(dev, bad_perm, EnvCondition{25.0}, nullptr), DataError);
    Challenge wrong_width{StageConfig::identity(4, 5), 0, 1};
    EXPECT_THROW(respond(dev, wrong_width, EnvCondition{25.0}, nullptr), DimensionError);
}
