#include <gtest/gtest.h>

#include <cmath>

#include "cropuf/analysis.hpp"
#include "cropuf/crp.hpp"

using namespace cropuf;

namespace {

PufParams quiet_params(std::uint64_t seed) {
    PufParams p;
    p.seed = seed;
    p.jitter_sigma_rel = 0.0;
    p.temp_coeff_sigma = 0.0;
    return p;
}

std::vector<Challenge> shared_challenge_set(int n, int m, int count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Challenge> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) out.push_back(random_challenge(n, m, rng));
    return out;
}

}  // namespace

TEST(HistogramBuckets, EdgesAndConservation) {
    Histogram h;
    h.add(0.0);    // [0:10]
    h.add(10.0);   // still the first bucket
    h.add(10.5);   // (10:20]
    h.add(41.0);   // (40:50]
    h.add(50.0);   // (40:50]
    h.add(100.0);  // (90:100]
    EXPECT_EQ(h.counts[0], 2u);
    EXPECT_EQ(h.counts[1], 1u);
    EXPECT_EQ(h.counts[4], 2u);
    EXPECT_EQ(h.counts[9], 1u);
    EXPECT_EQ(h.total(), 6u);
}

TEST(CosPopulation, ConservationAndDeterminismAcrossWorkerCounts) {
    PopulationSpec spec;
    spec.count = 96;
    spec.params.n = 4;
    spec.params.m = 5;
    spec.seed_base = 1000;
    PopulationResult serial = cos_population(spec, ProbeConfig{}, PairPolicy{}, 1.5, 1);
    PopulationResult parallel = cos_population(spec, ProbeConfig{}, PairPolicy{}, 1.5, 2);
    EXPECT_EQ(serial.histogram, parallel.histogram);
    EXPECT_EQ(serial.cos_values, parallel.cos_values);
    EXPECT_EQ(serial.histogram.total() + serial.failures, static_cast<std::uint64_t>(spec.count));
    EXPECT_EQ(serial.failures, 0u);
    EXPECT_EQ(serial.crp_population, 124416u);
    for (std::uint64_t reliable : serial.reliable_counts) EXPECT_GE(reliable, 100u);
}

TEST(CosPopulation, DegenerateSingleInstance) {
    PopulationSpec spec;
    spec.count = 1;
    spec.params = quiet_params(0);
    spec.seed_base = 77;
    PopulationResult r = cos_population(spec, ProbeConfig{}, PairPolicy{}, 1.5, 1);
    EXPECT_EQ(r.histogram.total(), 1u);
    ASSERT_EQ(r.cos_values.size(), 1u);
    // nothing unstable: threshold is the minimum nonzero separation, still a
    // valid COS in (0, 1]
    EXPECT_GT(r.cos_values[0], 0.9);
    PopulationResult again = cos_population(spec, ProbeConfig{}, PairPolicy{}, 1.5, 1);
    EXPECT_EQ(r.histogram, again.histogram);
}

TEST(Uniqueness, IdenticalDevicesHaveZeroDistance) {
    std::vector<PufInstance> pop = {sample_puf(quiet_params(5)), sample_puf(quiet_params(5))};
    auto challenges = shared_challenge_set(4, 5, 64, 0);
    EXPECT_DOUBLE_EQ(uniqueness(pop, challenges).mean, 0.0);
}

TEST(Uniqueness, MirroredDeviceIsComplementary) {
    // path sums of the mirrored device are K - sums of the original, so every
    // comparison flips and the distance is exactly 1
    PufInstance a = sample_puf(quiet_params(6));
    Grid mirrored(a.n(), a.m());
    for (int i = 0; i < a.n(); ++i)
        for (int j = 0; j < a.m(); ++j) mirrored.at(i, j) = 200.0 - a.delays().at(i, j);
    PufParams params = quiet_params(6);
    std::vector<PufInstance> pop = {a, PufInstance::from_delays(mirrored, params)};
    auto challenges = shared_challenge_set(4, 5, 256, 1);
    EXPECT_DOUBLE_EQ(uniqueness(pop, challenges).mean, 1.0);
}

TEST(Uniqueness, PopulationSitsAtHalf) {
    std::vector<PufInstance> pop;
    for (int i = 0; i < 50; ++i) {
        PufParams p;  // default params
        p.seed = 300 + static_cast<std::uint64_t>(i);
        pop.push_back(sample_puf(p));
    }
    auto challenges = shared_challenge_set(4, 5, 1024, 0);
    UniquenessReport rep = uniqueness(pop, challenges);
    EXPECT_NEAR(rep.mean, 0.5, 0.02);
    EXPECT_EQ(rep.pair_count, 1225u);
    EXPECT_LE(rep.ci_low, rep.mean);
    EXPECT_GE(rep.ci_high, rep.mean);
}

TEST(Reliability, QuietDeviceIsPerfectlyStable) {
    PufInstance dev = sample_puf(quiet_params(7));
    auto challenges = shared_challenge_set(4, 5, 32, 2);
    for (double frac : reliability(dev, challenges, ProbeConfig{}, Rng(1)))
        EXPECT_DOUBLE_EQ(frac, 1.0);
}

TEST(Reliability, AboveThresholdChallengesAreStable) {
    PufParams params;
    params.seed = 8;
    PufInstance dev = sample_puf(params);
    PredictedDelayMatrix model = fit_noiseless(dev);
    CrpSet crps = enumerate_crps(4, 5);
    Threshold t = compute_threshold(model, dev, crps, ProbeConfig{}, 1.5, 8);

    std::vector<double> sums = all_path_sums(model.entries);
    std::vector<Challenge> above;
    for (const auto& pr : crps.pairs) {
        if (above.size() == 64) break;
        if (std::abs(pair_delta(sums, pr)) > t.value) above.push_back(challenge_for_pair(pr, 4, 5));
    }
    ASSERT_EQ(above.size(), 64u);
    for (double frac : reliability(dev, above, t.probe, Rng(9))) EXPECT_DOUBLE_EQ(frac, 1.0);
}

TEST(Reliability, NearTiePairIsUnstable) {
    PufParams params;
    params.seed = 10;
    PufInstance dev = sample_puf(params);
    PredictedDelayMatrix model = fit_noiseless(dev);
    CrpSet crps = enumerate_crps(4, 5);
    std::vector<double> sums = all_path_sums(model.entries);
    // the closest pair: its separation sits at the jitter scale
    const PathPair* best = nullptr;
    double best_delta = 1e300;
    for (const auto& pr : crps.pairs) {
        double d = std::abs(pair_delta(sums, pr));
        if (d > 0 && d < best_delta) {
            best_delta = d;
            best = &pr;
        }
    }
    ASSERT_NE(best, nullptr);
    ASSERT_LT(best_delta, 0.1);
    std::vector<Challenge> near_tie = {challenge_for_pair(*best, 4, 5)};
    ProbeConfig heavy;
    heavy.repeats = 200;
    for (double frac : reliability(dev, near_tie, heavy, Rng(11))) EXPECT_LT(frac, 1.0);
}

TEST(Adversary, ChallengeOnlyGuessSitsAtChance) {
    // Per-device-pair rates scatter widely (path reuse correlates the bits;
    // measured sigma ~0.15 per 100-bit block), so the chance-level baseline
    // is asserted on an aggregate over fresh pairs at a 3-sigma tolerance.
    CrpSet crps = enumerate_crps(4, 5);
    std::uint64_t matched = 0, total = 0;
    for (int pair_idx = 0; pair_idx < 40; ++pair_idx) {
        PufParams params;
        params.seed = 400 + static_cast<std::uint64_t>(pair_idx);
        PufInstance dev = sample_puf(params);
        dev.burn_fuse();  // the adversary operates post-deployment
        PredictedDelayMatrix model = fit_noiseless(dev);
        Threshold t = compute_threshold(model, dev, crps, ProbeConfig{}, 1.5, params.seed);
        Rng rng(500 + static_cast<std::uint64_t>(pair_idx));
        SharedKey key = SharedKey::random(25, rng);
        KeyChallenges kc = generate_challenges(model, t, key, rng);

        PufParams foreign_params;
        foreign_params.seed = 9900 + static_cast<std::uint64_t>(pair_idx);
        PredictedDelayMatrix foreign = fit_noiseless(sample_puf(foreign_params));
        AdversaryReport rep = adversary_baseline(dev, kc, foreign);
        matched += rep.matched;
        total += rep.bits;
    }
    EXPECT_EQ(total, 1000u);
    EXPECT_NEAR(static_cast<double>(matched) / static_cast<double>(total), 0.5, 0.08);
}

TEST(Adversary, StolenModelPredictsEverything) {
    PufParams params;
    params.seed = 12;
    PufInstance dev = sample_puf(params);
    PredictedDelayMatrix model = fit_noiseless(dev);
    Threshold t = compute_threshold(model, dev, enumerate_crps(4, 5), ProbeConfig{}, 1.5, 12);
    Rng rng(13);
    SharedKey key = SharedKey::random(1000, rng);
    KeyChallenges kc = generate_challenges(model, t, key, rng);
    dev.burn_fuse();
    AdversaryReport rep = adversary_baseline(dev, kc, model);
    EXPECT_GE(rep.accuracy(), 0.999);
}

TEST(Adversary, EmptyChallengeListYieldsEmptyReport) {
    PufInstance dev = sample_puf(quiet_params(14));
    AdversaryReport rep = adversary_baseline(dev, KeyChallenges{}, fit_noiseless(dev));
    EXPECT_EQ(rep.bits, 0u);
    EXPECT_DOUBLE_EQ(rep.accuracy(), 0.0);  // no division by zero
}

TEST(CsvEmission, HistogramAndMetricRows) {
    Histogram h;
    h.add(42.0);
    h.add(55.0);
    std::string csv = histogram_to_csv(h);
    EXPECT_NE(csv.find("bucket_low,bucket_high,count\n"), std::string::npos);
    EXPECT_NE(csv.find("40,50,1"), std::string::npos);
    EXPECT_NE(csv.find("50,60,1"), std::string::npos);

    std::string metrics = metrics_to_csv({{"uniqueness_mean", 0.5, 0.48, 0.52}});
    EXPECT_NE(metrics.find("metric,value,ci_low,ci_high\n"), std::string::npos);
    EXPECT_NE(metrics.find("uniqueness_mean,0.5,0.48,0.52"), std::string::npos);
}
