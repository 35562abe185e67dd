#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cropuf/crp.hpp"
#include "cropuf/device.hpp"
#include "cropuf/extraction.hpp"
#include "cropuf/keyshare.hpp"

namespace cropuf {

/// A deterministic family of simulated devices: instance i uses
/// seed_base + i.
struct PopulationSpec {
    int count = 10000;
    PufParams params;
    std::uint64_t seed_base = 1;
};

/// COS percentage histogram, ten-point buckets: [0:10], (10:20], ... (90:100].
struct Histogram {
    std::vector<double> edges{0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
    std::vector<std::uint64_t> counts = std::vector<std::uint64_t>(10, 0);

    void add(double percent) {
        int idx = percent <= 10.0 ? 0 : static_cast<int>(std::ceil(percent / 10.0)) - 1;
        counts[std::clamp(idx, 0, 9)] += 1;
    }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto c : counts) t += c;
        return t;
    }

    friend bool operator==(const Histogram&, const Histogram&) = default;
};

struct PopulationResult {
    Histogram histogram;
    std::vector<double> cos_values;                ///< per surviving instance
    std::vector<std::uint64_t> reliable_counts;    ///< R_t per surviving instance
    std::uint64_t failures = 0;                    ///< instances that threw
    std::uint64_t crp_population = 0;              ///< R per instance
};

/// Per-instance pipeline of the population experiment: sample, noiseless
/// fit, device-probed threshold, COS. Parallel chunks merge by index, so the
/// result is independent of the worker count.
inline PopulationResult cos_population(const PopulationSpec& spec, const ProbeConfig& probe = {},
                                       const PairPolicy& policy = {}, double margin_factor = 1.5,
                                       unsigned workers = 0) {
    if (spec.count < 1) throw ParamError("population count must be at least 1");
    validate_params(spec.params);
    CrpSet crps = enumerate_crps(spec.params.n, spec.params.m, policy);

    struct Slot {
        double cos = 0.0;
        std::uint64_t reliable = 0;
        bool ok = false;
    };
    std::vector<Slot> slots(spec.count);

    auto run_range = [&](int lo, int hi) {
        for (int i = lo; i < hi; ++i) {
            try {
                PufParams params = spec.params;
                params.seed = spec.seed_base + static_cast<std::uint64_t>(i);
                PufInstance device = sample_puf(params);
                PredictedDelayMatrix model = fit_noiseless(device, EnvCondition{params.temp_ref});
                Threshold t = compute_threshold(model, device, crps, probe, margin_factor,
                                                /*probe_seed=*/params.seed ^ 0x50524f42u);
                CosReport rep = cos_report(model, t, crps);
                slots[i] = {rep.cos(), rep.r_reliable, true};
            } catch (const Error&) {
                slots[i].ok = false;
            }
        }
    };

    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    if (workers <= 1 || spec.count < 32) {
        run_range(0, spec.count);
    } else {
        std::vector<std::thread> pool;
        int chunk = (spec.count + static_cast<int>(workers) - 1) / static_cast<int>(workers);
        for (unsigned w = 0; w < workers; ++w) {
            int lo = static_cast<int>(w) * chunk;
            int hi = std::min(spec.count, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back(run_range, lo, hi);
        }
        for (auto& th : pool) th.join();
    }

    PopulationResult out;
    out.crp_population = crps.pairs.size();
    for (const auto& slot : slots) {
        if (!slot.ok) {
            ++out.failures;
            continue;
        }
        out.cos_values.push_back(slot.cos);
        out.reliable_counts.push_back(slot.reliable);
        out.histogram.add(slot.cos * 100.0);
    }
    return out;
}

struct UniquenessReport {
    double mean = 0.0;
    double ci_low = 0.0;   ///< 95% normal-approximation interval over pair distances
    double ci_high = 0.0;
    std::uint64_t pair_count = 0;
    std::uint64_t challenge_count = 0;
};

/// Mean pairwise fractional Hamming distance of zero-jitter response vectors
/// over a shared challenge set. Ideal populations sit at 0.5.
inline UniquenessReport uniqueness(const std::vector<PufInstance>& population,
                                   const std::vector<Challenge>& challenges, const EnvCondition& env = {}) {
    if (population.size() < 2) throw ParamError("uniqueness needs at least two devices");
    if (challenges.empty()) throw ParamError("empty challenge set");
    const std::size_t d = population.size(), c = challenges.size();
    std::vector<std::uint8_t> bits(d * c);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < c; ++k)
            bits[i * c + k] = static_cast<std::uint8_t>(respond(population[i], challenges[k], env, nullptr));

    double sum = 0.0, sumsq = 0.0;
    std::uint64_t pairs = 0;
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i + 1; j < d; ++j) {
            std::uint64_t diff = 0;
            for (std::size_t k = 0; k < c; ++k) diff += bits[i * c + k] != bits[j * c + k];
            double frac = static_cast<double>(diff) / static_cast<double>(c);
            sum += frac;
            sumsq += frac * frac;
            ++pairs;
        }
    }
    UniquenessReport rep;
    rep.pair_count = pairs;
    rep.challenge_count = c;
    rep.mean = sum / static_cast<double>(pairs);
    double var = std::max(0.0, sumsq / static_cast<double>(pairs) - rep.mean * rep.mean);
    double half = 1.96 * std::sqrt(var / static_cast<double>(pairs));
    rep.ci_low = rep.mean - half;
    rep.ci_high = rep.mean + half;
    return rep;
}

/// Per-challenge stability: fraction of jittered responses over the
/// temperature sweep that equal the zero-jitter reference bit at temp_ref.
inline std::vector<double> reliability(const PufInstance& device, const std::vector<Challenge>& challenges,
                                       const ProbeConfig& probe, const Rng& base) {
    if (probe.temperatures.empty()) throw ParamError("empty temperature sweep");
    std::vector<double> out;
    out.reserve(challenges.size());
    EnvCondition ref_env{device.params().temp_ref};
    for (std::size_t k = 0; k < challenges.size(); ++k) {
        int reference = respond(device, challenges[k], ref_env, nullptr);
        Rng stream = base.fork(k);
        std::uint64_t match = 0, total = 0;
        for (double t : probe.temperatures) {
            EnvCondition env{t};
            for (int r = 0; r < probe.repeats; ++r) {
                match += (respond(device, challenges[k], env, &stream) == reference);
                ++total;
            }
        }
        out.push_back(static_cast<double>(match) / static_cast<double>(total));
    }
    return out;
}

struct AdversaryReport {
    std::size_t bits = 0;
    std::size_t matched = 0;

    double accuracy() const { return bits == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(bits); }
};

/// Bit-prediction accuracy of an adversary who sees only the provisioned
/// challenges and guesses with `attacker_model`. A freshly sampled foreign
/// model lands at chance; the device's own fitted model (the stolen-model
/// scenario) predicts essentially everything.
inline AdversaryReport adversary_baseline(const PufInstance& device, const KeyChallenges& kc,
                                          const PredictedDelayMatrix& attacker_model,
                                          const EnvCondition& env = {}) {
    AdversaryReport rep;
    rep.bits = kc.per_bit.size();
    for (const auto& chal : kc.per_bit)
        rep.matched += (predict_response(attacker_model, chal) == respond(device, chal, env, nullptr));
    return rep;
}

// --- CSV emission -------------------------------------------------------------

inline std::string histogram_to_csv(const Histogram& h) {
    std::ostringstream os;
    os << "bucket_low,bucket_high,count\n";
    for (std::size_t k = 0; k + 1 < h.edges.size(); ++k)
        os << h.edges[k] << ',' << h.edges[k + 1] << ',' << h.counts[k] << '\n';
    return os.str();
}

struct MetricRow {
    std::string metric;
    double value = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

inline std::string metrics_to_csv(const std::vector<MetricRow>& rows) {
    std::ostringstream os;
    os.precision(10);
    os << "metric,value,ci_low,ci_high\n";
    for (const auto& r : rows) os << r.metric << ',' << r.value << ',' << r.ci_low << ',' << r.ci_high << '\n';
    return os.str();
}

}  // namespace cropuf
