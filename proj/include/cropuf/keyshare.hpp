#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "cropuf/crp.hpp"
#include "cropuf/device.hpp"
#include "cropuf/errors.hpp"
#include "cropuf/extraction.hpp"

namespace cropuf {

/// Temperature sweep and repeat count used to decide whether a challenge is
/// stable. A challenge is unstable if any two responses across the
/// temperatures-by-repeats grid differ.
struct ProbeConfig {
    std::vector<double> temperatures{-20.0, 0.0, 25.0, 50.0, 75.0};
    int repeats = 11;

    friend bool operator==(const ProbeConfig&, const ProbeConfig&) = default;
};

/// Reliability threshold: challenges whose |path-sum difference| exceeds
/// `value` are the ones trusted to answer identically across the sweep.
struct Threshold {
    double value = 0.0;
    double margin_factor = 1.5;
    ProbeConfig probe;

    // provenance
    double trigger_delta = 0.0;        ///< |delta| of the first unstable challenge
    bool degenerate = false;           ///< no unstable challenge found; value = min nonzero |delta|
    std::uint64_t pairs_considered = 0;
    bool sampled_pairs = false;
};

/// Key material as an explicit bit sequence.
struct SharedKey {
    std::vector<std::uint8_t> bits;  // each 0 or 1

    std::size_t size() const { return bits.size(); }

    static SharedKey from_bitstring(const std::string& s) {
        SharedKey k;
        k.bits.reserve(s.size());
        for (char ch : s) {
            if (ch != '0' && ch != '1') throw ParamError("key bitstring must contain only 0 and 1");
            k.bits.push_back(ch == '1' ? 1 : 0);
        }
        if (k.bits.empty()) throw ParamError("key must be nonempty");
        return k;
    }

    std::string to_bitstring() const {
        std::string s;
        s.reserve(bits.size());
        for (auto b : bits) s.push_back(b ? '1' : '0');
        return s;
    }

    static SharedKey random(std::size_t nbits, Rng& rng) {
        if (nbits == 0) throw ParamError("key must be nonempty");
        SharedKey k;
        k.bits.reserve(nbits);
        for (std::size_t i = 0; i < nbits; ++i) k.bits.push_back(static_cast<std::uint8_t>(rng.below(2)));
        return k;
    }

    friend bool operator==(const SharedKey&, const SharedKey&) = default;
};

/// One challenge per key bit, in key order.
struct KeyChallenges {
    std::vector<Challenge> per_bit;

    friend bool operator==(const KeyChallenges&, const KeyChallenges&) = default;
};

/// Coefficient of stabilization: reliable CRPs over total CRPs.
struct CosReport {
    std::uint64_t r_reliable = 0;
    std::uint64_t r_total = 0;

    double cos() const { return r_total == 0 ? 0.0 : static_cast<double>(r_reliable) / static_cast<double>(r_total); }
};

/// Stability oracle. The first argument is a stable derivation key (the
/// pair's rank in the sorted walk) so probes can fork deterministic rng
/// streams regardless of evaluation schedule.
using StabilityProbe = std::function<bool(std::uint64_t key, const Challenge&)>;

/// Probe backed by a simulated device: replays the challenge over the
/// temperature sweep with fresh counter jitter and reports whether every
/// response matched.
inline StabilityProbe device_stability_probe(const PufInstance& device, const ProbeConfig& cfg, const Rng& base) {
    return [&device, cfg, base](std::uint64_t key, const Challenge& chal) {
        Rng stream = base.fork(key);
        int reference = -1;
        for (double t : cfg.temperatures) {
            EnvCondition env{t};
            for (int r = 0; r < cfg.repeats; ++r) {
                int bit = respond(device, chal, env, &stream);
                if (reference < 0) reference = bit;
                if (bit != reference) return false;
            }
        }
        return true;
    };
}

namespace detail {

/// Pair ranks ordered by descending |delta|, ties by pair order. Determines
/// the walk order of the threshold search.
inline std::vector<std::uint32_t> sort_by_abs_delta(const std::vector<double>& sums, const CrpSet& crps) {
    std::vector<double> absd(crps.pairs.size());
    for (std::size_t k = 0; k < crps.pairs.size(); ++k) absd[k] = std::abs(pair_delta(sums, crps.pairs[k]));
    std::vector<std::uint32_t> order(crps.pairs.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t lhs, std::uint32_t rhs) { return absd[lhs] > absd[rhs]; });
    return order;
}

}  // namespace detail

/// Reliability-threshold search: walk all CRPs in descending |path-sum
/// difference| order and stop at the first challenge the probe reports
/// unstable; the threshold is that difference scaled by margin_factor so
/// every accepted challenge keeps real headroom. If nothing is unstable the
/// minimum nonzero |difference| is returned unscaled.
inline Threshold compute_threshold(const PredictedDelayMatrix& model, const CrpSet& crps,
                                   const StabilityProbe& stable, const ProbeConfig& probe_cfg,
                                   double margin_factor = 1.5) {
    if (crps.pairs.empty()) throw ParamError("empty CRP set");
    if (!(margin_factor >= 1.0)) throw ParamError("margin_factor must be at least 1");
    const int n = model.entries.n, m = model.entries.m;
    std::vector<double> sums = all_path_sums(model.entries);
    std::vector<std::uint32_t> order = detail::sort_by_abs_delta(sums, crps);

    Threshold t;
    t.margin_factor = margin_factor;
    t.probe = probe_cfg;
    t.pairs_considered = crps.pairs.size();
    t.sampled_pairs = crps.sampled;

    for (std::uint32_t rank = 0; rank < order.size(); ++rank) {
        const PathPair& pair = crps.pairs[order[rank]];
        double delta = std::abs(pair_delta(sums, pair));
        if (delta == 0.0) break;  // remaining pairs are all ties
        Challenge chal = challenge_for_pair(pair, n, m);
        if (!stable(rank, chal)) {
            t.trigger_delta = delta;
            t.value = delta * margin_factor;
            return t;
        }
    }

    // nothing unstable: fall back to the smallest nonzero separation
    double min_nonzero = 0.0;
    for (const auto& pair : crps.pairs) {
        double d = std::abs(pair_delta(sums, pair));
        if (d > 0.0 && (min_nonzero == 0.0 || d < min_nonzero)) min_nonzero = d;
    }
    if (min_nonzero == 0.0) throw DataError("all path-sum differences are zero; no usable threshold");
    t.value = min_nonzero;
    t.trigger_delta = min_nonzero;
    t.degenerate = true;
    return t;
}

namespace detail {

/// Device-backed threshold search in one pass, bit-identical in outcome to
/// compute_threshold with device_stability_probe. Uses per-temperature path
/// sums and skips jitter simulation for pairs whose separation no 12-sigma
/// noise excursion could flip.
inline Threshold compute_threshold_fast(const PredictedDelayMatrix& model, const PufInstance& device,
                                        const CrpSet& crps, const ProbeConfig& probe_cfg,
                                        double margin_factor, const Rng& base) {
    if (crps.pairs.empty()) throw ParamError("empty CRP set");
    std::vector<double> sums = all_path_sums(model.entries);
    std::vector<std::uint32_t> order = sort_by_abs_delta(sums, crps);

    std::vector<std::vector<double>> temp_sums;
    temp_sums.reserve(probe_cfg.temperatures.size());
    for (double t : probe_cfg.temperatures)
        temp_sums.push_back(all_path_sums(effective_matrix(device, EnvCondition{t})));
    double jitter = device.params().jitter_sigma_rel;

    Threshold out;
    out.margin_factor = margin_factor;
    out.probe = probe_cfg;
    out.pairs_considered = crps.pairs.size();
    out.sampled_pairs = crps.sampled;

    for (std::uint32_t rank = 0; rank < order.size(); ++rank) {
        const PathPair& pair = crps.pairs[order[rank]];
        double delta = std::abs(pair_delta(sums, pair));
        if (delta == 0.0) break;

        bool sign_flip = false, near_noise = false;
        int reference_sign = 0;
        for (const auto& ts : temp_sums) {
            double d1 = ts[pair.first], d2 = ts[pair.second];
            double diff = d1 - d2;
            int sign = diff > 0 ? 1 : (diff < 0 ? -1 : 0);
            if (reference_sign == 0) reference_sign = sign;
            if (sign == 0 || sign != reference_sign) sign_flip = true;
            if (std::abs(diff) <= 12.0 * jitter * std::max(d1, d2) * 1.4142135623730951) near_noise = true;
        }
        bool stable;
        if (sign_flip) {
            stable = false;
        } else if (!near_noise) {
            stable = true;  // beyond any realizable jitter excursion
        } else {
            Rng stream = base.fork(rank);
            stable = true;
            int reference = -1;
            for (const auto& ts : temp_sums) {
                double d1 = ts[pair.first], d2 = ts[pair.second];
                for (int r = 0; r < probe_cfg.repeats && stable; ++r) {
                    double m1 = measured_delay(d1, jitter, &stream);
                    double m2 = measured_delay(d2, jitter, &stream);
                    int bit = m1 > m2 ? 1 : 0;
                    if (reference < 0) reference = bit;
                    if (bit != reference) stable = false;
                }
                if (!stable) break;
            }
        }
        if (!stable) {
            out.trigger_delta = delta;
            out.value = delta * margin_factor;
            return out;
        }
    }

    double min_nonzero = 0.0;
    for (const auto& pair : crps.pairs) {
        double d = std::abs(pair_delta(sums, pair));
        if (d > 0.0 && (min_nonzero == 0.0 || d < min_nonzero)) min_nonzero = d;
    }
    if (min_nonzero == 0.0) throw DataError("all path-sum differences are zero; no usable threshold");
    out.value = min_nonzero;
    out.trigger_delta = min_nonzero;
    out.degenerate = true;
    return out;
}

}  // namespace detail

/// Device-probed threshold (the common case): sweeps the device itself.
inline Threshold compute_threshold(const PredictedDelayMatrix& model, const PufInstance& device,
                                   const CrpSet& crps, const ProbeConfig& probe_cfg = {},
                                   double margin_factor = 1.5, std::uint64_t probe_seed = 0x50524f42) {
    if (!(margin_factor >= 1.0)) throw ParamError("margin_factor must be at least 1");
    return detail::compute_threshold_fast(model, device, crps, probe_cfg, margin_factor, Rng(probe_seed));
}

/// Challenge generation for a target key: for each bit draw random
/// column-disjoint path pairs until the signed difference clears the
/// threshold in the bit's direction (positive for 1, negative for 0), then
/// emit the canonical challenge for that ordered pair.
///
/// Low-COS models can defeat blind rejection sampling (a device whose
/// qualifying CRPs are a sub-percent sliver of the pair space exhausts any
/// fixed draw budget with real probability), so once the budget runs out the
/// qualifying pair set is enumerated and drawn from directly. Conditioned on
/// acceptance these are the same distribution; the error remains only for
/// keys that are genuinely unsatisfiable.
inline KeyChallenges generate_challenges(const PredictedDelayMatrix& model, const Threshold& t,
                                         const SharedKey& key, Rng& rng, int max_attempts_per_bit = 10000) {
    if (key.bits.empty()) throw ParamError("key must be nonempty");
    const int n = model.entries.n, m = model.entries.m;
    std::vector<double> sums = all_path_sums(model.entries);
    std::uint64_t total = path_count(n, m);

    // unordered qualifying pairs, oriented larger-sum first; built lazily
    std::vector<PathPair> qualifying;
    bool fallback = false;
    auto build_qualifying = [&] {
        CrpSet crps = enumerate_crps(n, m);
        for (const auto& pair : crps.pairs) {
            double diff = pair_delta(sums, pair);
            if (diff > t.value)
                qualifying.push_back(pair);
            else if (-diff > t.value)
                qualifying.push_back({pair.second, pair.first});
        }
        fallback = true;
    };

    KeyChallenges out;
    out.per_bit.reserve(key.bits.size());
    for (std::size_t bit_index = 0; bit_index < key.bits.size(); ++bit_index) {
        int want = key.bits[bit_index];
        bool found = false;
        if (!fallback) {
            for (int attempt = 0; attempt < max_attempts_per_bit; ++attempt) {
                std::uint64_t i = rng.below(total);
                std::uint64_t j = rng.below(total);
                if (i == j) continue;
                PathConfig p1 = path_from_index(i, n, m);
                PathConfig p2 = path_from_index(j, n, m);
                if (!column_disjoint(p1, p2)) continue;
                double diff = sums[i] - sums[j];
                if ((want == 1 && diff > t.value) || (want == 0 && diff < -t.value)) {
                    out.per_bit.push_back(config_for_paths(p1, p2, n));
                    found = true;
                    break;
                }
            }
            if (!found) build_qualifying();
        }
        if (!found && fallback) {
            if (qualifying.empty()) throw KeyUnsatisfiableError(bit_index, static_cast<std::size_t>(max_attempts_per_bit));
            const PathPair& pair = qualifying[rng.below(qualifying.size())];
            PathConfig slower = path_from_index(pair.first, n, m);
            PathConfig faster = path_from_index(pair.second, n, m);
            out.per_bit.push_back(want == 1 ? config_for_paths(slower, faster, n)
                                            : config_for_paths(faster, slower, n));
            found = true;
        }
        if (!found) throw KeyUnsatisfiableError(bit_index, static_cast<std::size_t>(max_attempts_per_bit));
    }
    return out;
}

/// Eq.-style stabilization coefficient over the CRP set: the fraction of
/// pairs whose |path-sum difference| strictly exceeds the threshold.
inline CosReport cos_report(const PredictedDelayMatrix& model, const Threshold& t, const CrpSet& crps) {
    std::vector<double> sums = all_path_sums(model.entries);
    CosReport rep;
    rep.r_total = crps.pairs.size();
    for (const auto& pair : crps.pairs)
        if (std::abs(pair_delta(sums, pair)) > t.value) ++rep.r_reliable;
    return rep;
}

struct SoundnessReport {
    std::uint64_t pairs_above = 0;  ///< CRPs with |delta| strictly above the threshold
    std::uint64_t violations = 0;   ///< of those, how many answered unstably under a fresh probe
};

/// Re-probes every CRP above the threshold with fresh randomness and counts
/// stability violations; a sound threshold reports zero. Skips jitter
/// simulation where no 12-sigma excursion could flip the comparison, exactly
/// like the walk itself.
inline SoundnessReport verify_threshold_soundness(const PredictedDelayMatrix& model, const PufInstance& device,
                                                  const CrpSet& crps, const Threshold& t, const Rng& base) {
    std::vector<double> sums = all_path_sums(model.entries);
    std::vector<std::vector<double>> temp_sums;
    for (double temp : t.probe.temperatures)
        temp_sums.push_back(all_path_sums(effective_matrix(device, EnvCondition{temp})));
    double jitter = device.params().jitter_sigma_rel;

    SoundnessReport rep;
    for (std::uint32_t k = 0; k < crps.pairs.size(); ++k) {
        const PathPair& pair = crps.pairs[k];
        if (!(std::abs(pair_delta(sums, pair)) > t.value)) continue;
        ++rep.pairs_above;

        bool sign_flip = false, near_noise = false;
        int reference_sign = 0;
        for (const auto& ts : temp_sums) {
            double diff = ts[pair.first] - ts[pair.second];
            int sign = diff > 0 ? 1 : (diff < 0 ? -1 : 0);
            if (reference_sign == 0) reference_sign = sign;
            if (sign == 0 || sign != reference_sign) sign_flip = true;
            if (std::abs(diff) <= 12.0 * jitter * std::max(ts[pair.first], ts[pair.second]) * 1.4142135623730951)
                near_noise = true;
        }
        if (sign_flip) {
            ++rep.violations;
            continue;
        }
        if (!near_noise) continue;
        Rng stream = base.fork(k);
        int reference = -1;
        bool stable = true;
        for (const auto& ts : temp_sums) {
            for (int r = 0; r < t.probe.repeats && stable; ++r) {
                double m1 = detail::measured_delay(ts[pair.first], jitter, &stream);
                double m2 = detail::measured_delay(ts[pair.second], jitter, &stream);
                int bit = m1 > m2 ? 1 : 0;
                if (reference < 0) reference = bit;
                if (bit != reference) stable = false;
            }
            if (!stable) break;
        }
        if (!stable) ++rep.violations;
    }
    return rep;
}

/// Replays the per-bit challenges on a device. Works after fuse burn;
/// responses are not fuse-protected. Pass a null rng for exact zero-jitter
/// measurement.
inline SharedKey derive_key(const PufInstance& device, const KeyChallenges& kc, const EnvCondition& env,
                            Rng* rng = nullptr) {
    if (kc.per_bit.empty()) throw ParamError("no challenges to derive from");
    SharedKey key;
    key.bits.reserve(kc.per_bit.size());
    for (const auto& chal : kc.per_bit)
        key.bits.push_back(static_cast<std::uint8_t>(respond(device, chal, env, rng)));
    return key;
}

}  // namespace cropuf
