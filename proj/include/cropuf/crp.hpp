#pragma once

#include <cstdint>
#include <vector>

#include "cropuf/errors.hpp"
#include "cropuf/path.hpp"
#include "cropuf/rng.hpp"

namespace cropuf {

/// One CRP: an unordered pair of column-disjoint paths, stored as
/// lexicographic path indices with first < second.
struct PathPair {
    std::uint32_t first = 0;
    std::uint32_t second = 0;

    friend bool operator==(const PathPair&, const PathPair&) = default;
};

/// How the CRP space is enumerated. Exhaustive while the unordered
/// column-disjoint pair count stays within the cap, uniform sampling above.
struct PairPolicy {
    std::uint64_t exhaustive_cap = 10'000'000;
    std::size_t sample_size = 200'000;
    std::uint64_t seed = 0;
};

struct CrpSet {
    int n = 0;
    int m = 0;
    std::vector<PathPair> pairs;
    std::uint64_t population = 0;  ///< total unordered column-disjoint pairs
    bool sampled = false;
};

/// Number of unordered column-disjoint path pairs: n^m * (n-1)^m / 2.
inline std::uint64_t disjoint_pair_count(int n, int m) {
    std::uint64_t total = path_count(n, m);
    std::uint64_t partners = 1;
    for (int j = 0; j < m; ++j) partners *= static_cast<std::uint64_t>(n - 1);
    return total * partners / 2;
}

namespace detail {

inline std::vector<std::uint8_t> path_digits_table(int n, int m) {
    std::uint64_t total = path_count(n, m);
    std::vector<std::uint8_t> digits(total * static_cast<std::uint64_t>(m));
    PathEnumerator it(n, m);
    for (std::uint64_t k = 0; k < total; ++k) {
        const PathConfig& p = it.next();
        for (int j = 0; j < m; ++j) digits[k * m + j] = static_cast<std::uint8_t>(p.rows[j]);
    }
    return digits;
}

inline bool digits_disjoint(const std::uint8_t* a, const std::uint8_t* b, int m) {
    for (int j = 0; j < m; ++j)
        if (a[j] == b[j]) return false;
    return true;
}

}  // namespace detail

/// Materializes the CRP set under the policy. Deterministic: the exhaustive
/// listing is in (first, second) lexicographic order; sampling uses the
/// policy seed.
inline CrpSet enumerate_crps(int n, int m, const PairPolicy& policy = {}) {
    CrpSet out;
    out.n = n;
    out.m = m;
    out.population = disjoint_pair_count(n, m);
    std::uint64_t total = path_count(n, m);
    auto digits = detail::path_digits_table(n, m);

    if (out.population <= policy.exhaustive_cap) {
        out.pairs.reserve(out.population);
        for (std::uint64_t i = 0; i < total; ++i) {
            const std::uint8_t* di = digits.data() + i * m;
            for (std::uint64_t j = i + 1; j < total; ++j) {
                if (detail::digits_disjoint(di, digits.data() + j * m, m))
                    out.pairs.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)});
            }
        }
        return out;
    }

    out.sampled = true;
    out.pairs.reserve(policy.sample_size);
    Rng rng = Rng(policy.seed).fork(0x43525053);  // dedicated CRP-sampling stream
    while (out.pairs.size() < policy.sample_size) {
        std::uint64_t i = rng.below(total);
        std::uint64_t j = rng.below(total);
        if (i == j) continue;
        if (!detail::digits_disjoint(digits.data() + i * m, digits.data() + j * m, m)) continue;
        if (i > j) std::swap(i, j);
        out.pairs.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)});
    }
    return out;
}

/// Signed path-sum difference of a pair, first minus second.
inline double pair_delta(const std::vector<double>& sums, const PathPair& p) {
    return sums[p.first] - sums[p.second];
}

/// The challenge realizing a pair (first path compared first).
inline Challenge challenge_for_pair(const PathPair& p, int n, int m) {
    return config_for_paths(path_from_index(p.first, n, m), path_from_index(p.second, n, m), n);
}

}  // namespace cropuf
