#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "cropuf/errors.hpp"
#include "cropuf/rng.hpp"

namespace cropuf {

/// One delay path: a row index per stage. Equivalent to the binary selection
/// matrix with exactly one 1 per column.
struct PathConfig {
    std::vector<int> rows;

    int stages() const { return static_cast<int>(rows.size()); }
    friend bool operator==(const PathConfig&, const PathConfig&) = default;
};

inline void validate_path(const PathConfig& p, int n, int m) {
    if (p.stages() != m) throw DimensionError("path has wrong number of stages");
    for (int r : p.rows)
        if (r < 0 || r >= n) throw DimensionError("path row index out of range");
}

/// Interstage crossing configuration: m-1 permutations of the n rows.
/// perms[j] maps the row occupied after stage j to the row entering stage
/// j+1. The route from the last stage back to the first is implicit wiring
/// that closes each loop; it carries no delay and no stored permutation.
struct StageConfig {
    std::vector<std::vector<int>> perms;

    int stages() const { return static_cast<int>(perms.size()) + 1; }
    int rows() const { return perms.empty() ? 0 : static_cast<int>(perms[0].size()); }

    static StageConfig identity(int n, int m) {
        StageConfig s;
        s.perms.assign(m - 1, std::vector<int>(n));
        for (auto& p : s.perms)
            for (int i = 0; i < n; ++i) p[i] = i;
        return s;
    }

    friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

inline bool is_permutation_of_rows(const std::vector<int>& p, int n) {
    if (static_cast<int>(p.size()) != n) return false;
    std::vector<char> seen(n, 0);
    for (int v : p) {
        if (v < 0 || v >= n || seen[v]) return false;
        seen[v] = 1;
    }
    return true;
}

inline void validate_stage_config(const StageConfig& s, int n, int m) {
    if (s.stages() != m) throw DimensionError("stage config has wrong number of transitions");
    for (const auto& p : s.perms)
        if (!is_permutation_of_rows(p, n)) throw DataError("stage transition is not a permutation of the rows");
}

/// Whole-challenge input: a stage configuration plus the ordered pair of
/// loops (identified by start row) whose delays are compared for one bit.
struct Challenge {
    StageConfig config;
    int a = 0;
    int b = 1;

    friend bool operator==(const Challenge&, const Challenge&) = default;
};

inline void validate_challenge(const Challenge& c, int n, int m) {
    validate_stage_config(c.config, n, m);
    if (c.a == c.b || c.a < 0 || c.b < 0 || c.a >= n || c.b >= n)
        throw DataError("challenge must select two distinct loops");
}

/// Decomposes a stage configuration into its n loops. The loop starting at
/// row r occupies r, perms[0](r), perms[1](perms[0](r)), ...; the n loops
/// partition the n-by-m cell grid (each stage's rows are a permutation).
inline std::vector<PathConfig> loops_of_config(const StageConfig& s) {
    int n = s.rows();
    int m = s.stages();
    std::vector<PathConfig> loops(n);
    for (int r = 0; r < n; ++r) {
        auto& rows = loops[r].rows;
        rows.resize(m);
        rows[0] = r;
        for (int j = 1; j < m; ++j) rows[j] = s.perms[j - 1][rows[j - 1]];
    }
    return loops;
}

/// True when the two paths share no cell, i.e. occupy different rows at
/// every stage. Only such pairs can coexist as loops of one configuration.
inline bool column_disjoint(const PathConfig& p1, const PathConfig& p2) {
    if (p1.rows.size() != p2.rows.size()) return false;
    for (std::size_t j = 0; j < p1.rows.size(); ++j)
        if (p1.rows[j] == p2.rows[j]) return false;
    return true;
}

/// Builds the unique canonical challenge that realizes p1 and p2 as two of
/// its loops and compares them in order (p1 first). Each transition pins
/// p1.rows[j] -> p1.rows[j+1] and p2.rows[j] -> p2.rows[j+1]; the remaining
/// rows are assigned ascending source to smallest unused target, so the
/// construction is deterministic. loops_of_config on the result reproduces
/// p1 and p2 exactly.
inline Challenge config_for_paths(const PathConfig& p1, const PathConfig& p2, int n) {
    int m = p1.stages();
    if (p2.stages() != m) throw DimensionError("paths must have the same number of stages");
    for (int j = 0; j < m; ++j)
        if (p1.rows[j] == p2.rows[j])
            throw InfeasiblePairError("paths share a cell at stage " + std::to_string(j) +
                                      " and cannot coexist in one configuration");

    Challenge c;
    c.config.perms.assign(m - 1, std::vector<int>(n, -1));
    for (int j = 0; j + 1 < m; ++j) {
        auto& perm = c.config.perms[j];
        std::vector<char> used(n, 0);
        perm[p1.rows[j]] = p1.rows[j + 1];
        perm[p2.rows[j]] = p2.rows[j + 1];
        used[p1.rows[j + 1]] = 1;
        used[p2.rows[j + 1]] = 1;
        int target = 0;
        for (int src = 0; src < n; ++src) {
            if (perm[src] >= 0) continue;
            while (used[target]) ++target;
            perm[src] = target;
            used[target] = 1;
        }
    }
    c.a = p1.rows[0];
    c.b = p2.rows[0];
    return c;
}

// ---------------------------------------------------------------------------
// Path indexing. Paths are ranked lexicographically (first stage most
// significant), so index 0 is the all-zeros path and index n^m - 1 selects
// the last row at every stage. The compact index is what hot loops and the
// wire protocol carry.

inline std::uint64_t path_count(int n, int m) {
    std::uint64_t c = 1;
    for (int j = 0; j < m; ++j) {
        if (c > (std::uint64_t{1} << 40)) throw ParamError("path space too large to enumerate");
        c *= static_cast<std::uint64_t>(n);
    }
    return c;
}

inline std::uint64_t path_to_index(const PathConfig& p, int n) {
    std::uint64_t idx = 0;
    for (int r : p.rows) idx = idx * static_cast<std::uint64_t>(n) + static_cast<std::uint64_t>(r);
    return idx;
}

inline PathConfig path_from_index(std::uint64_t idx, int n, int m) {
    PathConfig p;
    p.rows.resize(m);
    for (int j = m - 1; j >= 0; --j) {
        p.rows[j] = static_cast<int>(idx % static_cast<std::uint64_t>(n));
        idx /= static_cast<std::uint64_t>(n);
    }
    return p;
}

/// Iterates all n^m paths in lexicographic order without materializing them.
class PathEnumerator {
public:
    PathEnumerator(int n, int m) : n_(n), total_(path_count(n, m)) { current_.rows.assign(m, 0); }

    bool done() const { return emitted_ == total_; }

    /// Returns the next path; call only while !done().
    const PathConfig& next() {
        if (emitted_ > 0) {
            for (int j = current_.stages() - 1; j >= 0; --j) {
                if (++current_.rows[j] < n_) break;
                current_.rows[j] = 0;
            }
        }
        ++emitted_;
        return current_;
    }

    std::uint64_t total() const { return total_; }

private:
    int n_;
    std::uint64_t total_;
    std::uint64_t emitted_ = 0;
    PathConfig current_;
};

/// Materializes the full lexicographic enumeration.
inline std::vector<PathConfig> enumerate_paths(int n, int m) {
    PathEnumerator it(n, m);
    std::vector<PathConfig> out;
    out.reserve(it.total());
    while (!it.done()) out.push_back(it.next());
    return out;
}

/// Uniformly random permutation of {0..n-1} (Fisher-Yates).
inline std::vector<int> random_permutation(int n, Rng& rng) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i)
        std::swap(p[i], p[static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1))]);
    return p;
}

/// Uniformly random stage configuration.
inline StageConfig random_stage_config(int n, int m, Rng& rng) {
    StageConfig s;
    s.perms.reserve(m - 1);
    for (int j = 0; j + 1 < m; ++j) s.perms.push_back(random_permutation(n, rng));
    return s;
}

/// Uniformly random challenge: random configuration plus a random ordered
/// pair of distinct loops.
inline Challenge random_challenge(int n, int m, Rng& rng) {
    Challenge c;
    c.config = random_stage_config(n, m, rng);
    c.a = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    c.b = static_cast<int>(rng.below(static_cast<std::uint64_t>(n) - 1));
    if (c.b >= c.a) ++c.b;
    return c;
}

}  // namespace cropuf
