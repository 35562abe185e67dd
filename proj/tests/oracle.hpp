#pragma once

// Brute-force reference computations for the test suites. Everything here is
// recomputed from first principles on plain nested vectors, independent of
// the library's data structures and code paths, so library results can be
// checked against a second route.

#include <cstdint>
#include <vector>

namespace oracle {

/// Sum of the selected entry in each stage column.
inline double path_sum(const std::vector<std::vector<double>>& w, const std::vector<int>& rows) {
    double s = 0.0;
    for (std::size_t j = 0; j < rows.size(); ++j) s += w[static_cast<std::size_t>(rows[j])][j];
    return s;
}

/// Walks the n loops of a configuration by applying each transition in turn.
inline std::vector<std::vector<int>> loops(const std::vector<std::vector<int>>& perms, int n) {
    std::vector<std::vector<int>> out(static_cast<std::size_t>(n));
    for (int start = 0; start < n; ++start) {
        auto& rows = out[static_cast<std::size_t>(start)];
        rows.push_back(start);
        for (const auto& perm : perms) rows.push_back(perm[static_cast<std::size_t>(rows.back())]);
    }
    return out;
}

/// Response convention: 1 iff the first compared loop is slower.
inline int respond(const std::vector<std::vector<double>>& w, const std::vector<std::vector<int>>& perms,
                   int a, int b) {
    auto ls = loops(perms, static_cast<int>(w.size()));
    double da = path_sum(w, ls[static_cast<std::size_t>(a)]);
    double db = path_sum(w, ls[static_cast<std::size_t>(b)]);
    return da > db ? 1 : 0;
}

/// All row-index sequences of length m over n rows, lexicographic.
inline std::vector<std::vector<int>> all_paths(int n, int m) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(static_cast<std::size_t>(m), 0);
    for (;;) {
        out.push_back(cur);
        int j = m - 1;
        while (j >= 0 && ++cur[static_cast<std::size_t>(j)] == n) cur[static_cast<std::size_t>(j--)] = 0;
        if (j < 0) break;
    }
    return out;
}

inline bool disjoint(const std::vector<int>& p1, const std::vector<int>& p2) {
    for (std::size_t j = 0; j < p1.size(); ++j)
        if (p1[j] == p2[j]) return false;
    return true;
}

/// All permutations of {0..n-1} in lexicographic order.
inline std::vector<std::vector<int>> all_permutations(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    std::vector<std::vector<int>> out;
    do {
        out.push_back(p);
    } while (std::next_permutation(p.begin(), p.end()));
    return out;
}

}  // namespace oracle
