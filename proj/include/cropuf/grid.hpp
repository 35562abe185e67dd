#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "cropuf/errors.hpp"

namespace cropuf {

/// Dense n-by-m matrix of doubles, row-major. Rows index the oscillator
/// lines, columns the inverter stages.
struct Grid {
    int n = 0;  ///< rows
    int m = 0;  ///< stages
    std::vector<double> a;

    Grid() = default;
    Grid(int n_, int m_, double fill = 0.0) : n(n_), m(m_), a(static_cast<std::size_t>(n_) * m_, fill) {
        if (n_ <= 0 || m_ <= 0) throw DimensionError("grid dimensions must be positive");
    }

    static Grid from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        Grid g(static_cast<int>(rows.size()), static_cast<int>(rows.begin()->size()));
        int i = 0;
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != g.m) throw DimensionError("ragged rows");
            int j = 0;
            for (double v : row) g.at(i, j++) = v;
            ++i;
        }
        return g;
    }

    double& at(int i, int j) { return a[static_cast<std::size_t>(i) * m + j]; }
    double at(int i, int j) const { return a[static_cast<std::size_t>(i) * m + j]; }

    bool same_shape(const Grid& other) const { return n == other.n && m == other.m; }

    bool all_finite() const {
        for (double v : a)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool all_positive() const {
        for (double v : a)
            if (!(v > 0.0)) return false;
        return true;
    }

    friend bool operator==(const Grid&, const Grid&) = default;
};

/// Per-inverter delay matrix; entries must be strictly positive.
using DelayMatrix = Grid;

inline void validate_delay_matrix(const DelayMatrix& d) {
    if (!d.all_finite() || !d.all_positive())
        throw DataError("delay matrix entries must be finite and strictly positive");
}

/// Adds shift[j] to every entry of column j. With shifts summing to zero this
/// is a pure gauge transformation: every path sum, and hence every response,
/// is unchanged.
inline Grid with_column_shifts(const Grid& g, const std::vector<double>& shifts) {
    if (static_cast<int>(shifts.size()) != g.m) throw DimensionError("one shift per column required");
    Grid out = g;
    for (int i = 0; i < g.n; ++i)
        for (int j = 0; j < g.m; ++j) out.at(i, j) += shifts[j];
    return out;
}

}  // namespace cropuf
