#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cropuf/errors.hpp"
#include "cropuf/grid.hpp"
#include "cropuf/path.hpp"
#include "cropuf/rng.hpp"

namespace cropuf {

/// Ambient conditions for a measurement.
struct EnvCondition {
    double temperature = 25.0;  ///< degrees C

    friend bool operator==(const EnvCondition&, const EnvCondition&) = default;
};

/// Simulation parameters for sampling a device. Delays are in arbitrary
/// time units; the defaults give a realistic ~50% inter-device uniqueness
/// and a nontrivial unstable-CRP fraction under the temperature sweep.
struct PufParams {
    int n = 4;                      ///< oscillator rows, >= 3
    int m = 5;                      ///< inverter stages per row, odd, >= 5
    double nominal_delay = 100.0;   ///< mean per-inverter delay
    double sigma_process = 5.0;     ///< std-dev of static process variation
    double temp_ref = 25.0;         ///< reference temperature, degrees C
    double temp_coeff_mean = 0.0;   ///< mean linear sensitivity, fraction per degree C
    double temp_coeff_sigma = 2e-4; ///< std-dev of linear sensitivity
    double jitter_sigma_rel = 1e-3; ///< relative std-dev of per-reading counter noise
    double counter_window = 1.0;    ///< measurement window length
    double crossing_delay = 0.0;    ///< additive delay per interstage crossing
    bool integer_counts = false;    ///< truncate counter values to integers
    std::uint64_t seed = 0;

    friend bool operator==(const PufParams&, const PufParams&) = default;
};

inline void validate_params(const PufParams& p) {
    if (p.n < 3) throw ParamError("n must be at least 3");
    if (p.m < 5 || p.m % 2 == 0) throw ParamError("m must be odd and at least 5");
    if (!(p.nominal_delay > 0)) throw ParamError("nominal_delay must be positive");
    if (p.sigma_process < 0 || p.temp_coeff_sigma < 0 || p.jitter_sigma_rel < 0)
        throw ParamError("sigmas must be nonnegative");
    if (!(p.nominal_delay > 3 * p.sigma_process))
        throw ParamError("nominal_delay must exceed 3*sigma_process");
    if (!(p.counter_window > 0)) throw ParamError("counter_window must be positive");
    if (p.crossing_delay < 0) throw ParamError("crossing_delay must be nonnegative");
}

/// One counter measurement of a configured path.
struct CounterReading {
    PathConfig path;
    double counts = 0.0;
    EnvCondition env;

    friend bool operator==(const CounterReading&, const CounterReading&) = default;
};

/// A simulated CRO PUF device. The delay matrix is the device's physical
/// secret; it is immutable after creation. The only mutable state is the
/// one-way fuse protecting the counter read-out interface.
class PufInstance {
public:
    /// Builds a device from explicit grids. Dimension limits from PufParams
    /// do not apply here (hand-written matrices of any shape are allowed);
    /// entries must be strictly positive and grids must agree in shape.
    PufInstance(DelayMatrix delays, Grid temp_coeffs, PufParams params)
        : delays_(std::move(delays)), temp_coeffs_(std::move(temp_coeffs)), params_(std::move(params)) {
        validate_delay_matrix(delays_);
        if (!delays_.same_shape(temp_coeffs_)) throw DimensionError("delay and coefficient grids differ in shape");
        if (!temp_coeffs_.all_finite()) throw DataError("temperature coefficients must be finite");
        params_.n = delays_.n;
        params_.m = delays_.m;
    }

    /// Convenience: explicit delays, zero temperature coefficients.
    static PufInstance from_delays(DelayMatrix delays, PufParams params = {}) {
        Grid coeffs(delays.n, delays.m, 0.0);
        return PufInstance(std::move(delays), std::move(coeffs), std::move(params));
    }

    int n() const { return delays_.n; }
    int m() const { return delays_.m; }
    const DelayMatrix& delays() const { return delays_; }
    const Grid& temp_coeffs() const { return temp_coeffs_; }
    const PufParams& params() const { return params_; }

    bool fuse_intact() const { return fuse_intact_; }

    /// Permanently destroys the counter read-out interface. One-way.
    void burn_fuse() { fuse_intact_ = false; }

    /// For deserialization of already-burned devices.
    void set_fuse_state(bool intact) { fuse_intact_ = intact; }

private:
    DelayMatrix delays_;
    Grid temp_coeffs_;
    PufParams params_;
    bool fuse_intact_ = true;
};

/// Samples a device: per-inverter delays from N(nominal, sigma_process)
/// (resampled while non-positive) and linear temperature coefficients from
/// N(coeff_mean, coeff_sigma). Deterministic in params.seed.
inline PufInstance sample_puf(const PufParams& params) {
    validate_params(params);
    Rng rng(params.seed);
    DelayMatrix delays(params.n, params.m);
    for (double& v : delays.a) {
        do {
            v = rng.normal(params.nominal_delay, params.sigma_process);
        } while (!(v > 0.0));
    }
    Grid coeffs(params.n, params.m);
    for (double& v : coeffs.a) v = rng.normal(params.temp_coeff_mean, params.temp_coeff_sigma);
    return PufInstance(std::move(delays), std::move(coeffs), params);
}

/// Delay of one inverter at the given temperature:
/// d * (1 + coeff * (T - temp_ref)).
inline double effective_delay(const PufInstance& puf, int i, int j, const EnvCondition& env) {
    if (i < 0 || i >= puf.n() || j < 0 || j >= puf.m()) throw DimensionError("inverter index out of range");
    double d = puf.delays().at(i, j) *
               (1.0 + puf.temp_coeffs().at(i, j) * (env.temperature - puf.params().temp_ref));
    if (!(d > 0.0))
        throw EnvRangeError("effective delay non-positive at " + std::to_string(env.temperature) + " C");
    return d;
}

/// Total delay of a path: sum of the selected inverter delays plus the
/// configured per-crossing constant (zero by default).
inline double path_delay(const PufInstance& puf, const PathConfig& path, const EnvCondition& env) {
    validate_path(path, puf.n(), puf.m());
    double sum = 0.0;
    for (int j = 0; j < puf.m(); ++j) sum += effective_delay(puf, path.rows[j], j, env);
    return sum + puf.params().crossing_delay * (puf.m() - 1);
}

/// Effective delay matrix at a fixed temperature; useful for bulk work.
inline DelayMatrix effective_matrix(const PufInstance& puf, const EnvCondition& env) {
    DelayMatrix out(puf.n(), puf.m());
    for (int i = 0; i < puf.n(); ++i)
        for (int j = 0; j < puf.m(); ++j) out.at(i, j) = effective_delay(puf, i, j, env);
    return out;
}

/// Path sum over an explicit matrix (no device, no temperature model).
inline double path_sum(const Grid& g, const PathConfig& path) {
    validate_path(path, g.n, g.m);
    double sum = 0.0;
    for (int j = 0; j < g.m; ++j) sum += g.at(path.rows[j], j);
    return sum;
}

/// Sums for every path in lexicographic index order.
inline std::vector<double> all_path_sums(const Grid& g) {
    std::uint64_t total = path_count(g.n, g.m);
    std::vector<double> sums(total);
    PathEnumerator it(g.n, g.m);
    for (std::uint64_t k = 0; k < total; ++k) sums[k] = path_sum(g, it.next());
    return sums;
}

namespace detail {

/// One noisy delay measurement, sharing the counter's noise model:
/// counts = (window / delay) * (1 + eps) and the measured delay is
/// window / counts = delay / (1 + eps).
inline double measured_delay(double true_delay, double jitter_sigma_rel, Rng* rng) {
    if (rng == nullptr || jitter_sigma_rel <= 0.0) return true_delay;
    for (int attempt = 0; attempt < 8; ++attempt) {
        double eps = rng->normal(0.0, jitter_sigma_rel);
        if (1.0 + eps > 0.0) return true_delay / (1.0 + eps);
    }
    throw DataError("counter noise repeatedly produced non-positive counts");
}

}  // namespace detail

/// Reads the path's counter. Requires an intact fuse: this is the interface
/// that enrollment uses and that fuse burning destroys. counts =
/// (window / path_delay) * (1 + eps), eps ~ N(0, jitter_sigma_rel); with a
/// unit window and zero jitter this is exactly the reciprocal of the path
/// delay.
inline CounterReading counter_reading(const PufInstance& puf, const PathConfig& path,
                                      const EnvCondition& env, Rng& rng) {
    if (!puf.fuse_intact()) throw FuseBurnedError();
    double delay = path_delay(puf, path, env);
    double counts = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt) {
        double eps = puf.params().jitter_sigma_rel > 0 ? rng.normal(0.0, puf.params().jitter_sigma_rel) : 0.0;
        counts = (puf.params().counter_window / delay) * (1.0 + eps);
        if (puf.params().integer_counts) counts = std::floor(counts);
        if (counts > 0.0) return CounterReading{path, counts, env};
    }
    throw DataError("counter produced no positive reading");
}

/// Response bit of a challenge: 1 iff the first selected loop measures
/// slower (larger delay, lower frequency) than the second. Ties resolve to
/// 0. Works after fuse burn -- only raw counts are fuse-protected. Pass a
/// null rng for the exact zero-jitter bit.
inline int respond(const PufInstance& puf, const Challenge& chal, const EnvCondition& env,
                   Rng* rng = nullptr) {
    validate_challenge(chal, puf.n(), puf.m());
    auto loops = loops_of_config(chal.config);
    double da = path_delay(puf, loops[chal.a], env);
    double db = path_delay(puf, loops[chal.b], env);
    double sigma = puf.params().jitter_sigma_rel;
    da = detail::measured_delay(da, sigma, rng);
    db = detail::measured_delay(db, sigma, rng);
    return da > db ? 1 : 0;
}

}  // namespace cropuf
