#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

#include "cropuf/crp.hpp"
#include "cropuf/device.hpp"
#include "cropuf/errors.hpp"
#include "cropuf/grid.hpp"

namespace cropuf {

/// Counter readings harvested from one device, in the order requested.
/// `window` is the counter window under which the readings were taken; it is
/// not part of the CSV interchange format and defaults to 1.
struct ReadingDataset {
    int n = 0;
    int m = 0;
    double window = 1.0;
    std::vector<CounterReading> samples;
};

/// The fitted delay matrix. Entries live in the minimum-norm gauge: per
/// stage-column shifts are unobservable (every path crosses each column
/// exactly once), so only path sums are comparable between models.
struct PredictedDelayMatrix {
    Grid entries;
    double residual_rms = 0.0;
    std::string gauge_note = "min-norm gauge; entries identifiable up to per-column shifts";
};

struct FitOptions {
    enum class Method { LeastSquares, GradientDescent };
    Method method = Method::LeastSquares;
    int gd_iterations = 4000;
    double gd_learning_rate = 0.0;   ///< 0 = auto: 1 / (upper bound of lambda_max)
    double rank_tolerance = 1e-10;   ///< relative eigenvalue cutoff
};

/// Takes `repeats` counter readings per path and averages them into one
/// sample. The device rng is forked per path position, so the result is
/// independent of any parallel schedule.
inline ReadingDataset harvest(const PufInstance& device, const std::vector<PathConfig>& paths,
                              const EnvCondition& env, int repeats, Rng& rng) {
    if (!device.fuse_intact()) throw FuseBurnedError();
    if (repeats < 1) throw ParamError("repeats must be at least 1");
    ReadingDataset data;
    data.n = device.n();
    data.m = device.m();
    data.window = device.params().counter_window;
    data.samples.reserve(paths.size());
    for (std::size_t k = 0; k < paths.size(); ++k) {
        Rng stream = rng.fork(k);
        double acc = 0.0;
        for (int r = 0; r < repeats; ++r) acc += counter_reading(device, paths[k], env, stream).counts;
        data.samples.push_back({paths[k], acc / repeats, env});
    }
    return data;
}

namespace detail {

/// Pseudo-inverse of the normal matrix for the full lexicographic path
/// enumeration, cached per (n, m). The normal matrix has closed structure:
/// diag = n^(m-1), same-column off-diagonal = 0, cross-column = n^(m-2).
class FullEnumSolver {
public:
    static const FullEnumSolver& get(int n, int m) {
        static std::mutex mu;
        static std::map<std::pair<int, int>, std::unique_ptr<FullEnumSolver>> cache;
        std::lock_guard<std::mutex> lock(mu);
        auto& slot = cache[{n, m}];
        if (!slot) slot.reset(new FullEnumSolver(n, m));
        return *slot;
    }

    /// Minimum-norm solution of G x = c.
    Eigen::VectorXd solve(const Eigen::VectorXd& c) const { return pinv_ * c; }

private:
    FullEnumSolver(int n, int m) {
        int p = n * m;
        double diag = std::pow(static_cast<double>(n), m - 1);
        double cross = std::pow(static_cast<double>(n), m - 2);
        Eigen::MatrixXd g(p, p);
        for (int r = 0; r < p; ++r) {
            for (int s = 0; s < p; ++s) {
                if (r == s)
                    g(r, s) = diag;
                else if (r % m == s % m)  // same stage column, different row
                    g(r, s) = 0.0;
                else
                    g(r, s) = cross;
            }
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
        const auto& vals = es.eigenvalues();
        const auto& vecs = es.eigenvectors();
        double cutoff = vals(p - 1) * 1e-10;
        Eigen::VectorXd inv = Eigen::VectorXd::Zero(p);
        for (int k = 0; k < p; ++k)
            if (vals(k) > cutoff) inv(k) = 1.0 / vals(k);
        pinv_ = vecs * inv.asDiagonal() * vecs.transpose();
    }

    Eigen::MatrixXd pinv_;
};

inline bool is_full_lex_enumeration(const ReadingDataset& data) {
    std::uint64_t total = path_count(data.n, data.m);
    if (data.samples.size() != total) return false;
    PathEnumerator it(data.n, data.m);
    for (const auto& s : data.samples)
        if (!(s.path == it.next())) return false;
    return true;
}

inline Grid vector_to_grid(const Eigen::VectorXd& x, int n, int m) {
    Grid g(n, m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) g.at(i, j) = x(i * m + j);
    return g;
}

inline double dataset_residual_rms(const ReadingDataset& data, const Grid& entries) {
    double acc = 0.0;
    for (const auto& s : data.samples) {
        double r = data.window / s.counts - path_sum(entries, s.path);
        acc += r * r;
    }
    return std::sqrt(acc / static_cast<double>(data.samples.size()));
}

}  // namespace detail

/// Fits the delay matrix from counter readings by solving the linear system
/// sum_j W[path.rows[j]][j] = window / counts in least squares, returning
/// the minimum-norm solution (which fixes the per-column gauge
/// deterministically). Rank deficiency beyond the known (m-1)-dimensional
/// column-shift null space raises UnderdeterminedError.
inline PredictedDelayMatrix fit_delay_matrix(const ReadingDataset& data, const FitOptions& opts = {}) {
    if (data.samples.empty()) throw DataError("empty dataset");
    if (data.n <= 0 || data.m <= 0) throw DimensionError("dataset dimensions unset");
    const int n = data.n, m = data.m, p = n * m;

    std::vector<int> coverage(p, 0);
    for (const auto& s : data.samples) {
        validate_path(s.path, n, m);
        if (!(s.counts > 0.0) || !std::isfinite(s.counts)) throw DataError("counts must be positive and finite");
        for (int j = 0; j < m; ++j) ++coverage[s.path.rows[j] * m + j];
    }
    for (int cell = 0; cell < p; ++cell)
        if (coverage[cell] == 0)
            throw UnderdeterminedError("cell (" + std::to_string(cell / m) + "," + std::to_string(cell % m) +
                                       ") appears in no sampled path");

    Eigen::VectorXd c = Eigen::VectorXd::Zero(p);
    for (const auto& s : data.samples) {
        double y = data.window / s.counts;
        for (int j = 0; j < m; ++j) c(s.path.rows[j] * m + j) += y;
    }

    PredictedDelayMatrix out;
    if (opts.method == FitOptions::Method::LeastSquares && detail::is_full_lex_enumeration(data)) {
        // fixed design matrix: use the cached pseudo-inverse
        Eigen::VectorXd x = detail::FullEnumSolver::get(n, m).solve(c);
        out.entries = detail::vector_to_grid(x, n, m);
        out.residual_rms = detail::dataset_residual_rms(data, out.entries);
        return out;
    }

    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p, p);
    for (const auto& s : data.samples) {
        for (int j = 0; j < m; ++j) {
            int cj = s.path.rows[j] * m + j;
            for (int k = 0; k < m; ++k) g(cj, s.path.rows[k] * m + k) += 1.0;
        }
    }

    Eigen::VectorXd x;
    if (opts.method == FitOptions::Method::LeastSquares) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
        const auto& vals = es.eigenvalues();
        const auto& vecs = es.eigenvectors();
        double cutoff = std::max(vals(p - 1), 0.0) * opts.rank_tolerance;
        int null_dim = 0;
        for (int k = 0; k < p; ++k)
            if (!(vals(k) > cutoff)) ++null_dim;
        if (null_dim > m - 1)
            throw UnderdeterminedError("system rank-deficient beyond the " + std::to_string(m - 1) +
                                       "-dimensional column-shift gauge (null dimension " +
                                       std::to_string(null_dim) + ")");
        Eigen::VectorXd inv = Eigen::VectorXd::Zero(p);
        for (int k = 0; k < p; ++k)
            if (vals(k) > cutoff) inv(k) = 1.0 / vals(k);
        x = vecs * (inv.asDiagonal() * (vecs.transpose() * c));
    } else {
        // gradient descent on the same objective; starting from zero keeps the
        // iterates orthogonal to the gauge null space, so the limit is the
        // minimum-norm solution
        double lr = opts.gd_learning_rate;
        if (lr <= 0.0) {
            double bound = g.cwiseAbs().rowwise().sum().maxCoeff();
            lr = 1.0 / bound;
        }
        x = Eigen::VectorXd::Zero(p);
        for (int it = 0; it < opts.gd_iterations; ++it) x -= lr * (g * x - c);
    }

    out.entries = detail::vector_to_grid(x, n, m);
    out.residual_rms = detail::dataset_residual_rms(data, out.entries);
    return out;
}

/// Noiseless fast path: the exact linear solve fed directly with true path
/// sums, skipping counter simulation. Identical to fitting a zero-jitter
/// full-enumeration harvest.
inline PredictedDelayMatrix fit_noiseless(const PufInstance& device, const EnvCondition& env = {}) {
    const int n = device.n(), m = device.m(), p = n * m;
    DelayMatrix eff = effective_matrix(device, env);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(p);
    PathEnumerator it(n, m);
    double crossing = device.params().crossing_delay * (m - 1);
    while (!it.done()) {
        const PathConfig& path = it.next();
        double y = path_sum(eff, path) + crossing;
        for (int j = 0; j < m; ++j) c(path.rows[j] * m + j) += y;
    }
    PredictedDelayMatrix out;
    out.entries = detail::vector_to_grid(detail::FullEnumSolver::get(n, m).solve(c), n, m);
    out.residual_rms = 0.0;
    return out;
}

/// Response bit predicted by a fitted model; same convention as the device
/// (1 iff the first loop's sum is larger). Gauge-invariant: column shifts
/// cancel in the path-sum difference.
inline int predict_response(const PredictedDelayMatrix& model, const Challenge& chal) {
    validate_challenge(chal, model.entries.n, model.entries.m);
    auto loops = loops_of_config(chal.config);
    return path_sum(model.entries, loops[chal.a]) > path_sum(model.entries, loops[chal.b]) ? 1 : 0;
}

/// Fraction of CRPs where the model predicts the device's zero-jitter
/// response at `env`.
inline double model_accuracy(const PredictedDelayMatrix& model, const PufInstance& device,
                             const CrpSet& crps, const EnvCondition& env = {}) {
    if (crps.pairs.empty()) throw ParamError("empty challenge set");
    if (model.entries.n != device.n() || model.entries.m != device.m())
        throw DimensionError("model and device dimensions differ");
    std::vector<double> model_sums = all_path_sums(model.entries);
    std::vector<double> dev_sums = all_path_sums(effective_matrix(device, env));
    std::uint64_t match = 0;
    for (const auto& pr : crps.pairs) {
        int predicted = pair_delta(model_sums, pr) > 0 ? 1 : 0;
        int actual = pair_delta(dev_sums, pr) > 0 ? 1 : 0;
        match += (predicted == actual);
    }
    return static_cast<double>(match) / static_cast<double>(crps.pairs.size());
}

/// Challenge-set overload; equivalent to the pair overload when the
/// challenges realize the pairs (tested against it).
inline double model_accuracy(const PredictedDelayMatrix& model, const PufInstance& device,
                             const std::vector<Challenge>& challenges, const EnvCondition& env = {}) {
    if (challenges.empty()) throw ParamError("empty challenge set");
    std::uint64_t match = 0;
    for (const auto& chal : challenges)
        match += (predict_response(model, chal) == respond(device, chal, env, nullptr));
    return static_cast<double>(match) / static_cast<double>(challenges.size());
}

}  // namespace cropuf
