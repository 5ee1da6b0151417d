/**
 * @file simlab.hpp
 * @brief Simulation scenarios (clean, mean-shift contaminated, heavy-tailed),
 *        performance measures, and replicated experiment runs.
 */

#pragma once

#include "hyperopt.hpp"
#include "oracle.hpp"
#include "optimizer.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace maxassoc {

enum class Setting { low_dim, high_dim, runtime };

inline std::optional<Setting> parse_setting(const std::string& s) {
    if (s == "low_dim") return Setting::low_dim;
    if (s == "high_dim") return Setting::high_dim;
    if (s == "runtime") return Setting::runtime;
    return std::nullopt;
}

enum class Distribution { normal, t3 };

struct ScenarioConfig {
    Setting setting = Setting::low_dim;
    int runtime_q = 50;  // only used by the runtime setting
    int n = 100;
    double contamination_rate = 0.0;   // c_r in [0, 0.5]
    double contamination_shift = 0.0;  // c_s >= 0
    Distribution distribution = Distribution::normal;
    std::uint64_t seed = 1;
    int replicates = 1;

    void validate() const {
        if (contamination_rate < 0.0 || contamination_rate > 0.5)
            throw std::invalid_argument("ScenarioConfig: contamination rate must be in [0, 0.5]");
        if (contamination_shift < 0.0)
            throw std::invalid_argument("ScenarioConfig: contamination shift must be >= 0");
        if (n < 2 || replicates < 1)
            throw std::invalid_argument("ScenarioConfig: n >= 2 and replicates >= 1 required");
    }
};

struct MetricsReport {
    std::vector<double> theta_a, theta_b;      // radians per order
    std::vector<double> tpr_a, tnr_a;          // rates per order, a side
    std::vector<double> tpr_b, tnr_b;
    std::vector<double> association;
    std::vector<bool> converged;
    double runtime_seconds = 0.0;
    int replicate = 0;
    bool failed = false;
    std::string error;
};

// ---------------------------------------------------------------------------
// Scenario construction
// ---------------------------------------------------------------------------

namespace detail {

inline Matrix equicorrelated(Eigen::Index d, double off) {
    Matrix m = Matrix::Constant(d, d, off);
    m.diagonal().setOnes();
    return m;
}

}  // namespace detail

/// The exact block matrices of the simulation designs plus the analytic
/// truth. low_dim: identity blocks, Sxy = diag(0.9, 0.7, 0...). high_dim:
/// 0.9/0.7 equicorrelated 10x10 blocks with 0.9/0.5 constant Sxy blocks.
/// runtime(q): 0.8 blocks with p = 10.
inline std::pair<JointCovariance, TrueSolution> build_sigma(Setting setting, int runtime_q = 50) {
    JointCovariance sigma;
    switch (setting) {
        case Setting::low_dim: {
            sigma.cxx = Matrix::Identity(10, 10);
            sigma.cyy = Matrix::Identity(10, 10);
            sigma.cxy = Matrix::Zero(10, 10);
            sigma.cxy(0, 0) = 0.9;
            sigma.cxy(1, 1) = 0.7;
            break;
        }
        case Setting::high_dim: {
            Matrix sxx = Matrix::Identity(100, 100);
            sxx.topLeftCorner(10, 10) = detail::equicorrelated(10, 0.9);
            sxx.block(10, 10, 10, 10) = detail::equicorrelated(10, 0.7);
            Matrix sxy = Matrix::Zero(100, 100);
            sxy.topLeftCorner(10, 10).setConstant(0.9);
            sxy.block(10, 10, 10, 10).setConstant(0.5);
            sigma.cxx = sxx;
            sigma.cyy = sxx;
            sigma.cxy = sxy;
            break;
        }
        case Setting::runtime: {
            const Eigen::Index q = runtime_q;
            if (q < 10) throw std::invalid_argument("build_sigma: runtime setting needs q >= 10");
            sigma.cxx = detail::equicorrelated(10, 0.8);
            sigma.cyy = Matrix::Identity(q, q);
            sigma.cyy.topLeftCorner(10, 10) = detail::equicorrelated(10, 0.8);
            sigma.cxy = Matrix::Zero(10, q);
            sigma.cxy.topLeftCorner(10, 10).setConstant(0.8);
            break;
        }
    }
    const int orders = setting == Setting::runtime ? 1 : 2;
    TrueSolution truth = true_directions(sigma, orders);
    return {sigma, truth};
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

namespace detail {

/// Deterministic substream seed for (master seed, replicate index).
inline std::uint64_t substream_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

/// Draws n observations from the joint distribution and splits them into
/// the x and y data sets. t3 draws scale a normal vector by sqrt(3/chi2_3)
/// per observation (Sigma taken as the scale matrix).
inline std::pair<DataMatrix, DataMatrix> sample(const JointCovariance& sigma, int n,
                                                Distribution distribution, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
    const Matrix full = sigma.full();
    Eigen::LLT<Matrix> llt(full);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("sample: joint covariance is not positive definite");
    const Matrix L = llt.matrixL();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::chi_squared_distribution<double> chi2(3.0);
    const Eigen::Index d = full.rows();
    Matrix draws(n, d);
    Vector z(d);
    for (int i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) z(j) = normal(rng);
        Vector row = L * z;
        if (distribution == Distribution::t3) row *= std::sqrt(3.0 / chi2(rng));
        draws.row(i) = row.transpose();
    }
    DataMatrix x, y;
    x.values = draws.leftCols(sigma.p());
    y.values = draws.rightCols(sigma.q());
    return {x, y};
}

/// Replaces floor(rate * n) randomly chosen rows with draws from
/// N(shift * 1, Sigma). Row count stays fixed.
inline void contaminate(DataMatrix& x, DataMatrix& y, double rate, double shift,
                        const JointCovariance& sigma, std::uint64_t seed) {
    if (rate < 0.0 || rate > 0.5)
        throw std::invalid_argument("contaminate: rate must be in [0, 0.5]");
    const int n = static_cast<int>(x.rows());
    const int m = static_cast<int>(std::floor(rate * n));
    if (m == 0) return;

    std::mt19937_64 rng(seed);
    std::vector<int> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), 0);
    std::shuffle(rows.begin(), rows.end(), rng);

    const Matrix full = sigma.full();
    Eigen::LLT<Matrix> llt(full);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("contaminate: covariance factorization failed");
    const Matrix L = llt.matrixL();
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::Index d = full.rows();
    Vector z(d);
    for (int i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) z(j) = normal(rng);
        const Vector row = (L * z).array() + shift;
        x.values.row(rows[static_cast<std::size_t>(i)]) = row.head(sigma.p()).transpose();
        y.values.row(rows[static_cast<std::size_t>(i)]) = row.tail(sigma.q()).transpose();
    }
}

// ---------------------------------------------------------------------------
// Performance measures
// ---------------------------------------------------------------------------

/// Sign-folded angle arccos(|cos|) in [0, pi/2]; directions are defined up
/// to sign.
inline double angle(const Vector& true_v, const Vector& est_v) {
    if (true_v.size() != est_v.size()) throw std::invalid_argument("angle: length mismatch");
    const double nt = true_v.norm(), ne = est_v.norm();
    if (nt == 0.0 || ne == 0.0)
        throw std::invalid_argument("angle: undefined for a zero vector");
    const double c = std::clamp(std::abs(true_v.dot(est_v)) / (nt * ne), 0.0, 1.0);
    return std::acos(c);
}

/// TPR over the truly nonzero coordinates, TNR over the truly zero ones.
/// Empty denominators yield rate 1.
inline std::pair<double, double> sparsity_rates(const Vector& true_v, const Vector& est_v,
                                                double zero_tol = 0.0) {
    if (true_v.size() != est_v.size())
        throw std::invalid_argument("sparsity_rates: length mismatch");
    int pos = 0, neg = 0, tp = 0, tn = 0;
    for (Eigen::Index i = 0; i < true_v.size(); ++i) {
        if (true_v(i) != 0.0) {
            ++pos;
            if (std::abs(est_v(i)) > zero_tol) ++tp;
        } else {
            ++neg;
            if (std::abs(est_v(i)) <= zero_tol) ++tn;
        }
    }
    const double tpr = pos == 0 ? 1.0 : static_cast<double>(tp) / pos;
    const double tnr = neg == 0 ? 1.0 : static_cast<double>(tn) / neg;
    return {tpr, tnr};
}

/// Mean of squared residuals ||a' x_j - b' y_j||^2 over test observations
/// and training replicates; the trimmed variant drops the largest
/// trim-fraction of squared residuals before averaging.
inline double residual_score(const std::vector<Vector>& a_list, const std::vector<Vector>& b_list,
                             const DataMatrix& test_x, const DataMatrix& test_y, double trim = 0.0) {
    if (a_list.empty() || a_list.size() != b_list.size())
        throw std::invalid_argument("residual_score: direction lists empty or mismatched");
    if (trim < 0.0 || trim >= 1.0)
        throw std::invalid_argument("residual_score: trim must be in [0, 1)");
    if (test_x.rows() == 0 || test_x.rows() != test_y.rows())
        throw std::invalid_argument("residual_score: empty or mismatched test set");
    std::vector<double> sq;
    for (std::size_t i = 0; i < a_list.size(); ++i) {
        const Vector rx = test_x.values * a_list[i];
        const Vector ry = test_y.values * b_list[i];
        for (Eigen::Index j = 0; j < rx.size(); ++j) {
            const double r = rx(j) - ry(j);
            sq.push_back(r * r);
        }
    }
    std::sort(sq.begin(), sq.end());
    const std::size_t keep = sq.size() - static_cast<std::size_t>(std::floor(trim * sq.size()));
    if (keep == 0) throw std::invalid_argument("residual_score: trimming removed all residuals");
    double sum = 0.0;
    for (std::size_t i = 0; i < keep; ++i) sum += sq[i];
    return sum / static_cast<double>(keep);
}

// ---------------------------------------------------------------------------
// Experiment loop
// ---------------------------------------------------------------------------

struct ScenarioRun {
    Estimator estimator = Estimator::pearson;
    int orders = 1;
    // fixed penalties per order; empty means hyperparameter search
    std::vector<std::pair<PenaltyConfig, PenaltyConfig>> pen_configs;
    std::optional<SearchSpace> hyperopt;
    OptimizerSettings settings;
    InitMode init_mode = InitMode::orthogonal;
    int threads = 1;
};

inline MetricsReport run_replicate(const ScenarioConfig& config, const ScenarioRun& run,
                                   const JointCovariance& sigma, const TrueSolution& truth,
                                   int replicate) {
    MetricsReport rep;
    rep.replicate = replicate;
    const std::uint64_t seed = detail::substream_seed(config.seed,
                                                      static_cast<std::uint64_t>(replicate));
    auto [x, y] = sample(sigma, config.n, config.distribution, seed);
    contaminate(x, y, config.contamination_rate, config.contamination_shift, sigma, seed ^ 0x5a5a5a5aULL);

    const bool rank_based =
        run.estimator == Estimator::spearman || run.estimator == Estimator::kendall;
    const auto t0 = std::chrono::steady_clock::now();
    const JointEstimate est = estimate_joint(x, y, run.estimator, rank_based);

    FitResult fit_res;
    if (run.hyperopt) {
        SearchSpace space = *run.hyperopt;
        space.seed = seed;
        fit_res = fit_with_hyperopt(est.blocks, run.orders, space, run.settings, run.init_mode).fit;
    } else {
        fit_res = fit(est.blocks, run.orders, run.pen_configs, run.settings, run.init_mode);
    }
    const auto t1 = std::chrono::steady_clock::now();
    rep.runtime_seconds = std::chrono::duration<double>(t1 - t0).count();

    for (int k = 0; k < run.orders; ++k) {
        const auto& dir = fit_res.directions[static_cast<std::size_t>(k)];
        const auto& ta = truth.a_vectors[static_cast<std::size_t>(k)];
        const auto& tb = truth.b_vectors[static_cast<std::size_t>(k)];
        rep.theta_a.push_back(angle(ta, dir.a));
        rep.theta_b.push_back(angle(tb, dir.b));
        auto [tpra, tnra] = sparsity_rates(ta, dir.a);
        auto [tprb, tnrb] = sparsity_rates(tb, dir.b);
        rep.tpr_a.push_back(tpra);
        rep.tnr_a.push_back(tnra);
        rep.tpr_b.push_back(tprb);
        rep.tnr_b.push_back(tnrb);
        rep.association.push_back(fit_res.associations[static_cast<std::size_t>(k)]);
        rep.converged.push_back(fit_res.diagnostics[static_cast<std::size_t>(k)].converged);
    }
    return rep;
}

/// Per replicate: generate, contaminate, estimate, fit, compare to truth.
/// Per-replicate failures are recorded in the report, not fatal. Replicates
/// run in parallel when run.threads > 1; substream seeding keeps parallel
/// and serial runs identical.
inline std::vector<MetricsReport> run_scenario(const ScenarioConfig& config,
                                               const ScenarioRun& run) {
    config.validate();
    auto [sigma, truth] = build_sigma(config.setting, config.runtime_q);
    std::vector<MetricsReport> reports(static_cast<std::size_t>(config.replicates));

    auto work = [&](int r) {
        try {
            reports[static_cast<std::size_t>(r)] = run_replicate(config, run, sigma, truth, r);
        } catch (const std::exception& e) {
            MetricsReport rep;
            rep.replicate = r;
            rep.failed = true;
            rep.error = e.what();
            reports[static_cast<std::size_t>(r)] = rep;
        }
    };

    const int nthreads = std::max(1, run.threads);
    if (nthreads == 1) {
        for (int r = 0; r < config.replicates; ++r) work(r);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int t = 0; t < nthreads; ++t)
            pool.emplace_back([&] {
                for (int r = next.fetch_add(1); r < config.replicates; r = next.fetch_add(1))
                    work(r);
            });
        for (auto& th : pool) th.join();
    }
    return reports;
}

// ---------------------------------------------------------------------------
// Aggregation and emission
// ---------------------------------------------------------------------------

struct Aggregate {
    double mean = 0.0;
    double stderr_ = 0.0;  // sample sd / sqrt(replicates)
    int count = 0;
};

inline Aggregate aggregate(const std::vector<double>& values) {
    Aggregate agg;
    agg.count = static_cast<int>(values.size());
    if (values.empty()) return agg;
    for (double v : values) agg.mean += v;
    agg.mean /= agg.count;
    if (agg.count > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - agg.mean) * (v - agg.mean);
        agg.stderr_ = std::sqrt(ss / (agg.count - 1)) / std::sqrt(static_cast<double>(agg.count));
    }
    return agg;
}

/// One CSV row per replicate x order.
inline void write_scenario_csv(std::ostream& out, const std::vector<MetricsReport>& reports) {
    out << "replicate,order,theta_a,theta_b,tpr_a,tnr_a,tpr_b,tnr_b,association,converged,"
           "runtime_seconds,failed\n";
    for (const auto& rep : reports) {
        if (rep.failed) {
            out << rep.replicate << ",NA,NA,NA,NA,NA,NA,NA,NA,NA,NA,1\n";
            continue;
        }
        for (std::size_t k = 0; k < rep.theta_a.size(); ++k) {
            out << rep.replicate << "," << (k + 1) << "," << rep.theta_a[k] << ","
                << rep.theta_b[k] << "," << rep.tpr_a[k] << "," << rep.tnr_a[k] << ","
                << rep.tpr_b[k] << "," << rep.tnr_b[k] << "," << rep.association[k] << ","
                << (rep.converged[k] ? 1 : 0) << "," << rep.runtime_seconds << ",0\n";
        }
    }
}

}  // namespace maxassoc
