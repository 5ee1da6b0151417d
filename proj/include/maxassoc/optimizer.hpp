/**
 * @file optimizer.hpp
 * @brief Method-of-multipliers outer loop with an AMSGrad inner minimizer,
 *        moving-average thresholding for exact sparsity, naive and
 *        orthogonal initialization, and sequential extraction of orders.
 */

#pragma once

#include "problem.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

namespace maxassoc {

struct OptimizerSettings {
    double eta1 = 0.9;          // first-moment decay
    double eta2 = 0.999;        // second-moment decay
    double alpha0 = 0.01;       // base learning rate
    double lr_decay = 0.0;      // optional 1/(1 + decay*i) schedule, off by default
    double delta_inner = 1e-6;  // inner gradient-norm tolerance
    double delta_outer = 1e-4;  // outer multiplier-change tolerance
    int window = 10;            // moving-average window M
    double c0 = 1.0;            // initial penalty strength
    double growth = 10.0;       // penalty growth factor
    double trigger = 0.25;      // residual-improvement ratio
    int max_inner = 5000;
    int max_outer = 100;
    double c_max = 1e8;
    double stall_tol = 1e-9;    // relative iterate-change stop for the inner loop
    double feas_tol = 1e-4;     // residual tolerance entering the converged flag
    bool threshold_each_inner = true;
    std::uint64_t seed = 42;    // only used for degenerate-start fallbacks

    void validate() const {
        if (eta1 <= 0.0 || eta1 >= 1.0 || eta2 <= 0.0 || eta2 >= 1.0)
            throw std::invalid_argument("OptimizerSettings: decay rates must be in (0, 1)");
        if (alpha0 <= 0.0 || delta_inner <= 0.0 || delta_outer <= 0.0)
            throw std::invalid_argument("OptimizerSettings: rates and tolerances must be positive");
        if (window < 1) throw std::invalid_argument("OptimizerSettings: window must be >= 1");
        if (growth <= 1.0) throw std::invalid_argument("OptimizerSettings: growth must exceed 1");
        if (trigger <= 0.0 || trigger >= 1.0)
            throw std::invalid_argument("OptimizerSettings: trigger must be in (0, 1)");
    }
};

struct AmsgradState {
    Vector m;
    Vector v;
    Vector v_hat;
    int iteration = 0;

    explicit AmsgradState(Eigen::Index dim)
        : m(Vector::Zero(dim)), v(Vector::Zero(dim)), v_hat(Vector::Zero(dim)) {}

    /// One update step; returns the applied step -alpha * m / sqrt(v_hat).
    Vector step(const Vector& g, double eta1, double eta2, double alpha) {
        ++iteration;
        m = eta1 * m + (1.0 - eta1) * g;
        v = eta2 * v + (1.0 - eta2) * g.cwiseProduct(g);
        v_hat = v_hat.cwiseMax(v);
        return -alpha * m.cwiseQuotient((v_hat.cwiseSqrt().array() + 1e-8).matrix());
    }
};

struct SolveDiagnostics {
    int outer_iterations = 0;
    int inner_iterations = 0;  // total across outer rounds
    double residual_norm = 0.0;   // final ||H||
    double max_violation = 0.0;   // max inequality violation / |equality residual|
    bool converged = false;
};

struct SolveResult {
    DirectionPair pair;
    MultiplierState mult;
    SolveDiagnostics diagnostics;
};

struct FitResult {
    std::vector<DirectionPair> directions;
    std::vector<double> associations;
    std::vector<MultiplierState> multipliers;
    std::vector<SolveDiagnostics> diagnostics;
    std::vector<std::pair<int, int>> nonzero_counts;
};

enum class InitMode { naive, orthogonal };

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Average contribution of each row/column of Cxy. A vanishing Cxy yields a
/// zero start with zero bilinear gradient, so it is replaced by the uniform
/// vector 1/sqrt(dim).
inline DirectionPair init_naive(const JointCovariance& cov, bool* degenerate = nullptr) {
    DirectionPair start;
    start.a = cov.cxy.rowwise().mean();
    start.b = cov.cxy.colwise().mean().transpose();
    if (start.a.norm() < 1e-14 || start.b.norm() < 1e-14) {
        if (degenerate) *degenerate = true;
        start.a = Vector::Constant(cov.p(), 1.0 / std::sqrt(static_cast<double>(cov.p())));
        start.b = Vector::Constant(cov.q(), 1.0 / std::sqrt(static_cast<double>(cov.q())));
    }
    return start;
}

namespace detail {

/// Gram-Schmidt with respect to the inner product induced by `c`.
inline Vector project_complement(const Vector& v, const Matrix& c, const std::vector<Vector>& prev) {
    Vector out = v;
    for (const auto& u : prev) {
        const double denom = u.dot(c * u);
        if (denom > 0.0) out -= (out.dot(c * u) / denom) * u;
    }
    return out;
}

}  // namespace detail

/// Projects the naive start onto the C-orthogonal complement of the previous
/// directions. A degenerate (near-zero) projection falls back to a seeded
/// random vector projected onto the same complement.
inline DirectionPair init_orthogonal(const JointCovariance& cov, const std::vector<Vector>& prev_a,
                                     const std::vector<Vector>& prev_b, const DirectionPair& naive,
                                     std::uint64_t seed = 42, bool* degenerate = nullptr) {
    if (prev_a.empty() || prev_b.empty())
        throw std::invalid_argument("init_orthogonal: previous directions required");
    DirectionPair start;
    start.a = detail::project_complement(naive.a, cov.cxx, prev_a);
    start.b = detail::project_complement(naive.b, cov.cyy, prev_b);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto fallback = [&](Vector& v, const Matrix& c, const std::vector<Vector>& prev,
                        double ref_norm) {
        if (v.norm() > 1e-10 * std::max(1.0, ref_norm)) return;
        if (degenerate) *degenerate = true;
        Vector r(v.size());
        for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = normal(rng);
        v = detail::project_complement(r, c, prev);
    };
    fallback(start.a, cov.cxx, prev_a, naive.a.norm());
    fallback(start.b, cov.cyy, prev_b, naive.b.norm());
    return start;
}

// ---------------------------------------------------------------------------
// Inner minimization
// ---------------------------------------------------------------------------

struct InnerResult {
    DirectionPair pair;
    std::deque<double> step_history_a;  // last M relative step sizes
    std::deque<double> step_history_b;
    int iterations = 0;
    double final_gradient_norm = 0.0;
};

/// AMSGrad on the joint (a, b) vector until the subgradient norm drops below
/// delta_inner, the relative iterate change stalls, or max_inner is reached.
inline InnerResult amsgrad_minimize(const MaxAssocProblem& problem, const MultiplierState& mult,
                                    const DirectionPair& start, const OptimizerSettings& settings) {
    settings.validate();
    problem.check_pair(start);
    const Eigen::Index p = problem.p(), q = problem.q();

    InnerResult res;
    res.pair = start;
    AmsgradState state(p + q);
    int stall_count = 0;

    for (int i = 0; i < settings.max_inner; ++i) {
        const DirectionPair g = al_subgradient(problem, res.pair, mult);
        Vector gv(p + q);
        gv.head(p) = g.a;
        gv.tail(q) = g.b;
        if (!gv.allFinite())
            throw std::runtime_error("amsgrad_minimize: non-finite gradient at iteration " +
                                     std::to_string(i));
        res.final_gradient_norm = gv.norm();
        if (res.final_gradient_norm <= settings.delta_inner) {
            res.iterations = i;
            return res;
        }
        const double lr = settings.lr_decay > 0.0
                              ? settings.alpha0 / (1.0 + settings.lr_decay * i)
                              : settings.alpha0;
        const Vector step = state.step(gv, settings.eta1, settings.eta2, lr);

        const double na = res.pair.a.norm(), nb = res.pair.b.norm();
        const double da = step.head(p).norm() / std::max(na, 1e-300);
        const double db = step.tail(q).norm() / std::max(nb, 1e-300);
        res.pair.a += step.head(p);
        res.pair.b += step.tail(q);
        res.iterations = i + 1;

        auto push = [&](std::deque<double>& hist, double d) {
            hist.push_back(d);
            if (static_cast<int>(hist.size()) > settings.window) hist.pop_front();
        };
        push(res.step_history_a, da);
        push(res.step_history_b, db);

        const double rel_change = step.norm() / std::max(1e-300, std::hypot(na, nb));
        stall_count = rel_change < settings.stall_tol ? stall_count + 1 : 0;
        if (stall_count >= settings.window) return res;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Thresholding
// ---------------------------------------------------------------------------

namespace detail {

/// Mean + 2 * population standard deviation of the step-size history.
inline double step_threshold(const std::deque<double>& hist) {
    if (hist.empty()) return 0.0;
    double mean = 0.0;
    for (double d : hist) mean += d;
    mean /= static_cast<double>(hist.size());
    double var = 0.0;
    for (double d : hist) var += (d - mean) * (d - mean);
    var /= static_cast<double>(hist.size());
    return mean + 2.0 * std::sqrt(var);
}

}  // namespace detail

/// Zeroes every coefficient whose magnitude is at or below the moving-average
/// step-size threshold of its side.
inline DirectionPair threshold(const DirectionPair& pair, const std::deque<double>& step_history_a,
                               const std::deque<double>& step_history_b, int window) {
    (void)window;  // histories already hold at most the last M entries
    const double ta = detail::step_threshold(step_history_a);
    const double tb = detail::step_threshold(step_history_b);
    DirectionPair out = pair;
    for (Eigen::Index i = 0; i < out.a.size(); ++i)
        if (std::abs(out.a(i)) <= ta) out.a(i) = 0.0;
    for (Eigen::Index i = 0; i < out.b.size(); ++i)
        if (std::abs(out.b(i)) <= tb) out.b(i) = 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Outer loop
// ---------------------------------------------------------------------------

namespace detail {

/// Rescale each side toward its variance sphere, but never past its penalty
/// budget. The elastic net is positively homogeneous, so the largest feasible
/// upscale is bound / P(u). When the budget is smaller than the minimum
/// penalty value on the sphere, the optimum has variance slack; inflating the
/// iterate all the way to variance 1 would make the penalty constraint
/// permanently infeasible and blow up the multipliers.
inline void renormalize(const MaxAssocProblem& problem, DirectionPair& pair) {
    auto rescale = [](Vector& u, double variance, const PenaltyConfig& pen) {
        if (variance <= 0.0) return;
        double s = 1.0 / std::sqrt(variance);
        if (s > 1.0) {
            const double p = elastic_net(u, pen);
            if (p > 0.0) s = std::min(s, std::max(1.0, pen.bound / p));
        }
        u *= s;
    };
    rescale(pair.a, pair.a.dot(problem.cov.cxx * pair.a), problem.pen_a);
    rescale(pair.b, pair.b.dot(problem.cov.cyy * pair.b), problem.pen_b);
}

inline double max_violation(const MaxAssocProblem& problem, const Vector& h) {
    double worst = 0.0;
    for (int i = 0; i < h.size(); ++i)
        worst = std::max(worst, problem.is_inequality(i) ? h(i) : std::abs(h(i)));
    return worst;
}

/// Largest-magnitude entry of a positive; flip b so the association is >= 0.
inline void fix_signs(const MaxAssocProblem& problem, DirectionPair& pair) {
    Eigen::Index imax = 0;
    pair.a.cwiseAbs().maxCoeff(&imax);
    if (pair.a(imax) < 0.0) pair.a = -pair.a;
    if (objective(problem, pair) < 0.0) pair.b = -pair.b;
}

}  // namespace detail

/// Method-of-multipliers outer loop: inner AMSGrad solve, thresholding,
/// renormalization to the variance constraint, multiplier update, and
/// penalty growth when the residual fails to shrink by the trigger ratio.
/// Non-convergence is a result state carrying the best iterate.
inline SolveResult mm_solve(const MaxAssocProblem& problem, const DirectionPair& start,
                            const OptimizerSettings& settings) {
    settings.validate();
    problem.validate();
    problem.check_pair(start);

    SolveResult res;
    res.pair = start;
    // keep the start on the variance manifold so the H-based multiplier
    // initialization does not produce huge variance multipliers
    detail::renormalize(problem, res.pair);
    res.mult.c = settings.c0;
    res.mult.lambda = update_multipliers(problem, Vector::Zero(problem.constraint_count()), 1.0,
                                         constraints(problem, res.pair));

    Vector h_prev = constraints(problem, res.pair);
    // best loop iterate seen, returned when the outer loop fails to converge
    DirectionPair best_pair = res.pair;
    double best_viol = std::numeric_limits<double>::infinity();
    double best_obj = 0.0;
    double best_residual = h_prev.norm();
    for (int t = 0; t < settings.max_outer; ++t) {
        InnerResult inner = amsgrad_minimize(problem, res.mult, res.pair, settings);
        res.diagnostics.inner_iterations += inner.iterations;
        res.pair = inner.pair;
        if (settings.threshold_each_inner || t == settings.max_outer - 1) {
            DirectionPair th = threshold(res.pair, inner.step_history_a, inner.step_history_b,
                                         settings.window);
            // an all-zero side would make the origin an absorbing stationary
            // point of the augmented Lagrangian; keep that side unthresholded
            if (th.a.norm() > 0.0) res.pair.a = th.a;
            if (th.b.norm() > 0.0) res.pair.b = th.b;
        }
        detail::renormalize(problem, res.pair);

        const Vector h = constraints(problem, res.pair);
        const Vector lambda_new = update_multipliers(problem, res.mult.lambda, res.mult.c, h);
        const double lambda_change = (lambda_new - res.mult.lambda).norm();
        res.mult.lambda = lambda_new;
        res.diagnostics.outer_iterations = t + 1;
        res.diagnostics.residual_norm = h.norm();
        res.diagnostics.max_violation = detail::max_violation(problem, h);

        const double obj = std::abs(objective(problem, res.pair));
        if (res.diagnostics.max_violation < best_viol - 1e-12 ||
            (res.diagnostics.max_violation <= best_viol + 1e-12 && obj > best_obj)) {
            best_pair = res.pair;
            best_viol = res.diagnostics.max_violation;
            best_obj = obj;
            best_residual = h.norm();
        }

        if (lambda_change <= settings.delta_outer &&
            res.diagnostics.max_violation <= settings.feas_tol) {
            res.diagnostics.converged = true;
            break;
        }
        if (settings.trigger * h_prev.norm() < h.norm()) {
            // residual is not shrinking; once c has saturated at c_max the
            // algorithm has no remaining lever, so stop instead of drifting
            if (res.mult.c >= settings.c_max) break;
            res.mult.c = std::min(settings.growth * res.mult.c, settings.c_max);
        }
        h_prev = h;
    }
    if (!res.diagnostics.converged) {
        res.pair = best_pair;
        res.diagnostics.residual_norm = best_residual;
        res.diagnostics.max_violation = best_viol;
    }
    detail::fix_signs(problem, res.pair);
    return res;
}

/// Sequentially extracts orders 1..K, feeding previous directions into the
/// constraint set. Per-order non-convergence is recorded and the partial
/// results are retained.
inline FitResult fit(const JointCovariance& cov, int orders,
                     const std::vector<std::pair<PenaltyConfig, PenaltyConfig>>& pen_configs,
                     const OptimizerSettings& settings, InitMode init_mode) {
    if (orders < 1 || orders > std::min(cov.p(), cov.q()))
        throw std::invalid_argument("fit: orders must be in [1, min(p, q)]");
    if (static_cast<int>(pen_configs.size()) != orders)
        throw std::invalid_argument("fit: one penalty configuration pair per order required");

    FitResult out;
    const DirectionPair naive = init_naive(cov);
    for (int k = 1; k <= orders; ++k) {
        MaxAssocProblem problem;
        problem.cov = cov;
        problem.order = k;
        problem.prev_a.assign(out.directions.size(), Vector());
        problem.prev_b.assign(out.directions.size(), Vector());
        for (std::size_t i = 0; i < out.directions.size(); ++i) {
            problem.prev_a[i] = out.directions[i].a;
            problem.prev_b[i] = out.directions[i].b;
        }
        problem.pen_a = pen_configs[static_cast<std::size_t>(k - 1)].first;
        problem.pen_b = pen_configs[static_cast<std::size_t>(k - 1)].second;

        DirectionPair start = naive;
        if (k > 1 && init_mode == InitMode::orthogonal)
            start = init_orthogonal(cov, problem.prev_a, problem.prev_b, naive, settings.seed);

        SolveResult sol = mm_solve(problem, start, settings);
        out.directions.push_back(sol.pair);
        out.associations.push_back(objective(problem, sol.pair));
        out.multipliers.push_back(sol.mult);
        out.diagnostics.push_back(sol.diagnostics);
        out.nonzero_counts.emplace_back(static_cast<int>((sol.pair.a.array() != 0.0).count()),
                                        static_cast<int>((sol.pair.b.array() != 0.0).count()));
    }
    return out;
}

}  // namespace maxassoc
