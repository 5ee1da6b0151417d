/**
 * @file problem.hpp
 * @brief The order-k constrained maximization problem: objective, constraint
 *        vector, elastic-net penalties, subgradients, and the augmented
 *        Lagrangian with inequality-aware multiplier handling.
 */

#pragma once

#include "covariance.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace maxassoc {

/// Elastic-net mixing and sparsity budget for one side of the problem.
struct PenaltyConfig {
    double alpha = 1.0;  // 1 = pure L1, 0 = pure (unsquared) L2
    double bound = 1.0;  // budget c_a or c_b

    void validate() const {
        if (alpha < 0.0 || alpha > 1.0)
            throw std::invalid_argument("PenaltyConfig: alpha must be in [0, 1]");
        if (bound <= 0.0)
            throw std::invalid_argument("PenaltyConfig: bound must be positive");
    }
};

struct DirectionPair {
    Vector a;
    Vector b;
};

/// Multipliers for the 2k+2 constraint rows and the quadratic penalty
/// strength of the outer loop.
struct MultiplierState {
    Vector lambda;
    double c = 1.0;
};

/// P(u) = alpha * ||u||_1 + (1 - alpha) * ||u||_2  (L2 term unsquared)
inline double elastic_net(const Vector& u, const PenaltyConfig& config) {
    return config.alpha * u.lpNorm<1>() + (1.0 - config.alpha) * u.norm();
}

/// A member of the subdifferential of elastic_net. At u_i = 0 the L1
/// component is 0; at u = 0 the L2 term contributes the zero vector and
/// `degenerate` is set.
inline Vector penalty_subgradient(const Vector& u, const PenaltyConfig& config,
                                  bool* degenerate = nullptr) {
    Vector g = Vector::Zero(u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i)
        if (u(i) != 0.0) g(i) = config.alpha * (u(i) > 0.0 ? 1.0 : -1.0);
    const double norm = u.norm();
    if (norm > 0.0) {
        g += (1.0 - config.alpha) / norm * u;
    } else if (config.alpha < 1.0 && degenerate) {
        *degenerate = true;
    }
    return g;
}

/// One order-k subproblem: covariance blocks, previously found directions,
/// and the penalty configuration. Immutable after construction.
struct MaxAssocProblem {
    JointCovariance cov;
    int order = 1;
    std::vector<Vector> prev_a;
    std::vector<Vector> prev_b;
    PenaltyConfig pen_a;
    PenaltyConfig pen_b;
    // Treat the penalty rows as equalities instead of inequalities
    // (reproduction switch; default follows the inequality relaxation).
    bool equality_mode = false;

    Eigen::Index p() const { return cov.p(); }
    Eigen::Index q() const { return cov.q(); }
    int constraint_count() const { return 2 * order + 2; }

    void validate() const {
        pen_a.validate();
        pen_b.validate();
        if (order < 1 || order > std::min(p(), q()))
            throw std::invalid_argument("MaxAssocProblem: invalid order");
        if (static_cast<int>(prev_a.size()) != order - 1 ||
            static_cast<int>(prev_b.size()) != order - 1)
            throw std::invalid_argument("MaxAssocProblem: need k-1 previous directions");
        for (const auto& v : prev_a)
            if (std::abs(v.dot(cov.cxx * v) - 1.0) > 1e-4)
                throw std::invalid_argument("MaxAssocProblem: previous a not Cxx-normalized");
        for (const auto& v : prev_b)
            if (std::abs(v.dot(cov.cyy * v) - 1.0) > 1e-4)
                throw std::invalid_argument("MaxAssocProblem: previous b not Cyy-normalized");
    }

    /// True for constraint rows treated as inequalities (<= 0 feasible):
    /// the two variance rows and, unless equality_mode, the penalty rows.
    bool is_inequality(int row) const {
        if (row == 0 || row == 1) return true;
        if (row >= 2 * order) return !equality_mode;
        return false;  // orthogonality rows
    }

    void check_pair(const DirectionPair& pair) const {
        if (pair.a.size() != p() || pair.b.size() != q())
            throw std::invalid_argument("direction pair dimensions do not match the problem");
    }
};

/// Association value a' Cxy b (the optimizer minimizes its negative).
inline double objective(const MaxAssocProblem& problem, const DirectionPair& pair) {
    problem.check_pair(pair);
    return pair.a.dot(problem.cov.cxy * pair.b);
}

/// Constraint residuals, ordered [var_a, var_b, orth_a..., orth_b...,
/// pen_a, pen_b]. Variance and penalty rows are inequality residuals
/// (feasible when <= 0), orthogonality rows are equalities.
inline Vector constraints(const MaxAssocProblem& problem, const DirectionPair& pair) {
    problem.check_pair(pair);
    const int k = problem.order;
    Vector h(2 * k + 2);
    h(0) = pair.a.dot(problem.cov.cxx * pair.a) - 1.0;
    h(1) = pair.b.dot(problem.cov.cyy * pair.b) - 1.0;
    for (int i = 0; i < k - 1; ++i) {
        h(2 + i) = pair.a.dot(problem.cov.cxx * problem.prev_a[static_cast<std::size_t>(i)]);
        h(2 + (k - 1) + i) = pair.b.dot(problem.cov.cyy * problem.prev_b[static_cast<std::size_t>(i)]);
    }
    h(2 * k) = elastic_net(pair.a, problem.pen_a) - problem.pen_a.bound;
    h(2 * k + 1) = elastic_net(pair.b, problem.pen_b) - problem.pen_b.bound;
    return h;
}

namespace detail {

/// Effective multiplier per row: equality rows use lambda + c h, inequality
/// rows clamp at zero so inactive constraints exert no force.
inline Vector effective_multipliers(const MaxAssocProblem& problem, const Vector& h,
                                    const MultiplierState& mult) {
    Vector mu(h.size());
    for (int i = 0; i < h.size(); ++i) {
        const double raw = mult.lambda(i) + mult.c * h(i);
        mu(i) = problem.is_inequality(i) ? std::max(0.0, raw) : raw;
    }
    return mu;
}

}  // namespace detail

/// L_c(a, b, lambda) = -F + sum_eq [lambda h + (c/2) h^2]
///                        + sum_ineq [lambda r + (c/2) r^2],  r = max(h, -lambda/c)
inline double augmented_lagrangian(const MaxAssocProblem& problem, const DirectionPair& pair,
                                   const MultiplierState& mult) {
    if (mult.lambda.size() != problem.constraint_count())
        throw std::invalid_argument("augmented_lagrangian: lambda length mismatch");
    const Vector h = constraints(problem, pair);
    double value = -objective(problem, pair);
    for (int i = 0; i < h.size(); ++i) {
        const double r = problem.is_inequality(i) ? std::max(h(i), -mult.lambda(i) / mult.c) : h(i);
        value += mult.lambda(i) * r + 0.5 * mult.c * r * r;
    }
    return value;
}

/// Subgradient of the augmented Lagrangian with respect to (a, b).
inline DirectionPair al_subgradient(const MaxAssocProblem& problem, const DirectionPair& pair,
                                    const MultiplierState& mult) {
    if (mult.lambda.size() != problem.constraint_count())
        throw std::invalid_argument("al_subgradient: lambda length mismatch");
    const int k = problem.order;
    const Vector h = constraints(problem, pair);
    const Vector mu = detail::effective_multipliers(problem, h, mult);

    DirectionPair g;
    g.a = -(problem.cov.cxy * pair.b);
    g.b = -(problem.cov.cxy.transpose() * pair.a);

    if (mu(0) != 0.0) g.a += mu(0) * 2.0 * (problem.cov.cxx * pair.a);
    if (mu(1) != 0.0) g.b += mu(1) * 2.0 * (problem.cov.cyy * pair.b);
    for (int i = 0; i < k - 1; ++i) {
        if (mu(2 + i) != 0.0)
            g.a += mu(2 + i) * (problem.cov.cxx * problem.prev_a[static_cast<std::size_t>(i)]);
        if (mu(2 + (k - 1) + i) != 0.0)
            g.b += mu(2 + (k - 1) + i) * (problem.cov.cyy * problem.prev_b[static_cast<std::size_t>(i)]);
    }
    if (mu(2 * k) != 0.0) g.a += mu(2 * k) * penalty_subgradient(pair.a, problem.pen_a);
    if (mu(2 * k + 1) != 0.0) g.b += mu(2 * k + 1) * penalty_subgradient(pair.b, problem.pen_b);
    return g;
}

/// Multiplier update of the method of multipliers: plain ascent for equality
/// rows, clamped at zero for inequality rows.
inline Vector update_multipliers(const MaxAssocProblem& problem, const Vector& lambda, double c,
                                 const Vector& h) {
    Vector out(lambda.size());
    for (int i = 0; i < lambda.size(); ++i) {
        const double raw = lambda(i) + c * h(i);
        out(i) = problem.is_inequality(i) ? std::max(0.0, raw) : raw;
    }
    return out;
}

}  // namespace maxassoc
