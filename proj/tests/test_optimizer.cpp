#include "doctest.h"
#include "maxassoc/optimizer.hpp"
#include "maxassoc/simlab.hpp"

#include <cmath>
#include <deque>
#include <random>

using namespace maxassoc;

namespace {

JointCovariance diag_sigma() {
    JointCovariance sigma;
    sigma.cxx = Matrix::Identity(2, 2);
    sigma.cyy = Matrix::Identity(2, 2);
    sigma.cxy = Matrix::Zero(2, 2);
    sigma.cxy(0, 0) = 0.9;
    sigma.cxy(1, 1) = 0.7;
    return sigma;
}

}  // namespace

TEST_CASE("init_naive takes row and column means of the cross block") {
    const DirectionPair start = init_naive(diag_sigma());
    CHECK(start.a(0) == doctest::Approx(0.45));
    CHECK(start.a(1) == doctest::Approx(0.35));
    CHECK(start.b(0) == doctest::Approx(0.45));
    CHECK(start.b(1) == doctest::Approx(0.35));
}

TEST_CASE("init_naive falls back to the uniform vector for a zero cross block") {
    JointCovariance sigma;
    sigma.cxx = Matrix::Identity(4, 4);
    sigma.cyy = Matrix::Identity(4, 4);
    sigma.cxy = Matrix::Zero(4, 4);
    bool degenerate = false;
    const DirectionPair start = init_naive(sigma, &degenerate);
    CHECK(degenerate);
    CHECK(start.a.isApproxToConstant(0.5));  // 1/sqrt(4)
    CHECK(start.b.isApproxToConstant(0.5));
}

TEST_CASE("init_naive concentrates on the leading block of the high dimensional design") {
    auto [sigma, truth] = build_sigma(Setting::high_dim);
    const DirectionPair start = init_naive(sigma);
    // the 10 largest-magnitude entries must be coordinates 1-10
    for (int i = 0; i < 10; ++i)
        for (int j = 10; j < 100; ++j) CHECK(std::abs(start.a(i)) > std::abs(start.a(j)));
}

TEST_CASE("init_orthogonal projects onto the C-orthogonal complement") {
    JointCovariance sigma;
    sigma.cxx = Matrix::Identity(3, 3);
    sigma.cyy = Matrix::Identity(3, 3);
    sigma.cxy = Matrix::Zero(3, 3);
    DirectionPair naive;
    naive.a = Vector::Zero(3);
    naive.a << 1, 1, 0;
    naive.b = Vector::Unit(3, 1);
    const std::vector<Vector> prev_a = {Vector::Unit(3, 0)};
    const std::vector<Vector> prev_b = {Vector::Unit(3, 0)};
    const DirectionPair start = init_orthogonal(sigma, prev_a, prev_b, naive);
    CHECK(start.a(0) == doctest::Approx(0.0));
    CHECK(start.a(1) == doctest::Approx(1.0));
    CHECK(start.a(2) == doctest::Approx(0.0));
    // already-orthogonal input is a fixed point
    CHECK((start.b - naive.b).norm() <= 1e-12);
    // residual orthogonality within 1e-10
    CHECK(std::abs(start.a.dot(sigma.cxx * prev_a[0])) <= 1e-10);
}

TEST_CASE("init_orthogonal falls back to a random projected vector when degenerate") {
    JointCovariance sigma;
    sigma.cxx = Matrix::Identity(3, 3);
    sigma.cyy = Matrix::Identity(3, 3);
    sigma.cxy = Matrix::Zero(3, 3);
    DirectionPair naive{Vector::Unit(3, 0), Vector::Unit(3, 0)};  // parallel to prev
    const std::vector<Vector> prev = {Vector::Unit(3, 0)};
    bool degenerate = false;
    const DirectionPair start = init_orthogonal(sigma, prev, prev, naive, 42, &degenerate);
    CHECK(degenerate);
    CHECK(start.a.norm() > 0.0);
    CHECK(std::abs(start.a.dot(prev[0])) <= 1e-10);
}

TEST_CASE("the amsgrad update rule minimizes a quadratic") {
    // drive the raw update rule with the gradient of ||x - x*||^2
    Vector target(3);
    target << 1.0, -2.0, 0.5;
    Vector x = Vector::Zero(3);
    AmsgradState state(3);
    for (int i = 0; i < 5000; ++i) {
        const Vector g = 2.0 * (x - target);
        if (g.norm() <= 1e-8) break;
        x += state.step(g, 0.9, 0.999, 0.01);
    }
    CHECK((x - target).norm() <= 1e-4);
}

TEST_CASE("the amsgrad second-moment maximum is nondecreasing") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> normal(0.0, 1.0);
    AmsgradState state(4);
    Vector prev_vhat = state.v_hat;
    for (int i = 0; i < 200; ++i) {
        Vector g(4);
        for (int j = 0; j < 4; ++j) g(j) = normal(rng);
        state.step(g, 0.9, 0.999, 0.01);
        CHECK((state.v_hat - prev_vhat).minCoeff() >= 0.0);
        CHECK((state.v_hat - state.v).minCoeff() >= -1e-16);
        prev_vhat = state.v_hat;
    }
}

TEST_CASE("amsgrad_minimize returns a stationary start unchanged") {
    const JointCovariance sigma = diag_sigma();
    MaxAssocProblem prob;
    prob.cov = sigma;
    prob.order = 1;
    prob.pen_a = {1.0, 10.0};
    prob.pen_b = {1.0, 10.0};
    MultiplierState mult;
    mult.lambda = Vector::Zero(4);
    mult.c = 1.0;
    // the origin has zero bilinear gradient and all constraints slack
    DirectionPair origin{Vector::Zero(2), Vector::Zero(2)};
    OptimizerSettings settings;
    const InnerResult res = amsgrad_minimize(prob, mult, origin, settings);
    CHECK(res.iterations == 0);
    CHECK(res.pair.a.norm() == doctest::Approx(0.0));
    CHECK(res.pair.b.norm() == doctest::Approx(0.0));
}

TEST_CASE("threshold zeroes magnitudes at or below mean plus two sd") {
    std::deque<double> hist_zero;  // empty -> threshold 0
    DirectionPair pair{Vector::Zero(2), Vector::Zero(2)};
    pair.a << 1.0, 0.0;
    pair.b << 0.3, -0.2;
    const DirectionPair t0 = threshold(pair, hist_zero, hist_zero, 10);
    CHECK(t0.a(0) == doctest::Approx(1.0));
    CHECK(t0.a(1) == doctest::Approx(0.0));
    CHECK(t0.b(0) == doctest::Approx(0.3));

    // constant history: threshold = mean, sd = 0
    std::deque<double> tiny(5, 1e-6);
    DirectionPair p1{Vector::Zero(2), Vector::Zero(2)};
    p1.a << 1.0, 1e-9;
    p1.b << 1.0, 1.0;
    const DirectionPair t1 = threshold(p1, tiny, tiny, 10);
    CHECK(t1.a(0) == doctest::Approx(1.0));
    CHECK(t1.a(1) == doctest::Approx(0.0));

    std::deque<double> hist{0.1, 0.1, 0.1};
    DirectionPair p2{Vector::Zero(2), Vector::Zero(2)};
    p2.a << 0.05, 0.5;
    p2.b << 1.0, 1.0;
    const DirectionPair t2 = threshold(p2, hist, hist, 10);
    CHECK(t2.a(0) == doctest::Approx(0.0));
    CHECK(t2.a(1) == doctest::Approx(0.5));
}

TEST_CASE("threshold never increases the penalty value") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> normal(0.0, 0.3);
    std::uniform_real_distribution<double> unif(0.0, 0.2);
    const PenaltyConfig pen{0.8, 1.0};
    for (int trial = 0; trial < 30; ++trial) {
        DirectionPair pair{Vector::Zero(6), Vector::Zero(6)};
        std::deque<double> ha, hb;
        for (int i = 0; i < 6; ++i) {
            pair.a(i) = normal(rng);
            pair.b(i) = normal(rng);
        }
        for (int i = 0; i < 10; ++i) {
            ha.push_back(unif(rng));
            hb.push_back(unif(rng));
        }
        const DirectionPair cut = threshold(pair, ha, hb, 10);
        CHECK(elastic_net(cut.a, pen) <= elastic_net(pair.a, pen) + 1e-15);
        CHECK(elastic_net(cut.b, pen) <= elastic_net(pair.b, pen) + 1e-15);
    }
}

TEST_CASE("mm_solve recovers the first canonical pair with known sparsity") {
    auto [sigma, truth] = build_sigma(Setting::low_dim);
    MaxAssocProblem prob;
    prob.cov = sigma;
    prob.order = 1;
    prob.pen_a = {1.0, 1.0};  // ||e1||_1 = 1
    prob.pen_b = {1.0, 1.0};
    OptimizerSettings settings;
    const SolveResult sol = mm_solve(prob, init_naive(sigma), settings);
    CHECK(sol.diagnostics.converged);
    CHECK(angle(truth.a_vectors[0], sol.pair.a) <= 1e-3);
    CHECK(objective(prob, sol.pair) == doctest::Approx(0.9).epsilon(1e-3));
    auto [tpr, tnr] = sparsity_rates(truth.a_vectors[0], sol.pair.a);
    CHECK(tpr == doctest::Approx(1.0));
    CHECK(tnr == doctest::Approx(1.0));
    // variance constraint met at convergence
    CHECK(std::abs(sol.pair.a.dot(sigma.cxx * sol.pair.a) - 1.0) <= 1e-3);
    CHECK(sol.diagnostics.max_violation <= 1e-4);
}

TEST_CASE("mm_solve converges with variance slack when the budget undercuts the sphere") {
    // on the identity-covariance design the L1 minimum over the variance
    // sphere is 1, so a budget of 0.5 forces a'Cxx a < 1 at the optimum
    auto [sigma, truth] = build_sigma(Setting::low_dim);
    MaxAssocProblem prob;
    prob.cov = sigma;
    prob.order = 1;
    prob.pen_a = {1.0, 0.5};
    prob.pen_b = {1.0, 0.5};
    OptimizerSettings settings;
    const SolveResult sol = mm_solve(prob, init_naive(sigma), settings);
    CHECK(sol.diagnostics.converged);
    CHECK(sol.diagnostics.max_violation <= 1e-4);
    CHECK(elastic_net(sol.pair.a, prob.pen_a) <= 0.5 + 1e-4);
    CHECK(sol.pair.a.dot(sigma.cxx * sol.pair.a) < 1.0);
    // the scaled-down solution still points at the first canonical direction
    CHECK(angle(truth.a_vectors[0], sol.pair.a) <= 1e-3);
}

TEST_CASE("mm_solve reports non-convergence as a result state") {
    // one outer round with a starved inner loop cannot reach feasibility
    auto [sigma, truth] = build_sigma(Setting::low_dim);
    MaxAssocProblem prob;
    prob.cov = sigma;
    prob.order = 1;
    prob.pen_a = {1.0, 1.0};
    prob.pen_b = {1.0, 1.0};
    OptimizerSettings settings;
    settings.max_outer = 1;
    settings.max_inner = 2;
    const SolveResult sol = mm_solve(prob, init_naive(sigma), settings);
    CHECK_FALSE(sol.diagnostics.converged);
    CHECK(sol.pair.a.allFinite());
    CHECK(sol.diagnostics.residual_norm >= 0.0);
}

TEST_CASE("the sign convention and determinism hold") {
    auto [sigma, truth] = build_sigma(Setting::low_dim);
    std::vector<std::pair<PenaltyConfig, PenaltyConfig>> pens = {
        {PenaltyConfig{1.0, 1.0}, PenaltyConfig{1.0, 1.0}},
        {PenaltyConfig{1.0, 1.0}, PenaltyConfig{1.0, 1.0}}};
    OptimizerSettings settings;
    const FitResult r1 = fit(sigma, 2, pens, settings, InitMode::orthogonal);
    const FitResult r2 = fit(sigma, 2, pens, settings, InitMode::orthogonal);
    for (int k = 0; k < 2; ++k) {
        // bit-identical across runs
        CHECK((r1.directions[k].a - r2.directions[k].a).norm() == 0.0);
        CHECK((r1.directions[k].b - r2.directions[k].b).norm() == 0.0);
        // largest-magnitude entry of a is positive, association nonnegative
        Eigen::Index imax = 0;
        r1.directions[k].a.cwiseAbs().maxCoeff(&imax);
        CHECK(r1.directions[k].a(imax) > 0.0);
        CHECK(r1.associations[k] >= 0.0);
    }
    // association monotonicity across orders
    CHECK(r1.associations[0] >= r1.associations[1] - 1e-3);
    // penalty strength stays within [c0, c_max]
    for (const auto& mult : r1.multipliers) {
        CHECK(mult.c >= settings.c0);
        CHECK(mult.c <= settings.c_max);
    }
}

TEST_CASE("fit with one order equals mm_solve") {
    auto [sigma, truth] = build_sigma(Setting::low_dim);
    OptimizerSettings settings;
    std::vector<std::pair<PenaltyConfig, PenaltyConfig>> pens = {
        {PenaltyConfig{1.0, 1.0}, PenaltyConfig{1.0, 1.0}}};
    const FitResult via_fit = fit(sigma, 1, pens, settings, InitMode::naive);
    MaxAssocProblem prob;
    prob.cov = sigma;
    prob.order = 1;
    prob.pen_a = pens[0].first;
    prob.pen_b = pens[0].second;
    const SolveResult direct = mm_solve(prob, init_naive(sigma), settings);
    CHECK((via_fit.directions[0].a - direct.pair.a).norm() == 0.0);
    CHECK((via_fit.directions[0].b - direct.pair.b).norm() == 0.0);
    CHECK(via_fit.associations[0] == objective(prob, direct.pair));
}

TEST_CASE("fit extracts both low dimensional orders with orthogonal starts") {
    auto [sigma, truth] = build_sigma(Setting::low_dim);
    std::vector<std::pair<PenaltyConfig, PenaltyConfig>> pens = {
        {PenaltyConfig{1.0, 1.0}, PenaltyConfig{1.0, 1.0}},
        {PenaltyConfig{1.0, 1.0}, PenaltyConfig{1.0, 1.0}}};
    OptimizerSettings settings;
    const FitResult res = fit(sigma, 2, pens, settings, InitMode::orthogonal);
    CHECK(res.associations[0] == doctest::Approx(0.9).epsilon(1e-3));
    CHECK(res.associations[1] == doctest::Approx(0.7).epsilon(1e-3));
    for (int k = 0; k < 2; ++k) {
        auto [tpr, tnr] = sparsity_rates(truth.a_vectors[k], res.directions[k].a);
        CHECK(tpr == doctest::Approx(1.0));
        CHECK(tnr == doctest::Approx(1.0));
    }
}

TEST_CASE("fit validates its configuration") {
    auto [sigma, truth] = build_sigma(Setting::low_dim);
    OptimizerSettings settings;
    std::vector<std::pair<PenaltyConfig, PenaltyConfig>> one = {
        {PenaltyConfig{1.0, 1.0}, PenaltyConfig{1.0, 1.0}}};
    CHECK_THROWS_AS(fit(sigma, 2, one, settings, InitMode::naive), std::invalid_argument);
    CHECK_THROWS_AS(fit(sigma, 11, {}, settings, InitMode::naive), std::invalid_argument);

    OptimizerSettings bad;
    bad.eta1 = 1.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = OptimizerSettings{};
    bad.trigger = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
