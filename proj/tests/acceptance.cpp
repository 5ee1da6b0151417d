// Acceptance suite: one line per criterion, nonzero exit if any fails.
// Tolerances are pinned in the checks below.

#include "maxassoc/simlab.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

using namespace maxassoc;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& name, bool ok, const std::string& detail) {
    std::printf("criterion %d (%s): %s%s%s\n", criterion, name.c_str(), ok ? "PASS" : "FAIL",
                detail.empty() ? "" : " -- ", detail.c_str());
    if (!ok) ++g_failures;
}

struct ConvergedFit {
    MaxAssocProblem problem;
    DirectionPair pair;
    double max_violation = 0.0;
};

// converged solves from criteria 1-2, re-checked in criterion 3
std::vector<ConvergedFit> g_converged;

void record_converged(const JointCovariance& cov,
                      const std::vector<std::pair<PenaltyConfig, PenaltyConfig>>& pens,
                      const FitResult& res) {
    for (std::size_t k = 0; k < res.directions.size(); ++k) {
        if (!res.diagnostics[k].converged) continue;
        ConvergedFit cf;
        cf.problem.cov = cov;
        cf.problem.order = static_cast<int>(k) + 1;
        for (std::size_t j = 0; j < k; ++j) {
            cf.problem.prev_a.push_back(res.directions[j].a);
            cf.problem.prev_b.push_back(res.directions[j].b);
        }
        cf.problem.pen_a = pens[k].first;
        cf.problem.pen_b = pens[k].second;
        cf.pair = res.directions[k];
        cf.max_violation = res.diagnostics[k].max_violation;
        g_converged.push_back(cf);
    }
}

double mean_angle(Setting setting, Estimator est, double rate, double shift, std::uint64_t seed,
                  double budget) {
    ScenarioConfig config;
    config.setting = setting;
    config.n = 100;
    config.contamination_rate = rate;
    config.contamination_shift = shift;
    config.seed = seed;
    config.replicates = 20;
    ScenarioRun run;
    run.estimator = est;
    run.orders = 1;
    run.pen_configs = {{PenaltyConfig{1.0, budget}, PenaltyConfig{1.0, budget}}};
    run.threads = 4;
    const auto reports = run_scenario(config, run);
    std::vector<double> th;
    for (const auto& rep : reports)
        if (!rep.failed) th.push_back(rep.theta_a[0]);
    return aggregate(th).mean;
}

// ---------------------------------------------------------------------------

void criterion1() {
    bool ok = true;
    std::string detail;
    auto fail = [&](const std::string& why) {
        ok = false;
        if (!detail.empty()) detail += "; ";
        detail += why;
    };

    // low-dimensional design, known sparsity budgets
    {
        auto [sigma, truth] = build_sigma(Setting::low_dim);
        OptimizerSettings settings;
        std::vector<std::pair<PenaltyConfig, PenaltyConfig>> pens = {
            {PenaltyConfig{1.0, 1.0}, PenaltyConfig{1.0, 1.0}},
            {PenaltyConfig{1.0, 1.0}, PenaltyConfig{1.0, 1.0}}};

        const FitResult orth = fit(sigma, 2, pens, settings, InitMode::orthogonal);
        record_converged(sigma, pens, orth);
        auto [tpr1, tnr1] = sparsity_rates(truth.a_vectors[0], orth.directions[0].a);
        if (angle(truth.a_vectors[0], orth.directions[0].a) > 1e-3) fail("low k1 angle");
        if (tpr1 != 1.0 || tnr1 != 1.0) fail("low k1 support");
        if (std::abs(orth.associations[0] - 0.9) > 1e-3) fail("low k1 association");
        auto [tpr2, tnr2] = sparsity_rates(truth.a_vectors[1], orth.directions[1].a);
        if (angle(truth.a_vectors[1], orth.directions[1].a) > 1e-2) fail("low k2 angle");
        if (tpr2 != 1.0 || tnr2 != 1.0) fail("low k2 support");
        if (std::abs(orth.associations[1] - 0.7) > 1e-3) fail("low k2 association");

        const FitResult naive = fit(sigma, 2, pens, settings, InitMode::naive);
        record_converged(sigma, pens, naive);
        auto [tprn, tnrn] = sparsity_rates(truth.a_vectors[1], naive.directions[1].a);
        // the naive second-order start is known to pick up ~one spurious
        // coordinate; require that level or better
        if (tnrn < 8.0 / 9.0 - 1e-12) fail("low k2 naive TNR " + std::to_string(tnrn));
    }

    // high-dimensional design, budgets set to the L1 norms of the truth
    {
        auto [sigma, truth] = build_sigma(Setting::high_dim);
        OptimizerSettings settings;
        std::vector<std::pair<PenaltyConfig, PenaltyConfig>> pens = {
            {PenaltyConfig{1.0, truth.a_vectors[0].lpNorm<1>()},
             PenaltyConfig{1.0, truth.b_vectors[0].lpNorm<1>()}},
            {PenaltyConfig{1.0, truth.a_vectors[1].lpNorm<1>()},
             PenaltyConfig{1.0, truth.b_vectors[1].lpNorm<1>()}}};

        const FitResult naive = fit(sigma, 2, pens, settings, InitMode::naive);
        record_converged(sigma, pens, naive);
        if (std::abs(naive.associations[0] - 0.989) > 0.005) fail("high k1 association");
        // without orthogonal restarts the second order collapses onto the first
        if (angle(truth.a_vectors[1], naive.directions[1].a) < 1.5) fail("high k2 naive angle");
        if (std::abs(naive.associations[1] - 0.989) > 0.01) fail("high k2 naive association");

        const FitResult orth = fit(sigma, 2, pens, settings, InitMode::orthogonal);
        record_converged(sigma, pens, orth);
        if (orth.associations[1] < 0.67 || orth.associations[1] > 0.69)
            fail("high k2 orthogonal association " + std::to_string(orth.associations[1]));
    }
    report(1, "reference-design reproduction", ok, detail);
}

void criterion2() {
    std::mt19937_64 rng(123);
    std::normal_distribution<double> normal(0.0, 1.0);
    int fails = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const int p = 5, q = 4, d = p + q;
        Matrix g(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) g(i, j) = normal(rng);
        const Matrix full = g * g.transpose() + 0.5 * Matrix::Identity(d, d);
        const JointCovariance sigma = JointCovariance::from_full(full, p);
        const TrueSolution truth = true_directions(sigma, 1);

        OptimizerSettings settings;
        std::vector<std::pair<PenaltyConfig, PenaltyConfig>> pens = {
            {PenaltyConfig{0.0, 10.0 * std::sqrt(static_cast<double>(p))},
             PenaltyConfig{0.0, 10.0 * std::sqrt(static_cast<double>(q))}}};
        const FitResult res = fit(sigma, 1, pens, settings, InitMode::naive);
        record_converged(sigma, pens, res);
        if (angle(truth.a_vectors[0], res.directions[0].a) > 0.01 ||
            std::abs(truth.rhos[0] - res.associations[0]) > 1e-3)
            ++fails;
    }
    report(2, "dense-problem oracle equivalence", fails == 0,
           fails == 0 ? "" : std::to_string(fails) + "/20 trials off");
}

void criterion3() {
    bool ok = true;
    std::string detail;
    double worst_viol = 0.0, worst_var = 0.0;
    for (const auto& cf : g_converged) {
        const Vector h = constraints(cf.problem, cf.pair);
        double viol = 0.0;
        for (int i = 0; i < h.size(); ++i)
            viol = std::max(viol, cf.problem.is_inequality(i) ? h(i) : std::abs(h(i)));
        worst_viol = std::max(worst_viol, viol);
        const double var_gap = std::abs(cf.pair.a.dot(cf.problem.cov.cxx * cf.pair.a) - 1.0);
        worst_var = std::max(worst_var, var_gap);
        if (viol > 1e-4) ok = false;
        if (var_gap > 1e-3) ok = false;
    }
    if (g_converged.empty()) ok = false;
    detail = std::to_string(g_converged.size()) + " converged fits, worst violation " +
             std::to_string(worst_viol) + ", worst variance gap " + std::to_string(worst_var);
    report(3, "constraint satisfaction", ok, detail);
}

void criterion4() {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.05, 1.0);
    const int p = 4, q = 3, d = p + q;
    Matrix g(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) g(i, j) = normal(rng);
    const Matrix full = g * g.transpose() + 0.5 * Matrix::Identity(d, d);

    MaxAssocProblem problem;
    problem.cov = JointCovariance::from_full(full, p);
    problem.order = 1;
    problem.pen_a = PenaltyConfig{0.6, 2.0};
    problem.pen_b = PenaltyConfig{0.3, 2.0};

    double worst = 0.0;
    int checked = 0;
    while (checked < 100) {
        DirectionPair pair{Vector(p), Vector(q)};
        // keep every coordinate away from the L1 kink
        for (int i = 0; i < p; ++i) pair.a(i) = (normal(rng) < 0 ? -1.0 : 1.0) * unif(rng);
        for (int i = 0; i < q; ++i) pair.b(i) = (normal(rng) < 0 ? -1.0 : 1.0) * unif(rng);
        MultiplierState mult;
        mult.lambda = Vector(problem.constraint_count());
        for (int i = 0; i < mult.lambda.size(); ++i) mult.lambda(i) = std::abs(normal(rng));
        mult.c = 2.5;
        // skip points at the max(H, -lambda/c) kink of an inequality row
        const Vector h = constraints(problem, pair);
        bool smooth = true;
        for (int i = 0; i < h.size(); ++i)
            if (problem.is_inequality(i) && std::abs(h(i) + mult.lambda(i) / mult.c) < 1e-3)
                smooth = false;
        if (!smooth) continue;
        ++checked;

        const DirectionPair grad = al_subgradient(problem, pair, mult);
        const double eps = 1e-6;
        double gnorm = 0.0, enorm = 0.0;
        auto probe = [&](Vector& v, const Vector& gv) {
            for (int i = 0; i < v.size(); ++i) {
                const double orig = v(i);
                v(i) = orig + eps;
                const double fp = augmented_lagrangian(problem, pair, mult);
                v(i) = orig - eps;
                const double fm = augmented_lagrangian(problem, pair, mult);
                v(i) = orig;
                const double fd = (fp - fm) / (2.0 * eps);
                enorm += (fd - gv(i)) * (fd - gv(i));
                gnorm += gv(i) * gv(i);
            }
        };
        probe(pair.a, grad.a);
        probe(pair.b, grad.b);
        worst = std::max(worst, std::sqrt(enorm) / std::max(1.0, std::sqrt(gnorm)));
    }
    report(4, "subgradient vs finite differences", worst <= 1e-5,
           "worst relative error " + std::to_string(worst));
}

void criterion5() {
    bool ok = true;
    std::string detail;
    auto fail = [&](const std::string& why) {
        ok = false;
        if (!detail.empty()) detail += "; ";
        detail += why;
    };

    // paired comparison at 5% contamination, shift 2, tight budgets
    const double pe = mean_angle(Setting::low_dim, Estimator::pearson, 0.05, 2.0, 7, 1.2);
    const double sp = mean_angle(Setting::low_dim, Estimator::spearman, 0.05, 2.0, 7, 1.2);
    const double og = mean_angle(Setting::low_dim, Estimator::ogk, 0.05, 2.0, 7, 1.2);
    if (sp > pe) fail("spearman " + std::to_string(sp) + " > pearson " + std::to_string(pe));
    if (og > pe) fail("ogk " + std::to_string(og) + " > pearson " + std::to_string(pe));

    // contamination sweep at the loose feasibility budget sqrt(10)
    const double loose = std::sqrt(10.0);
    std::vector<double> pearson_sweep, ogk_sweep;
    for (double rate : {0.0, 0.1, 0.2, 0.3}) {
        pearson_sweep.push_back(mean_angle(Setting::low_dim, Estimator::pearson, rate, 2.0, 7, loose));
        if (rate <= 0.2)
            ogk_sweep.push_back(mean_angle(Setting::low_dim, Estimator::ogk, rate, 2.0, 7, loose));
    }
    for (std::size_t i = 1; i < pearson_sweep.size(); ++i)
        if (pearson_sweep[i] < pearson_sweep[i - 1])
            fail("pearson angle decreased at sweep step " + std::to_string(i));
    for (std::size_t i = 1; i < ogk_sweep.size(); ++i)
        if (ogk_sweep[i] > 2.0 * ogk_sweep[0])
            fail("ogk angle " + std::to_string(ogk_sweep[i]) + " exceeds 2x clean " +
                 std::to_string(ogk_sweep[0]));
    report(5, "robust estimators under contamination", ok, detail);
}

void criterion6() {
    JointCovariance sigma;
    sigma.cxx = Matrix::Identity(1, 1);
    sigma.cyy = Matrix::Identity(1, 1);
    sigma.cxy = Matrix::Constant(1, 1, 0.6);
    auto [x, y] = sample(sigma, 5000, Distribution::normal, 61);
    DataMatrix joint;
    joint.values = Matrix(5000, 2);
    joint.values << x.values, y.values;
    const double rs = rank_correlation(joint, RankKind::spearman)(0, 1);
    const double rk = rank_correlation(joint, RankKind::kendall)(0, 1);
    const bool ok = std::abs(rs - 0.6) <= 0.05 && std::abs(rk - 0.6) <= 0.05;
    report(6, "rank-transform consistency", ok,
           "spearman " + std::to_string(rs) + ", kendall " + std::to_string(rk));
}

void criterion7() {
    std::mt19937_64 rng(71);
    std::normal_distribution<double> normal(0.0, 1.0);
    bool ok = true;
    int tested = 0;
    while (tested < 50) {
        Matrix m(20, 20);
        for (int i = 0; i < 20; ++i)
            for (int j = 0; j <= i; ++j) m(i, j) = m(j, i) = normal(rng);
        Eigen::SelfAdjointEigenSolver<Matrix> es(m);
        if (es.eigenvalues().minCoeff() >= 0.0) continue;  // need a genuinely indefinite input
        ++tested;
        const Matrix repaired = nearest_pd(m);
        Eigen::SelfAdjointEigenSolver<Matrix> er(repaired);
        if (er.eigenvalues().minCoeff() < -1e-8) ok = false;
        const Matrix twice = nearest_pd(repaired);
        if ((twice - repaired).cwiseAbs().maxCoeff() > 1e-10) ok = false;
    }
    report(7, "positive-definite repair", ok, "50 indefinite 20x20 inputs");
}

void criterion8() {
    auto [sigma, truth] = build_sigma(Setting::low_dim);
    int success = 0;
    for (int run = 0; run < 20; ++run) {
        const std::uint64_t seed = 1000 + static_cast<std::uint64_t>(run);
        OptimizerSettings settings;
        settings.seed = seed;
        SearchSpace space;
        space.budget = 30;
        space.seed = seed;
        const HyperoptFit hf = fit_with_hyperopt(sigma, 1, space, settings, InitMode::naive);
        auto [tpra, tnra] = sparsity_rates(truth.a_vectors[0], hf.fit.directions[0].a);
        auto [tprb, tnrb] = sparsity_rates(truth.b_vectors[0], hf.fit.directions[0].b);
        if (tpra == 1.0 && tnra == 1.0 && tprb == 1.0 && tnrb == 1.0) ++success;
    }
    report(8, "hyperparameter search recovers the sparse truth", success >= 18,
           std::to_string(success) + "/20 seeded runs exact");
}

void criterion9() {
    OptimizerSettings settings;
    std::vector<double> logq, logt;
    std::string detail;
    for (int q : {50, 200, 800}) {
        auto [sigma, truth] = build_sigma(Setting::runtime, q);
        auto [x, y] = sample(sigma, 100, Distribution::normal, 11);
        const JointEstimate est = estimate_joint(x, y, Estimator::pearson, false);
        std::vector<std::pair<PenaltyConfig, PenaltyConfig>> pens = {
            {PenaltyConfig{1.0, truth.a_vectors[0].lpNorm<1>()},
             PenaltyConfig{1.0, truth.b_vectors[0].lpNorm<1>()}}};
        const auto t0 = std::chrono::steady_clock::now();
        fit(est.blocks, 1, pens, settings, InitMode::naive);
        const double dt =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        logq.push_back(std::log(static_cast<double>(q)));
        logt.push_back(std::log(std::max(dt, 1e-6)));
        detail += "q=" + std::to_string(q) + ": " + std::to_string(dt) + "s ";
    }
    // least-squares slope of log t against log q
    const double mq = (logq[0] + logq[1] + logq[2]) / 3.0;
    const double mt = (logt[0] + logt[1] + logt[2]) / 3.0;
    double num = 0.0, den = 0.0;
    for (int i = 0; i < 3; ++i) {
        num += (logq[i] - mq) * (logt[i] - mt);
        den += (logq[i] - mq) * (logq[i] - mq);
    }
    const double slope = num / den;
    report(9, "subquadratic runtime scaling in q", slope < 2.0,
           detail + "log-log slope " + std::to_string(slope));
}

}  // namespace

int main() {
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    criterion5();
    criterion6();
    criterion7();
    criterion8();
    criterion9();
    if (g_failures > 0) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
