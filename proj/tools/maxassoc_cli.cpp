// Command-line entry point: CSV ingestion, fitting, hyperparameter search,
// simulation scenarios, oracle solutions, and JSON/CSV report emission.

#include "maxassoc/simlab.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

using json = nlohmann::json;
using namespace maxassoc;

namespace {

constexpr int kSchemaVersion = 1;

json vector_to_json(const Vector& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

json fit_result_to_json(const FitResult& fit_res, const std::vector<std::string>& x_names,
                        const std::vector<std::string>& y_names,
                        const std::vector<TrialRecord>* chosen) {
    json orders = json::array();
    for (std::size_t k = 0; k < fit_res.directions.size(); ++k) {
        json entry;
        entry["order"] = k + 1;
        entry["association"] = fit_res.associations[k];
        entry["a"] = vector_to_json(fit_res.directions[k].a);
        entry["b"] = vector_to_json(fit_res.directions[k].b);
        if (!x_names.empty()) entry["a_names"] = x_names;
        if (!y_names.empty()) entry["b_names"] = y_names;
        entry["nonzero_a"] = fit_res.nonzero_counts[k].first;
        entry["nonzero_b"] = fit_res.nonzero_counts[k].second;
        const auto& d = fit_res.diagnostics[k];
        entry["converged"] = d.converged;
        entry["outer_iterations"] = d.outer_iterations;
        entry["inner_iterations"] = d.inner_iterations;
        entry["residual_norm"] = d.residual_norm;
        entry["max_violation"] = d.max_violation;
        if (chosen && k < chosen->size()) {
            entry["selected_ca"] = (*chosen)[k].ca;
            entry["selected_cb"] = (*chosen)[k].cb;
            entry["tpo_score"] = (*chosen)[k].score;
        }
        orders.push_back(entry);
    }
    json out;
    out["schema_version"] = kSchemaVersion;
    out["orders"] = orders;
    return out;
}

struct CommonFitOptions {
    std::string estimator = "pearson";
    int orders = 1;
    double alpha_a = 1.0, alpha_b = 1.0;
    double ca = 0.0, cb = 0.0;  // 0 = search
    int budget = 30;
    std::uint64_t seed = 1;
    bool no_repair = false;
    OptimizerSettings settings;
};

void add_optimizer_flags(CLI::App* cmd, OptimizerSettings& s) {
    cmd->add_option("--lr", s.alpha0, "Base learning rate");
    cmd->add_option("--max-inner", s.max_inner, "Inner iteration cap");
    cmd->add_option("--max-outer", s.max_outer, "Outer iteration cap");
    cmd->add_option("--delta-inner", s.delta_inner, "Inner gradient-norm tolerance");
    cmd->add_option("--delta-outer", s.delta_outer, "Outer multiplier-change tolerance");
    cmd->add_option("--window", s.window, "Moving-average window for thresholding");
    cmd->add_option("--c0", s.c0, "Initial penalty strength");
    cmd->add_option("--c-max", s.c_max, "Penalty strength cap");
}

int cmd_fit(const std::string& x_path, const std::string& y_path, const CommonFitOptions& opt,
            const std::string& output, double test_fraction, const std::string& init) {
    const auto est_tag = parse_estimator(opt.estimator);
    if (!est_tag) {
        std::cerr << "unknown estimator '" << opt.estimator
                  << "' (valid: pearson, spearman, kendall, ogk)\n";
        return 2;
    }
    DataMatrix x = read_csv_file(x_path);
    DataMatrix y = read_csv_file(y_path);
    if (x.rows() != y.rows()) {
        std::cerr << "alignment error: " << x_path << " has " << x.rows() << " rows but "
                  << y_path << " has " << y.rows() << " rows\n";
        return 2;
    }

    DataMatrix train_x = x, train_y = y, test_x, test_y;
    if (test_fraction > 0.0) {
        const int n = static_cast<int>(x.rows());
        const int n_test = std::max(1, static_cast<int>(std::floor(test_fraction * n)));
        std::vector<int> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        std::mt19937_64 rng(opt.seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        train_x.values.resize(n - n_test, x.cols());
        train_y.values.resize(n - n_test, y.cols());
        test_x.values.resize(n_test, x.cols());
        test_y.values.resize(n_test, y.cols());
        for (int i = 0; i < n_test; ++i) {
            test_x.values.row(i) = x.values.row(idx[static_cast<std::size_t>(i)]);
            test_y.values.row(i) = y.values.row(idx[static_cast<std::size_t>(i)]);
        }
        for (int i = n_test; i < n; ++i) {
            train_x.values.row(i - n_test) = x.values.row(idx[static_cast<std::size_t>(i)]);
            train_y.values.row(i - n_test) = y.values.row(idx[static_cast<std::size_t>(i)]);
        }
    }

    const bool rank_based = *est_tag == Estimator::spearman || *est_tag == Estimator::kendall;
    const JointEstimate est = estimate_joint(train_x, train_y, *est_tag,
                                             rank_based && !opt.no_repair);

    OptimizerSettings settings = opt.settings;
    settings.seed = opt.seed;
    const InitMode init_mode = init == "naive" ? InitMode::naive : InitMode::orthogonal;

    json out;
    if (opt.ca > 0.0 && opt.cb > 0.0) {
        std::vector<std::pair<PenaltyConfig, PenaltyConfig>> pens(
            static_cast<std::size_t>(opt.orders),
            {PenaltyConfig{opt.alpha_a, opt.ca}, PenaltyConfig{opt.alpha_b, opt.cb}});
        FitResult res = fit(est.blocks, opt.orders, pens, settings, init_mode);
        out = fit_result_to_json(res, x.column_names, y.column_names, nullptr);
        if (test_fraction > 0.0) {
            std::vector<Vector> as, bs;
            for (const auto& d : res.directions) { as.push_back(d.a); bs.push_back(d.b); }
            out["residual_score"] = residual_score(as, bs, test_x, test_y, 0.0);
            out["residual_score_trimmed"] = residual_score(as, bs, test_x, test_y, 0.1);
        }
    } else {
        SearchSpace space;
        space.alpha_a = opt.alpha_a;
        space.alpha_b = opt.alpha_b;
        space.budget = opt.budget;
        space.seed = opt.seed;
        HyperoptFit res = fit_with_hyperopt(est.blocks, opt.orders, space, settings, init_mode);
        out = fit_result_to_json(res.fit, x.column_names, y.column_names, &res.chosen);
        if (test_fraction > 0.0) {
            std::vector<Vector> as, bs;
            for (const auto& d : res.fit.directions) { as.push_back(d.a); bs.push_back(d.b); }
            out["residual_score"] = residual_score(as, bs, test_x, test_y, 0.0);
            out["residual_score_trimmed"] = residual_score(as, bs, test_x, test_y, 0.1);
        }
    }
    out["estimator"] = opt.estimator;
    out["pd_repaired"] = est.full.pd_repaired;
    out["min_eigenvalue"] = est.full.min_eigenvalue;
    out["seed"] = opt.seed;

    if (output.empty()) {
        std::cout << out.dump(2) << "\n";
    } else {
        std::ofstream f(output);
        f << out.dump(2) << "\n";
    }
    return 0;
}

int cmd_simulate(const std::string& setting_name, const CommonFitOptions& opt, int n,
                 int replicates, double rate, double shift, const std::string& dist_name,
                 const std::string& output_prefix, int threads, const std::string& init,
                 int runtime_q) {
    const auto setting = parse_setting(setting_name);
    if (!setting) {
        std::cerr << "unknown setting '" << setting_name
                  << "' (valid: low_dim, high_dim, runtime)\n";
        return 2;
    }
    const auto est_tag = parse_estimator(opt.estimator);
    if (!est_tag) {
        std::cerr << "unknown estimator '" << opt.estimator << "'\n";
        return 2;
    }

    ScenarioConfig config;
    config.setting = *setting;
    config.runtime_q = runtime_q;
    config.n = n;
    config.contamination_rate = rate;
    config.contamination_shift = shift;
    config.distribution = dist_name == "t3" ? Distribution::t3 : Distribution::normal;
    config.seed = opt.seed;
    config.replicates = replicates;
    config.validate();

    ScenarioRun run;
    run.estimator = *est_tag;
    run.orders = opt.orders;
    run.settings = opt.settings;
    run.settings.seed = opt.seed;
    run.init_mode = init == "naive" ? InitMode::naive : InitMode::orthogonal;
    run.threads = threads;
    if (opt.ca > 0.0 && opt.cb > 0.0) {
        run.pen_configs.assign(static_cast<std::size_t>(opt.orders),
                               {PenaltyConfig{opt.alpha_a, opt.ca},
                                PenaltyConfig{opt.alpha_b, opt.cb}});
    } else {
        SearchSpace space;
        space.alpha_a = opt.alpha_a;
        space.alpha_b = opt.alpha_b;
        space.budget = opt.budget;
        run.hyperopt = space;
    }

    const auto reports = run_scenario(config, run);

    json summary;
    summary["schema_version"] = kSchemaVersion;
    summary["setting"] = setting_name;
    summary["estimator"] = opt.estimator;
    summary["replicates"] = replicates;
    json per_order = json::array();
    std::cout << "order  theta_a(mean+-se)      tpr_a   tnr_a   association\n";
    for (int k = 0; k < opt.orders; ++k) {
        std::vector<double> th, tpr, tnr, assoc, rt;
        for (const auto& rep : reports) {
            if (rep.failed || static_cast<int>(rep.theta_a.size()) <= k) continue;
            th.push_back(rep.theta_a[static_cast<std::size_t>(k)]);
            tpr.push_back(rep.tpr_a[static_cast<std::size_t>(k)]);
            tnr.push_back(rep.tnr_a[static_cast<std::size_t>(k)]);
            assoc.push_back(rep.association[static_cast<std::size_t>(k)]);
            rt.push_back(rep.runtime_seconds);
        }
        const auto ath = aggregate(th), atpr = aggregate(tpr), atnr = aggregate(tnr),
                   aas = aggregate(assoc), art = aggregate(rt);
        json o;
        o["order"] = k + 1;
        o["theta_a_mean"] = ath.mean;
        o["theta_a_stderr"] = ath.stderr_;
        o["tpr_a_mean"] = atpr.mean;
        o["tnr_a_mean"] = atnr.mean;
        o["association_mean"] = aas.mean;
        o["association_stderr"] = aas.stderr_;
        o["runtime_seconds_mean"] = art.mean;
        per_order.push_back(o);
        std::cout << std::setw(5) << (k + 1) << "  " << std::fixed << std::setprecision(4)
                  << ath.mean << " +- " << ath.stderr_ << "   " << atpr.mean << "  " << atnr.mean
                  << "  " << aas.mean << "\n";
    }
    summary["orders"] = per_order;

    if (!output_prefix.empty()) {
        std::ofstream csv(output_prefix + ".csv");
        write_scenario_csv(csv, reports);
        std::ofstream js(output_prefix + ".json");
        js << summary.dump(2) << "\n";
    }
    return 0;
}

int cmd_oracle(const std::string& setting_name, const std::string& cov_path, int p, int orders,
               const std::string& output, int runtime_q) {
    TrueSolution sol;
    if (!setting_name.empty()) {
        const auto setting = parse_setting(setting_name);
        if (!setting) {
            std::cerr << "unknown setting '" << setting_name
                      << "' (valid: low_dim, high_dim, runtime)\n";
            return 2;
        }
        auto [sigma, truth] = build_sigma(*setting, runtime_q);
        sol = orders > 0 ? true_directions(sigma, orders) : truth;
    } else {
        if (cov_path.empty() || p <= 0) {
            std::cerr << "oracle requires either --setting or (--cov and --p)\n";
            return 2;
        }
        DataMatrix cov = read_csv_file(cov_path);
        if (cov.rows() != cov.cols()) {
            std::cerr << "covariance CSV must be square (got " << cov.rows() << "x" << cov.cols()
                      << ")\n";
            return 2;
        }
        const double asym = (cov.values - cov.values.transpose()).cwiseAbs().maxCoeff();
        if (asym > 1e-8 * std::max(1.0, cov.values.cwiseAbs().maxCoeff())) {
            std::cerr << "covariance CSV is not symmetric (max asymmetry " << asym << ")\n";
            return 2;
        }
        const JointCovariance sigma = JointCovariance::from_full(cov.values, p);
        sol = true_directions(sigma, orders > 0 ? orders : 1);
    }

    json out;
    out["schema_version"] = kSchemaVersion;
    out["rhos"] = sol.rhos;
    json avecs = json::array(), bvecs = json::array();
    for (const auto& a : sol.a_vectors) avecs.push_back(vector_to_json(a));
    for (const auto& b : sol.b_vectors) bvecs.push_back(vector_to_json(b));
    out["a_vectors"] = avecs;
    out["b_vectors"] = bvecs;
    if (output.empty()) {
        std::cout << out.dump(2) << "\n";
    } else {
        std::ofstream f(output);
        f << out.dump(2) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Robust sparse maximum association between two multivariate data sets"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from a key=value config file");

    CommonFitOptions opt;

    // fit
    std::string x_path, y_path, output, init = "orthogonal";
    double test_fraction = 0.0;
    auto* fit_cmd = app.add_subcommand("fit", "Fit maximum association directions from two CSVs");
    fit_cmd->add_option("--x", x_path, "CSV with the x-side observations")->required();
    fit_cmd->add_option("--y", y_path, "CSV with the y-side observations")->required();
    fit_cmd->add_option("--estimator", opt.estimator, "pearson|spearman|kendall|ogk");
    fit_cmd->add_option("--orders", opt.orders, "Number of association orders K");
    fit_cmd->add_option("--alpha-a", opt.alpha_a, "Elastic-net mixing for a (1 = lasso-like)");
    fit_cmd->add_option("--alpha-b", opt.alpha_b, "Elastic-net mixing for b");
    fit_cmd->add_option("--ca", opt.ca, "Fixed sparsity bound c_a (omit to search)");
    fit_cmd->add_option("--cb", opt.cb, "Fixed sparsity bound c_b (omit to search)");
    fit_cmd->add_option("--budget", opt.budget, "Hyperparameter search budget N");
    fit_cmd->add_option("--seed", opt.seed, "RNG seed (full determinism)");
    fit_cmd->add_option("--output", output, "Write the JSON result here (default stdout)");
    fit_cmd->add_option("--test-fraction", test_fraction,
                        "Hold out this fraction for the out-of-sample residual score");
    fit_cmd->add_option("--init", init, "naive|orthogonal initialization for higher orders");
    fit_cmd->add_flag("--no-repair", opt.no_repair, "Skip the nearest-PD repair for rank estimators");
    add_optimizer_flags(fit_cmd, opt.settings);

    // simulate
    std::string setting_name = "low_dim", dist_name = "normal", output_prefix;
    int n = 100, replicates = 20, threads = 1, runtime_q = 50;
    double rate = 0.0, shift = 0.0;
    auto* sim_cmd = app.add_subcommand("simulate", "Run a replicated simulation scenario");
    sim_cmd->add_option("--setting", setting_name, "low_dim|high_dim|runtime");
    sim_cmd->add_option("--estimator", opt.estimator, "pearson|spearman|kendall|ogk");
    sim_cmd->add_option("--orders", opt.orders, "Number of association orders K");
    sim_cmd->add_option("--n", n, "Observations per replicate");
    sim_cmd->add_option("--replicates", replicates, "Number of replicates");
    sim_cmd->add_option("--contamination-rate", rate, "Fraction of rows replaced (<= 0.5)");
    sim_cmd->add_option("--contamination-shift", shift, "Mean shift of contaminated rows");
    sim_cmd->add_option("--distribution", dist_name, "normal|t3");
    sim_cmd->add_option("--seed", opt.seed, "Master seed");
    sim_cmd->add_option("--alpha-a", opt.alpha_a, "Elastic-net mixing for a");
    sim_cmd->add_option("--alpha-b", opt.alpha_b, "Elastic-net mixing for b");
    sim_cmd->add_option("--ca", opt.ca, "Fixed sparsity bound c_a (omit to search)");
    sim_cmd->add_option("--cb", opt.cb, "Fixed sparsity bound c_b (omit to search)");
    sim_cmd->add_option("--budget", opt.budget, "Hyperparameter search budget N");
    sim_cmd->add_option("--output-prefix", output_prefix,
                        "Write <prefix>.csv (per replicate) and <prefix>.json (summary)");
    sim_cmd->add_option("--threads", threads, "Replicate-level parallelism")
        ->envname("MAXASSOC_THREADS");
    sim_cmd->add_option("--init", init, "naive|orthogonal initialization");
    sim_cmd->add_option("--runtime-q", runtime_q, "q for the runtime setting");
    add_optimizer_flags(sim_cmd, opt.settings);

    // oracle
    std::string oracle_setting, cov_path, oracle_output;
    int p = 0, oracle_orders = 0;
    auto* oracle_cmd =
        app.add_subcommand("oracle", "Exact directions/associations from a known covariance");
    oracle_cmd->add_option("--setting", oracle_setting, "low_dim|high_dim|runtime");
    oracle_cmd->add_option("--cov", cov_path, "Square symmetric joint covariance CSV");
    oracle_cmd->add_option("--p", p, "Split: first p variables are the x side");
    oracle_cmd->add_option("--orders", oracle_orders, "Number of orders to extract");
    oracle_cmd->add_option("--output", oracle_output, "Write the JSON result here");
    oracle_cmd->add_option("--runtime-q", runtime_q, "q for the runtime setting");

    CLI11_PARSE(app, argc, argv);

    try {
        if (fit_cmd->parsed())
            return cmd_fit(x_path, y_path, opt, output, test_fraction, init);
        if (sim_cmd->parsed())
            return cmd_simulate(setting_name, opt, n, replicates, rate, shift, dist_name,
                                output_prefix, threads, init, runtime_q);
        if (oracle_cmd->parsed())
            return cmd_oracle(oracle_setting, cov_path, p, oracle_orders, oracle_output, runtime_q);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
