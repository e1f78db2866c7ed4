// coxmiss command-line tool.
#include "coxmiss/baselines.hpp"
#include "coxmiss/bootstrap_infer.hpp"
#include "coxmiss/dataset_io.hpp"
#include "coxmiss/em_fit.hpp"
#include "coxmiss/gaussian.hpp"
#include "coxmiss/lasso_path.hpp"
#include "coxmiss/parallel.hpp"
#include "coxmiss/sim_bench.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

using namespace coxmiss;
using nlohmann::json;

namespace {

struct CommonFlags {
    std::string data;
    std::string out;
    std::string config;
    int workers = 0;
    std::uint64_t seed = 20240101;
    int quad_order = 30;
    double tol = 1e-5;
    int max_iter = 500;
    bool json_out = false;
    bool verbose = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool data_required) {
    auto* d = cmd->add_option("--data", f.data, "input CSV (time, status, covariates; NA or empty = missing)");
    if (data_required) d->required();
    cmd->add_option("--out", f.out, "output file");
    cmd->add_option("--config", f.config, "key = value config file; its values override flags");
    cmd->add_option("--workers", f.workers, "worker threads (default: COXMISS_WORKERS or all cores)");
    cmd->add_option("--seed", f.seed, "random seed");
    cmd->add_option("--quad-order", f.quad_order, "Gauss-Hermite nodes")->check(CLI::Range(1, 400));
    cmd->add_option("--tol", f.tol, "EM convergence tolerance")->check(CLI::PositiveNumber);
    cmd->add_option("--max-iter", f.max_iter, "EM iteration limit")->check(CLI::PositiveNumber);
    cmd->add_flag("--json", f.json_out, "print JSON instead of a table");
    cmd->add_flag("--verbose", f.verbose, "log EM iterations to stderr");
}

FitConfig fit_config(const CommonFlags& f) {
    FitConfig c;
    c.quad_order = f.quad_order;
    c.tol = f.tol;
    c.max_iter = f.max_iter;
    c.workers = resolve_workers(f.workers);
    c.verbose = f.verbose;
    return c;
}

// Config keys shared by fit-type commands.
void apply_fit_keys(const std::map<std::string, std::string>& kv, FitConfig& fc, LassoConfig* lc, BootstrapConfig* bc) {
    for (const auto& [key, value] : kv) {
        try {
            if (key == "quadrature.order") fc.quad_order = std::stoi(value);
            else if (key == "em.max_iter") fc.max_iter = std::stoi(value);
            else if (key == "em.tol") fc.tol = std::stod(value);
            else if (key == "em.step_halving_max") fc.step_halving_max = std::stoi(value);
            else if (key == "workers") fc.workers = resolve_workers(std::stoi(value));
            else if (lc && key == "lasso.n_gammas") lc->n_gammas = std::stoi(value);
            else if (lc && key == "lasso.gamma_min_ratio") lc->gamma_min_ratio = std::stod(value);
            else if (lc && key == "lasso.cd_tol") lc->cd_tol = std::stod(value);
            else if (lc && key == "lasso.standardize") lc->standardize = value == "true" || value == "1";
            else if (bc && key == "bootstrap") bc->B = std::stoi(value);
            else if (bc && key == "ci_level") bc->level = std::stod(value);
            else if (bc && key == "seed") bc->seed = std::stoull(value);
            else throw Error(ErrorCode::schema_error, "unknown config key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw Error(ErrorCode::validation_error, "bad value for config key '" + key + "'");
        } catch (const std::out_of_range&) {
            throw Error(ErrorCode::validation_error, "bad value for config key '" + key + "'");
        }
    }
}

std::map<std::string, std::string> load_config(const std::string& path) {
    if (path.empty()) return {};
    return parse_key_values(read_file(path));
}

void emit(const std::string& path, const std::string& contents) {
    if (path.empty()) std::cout << contents;
    else write_file_atomic(path, contents);
}

std::vector<std::string> split_names(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

// Gaussian log-density of the conditioning columns under the fitted marginal.
double conditioning_marginal(const Dataset& data, const ParameterSet& params, const std::vector<int>& cols) {
    if (cols.empty()) return 0.0;
    const auto k = static_cast<Eigen::Index>(cols.size());
    Vec mu(k);
    Mat s(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
        mu(a) = params.mu(cols[static_cast<size_t>(a)]);
        for (Eigen::Index b = 0; b < k; ++b) s(a, b) = params.sigma(cols[static_cast<size_t>(a)], cols[static_cast<size_t>(b)]);
    }
    const auto llt = robust_llt(s, "conditioning columns");
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    double total = 0.0;
    for (const auto& subj : data.subjects) {
        const Vec x = subj.x_full();
        Vec r(k);
        for (Eigen::Index a = 0; a < k; ++a) r(a) = x(cols[static_cast<size_t>(a)]) - mu(a);
        const Vec z = llt.matrixL().solve(r);
        total += -0.5 * (static_cast<double>(k) * std::log(2.0 * M_PI) + logdet + z.squaredNorm());
    }
    return total;
}

std::vector<int> column_indices(const Dataset& data, const std::vector<std::string>& names) {
    std::vector<int> idx;
    for (const auto& n : names) {
        const auto it = std::find(data.names.begin(), data.names.end(), n);
        idx.push_back(static_cast<int>(it - data.names.begin()));
    }
    return idx;
}

void print_warnings(const ParsedDataset& pd) {
    for (const auto& w : pd.warnings) std::cerr << "warning: " << w << '\n';
}

std::string missing_summary(const ParsedDataset& pd) {
    std::ostringstream out;
    out << "missing fraction:";
    for (int k = 0; k < pd.data.p; ++k) {
        char buf[32];
        std::snprintf(buf, sizeof buf, " %s=%.3f", pd.data.names[static_cast<size_t>(k)].c_str(), pd.missing_fraction[static_cast<size_t>(k)]);
        out << buf;
    }
    return out.str();
}

std::string coef_table(const std::vector<std::string>& names, const Vec& beta, const std::optional<Vec>& se,
                       const std::optional<Vec>& lo, const std::optional<Vec>& hi) {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-16s %12s", "covariate", "beta");
    out << buf;
    if (se) out << "           se     ci_lower     ci_upper";
    out << '\n';
    for (size_t k = 0; k < names.size(); ++k) {
        const auto j = static_cast<Eigen::Index>(k);
        std::snprintf(buf, sizeof buf, "%-16s %12.6f", names[k].c_str(), beta(j));
        out << buf;
        if (se) {
            std::snprintf(buf, sizeof buf, " %12.6f %12.6f %12.6f", (*se)(j), (*lo)(j), (*hi)(j));
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

FitOutput make_output(const Dataset& data, const FitResult& fit, const std::vector<std::string>& condition_on) {
    FitOutput out;
    out.names = data.names;
    out.params = fit.params;
    out.iterations = fit.iterations;
    out.converged = fit.converged;
    out.loglik_trace = fit.loglik_trace;
    out.n = data.n();
    out.n_events = data.n_events();
    out.condition_on = condition_on;
    out.marginal_loglik = conditioning_marginal(data, fit.params, column_indices(data, condition_on));
    out.loglik = fit.loglik - out.marginal_loglik;
    return out;
}

void report_fit(const FitOutput& out, const CommonFlags& f) {
    const std::string doc = fit_output_json(out);
    if (!f.out.empty()) write_file_atomic(f.out, doc);
    if (f.json_out) {
        std::cout << doc;
        return;
    }
    std::cout << coef_table(out.names, out.params.beta, out.se, out.ci_lower, out.ci_upper);
    std::printf("loglik %.6f  iterations %d  converged %s\n", out.loglik, out.iterations, out.converged ? "yes" : "no");
}

int cmd_fit(const CommonFlags& f, const std::string& condition_on, int boot_b, double ci_level) {
    const auto cond = split_names(condition_on);
    const ParsedDataset pd = parse_dataset(f.data, cond);
    print_warnings(pd);
    if (!f.json_out) std::cerr << missing_summary(pd) << '\n';
    FitConfig fc = fit_config(f);
    BootstrapConfig bc;
    bc.B = boot_b;
    bc.level = ci_level;
    bc.seed = f.seed;
    apply_fit_keys(load_config(f.config), fc, nullptr, &bc);
    bc.workers = fc.workers;
    const FitResult fit = fit_npmle(pd.data, fc);
    FitOutput out = make_output(pd.data, fit, cond);
    if (bc.B > 0) {
        const BootstrapResult br = bootstrap(pd.data, fc, bc, fit);
        out.se = br.se;
        out.ci_lower = br.ci_lower;
        out.ci_upper = br.ci_upper;
        out.ci_level = bc.level;
    }
    report_fit(out, f);
    return 0;
}

std::vector<double> parse_grid(const std::string& s) {
    std::vector<double> g;
    for (const auto& item : split_names(s)) {
        try {
            g.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw Error(ErrorCode::validation_error, "bad gamma value '" + item + "'");
        }
        if (!(g.back() > 0.0)) throw Error(ErrorCode::validation_error, "gamma values must be positive");
    }
    return g;
}

int cmd_fit_lasso(const CommonFlags& f, const std::string& condition_on, const std::string& grid) {
    const auto cond = split_names(condition_on);
    const ParsedDataset pd = parse_dataset(f.data, cond);
    print_warnings(pd);
    LassoConfig lc;
    lc.fit = fit_config(f);
    if (!grid.empty()) lc.gammas = parse_grid(grid);
    apply_fit_keys(load_config(f.config), lc.fit, &lc, nullptr);
    const LassoPath path = tune_path(pd.data, lc);
    FitOutput out = make_output(pd.data, path.selected_refit(), cond);
    out.kind = "lasso";
    out.path = path;
    const std::string doc = fit_output_json(out);
    if (!f.out.empty()) write_file_atomic(f.out, doc);
    if (f.json_out) {
        std::cout << doc;
        return 0;
    }
    std::printf("%12s %6s %14s %14s\n", "gamma", "size", "loglik", "bic");
    for (size_t i = 0; i < path.points.size(); ++i) {
        const auto& pt = path.points[i];
        if (pt.failed) {
            std::printf("%12.6g %6s %14s %14s  (%s)\n", pt.gamma, "-", "failed", "-", pt.error.c_str());
            continue;
        }
        std::printf("%12.6g %6zu %14.6f %14.6f%s\n", pt.gamma, pt.active.size(), pt.loglik, pt.bic,
                    static_cast<int>(i) == path.selected ? "  *" : "");
    }
    std::cout << coef_table(out.names, out.params.beta, std::nullopt, std::nullopt, std::nullopt);
    return 0;
}

int cmd_bootstrap(const CommonFlags& f, int boot_b, double ci_level) {
    const ParsedDataset pd = parse_dataset(f.data);
    print_warnings(pd);
    FitConfig fc = fit_config(f);
    BootstrapConfig bc;
    bc.B = boot_b > 0 ? boot_b : 500;
    bc.level = ci_level;
    bc.seed = f.seed;
    apply_fit_keys(load_config(f.config), fc, nullptr, &bc);
    bc.workers = fc.workers;
    const FitResult fit = fit_npmle(pd.data, fc);
    const BootstrapResult br = bootstrap(pd.data, fc, bc, fit);
    json j = {{"schema", "coxmiss.bootstrap/1"},
              {"names", pd.data.names},
              {"estimate", std::vector<double>(br.estimate.data(), br.estimate.data() + br.estimate.size())},
              {"se", std::vector<double>(br.se.data(), br.se.data() + br.se.size())},
              {"ci_lower", std::vector<double>(br.ci_lower.data(), br.ci_lower.data() + br.ci_lower.size())},
              {"ci_upper", std::vector<double>(br.ci_upper.data(), br.ci_upper.data() + br.ci_upper.size())},
              {"normal_lower", std::vector<double>(br.normal_lower.data(), br.normal_lower.data() + br.normal_lower.size())},
              {"normal_upper", std::vector<double>(br.normal_upper.data(), br.normal_upper.data() + br.normal_upper.size())},
              {"ci_level", bc.level},
              {"B", br.n_replicates},
              {"failed", br.n_failed},
              {"seed", bc.seed}};
    const std::string doc = j.dump(2) + "\n";
    if (!f.out.empty()) write_file_atomic(f.out, doc);
    if (f.json_out) std::cout << doc;
    else {
        std::cout << coef_table(pd.data.names, br.estimate, br.se, br.ci_lower, br.ci_upper);
        std::printf("replicates %d  failed %d\n", br.n_replicates, br.n_failed);
    }
    return 0;
}

int cmd_simulate(const CommonFlags& f, const std::string& design_name) {
    SimDesign design = design_preset(design_name);
    BenchOptions opt;
    opt.seed = f.seed;
    apply_config(load_config(f.config), design, opt);
    const Dataset data = gen_dataset(design, opt.seed);
    const std::string csv = dataset_csv(data);
    if (!f.json_out) {
        emit(f.out, csv);
        return 0;
    }
    if (!f.out.empty()) write_file_atomic(f.out, csv);
    int incomplete = 0;
    for (const auto& s : data.subjects) incomplete += !s.mask.complete();
    json j = {{"schema", "coxmiss.simulate/1"},
              {"design", design.name},
              {"seed", opt.seed},
              {"n", data.n()},
              {"p", data.p},
              {"n_events", data.n_events()},
              {"n_incomplete", incomplete}};
    if (f.out.empty()) j["csv"] = csv;
    std::cout << j.dump(2) << '\n';
    return 0;
}

int cmd_benchmark(const CommonFlags& f, const std::string& design_name, int replicates, const std::string& methods,
                  int boot_b, int boot_reps, double ci_level) {
    SimDesign design = design_preset(design_name);
    BenchOptions opt;
    opt.methods = default_methods(design);
    if (!methods.empty()) {
        opt.methods.clear();
        for (const auto& m : split_names(methods)) opt.methods.push_back(parse_method(m));
    }
    opt.replicates = replicates;
    opt.seed = f.seed;
    opt.workers = resolve_workers(f.workers);
    opt.bootstrap_B = boot_b;
    opt.bootstrap_replicates = boot_reps;
    opt.ci_level = ci_level;
    opt.fit = fit_config(f);
    opt.lasso.fit = opt.fit;
    apply_config(load_config(f.config), design, opt);
    opt.workers = resolve_workers(opt.workers);

    const ReplicateReport report = run_benchmark(design, opt);
    const std::string csv = report_csv(report);
    const std::string js = report_json(report);
    if (!f.out.empty()) {
        write_file_atomic(f.out + ".csv", csv);
        write_file_atomic(f.out + ".json", js);
        write_file_atomic(f.out + ".cumhaz.dat", cumhaz_curve_data(report));
        char buf[128];
        std::snprintf(buf, sizeof buf, "wall_seconds %.3f\nworkers %d\n", report.wall_seconds, opt.workers);
        write_file_atomic(f.out + ".log", buf);
    }
    std::cout << (f.json_out ? js : csv);
    return 0;
}

int cmd_predict(const CommonFlags& f, const std::string& model_path, bool want_cindex) {
    const FitOutput model = parse_fit_output(read_file(model_path));
    const ParsedDataset pd = parse_dataset(f.data);
    const Dataset& data = pd.data;
    if (data.names != model.names) throw Error(ErrorCode::schema_error, "dataset columns do not match the model");
    const int n = data.n();
    Vec score(n);
    for (int i = 0; i < n; ++i) {
        const auto& s = data.subjects[static_cast<size_t>(i)];
        Vec x = s.x_full();
        if (!s.mask.complete()) {
            const ConditionalNormal c = conditional_mvn(model.params.mu, model.params.sigma, s.mask, s.x_obs);
            for (size_t k = 0; k < s.mask.missing.size(); ++k) x(s.mask.missing[k]) = c.mean(static_cast<Eigen::Index>(k));
        }
        score(i) = x.dot(model.params.beta);
    }
    std::optional<double> ci;
    if (want_cindex) {
        Vec y(n);
        std::vector<int> delta(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            y(i) = data.subjects[static_cast<size_t>(i)].y;
            delta[static_cast<size_t>(i)] = data.subjects[static_cast<size_t>(i)].delta;
        }
        ci = c_index(score, y, delta);
    }
    std::ostringstream csv;
    csv << "row,score\n";
    char buf[64];
    for (int i = 0; i < n; ++i) {
        std::snprintf(buf, sizeof buf, "%d,%.17g\n", i + 1, score(i));
        csv << buf;
    }
    if (!f.out.empty()) write_file_atomic(f.out, csv.str());
    if (f.json_out) {
        json j = {{"schema", "coxmiss.predict/1"}, {"scores", std::vector<double>(score.data(), score.data() + n)}};
        if (ci) j["c_index"] = *ci;
        std::cout << j.dump(2) << '\n';
    } else {
        if (f.out.empty()) std::cout << csv.str();
        if (ci) std::printf("c-index %.6f\n", *ci);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cox regression with missing Gaussian covariates: NPMLE, lasso, simulation"};
    app.require_subcommand(1);

    CommonFlags fit_f, lasso_f, sim_f, bench_f, boot_f, pred_f;
    std::string fit_cond, lasso_cond, grid, design_sim = "table1", design_bench = "table1", methods, model;
    int fit_boot = 0, boot_b = 500, bench_boot = 0, bench_boot_reps = -1, replicates = 200;
    double fit_level = 0.95, boot_level = 0.95, bench_level = 0.95;
    bool cindex = false;

    auto* fit = app.add_subcommand("fit", "NPMLE fit");
    add_common(fit, fit_f, true);
    fit->add_option("--condition-on", fit_cond, "comma-separated complete columns entered only through beta");
    fit->add_option("--bootstrap", fit_boot, "bootstrap replicates (0 = none)")->check(CLI::NonNegativeNumber);
    fit->add_option("--ci-level", fit_level, "confidence level")->check(CLI::Range(0.0, 1.0));

    auto* lasso = app.add_subcommand("fit-lasso", "penalized NPMLE path with BIC selection");
    add_common(lasso, lasso_f, true);
    lasso->add_option("--condition-on", lasso_cond, "comma-separated complete columns entered only through beta");
    lasso->add_option("--gamma-grid", grid, "comma-separated penalty values (default: 50-point path)");

    auto* sim = app.add_subcommand("simulate", "generate a dataset from a design");
    add_common(sim, sim_f, false);
    sim->add_option("--design", design_sim, "table1 | table2 | table3 | table4");

    auto* bench = app.add_subcommand("benchmark", "simulation study; writes <out>.csv/.json/.cumhaz.dat");
    add_common(bench, bench_f, false);
    bench->add_option("--design", design_bench, "table1 | table2 | table3 | table4");
    bench->add_option("--replicates", replicates, "simulation replicates")->check(CLI::PositiveNumber);
    bench->add_option("--methods", methods, "npmle,penalized-npmle,complete-case,single-imputation");
    bench->add_option("--bootstrap", bench_boot, "bootstrap replicates per simulation replicate");
    bench->add_option("--bootstrap-replicates", bench_boot_reps, "bootstrap only the first k replicates");
    bench->add_option("--ci-level", bench_level, "confidence level")->check(CLI::Range(0.0, 1.0));

    auto* boot = app.add_subcommand("bootstrap", "bootstrap standard errors and intervals");
    add_common(boot, boot_f, true);
    boot->add_option("--bootstrap", boot_b, "replicates")->check(CLI::PositiveNumber);
    boot->add_option("--ci-level", boot_level, "confidence level")->check(CLI::Range(0.0, 1.0));

    auto* pred = app.add_subcommand("predict", "risk scores from a fitted model");
    add_common(pred, pred_f, true);
    pred->add_option("--model", model, "fit output JSON")->required();
    pred->add_flag("--c-index", cindex, "also report the concordance index");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ErrorCode::validation_error);
    }

    try {
        if (*fit) return cmd_fit(fit_f, fit_cond, fit_boot, fit_level);
        if (*lasso) return cmd_fit_lasso(lasso_f, lasso_cond, grid);
        if (*sim) return cmd_simulate(sim_f, design_sim);
        if (*bench) return cmd_benchmark(bench_f, design_bench, replicates, methods, bench_boot, bench_boot_reps, bench_level);
        if (*boot) return cmd_bootstrap(boot_f, boot_b, boot_level);
        if (*pred) return cmd_predict(pred_f, model, cindex);
    } catch (const Error& e) {
        std::cerr << "error [" << error_code_name(e.code()) << "]: " << e.what() << '\n';
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
