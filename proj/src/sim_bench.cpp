#include "coxmiss/sim_bench.hpp"

#include "coxmiss/bootstrap_infer.hpp"
#include "coxmiss/parallel.hpp"
#include "coxmiss/rng.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

namespace coxmiss {

const char* mechanism_name(Mechanism m) {
    switch (m) {
        case Mechanism::none: return "none";
        case Mechanism::mcar: return "MCAR";
        case Mechanism::mar_case_cohort: return "MAR";
    }
    return "?";
}

const char* marginal_name(Marginal m) { return m == Marginal::normal ? "normal" : "t5"; }

const char* method_name(Method m) {
    switch (m) {
        case Method::npmle: return "npmle";
        case Method::penalized_npmle: return "penalized_npmle";
        case Method::complete_case: return "complete_case";
        case Method::single_imputation: return "single_imputation";
    }
    return "?";
}

Method parse_method(const std::string& s) {
    for (Method m : {Method::npmle, Method::penalized_npmle, Method::complete_case, Method::single_imputation}) {
        std::string name = method_name(m);
        std::string dashed = name;
        std::replace(dashed.begin(), dashed.end(), '_', '-');
        if (s == name || s == dashed) return m;
    }
    throw Error(ErrorCode::validation_error, "unknown method '" + s + "'");
}

void SimDesign::validate() const {
    if (n < 2 || p < 1) throw Error(ErrorCode::design_error, "design needs n >= 2 and p >= 1");
    if (beta.size() != p || mu.size() != p || sigma.rows() != p || sigma.cols() != p)
        throw Error(ErrorCode::design_error, "design dimensions disagree with p");
    if (!(p_missing >= 0.0 && p_missing < 1.0)) throw Error(ErrorCode::design_error, "p_missing must lie in [0, 1)");
    if (!(hazard_scale > 0.0 && hazard_shape > 0.0)) throw Error(ErrorCode::design_error, "hazard parameters must be positive");
    if (!(censor_rate > 0.0 && censor_cap > 0.0)) throw Error(ErrorCode::design_error, "censoring parameters must be positive");
    if (!(subcohort_fraction >= 0.0 && subcohort_fraction <= 1.0))
        throw Error(ErrorCode::design_error, "subcohort fraction must lie in [0, 1]");
    for (int j : missing_coords)
        if (j < 0 || j >= p) throw Error(ErrorCode::design_error, "missing coordinate out of range");
    if (mechanism != Mechanism::none && p_missing > 0.0 && missing_coords.empty())
        throw Error(ErrorCode::design_error, "missingness requested but no coordinates may go missing");
    Eigen::LLT<Mat> llt(sigma);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::design_error, "design covariance is not positive definite");
}

Mat ar_covariance(int p, double rho) {
    Mat s(p, p);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) s(i, j) = std::pow(rho, std::abs(i - j));
    return s;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) out.push_back(item);
    return out;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& s, const std::string& key) {
    try {
        size_t used = 0;
        const double v = std::stod(s, &used);
        if (trim(s.substr(used)).empty()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::validation_error, "bad number '" + s + "' for " + key);
}

int to_int(const std::string& s, const std::string& key) {
    const double v = to_double(s, key);
    if (v != std::floor(v)) throw Error(ErrorCode::validation_error, "expected an integer for " + key);
    return static_cast<int>(v);
}

bool to_bool(const std::string& s, const std::string& key) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw Error(ErrorCode::validation_error, "expected a boolean for " + key);
}

// "0.25*4,0*92,0.25*4"
Vec parse_vector(const std::string& s, const std::string& key) {
    std::vector<double> v;
    for (const auto& raw : split(s, ',')) {
        const std::string item = trim(raw);
        if (item.empty()) continue;
        const auto star = item.find('*');
        if (star == std::string::npos) {
            v.push_back(to_double(item, key));
        } else {
            const double x = to_double(item.substr(0, star), key);
            const int k = to_int(item.substr(star + 1), key);
            v.insert(v.end(), static_cast<size_t>(std::max(k, 0)), x);
        }
    }
    return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// 1-based "1,3,5" or ranges "1-99:2" (start-end:step).
std::vector<int> parse_coords(const std::string& s, const std::string& key) {
    std::vector<int> out;
    for (const auto& raw : split(s, ',')) {
        const std::string item = trim(raw);
        if (item.empty()) continue;
        const auto dash = item.find('-');
        if (dash == std::string::npos) {
            out.push_back(to_int(item, key) - 1);
            continue;
        }
        int step = 1;
        std::string rest = item.substr(dash + 1);
        const auto colon = rest.find(':');
        if (colon != std::string::npos) {
            step = to_int(rest.substr(colon + 1), key);
            rest = rest.substr(0, colon);
        }
        if (step < 1) throw Error(ErrorCode::validation_error, "bad step in " + key);
        for (int j = to_int(item.substr(0, dash), key); j <= to_int(rest, key); j += step) out.push_back(j - 1);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace

Mat parse_sigma_spec(const std::string& spec, int p) {
    const auto colon = spec.find(':');
    const std::string kind = spec.substr(0, colon);
    const std::string args = colon == std::string::npos ? "" : spec.substr(colon + 1);
    if (kind == "identity") return Mat::Identity(p, p);
    if (kind == "ar") return ar_covariance(p, to_double(args, "sigma"));
    if (kind == "block_ar") {
        Mat s = Mat::Zero(p, p);
        int at = 0;
        for (const auto& block : split(args, ',')) {
            const auto c = block.find(':');
            if (c == std::string::npos) throw Error(ErrorCode::validation_error, "block_ar blocks are size:rho");
            const int size = to_int(block.substr(0, c), "sigma");
            if (size < 1 || at + size > p) throw Error(ErrorCode::design_error, "block_ar block sizes exceed p");
            s.block(at, at, size, size) = ar_covariance(size, to_double(block.substr(c + 1), "sigma"));
            at += size;
        }
        if (at != p) throw Error(ErrorCode::design_error, "block_ar block sizes must sum to p");
        return s;
    }
    throw Error(ErrorCode::validation_error, "unknown covariance spec '" + spec + "'");
}

SimDesign design_preset(const std::string& name) {
    SimDesign d;
    d.name = name;
    if (name == "table1" || name == "table2" || name == "table4") {
        d.n = 500;
        d.p = 4;
        d.sigma_spec = "ar:0.5";
        d.beta = Vec::Constant(4, 0.5);
        d.censor_rate = 0.03;
        d.missing_coords = {0, 1};
        d.mechanism = name == "table2" ? Mechanism::mar_case_cohort : Mechanism::mcar;
        d.p_missing = name == "table2" ? 0.4 : 0.2;
        d.marginal = name == "table4" ? Marginal::t5 : Marginal::normal;
    } else if (name == "table3") {
        d.n = 1000;
        d.p = 100;
        d.sigma_spec = "block_ar:50:0.2,50:0.5";
        d.beta = Vec::Zero(100);
        d.beta.head(4).setConstant(0.25);
        d.beta.tail(4).setConstant(0.25);
        d.censor_rate = 0.035;
        for (int j = 0; j < 100; j += 2) d.missing_coords.push_back(j);
        d.mechanism = Mechanism::mcar;
        d.p_missing = 0.2;
    } else {
        throw Error(ErrorCode::validation_error, "unknown design '" + name + "'");
    }
    d.mu = Vec::Zero(d.p);
    d.sigma = parse_sigma_spec(d.sigma_spec, d.p);
    return d;
}

std::vector<std::string> preset_names() { return {"table1", "table2", "table3", "table4"}; }

namespace {

std::vector<int> sample_without_replacement(std::vector<int> pool, size_t k, Rng& rng) {
    if (k > pool.size()) throw Error(ErrorCode::design_error, "cannot sample more subjects than available");
    for (size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace

SimulatedData simulate(const SimDesign& design, std::uint64_t seed) {
    design.validate();
    const int n = design.n;
    const int p = design.p;
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::exponential_distribution<double> cens(design.censor_rate);

    const Mat l = Eigen::LLT<Mat>(design.sigma).matrixL();
    SimulatedData out;
    out.x.resize(n, p);
    Vec z(p);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) z(j) = normal(rng);
        out.x.row(i) = (design.mu + l * z).transpose();
    }
    if (design.marginal == Marginal::t5) {
        const boost::math::normal phi;
        const boost::math::students_t t5(5.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < p; ++j) {
                const double sd = std::sqrt(design.sigma(j, j));
                const double u = boost::math::cdf(phi, (out.x(i, j) - design.mu(j)) / sd);
                out.x(i, j) = design.mu(j) + sd * boost::math::quantile(t5, u);
            }
    }

    out.event_time.resize(n);
    Dataset& data = out.data;
    data.p = p;
    for (int j = 0; j < p; ++j) data.names.push_back("x" + std::to_string(j + 1));
    data.subjects.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double u = unif(rng);
        const double lin = out.x.row(i).dot(design.beta);
        const double t = std::pow(-std::log1p(-u) / (design.hazard_scale * std::exp(lin)), 1.0 / design.hazard_shape);
        const double c = std::min(cens(rng), design.censor_cap);
        out.event_time(i) = t;
        auto& s = data.subjects[static_cast<size_t>(i)];
        s.y = std::min(t, c);
        s.delta = t <= c ? 1 : 0;
    }

    std::vector<bool> incomplete(static_cast<size_t>(n), false);
    const auto n_missing = static_cast<size_t>(std::lround(design.p_missing * n));
    if (design.mechanism == Mechanism::mcar && n_missing > 0) {
        std::vector<int> all(static_cast<size_t>(n));
        std::iota(all.begin(), all.end(), 0);
        for (int i : sample_without_replacement(all, n_missing, rng)) incomplete[static_cast<size_t>(i)] = true;
    } else if (design.mechanism == Mechanism::mar_case_cohort) {
        // Case-cohort: subcohort observed, then events outside it, then
        // non-events, until the observed count reaches n - n_missing.
        std::vector<int> all(static_cast<size_t>(n));
        std::iota(all.begin(), all.end(), 0);
        const auto n_sub = static_cast<size_t>(std::lround(design.subcohort_fraction * n));
        const auto n_obs = static_cast<size_t>(n) - n_missing;
        if (n_sub > n_obs)
            throw Error(ErrorCode::design_error, "subcohort is larger than the number of observed subjects");
        out.subcohort.assign(static_cast<size_t>(n), false);
        for (int i : sample_without_replacement(all, n_sub, rng)) out.subcohort[static_cast<size_t>(i)] = true;
        std::vector<int> events, others;
        for (int i = 0; i < n; ++i) {
            if (out.subcohort[static_cast<size_t>(i)]) continue;
            (data.subjects[static_cast<size_t>(i)].delta == 1 ? events : others).push_back(i);
        }
        std::vector<bool> observed(out.subcohort);
        size_t need = n_obs - n_sub;
        const size_t from_events = std::min(need, events.size());
        for (int i : sample_without_replacement(events, from_events, rng)) observed[static_cast<size_t>(i)] = true;
        need -= from_events;
        if (need > others.size()) throw Error(ErrorCode::design_error, "MAR design cannot reach the requested missing proportion");
        for (int i : sample_without_replacement(others, need, rng)) observed[static_cast<size_t>(i)] = true;
        for (int i = 0; i < n; ++i) incomplete[static_cast<size_t>(i)] = !observed[static_cast<size_t>(i)];
    }

    std::vector<bool> pattern(static_cast<size_t>(p), false);
    for (int j : design.missing_coords) pattern[static_cast<size_t>(j)] = true;
    const MissingMask partial(pattern);
    const MissingMask full = MissingMask::none(p);
    for (int i = 0; i < n; ++i) {
        auto& s = data.subjects[static_cast<size_t>(i)];
        s.mask = incomplete[static_cast<size_t>(i)] ? partial : full;
        s.x_obs.resize(s.mask.n_observed());
        for (int k = 0; k < s.mask.n_observed(); ++k) s.x_obs(k) = out.x(i, s.mask.observed[static_cast<size_t>(k)]);
    }
    return out;
}

Dataset gen_dataset(const SimDesign& design, std::uint64_t seed) { return simulate(design, seed).data; }

SelectionMetrics selection_metrics(const Vec& beta_hat, const Vec& beta_true) {
    if (beta_hat.size() != beta_true.size()) throw Error(ErrorCode::contract_violation, "selection_metrics: length mismatch");
    int truth = 0, selected = 0, hit = 0;
    for (Eigen::Index j = 0; j < beta_hat.size(); ++j) {
        const bool s = beta_hat(j) != 0.0;
        const bool t = beta_true(j) != 0.0;
        truth += t;
        selected += s;
        hit += s && t;
    }
    SelectionMetrics m;
    m.tpr = truth > 0 ? static_cast<double>(hit) / truth : 1.0;
    m.fdr = static_cast<double>(selected - hit) / std::max(selected, 1);
    m.mse = (beta_hat - beta_true).squaredNorm();
    return m;
}

double c_index(const Vec& scores, const Vec& y, const std::vector<int>& delta) {
    const auto n = scores.size();
    if (y.size() != n || static_cast<Eigen::Index>(delta.size()) != n)
        throw Error(ErrorCode::contract_violation, "c_index: length mismatch");
    double concordant = 0.0;
    long usable = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (delta[static_cast<size_t>(i)] != 1) continue;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (!(y(i) < y(j))) continue;
            ++usable;
            if (scores(i) > scores(j)) concordant += 1.0;
            else if (scores(i) == scores(j)) concordant += 0.5;
        }
    }
    if (usable == 0) throw Error(ErrorCode::validation_error, "c_index: no comparable pairs");
    return concordant / static_cast<double>(usable);
}

std::vector<Method> default_methods(const SimDesign& design) {
    if (design.name == "table3") return {Method::penalized_npmle, Method::complete_case, Method::single_imputation};
    return {Method::npmle, Method::complete_case, Method::single_imputation};
}

namespace {

Vec curve(const Baseline& b, const std::vector<double>& times) {
    Vec v(static_cast<Eigen::Index>(times.size()));
    for (size_t k = 0; k < times.size(); ++k) v(static_cast<Eigen::Index>(k)) = cumulative_hazard(b, times[k]);
    return v;
}

bool penalized_run(const BenchOptions& o) {
    return std::find(o.methods.begin(), o.methods.end(), Method::penalized_npmle) != o.methods.end();
}

constexpr std::uint64_t kReplicateStream = 0x5EED;
constexpr std::uint64_t kBootstrapStream = 0xB00;

}  // namespace

ReplicateOutcome run_replicate(const SimDesign& design, const BenchOptions& options, int index) {
    ReplicateOutcome r;
    r.index = index;
    r.seed = derive_seed(options.seed, kReplicateStream, static_cast<std::uint64_t>(index));
    const Dataset data = gen_dataset(design, r.seed);
    int cens = 0, miss = 0;
    for (const auto& s : data.subjects) {
        cens += s.delta == 0;
        miss += !s.mask.complete();
    }
    r.censoring = static_cast<double>(cens) / data.n();
    r.missing = static_cast<double>(miss) / data.n();

    FitConfig fc = options.fit;
    fc.workers = 1;
    LassoConfig lc = options.lasso;
    lc.fit = fc;
    const bool penalized = penalized_run(options);

    for (Method m : options.methods) {
        MethodEstimate est;
        try {
            switch (m) {
                case Method::npmle: {
                    const FitResult fit = fit_npmle(data, fc);
                    est.beta = fit.params.beta;
                    est.cumhaz = curve(fit.params.baseline, options.curve_times);
                    est.max_ascent_drop = fit.max_ascent_drop;
                    est.iterations = fit.iterations;
                    est.converged = fit.converged;
                    const bool boot = options.bootstrap_B > 0 &&
                                      (options.bootstrap_replicates < 0 || index < options.bootstrap_replicates);
                    if (boot) {
                        BootstrapConfig bc;
                        bc.B = options.bootstrap_B;
                        bc.level = options.ci_level;
                        bc.seed = derive_seed(options.seed, kBootstrapStream, static_cast<std::uint64_t>(index));
                        bc.workers = 1;
                        const BootstrapResult br = bootstrap(data, fc, bc, fit);
                        est.has_bootstrap = true;
                        est.se = br.se;
                        est.ci_lower = br.ci_lower;
                        est.ci_upper = br.ci_upper;
                    }
                    break;
                }
                case Method::penalized_npmle: {
                    const LassoPath path = tune_path(data, lc);
                    const FitResult& refit = path.selected_refit();
                    est.beta = refit.params.beta;
                    est.cumhaz = curve(refit.params.baseline, options.curve_times);
                    for (const auto& pt : path.points) {
                        est.max_ascent_drop = std::max(est.max_ascent_drop, pt.max_ascent_drop);
                        est.max_kkt = std::max(est.max_kkt, pt.max_kkt);
                        est.converged = est.converged && !pt.failed && pt.converged;
                    }
                    for (const auto& f : path.refits) est.converged = est.converged && f.converged;
                    est.iterations = static_cast<int>(path.points.size());
                    break;
                }
                case Method::complete_case:
                case Method::single_imputation: {
                    const CompleteDataset cd = m == Method::complete_case ? complete_rows(data) : single_impute(data);
                    const CoxFit fit = penalized ? cox_lasso_path(cd, options.cox_path).refit : cox_fit(cd);
                    est.beta = fit.beta;
                    est.cumhaz = curve(fit.baseline, options.curve_times);
                    est.iterations = fit.iterations;
                    break;
                }
            }
            est.ok = true;
        } catch (const Error& e) {
            est.ok = false;
            est.error = e.what();
        }
        r.methods.push_back(std::move(est));
    }
    return r;
}

ReplicateReport summarize(const SimDesign& design, const BenchOptions& options, std::vector<ReplicateOutcome> reps) {
    ReplicateReport report;
    report.design = design;
    report.options = options;
    const auto p = design.p;
    const auto nt = static_cast<Eigen::Index>(options.curve_times.size());
    double cens = 0.0;
    for (const auto& r : reps) cens += r.censoring;
    report.mean_censoring = reps.empty() ? 0.0 : cens / static_cast<double>(reps.size());

    for (size_t k = 0; k < options.methods.size(); ++k) {
        MethodSummary s;
        s.method = options.methods[k];
        std::vector<const MethodEstimate*> ok;
        for (const auto& r : reps) {
            const auto& e = r.methods[k];
            if (e.ok) ok.push_back(&e);
            else ++s.n_failed;
        }
        s.n_ok = static_cast<int>(ok.size());
        s.bias = Vec::Zero(p);
        s.se = Vec::Zero(p);
        s.cumhaz_mean = Vec::Zero(nt);
        if (!ok.empty()) {
            Vec mean = Vec::Zero(p);
            for (const auto* e : ok) {
                mean += e->beta;
                s.cumhaz_mean += e->cumhaz;
                const SelectionMetrics m = selection_metrics(e->beta, design.beta);
                s.tpr += m.tpr;
                s.fdr += m.fdr;
                s.mse += m.mse;
                s.max_ascent_drop = std::max(s.max_ascent_drop, e->max_ascent_drop);
                s.max_kkt = std::max(s.max_kkt, e->max_kkt);
                s.n_unconverged += !e->converged;
            }
            const double cnt = static_cast<double>(ok.size());
            mean /= cnt;
            s.cumhaz_mean /= cnt;
            s.tpr /= cnt;
            s.fdr /= cnt;
            s.mse /= cnt;
            s.bias = mean - design.beta;
            if (ok.size() > 1) {
                for (const auto* e : ok) s.se += (e->beta - mean).array().square().matrix();
                s.se = (s.se / (cnt - 1.0)).cwiseSqrt();
            }
            Vec see = Vec::Zero(p), cp = Vec::Zero(p);
            for (const auto* e : ok) {
                if (!e->has_bootstrap) continue;
                ++s.n_bootstrap;
                see += e->se;
                for (int j = 0; j < p; ++j)
                    cp(j) += (e->ci_lower(j) <= design.beta(j) && design.beta(j) <= e->ci_upper(j)) ? 1.0 : 0.0;
            }
            if (s.n_bootstrap > 0) {
                s.see = see / s.n_bootstrap;
                s.cp = cp / s.n_bootstrap;
            }
        }
        report.summaries.push_back(std::move(s));
    }
    report.replicates = std::move(reps);
    return report;
}

ReplicateReport run_benchmark(const SimDesign& design, const BenchOptions& options) {
    design.validate();
    if (options.replicates < 1) throw Error(ErrorCode::validation_error, "benchmark needs at least one replicate");
    if (options.methods.empty()) throw Error(ErrorCode::validation_error, "benchmark needs at least one method");
    const auto start = std::chrono::steady_clock::now();
    std::vector<ReplicateOutcome> reps(static_cast<size_t>(options.replicates));
    parallel_for(options.replicates, resolve_workers(options.workers),
                 [&](int i) { reps[static_cast<size_t>(i)] = run_replicate(design, options, i); });
    ReplicateReport report = summarize(design, options, std::move(reps));
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string setting_label(const SimDesign& d) {
    return "n=" + std::to_string(d.n) + " p_M=" + std::to_string(static_cast<int>(std::lround(100 * d.p_missing))) +
           "% " + mechanism_name(d.mechanism);
}

}  // namespace

std::string report_csv(const ReplicateReport& report) {
    std::ostringstream out;
    const auto& d = report.design;
    if (penalized_run(report.options)) {
        out << "n,pattern,p_missing,method,tpr,fdr,mse,n_ok,n_failed\n";
        for (const auto& s : report.summaries)
            out << d.n << ',' << mechanism_name(d.mechanism) << ',' << fmt(d.p_missing) << ',' << method_name(s.method)
                << ',' << fmt(s.tpr) << ',' << fmt(s.fdr) << ',' << fmt(s.mse) << ',' << s.n_ok << ',' << s.n_failed
                << '\n';
        return out.str();
    }
    out << "setting,parameter";
    for (const auto& s : report.summaries) {
        const std::string m = method_name(s.method);
        out << ',' << m << "_bias," << m << "_se";
        if (s.method == Method::npmle) out << ',' << m << "_see," << m << "_cp";
    }
    out << '\n';
    for (int j = 0; j < d.p; ++j) {
        out << '"' << setting_label(d) << "\",beta" << j + 1;
        for (const auto& s : report.summaries) {
            out << ',' << fmt(s.bias(j)) << ',' << fmt(s.se(j));
            if (s.method == Method::npmle) {
                if (s.n_bootstrap > 0) out << ',' << fmt(s.see(j)) << ',' << fmt(s.cp(j));
                else out << ",,";
            }
        }
        out << '\n';
    }
    return out.str();
}

namespace {

nlohmann::json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

std::string report_json(const ReplicateReport& report) {
    using nlohmann::json;
    const auto& d = report.design;
    const auto& o = report.options;
    json j;
    j["schema"] = "coxmiss.benchmark/1";
    j["design"] = {{"name", d.name},
                   {"n", d.n},
                   {"p", d.p},
                   {"beta", vec_json(d.beta)},
                   {"sigma", d.sigma_spec},
                   {"hazard_scale", d.hazard_scale},
                   {"hazard_shape", d.hazard_shape},
                   {"censor_rate", d.censor_rate},
                   {"censor_cap", d.censor_cap},
                   {"mechanism", mechanism_name(d.mechanism)},
                   {"p_missing", d.p_missing},
                   {"subcohort_fraction", d.subcohort_fraction},
                   {"missing_coords", d.missing_coords},
                   {"marginal", marginal_name(d.marginal)}};
    std::vector<std::string> methods;
    for (Method m : o.methods) methods.push_back(method_name(m));
    j["options"] = {{"replicates", o.replicates},
                    {"seed", o.seed},
                    {"methods", methods},
                    {"bootstrap_B", o.bootstrap_B},
                    {"bootstrap_replicates", o.bootstrap_replicates},
                    {"ci_level", o.ci_level},
                    {"quad_order", o.fit.quad_order},
                    {"tol", o.fit.tol},
                    {"max_iter", o.fit.max_iter}};
    j["mean_censoring"] = report.mean_censoring;
    j["curve_times"] = o.curve_times;
    json sums = json::array();
    for (const auto& s : report.summaries) {
        json e = {{"method", method_name(s.method)},
                  {"n_ok", s.n_ok},
                  {"n_failed", s.n_failed},
                  {"n_unconverged", s.n_unconverged},
                  {"bias", vec_json(s.bias)},
                  {"se", vec_json(s.se)},
                  {"tpr", s.tpr},
                  {"fdr", s.fdr},
                  {"mse", s.mse},
                  {"cumhaz_mean", vec_json(s.cumhaz_mean)},
                  {"max_ascent_drop", s.max_ascent_drop},
                  {"max_kkt", s.max_kkt}};
        if (s.n_bootstrap > 0) {
            e["n_bootstrap"] = s.n_bootstrap;
            e["see"] = vec_json(s.see);
            e["cp"] = vec_json(s.cp);
        }
        sums.push_back(std::move(e));
    }
    j["summaries"] = std::move(sums);
    json reps = json::array();
    for (const auto& r : report.replicates) {
        json e = {{"index", r.index}, {"seed", r.seed}, {"censoring", r.censoring}, {"missing", r.missing}};
        json ms = json::array();
        for (size_t k = 0; k < r.methods.size(); ++k) {
            const auto& m = r.methods[k];
            json x = {{"method", method_name(o.methods[k])}, {"ok", m.ok}};
            if (m.ok) {
                x["beta"] = vec_json(m.beta);
                x["iterations"] = m.iterations;
                x["converged"] = m.converged;
                if (m.has_bootstrap) {
                    x["se"] = vec_json(m.se);
                    x["ci_lower"] = vec_json(m.ci_lower);
                    x["ci_upper"] = vec_json(m.ci_upper);
                }
            } else {
                x["error"] = m.error;
            }
            ms.push_back(std::move(x));
        }
        e["methods"] = std::move(ms);
        reps.push_back(std::move(e));
    }
    j["replicates"] = std::move(reps);
    return j.dump(2) + "\n";
}

std::string cumhaz_curve_data(const ReplicateReport& report) {
    std::ostringstream out;
    out << "# t true";
    for (const auto& s : report.summaries) out << ' ' << method_name(s.method);
    out << '\n';
    for (size_t k = 0; k < report.options.curve_times.size(); ++k) {
        const double t = report.options.curve_times[k];
        out << fmt(t) << ' ' << fmt(report.design.true_cumhaz(t));
        for (const auto& s : report.summaries) out << ' ' << fmt(s.cumhaz_mean(static_cast<Eigen::Index>(k)));
        out << '\n';
    }
    return out.str();
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorCode::schema_error, "config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw Error(ErrorCode::schema_error, "config line " + std::to_string(lineno) + ": empty key");
        kv[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

void apply_config(const std::map<std::string, std::string>& kv, SimDesign& design, BenchOptions& options) {
    if (auto it = kv.find("design"); it != kv.end()) {
        design = design_preset(it->second);
        options.methods = default_methods(design);
    }
    bool sigma_given = false;
    for (const auto& [key, value] : kv) {
        if (key == "design") continue;
        else if (key == "name") design.name = value;
        else if (key == "n") design.n = to_int(value, key);
        else if (key == "p") design.p = to_int(value, key);
        else if (key == "beta") design.beta = parse_vector(value, key);
        else if (key == "mu") design.mu = parse_vector(value, key);
        else if (key == "sigma") { design.sigma_spec = value; sigma_given = true; }
        else if (key == "hazard_scale") design.hazard_scale = to_double(value, key);
        else if (key == "hazard_shape") design.hazard_shape = to_double(value, key);
        else if (key == "censor_rate") design.censor_rate = to_double(value, key);
        else if (key == "censor_cap") design.censor_cap = to_double(value, key);
        else if (key == "mechanism") {
            if (value == "mcar" || value == "MCAR") design.mechanism = Mechanism::mcar;
            else if (value == "mar" || value == "MAR") design.mechanism = Mechanism::mar_case_cohort;
            else if (value == "none") design.mechanism = Mechanism::none;
            else throw Error(ErrorCode::validation_error, "unknown mechanism '" + value + "'");
        }
        else if (key == "p_missing") design.p_missing = to_double(value, key);
        else if (key == "subcohort") design.subcohort_fraction = to_double(value, key);
        else if (key == "missing") design.missing_coords = parse_coords(value, key);
        else if (key == "marginal") {
            if (value == "normal") design.marginal = Marginal::normal;
            else if (value == "t5") design.marginal = Marginal::t5;
            else throw Error(ErrorCode::validation_error, "unknown marginal '" + value + "'");
        }
        else if (key == "replicates") options.replicates = to_int(value, key);
        else if (key == "seed") options.seed = static_cast<std::uint64_t>(std::stoull(value));
        else if (key == "workers") options.workers = to_int(value, key);
        else if (key == "methods") {
            options.methods.clear();
            for (const auto& m : split(value, ',')) options.methods.push_back(parse_method(trim(m)));
        }
        else if (key == "bootstrap") options.bootstrap_B = to_int(value, key);
        else if (key == "bootstrap_replicates") options.bootstrap_replicates = to_int(value, key);
        else if (key == "ci_level") options.ci_level = to_double(value, key);
        else if (key == "curve_times") {
            const Vec t = parse_vector(value, key);
            options.curve_times.assign(t.data(), t.data() + t.size());
        }
        else if (key == "quadrature.order") options.fit.quad_order = to_int(value, key);
        else if (key == "em.max_iter") options.fit.max_iter = to_int(value, key);
        else if (key == "em.tol") options.fit.tol = to_double(value, key);
        else if (key == "em.step_halving_max") options.fit.step_halving_max = to_int(value, key);
        else if (key == "lasso.n_gammas") options.lasso.n_gammas = options.cox_path.n_gammas = to_int(value, key);
        else if (key == "lasso.gamma_min_ratio")
            options.lasso.gamma_min_ratio = options.cox_path.gamma_min_ratio = to_double(value, key);
        else if (key == "lasso.cd_tol") options.lasso.cd_tol = to_double(value, key);
        else if (key == "lasso.standardize")
            options.lasso.standardize = options.cox_path.standardize = to_bool(value, key);
        else throw Error(ErrorCode::schema_error, "unknown config key '" + key + "'");
    }
    if (sigma_given || design.sigma.rows() != design.p) {
        if (design.sigma_spec.empty()) throw Error(ErrorCode::design_error, "design needs a covariance (sigma = ...)");
        design.sigma = parse_sigma_spec(design.sigma_spec, design.p);
    }
    if (design.mu.size() != design.p) design.mu = Vec::Zero(design.p);
    if (options.methods.empty()) options.methods = default_methods(design);
    design.validate();
}

}  // namespace coxmiss
