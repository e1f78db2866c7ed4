#include "coxmiss/lasso_path.hpp"

#include "coxmiss/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace coxmiss {

double soft_threshold(double x, double gamma) {
    if (x > gamma) return x - gamma;
    if (x < -gamma) return x + gamma;
    return 0.0;
}

QuadSurrogate build_surrogate(const Vec& grad, const Mat& hess, const Vec& beta_k, int n) {
    QuadSurrogate s;
    s.A = -hess / n;
    s.A = 0.5 * (s.A + s.A.transpose());
    s.P = (hess * beta_k - grad) / n;
    return s;
}

Vec coordinate_descent(const QuadSurrogate& s, double gamma, const Vec& beta_init, const CdOptions& opt) {
    const auto p = s.P.size();
    if (s.A.rows() != p || s.A.cols() != p || beta_init.size() != p)
        throw Error(ErrorCode::contract_violation, "coordinate_descent: dimension mismatch");
    if (gamma < 0.0) throw Error(ErrorCode::contract_violation, "coordinate_descent: negative gamma");
    Vec beta = beta_init;
    // r = A beta + P, kept current as coordinates move.
    Vec r = s.A * beta + s.P;
    for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
        double change = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            const double ajj = s.A(j, j);
            double next = 0.0;
            if (ajj > 0.0) {
                const double z = r(j) - ajj * beta(j);
                next = -soft_threshold(z, gamma) / ajj;
            }
            const double d = next - beta(j);
            if (d != 0.0) {
                r.noalias() += s.A.col(j) * d;
                beta(j) = next;
                change = std::max(change, std::abs(d));
            }
        }
        if (change < opt.tol) return beta;
    }
    throw Error(ErrorCode::non_convergence, "coordinate descent hit the sweep cap");
}

double kkt_violation(const QuadSurrogate& s, double gamma, const Vec& beta) {
    const Vec r = s.A * beta + s.P;
    double worst = 0.0;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
        if (!(s.A(j, j) > 0.0)) continue;
        if (beta(j) == 0.0) {
            worst = std::max(worst, std::abs(r(j)) - gamma);
        } else {
            const double sgn = beta(j) > 0.0 ? 1.0 : -1.0;
            worst = std::max(worst, std::abs(r(j) + gamma * sgn));
        }
    }
    return std::max(worst, 0.0);
}

std::vector<int> active_set(const Vec& beta) {
    std::vector<int> a;
    for (Eigen::Index j = 0; j < beta.size(); ++j)
        if (beta(j) != 0.0) a.push_back(static_cast<int>(j));
    return a;
}

Vec available_case_sd(const Dataset& data) {
    Vec sd(data.p);
    for (int a = 0; a < data.p; ++a) {
        double s = 0.0, ss = 0.0;
        int c = 0;
        for (const auto& subj : data.subjects) {
            const Vec x = subj.x_full();
            if (std::isnan(x(a))) continue;
            s += x(a);
            ss += x(a) * x(a);
            ++c;
        }
        double v = c > 1 ? (ss - s * s / c) / (c - 1) : 0.0;
        sd(a) = v > 0.0 ? std::sqrt(v) : 1.0;
    }
    return sd;
}

Dataset scale_columns(const Dataset& data, const Vec& scale) {
    Dataset out = data;
    for (auto& subj : out.subjects) {
        const auto& obs = subj.mask.observed;
        for (size_t k = 0; k < obs.size(); ++k) subj.x_obs(static_cast<Eigen::Index>(k)) /= scale(obs[k]);
    }
    return out;
}

ParameterSet scale_parameters(const ParameterSet& params, const Vec& scale) {
    ParameterSet out = params;
    out.beta = params.beta.cwiseProduct(scale);
    out.mu = params.mu.cwiseQuotient(scale);
    const Vec inv = scale.cwiseInverse();
    out.sigma = inv.asDiagonal() * params.sigma * inv.asDiagonal();
    return out;
}

ParameterSet unscale_parameters(const ParameterSet& params, const Vec& scale) {
    ParameterSet out = params;
    out.beta = params.beta.cwiseQuotient(scale);
    out.mu = params.mu.cwiseProduct(scale);
    out.sigma = scale.asDiagonal() * params.sigma * scale.asDiagonal();
    return out;
}

namespace {

struct KktRecord {
    double worst = 0.0;
};

// Penalized EM on already-scaled data.
FitResult penalized_em(const Dataset& data, double gamma, const LassoConfig& config,
                       const std::optional<ParameterSet>& init, KktRecord* kkt) {
    if (!(gamma >= 0.0)) throw Error(ErrorCode::validation_error, "gamma must be nonnegative");
    FitConfig fc = config.fit;
    fc.support.reset();
    fc.init = init;
    CdOptions cd;
    cd.tol = config.cd_tol;
    const int halving = fc.step_halving_max;
    const bool check = config.check_kkt;
    auto step = [&](const BetaStepInput& in) {
        StepResult out;
        out.beta = in.beta_k;
        out.erisk_new = in.at_k.erisk;
        const double nn = in.n;
        const QuadSurrogate s = build_surrogate(in.sh.grad, in.sh.hess, in.beta_k, in.n);
        const Vec target = coordinate_descent(s, gamma, in.beta_k, cd);
        if (kkt || check) {
            const double v = kkt_violation(s, gamma, target);
            if (kkt) kkt->worst = std::max(kkt->worst, v);
            if (check && v > 1e-6) throw Error(ErrorCode::non_convergence, "coordinate descent failed the KKT check");
        }
        const double base = in.at_k.q / nn - gamma * in.beta_k.cwiseAbs().sum();
        out.objective = in.at_k.q;
        const Vec dir = target - in.beta_k;
        if (dir.cwiseAbs().maxCoeff() == 0.0) return out;
        double t = 1.0;
        for (int h = 0; h <= halving; ++h, t *= 0.5) {
            Vec cand = in.beta_k + t * dir;
            if (h == 0) cand = target;  // keep exact zeros from the thresholding
            QEval ev;
            try {
                ev = in.q(cand);
            } catch (const Error&) {
                continue;
            }
            const double obj = ev.q / nn - gamma * cand.cwiseAbs().sum();
            if (std::isfinite(obj) && obj >= base) {
                out.beta = cand;
                out.erisk_new = std::move(ev.erisk);
                out.objective = ev.q;
                out.halvings = h;
                return out;
            }
        }
        out.stalled = true;
        return out;
    };
    return run_em(data, fc, step, gamma * data.n());
}

}  // namespace

PenalizedFit fit_penalized(const Dataset& data, double gamma, const LassoConfig& config,
                           const std::optional<ParameterSet>& warm_start) {
    data.validate();
    const Vec scale = config.standardize ? available_case_sd(data) : Vec::Ones(data.p);
    const Dataset scaled = scale_columns(data, scale);
    std::optional<ParameterSet> init;
    if (warm_start) init = scale_parameters(*warm_start, scale);
    FitResult fit = penalized_em(scaled, gamma, config, init, nullptr);
    fit.params = unscale_parameters(fit.params, scale);
    PenalizedFit out;
    out.active = active_set(fit.params.beta);
    out.fit = std::move(fit);
    out.gamma = gamma;
    return out;
}

namespace {

FitResult null_fit(const Dataset& data, const FitConfig& base) {
    FitConfig fc = base;
    fc.support = std::vector<int>{};
    fc.init.reset();
    return fit_npmle(data, fc);
}

double gamma_max_scaled(const Dataset& scaled, const FitResult& null, const FitConfig& fc) {
    RiskSets rs(scaled);
    EStepOptions eo;
    eo.quad_order = fc.quad_order;
    eo.completion = fc.completion;
    const EStepResult e = run_estep(scaled, rs, null.params, eo, resolve_workers(fc.workers));
    const ScoreHessian sh = profile_score_hessian(e.subjects, scaled, rs);
    return sh.grad.cwiseAbs().maxCoeff() / scaled.n();
}

}  // namespace

double gamma_max(const Dataset& data, const LassoConfig& config) {
    data.validate();
    const Vec scale = config.standardize ? available_case_sd(data) : Vec::Ones(data.p);
    const Dataset scaled = scale_columns(data, scale);
    return gamma_max_scaled(scaled, null_fit(scaled, config.fit), config.fit);
}

double bic_value(double loglik, int n, size_t model_size) {
    return -2.0 * loglik + std::log(static_cast<double>(n)) * static_cast<double>(model_size);
}

const PathPoint& LassoPath::best() const {
    if (selected < 0) throw Error(ErrorCode::non_convergence, "lasso path has no successful point");
    return points[static_cast<size_t>(selected)];
}

const FitResult& LassoPath::selected_refit() const {
    return refits[static_cast<size_t>(best().refit_index)];
}

LassoPath tune_path(const Dataset& data, const LassoConfig& config) {
    data.validate();
    if (data.n_events() < 2) throw Error(ErrorCode::validation_error, "lasso path needs at least two events");
    if (data.p >= data.n()) throw Error(ErrorCode::validation_error, "lasso path requires p < n");
    const Vec scale = config.standardize ? available_case_sd(data) : Vec::Ones(data.p);
    const Dataset scaled = scale_columns(data, scale);

    LassoPath path;
    path.n = data.n();
    const FitResult null = null_fit(scaled, config.fit);
    path.gamma_max = gamma_max_scaled(scaled, null, config.fit);

    std::vector<double> grid;
    if (config.gammas) {
        grid = *config.gammas;
        std::sort(grid.begin(), grid.end(), std::greater<>());
    } else {
        if (config.n_gammas < 1 || !(config.gamma_min_ratio > 0.0 && config.gamma_min_ratio < 1.0))
            throw Error(ErrorCode::validation_error, "invalid gamma grid settings");
        const int k = config.n_gammas;
        const double r = k > 1 ? std::pow(config.gamma_min_ratio, 1.0 / (k - 1)) : 1.0;
        for (int i = 0; i < k; ++i) grid.push_back(path.gamma_max * std::pow(r, i));
    }

    std::map<std::vector<int>, int> refit_of;
    std::optional<ParameterSet> warm = null.params;
    for (double g : grid) {
        PathPoint pt;
        pt.gamma = g;
        try {
            KktRecord kkt;
            FitResult fit = penalized_em(scaled, g, config, config.warm_start ? warm : std::nullopt, &kkt);
            if (config.warm_start) warm = fit.params;
            pt.max_kkt = kkt.worst;
            pt.max_ascent_drop = fit.max_ascent_drop;
            pt.converged = fit.converged;
            pt.beta = fit.params.beta.cwiseQuotient(scale);
            pt.active = active_set(pt.beta);
            auto it = refit_of.find(pt.active);
            if (it == refit_of.end()) {
                FitConfig rc = config.fit;
                rc.support = pt.active;
                rc.init.reset();
                path.refits.push_back(fit_npmle(data, rc));
                it = refit_of.emplace(pt.active, static_cast<int>(path.refits.size()) - 1).first;
            }
            pt.refit_index = it->second;
            pt.max_ascent_drop = std::max(pt.max_ascent_drop, path.refits[static_cast<size_t>(pt.refit_index)].max_ascent_drop);
            pt.loglik = path.refits[static_cast<size_t>(pt.refit_index)].loglik;
            pt.bic = bic_value(pt.loglik, data.n(), pt.active.size());
        } catch (const Error& e) {
            pt.failed = true;
            pt.error = e.what();
        }
        path.points.push_back(std::move(pt));
    }
    for (size_t i = 0; i < path.points.size(); ++i) {
        const auto& pt = path.points[i];
        if (pt.failed) continue;
        if (path.selected < 0 || pt.bic < path.points[static_cast<size_t>(path.selected)].bic)
            path.selected = static_cast<int>(i);
    }
    return path;
}

}  // namespace coxmiss
