#include "coxmiss/em_fit.hpp"

#include "coxmiss/gaussian.hpp"
#include "coxmiss/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace coxmiss {

MuSigma update_mu_sigma(const std::vector<SubjectExpectations>& e) {
    const int n = static_cast<int>(e.size());
    if (n < 1) throw Error(ErrorCode::contract_violation, "update_mu_sigma needs at least one subject");
    const auto p = e.front().ex.size();
    Mat ex(n, p);
    for (int i = 0; i < n; ++i) ex.row(i) = e[static_cast<size_t>(i)].ex.transpose();
    Mat second = ex.transpose() * ex;
    for (const auto& s : e) s.add_exx(second, 1.0, false);
    MuSigma out;
    out.mu = ex.colwise().mean().transpose();
    out.sigma = second / n - out.mu * out.mu.transpose();
    out.sigma = 0.5 * (out.sigma + out.sigma.transpose());
    Eigen::LLT<Mat> llt(out.sigma);
    if (llt.info() != Eigen::Success) {
        out.sigma.diagonal().array() += 1e-10;
        llt.compute(out.sigma);
        if (llt.info() != Eigen::Success)
            throw Error(ErrorCode::singular_covariance, "updated covariance matrix is not positive definite");
    }
    return out;
}

ScoreHessian profile_score_hessian(const std::vector<SubjectExpectations>& e, const Dataset& data, const RiskSets& rs) {
    const int n = data.n();
    const auto p = static_cast<Eigen::Index>(data.p);
    const int m = rs.m();
    Vec erisk(n);
    Mat fx(n, p);
    for (int i = 0; i < n; ++i) {
        erisk(i) = e[static_cast<size_t>(i)].erisk;
        fx.row(i) = e[static_cast<size_t>(i)].erisk_x.transpose();
    }
    Vec s0 = rs.risk_sums(erisk);
    for (int j = 0; j < m; ++j)
        if (!(s0(j) > 0.0)) throw Error(ErrorCode::contract_violation, "non-positive risk-set sum");

    // S1_j by the same descending sweep as S0.
    Mat s1 = Mat::Zero(m, p);
    {
        Vec acc = Vec::Zero(p);
        size_t k = 0;
        for (int j = m - 1; j >= 0; --j) {
            while (k < rs.desc_order.size() && rs.n_upto[static_cast<size_t>(rs.desc_order[k])] > j) {
                acc += fx.row(rs.desc_order[k]).transpose();
                ++k;
            }
            s1.row(j) = acc.transpose();
        }
    }
    // Each subject is at risk at every event time up to its own y, so the
    // sum over events of d_j S2_j / S0_j collapses to sum_i c_i erisk_xx_i.
    Vec cum(m + 1);
    cum(0) = 0.0;
    for (int j = 0; j < m; ++j) cum(j + 1) = cum(j) + rs.counts[static_cast<size_t>(j)] / s0(j);
    Vec c(n);
    for (int i = 0; i < n; ++i) c(i) = cum(rs.n_upto[static_cast<size_t>(i)]);

    ScoreHessian out;
    out.grad = Vec::Zero(p);
    for (int i = 0; i < n; ++i)
        if (data.subjects[static_cast<size_t>(i)].delta == 1) out.grad += e[static_cast<size_t>(i)].ex;
    out.grad.noalias() -= fx.transpose() * c;

    Vec outer_w = c.cwiseQuotient(erisk);
    Mat s2 = fx.transpose() * outer_w.asDiagonal() * fx;
    for (int i = 0; i < n; ++i)
        if (c(i) != 0.0) e[static_cast<size_t>(i)].add_erisk_xx(s2, c(i), false);
    Vec dw(m);
    for (int j = 0; j < m; ++j) dw(j) = rs.counts[static_cast<size_t>(j)] / (s0(j) * s0(j));
    Mat centre = s1.transpose() * dw.asDiagonal() * s1;
    out.hess = -(s2 - centre);
    out.hess = 0.5 * (out.hess + out.hess.transpose());
    return out;
}

double profile_q(const std::vector<SubjectExpectations>& e, const Dataset& data, const RiskSets& rs, const Vec& beta,
                 const Vec& erisk_at_beta) {
    double q = 0.0;
    for (int i = 0; i < data.n(); ++i)
        if (data.subjects[static_cast<size_t>(i)].delta == 1) q += e[static_cast<size_t>(i)].ex.dot(beta);
    Vec s0 = rs.risk_sums(erisk_at_beta);
    for (int j = 0; j < rs.m(); ++j) q -= rs.counts[static_cast<size_t>(j)] * std::log(s0(j));
    return q;
}

QObjective frozen_q(const Dataset& data, const RiskSets& rs, const EStepResult& e, int workers) {
    return [&data, &rs, &e, workers](const Vec& beta) {
        QEval out;
        out.erisk = erisk_at_new_beta_all(data, e, beta, workers);
        out.q = profile_q(e.subjects, data, rs, beta, out.erisk);
        return out;
    };
}

namespace {

std::vector<int> support_or_all(const std::optional<std::vector<int>>& support, Eigen::Index p) {
    if (support) return *support;
    std::vector<int> all(static_cast<size_t>(p));
    for (int j = 0; j < static_cast<int>(p); ++j) all[static_cast<size_t>(j)] = j;
    return all;
}

}  // namespace

StepResult newton_update(const Vec& beta_k, const ScoreHessian& sh, const QEval& at_k, const QObjective& q,
                         int step_halving_max, const std::optional<std::vector<int>>& support) {
    StepResult out;
    out.beta = beta_k;
    out.erisk_new = at_k.erisk;
    out.objective = at_k.q;
    const auto idx = support_or_all(support, beta_k.size());
    const auto k = static_cast<Eigen::Index>(idx.size());
    if (k == 0) return out;

    Vec g(k);
    Mat negh(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
        g(a) = sh.grad(idx[static_cast<size_t>(a)]);
        for (Eigen::Index b = 0; b < k; ++b) negh(a, b) = -sh.hess(idx[static_cast<size_t>(a)], idx[static_cast<size_t>(b)]);
    }
    if (g.cwiseAbs().maxCoeff() == 0.0) return out;

    Eigen::LLT<Mat> llt(negh);
    double ridge = 1e-8;
    while (llt.info() != Eigen::Success && ridge < 1e4) {
        Mat r = negh;
        r.diagonal().array() += ridge;
        llt.compute(r);
        ridge *= 10.0;
    }
    if (llt.info() != Eigen::Success) {
        out.stalled = true;
        return out;
    }
    Vec delta = llt.solve(g);

    double t = 1.0;
    for (int h = 0; h <= step_halving_max; ++h, t *= 0.5) {
        Vec cand = beta_k;
        for (Eigen::Index a = 0; a < k; ++a) cand(idx[static_cast<size_t>(a)]) += t * delta(a);
        QEval ev;
        try {
            ev = q(cand);
        } catch (const Error&) {
            continue;  // overflow far from beta_k; a shorter step will do
        }
        if (std::isfinite(ev.q) && ev.q >= at_k.q) {
            out.beta = cand;
            out.erisk_new = std::move(ev.erisk);
            out.objective = ev.q;
            out.halvings = h;
            return out;
        }
    }
    out.stalled = true;
    return out;
}

ParameterSet initial_parameters(const Dataset& data, const RiskSets& rs) {
    const int n = data.n();
    const int p = data.p;
    ParameterSet theta;
    theta.beta = Vec::Zero(p);
    theta.mu = Vec::Zero(p);
    theta.sigma = Mat::Identity(p, p);
    std::vector<Vec> full(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) full[static_cast<size_t>(i)] = data.subjects[static_cast<size_t>(i)].x_full();

    for (int a = 0; a < p; ++a) {
        double s = 0.0;
        int c = 0;
        for (const auto& x : full)
            if (!std::isnan(x(a))) { s += x(a); ++c; }
        theta.mu(a) = c > 0 ? s / c : 0.0;
    }
    for (int a = 0; a < p; ++a) {
        for (int b = 0; b <= a; ++b) {
            double sa = 0.0, sb = 0.0, sab = 0.0;
            int c = 0;
            for (const auto& x : full) {
                if (std::isnan(x(a)) || std::isnan(x(b))) continue;
                sa += x(a); sb += x(b); sab += x(a) * x(b);
                ++c;
            }
            double v;
            if (c >= 2) {
                v = sab / c - (sa / c) * (sb / c);
            } else {
                v = a == b ? 1.0 : 0.0;
            }
            if (a == b && !(v > 0.0)) v = 1.0;
            theta.sigma(a, b) = theta.sigma(b, a) = v;
        }
    }
    const double floor = 1e-6 * std::max(1e-300, theta.sigma.diagonal().maxCoeff());
    theta.sigma = project_psd(theta.sigma, floor);
    theta.baseline.times = rs.times;
    Vec na = nelson_aalen(rs);
    theta.baseline.jumps.assign(na.data(), na.data() + na.size());
    return theta;
}

namespace {

double max_abs_change(const ParameterSet& a, const ParameterSet& b) {
    double d = (a.beta - b.beta).cwiseAbs().maxCoeff();
    d = std::max(d, (a.mu - b.mu).cwiseAbs().maxCoeff());
    d = std::max(d, (a.sigma - b.sigma).cwiseAbs().maxCoeff());
    if (!a.baseline.jumps.empty())
        d = std::max(d, (a.baseline.jump_vector() - b.baseline.jump_vector()).cwiseAbs().maxCoeff());
    return d;
}

}  // namespace

FitResult run_em(const Dataset& data, const FitConfig& config, const BetaStep& step, double penalty_weight) {
    data.validate();
    if (data.n_events() < 1) throw Error(ErrorCode::validation_error, "fit needs at least one event");
    if (!(config.tol > 0.0) || config.max_iter < 1) throw Error(ErrorCode::validation_error, "invalid fit configuration");
    const int workers = resolve_workers(config.workers);
    RiskSets rs(data);

    ParameterSet theta = initial_parameters(data, rs);
    if (config.init) {
        theta.beta = config.init->beta;
        theta.mu = config.init->mu;
        theta.sigma = config.init->sigma;
        theta.baseline = baseline_on_times(config.init->baseline, rs.times);
    }
    if (config.support) {
        Vec masked = Vec::Zero(theta.beta.size());
        for (int j : *config.support) masked(j) = theta.beta(j);
        theta.beta = masked;
    }

    EStepOptions eopt;
    eopt.quad_order = config.quad_order;
    eopt.completion = config.completion;

    FitResult result;
    const auto objective = [&](double ll, const Vec& beta) { return ll - penalty_weight * beta.cwiseAbs().sum(); };

    for (int iter = 1; iter <= config.max_iter; ++iter) {
        EStepResult e = run_estep(data, rs, theta, eopt, workers);
        result.loglik_trace.push_back(objective(e.loglik, theta.beta));

        MuSigma ms = update_mu_sigma(e.subjects);
        ScoreHessian sh = profile_score_hessian(e.subjects, data, rs);
        QObjective q = frozen_q(data, rs, e, workers);
        QEval at_k = q(theta.beta);
        StepResult st = step(BetaStepInput{theta.beta, sh, at_k, q, data.n()});
        if (st.stalled) ++result.stalled_steps;

        ParameterSet next;
        next.beta = st.beta;
        next.mu = ms.mu;
        next.sigma = ms.sigma;
        next.baseline.times = rs.times;
        Vec lam = breslow_update(rs, st.erisk_new);
        next.baseline.jumps.assign(lam.data(), lam.data() + lam.size());

        const double change = max_abs_change(theta, next);
        theta = std::move(next);
        result.iterations = iter;
        if (config.verbose)
            std::fprintf(stderr, "iter %d  loglik %.10f  change %.3e\n", iter, e.loglik, change);
        if (change < config.tol) {
            result.converged = true;
            break;
        }
    }

    EStepResult final_e = run_estep(data, rs, theta, eopt, workers);
    result.loglik = final_e.loglik;
    result.loglik_trace.push_back(objective(final_e.loglik, theta.beta));
    for (size_t k = 1; k < result.loglik_trace.size(); ++k)
        result.max_ascent_drop = std::max(result.max_ascent_drop, result.loglik_trace[k - 1] - result.loglik_trace[k]);
    result.params = std::move(theta);
    return result;
}

FitResult fit_npmle(const Dataset& data, const FitConfig& config) {
    const auto support = config.support;
    const int halving = config.step_halving_max;
    return run_em(data, config, [&](const BetaStepInput& in) {
        return newton_update(in.beta_k, in.sh, in.at_k, in.q, halving, support);
    });
}

}  // namespace coxmiss
