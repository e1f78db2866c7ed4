#include "coxmiss/baselines.hpp"

#include "coxmiss/gaussian.hpp"
#include "coxmiss/lasso_path.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace coxmiss {

CompleteDataset to_complete(const Dataset& data) {
    CompleteDataset c;
    const int n = data.n();
    c.y.resize(n);
    c.delta.resize(static_cast<size_t>(n));
    c.x.resize(n, data.p);
    c.names = data.names;
    for (int i = 0; i < n; ++i) {
        const auto& s = data.subjects[static_cast<size_t>(i)];
        if (!s.mask.complete()) throw Error(ErrorCode::contract_violation, "to_complete: subject has missing covariates");
        c.y(i) = s.y;
        c.delta[static_cast<size_t>(i)] = s.delta;
        c.x.row(i) = s.x_obs.transpose();
    }
    return c;
}

Dataset to_dataset(const CompleteDataset& c) {
    Dataset d;
    d.p = c.p();
    d.names = c.names;
    d.subjects.resize(static_cast<size_t>(c.n()));
    for (int i = 0; i < c.n(); ++i) {
        auto& s = d.subjects[static_cast<size_t>(i)];
        s.y = c.y(i);
        s.delta = c.delta[static_cast<size_t>(i)];
        s.mask = MissingMask::none(c.p());
        s.x_obs = c.x.row(i).transpose();
    }
    return d;
}

PartialLik cox_partial(const CompleteDataset& c, const Vec& beta) {
    const int n = c.n();
    const int p = c.p();
    const Vec eta = c.x * beta;
    const double shift = n > 0 ? eta.maxCoeff() : 0.0;
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return c.y(a) > c.y(b); });

    PartialLik out;
    out.score = Vec::Zero(p);
    out.information = Mat::Zero(p, p);
    double s0 = 0.0;
    Vec s1 = Vec::Zero(p);
    Mat s2 = Mat::Zero(p, p);
    size_t k = 0;
    while (k < order.size()) {
        // Tie group: everyone with this time enters the risk set first.
        const double t = c.y(order[k]);
        size_t end = k;
        while (end < order.size() && c.y(order[end]) == t) {
            const int i = order[end];
            const double w = std::exp(eta(i) - shift);
            s0 += w;
            s1 += w * c.x.row(i).transpose();
            s2.noalias() += w * c.x.row(i).transpose() * c.x.row(i);
            ++end;
        }
        int d = 0;
        Vec xsum = Vec::Zero(p);
        double esum = 0.0;
        for (size_t q = k; q < end; ++q) {
            const int i = order[q];
            if (c.delta[static_cast<size_t>(i)] == 1) {
                ++d;
                xsum += c.x.row(i).transpose();
                esum += eta(i);
            }
        }
        if (d > 0) {
            const Vec m = s1 / s0;
            out.loglik += esum - d * (std::log(s0) + shift);
            out.score += xsum - d * m;
            out.information += d * (s2 / s0 - m * m.transpose());
        }
        k = end;
    }
    return out;
}

namespace {

std::vector<int> resolve_support(const std::optional<std::vector<int>>& support, int p) {
    if (support) return *support;
    std::vector<int> all(static_cast<size_t>(p));
    std::iota(all.begin(), all.end(), 0);
    return all;
}

Baseline breslow_jumps(const CompleteDataset& c, const Vec& beta) {
    const Vec eta = c.x * beta;
    std::vector<double> times;
    for (int i = 0; i < c.n(); ++i)
        if (c.delta[static_cast<size_t>(i)] == 1) times.push_back(c.y(i));
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    Baseline b;
    b.times = times;
    for (double t : times) {
        double s0 = 0.0;
        int d = 0;
        for (int i = 0; i < c.n(); ++i) {
            if (c.y(i) >= t) s0 += std::exp(eta(i));
            if (c.y(i) == t && c.delta[static_cast<size_t>(i)] == 1) ++d;
        }
        b.jumps.push_back(d / s0);
    }
    return b;
}

}  // namespace

CoxFit cox_fit(const CompleteDataset& c, const CoxOptions& opt) {
    const int n = c.n();
    const int p = c.p();
    if (n < 1 || std::none_of(c.delta.begin(), c.delta.end(), [](int d) { return d == 1; }))
        throw Error(ErrorCode::validation_error, "cox_fit needs at least one event");
    const auto idx = resolve_support(opt.support, p);
    const auto k = static_cast<Eigen::Index>(idx.size());
    const double gamma = opt.l1_gamma.value_or(0.0);
    const bool penalized = opt.l1_gamma.has_value() && gamma > 0.0;
    const double tol = penalized ? std::max(opt.tol, 1e-9) : opt.tol;

    Vec beta = Vec::Zero(p);
    PartialLik cur = cox_partial(c, beta);
    const Vec info0 = cur.information.diagonal();
    auto objective = [&](const PartialLik& pl, const Vec& b) { return pl.loglik / n - gamma * b.cwiseAbs().sum(); };

    CoxFit fit;
    bool done = k == 0;
    for (int it = 1; it <= opt.max_iter && !done; ++it) {
        fit.iterations = it;
        Vec g(k);
        Mat info(k, k);
        Vec bk(k);
        for (Eigen::Index a = 0; a < k; ++a) {
            g(a) = cur.score(idx[static_cast<size_t>(a)]);
            bk(a) = beta(idx[static_cast<size_t>(a)]);
            for (Eigen::Index b = 0; b < k; ++b)
                info(a, b) = cur.information(idx[static_cast<size_t>(a)], idx[static_cast<size_t>(b)]);
        }
        Vec target;
        if (penalized) {
            const QuadSurrogate s = build_surrogate(g, -info, bk, n);
            target = coordinate_descent(s, gamma, bk, CdOptions{1e-12, 10000});
        } else {
            Eigen::LDLT<Mat> ldlt(info);
            if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14)
                throw Error(ErrorCode::non_convergence, "cox_fit: singular information matrix");
            target = bk + ldlt.solve(g);
        }
        const Vec dir = target - bk;
        if (dir.cwiseAbs().maxCoeff() < tol) break;

        const double base = objective(cur, beta);
        bool accepted = false;
        double t = 1.0;
        for (int h = 0; h < 40; ++h, t *= 0.5) {
            Vec cand = beta;
            for (Eigen::Index a = 0; a < k; ++a)
                cand(idx[static_cast<size_t>(a)]) = h == 0 ? target(a) : bk(a) + t * dir(a);
            PartialLik next = cox_partial(c, cand);
            if (std::isfinite(next.loglik) && objective(next, cand) >= base) {
                const double moved = (cand - beta).cwiseAbs().maxCoeff();
                beta = cand;
                cur = std::move(next);
                accepted = true;
                if (moved < tol) done = true;
                break;
            }
        }
        if (!accepted) done = true;  // no ascent available at working precision
        if (beta.cwiseAbs().maxCoeff() > 1e3)
            throw Error(ErrorCode::non_convergence, "cox_fit: coefficients diverge (separation?)");
        if (it == opt.max_iter && !done) throw Error(ErrorCode::non_convergence, "cox_fit: iteration limit reached");
    }
    // Under separation the partial likelihood flattens out and the Newton
    // iterates stop at a huge but finite beta with vanishing information.
    for (int j : idx)
        if (beta(j) != 0.0 && cur.information(j, j) < 1e-10 * info0(j))
            throw Error(ErrorCode::non_convergence, "cox_fit: coefficients diverge (separation?)");
    fit.beta = beta;
    fit.loglik = cur.loglik;
    fit.score = cur.score;
    fit.information = cur.information;
    fit.baseline = breslow_jumps(c, beta);
    return fit;
}

namespace {

CompleteDataset scale_complete(const CompleteDataset& c, Vec& scale) {
    const int n = c.n();
    scale.resize(c.p());
    for (int j = 0; j < c.p(); ++j) {
        const double m = c.x.col(j).mean();
        const double v = n > 1 ? (c.x.col(j).array() - m).square().sum() / (n - 1) : 0.0;
        scale(j) = v > 0.0 ? std::sqrt(v) : 1.0;
    }
    CompleteDataset out = c;
    out.x = c.x * scale.cwiseInverse().asDiagonal();
    return out;
}

}  // namespace

CoxPath cox_lasso_path(const CompleteDataset& c, const CoxPathOptions& opt) {
    const int n = c.n();
    if (opt.n_gammas < 1 || !(opt.gamma_min_ratio > 0.0 && opt.gamma_min_ratio < 1.0))
        throw Error(ErrorCode::validation_error, "invalid gamma grid settings");
    Vec scale = Vec::Ones(c.p());
    const CompleteDataset sc = opt.standardize ? scale_complete(c, scale) : c;
    const double gmax = cox_partial(sc, Vec::Zero(c.p())).score.cwiseAbs().maxCoeff() / n;
    const int k = opt.n_gammas;
    const double r = k > 1 ? std::pow(opt.gamma_min_ratio, 1.0 / (k - 1)) : 1.0;

    CoxPath path;
    std::vector<std::pair<std::vector<int>, CoxFit>> refits;
    for (int i = 0; i < k; ++i) {
        CoxPathPoint pt;
        pt.gamma = gmax * std::pow(r, i);
        CoxOptions po;
        po.l1_gamma = pt.gamma;
        pt.beta = cox_fit(sc, po).beta.cwiseQuotient(scale);
        pt.active = active_set(pt.beta);
        auto it = std::find_if(refits.begin(), refits.end(), [&](const auto& e) { return e.first == pt.active; });
        if (it == refits.end()) {
            CoxOptions ro;
            ro.support = pt.active;
            refits.emplace_back(pt.active, cox_fit(c, ro));
            it = refits.end() - 1;
        }
        pt.loglik = it->second.loglik;
        pt.bic = bic_value(pt.loglik, n, pt.active.size());
        if (path.selected < 0 || pt.bic < path.points[static_cast<size_t>(path.selected)].bic) {
            path.selected = i;
            path.refit = it->second;
        }
        path.points.push_back(std::move(pt));
    }
    return path;
}

CompleteDataset complete_rows(const Dataset& data) {
    Dataset kept;
    kept.p = data.p;
    kept.names = data.names;
    for (const auto& s : data.subjects)
        if (s.mask.complete()) kept.subjects.push_back(s);
    if (kept.subjects.empty()) throw Error(ErrorCode::validation_error, "no fully observed subjects");
    return to_complete(kept);
}

CoxFit complete_case(const Dataset& data, const CoxOptions& opt) { return cox_fit(complete_rows(data), opt); }

CoxPath complete_case_path(const Dataset& data, const CoxPathOptions& opt) {
    return cox_lasso_path(complete_rows(data), opt);
}

CompleteDataset single_impute(const Dataset& data) {
    const CompleteDataset cc = [&] {
        try {
            return complete_rows(data);
        } catch (const Error&) {
            throw Error(ErrorCode::validation_error, "single_impute needs at least two fully observed subjects");
        }
    }();
    const int nc = cc.n();
    if (nc < 2) throw Error(ErrorCode::validation_error, "single_impute needs at least two fully observed subjects");
    const Vec mu = cc.x.colwise().mean().transpose();
    const Mat centred = cc.x.rowwise() - mu.transpose();
    const Mat sigma = centred.transpose() * centred / nc;

    CompleteDataset out;
    const int n = data.n();
    out.y.resize(n);
    out.delta.resize(static_cast<size_t>(n));
    out.x.resize(n, data.p);
    out.names = data.names;
    for (int i = 0; i < n; ++i) {
        const auto& s = data.subjects[static_cast<size_t>(i)];
        out.y(i) = s.y;
        out.delta[static_cast<size_t>(i)] = s.delta;
        Vec x = s.x_full();
        if (!s.mask.complete()) {
            const ConditionalNormal cond = conditional_mvn(mu, sigma, s.mask, s.x_obs);
            for (size_t k = 0; k < s.mask.missing.size(); ++k)
                x(s.mask.missing[k]) = cond.mean(static_cast<Eigen::Index>(k));
        }
        out.x.row(i) = x.transpose();
    }
    return out;
}

}  // namespace coxmiss
