#include "coxmiss/estep.hpp"

#include "coxmiss/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace coxmiss {

namespace {

Vec gather(const Vec& v, const std::vector<int>& idx) {
    Vec out(static_cast<Eigen::Index>(idx.size()));
    for (size_t k = 0; k < idx.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(idx[k]);
    return out;
}

Vec scatter(const MissingMask& mask, const Vec& observed, const Vec& missing) {
    Vec out(mask.size());
    for (int k = 0; k < mask.n_observed(); ++k) out(mask.observed[static_cast<size_t>(k)]) = observed(k);
    for (int k = 0; k < mask.n_missing(); ++k) out(mask.missing[static_cast<size_t>(k)]) = missing(k);
    return out;
}

// Quantities for E[exp(X'beta_new)] that depend on the pattern but not on the subject.
struct NewBetaTilt {
    Vec beta_missing;
    Vec beta_observed;
    Vec a_rest;        // (Psi beta_new,R)_{-1}
    double slope = 0.0;      // coefficient of X~_1 in the exponent
    double half_quad = 0.0;  // a' V a / 2 (rotated) or b' C b / 2 (closed form)
};

NewBetaTilt make_tilt(const SlicePlan& plan, const Vec& beta_new) {
    NewBetaTilt t;
    t.beta_missing = gather(beta_new, plan.mask().missing);
    t.beta_observed = gather(beta_new, plan.mask().observed);
    if (plan.closed_form) {
        if (t.beta_missing.size() > 0) t.half_quad = 0.5 * t.beta_missing.dot(plan.spread * t.beta_missing);
        return t;
    }
    const Vec a = plan.psi * t.beta_missing;
    const auto d = a.size();
    t.a_rest = a.tail(d - 1);
    t.slope = a(0) + t.a_rest.dot(plan.slope);
    if (d > 1) t.half_quad = 0.5 * t.a_rest.dot(plan.resid_cov * t.a_rest);
    return t;
}

double erisk_with_tilt(const NewBetaTilt& t, const SubjectExpectations& e, const ObservedSubject& s) {
    double log_val = t.beta_observed.size() > 0 ? t.beta_observed.dot(s.x_obs) : 0.0;
    log_val += t.half_quad;
    if (e.plan->closed_form) {
        if (t.beta_missing.size() > 0) log_val += t.beta_missing.dot(e.intercept);
    } else {
        // exp(a_1 x) * phi(x; a_rest) with phi linear-exponential in x.
        if (t.a_rest.size() > 0) log_val += t.a_rest.dot(e.intercept);
        log_val += log_sum_exp_tilt(e.nodes, t.slope);
    }
    const double v = std::exp(log_val);
    if (!std::isfinite(v) || !(v > 0.0))
        throw Error(ErrorCode::integration_failure, "E[exp(X'beta_new)] overflowed or vanished");
    return v;
}

void add_missing_block(Mat& acc, const SlicePlan& plan, double var, double scale) {
    const auto& r = plan.mask().missing;
    const auto d = static_cast<Eigen::Index>(r.size());
    if (d == 0) return;
    const bool rank1 = !plan.closed_form && var != 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
        for (Eigen::Index i = 0; i < d; ++i) {
            double v = plan.spread(i, j);
            if (rank1) v += var * plan.direction(i) * plan.direction(j);
            acc(r[static_cast<size_t>(i)], r[static_cast<size_t>(j)]) += scale * v;
        }
    }
}

}  // namespace

std::shared_ptr<const SlicePlan> make_slice_plan(const ParameterSet& params, const MissingMask& mask,
                                                 Completion completion) {
    auto plan = std::make_shared<SlicePlan>();
    plan->cond = conditional_plan(params.mu, params.sigma, mask);
    plan->beta_missing = gather(params.beta, mask.missing);
    plan->beta_observed = gather(params.beta, mask.observed);
    const auto d = plan->beta_missing.size();
    plan->bnorm = d > 0 ? plan->beta_missing.norm() : 0.0;
    plan->closed_form = d == 0 || plan->bnorm < 1e-12;
    if (plan->closed_form) {
        plan->direction = Vec::Zero(d);
        plan->spread = plan->cond.cov;
        return plan;
    }
    Mat psi = completion == Completion::householder ? householder_completion(plan->beta_missing)
                                                    : gram_schmidt_completion(plan->beta_missing);
    ConditionalNormal centred{Vec::Zero(d), plan->cond.cov};
    RotatedSlice rs = rotate_slice(centred, psi);
    plan->psi = std::move(rs.psi);
    plan->nu = std::move(rs.nu);
    plan->slope = std::move(rs.slope);
    plan->resid_cov = std::move(rs.resid_cov);
    plan->degenerate = rs.degenerate;
    Vec u(d);
    u(0) = 1.0;
    u.tail(d - 1) = plan->slope;
    plan->direction = plan->psi.transpose() * u;
    const Mat lower = plan->psi.bottomRows(d - 1);
    plan->spread = lower.transpose() * plan->resid_cov * lower;
    plan->spread = 0.5 * (plan->spread + plan->spread.transpose());
    return plan;
}

Mat SubjectExpectations::exx() const {
    Mat m = ex * ex.transpose();
    add_missing_block(m, *plan, var_plain, 1.0);
    return m;
}

Mat SubjectExpectations::erisk_xx() const {
    Vec mean = erisk_x / erisk;
    Mat m = mean * mean.transpose();
    add_missing_block(m, *plan, var_tilt, 1.0);
    return erisk * m;
}

void SubjectExpectations::add_exx(Mat& acc, double scale, bool outer) const {
    if (outer) acc.noalias() += scale * ex * ex.transpose();
    add_missing_block(acc, *plan, var_plain, scale);
}

void SubjectExpectations::add_erisk_xx(Mat& acc, double scale, bool outer) const {
    if (outer) acc.noalias() += (scale / erisk) * erisk_x * erisk_x.transpose();
    add_missing_block(acc, *plan, var_tilt, scale * erisk);
}

HazardAt hazard_at(const Baseline& baseline, const ObservedSubject& subject) {
    HazardAt h;
    h.cumhaz = cumulative_hazard(baseline, subject.y);
    if (subject.delta == 1) {
        auto it = std::lower_bound(baseline.times.begin(), baseline.times.end(), subject.y);
        if (it == baseline.times.end() || *it != subject.y)
            throw Error(ErrorCode::contract_violation, "event time is not a jump point of the baseline hazard");
        h.log_jump = std::log(baseline.jumps[static_cast<size_t>(it - baseline.times.begin())]);
    }
    return h;
}

SubjectExpectations expectations_from_plan(const std::shared_ptr<const SlicePlan>& plan_ptr,
                                           const ObservedSubject& s, const HazardAt& hz, const QuadratureRule& rule) {
    const SlicePlan& plan = *plan_ptr;
    SubjectExpectations e;
    e.plan = plan_ptr;
    const double offset = plan.beta_observed.size() > 0 ? plan.beta_observed.dot(s.x_obs) : 0.0;
    const double obs_ll = plan.cond.observed_log_density(s.x_obs);
    const Vec cond_mean = plan.cond.apply(s.x_obs).mean;
    const double event_ll = s.delta == 1 ? hz.log_jump + offset : 0.0;

    if (plan.closed_form) {
        e.intercept = cond_mean;
        e.ex = scatter(plan.mask(), s.x_obs, cond_mean);
        e.erisk = std::exp(offset);
        e.erisk_x = e.erisk * e.ex;
        e.loglik = obs_ll + event_ll - hz.cumhaz * e.erisk;
        return e;
    }

    const auto d = cond_mean.size();
    const Vec eta = plan.psi * cond_mean;
    e.intercept = eta.tail(d - 1) - plan.slope * eta(0);

    TiltedDensity dens;
    dens.delta = s.delta;
    dens.bnorm = plan.bnorm;
    dens.cumhaz = hz.cumhaz;
    dens.offset = offset;
    dens.center = eta(0);
    dens.variance = plan.nu(0, 0);
    e.nodes = plan.degenerate ? point_mass(dens) : adapt_rule(dens, rule);

    const Vec w = e.nodes.log_w.array().exp();
    const double m1 = w.dot(e.nodes.x);
    e.var_plain = w.dot((e.nodes.x.array() - m1).square().matrix());

    const double lt = log_sum_exp_tilt(e.nodes, plan.bnorm);
    const Vec wt = (e.nodes.log_w + plan.bnorm * e.nodes.x).array().exp() * std::exp(-lt);
    const double t1 = wt.dot(e.nodes.x);
    e.var_tilt = wt.dot((e.nodes.x.array() - t1).square().matrix());

    // alpha = Psi' (0, intercept): the part of E[X_R | X~_1] not moving with X~_1.
    const Vec alpha = plan.psi.bottomRows(d - 1).transpose() * e.intercept;
    e.ex = scatter(plan.mask(), s.x_obs, alpha + plan.direction * m1);
    e.erisk = std::exp(offset + lt);
    e.erisk_x = e.erisk * scatter(plan.mask(), s.x_obs, alpha + plan.direction * t1);
    if (!std::isfinite(e.erisk) || !e.ex.allFinite() || !e.erisk_x.allFinite())
        throw Error(ErrorCode::integration_failure, "non-finite conditional expectation");
    e.loglik = obs_ll + event_ll + e.nodes.log_normal_expect;
    return e;
}

SubjectExpectations closed_form_expectations(const ObservedSubject& subject, const ParameterSet& params) {
    auto plan = make_slice_plan(params, subject.mask);
    if (!plan->closed_form)
        throw Error(ErrorCode::contract_violation, "closed-form expectations need beta restricted to the missing block to be zero");
    return expectations_from_plan(plan, subject, hazard_at(params.baseline, subject), gauss_hermite(1));
}

SubjectExpectations subject_expectations(const ObservedSubject& subject, const ParameterSet& params, int quad_order,
                                         Completion completion) {
    auto plan = make_slice_plan(params, subject.mask, completion);
    return expectations_from_plan(plan, subject, hazard_at(params.baseline, subject), gauss_hermite(quad_order));
}

double erisk_at_new_beta(const SubjectExpectations& e, const ObservedSubject& subject, const Vec& beta_new) {
    return erisk_with_tilt(make_tilt(*e.plan, beta_new), e, subject);
}

double erisk_at_new_beta(const ObservedSubject& subject, const ParameterSet& params_k, const Vec& beta_new,
                         int quad_order) {
    return erisk_at_new_beta(subject_expectations(subject, params_k, quad_order), subject, beta_new);
}

Vec EStepResult::erisk() const {
    Vec v(n());
    for (int i = 0; i < n(); ++i) v(i) = subjects[static_cast<size_t>(i)].erisk;
    return v;
}

namespace {

// Neumaier summation; a plain sum over n ~ 1e3 terms of size ~1e2 loses
// about 1e-10 absolute, which is the scale of late EM increments.
double total_loglik(const std::vector<SubjectExpectations>& subjects) {
    double sum = 0.0, comp = 0.0;
    for (const auto& e : subjects) {
        const double t = sum + e.loglik;
        comp += std::abs(sum) >= std::abs(e.loglik) ? (sum - t) + e.loglik : (e.loglik - t) + sum;
        sum = t;
    }
    return sum + comp;
}

}  // namespace

EStepResult run_estep(const Dataset& data, const RiskSets& rs, const ParameterSet& params, const EStepOptions& opt,
                      int workers) {
    EStepResult out;
    const int n = data.n();
    std::map<std::vector<bool>, int> index_of;
    std::vector<const MissingMask*> masks;
    out.plan_index.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto& mask = data.subjects[static_cast<size_t>(i)].mask;
        auto [it, inserted] = index_of.emplace(mask.flags, static_cast<int>(masks.size()));
        if (inserted) masks.push_back(&mask);
        out.plan_index[static_cast<size_t>(i)] = it->second;
    }
    out.plans.resize(masks.size());
    parallel_for(static_cast<int>(masks.size()), workers, [&](int k) {
        out.plans[static_cast<size_t>(k)] = make_slice_plan(params, *masks[static_cast<size_t>(k)], opt.completion);
    });

    const bool aligned = params.baseline.times == rs.times;
    Vec jumps = params.baseline.jump_vector();
    Vec cumhaz = aligned ? rs.cumhaz_at_subjects(jumps) : Vec();
    const QuadratureRule& rule = gauss_hermite(opt.quad_order);

    out.subjects.resize(static_cast<size_t>(n));
    parallel_for(n, workers, [&](int i) {
        const auto& s = data.subjects[static_cast<size_t>(i)];
        HazardAt hz;
        if (aligned) {
            hz.cumhaz = cumhaz(i);
            const int j = rs.event_index[static_cast<size_t>(i)];
            if (j >= 0) hz.log_jump = std::log(jumps(j));
        } else {
            hz = hazard_at(params.baseline, s);
        }
        try {
            out.subjects[static_cast<size_t>(i)] =
                expectations_from_plan(out.plans[static_cast<size_t>(out.plan_index[static_cast<size_t>(i)])], s, hz, rule);
        } catch (const Error& err) {
            throw Error(err.code(), "subject " + std::to_string(i) + ": " + err.what());
        }
    });
    out.loglik = total_loglik(out.subjects);
    return out;
}

EStepResult run_estep_serial(const Dataset& data, const ParameterSet& params, const EStepOptions& opt) {
    EStepResult out;
    out.subjects.reserve(static_cast<size_t>(data.n()));
    for (const auto& s : data.subjects) {
        out.subjects.push_back(subject_expectations(s, params, opt.quad_order, opt.completion));
        out.plans.push_back(out.subjects.back().plan);
        out.plan_index.push_back(static_cast<int>(out.plans.size()) - 1);
    }
    out.loglik = total_loglik(out.subjects);
    return out;
}

Vec erisk_at_new_beta_all(const Dataset& data, const EStepResult& e, const Vec& beta_new, int workers) {
    std::vector<NewBetaTilt> tilts(e.plans.size());
    for (size_t k = 0; k < e.plans.size(); ++k) tilts[k] = make_tilt(*e.plans[k], beta_new);
    Vec out(e.n());
    parallel_for(e.n(), workers, [&](int i) {
        const auto& t = tilts[static_cast<size_t>(e.plan_index[static_cast<size_t>(i)])];
        out(i) = erisk_with_tilt(t, e.subjects[static_cast<size_t>(i)], data.subjects[static_cast<size_t>(i)]);
    });
    return out;
}

double observed_loglik(const ParameterSet& params, const Dataset& data, int quad_order, int workers) {
    RiskSets rs(data);
    EStepOptions opt;
    opt.quad_order = quad_order;
    return run_estep(data, rs, params, opt, workers).loglik;
}

}  // namespace coxmiss
