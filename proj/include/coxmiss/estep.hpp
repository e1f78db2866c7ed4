#pragma once

#include "coxmiss/gaussian.hpp"
#include "coxmiss/quadrature.hpp"
#include "coxmiss/survival_data.hpp"
#include "coxmiss/types.hpp"

#include <memory>
#include <vector>

namespace coxmiss {

enum class Completion { householder, gram_schmidt };

struct EStepOptions {
    int quad_order = 30;
    Completion completion = Completion::householder;
};

// Everything about one missingness pattern that depends only on the current
// parameters, shared by all subjects with that pattern.
struct SlicePlan {
    ConditionalPlan cond;
    Vec beta_missing;
    Vec beta_observed;
    bool closed_form = true;   // nothing missing, or beta_R == 0
    double bnorm = 0.0;
    // Valid when !closed_form.
    Mat psi;
    Mat nu;
    Vec slope;
    Mat resid_cov;
    bool degenerate = false;
    // X_R = alpha(x_obs) + direction * X~_1 + eps with Cov(eps) = spread.
    Vec direction;
    Mat spread;

    const MissingMask& mask() const { return cond.mask; }
};

std::shared_ptr<const SlicePlan> make_slice_plan(const ParameterSet& params, const MissingMask& mask,
                                                 Completion completion = Completion::householder);

// Conditional expectations for one subject at the current parameters.
//
// Second moments are kept in factored form: for either weighting (plain or
// exp(X'beta)-tilted) the full covariate vector is X = base + g * X~_1 + eps,
// where g and eps live on the missing coordinates only. exx()/erisk_xx()
// materialize the p x p matrices; add_*() accumulate them without allocation.
struct SubjectExpectations {
    Vec ex;          // E[X]
    double erisk = 0.0;   // E[exp(X'beta)]
    Vec erisk_x;     // E[exp(X'beta) X]
    double var_plain = 0.0;  // Var(X~_1) under f
    double var_tilt = 0.0;   // Var(X~_1) under exp(bnorm x) f / E[...]
    std::shared_ptr<const SlicePlan> plan;

    // Quadrature state retained for E[exp(X'beta_new)].
    AdaptedNodes nodes;
    Vec intercept;   // rotated slice intercept (rotated branch) or conditional mean (closed form)
    double loglik = 0.0;  // this subject's observed-data log-likelihood contribution

    Mat exx() const;
    Mat erisk_xx() const;
    // With outer=false only the missing-block spread terms are added; callers
    // that batch the outer products through a matrix product use this.
    void add_exx(Mat& acc, double scale, bool outer = true) const;
    void add_erisk_xx(Mat& acc, double scale, bool outer = true) const;
};

// Per-subject inputs from the baseline hazard.
struct HazardAt {
    double cumhaz = 0.0;
    double log_jump = 0.0;  // log lambda_{j(i)}; used only for events
};

HazardAt hazard_at(const Baseline& baseline, const ObservedSubject& subject);

SubjectExpectations closed_form_expectations(const ObservedSubject& subject, const ParameterSet& params);

SubjectExpectations subject_expectations(const ObservedSubject& subject, const ParameterSet& params, int quad_order,
                                         Completion completion = Completion::householder);

// Kernel shared by the single-subject API and the batched E-step.
SubjectExpectations expectations_from_plan(const std::shared_ptr<const SlicePlan>& plan, const ObservedSubject& subject,
                                           const HazardAt& hazard, const QuadratureRule& rule);

// E[exp(X'beta_new) | O_i] under the law at the iteration that produced `e`.
double erisk_at_new_beta(const SubjectExpectations& e, const ObservedSubject& subject, const Vec& beta_new);
double erisk_at_new_beta(const ObservedSubject& subject, const ParameterSet& params_k, const Vec& beta_new,
                         int quad_order);

struct EStepResult {
    std::vector<std::shared_ptr<const SlicePlan>> plans;
    std::vector<int> plan_index;
    std::vector<SubjectExpectations> subjects;
    double loglik = 0.0;

    int n() const { return static_cast<int>(subjects.size()); }
    Vec erisk() const;
};

// OpenMP E-step over subjects; plans are built once per distinct mask.
// Results are bit-identical for any worker count.
EStepResult run_estep(const Dataset& data, const RiskSets& rs, const ParameterSet& params, const EStepOptions& opt,
                      int workers);

// Straight-line reference: one subject_expectations() call per subject.
EStepResult run_estep_serial(const Dataset& data, const ParameterSet& params, const EStepOptions& opt);

Vec erisk_at_new_beta_all(const Dataset& data, const EStepResult& e, const Vec& beta_new, int workers);

// Observed-data log-likelihood (NPMLE form) at params.
double observed_loglik(const ParameterSet& params, const Dataset& data, int quad_order, int workers = 1);

}  // namespace coxmiss
