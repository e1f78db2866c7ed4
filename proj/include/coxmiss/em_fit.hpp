#pragma once

#include "coxmiss/estep.hpp"
#include "coxmiss/survival_data.hpp"
#include "coxmiss/types.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace coxmiss {

struct FitConfig {
    int max_iter = 500;
    double tol = 1e-5;             // max-abs change over (beta, mu, vec Sigma, jumps)
    int quad_order = 30;
    int step_halving_max = 20;
    int workers = 1;
    bool verbose = false;
    Completion completion = Completion::householder;
    // Coefficients outside the support are held at zero.
    std::optional<std::vector<int>> support;
    // Warm start; the baseline is re-expressed on this dataset's event times.
    std::optional<ParameterSet> init;
};

struct FitResult {
    ParameterSet params;
    double loglik = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> loglik_trace;   // objective at theta^(0), theta^(1), ...
    double max_ascent_drop = 0.0;       // largest decrease between consecutive trace entries
    int stalled_steps = 0;
};

struct MuSigma {
    Vec mu;
    Mat sigma;
};

MuSigma update_mu_sigma(const std::vector<SubjectExpectations>& e);

struct ScoreHessian {
    Vec grad;
    Mat hess;
};

// Derivatives of the expected complete-data log-partial likelihood at the
// beta used in the E-step. Risk set of an event at t is {j : y_j >= t}.
ScoreHessian profile_score_hessian(const std::vector<SubjectExpectations>& e, const Dataset& data, const RiskSets& rs);

// Q(beta) = sum_i delta_i ex_i' beta - sum_j d_j log S0_j(beta), given
// E[exp(X_i' beta)] for every subject.
double profile_q(const std::vector<SubjectExpectations>& e, const Dataset& data, const RiskSets& rs, const Vec& beta,
                 const Vec& erisk_at_beta);

// Q evaluated with expectations frozen at the E-step in `e`.
struct QEval {
    double q = 0.0;
    Vec erisk;
};
using QObjective = std::function<QEval(const Vec&)>;

QObjective frozen_q(const Dataset& data, const RiskSets& rs, const EStepResult& e, int workers);

struct StepResult {
    Vec beta;
    Vec erisk_new;
    double objective = 0.0;
    bool stalled = false;
    int halvings = 0;
};

// One Newton step on Q with step-halving until Q does not decrease. Only the
// coordinates in `support` move (all when empty optional).
StepResult newton_update(const Vec& beta_k, const ScoreHessian& sh, const QEval& at_k, const QObjective& q,
                         int step_halving_max, const std::optional<std::vector<int>>& support = std::nullopt);

// beta = 0, available-case means, pairwise-complete covariance projected to
// PSD, Nelson-Aalen baseline.
ParameterSet initial_parameters(const Dataset& data, const RiskSets& rs);

// Generic EM engine: the beta step is pluggable so the penalized fit can reuse
// the E-step, mu/Sigma update and Breslow update. penalty_weight scales
// ||beta||_1 in the traced objective.
struct BetaStepInput {
    const Vec& beta_k;
    const ScoreHessian& sh;
    const QEval& at_k;
    const QObjective& q;
    int n;
};
using BetaStep = std::function<StepResult(const BetaStepInput&)>;

FitResult run_em(const Dataset& data, const FitConfig& config, const BetaStep& step, double penalty_weight = 0.0);

FitResult fit_npmle(const Dataset& data, const FitConfig& config);

}  // namespace coxmiss
