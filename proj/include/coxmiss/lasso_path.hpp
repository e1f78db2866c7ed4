#pragma once

#include "coxmiss/em_fit.hpp"
#include "coxmiss/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace coxmiss {

double soft_threshold(double x, double gamma);

// Concave quadratic -1/2 b'Ab - P'b approximating Q/n around beta_k.
struct QuadSurrogate {
    Mat A;
    Vec P;
};

QuadSurrogate build_surrogate(const Vec& grad, const Mat& hess, const Vec& beta_k, int n);

struct CdOptions {
    double tol = 1e-8;
    int max_sweeps = 10000;
};

// Maximizes -1/2 b'Ab - P'b - gamma ||b||_1 by cyclic coordinate descent.
// Coordinates with A_jj <= 0 are frozen at zero.
Vec coordinate_descent(const QuadSurrogate& s, double gamma, const Vec& beta_init, const CdOptions& opt = {});

// Largest violation of the lasso optimality conditions (0 means optimal).
double kkt_violation(const QuadSurrogate& s, double gamma, const Vec& beta);

std::vector<int> active_set(const Vec& beta);

struct LassoConfig {
    FitConfig fit;
    int n_gammas = 50;
    double gamma_min_ratio = 0.01;
    double cd_tol = 1e-8;
    bool standardize = true;
    bool warm_start = true;
    std::optional<std::vector<double>> gammas;  // explicit grid overrides the defaults
    bool check_kkt = false;                     // throw if any CD solution fails the certificate
};

struct PenalizedFit {
    FitResult fit;               // on the original covariate scale
    std::vector<int> active;
    double gamma = 0.0;
};

// Penalized EM. With standardize, the penalty applies to coefficients of
// covariates scaled to unit available-case standard deviation; the returned
// parameters are mapped back to the original scale. warm_start is on the
// original scale.
PenalizedFit fit_penalized(const Dataset& data, double gamma, const LassoConfig& config,
                           const std::optional<ParameterSet>& warm_start = std::nullopt);

// Smallest gamma for which beta = 0 is a fixed point of the penalized EM.
double gamma_max(const Dataset& data, const LassoConfig& config);

struct PathPoint {
    double gamma = 0.0;
    Vec beta;                 // penalized estimate, original scale
    std::vector<int> active;
    int refit_index = -1;     // into LassoPath::refits
    double loglik = 0.0;      // refit observed log-likelihood
    double bic = 0.0;
    double max_kkt = 0.0;     // worst CD certificate violation over the EM iterations
    double max_ascent_drop = 0.0;  // over the penalized fit and its refit
    bool converged = false;
    bool failed = false;
    std::string error;
};

struct LassoPath {
    std::vector<PathPoint> points;
    std::vector<FitResult> refits;
    int selected = -1;
    double gamma_max = 0.0;
    int n = 0;

    const PathPoint& best() const;
    const FitResult& selected_refit() const;
};

double bic_value(double loglik, int n, size_t model_size);

LassoPath tune_path(const Dataset& data, const LassoConfig& config);

// Column scaling used for selection.
Vec available_case_sd(const Dataset& data);
Dataset scale_columns(const Dataset& data, const Vec& scale);
ParameterSet unscale_parameters(const ParameterSet& params, const Vec& scale);
ParameterSet scale_parameters(const ParameterSet& params, const Vec& scale);

}  // namespace coxmiss
