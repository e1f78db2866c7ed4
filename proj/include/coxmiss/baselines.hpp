#pragma once

#include "coxmiss/types.hpp"

#include <optional>
#include <vector>

namespace coxmiss {

struct CompleteDataset {
    Vec y;
    std::vector<int> delta;
    Mat x;   // n x p, no missing entries
    std::vector<std::string> names;

    int n() const { return static_cast<int>(y.size()); }
    int p() const { return static_cast<int>(x.cols()); }
};

CompleteDataset to_complete(const Dataset& data);   // throws if anything is missing
Dataset to_dataset(const CompleteDataset& c);

struct CoxOptions {
    std::optional<double> l1_gamma;   // penalty on the per-subject scale: l/n - gamma ||beta||_1
    std::optional<std::vector<int>> support;
    int max_iter = 200;
    double tol = 1e-10;
};

struct CoxFit {
    Vec beta;
    Baseline baseline;
    double loglik = 0.0;   // log partial likelihood
    Vec score;
    Mat information;       // negative Hessian
    int iterations = 0;
};

struct PartialLik {
    double loglik = 0.0;
    Vec score;
    Mat information;
};

// Breslow-tie log partial likelihood and derivatives.
PartialLik cox_partial(const CompleteDataset& c, const Vec& beta);

CoxFit cox_fit(const CompleteDataset& c, const CoxOptions& opt = {});

struct CoxPathPoint {
    double gamma = 0.0;
    Vec beta;
    std::vector<int> active;
    double loglik = 0.0;   // refit log partial likelihood
    double bic = 0.0;
};

struct CoxPath {
    std::vector<CoxPathPoint> points;
    int selected = -1;
    CoxFit refit;          // unpenalized refit on the selected active set
};

struct CoxPathOptions {
    int n_gammas = 50;
    double gamma_min_ratio = 0.01;
    bool standardize = true;
};

// L1 path with BIC on the partial likelihood of each refit.
CoxPath cox_lasso_path(const CompleteDataset& c, const CoxPathOptions& opt = {});

CompleteDataset complete_rows(const Dataset& data);
CoxFit complete_case(const Dataset& data, const CoxOptions& opt = {});
CoxPath complete_case_path(const Dataset& data, const CoxPathOptions& opt = {});

CompleteDataset single_impute(const Dataset& data);

}  // namespace coxmiss
