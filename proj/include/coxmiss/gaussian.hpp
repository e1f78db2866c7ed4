#pragma once

#include "coxmiss/types.hpp"

namespace coxmiss {

// Law of the missing block X_R given the observed block X_{-R}.
struct ConditionalNormal {
    Vec mean;
    Mat cov;
};

// Precomputed pieces of the conditional law that depend only on the mask and
// (mu, Sigma): the regression of X_R on X_{-R} and the Schur complement.
struct ConditionalPlan {
    MissingMask mask;
    Mat regression;          // Sigma_{R,-R} Sigma_{-R,-R}^{-1}
    Mat cov;                 // Sigma_{R,R} - regression * Sigma_{-R,R}
    Vec mu_missing;
    Vec mu_observed;
    Eigen::LLT<Mat> observed_chol;  // factor of Sigma_{-R,-R}
    double observed_logdet = 0.0;

    ConditionalNormal apply(const Vec& x_obs) const;
    // log N(x_obs; mu_{-R}, Sigma_{-R,-R}) including the 2*pi constant.
    double observed_log_density(const Vec& x_obs) const;
};

ConditionalPlan conditional_plan(const Vec& mu, const Mat& sigma, const MissingMask& mask);

ConditionalNormal conditional_mvn(const Vec& mu, const Mat& sigma, const MissingMask& mask, const Vec& x_obs);

// Orthogonal matrix whose first row is beta_R / ||beta_R||, built as the
// Householder reflection exchanging e_1 and that unit vector.
Mat householder_completion(const Vec& beta_r);

// Alternative completion (Gram-Schmidt against a permuted canonical basis).
// Used to check that downstream expectations do not depend on the choice.
Mat gram_schmidt_completion(const Vec& beta_r);

// The conditional law expressed in rotated coordinates X~ = Psi X_R, plus the
// Gaussian regression of X~_{-1} on X~_1.
struct RotatedSlice {
    Mat psi;
    Vec eta;
    Mat nu;
    Vec slope;       // nu_{-1,1} / nu_{1,1}
    Vec intercept;   // eta_{-1} - slope * eta_1
    Mat resid_cov;   // V = nu_{-1,-1} - nu_{-1,1} nu_{1,-1} / nu_{1,1}
    bool degenerate = false;  // nu_{1,1} below threshold: X~_1 is a point mass at eta_1

    double center() const { return eta(0); }
    double variance() const { return nu(0, 0); }
    // m(x1) = intercept + slope * x1
    Vec slice_mean(double x1) const { return intercept + slope * x1; }
};

inline constexpr double kDegenerateVariance = 1e-12;

RotatedSlice rotate_slice(const ConditionalNormal& cond, const Vec& beta_r);
RotatedSlice rotate_slice(const ConditionalNormal& cond, const Mat& psi);

// phi(x1; a) = E[exp(a' X~_{-1}) | X~_1 = x1] = exp(a' m(x1) + a' V a / 2).
double mgf_phi(const RotatedSlice& slice, double x1, const Vec& a);

// Symmetric factorization with one diagonal-jitter retry.
Eigen::LLT<Mat> robust_llt(const Mat& a, const std::string& context);

// Symmetrize and clamp eigenvalues below floor.
Mat project_psd(const Mat& a, double floor);

}  // namespace coxmiss
