#include "coxmiss/gaussian.hpp"

#include <cmath>
#include <numbers>

namespace coxmiss {

namespace {

constexpr double kJitter = 1e-10;

Mat submatrix(const Mat& a, const std::vector<int>& rows, const std::vector<int>& cols) {
    Mat out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (size_t r = 0; r < rows.size(); ++r)
        for (size_t c = 0; c < cols.size(); ++c)
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = a(rows[r], cols[c]);
    return out;
}

Vec subvector(const Vec& v, const std::vector<int>& idx) {
    Vec out(static_cast<Eigen::Index>(idx.size()));
    for (size_t k = 0; k < idx.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(idx[k]);
    return out;
}

}  // namespace

Eigen::LLT<Mat> robust_llt(const Mat& a, const std::string& context) {
    Eigen::LLT<Mat> llt(a);
    if (llt.info() == Eigen::Success) return llt;
    Mat jittered = a;
    jittered.diagonal().array() += kJitter;
    llt.compute(jittered);
    if (llt.info() != Eigen::Success)
        throw Error(ErrorCode::singular_covariance, "covariance block is not positive definite (" + context + ")");
    return llt;
}

Mat project_psd(const Mat& a, double floor) {
    Mat sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(sym);
    Vec ev = es.eigenvalues().cwiseMax(floor);
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

ConditionalPlan conditional_plan(const Vec& mu, const Mat& sigma, const MissingMask& mask) {
    ConditionalPlan plan;
    plan.mask = mask;
    const auto& r = mask.missing;
    const auto& o = mask.observed;
    plan.mu_missing = subvector(mu, r);
    plan.mu_observed = subvector(mu, o);
    Mat srr = submatrix(sigma, r, r);
    if (o.empty()) {
        plan.regression = Mat::Zero(static_cast<Eigen::Index>(r.size()), 0);
        plan.cov = srr;
        return plan;
    }
    Mat soo = submatrix(sigma, o, o);
    plan.observed_chol = robust_llt(soo, "mask " + mask.to_string());
    const Mat& l = plan.observed_chol.matrixLLT();
    plan.observed_logdet = 2.0 * l.diagonal().array().log().sum();
    if (!r.empty()) {
        Mat sor = submatrix(sigma, o, r);
        // regression' = Sigma_oo^{-1} Sigma_oR
        plan.regression = plan.observed_chol.solve(sor).transpose();
        plan.cov = srr - plan.regression * sor;
        plan.cov = 0.5 * (plan.cov + plan.cov.transpose());
    } else {
        plan.regression = Mat::Zero(0, static_cast<Eigen::Index>(o.size()));
        plan.cov = Mat::Zero(0, 0);
    }
    return plan;
}

ConditionalNormal ConditionalPlan::apply(const Vec& x_obs) const {
    ConditionalNormal c;
    c.mean = mu_missing;
    if (regression.cols() > 0 && regression.rows() > 0) c.mean.noalias() += regression * (x_obs - mu_observed);
    c.cov = cov;
    return c;
}

double ConditionalPlan::observed_log_density(const Vec& x_obs) const {
    const auto k = x_obs.size();
    if (k == 0) return 0.0;
    Vec z = observed_chol.matrixL().solve(x_obs - mu_observed);
    return -0.5 * (static_cast<double>(k) * std::log(2.0 * std::numbers::pi) + observed_logdet + z.squaredNorm());
}

ConditionalNormal conditional_mvn(const Vec& mu, const Mat& sigma, const MissingMask& mask, const Vec& x_obs) {
    if (x_obs.size() != mask.n_observed())
        throw Error(ErrorCode::contract_violation, "x_obs length does not match mask " + mask.to_string());
    return conditional_plan(mu, sigma, mask).apply(x_obs);
}

Mat householder_completion(const Vec& beta_r) {
    const auto d = beta_r.size();
    const double norm = beta_r.norm();
    if (d == 0 || !(norm > 0.0))
        throw Error(ErrorCode::contract_violation, "householder_completion needs a nonzero direction; use the closed-form branch");
    Vec u = beta_r / norm;
    // v = e1 - u, with 1 - u1 evaluated without cancellation.
    const double tail = u.tail(d - 1).squaredNorm();
    if (tail == 0.0) {
        Mat h = Mat::Identity(d, d);
        h(0, 0) = u(0) > 0 ? 1.0 : -1.0;
        return h;
    }
    Vec v = -u;
    v(0) = u(0) > 0.0 ? tail / (1.0 + u(0)) : 1.0 - u(0);
    const double vv = v.squaredNorm();
    Mat h = Mat::Identity(d, d);
    h.noalias() -= (2.0 / vv) * v * v.transpose();
    return h;
}

Mat gram_schmidt_completion(const Vec& beta_r) {
    const auto d = beta_r.size();
    const double norm = beta_r.norm();
    if (d == 0 || !(norm > 0.0))
        throw Error(ErrorCode::contract_violation, "gram_schmidt_completion needs a nonzero direction");
    Mat q(d, d);
    q.row(0) = (beta_r / norm).transpose();
    // Candidates e_{d-1}, e_{d-2}, ... e_0 (reversed order so the basis differs
    // from the Householder one); skip any that are nearly dependent.
    Eigen::Index filled = 1;
    for (Eigen::Index c = d - 1; c >= 0 && filled < d; --c) {
        Vec v = Vec::Unit(d, c);
        for (int pass = 0; pass < 2; ++pass)
            for (Eigen::Index k = 0; k < filled; ++k) v -= q.row(k).dot(v) * q.row(k).transpose();
        const double nv = v.norm();
        if (nv < 1e-8) continue;
        q.row(filled++) = (v / nv).transpose();
    }
    return q;
}

RotatedSlice rotate_slice(const ConditionalNormal& cond, const Vec& beta_r) {
    return rotate_slice(cond, householder_completion(beta_r));
}

RotatedSlice rotate_slice(const ConditionalNormal& cond, const Mat& psi) {
    const auto d = cond.mean.size();
    if (psi.rows() != d || psi.cols() != d)
        throw Error(ErrorCode::contract_violation, "rotation dimension does not match the conditional law");
    RotatedSlice s;
    s.psi = psi;
    s.eta = psi * cond.mean;
    s.nu = psi * cond.cov * psi.transpose();
    s.nu = 0.5 * (s.nu + s.nu.transpose());
    const double n11 = s.nu(0, 0);
    s.degenerate = !(n11 > kDegenerateVariance);
    if (s.degenerate) {
        s.nu(0, 0) = std::max(n11, 0.0);
        s.slope = Vec::Zero(d - 1);
        s.intercept = s.eta.tail(d - 1);
        s.resid_cov = s.nu.bottomRightCorner(d - 1, d - 1);
        return s;
    }
    Vec col = s.nu.col(0).tail(d - 1);
    s.slope = col / n11;
    s.intercept = s.eta.tail(d - 1) - s.slope * s.eta(0);
    s.resid_cov = s.nu.bottomRightCorner(d - 1, d - 1) - col * col.transpose() / n11;
    s.resid_cov = 0.5 * (s.resid_cov + s.resid_cov.transpose());
    return s;
}

double mgf_phi(const RotatedSlice& slice, double x1, const Vec& a) {
    if (a.size() == 0) return 1.0;
    return std::exp(a.dot(slice.slice_mean(x1)) + 0.5 * a.dot(slice.resid_cov * a));
}

}  // namespace coxmiss
