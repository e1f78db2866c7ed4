#pragma once

#include "coxmiss/types.hpp"

#include <functional>

namespace coxmiss {

// Gauss-Hermite rule for weight exp(-z^2), weights kept as logarithms.
struct QuadratureRule {
    Vec nodes;        // strictly increasing
    Vec log_weights;
    int order() const { return static_cast<int>(nodes.size()); }
};

// Cached per order; the returned reference stays valid for the process lifetime.
const QuadratureRule& gauss_hermite(int order);

// Unnormalized log-concave density of the rotated linear predictor
//   log f(x) = delta*bnorm*x - cumhaz*exp(bnorm*x + offset) - (x-center)^2/(2*variance).
struct TiltedDensity {
    int delta = 0;
    double bnorm = 0.0;
    double cumhaz = 0.0;
    double offset = 0.0;
    double center = 0.0;
    double variance = 1.0;

    double log_f(double x) const;
    double dlog_f(double x) const;
    double neg_d2log_f(double x) const;
};

struct Mode {
    double mode = 0.0;
    double neg_curvature = 1.0;
};

Mode find_mode(const TiltedDensity& density);

// Nodes of a rule recentred at the mode and rescaled by the curvature, with
// log-weights normalized to sum to one under f. log_normal_expect holds
// log E[exp(delta*bnorm*X - cumhaz*exp(bnorm*X+offset))] for X ~ N(center, variance),
// which is what the observed-data likelihood needs.
struct AdaptedNodes {
    Vec x;
    Vec log_w;
    double log_normal_expect = 0.0;
};

AdaptedNodes adapt_rule(const TiltedDensity& density, const QuadratureRule& rule);

// Point mass at the centre, for slices whose variance vanished.
AdaptedNodes point_mass(const TiltedDensity& density);

// E[h(X)] under f for scalar- or vector-valued h, by adaptive Gauss-Hermite.
Vec agh_expect(const std::function<Vec(double)>& h, const TiltedDensity& density, const QuadratureRule& rule);
double agh_expect(const std::function<double(double)>& h, const TiltedDensity& density, const QuadratureRule& rule);

// log sum_j exp(log_w_j + slope * x_j); the workhorse for exponential moments.
double log_sum_exp_tilt(const AdaptedNodes& nodes, double slope);

double log_sum_exp(const Vec& v);

}  // namespace coxmiss
