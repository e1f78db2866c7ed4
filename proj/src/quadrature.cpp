#include "coxmiss/quadrature.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>

namespace coxmiss {

namespace {

QuadratureRule compute_gauss_hermite(int n) {
    // Newton iteration on orthonormal Hermite polynomials with the classical
    // asymptotic starting guesses; nodes come out in decreasing order.
    const double pim4 = std::pow(std::numbers::pi, -0.25);
    std::vector<double> x(static_cast<size_t>(n)), lw(static_cast<size_t>(n));
    const int half = (n + 1) / 2;
    double z = 0.0;
    for (int i = 0; i < half; ++i) {
        if (i == 0) {
            z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
        } else if (i == 1) {
            z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
        } else if (i == 2) {
            z = 1.86 * z - 0.86 * x[0];
        } else if (i == 3) {
            z = 1.91 * z - 0.91 * x[1];
        } else {
            z = 2.0 * z - x[static_cast<size_t>(i - 2)];
        }
        double pp = 0.0;
        for (int it = 0; it < 200; ++it) {
            double p1 = pim4, p2 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = z * std::sqrt(2.0 / (j + 1.0)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1.0)) * p3;
            }
            pp = std::sqrt(2.0 * n) * p2;
            const double z1 = z;
            z = z1 - p1 / pp;
            if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
        }
        x[static_cast<size_t>(i)] = z;
        x[static_cast<size_t>(n - 1 - i)] = -z;
        const double l = std::log(2.0) - 2.0 * std::log(std::abs(pp));
        lw[static_cast<size_t>(i)] = l;
        lw[static_cast<size_t>(n - 1 - i)] = l;
    }
    if (n % 2 == 1) x[static_cast<size_t>(half - 1)] = 0.0;
    QuadratureRule rule;
    rule.nodes.resize(n);
    rule.log_weights.resize(n);
    for (int i = 0; i < n; ++i) {
        rule.nodes(i) = x[static_cast<size_t>(n - 1 - i)];
        rule.log_weights(i) = lw[static_cast<size_t>(n - 1 - i)];
    }
    return rule;
}

}  // namespace

const QuadratureRule& gauss_hermite(int order) {
    if (order < 1) throw Error(ErrorCode::contract_violation, "quadrature order must be positive");
    static std::mutex mu;
    static std::map<int, std::unique_ptr<QuadratureRule>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[order];
    if (!slot) slot = std::make_unique<QuadratureRule>(compute_gauss_hermite(order));
    return *slot;
}

double TiltedDensity::log_f(double x) const {
    const double dx = x - center;
    double val = delta * bnorm * x - 0.5 * dx * dx / variance;
    if (cumhaz > 0.0) val -= cumhaz * std::exp(bnorm * x + offset);
    return val;
}

double TiltedDensity::dlog_f(double x) const {
    double g = delta * bnorm - (x - center) / variance;
    if (cumhaz > 0.0 && bnorm != 0.0) g -= cumhaz * bnorm * std::exp(bnorm * x + offset);
    return g;
}

double TiltedDensity::neg_d2log_f(double x) const {
    double h = 1.0 / variance;
    if (cumhaz > 0.0 && bnorm != 0.0) h += cumhaz * bnorm * bnorm * std::exp(bnorm * x + offset);
    return h;
}

Mode find_mode(const TiltedDensity& d) {
    if (!(d.variance > 0.0) || !std::isfinite(d.center) || !std::isfinite(d.offset) || d.cumhaz < 0.0)
        throw Error(ErrorCode::integration_failure, "ill-formed tilted density");
    // dlog_f is strictly decreasing and concave when bnorm >= 0. The Gaussian
    // mode shifted by the linear tilt bounds the root from above.
    double hi = d.center + d.delta * d.bnorm * d.variance;
    if (d.cumhaz == 0.0 || d.bnorm == 0.0) return {hi, 1.0 / d.variance};

    double step = std::sqrt(d.variance) + 1.0 / d.bnorm;
    double lo = hi - step;
    int expand = 0;
    while (d.dlog_f(lo) < 0.0) {
        step *= 2.0;
        lo = hi - step;
        if (++expand > 200) throw Error(ErrorCode::integration_failure, "mode bracket could not be established");
    }

    // Newton from the right end decreases monotonically towards the root for a
    // concave decreasing score; bisection takes over if an iterate escapes.
    double x = hi;
    double g = d.dlog_f(x);
    for (int it = 0; it < 100; ++it) {
        if (std::abs(g) < 1e-10) return {x, d.neg_d2log_f(x)};
        if (g > 0.0) lo = x; else hi = x;
        const double h = d.neg_d2log_f(x);
        double next = x + g / h;
        if (!std::isfinite(next) || next <= lo || next >= hi) next = 0.5 * (lo + hi);
        if (std::abs(next - x) <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x)) ||
            hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x))) {
            x = next;
            return {x, d.neg_d2log_f(x)};
        }
        x = next;
        g = d.dlog_f(x);
    }
    // Bisection fallback on the final bracket.
    for (int it = 0; it < 200; ++it) {
        x = 0.5 * (lo + hi);
        g = d.dlog_f(x);
        if (std::abs(g) < 1e-10 || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x)))
            return {x, d.neg_d2log_f(x)};
        if (g > 0.0) lo = x; else hi = x;
    }
    std::ostringstream os;
    os << "mode search did not converge (center=" << d.center << ", variance=" << d.variance << ", cumhaz=" << d.cumhaz
       << ", bnorm=" << d.bnorm << ")";
    throw Error(ErrorCode::integration_failure, os.str());
}

double log_sum_exp(const Vec& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

AdaptedNodes adapt_rule(const TiltedDensity& density, const QuadratureRule& rule) {
    const Mode mode = find_mode(density);
    const double scale = std::sqrt(2.0 / mode.neg_curvature);
    const int n = rule.order();
    AdaptedNodes out;
    out.x.resize(n);
    Vec lw(n);
    for (int j = 0; j < n; ++j) {
        const double z = rule.nodes(j);
        const double x = mode.mode + scale * z;
        out.x(j) = x;
        lw(j) = rule.log_weights(j) + z * z + density.log_f(x);
    }
    const double lse = log_sum_exp(lw);
    if (!std::isfinite(lse))
        throw Error(ErrorCode::integration_failure, "quadrature mass is not finite");
    out.log_w = lw.array() - lse;
    out.log_normal_expect = lse + std::log(scale) - 0.5 * std::log(2.0 * std::numbers::pi * density.variance);
    return out;
}

AdaptedNodes point_mass(const TiltedDensity& density) {
    AdaptedNodes out;
    out.x = Vec::Constant(1, density.center);
    out.log_w = Vec::Zero(1);
    const double x = density.center;
    double h = density.delta * density.bnorm * x;
    if (density.cumhaz > 0.0) h -= density.cumhaz * std::exp(density.bnorm * x + density.offset);
    out.log_normal_expect = h;
    return out;
}

double log_sum_exp_tilt(const AdaptedNodes& nodes, double slope) {
    if (slope == 0.0) return 0.0;
    return log_sum_exp(nodes.log_w + slope * nodes.x);
}

Vec agh_expect(const std::function<Vec(double)>& h, const TiltedDensity& density, const QuadratureRule& rule) {
    const AdaptedNodes nodes = adapt_rule(density, rule);
    Vec acc;
    for (int j = 0; j < nodes.x.size(); ++j) {
        const double w = std::exp(nodes.log_w(j));
        Vec v = h(nodes.x(j));
        if (acc.size() == 0) acc = Vec::Zero(v.size());
        acc += w * v;
    }
    if (!acc.allFinite()) throw Error(ErrorCode::integration_failure, "non-finite quadrature expectation");
    return acc;
}

double agh_expect(const std::function<double(double)>& h, const TiltedDensity& density, const QuadratureRule& rule) {
    return agh_expect([&](double x) { return Vec::Constant(1, h(x)); }, density, rule)(0);
}

}  // namespace coxmiss
