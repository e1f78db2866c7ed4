#include "coxmiss/survival_data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace coxmiss {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::singular_covariance: return "singular_covariance";
        case ErrorCode::integration_failure: return "integration_failure";
        case ErrorCode::contract_violation: return "contract_violation";
        case ErrorCode::non_convergence: return "non_convergence";
        case ErrorCode::design_error: return "design_error";
        case ErrorCode::inference_unreliable: return "inference_unreliable";
        case ErrorCode::io_error: return "io_error";
        case ErrorCode::schema_error: return "schema_error";
        case ErrorCode::validation_error: return "validation_error";
    }
    return "unknown";
}

MissingMask::MissingMask(std::vector<bool> f) : flags(std::move(f)) {
    for (int j = 0; j < static_cast<int>(flags.size()); ++j) {
        (flags[static_cast<size_t>(j)] ? missing : observed).push_back(j);
    }
}

std::string MissingMask::to_string() const {
    std::string s;
    s.reserve(flags.size());
    for (bool b : flags) s.push_back(b ? 'M' : 'o');
    return s;
}

Vec ObservedSubject::x_full() const {
    Vec x = Vec::Constant(mask.size(), std::numeric_limits<double>::quiet_NaN());
    for (int k = 0; k < mask.n_observed(); ++k) x(mask.observed[static_cast<size_t>(k)]) = x_obs(k);
    return x;
}

int Dataset::n_events() const {
    int d = 0;
    for (const auto& s : subjects) d += s.delta;
    return d;
}

void Dataset::validate() const {
    if (p < 1) throw Error(ErrorCode::validation_error, "dataset needs at least one covariate");
    for (size_t i = 0; i < subjects.size(); ++i) {
        const auto& s = subjects[i];
        if (!(s.y > 0.0) || !std::isfinite(s.y))
            throw Error(ErrorCode::validation_error, "subject " + std::to_string(i) + ": follow-up time must be finite and positive");
        if (s.delta != 0 && s.delta != 1)
            throw Error(ErrorCode::validation_error, "subject " + std::to_string(i) + ": status must be 0 or 1");
        if (s.mask.size() != p || s.x_obs.size() != s.mask.n_observed())
            throw Error(ErrorCode::validation_error, "subject " + std::to_string(i) + ": covariate vector does not match mask");
    }
}

double Baseline::total() const { return std::accumulate(jumps.begin(), jumps.end(), 0.0); }

double cumulative_hazard(const Baseline& baseline, double t) {
    auto end = std::upper_bound(baseline.times.begin(), baseline.times.end(), t);
    double s = 0.0;
    for (auto it = baseline.times.begin(); it != end; ++it)
        s += baseline.jumps[static_cast<size_t>(it - baseline.times.begin())];
    return s;
}

Baseline baseline_on_times(const Baseline& source, const std::vector<double>& times) {
    Baseline out;
    out.times = times;
    out.jumps.resize(times.size());
    double prev = 0.0;
    for (size_t j = 0; j < times.size(); ++j) {
        double cur = cumulative_hazard(source, times[j]);
        double jump = cur - prev;
        // Times absent from the source get a small positive jump so the
        // result stays a valid NPMLE support.
        out.jumps[j] = jump > 0.0 ? jump : 1e-8;
        prev = std::max(prev, cur);
    }
    return out;
}

void ParameterSet::validate() const {
    const auto p = beta.size();
    if (mu.size() != p || sigma.rows() != p || sigma.cols() != p)
        throw Error(ErrorCode::validation_error, "parameter dimensions disagree");
    if (baseline.times.size() != baseline.jumps.size())
        throw Error(ErrorCode::validation_error, "baseline times/jumps length mismatch");
    for (size_t j = 0; j < baseline.times.size(); ++j) {
        if (j > 0 && !(baseline.times[j] > baseline.times[j - 1]))
            throw Error(ErrorCode::validation_error, "baseline jump times must be strictly increasing");
        if (!(baseline.jumps[j] > 0.0))
            throw Error(ErrorCode::validation_error, "baseline jumps must be positive");
    }
    if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + sigma.cwiseAbs().maxCoeff()))
        throw Error(ErrorCode::validation_error, "sigma must be symmetric");
}

RiskSets::RiskSets(const Dataset& data) {
    const int n = data.n();
    std::vector<double> ev;
    for (const auto& s : data.subjects)
        if (s.delta == 1) ev.push_back(s.y);
    std::sort(ev.begin(), ev.end());
    for (double t : ev) {
        if (times.empty() || t > times.back()) {
            times.push_back(t);
            counts.push_back(1);
        } else {
            ++counts.back();
        }
    }
    desc_order.resize(static_cast<size_t>(n));
    std::iota(desc_order.begin(), desc_order.end(), 0);
    std::stable_sort(desc_order.begin(), desc_order.end(), [&](int a, int b) {
        return data.subjects[static_cast<size_t>(a)].y > data.subjects[static_cast<size_t>(b)].y;
    });
    n_upto.resize(static_cast<size_t>(n));
    event_index.assign(static_cast<size_t>(n), -1);
    for (int i = 0; i < n; ++i) {
        const auto& s = data.subjects[static_cast<size_t>(i)];
        auto ub = std::upper_bound(times.begin(), times.end(), s.y);
        n_upto[static_cast<size_t>(i)] = static_cast<int>(ub - times.begin());
        if (s.delta == 1) event_index[static_cast<size_t>(i)] = n_upto[static_cast<size_t>(i)] - 1;
    }
}

Vec RiskSets::cumhaz_at_subjects(const Vec& jumps) const {
    Vec cum(m() + 1);
    cum(0) = 0.0;
    for (int j = 0; j < m(); ++j) cum(j + 1) = cum(j) + jumps(j);
    Vec out(static_cast<Eigen::Index>(n_upto.size()));
    for (size_t i = 0; i < n_upto.size(); ++i) out(static_cast<Eigen::Index>(i)) = cum(n_upto[i]);
    return out;
}

Vec RiskSets::risk_sums(const Vec& w) const {
    // Sweep subjects from the longest follow-up down; S0(t_j) is the running
    // sum once every subject with y >= t_j has been added.
    Vec s0 = Vec::Zero(m());
    double acc = 0.0;
    int j = m() - 1;
    size_t k = 0;
    while (j >= 0) {
        while (k < desc_order.size() && n_upto[static_cast<size_t>(desc_order[k])] > j) {
            acc += w(desc_order[k]);
            ++k;
        }
        s0(j) = acc;
        --j;
    }
    return s0;
}

Vec nelson_aalen(const RiskSets& rs) {
    return breslow_update(rs, Vec::Ones(static_cast<Eigen::Index>(rs.n_upto.size())));
}

Vec breslow_update(const RiskSets& rs, const Vec& erisk_new) {
    Vec s0 = rs.risk_sums(erisk_new);
    Vec lambda(rs.m());
    for (int j = 0; j < rs.m(); ++j) {
        if (!(s0(j) > 0.0))
            throw Error(ErrorCode::contract_violation, "empty or non-positive risk-set sum at event time " + std::to_string(rs.times[static_cast<size_t>(j)]));
        lambda(j) = rs.counts[static_cast<size_t>(j)] / s0(j);
    }
    return lambda;
}

}  // namespace coxmiss
