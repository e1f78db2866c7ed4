#include "coxmiss/bootstrap_infer.hpp"

#include "coxmiss/parallel.hpp"
#include "coxmiss/rng.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>

namespace coxmiss {

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw Error(ErrorCode::contract_violation, "quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorCode::contract_violation, "quantile level outside [0, 1]");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * q;
    const auto lo = static_cast<size_t>(std::floor(h));
    const size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<int> resample_indices(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_int_distribution<int> pick(0, n - 1);
    std::vector<int> idx(static_cast<size_t>(n));
    for (auto& i : idx) i = pick(rng);
    return idx;
}

Dataset resample(const Dataset& data, std::uint64_t seed) {
    Dataset out;
    out.p = data.p;
    out.names = data.names;
    out.subjects.reserve(data.subjects.size());
    for (int i : resample_indices(data.n(), seed)) out.subjects.push_back(data.subjects[static_cast<size_t>(i)]);
    return out;
}

BootstrapResult bootstrap_statistic(int n, const Vec& estimate, const Statistic& stat, const BootstrapConfig& bc) {
    if (bc.B < 2) throw Error(ErrorCode::validation_error, "bootstrap needs B >= 2");
    if (!(bc.level > 0.0 && bc.level < 1.0)) throw Error(ErrorCode::validation_error, "ci level must lie in (0, 1)");
    const auto p = estimate.size();
    std::vector<std::optional<Vec>> est(static_cast<size_t>(bc.B));
    parallel_for(bc.B, resolve_workers(bc.workers), [&](int b) {
        try {
            est[static_cast<size_t>(b)] = stat(resample_indices(n, derive_seed(bc.seed, 0xB007, static_cast<std::uint64_t>(b))));
        } catch (const Error&) {
        }
    });

    BootstrapResult r;
    r.estimate = estimate;
    r.n_replicates = bc.B;
    for (const auto& e : est)
        if (!e) ++r.n_failed;
    if (r.n_failed > bc.max_fail_fraction * bc.B)
        throw Error(ErrorCode::inference_unreliable,
                    std::to_string(r.n_failed) + " of " + std::to_string(bc.B) + " bootstrap replicates failed");
    const int ok = bc.B - r.n_failed;
    if (ok < 2) throw Error(ErrorCode::inference_unreliable, "fewer than two successful bootstrap replicates");
    r.draws.resize(ok, p);
    int row = 0;
    for (const auto& e : est)
        if (e) r.draws.row(row++) = e->transpose();

    const double alpha = 1.0 - bc.level;
    const double z = boost::math::quantile(boost::math::normal(), 1.0 - alpha / 2.0);
    r.se.resize(p);
    r.ci_lower.resize(p);
    r.ci_upper.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const Vec col = r.draws.col(j);
        const double m = col.mean();
        r.se(j) = std::sqrt((col.array() - m).square().sum() / (ok - 1));
        std::vector<double> v(col.data(), col.data() + col.size());
        r.ci_lower(j) = quantile(v, alpha / 2.0);
        r.ci_upper(j) = quantile(v, 1.0 - alpha / 2.0);
    }
    r.normal_lower = r.estimate - z * r.se;
    r.normal_upper = r.estimate + z * r.se;
    return r;
}

BootstrapResult bootstrap(const Dataset& data, const FitConfig& config, const BootstrapConfig& bc,
                          const std::optional<FitResult>& full_fit) {
    if (bc.B < 2) throw Error(ErrorCode::validation_error, "bootstrap needs B >= 2");
    const FitResult full = full_fit ? *full_fit : fit_npmle(data, config);
    FitConfig rc = config;
    rc.workers = 1;
    rc.init = full.params;
    const Statistic refit = [&](const std::vector<int>& idx) -> std::optional<Vec> {
        Dataset d;
        d.p = data.p;
        d.names = data.names;
        d.subjects.reserve(idx.size());
        for (int i : idx) d.subjects.push_back(data.subjects[static_cast<size_t>(i)]);
        const FitResult f = fit_npmle(d, rc);
        if (!f.converged) return std::nullopt;
        return f.params.beta;
    };
    return bootstrap_statistic(data.n(), full.params.beta, refit, bc);
}

}  // namespace coxmiss
