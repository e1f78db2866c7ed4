#pragma once

#include "coxmiss/em_fit.hpp"
#include "coxmiss/types.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace coxmiss {

struct BootstrapConfig {
    int B = 500;
    double level = 0.95;
    std::uint64_t seed = 1;
    int workers = 1;
    double max_fail_fraction = 0.2;
};

struct BootstrapResult {
    Vec estimate;       // full-data beta
    Vec se;
    Vec ci_lower;       // percentile interval (reported by default)
    Vec ci_upper;
    Vec normal_lower;   // estimate -/+ z * se
    Vec normal_upper;
    int n_replicates = 0;
    int n_failed = 0;
    Mat draws;          // one row per successful replicate, in replicate order
};

// Type-7 sample quantile (linear interpolation between order statistics).
double quantile(std::vector<double> values, double q);

// n indices drawn with replacement.
std::vector<int> resample_indices(int n, std::uint64_t seed);
// Subjects drawn with replacement, using resample_indices.
Dataset resample(const Dataset& data, std::uint64_t seed);

// Computes the statistic on the resampled index list of a replicate;
// std::nullopt (or an Error) marks the replicate as failed.
using Statistic = std::function<std::optional<Vec>(const std::vector<int>&)>;

// Replicate b uses the index stream derived from (bc.seed, b), so results do
// not depend on the worker count.
BootstrapResult bootstrap_statistic(int n, const Vec& estimate, const Statistic& stat, const BootstrapConfig& bc);

// Nonparametric bootstrap of the NPMLE. Each replicate is warm-started at
// the full-data fit (computed here unless supplied).
BootstrapResult bootstrap(const Dataset& data, const FitConfig& config, const BootstrapConfig& bc,
                          const std::optional<FitResult>& full_fit = std::nullopt);

}  // namespace coxmiss
