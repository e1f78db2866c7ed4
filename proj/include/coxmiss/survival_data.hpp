#pragma once

#include "coxmiss/types.hpp"

#include <vector>

namespace coxmiss {

// Risk-set bookkeeping shared by the E-step, the M-step and the likelihood.
// Built once per dataset; event times are the distinct observed event times.
struct RiskSets {
    std::vector<double> times;      // t_1 < ... < t_m
    std::vector<int> counts;        // d_j, events tied at t_j
    std::vector<int> desc_order;    // subjects by decreasing y (ties by index)
    std::vector<int> n_upto;        // per subject: #{j : t_j <= y_i}
    std::vector<int> event_index;   // per subject: j(i) for events, -1 otherwise

    explicit RiskSets(const Dataset& data);
    RiskSets() = default;

    int m() const { return static_cast<int>(times.size()); }

    // Lambda(y_i) for every subject under the given jump sizes.
    Vec cumhaz_at_subjects(const Vec& jumps) const;

    // S0(t_j) = sum_{i : y_i >= t_j} w_i, accumulated in desc_order.
    Vec risk_sums(const Vec& w) const;
};

// Nelson-Aalen jumps d_j / #risk(t_j).
Vec nelson_aalen(const RiskSets& rs);

// Breslow-type jumps d_j / S0(t_j) for per-subject relative risks.
Vec breslow_update(const RiskSets& rs, const Vec& erisk_new);

}  // namespace coxmiss
