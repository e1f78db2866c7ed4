#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace coxmiss {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Stable error codes. The CLI maps these onto process exit statuses.
enum class ErrorCode {
    singular_covariance = 10,
    integration_failure = 11,
    contract_violation = 12,
    non_convergence = 13,
    design_error = 14,
    inference_unreliable = 15,
    io_error = 20,
    schema_error = 21,
    validation_error = 22,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// Missing-covariate indicator for one subject (true = missing), with the
// induced partition of {0..p-1} into missing and observed index lists.
struct MissingMask {
    std::vector<bool> flags;
    std::vector<int> missing;
    std::vector<int> observed;

    MissingMask() = default;
    explicit MissingMask(std::vector<bool> f);
    static MissingMask none(int p) { return MissingMask(std::vector<bool>(static_cast<size_t>(p), false)); }

    int size() const { return static_cast<int>(flags.size()); }
    int n_missing() const { return static_cast<int>(missing.size()); }
    int n_observed() const { return static_cast<int>(observed.size()); }
    bool complete() const { return missing.empty(); }
    std::string to_string() const;

    bool operator==(const MissingMask& o) const { return flags == o.flags; }
};

// One subject's observed data: follow-up time, event indicator, mask and the
// observed covariate values (in the order of mask.observed).
struct ObservedSubject {
    double y = 0.0;
    int delta = 0;
    MissingMask mask;
    Vec x_obs;

    // Full p-vector with observed values in place and NaN in missing slots.
    Vec x_full() const;
};

struct Dataset {
    int p = 0;
    std::vector<ObservedSubject> subjects;
    std::vector<std::string> names;

    int n() const { return static_cast<int>(subjects.size()); }
    int n_events() const;
    void validate() const;
};

// Baseline cumulative hazard as a right-continuous step function.
struct Baseline {
    std::vector<double> times;  // strictly increasing
    std::vector<double> jumps;  // positive

    double total() const;
    Vec jump_vector() const { return Eigen::Map<const Vec>(jumps.data(), static_cast<Eigen::Index>(jumps.size())); }
};

double cumulative_hazard(const Baseline& baseline, double t);

// Re-express a step function on another set of jump times: each new jump is
// the increment of the source cumulative hazard since the previous new time.
Baseline baseline_on_times(const Baseline& source, const std::vector<double>& times);

struct ParameterSet {
    Vec beta;
    Baseline baseline;
    Vec mu;
    Mat sigma;

    int p() const { return static_cast<int>(beta.size()); }
    void validate() const;
};

}  // namespace coxmiss
