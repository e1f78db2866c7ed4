#pragma once

#include "coxmiss/em_fit.hpp"
#include "coxmiss/lasso_path.hpp"
#include "coxmiss/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace coxmiss {

struct ParsedDataset {
    Dataset data;
    std::vector<double> missing_fraction;   // per covariate column
    std::vector<std::string> warnings;
};

// Delimited table with a header; `time` and `status` columns are required,
// every other column is a covariate. Empty fields and NA mark missing values.
// Columns listed in `complete_columns` must have no missing entries.
ParsedDataset parse_dataset_text(const std::string& text, const std::vector<std::string>& complete_columns = {});
ParsedDataset parse_dataset(const std::string& path, const std::vector<std::string>& complete_columns = {});

std::string dataset_csv(const Dataset& data);

std::string read_file(const std::string& path);
// Writes to a temporary sibling and renames over the target.
void write_file_atomic(const std::string& path, const std::string& contents);

struct FitOutput {
    std::string kind = "npmle";        // "npmle" or "lasso"
    std::vector<std::string> names;
    ParameterSet params;
    double loglik = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> loglik_trace;
    int n = 0;
    int n_events = 0;
    std::vector<std::string> condition_on;
    double marginal_loglik = 0.0;      // Gaussian term of the conditioning columns, already removed from loglik
    // lasso only
    std::optional<LassoPath> path;
    // bootstrap only
    std::optional<Vec> se;
    std::optional<Vec> ci_lower;
    std::optional<Vec> ci_upper;
    double ci_level = 0.95;
};

std::string fit_output_json(const FitOutput& out);
FitOutput parse_fit_output(const std::string& json_text);

}  // namespace coxmiss
