#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mscure/em.hpp"

namespace mscure {

nlohmann::json to_json(const FittedModel& model);
FittedModel fitted_model_from_json(const nlohmann::json& doc);
FittedModel load_fitted_model(const std::string& path);

struct NamedParameter {
    std::string name;    // e.g. "alpha:(Intercept)", "beta:1->2:age", "gamma:1->2"
    double value = 0.0;
};

/// (alpha, beta, gamma) in canonical order: alpha, then per transition beta then gamma.
std::vector<NamedParameter> regression_parameters(const ModelParameters& theta, const ModelSpec& spec);

/// Coefficient table shaped like a report: one row for the cure analysis, one
/// per transition; `<term>` and `<term>_se` column pairs. `se` is keyed by
/// parameter name; missing entries are left empty.
void write_coefficients_csv(std::ostream& out, const FittedModel& model,
                            const std::map<std::string, double>& se = {});
/// Human-readable `coef (se)` table rounded to 3 decimals.
void write_coefficients_report(std::ostream& out, const FittedModel& model,
                               const std::map<std::string, double>& se = {});

void write_cure_probabilities_csv(std::ostream& out, const FittedModel& model);
void write_trace_csv(std::ostream& out, const FittedModel& model);
/// Baseline (all covariates zero, non-cured) hazard steps.
void write_baseline_csv(std::ostream& out, const FittedModel& model);

}  // namespace mscure
