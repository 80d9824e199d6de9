#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mscure/cure.hpp"
#include "mscure/data_prep.hpp"
#include "mscure/model_spec.hpp"
#include "mscure/survival.hpp"

namespace mscure {

/// theta = {alpha, beta, gamma, baseline hazards}.
struct ModelParameters {
    CureCoefficients cure;
    CoxCoefficients cox;
    BaselineHazard baseline;
    /// No subject of unknown status: alpha is not estimable and pi is taken as 0.
    bool cure_degenerate = false;

    double pi(const Eigen::VectorXd& z_cure) const;
};

/// Bayes-rule posterior P(cured | path) from the two branch likelihoods.
double posterior_weight(double pi, double lik_cured, double lik_noncured);
/// Same, from log branch likelihoods.
double posterior_weight_log(double pi, double log_cured, double log_noncured);

/// log(pi * f + (1 - pi) * h) for an unknown subject; log((1 - pi) * h) when known non-cured.
double subject_loglik(double pi, double log_cured, double log_noncured, bool known_noncured);

struct EStepResult {
    double loglik = 0.0;
    std::vector<double> subject_loglik;
};

/// Recomputes pi, cumHaz, hazard and likelihood columns, then the posterior
/// weights. Subjects are processed in parallel; the log-likelihood is reduced
/// in subject order.
EStepResult e_step(ExtendedLongTable& table, const ModelParameters& theta);
/// Single-threaded reference of e_step.
EStepResult e_step_reference(ExtendedLongTable& table, const ModelParameters& theta);

/// Observed-data log-likelihood from the current analysis columns. Subjects
/// under a zero-tail constraint contribute only their imposed branch.
double observed_loglik(const ExtendedLongTable& table);

/// Last observed entry time into a non-cure state, or -inf.
double noncure_tmax(const ExtendedLongTable& table, const ModelSpec& spec);
/// Zero-tail constraint: unknown subjects still at risk of a non-cure state
/// after t_max get a fixed cure status (1 or 0 by mode) that later E-steps and
/// the observed log-likelihood respect. Returns the number of such subjects.
std::size_t apply_zero_tail(ExtendedLongTable& table, ZeroTail mode, double t_max);

/// Weighted Cox + weighted logistic sub-fits. Transitions out of non-cure
/// states are carried over from `previous` when it has them.
ModelParameters m_step(const ExtendedLongTable& table, const ModelSpec& spec,
                       const ModelParameters* previous = nullptr);

struct EmIteration {
    int iteration = 0;
    double loglik = 0.0;
    /// A gamma was dropped in this M-step, so the likelihood is over a smaller model.
    bool structure_changed = false;
    const ExtendedLongTable& table;
    const ModelParameters& theta;
};

struct EmOptions {
    double epsilon = 1e-4;
    int max_iter = 500;
    /// Initial E-step from these parameters instead of w = 0.5.
    std::optional<ModelParameters> warm_start;
    std::function<void(const EmIteration&)> observer;
    bool parallel = true;
};

EmOptions em_options(const FitConfig& config);

struct SubjectPosterior {
    std::string id;
    bool known_noncured = false;
    double pi = 0.0;
    double weight = 0.0;
};

struct FittedModel {
    ModelSpec spec;
    ModelParameters theta;
    std::vector<SubjectPosterior> subjects;
    std::vector<double> loglik_trace;
    bool converged = false;
    int iterations = 0;
    std::vector<std::string> warnings;
    /// Iterations (1-based) whose M-step dropped a gamma.
    std::vector<int> structure_changes;
};

struct EmResult {
    FittedModel model;
    ExtendedLongTable table;  // analysis columns at the final estimate
};

EmResult em_fit(ExtendedLongTable table, const ModelSpec& spec, const EmOptions& options);
EmResult em_fit(const std::vector<WideRecord>& cohort, const ModelSpec& spec);

}  // namespace mscure
