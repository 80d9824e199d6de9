#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mscure/data_prep.hpp"
#include "mscure/model_spec.hpp"

namespace mscure {

/// Counting-process data for one Cox stratum: rows at risk over (start, stop].
class CoxData {
public:
    CoxData() = default;
    CoxData(std::vector<double> start, std::vector<double> stop, std::vector<int> status,
            std::vector<double> weight, Eigen::MatrixXd x);

    std::size_t size() const { return start_.size(); }
    Eigen::Index columns() const { return x_.cols(); }

    const std::vector<double>& start() const { return start_; }
    const std::vector<double>& stop() const { return stop_; }
    const std::vector<int>& status() const { return status_; }
    const std::vector<double>& weight() const { return weight_; }
    const Eigen::MatrixXd& x() const { return x_; }
    void set_weights(std::vector<double> w) { weight_ = std::move(w); }

    /// Distinct event times, ascending.
    const std::vector<double>& event_times() const { return event_times_; }
    /// Rows with status 1 at event_times()[k].
    const std::vector<std::size_t>& events_at(std::size_t k) const { return event_rows_[k]; }
    const std::vector<std::size_t>& by_stop_desc() const { return by_stop_desc_; }
    const std::vector<std::size_t>& by_start_desc() const { return by_start_desc_; }

private:
    std::vector<double> start_, stop_;
    std::vector<int> status_;
    std::vector<double> weight_;
    Eigen::MatrixXd x_;
    std::vector<double> event_times_;
    std::vector<std::vector<std::size_t>> event_rows_;
    std::vector<std::size_t> by_stop_desc_, by_start_desc_;
};

struct CoxEvaluation {
    double loglik = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd information;  // negative Hessian
};

/// Weighted Breslow partial log-likelihood using the first `beta.size()` columns of x.
CoxEvaluation cox_partial_loglik(const CoxData& data, const Eigen::VectorXd& beta);

struct CoxSolverOptions {
    double tol = 1e-9;
    int max_iter = 50;
    /// Coefficient index whose magnitude is watched for divergence, with its bound.
    Eigen::Index watch = -1;
    double watch_bound = 10.0;
};

struct CoxFitResult {
    Eigen::VectorXd coef;
    double loglik = 0.0;
    double gradient_norm = 0.0;
    int iterations = 0;
    bool watch_exceeded = false;
    std::vector<double> trace;  // log-likelihood after each accepted step
};

/// Newton-Raphson with step-halving. Throws on non-convergence.
CoxFitResult fit_cox(const CoxData& data, const Eigen::VectorXd& start, const CoxSolverOptions& options);

struct BaselineSteps {
    std::vector<double> times;
    std::vector<double> increments;
    std::vector<double> cumulative;

    /// Sum of increments at event times <= t.
    double cumulative_at(double t) const;
    /// Increment at exactly t, or nullopt when t is not an event time.
    std::optional<double> increment_at(double t) const;
};

/// Breslow increments: weighted events over weighted risk at each event time.
BaselineSteps breslow(const CoxData& data, const Eigen::VectorXd& beta);

struct TransitionCoefficients {
    Eigen::VectorXd beta;
    std::optional<double> gamma;  // split transitions only, absent once dropped
    bool gamma_dropped = false;
    bool fitted = false;
    int iterations = 0;
    double loglik = 0.0;
    double gradient_norm = 0.0;
};

struct CoxCoefficients {
    std::vector<TransitionCoefficients> by_transition;  // indexed by id - 1
    std::vector<std::string> warnings;

    const TransitionCoefficients& at(int trans) const {
        return by_transition.at(static_cast<std::size_t>(trans - 1));
    }
    double linear_predictor(int trans, const Eigen::VectorXd& z_survival, int cure) const;
};

struct BaselineHazard {
    std::vector<BaselineSteps> by_transition;  // indexed by id - 1

    const BaselineSteps& at(int trans) const { return by_transition.at(static_cast<std::size_t>(trans - 1)); }
};

/// Stratum of one transition as Cox data; the last column is the cure flag
/// when the transition is split.
CoxData transition_data(const ExtendedLongTable& table, const ModelSpec& spec, int trans);

struct CoxFitOptions {
    CoxSolverOptions solver;
    double gamma_drop_threshold = 10.0;
    /// Transitions to keep from `previous` instead of refitting.
    std::vector<bool> keep;
};

CoxFitOptions cox_fit_options(const ModelSpec& spec);

/// Transition-stratified weighted Cox fit; starts from `previous` when given.
CoxCoefficients fit_weighted_cox(const ExtendedLongTable& table, const ModelSpec& spec,
                                 const CoxFitOptions& options, const CoxCoefficients* previous = nullptr);

BaselineHazard breslow_baseline(const ExtendedLongTable& table, const ModelSpec& spec,
                                const CoxCoefficients& coefs);

double cumulative_hazard(const ExtendedLongRow& row, const Subject& subject, const CoxCoefficients& coefs,
                         const BaselineHazard& baseline);

/// exp(-cum_haz) * hazard^status.
double row_likelihood(double cum_haz, double hazard, int status);

/// Fills cum_haz, hazard and log_likelihood of a row.
void evaluate_row(ExtendedLongRow& row, const Subject& subject, const CoxCoefficients& coefs,
                  const BaselineHazard& baseline);

}  // namespace mscure
