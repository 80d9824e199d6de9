#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mscure/em.hpp"

namespace mscure {

/// Layout of theta = (alpha, then per fitted transition: beta, gamma, lambda_0j)
/// as a flat vector. Baseline increments that are exactly 0 are not parameters.
struct ParameterIndex {
    enum class Kind { alpha, beta, gamma, lambda };
    struct Entry {
        Kind kind;
        int trans = 0;   // 0 for alpha
        int column = 0;  // covariate column, or baseline event-time index
        std::string name;
    };
    struct TransitionBlock {
        int beta = -1;   // offset of beta, -1 when the transition has no parameters
        int gamma = -1;
        std::vector<int> lambda;  // per baseline event time, position or -1
    };

    std::vector<Entry> entries;
    int alpha = -1;
    int alpha_size = 0;
    int beta_size = 0;
    std::vector<TransitionBlock> transitions;  // indexed by id - 1

    Eigen::Index size() const { return static_cast<Eigen::Index>(entries.size()); }
    /// Positions of alpha, beta and gamma entries, in regression_parameters() order.
    std::vector<int> regression() const;
};

ParameterIndex parameter_index(const ModelParameters& theta, const ModelSpec& spec);
Eigen::VectorXd pack(const ModelParameters& theta, const ParameterIndex& index);
/// Writes `values` into a copy of `theta`, recomputing cumulative baselines.
ModelParameters unpack(const Eigen::VectorXd& values, const ModelParameters& theta, const ParameterIndex& index);

/// Gradients of log f_i (cured branch) and log h_i (non-cured branch) with
/// respect to the survival parameters phi = (beta, gamma, lambda_0), laid out
/// as in `index` (alpha entries stay 0).
struct SubjectScores {
    Eigen::VectorXd cured;
    Eigen::VectorXd noncured;
};

/// Requires the table's analysis columns to be current for theta (run e_step).
SubjectScores score_components(const ExtendedLongTable& table, std::size_t subject, const ModelParameters& theta,
                               const ParameterIndex& index);

/// dw_i/dtheta laid out as in `index`: w(1-w) z on alpha, w(1-w)(S_f - S_h) on phi.
/// Zero for known non-cured subjects and subjects under a zero-tail constraint.
Eigen::VectorXd weight_derivatives(const ExtendedLongTable& table, std::size_t subject, const ModelParameters& theta,
                                   const ParameterIndex& index);

/// Gradient of l_O at theta via the Fisher identity. Runs an E-step on `table`.
Eigen::VectorXd observed_score(ExtendedLongTable& table, const ModelParameters& theta, const ParameterIndex& index);

struct InformationResult {
    ParameterIndex index;
    Eigen::MatrixXd information;  // -d2 l_O, Oakes identity
    Eigen::MatrixXd complete;     // -d2 Q / dtheta' dtheta'^T alone
    std::vector<std::string> names;
    Eigen::MatrixXd covariance;        // (alpha, beta, gamma) block of information^-1
    Eigen::MatrixXd naive_covariance;  // same block of complete^-1
    Eigen::VectorXd se;
};

/// Fills `index`, `information`, `complete` and `names` at theta, without
/// inverting. The table's analysis columns are refreshed with an E-step first.
InformationResult information_matrices(ExtendedLongTable table, const ModelParameters& theta, const ModelSpec& spec);
/// information_matrices plus covariance and SEs. Throws when the information is singular.
InformationResult oakes_information(ExtendedLongTable table, const ModelParameters& theta, const ModelSpec& spec);

struct BootstrapOptions {
    int replicates = 200;
    std::uint64_t seed = 1;
    double epsilon = 0.01;
    int max_iter = 80;
    int jobs = 0;  // 0: OpenMP default
    /// Replicate r resamples the cohort itself (testing aid).
    bool identity_resample = false;
    /// Start each replicate's EM from the full-data estimate instead of w = 0.5.
    bool warm_start = false;
};

struct BootstrapResult {
    int replicates = 0;
    std::vector<std::string> names;
    Eigen::MatrixXd estimates;  // replicates x names; NaN where a replicate failed or lacks the parameter
    Eigen::VectorXd se;         // sample SD over available entries
    Eigen::VectorXi available;  // per parameter, replicates contributing
    int failures = 0;
    int capped = 0;  // replicates that hit max_iter (they still contribute)
    std::vector<std::string> failure_messages;
};

std::uint64_t replicate_seed(std::uint64_t seed, int replicate);
/// Subject indices drawn with replacement for one replicate.
std::vector<std::size_t> resample_indices(std::size_t n, std::uint64_t seed);

BootstrapResult bootstrap_se(const std::vector<WideRecord>& cohort, const ModelSpec& spec, const FittedModel& full,
                             const BootstrapOptions& options);
/// Single-threaded reference of bootstrap_se.
BootstrapResult bootstrap_se_reference(const std::vector<WideRecord>& cohort, const ModelSpec& spec,
                                       const FittedModel& full, const BootstrapOptions& options);

}  // namespace mscure
