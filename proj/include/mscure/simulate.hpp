#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mscure/data_prep.hpp"
#include "mscure/model_spec.hpp"

namespace mscure {

/// Piecewise-constant hazard: rates[k] on [breaks[k], breaks[k+1]), the last rate onwards.
struct PiecewiseHazard {
    std::vector<double> breaks{0.0};
    std::vector<double> rates{0.0};

    double rate(double t) const;
    double cumulative(double t) const;
};

struct CovariateDistribution {
    std::vector<std::string> levels;  // Bernoulli: {"0", "1"}
    std::vector<double> probabilities;
};

struct TrueTransition {
    Eigen::VectorXd beta;  // per survival design column
    std::optional<double> gamma;
    PiecewiseHazard hazard;
};

struct Censoring {
    enum class Type { uniform, administrative };
    Type type = Type::administrative;
    double min = 0.0;  // uniform only
    double max = 0.0;
};

struct TrueModel {
    ModelSpec spec;
    Eigen::VectorXd alpha;  // cure design, intercept first
    std::vector<TrueTransition> transitions;  // indexed by id - 1
    std::map<std::string, CovariateDistribution> covariates;
    Censoring censoring;

    double pi(const CovariateValues& z) const;
    /// Hazard of transition `trans` at t for cure status g, covariates encoded.
    double hazard(int trans, double t, const Eigen::VectorXd& z_survival, int g) const;
};

/// `model` is an inline spec or a path, resolved against `base_dir` when relative.
TrueModel true_model_from_json(const nlohmann::json& doc, const std::string& base_dir = "");
TrueModel load_true_model(const std::string& path);

struct SimulatedSubject {
    WideRecord record;
    int cured = 0;
    ObservedPath path;
};

/// One subject from its own RNG stream derive_seed(seed, index).
SimulatedSubject simulate_subject(const TrueModel& truth, std::size_t index, std::uint64_t seed);

std::vector<WideRecord> simulate_cohort(const TrueModel& truth, std::size_t n, std::uint64_t seed,
                                        std::vector<int>* cured = nullptr);
/// Single-threaded reference of simulate_cohort.
std::vector<WideRecord> simulate_cohort_reference(const TrueModel& truth, std::size_t n, std::uint64_t seed,
                                                  std::vector<int>* cured = nullptr);

/// Covariate names in the order used for wide CSV output.
std::vector<std::string> covariate_order(const TrueModel& truth);

}  // namespace mscure
