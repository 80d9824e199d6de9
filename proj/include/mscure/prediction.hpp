#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mscure/em.hpp"

namespace mscure {

/// Observed history H(s) of one subject up to the landmark.
struct History {
    double landmark = 0.0;
    std::vector<StateVisit> visits;  // starts in the initial state at time 0
    CovariateValues covariates;

    StateId current() const { return visits.back().state; }
};

/// Checks the walk and fills in the initial visit when it is missing.
History normalize_history(History h, const ModelSpec& spec);
History history_from_json(const nlohmann::json& doc, const ModelSpec& spec);
History load_history(const std::string& path, const ModelSpec& spec);

/// Aalen-Johansen P(s, t) for cure branch g; states indexed 0..m-1.
Eigen::MatrixXd transition_probability_matrix(const FittedModel& model, const CovariateValues& z, int g, double s,
                                              double t);

/// P(G = 1 | H(s), Z*). Exactly 0 when the history entered a non-cure state.
double posterior_cure_given_history(const History& history, const FittedModel& model);

struct PredictionCurve {
    double landmark = 0.0;
    StateId state = 1;
    double p_cured = 0.0;
    std::vector<double> times;
    Eigen::MatrixXd probability;  // times x states, mixed over cure status
    Eigen::MatrixXd cured;        // branch g = 1
    Eigen::MatrixXd noncured;     // branch g = 0
};

/// `s`, every fitted event time in (s, t], and `t`.
std::vector<double> prediction_grid(const FittedModel& model, double s, double t);

/// State occupancy over `grid` (ascending, >= landmark). `p_cured` overrides the posterior.
PredictionCurve dynamic_predict(const History& history, const FittedModel& model, const std::vector<double>& grid,
                                std::optional<double> p_cured = std::nullopt);

/// Long format: time, state, probability, p_cured, landmark_s.
void write_prediction_csv(std::ostream& out, const PredictionCurve& curve, const ModelSpec& spec);

}  // namespace mscure
