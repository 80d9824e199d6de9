#include "mscure/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <set>

#include "mscure/csv.hpp"
#include "mscure/error.hpp"

namespace mscure {

namespace {

// Hazard of transition `trans` for branch g, 0 where a cured subject cannot move.
double branch_multiplier(const FittedModel& model, int trans, const Eigen::VectorXd& z, int g) {
    const auto& c = model.theta.cox.at(trans);
    if (!c.fitted) return 0.0;
    if (g == 1 && !model.spec.cure.is_split(trans)) return 0.0;
    return std::exp(model.theta.cox.linear_predictor(trans, z, g));
}

std::vector<double> event_times(const FittedModel& model, double s, double t) {
    std::set<double> u;
    for (const auto& steps : model.theta.baseline.by_transition)
        for (double x : steps.times)
            if (x > s && x <= t) u.insert(x);
    return {u.begin(), u.end()};
}

// I + dA(u) for branch g.
Eigen::MatrixXd step_matrix(const FittedModel& model, const std::vector<double>& mult, double u) {
    const int m = model.spec.states.size();
    Eigen::MatrixXd S = Eigen::MatrixXd::Identity(m, m);
    for (const auto& tr : model.spec.diagram.transitions) {
        const double k = mult[static_cast<std::size_t>(tr.id - 1)];
        if (k == 0.0) continue;
        const auto inc = model.theta.baseline.at(tr.id).increment_at(u);
        if (!inc || *inc == 0.0) continue;
        const double a = *inc * k;
        S(tr.from - 1, tr.to - 1) += a;
        S(tr.from - 1, tr.from - 1) -= a;
    }
    for (int r = 0; r < m; ++r)
        if (S(r, r) < 0.0)
            throw Error("prediction", "hazard increments leaving state " + std::to_string(r + 1) + " sum to " +
                                          csv::format_double(1.0 - S(r, r)) + " at time " + csv::format_double(u) +
                                          " for these covariates (a Breslow jump with a nearly empty risk set); "
                                          "use a horizon before this time");
    return S;
}

std::vector<double> multipliers(const FittedModel& model, const CovariateValues& z, int g) {
    const Eigen::VectorXd x = model.spec.covariates.encode_survival(z);
    std::vector<double> mult;
    for (const auto& tr : model.spec.diagram.transitions) mult.push_back(branch_multiplier(model, tr.id, x, g));
    return mult;
}

// Row `from` of P_g(s, grid[k]) for each grid time.
Eigen::MatrixXd branch_curve(const FittedModel& model, const CovariateValues& z, int g, StateId from,
                             const std::vector<double>& grid) {
    const int m = model.spec.states.size();
    const auto mult = multipliers(model, z, g);
    const double s = grid.front();
    const auto times = event_times(model, s, grid.back());
    Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(m);
    v[from - 1] = 1.0;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(grid.size()), m);
    std::size_t e = 0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        for (; e < times.size() && times[e] <= grid[k]; ++e) v = v * step_matrix(model, mult, times[e]);
        out.row(static_cast<Eigen::Index>(k)) = v;
    }
    return out;
}

}  // namespace

History normalize_history(History h, const ModelSpec& spec) {
    const StateId initial = spec.wide.initial_state;
    if (h.visits.empty() || h.visits.front().state != initial) h.visits.insert(h.visits.begin(), {initial, 0.0});
    if (h.visits.front().entry != 0.0) throw Error("prediction", "history must start in the initial state at time 0");
    if (!(h.landmark >= 0.0)) throw Error("prediction", "landmark must be non-negative");
    for (std::size_t k = 1; k < h.visits.size(); ++k) {
        const auto& a = h.visits[k - 1];
        const auto& b = h.visits[k];
        if (!spec.states.contains(b.state)) throw Error("prediction", "history visits unknown state " + std::to_string(b.state));
        if (!spec.diagram.find(a.state, b.state))
            throw Error("prediction", "history moves " + std::to_string(a.state) + "->" + std::to_string(b.state) +
                                          ", which is not a transition");
        if (!(b.entry > a.entry)) throw Error("prediction", "history entry times must be strictly increasing");
    }
    if (h.visits.back().entry > h.landmark)
        throw Error("prediction", "history has an entry after the landmark " + csv::format_double(h.landmark));
    return h;
}

History history_from_json(const nlohmann::json& doc, const ModelSpec& spec) {
    try {
        History h;
        h.landmark = doc.value("landmark", 0.0);
        for (const auto& v : doc.value("visits", nlohmann::json::array()))
            h.visits.push_back({v.at("state").get<StateId>(), v.at("entry").get<double>()});
        const auto covariates = doc.value("covariates", nlohmann::json::object());
        for (const auto& [k, v] : covariates.items())
            h.covariates[k] = v.is_string() ? v.get<std::string>() : v.dump();
        return normalize_history(std::move(h), spec);
    } catch (const nlohmann::json::exception& e) {
        throw Error("prediction", std::string("malformed history: ") + e.what());
    }
}

History load_history(const std::string& path, const ModelSpec& spec) {
    std::ifstream in(path);
    if (!in) throw Error("prediction", "cannot open history " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw Error("prediction", path + ": " + e.what());
    }
    return history_from_json(doc, spec);
}

Eigen::MatrixXd transition_probability_matrix(const FittedModel& model, const CovariateValues& z, int g, double s,
                                              double t) {
    if (!(s <= t)) throw Error("prediction", "transition probabilities need s <= t");
    if (g != 0 && g != 1) throw Error("prediction", "cure branch must be 0 or 1");
    const int m = model.spec.states.size();
    const auto mult = multipliers(model, z, g);
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(m, m);
    for (double u : event_times(model, s, t)) P = P * step_matrix(model, mult, u);
    return P;
}

double posterior_cure_given_history(const History& history, const FittedModel& model) {
    const auto& spec = model.spec;
    const auto h = normalize_history(history, spec);
    const auto z_cure = spec.covariates.encode_cure(h.covariates);
    const double pi = model.theta.pi(z_cure);
    if (h.landmark == 0.0 && h.visits.size() == 1) return pi;

    ObservedPath path{h.visits, h.landmark, spec.states.is_absorbing(h.current())};
    if (path.absorbed) path.end_time = h.visits.back().entry;
    if (path_enters_noncure(path, spec)) return 0.0;

    Subject subj;
    subj.id = "history";
    subj.z_survival = spec.covariates.encode_survival(h.covariates);
    // The baseline increment at an observed event is common to both branches and cancels.
    double log_f = 0.0, log_h = 0.0;
    for (const auto& row : long_to_extended(path_to_long(subj.id, path, spec), false, spec)) {
        double ll = -cumulative_hazard(row, subj, model.theta.cox, model.theta.baseline);
        if (row.status == 1) ll += model.theta.cox.linear_predictor(row.trans, subj.z_survival, row.cure);
        (row.cure == 1 ? log_f : log_h) += ll;
    }
    return posterior_weight_log(pi, log_f, log_h);
}

std::vector<double> prediction_grid(const FittedModel& model, double s, double t) {
    if (!(s <= t)) throw Error("prediction", "horizon must not precede the landmark");
    std::vector<double> grid{s};
    for (double u : event_times(model, s, t)) grid.push_back(u);
    if (grid.back() != t) grid.push_back(t);
    return grid;
}

PredictionCurve dynamic_predict(const History& history, const FittedModel& model, const std::vector<double>& grid,
                                std::optional<double> p_cured) {
    const auto h = normalize_history(history, model.spec);
    if (grid.empty()) throw Error("prediction", "empty prediction grid");
    if (grid.front() < h.landmark) throw Error("prediction", "prediction grid starts before the landmark");
    if (!std::is_sorted(grid.begin(), grid.end())) throw Error("prediction", "prediction grid must be ascending");

    PredictionCurve c;
    c.landmark = h.landmark;
    c.state = h.current();
    c.p_cured = p_cured ? *p_cured : posterior_cure_given_history(h, model);
    if (!(c.p_cured >= 0.0 && c.p_cured <= 1.0)) throw Error("prediction", "cure probability outside [0, 1]");
    c.times = grid;
    std::vector<double> g = grid;
    if (g.front() != h.landmark) g.insert(g.begin(), h.landmark);
    const auto n = static_cast<Eigen::Index>(grid.size());
    c.noncured = branch_curve(model, h.covariates, 0, c.state, g).bottomRows(n);
    c.cured = branch_curve(model, h.covariates, 1, c.state, g).bottomRows(n);
    c.probability = c.p_cured * c.cured + (1.0 - c.p_cured) * c.noncured;
    return c;
}

void write_prediction_csv(std::ostream& out, const PredictionCurve& curve, const ModelSpec& spec) {
    csv::write_row(out, {"time", "state", "probability", "p_cured", "landmark_s"});
    for (std::size_t k = 0; k < curve.times.size(); ++k)
        for (int m = 0; m < spec.states.size(); ++m)
            csv::write_row(out, {csv::format_double(curve.times[k]), std::to_string(m + 1),
                                 csv::format_double(curve.probability(static_cast<Eigen::Index>(k), m)),
                                 csv::format_double(curve.p_cured), csv::format_double(curve.landmark)});
}

}  // namespace mscure
