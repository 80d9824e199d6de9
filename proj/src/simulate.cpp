#include "mscure/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "mscure/cure.hpp"
#include "mscure/error.hpp"
#include "mscure/random.hpp"

namespace mscure {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void fail(const std::string& msg) { throw Error("simulate", msg); }

PiecewiseHazard hazard_from_json(const nlohmann::json& j, const std::string& where) {
    PiecewiseHazard h;
    if (j.is_number()) {
        h.rates = {j.get<double>()};
    } else {
        h.breaks = j.at("breaks").get<std::vector<double>>();
        h.rates = j.at("rates").get<std::vector<double>>();
    }
    if (h.breaks.size() != h.rates.size() || h.breaks.empty())
        fail(where + ": hazard needs one rate per break");
    if (h.breaks.front() != 0.0) fail(where + ": first hazard break must be 0");
    for (std::size_t k = 1; k < h.breaks.size(); ++k)
        if (!(h.breaks[k] > h.breaks[k - 1])) fail(where + ": hazard breaks must be increasing");
    for (double r : h.rates)
        if (!(r >= 0.0) || !std::isfinite(r)) fail(where + ": hazard rates must be finite and non-negative");
    return h;
}

Eigen::VectorXd named_vector(const nlohmann::json& j, const std::vector<std::string>& names, const std::string& where) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(names.size()));
    if (j.is_null()) return v;
    for (const auto& [k, val] : j.items()) {
        auto it = std::find(names.begin(), names.end(), k);
        if (it == names.end()) fail(where + ": unknown design column '" + k + "'");
        v[it - names.begin()] = val.get<double>();
    }
    return v;
}

CovariateDistribution distribution_from_json(const std::string& name, const nlohmann::json& j,
                                             const CovariateSpec& spec) {
    CovariateDistribution d;
    if (j.contains("bernoulli")) {
        const double p = j.at("bernoulli").get<double>();
        if (!(p >= 0.0 && p <= 1.0)) fail("covariate " + name + ": Bernoulli probability outside [0, 1]");
        d.levels = {"0", "1"};
        d.probabilities = {1.0 - p, p};
    } else if (j.contains("categorical")) {
        for (const auto& [level, p] : j.at("categorical").items()) {
            d.levels.push_back(level);
            d.probabilities.push_back(p.get<double>());
        }
        double total = 0.0;
        for (double p : d.probabilities) {
            if (!(p >= 0.0)) fail("covariate " + name + ": negative category probability");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9) fail("covariate " + name + ": category probabilities must sum to 1");
        auto enc = spec.encodings.find(name);
        if (enc != spec.encodings.end() && enc->second.type == CovariateEncoding::Type::factor)
            for (const auto& l : d.levels)
                if (std::find(enc->second.levels.begin(), enc->second.levels.end(), l) == enc->second.levels.end())
                    fail("covariate " + name + ": level '" + l + "' is not declared in the model");
    } else {
        fail("covariate " + name + ": expected 'bernoulli' or 'categorical'");
    }
    return d;
}

std::string draw(const CovariateDistribution& d, double u) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d.levels.size(); ++k)
        if (u < (acc += d.probabilities[k])) return d.levels[k];
    return d.levels.back();
}

}  // namespace

double PiecewiseHazard::rate(double t) const {
    auto k = std::upper_bound(breaks.begin(), breaks.end(), t) - breaks.begin();
    return rates[static_cast<std::size_t>(std::max<std::ptrdiff_t>(k - 1, 0))];
}

double PiecewiseHazard::cumulative(double t) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < breaks.size() && breaks[k] < t; ++k) {
        const double end = k + 1 < breaks.size() ? std::min(breaks[k + 1], t) : t;
        acc += rates[k] * (end - breaks[k]);
    }
    return acc;
}

double TrueModel::pi(const CovariateValues& z) const {
    return expit(spec.covariates.encode_cure(z).dot(alpha));
}

double TrueModel::hazard(int trans, double t, const Eigen::VectorXd& z_survival, int g) const {
    if (g == 1 && !spec.cure.is_split(trans)) return 0.0;
    const auto& tr = transitions.at(static_cast<std::size_t>(trans - 1));
    const double base = tr.hazard.rate(t);
    if (base == 0.0) return 0.0;
    double eta = tr.beta.size() ? tr.beta.dot(z_survival) : 0.0;
    if (g == 1 && tr.gamma) eta += *tr.gamma;
    return base * std::exp(eta);
}

TrueModel true_model_from_json(const nlohmann::json& doc, const std::string& base_dir) {
    try {
        TrueModel m;
        const auto& model = doc.at("model");
        if (model.is_string()) {
            const std::filesystem::path p(model.get<std::string>());
            m.spec = load_model_spec((p.is_absolute() || base_dir.empty() ? p : std::filesystem::path(base_dir) / p).string());
        } else {
            m.spec = validate_model_spec(model);
        }
        if (m.spec.diagram.has_cycle(m.spec.states.size()))
            fail("the transition diagram has a cycle; wide output cannot encode repeated visits");
        const auto cure_names = m.spec.covariates.cure_columns();
        const auto surv_names = m.spec.covariates.survival_columns();
        m.alpha = named_vector(doc.at("cure").value("alpha", nlohmann::json()), cure_names, "cure");

        m.transitions.resize(static_cast<std::size_t>(m.spec.diagram.size()));
        std::vector<bool> seen(m.transitions.size(), false);
        for (const auto& j : doc.at("transitions")) {
            const auto from = j.at("from").get<StateId>(), to = j.at("to").get<StateId>();
            const auto id = m.spec.diagram.find(from, to);
            const std::string where = "transition " + std::to_string(from) + "->" + std::to_string(to);
            if (!id) fail(where + " is not in the model");
            auto& tr = m.transitions[static_cast<std::size_t>(*id - 1)];
            seen[static_cast<std::size_t>(*id - 1)] = true;
            tr.beta = named_vector(j.value("beta", nlohmann::json()), surv_names, where);
            if (j.contains("gamma") && !j.at("gamma").is_null()) {
                if (!m.spec.cure.is_split(*id))
                    fail(where + " touches a non-cure state; cured subjects cannot take it, so gamma is not allowed");
                tr.gamma = j.at("gamma").get<double>();
            }
            tr.hazard = hazard_from_json(j.at("hazard"), where);
        }
        for (std::size_t t = 0; t < seen.size(); ++t)
            if (!seen[t]) {
                m.transitions[t].beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(surv_names.size()));
            }

        std::vector<std::string> needed = m.spec.covariates.cure;
        needed.insert(needed.end(), m.spec.covariates.survival.begin(), m.spec.covariates.survival.end());
        const auto covs = doc.value("covariates", nlohmann::json::object());
        for (const auto& [name, j] : covs.items())
            m.covariates[name] = distribution_from_json(name, j, m.spec.covariates);
        for (const auto& n : needed)
            if (!m.covariates.count(n)) fail("no distribution given for covariate " + n);

        const auto& c = doc.at("censoring");
        const auto type = c.at("type").get<std::string>();
        m.censoring.max = c.at("max").get<double>();
        if (type == "uniform") {
            m.censoring.type = Censoring::Type::uniform;
            m.censoring.min = c.value("min", 0.0);
        } else if (type == "administrative") {
            m.censoring.type = Censoring::Type::administrative;
        } else {
            fail("censoring type must be 'uniform' or 'administrative'");
        }
        if (!(m.censoring.max > 0.0) || !(m.censoring.min >= 0.0) || !(m.censoring.min <= m.censoring.max))
            fail("censoring needs 0 <= min <= max and max > 0");
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("malformed true model: ") + e.what());
    } catch (const Error& e) {
        if (e.module() == "simulate") throw;
        throw Error("simulate", std::string("true model: ") + e.what());
    }
}

TrueModel load_true_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open true model " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        fail(path + ": " + e.what());
    }
    return true_model_from_json(doc, std::filesystem::path(path).parent_path().string());
}

std::vector<std::string> covariate_order(const TrueModel& truth) {
    std::vector<std::string> out;
    auto add = [&](const std::string& n) {
        if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
    };
    for (const auto& n : truth.spec.covariates.cure) add(n);
    for (const auto& n : truth.spec.covariates.survival) add(n);
    return out;
}

SimulatedSubject simulate_subject(const TrueModel& truth, std::size_t index, std::uint64_t seed) {
    const auto& spec = truth.spec;
    std::mt19937_64 rng(derive_seed(seed, index));
    SimulatedSubject out;
    auto& rec = out.record;
    rec.id = std::to_string(index + 1);
    for (const auto& [name, d] : truth.covariates) rec.covariates[name] = draw(d, uniform01(rng));
    const int g = uniform01(rng) < truth.pi(rec.covariates) ? 1 : 0;
    out.cured = g;
    const Eigen::VectorXd z = spec.covariates.encode_survival(rec.covariates);

    const double c = truth.censoring.type == Censoring::Type::uniform
                         ? truth.censoring.min + (truth.censoring.max - truth.censoring.min) * uniform01(rng)
                         : truth.censoring.max;

    // Competing risks walk: total hazard is piecewise constant between merged breaks.
    StateId state = spec.wide.initial_state;
    double t = 0.0;
    out.path.visits.push_back({state, 0.0});
    while (!spec.states.is_absorbing(state)) {
        const auto exits = spec.diagram.outgoing(state);
        std::vector<double> breaks;
        for (int tid : exits)
            for (double b : truth.transitions[static_cast<std::size_t>(tid - 1)].hazard.breaks)
                if (b > t) breaks.push_back(b);
        std::sort(breaks.begin(), breaks.end());
        breaks.push_back(kInf);

        double budget = -std::log(1.0 - uniform01(rng));
        double u = t, next = kInf;
        for (double b : breaks) {
            double total = 0.0;
            for (int tid : exits) total += truth.hazard(tid, u, z, g);
            if (total > 0.0 && budget <= total * (b - u)) {
                next = u + budget / total;
                break;
            }
            budget -= total * (b - u);
            u = b;
            if (!std::isfinite(u)) break;
        }
        if (!(next <= c)) break;

        std::vector<double> w;
        for (int tid : exits) w.push_back(truth.hazard(tid, next, z, g));
        const double pick = uniform01(rng) * std::accumulate(w.begin(), w.end(), 0.0);
        std::size_t k = w.size();
        double acc = 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) {
            if (w[j] == 0.0) continue;
            k = j;
            if (pick < (acc += w[j])) break;
        }
        state = spec.diagram.at(exits[k]).to;
        t = next;
        out.path.visits.push_back({state, t});
    }
    out.path.absorbed = spec.states.is_absorbing(state);
    out.path.end_time = out.path.absorbed ? t : c;

    for (const auto& [s, column] : spec.wide.event_columns) {
        (void)column;
        auto it = std::find_if(out.path.visits.begin(), out.path.visits.end(),
                               [&](const StateVisit& v) { return v.state == s; });
        rec.events[s] = it != out.path.visits.end() ? EventField{it->entry, 1} : EventField{out.path.end_time, 0};
    }
    return out;
}

std::vector<WideRecord> simulate_cohort(const TrueModel& truth, std::size_t n, std::uint64_t seed,
                                        std::vector<int>* cured) {
    if (n == 0) fail("cohort size must be at least 1");
    std::vector<SimulatedSubject> subjects(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
        subjects[static_cast<std::size_t>(i)] = simulate_subject(truth, static_cast<std::size_t>(i), seed);
    std::vector<WideRecord> out;
    out.reserve(n);
    if (cured) cured->clear();
    for (auto& s : subjects) {
        if (cured) cured->push_back(s.cured);
        out.push_back(std::move(s.record));
    }
    return out;
}

std::vector<WideRecord> simulate_cohort_reference(const TrueModel& truth, std::size_t n, std::uint64_t seed,
                                                  std::vector<int>* cured) {
    if (n == 0) fail("cohort size must be at least 1");
    std::vector<WideRecord> out;
    if (cured) cured->clear();
    for (std::size_t i = 0; i < n; ++i) {
        auto s = simulate_subject(truth, i, seed);
        if (cured) cured->push_back(s.cured);
        out.push_back(std::move(s.record));
    }
    return out;
}

}  // namespace mscure
