#pragma once

#include <cmath>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "mscure/cure.hpp"
#include "mscure/data_prep.hpp"
#include "mscure/em.hpp"
#include "mscure/model_spec.hpp"

namespace mscure::test {

inline std::string data_path(const std::string& name) { return std::string(MSCURE_DATA_DIR) + "/" + name; }

inline ModelSpec ebmt_spec() { return load_model_spec(data_path("ebmt_config.json")); }

inline std::vector<WideRecord> ebmt_example(const ModelSpec& spec) {
    return read_wide_csv(data_path("ebmt_example.csv"), spec);
}

// 1 healthy, 2 relapse (non-cure), 3 dead; one numeric covariate x in both roles.
inline nlohmann::json three_state_json() {
    return {{"states", {1, 2, 3}},
            {"absorbing", {3}},
            {"transitions", {{1, 2}, {1, 3}, {2, 3}}},
            {"non_cure_states", {2}},
            {"covariates", {{"cure", {"x"}}, {"survival", {"x"}}}},
            {"data", {{"events", {{"2", "rel"}, {"3", "dead"}}}}},
            {"fit", {{"zero_tail", "cure_censored_after_tmax"}}}};
}

inline ModelSpec three_state_spec() { return validate_model_spec(three_state_json()); }

// Small random cohort on the 3-state model: cured subjects never relapse.
inline std::vector<WideRecord> three_state_cohort(int n, std::uint64_t seed, double cure_rate = 0.4,
                                                  std::vector<int>* cured_out = nullptr) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto expo = [&](double rate) { return -std::log(1.0 - u(rng)) / rate; };
    std::vector<WideRecord> out;
    for (int i = 0; i < n; ++i) {
        WideRecord w;
        w.id = std::to_string(i + 1);
        const int x = u(rng) < 0.5 ? 1 : 0;
        w.covariates["x"] = std::to_string(x);
        const bool cured = u(rng) < cure_rate * (x ? 1.25 : 0.75);
        if (cured_out) cured_out->push_back(cured ? 1 : 0);
        const double c = 4.0 + 8.0 * u(rng);
        const double t_rel = cured ? 1e9 : expo(0.5);
        const double t_die = expo(0.1);
        double rel = c, dead = c;
        int rel_s = 0, dead_s = 0;
        if (t_rel < t_die && t_rel < c) {
            rel = std::round(t_rel * 100.0) / 100.0 + 0.01;
            rel_s = 1;
            const double t2 = rel + expo(0.25 * (x ? 1.2 : 1.0));
            if (t2 < c) {
                dead = std::round(t2 * 100.0) / 100.0 + 0.01;
                dead_s = 1;
            }
        } else if (t_die < c) {
            dead = std::round(t_die * 100.0) / 100.0 + 0.01;
            dead_s = 1;
            rel = dead;
        }
        if (dead_s == 0) dead = c;
        w.events[2] = {rel, rel_s};
        w.events[3] = {std::max(dead, rel), dead_s};
        if (!rel_s) w.events[2].time = w.events[3].time;
        out.push_back(std::move(w));
    }
    return out;
}

// Eq. 6 by direct enumeration over g, from the wide records and raw products.
inline double brute_observed_loglik(const std::vector<WideRecord>& cohort, const ModelSpec& spec,
                                    const ModelParameters& th) {
    double total = 0.0;
    for (const auto& w : cohort) {
        const auto rows = wide_to_long(w, spec);
        const bool known = determine_known_noncured(w, spec);
        const Eigen::VectorXd zc = spec.covariates.encode_cure(w.covariates);
        const Eigen::VectorXd zs = spec.covariates.encode_survival(w.covariates);
        const double pi = th.cure_degenerate ? 0.0 : expit(zc.dot(th.cure.alpha));
        double branch[2] = {0.0, 0.0};
        for (int g = 0; g < 2; ++g) {
            if (g == 1 && known) continue;
            double prob = 1.0;
            for (const auto& r : rows) {
                if (g == 1 && !spec.cure.is_split(r.trans)) continue;
                const auto& c = th.cox.at(r.trans);
                double eta = c.beta.size() ? c.beta.dot(zs) : 0.0;
                if (g == 1 && c.gamma) eta += *c.gamma;
                const auto& steps = th.baseline.at(r.trans);
                double cum = 0.0, jump = 0.0;
                for (std::size_t k = 0; k < steps.times.size(); ++k) {
                    if (steps.times[k] > r.tstart && steps.times[k] <= r.tstop) cum += steps.increments[k];
                    if (steps.times[k] == r.tstop) jump = steps.increments[k];
                }
                prob *= std::exp(-cum * std::exp(eta));
                if (r.status == 1) prob *= jump * std::exp(eta);
            }
            branch[g] = prob;
        }
        total += std::log(pi * branch[1] + (1.0 - pi) * branch[0]);
    }
    return total;
}

}  // namespace mscure::test
