#include <cmath>

#include "doctest.h"
#include "mscure/error.hpp"
#include "mscure/simulate.hpp"
#include "support.hpp"

using namespace mscure;

namespace {

nlohmann::json two_state(double rate) {
    return {{"model",
             {{"states", {1, 2}},
              {"absorbing", {2}},
              {"transitions", {{1, 2}}},
              {"non_cure_states", {2}},
              {"data", {{"events", {{"2", "ev"}}}}}}},
            {"cure", {{"alpha", {{"(Intercept)", -60.0}}}}},
            {"transitions", {{{"from", 1}, {"to", 2}, {"hazard", rate}}}},
            {"censoring", {{"type", "administrative"}, {"max", 1e9}}}};
}

nlohmann::json competing(double a, double b, double c_max) {
    auto spec = test::three_state_json();
    spec["covariates"] = {{"cure", {"x"}}, {"survival", {"x"}}};
    return {{"model", spec},
            {"cure", {{"alpha", {{"(Intercept)", -60.0}}}}},
            {"transitions",
             {{{"from", 1}, {"to", 2}, {"hazard", a}},
              {{"from", 1}, {"to", 3}, {"hazard", b}},
              {{"from", 2}, {"to", 3}, {"hazard", 0.5}}}},
            {"covariates", {{"x", {{"bernoulli", 0.5}}}}},
            {"censoring", {{"type", "administrative"}, {"max", c_max}}}};
}

TrueModel illness_death() { return load_true_model(test::data_path("truth_illness_death.json")); }

}  // namespace

TEST_CASE("piecewise hazard") {
    PiecewiseHazard h{{0.0, 2.0, 5.0}, {0.5, 0.0, 1.0}};
    CHECK(h.rate(0.0) == 0.5);
    CHECK(h.rate(1.99) == 0.5);
    CHECK(h.rate(2.0) == 0.0);
    CHECK(h.rate(7.0) == 1.0);
    CHECK(h.cumulative(1.0) == doctest::Approx(0.5));
    CHECK(h.cumulative(4.0) == doctest::Approx(1.0));
    CHECK(h.cumulative(7.0) == doctest::Approx(3.0));
}

TEST_CASE("zero rates leave everyone censored in the initial state") {
    const auto truth = true_model_from_json(two_state(0.0));
    for (const auto& w : simulate_cohort(truth, 50, 1)) {
        CHECK(w.events.at(2).status == 0);
        CHECK(w.events.at(2).time == 1e9);
    }
}

TEST_CASE("exponential mean oracle") {
    const double lambda = 0.4;
    const auto truth = true_model_from_json(two_state(lambda));
    const auto cohort = simulate_cohort(truth, 10000, 7);
    double sum = 0.0, sq = 0.0;
    for (const auto& w : cohort) {
        REQUIRE(w.events.at(2).status == 1);
        sum += w.events.at(2).time;
        sq += w.events.at(2).time * w.events.at(2).time;
    }
    const double n = static_cast<double>(cohort.size());
    const double mean = sum / n;
    const double sem = std::sqrt((sq / n - mean * mean) / n);
    CHECK(std::abs(mean - 1.0 / lambda) <= 3.0 * sem);
}

TEST_CASE("cumulative incidence oracle") {
    const double a = 0.3, b = 0.2, c = 2.0;
    const auto truth = true_model_from_json(competing(a, b, c));
    const auto cohort = simulate_cohort(truth, 20000, 11);
    int rel = 0;
    for (const auto& w : cohort) rel += w.events.at(2).status;
    const double p = a / (a + b) * (1.0 - std::exp(-(a + b) * c));
    const double se = std::sqrt(p * (1 - p) / cohort.size());
    CHECK(std::abs(rel / double(cohort.size()) - p) <= 3.0 * se);
}

TEST_CASE("generated cohorts") {
    const auto truth = illness_death();
    std::vector<int> cured, cured_ref;
    const auto a = simulate_cohort(truth, 400, 5, &cured);
    const auto b = simulate_cohort_reference(truth, 400, 5, &cured_ref);
    CHECK(a == b);
    CHECK(cured == cured_ref);
    CHECK(a == simulate_cohort(truth, 400, 5));
    CHECK(a != simulate_cohort(truth, 400, 6));

    const auto table = build_extended_table(a, truth.spec);
    CHECK(table.subjects.size() == 400);
    int n_cured = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!cured[i]) continue;
        ++n_cured;
        CHECK(a[i].events.at(2).status == 0);
        CHECK_FALSE(table.subjects[i].known_noncured);
    }
    const double mean_pi = [&] {
        double s = 0.0;
        for (const auto& w : a) s += truth.pi(w.covariates);
        return s / a.size();
    }();
    CHECK(std::abs(n_cured / 400.0 - mean_pi) <= 4.0 * std::sqrt(mean_pi * (1 - mean_pi) / 400));
    for (const auto& w : a) {
        CHECK(w.events.at(3).time >= w.events.at(2).time * w.events.at(2).status);
        CHECK(w.events.at(3).time <= 15.0);
    }
}

TEST_CASE("true model validation") {
    auto j = competing(0.3, 0.2, 2.0);
    j["transitions"][0]["gamma"] = 0.5;
    CHECK_THROWS_AS(true_model_from_json(j), Error);

    j = competing(0.3, 0.2, 2.0);
    j["covariates"] = nlohmann::json::object();
    CHECK_THROWS_AS(true_model_from_json(j), Error);

    j = competing(0.3, 0.2, 2.0);
    j["transitions"][1]["hazard"] = {{"breaks", {0, 1}}, {"rates", {0.1, -0.1}}};
    CHECK_THROWS_AS(true_model_from_json(j), Error);

    j = competing(0.3, 0.2, 2.0);
    j["transitions"][1]["hazard"] = {{"breaks", {0, 2, 1}}, {"rates", {0.1, 0.1, 0.1}}};
    CHECK_THROWS_AS(true_model_from_json(j), Error);

    j = competing(0.3, 0.2, 2.0);
    j["model"]["transitions"] = {{1, 2}, {2, 1}, {1, 3}, {2, 3}};
    j["transitions"] = nlohmann::json::array();
    CHECK_THROWS_AS(true_model_from_json(j), Error);

    j = competing(0.3, 0.2, 2.0);
    j["cure"]["alpha"]["nope"] = 1.0;
    CHECK_THROWS_AS(true_model_from_json(j), Error);

    CHECK_THROWS_AS(simulate_cohort(true_model_from_json(competing(0.3, 0.2, 2.0)), 0, 1), Error);
    CHECK_THROWS_AS(load_true_model("/nonexistent.json"), Error);
}

TEST_CASE("EBMT-shaped truth simulates valid paths") {
    const auto truth = load_true_model(test::data_path("truth_ebmt.json"));
    CHECK(truth.spec.diagram.size() == 13);
    std::vector<int> cured;
    const auto cohort = simulate_cohort(truth, 300, 3, &cured);
    const auto table = build_extended_table(cohort, truth.spec);
    for (std::size_t i = 0; i < cohort.size(); ++i)
        if (cured[i]) CHECK(cohort[i].events.at(5).status == 0);
    CHECK(table.unknown_count() > 0);
    CHECK(table.unknown_count() < cohort.size());
}
