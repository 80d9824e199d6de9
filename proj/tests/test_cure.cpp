#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "doctest.h"
#include "mscure/cure.hpp"
#include "mscure/error.hpp"

using namespace mscure;

namespace {

CureTableRow row(const std::string& id, int cure, double w, std::vector<double> z) {
    CureTableRow r;
    r.id = id;
    r.cure = cure;
    r.weight = w;
    r.z = Eigen::Map<Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
    return r;
}

std::vector<CureTableRow> random_table(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<CureTableRow> rows;
    for (int i = 0; i < n; ++i) {
        const double x1 = u(rng) < 0.5 ? 1.0 : 0.0;
        const double x2 = u(rng) * 2 - 1;
        const double p = expit(-0.3 + 0.8 * x1 - 0.5 * x2);
        if (u(rng) < 0.3) {
            rows.push_back(row(std::to_string(i), 0, 1.0, {1, x1, x2}));
        } else {
            const double w = std::clamp(p + 0.2 * (u(rng) - 0.5), 0.0, 1.0);
            rows.push_back(row(std::to_string(i), 0, 1 - w, {1, x1, x2}));
            rows.push_back(row(std::to_string(i), 1, w, {1, x1, x2}));
        }
    }
    return rows;
}

const std::vector<std::string> kNames{"(Intercept)", "x1", "x2"};

}  // namespace

TEST_CASE("intercept-only fit is the logit of the weighted mean") {
    std::vector<CureTableRow> rows{row("1", 1, 0.877, {1}), row("1", 0, 0.123, {1})};
    auto fit = fit_weighted_logistic(rows, {"(Intercept)"});
    CHECK(std::abs(fit.alpha[0] - logit(0.877)) < 1e-10);
    CHECK(fit.alpha[0] == doctest::Approx(1.966).epsilon(1e-3));

    auto t = random_table(200, 1);
    for (auto& r : t) r.z = Eigen::VectorXd::Ones(1);
    double num = 0, den = 0;
    for (const auto& r : t) {
        num += r.weight * r.cure;
        den += r.weight;
    }
    fit = fit_weighted_logistic(t, {"(Intercept)"});
    CHECK(std::abs(fit.alpha[0] - logit(num / den)) < 1e-10);
}

TEST_CASE("symmetric 0.5 weights give a zero intercept") {
    std::vector<CureTableRow> rows;
    for (int i = 0; i < 10; ++i) {
        rows.push_back(row(std::to_string(i), 0, 0.5, {1}));
        rows.push_back(row(std::to_string(i), 1, 0.5, {1}));
    }
    CHECK(std::abs(fit_weighted_logistic(rows, {"(Intercept)"}).alpha[0]) < 1e-12);
}

TEST_CASE("weighted score vanishes at the optimum") {
    auto t = random_table(300, 2);
    auto fit = fit_weighted_logistic(t, kNames);
    Eigen::VectorXd score = Eigen::VectorXd::Zero(3);
    for (const auto& r : t) score += r.weight * (r.cure - cure_probability(r.z, fit)) * r.z;
    CHECK(score.cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("unit weights match the unweighted MLE on expanded data") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<CureTableRow> rows, doubled;
    for (int i = 0; i < 200; ++i) {
        const double x = u(rng);
        const int y = u(rng) < expit(0.5 - x) ? 1 : 0;
        rows.push_back(row(std::to_string(i), y, 1.0, {1, x}));
        doubled.push_back(row(std::to_string(i), y, 0.5, {1, x}));
        doubled.push_back(row(std::to_string(i), y, 0.5, {1, x}));
    }
    auto a = fit_weighted_logistic(rows, {"(Intercept)", "x"});
    auto b = fit_weighted_logistic(doubled, {"(Intercept)", "x"});
    CHECK((a.alpha - b.alpha).cwiseAbs().maxCoeff() < 1e-10);
    // Newton oracle on the plain log-likelihood
    Eigen::Vector2d al = Eigen::Vector2d::Zero();
    for (int it = 0; it < 50; ++it) {
        Eigen::Vector2d g = Eigen::Vector2d::Zero();
        Eigen::Matrix2d h = Eigen::Matrix2d::Zero();
        for (const auto& r : rows) {
            const double p = expit(r.z.dot(al));
            g += (r.cure - p) * r.z;
            h += p * (1 - p) * r.z * r.z.transpose();
        }
        al += h.ldlt().solve(g);
    }
    CHECK((a.alpha - al).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("complement symmetry negates coefficients") {
    auto t = random_table(250, 4);
    auto a = fit_weighted_logistic(t, kNames);
    for (auto& r : t) r.cure = 1 - r.cure;
    auto b = fit_weighted_logistic(t, kNames);
    CHECK((a.alpha + b.alpha).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("splitting a row's weight leaves the fit unchanged") {
    auto t = random_table(150, 5);
    auto a = fit_weighted_logistic(t, kNames);
    auto extra = t[3];
    t[3].weight *= 0.25;
    extra.weight *= 0.75;
    t.push_back(extra);
    auto b = fit_weighted_logistic(t, kNames);
    CHECK((a.alpha - b.alpha).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("separation and rank deficiency name the covariate") {
    std::vector<CureTableRow> sep;
    for (int i = 0; i < 20; ++i) {
        const double x = i < 10 ? 0.0 : 1.0;
        sep.push_back(row(std::to_string(i), i < 10 ? 0 : 1, 1.0, {1, x}));
    }
    CHECK_THROWS_WITH_AS(fit_weighted_logistic(sep, {"(Intercept)", "grp"}), doctest::Contains("grp"), Error);

    std::vector<CureTableRow> all_zero;
    for (int i = 0; i < 5; ++i) all_zero.push_back(row(std::to_string(i), 0, 1.0, {1}));
    CHECK_THROWS_WITH_AS(fit_weighted_logistic(all_zero, {"(Intercept)"}), doctest::Contains("(Intercept)"), Error);

    std::vector<CureTableRow> collinear;
    for (int i = 0; i < 30; ++i) {
        const double x = i % 3;
        collinear.push_back(row(std::to_string(i), i % 2, 1.0, {1, x, 2 * x}));
    }
    CHECK_THROWS_WITH_AS(fit_weighted_logistic(collinear, {"(Intercept)", "a", "b"}),
                         doctest::Contains("rank deficient"), Error);
}

TEST_CASE("cure probability") {
    CureCoefficients c;
    c.alpha = Eigen::VectorXd::Zero(3);
    CHECK(cure_probability(Eigen::Vector3d(1, 4, -2), c) == 0.5);
    c.alpha = Eigen::VectorXd::Constant(1, logit(0.830));
    CHECK(cure_probability(Eigen::VectorXd::Ones(1), c) == doctest::Approx(0.830).epsilon(1e-14));
    CHECK_THROWS_AS(cure_probability(Eigen::VectorXd::Ones(2), c), Error);
    CHECK(expit(800) == 1.0);
    CHECK(expit(-800) >= 0.0);
}
