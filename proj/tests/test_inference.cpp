#include <cmath>

#include <Eigen/Dense>

#include "doctest.h"
#include "mscure/error.hpp"
#include "mscure/fitted_model.hpp"
#include "mscure/inference.hpp"
#include "support.hpp"

using namespace mscure;

namespace {

struct Fixture {
    ModelSpec spec;
    std::vector<WideRecord> cohort;
    EmResult fit;
};

Fixture fitted(int n, std::uint64_t seed, const std::string& zero_tail = "cure_censored_after_tmax") {
    auto j = test::three_state_json();
    j["fit"] = {{"epsilon", 1e-8}, {"max_iter", 5000}, {"zero_tail", zero_tail}};
    Fixture f{validate_model_spec(j), test::three_state_cohort(n, seed), {}};
    f.fit = em_fit(build_extended_table(f.cohort, f.spec), f.spec, em_options(f.spec.fit));
    return f;
}

double branch_loglik(ExtendedLongTable t, const ModelParameters& th, std::size_t i, int cure) {
    e_step_reference(t, th);
    double ll = 0.0;
    const auto& s = t.subjects[i];
    for (std::size_t r = s.first_row; r < s.end_row; ++r)
        if (t.rows[r].cure == cure) ll += t.rows[r].log_likelihood;
    return ll;
}

// Step for coordinate k: relative on baseline increments.
double step(const ParameterIndex& idx, const Eigen::VectorXd& v, Eigen::Index k, double h) {
    return idx.entries[static_cast<std::size_t>(k)].kind == ParameterIndex::Kind::lambda ? h * v[k] : h;
}

}  // namespace

TEST_CASE("parameter index round trip") {
    auto f = fitted(60, 3);
    const auto& th = f.fit.model.theta;
    const auto idx = parameter_index(th, f.spec);
    const auto v = pack(th, idx);
    const auto back = unpack(v, th, idx);
    CHECK((pack(back, idx) - v).norm() == 0.0);
    for (std::size_t t = 0; t < th.baseline.by_transition.size(); ++t)
        for (std::size_t j = 0; j < th.baseline.by_transition[t].cumulative.size(); ++j)
            CHECK(back.baseline.by_transition[t].cumulative[j] ==
                  doctest::Approx(th.baseline.by_transition[t].cumulative[j]).epsilon(1e-12));
    std::vector<std::string> names;
    for (int k : idx.regression()) names.push_back(idx.entries[static_cast<std::size_t>(k)].name);
    std::vector<std::string> expect;
    for (const auto& p : regression_parameters(th, f.spec)) expect.push_back(p.name);
    CHECK(names == expect);
    CHECK_THROWS_AS(unpack(Eigen::VectorXd::Zero(2), th, idx), Error);
}

TEST_CASE("subject scores match finite differences of branch log-likelihoods") {
    auto f = fitted(40, 5);
    const auto& th = f.fit.model.theta;
    const auto idx = parameter_index(th, f.spec);
    const auto v = pack(th, idx);
    int checked = 0;
    for (std::size_t i = 0; i < f.fit.table.subjects.size(); i += 3) {
        const auto sc = score_components(f.fit.table, i, th, idx);
        for (int cure : {0, 1}) {
            if (cure == 1 && f.fit.table.subjects[i].known_noncured) continue;
            const auto& s = cure ? sc.cured : sc.noncured;
            for (Eigen::Index k = 0; k < idx.size(); ++k) {
                const double h = step(idx, v, k, 1e-6);
                Eigen::VectorXd vp = v, vm = v;
                vp[k] += h;
                vm[k] -= h;
                const double fd = (branch_loglik(f.fit.table, unpack(vp, th, idx), i, cure) -
                                   branch_loglik(f.fit.table, unpack(vm, th, idx), i, cure)) /
                                  (2 * h);
                CHECK(s[k] == doctest::Approx(fd).epsilon(1e-5).scale(1e-6 / std::max(1e-3, h)));
                ++checked;
            }
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("weight derivatives match finite differences of posterior weights") {
    auto f = fitted(40, 7);
    const auto& th = f.fit.model.theta;
    const auto idx = parameter_index(th, f.spec);
    const auto v = pack(th, idx);
    int latent = 0, fixed = 0;
    for (std::size_t i = 0; i < f.fit.table.subjects.size(); ++i) {
        const auto& s = f.fit.table.subjects[i];
        const auto d = weight_derivatives(f.fit.table, i, th, idx);
        if (s.known_noncured || s.forced >= 0) {
            CHECK(d.norm() == 0.0);
            ++fixed;
            continue;
        }
        ++latent;
        for (Eigen::Index k = 0; k < idx.size(); k += 2) {
            const double h = step(idx, v, k, 1e-6);
            Eigen::VectorXd vp = v, vm = v;
            vp[k] += h;
            vm[k] -= h;
            auto tp = f.fit.table, tm = f.fit.table;
            e_step_reference(tp, unpack(vp, th, idx));
            e_step_reference(tm, unpack(vm, th, idx));
            const double fd = (tp.subjects[i].weight - tm.subjects[i].weight) / (2 * h);
            CHECK(d[k] == doctest::Approx(fd).epsilon(1e-5).scale(1e-7 / std::max(1e-3, h)));
        }
    }
    CHECK(latent > 0);
    CHECK(fixed > 0);
}

TEST_CASE("observed score is the gradient of the observed log-likelihood") {
    auto f = fitted(40, 11);
    for (auto tail : {ZeroTail::off, ZeroTail::cure_censored_after_tmax}) {
        const auto& th = f.fit.model.theta;
        const auto idx = parameter_index(th, f.spec);
        Eigen::VectorXd v = pack(th, idx);
        v.head(2).array() += 0.1;  // away from the maximum
        const auto th1 = unpack(v, th, idx);
        auto table = build_extended_table(f.cohort, f.spec);
        apply_zero_tail(table, tail, noncure_tmax(table, f.spec));
        auto t = table;
        const auto g = observed_score(t, th1, idx);
        for (Eigen::Index k = 0; k < idx.size(); ++k) {
            const double h = step(idx, v, k, 1e-6);
            Eigen::VectorXd vp = v, vm = v;
            vp[k] += h;
            vm[k] -= h;
            auto tp = table, tm = table;
            const double lp = e_step_reference(tp, unpack(vp, th, idx)).loglik;
            const double fd = (lp - e_step_reference(tm, unpack(vm, th, idx)).loglik) / (2 * h);
            CHECK(std::abs(g[k] - fd) <= 1e-5 * std::abs(fd) + 1e-12 * std::abs(lp) / h);
        }
        if (tail == ZeroTail::off) {
            e_step_reference(t, th1);
            CHECK(observed_loglik(t) == doctest::Approx(test::brute_observed_loglik(f.cohort, f.spec, th1)));
        }
    }
}

TEST_CASE("Oakes information matches the finite-difference Hessian") {
    for (bool at_estimate : {true, false}) {
        auto f = fitted(40, 13);
        const auto& th0 = f.fit.model.theta;
        const auto idx = parameter_index(th0, f.spec);
        Eigen::VectorXd v = pack(th0, idx);
        if (!at_estimate) v.head(3).array() -= 0.15;
        const auto th = unpack(v, th0, idx);
        const auto info = information_matrices(f.fit.table, th, f.spec);
        REQUIRE(info.information.rows() == idx.size());
        CHECK((info.information - info.information.transpose()).cwiseAbs().maxCoeff() <= 1e-8);
        for (Eigen::Index k = 0; k < idx.size(); ++k) {
            const double h = step(idx, v, k, 1e-5);
            Eigen::VectorXd vp = v, vm = v;
            vp[k] += h;
            vm[k] -= h;
            auto tp = f.fit.table, tm = f.fit.table;
            const Eigen::VectorXd col =
                -(observed_score(tp, unpack(vp, th, idx), idx) - observed_score(tm, unpack(vm, th, idx), idx)) / (2 * h);
            for (Eigen::Index r = 0; r < idx.size(); ++r) {
                const double F = col[r], A = info.information(r, k);
                const double floor =
                    1e-2 * std::sqrt(std::abs(info.information(r, r) * info.information(k, k)));
                CHECK(std::abs(A - F) <= 1e-3 * std::max(std::abs(F), floor));
            }
        }
    }
}

TEST_CASE("covariance properties") {
    auto f = fitted(120, 17);
    const auto res = oakes_information(f.fit.table, f.fit.model.theta, f.spec);
    const auto k = res.covariance.rows();
    REQUIRE(k == static_cast<Eigen::Index>(res.names.size()));
    CHECK((res.covariance - res.covariance.transpose()).norm() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(res.covariance);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
    for (Eigen::Index j = 0; j < k; ++j) {
        CHECK(res.se[j] > 0.0);
        CHECK(res.naive_covariance(j, j) <= res.covariance(j, j) * (1 + 1e-9));
    }
    // dense inverse of the full matrix agrees on the regression block
    const Eigen::MatrixXd inv = res.information.inverse();
    const auto reg = res.index.regression();
    for (Eigen::Index a = 0; a < k; ++a)
        for (Eigen::Index b = 0; b < k; ++b)
            CHECK(res.covariance(a, b) ==
                  doctest::Approx(inv(reg[static_cast<std::size_t>(a)], reg[static_cast<std::size_t>(b)])).epsilon(1e-6));
}

TEST_CASE("singular information is reported") {
    // duplicate covariate column makes beta unidentifiable
    auto j = test::three_state_json();
    j["covariates"] = {{"cure", {"x"}}, {"survival", {"x", "x2"}}};
    j["fit"] = {{"epsilon", 1e-6}, {"max_iter", 200}, {"zero_tail", "cure_censored_after_tmax"}};
    const auto spec = validate_model_spec(j);
    auto cohort = test::three_state_cohort(60, 19);
    for (auto& w : cohort) w.covariates["x2"] = w.covariates["x"];
    auto table = build_extended_table(cohort, spec);
    bool threw = false;
    try {
        auto fit = em_fit(table, spec, em_options(spec.fit));
        oakes_information(fit.table, fit.model.theta, spec);
    } catch (const Error& e) {
        threw = true;
        CHECK(std::string(e.what()).find("x") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("degenerate cohort has no alpha block") {
    auto spec = test::three_state_spec();
    auto cohort = test::three_state_cohort(50, 23);
    for (auto& w : cohort) w.events[2] = {0.5, 1}, w.events[3] = {std::max(w.events[3].time, 0.6), w.events[3].status};
    auto fit = em_fit(build_extended_table(cohort, spec), spec, em_options(spec.fit));
    REQUIRE(fit.model.theta.cure_degenerate);
    const auto res = oakes_information(fit.table, fit.model.theta, spec);
    for (const auto& n : res.names) CHECK(n.rfind("alpha:", 0) != 0);
    CHECK((res.covariance - res.naive_covariance).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("resampling") {
    const auto a = resample_indices(100, replicate_seed(5, 0));
    CHECK(a == resample_indices(100, replicate_seed(5, 0)));
    CHECK(a != resample_indices(100, replicate_seed(5, 1)));
    for (auto i : a) CHECK(i < 100);
    CHECK(replicate_seed(5, 1) != replicate_seed(5, 2));
}

TEST_CASE("bootstrap") {
    auto f = fitted(150, 29);
    BootstrapOptions o;
    o.replicates = 6;
    o.seed = 3;

    SUBCASE("identity resampling gives zero spread") {
        o.identity_resample = true;
        const auto b = bootstrap_se(f.cohort, f.spec, f.fit.model, o);
        CHECK(b.failures == 0);
        for (Eigen::Index j = 0; j < b.se.size(); ++j) CHECK(b.se[j] <= 1e-12);
    }
    SUBCASE("parallel matches serial reference and is reproducible") {
        o.jobs = 3;
        const auto p = bootstrap_se(f.cohort, f.spec, f.fit.model, o);
        const auto s = bootstrap_se_reference(f.cohort, f.spec, f.fit.model, o);
        CHECK(p.names == s.names);
        CHECK(p.failures == s.failures);
        CHECK(p.capped == s.capped);
        for (Eigen::Index j = 0; j < p.se.size(); ++j) {
            CHECK(p.se[j] == s.se[j]);
            CHECK(p.se[j] > 0.0);
        }
        o.jobs = 1;
        const auto again = bootstrap_se(f.cohort, f.spec, f.fit.model, o);
        CHECK((again.estimates.array() == p.estimates.array() || (again.estimates.array().isNaN() && p.estimates.array().isNaN())).all());
        o.seed = 4;
        const auto other = bootstrap_se(f.cohort, f.spec, f.fit.model, o);
        CHECK(other.se[0] != p.se[0]);
    }
    SUBCASE("too few replicates") {
        o.replicates = 1;
        CHECK_THROWS_AS(bootstrap_se(f.cohort, f.spec, f.fit.model, o), Error);
    }
}
