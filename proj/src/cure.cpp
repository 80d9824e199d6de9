#include "mscure/cure.hpp"

#include <cmath>

#include <Eigen/Cholesky>

#include "mscure/csv.hpp"
#include "mscure/error.hpp"

namespace mscure {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw Error("cure-engine", msg); }

struct LogisticEval {
    double loglik = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd information;
};

// log(expit(x)) and log(1 - expit(x)) without overflow
double log_expit(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

LogisticEval evaluate(std::span<const CureTableRow> rows, const Eigen::VectorXd& alpha) {
    const auto p = alpha.size();
    LogisticEval e;
    e.gradient = Eigen::VectorXd::Zero(p);
    e.information = Eigen::MatrixXd::Zero(p, p);
    for (const auto& r : rows) {
        if (r.weight == 0.0) continue;
        const double eta = r.z.dot(alpha);
        const double prob = expit(eta);
        e.loglik += r.weight * (r.cure == 1 ? log_expit(eta) : log_expit(-eta));
        e.gradient += r.weight * (r.cure - prob) * r.z;
        e.information.noalias() += r.weight * prob * (1.0 - prob) * r.z * r.z.transpose();
    }
    return e;
}

}  // namespace

double expit(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

CureCoefficients fit_weighted_logistic(std::span<const CureTableRow> rows, const std::vector<std::string>& names,
                                       const LogisticOptions& options, const Eigen::VectorXd* start) {
    const auto p = static_cast<Eigen::Index>(names.size());
    if (rows.empty()) fail("empty cure table");
    double total = 0.0;
    for (const auto& r : rows) {
        if (r.z.size() != p) fail("cure design row has wrong dimension");
        if (!(r.weight >= 0.0 && r.weight <= 1.0)) fail("cure table weight outside [0, 1] for subject " + r.id);
        total += r.weight;
    }
    if (!(total > 0.0)) fail("cure table has zero total weight");

    Eigen::VectorXd alpha = (start && start->size() == p) ? *start : Eigen::VectorXd::Zero(p);
    LogisticEval ev = evaluate(rows, alpha);
    CureCoefficients out;
    out.names = names;

    // Past the bound and still moving: the likelihood keeps increasing towards infinity.
    auto check_separation = [&](double change) {
        Eigen::Index j = 0;
        if (alpha.cwiseAbs().maxCoeff(&j) > options.separation_bound && change >= options.tol)
            fail("separation in cure model: coefficient of '" + names[static_cast<std::size_t>(j)] +
                 "' diverges (cure status is perfectly predicted)");
    };

    for (int it = 0; it < options.max_iter; ++it) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(ev.information);
        const auto d = ldlt.vectorD();
        const double dmax = std::max(d.cwiseAbs().maxCoeff(), 1e-300);
        if (ldlt.info() != Eigen::Success || d.minCoeff() <= 1e-13 * dmax) {
            // Smallest pivot points at the offending column under the LDLT permutation.
            Eigen::Index j = 0;
            d.minCoeff(&j);
            Eigen::VectorXi perm = ldlt.transpositionsP() * Eigen::VectorXi::LinSpaced(p, 0, static_cast<int>(p - 1));
            const auto col = static_cast<std::size_t>(perm[j]);
            if (alpha.cwiseAbs().maxCoeff() > 5.0) check_separation(1.0);
            fail("cure design is rank deficient or separated at covariate '" + names[col] + "'");
        }
        Eigen::VectorXd step = ldlt.solve(ev.gradient);
        double scale = 1.0;
        Eigen::VectorXd cand;
        LogisticEval next;
        for (int halving = 0;; ++halving) {
            cand = alpha + scale * step;
            next = evaluate(rows, cand);
            if (next.loglik >= ev.loglik - 1e-12 * std::abs(ev.loglik) || halving == 40) break;
            scale *= 0.5;
        }
        const double change = (cand - alpha).cwiseAbs().maxCoeff();
        alpha = cand;
        ev = std::move(next);
        out.iterations = it + 1;
        check_separation(change);
        if (change < options.tol) {
            out.alpha = alpha;
            return out;
        }
    }
    std::string iterate;
    for (Eigen::Index j = 0; j < p; ++j) iterate += (j ? ", " : "") + csv::format_double(alpha[j]);
    fail("weighted logistic fit did not converge; last iterate [" + iterate + "]");
}

double cure_probability(const Eigen::VectorXd& z, const CureCoefficients& coefs) {
    if (z.size() != coefs.alpha.size())
        fail("covariate vector has dimension " + std::to_string(z.size()) + ", cure model expects " +
             std::to_string(coefs.alpha.size()));
    return expit(z.dot(coefs.alpha));
}

}  // namespace mscure
