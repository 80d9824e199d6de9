#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mscure/data_prep.hpp"

namespace mscure {

struct CureCoefficients {
    Eigen::VectorXd alpha;           // intercept first
    std::vector<std::string> names;  // design column names
    int iterations = 0;
};

struct LogisticOptions {
    double tol = 1e-9;
    int max_iter = 100;
    double separation_bound = 30.0;
};

/// Weighted logistic regression of `cure` on the design rows by IRLS with
/// step-halving. Starts from `start` when it has the right length.
CureCoefficients fit_weighted_logistic(std::span<const CureTableRow> rows, const std::vector<std::string>& names,
                                       const LogisticOptions& options = {},
                                       const Eigen::VectorXd* start = nullptr);

/// expit(z' alpha)
double cure_probability(const Eigen::VectorXd& z, const CureCoefficients& coefs);

double expit(double x);
double logit(double p);

}  // namespace mscure
