#include "mscure/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <omp.h>

#include "mscure/csv.hpp"
#include "mscure/error.hpp"
#include "mscure/fitted_model.hpp"
#include "mscure/random.hpp"

namespace mscure {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Baseline event-time indices in (start, stop].
std::pair<std::size_t, std::size_t> interval(const BaselineSteps& steps, double start, double stop) {
    auto lo = std::upper_bound(steps.times.begin(), steps.times.end(), start) - steps.times.begin();
    auto hi = std::upper_bound(steps.times.begin(), steps.times.end(), stop) - steps.times.begin();
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Covariate vector multiplying (beta, gamma) on a row.
Eigen::VectorXd row_design(const ParameterIndex::TransitionBlock& block, const Subject& s, int cure) {
    const Eigen::Index p = s.z_survival.size();
    Eigen::VectorXd x(p + (block.gamma >= 0 ? 1 : 0));
    x.head(p) = s.z_survival;
    if (block.gamma >= 0) x[p] = cure;
    return x;
}

// Adds the score of one row's log-likelihood to `score`.
void add_row_score(Eigen::VectorXd& score, const ExtendedLongRow& row, const Subject& s,
                   const ModelParameters& theta, const ParameterIndex& index) {
    const auto& block = index.transitions[static_cast<std::size_t>(row.trans - 1)];
    if (block.beta < 0) return;
    const auto& steps = theta.baseline.at(row.trans);
    const double e = std::exp(theta.cox.linear_predictor(row.trans, s.z_survival, row.cure));
    const auto [lo, hi] = interval(steps, row.tstart, row.tstop);
    double base = 0.0;
    for (std::size_t j = lo; j < hi; ++j) {
        base += steps.increments[j];
        if (block.lambda[j] >= 0) score[block.lambda[j]] -= e;
    }
    const Eigen::VectorXd x = row_design(block, s, row.cure);
    score.segment(block.beta, x.size()) += x * (row.status - e * base);
    if (row.status == 1) {
        const std::size_t j = hi - 1;
        if (hi == 0 || steps.times[j] != row.tstop || block.lambda[j] < 0)
            throw Error("inference", "subject " + s.id + ": event at " + csv::format_double(row.tstop) +
                                         " on transition " + std::to_string(row.trans) +
                                         " has a zero baseline increment");
        score[block.lambda[j]] += 1.0 / steps.increments[j];
    }
}

}  // namespace

std::vector<int> ParameterIndex::regression() const {
    std::vector<int> out;
    for (std::size_t k = 0; k < entries.size(); ++k)
        if (entries[k].kind != Kind::lambda) out.push_back(static_cast<int>(k));
    return out;
}

ParameterIndex parameter_index(const ModelParameters& theta, const ModelSpec& spec) {
    ParameterIndex idx;
    auto add = [&](ParameterIndex::Kind kind, int trans, int column, std::string name) {
        idx.entries.push_back({kind, trans, column, std::move(name)});
        return static_cast<int>(idx.entries.size() - 1);
    };
    if (!theta.cure_degenerate) {
        idx.alpha = 0;
        idx.alpha_size = static_cast<int>(theta.cure.alpha.size());
        for (int j = 0; j < idx.alpha_size; ++j)
            add(ParameterIndex::Kind::alpha, 0, j, "alpha:" + theta.cure.names[static_cast<std::size_t>(j)]);
    }
    const auto names = spec.covariates.survival_columns();
    idx.beta_size = static_cast<int>(names.size());
    idx.transitions.resize(static_cast<std::size_t>(spec.diagram.size()));
    for (const auto& t : spec.diagram.transitions) {
        const auto& c = theta.cox.at(t.id);
        auto& block = idx.transitions[static_cast<std::size_t>(t.id - 1)];
        const auto& steps = theta.baseline.at(t.id);
        block.lambda.assign(steps.times.size(), -1);
        if (!c.fitted) continue;
        block.beta = static_cast<int>(idx.entries.size());
        for (std::size_t j = 0; j < names.size(); ++j)
            add(ParameterIndex::Kind::beta, t.id, static_cast<int>(j), "beta:" + t.name() + ":" + names[j]);
        if (c.gamma) block.gamma = add(ParameterIndex::Kind::gamma, t.id, 0, "gamma:" + t.name());
        for (std::size_t j = 0; j < steps.times.size(); ++j)
            if (steps.increments[j] > 0.0)
                block.lambda[j] = add(ParameterIndex::Kind::lambda, t.id, static_cast<int>(j),
                                      "lambda:" + t.name() + ":" + csv::format_double(steps.times[j]));
    }
    return idx;
}

Eigen::VectorXd pack(const ModelParameters& theta, const ParameterIndex& index) {
    Eigen::VectorXd v(index.size());
    for (Eigen::Index k = 0; k < index.size(); ++k) {
        const auto& e = index.entries[static_cast<std::size_t>(k)];
        switch (e.kind) {
        case ParameterIndex::Kind::alpha: v[k] = theta.cure.alpha[e.column]; break;
        case ParameterIndex::Kind::beta: v[k] = theta.cox.at(e.trans).beta[e.column]; break;
        case ParameterIndex::Kind::gamma: v[k] = *theta.cox.at(e.trans).gamma; break;
        case ParameterIndex::Kind::lambda:
            v[k] = theta.baseline.at(e.trans).increments[static_cast<std::size_t>(e.column)];
            break;
        }
    }
    return v;
}

ModelParameters unpack(const Eigen::VectorXd& values, const ModelParameters& theta, const ParameterIndex& index) {
    if (values.size() != index.size()) throw Error("inference", "parameter vector has the wrong length");
    ModelParameters out = theta;
    for (Eigen::Index k = 0; k < index.size(); ++k) {
        const auto& e = index.entries[static_cast<std::size_t>(k)];
        const auto t = static_cast<std::size_t>(e.trans - 1);
        switch (e.kind) {
        case ParameterIndex::Kind::alpha: out.cure.alpha[e.column] = values[k]; break;
        case ParameterIndex::Kind::beta: out.cox.by_transition[t].beta[e.column] = values[k]; break;
        case ParameterIndex::Kind::gamma: out.cox.by_transition[t].gamma = values[k]; break;
        case ParameterIndex::Kind::lambda:
            out.baseline.by_transition[t].increments[static_cast<std::size_t>(e.column)] = values[k];
            break;
        }
    }
    for (auto& steps : out.baseline.by_transition) {
        double acc = 0.0;
        for (std::size_t j = 0; j < steps.increments.size(); ++j) steps.cumulative[j] = acc += steps.increments[j];
    }
    return out;
}

SubjectScores score_components(const ExtendedLongTable& table, std::size_t subject, const ModelParameters& theta,
                               const ParameterIndex& index) {
    const auto& s = table.subjects.at(subject);
    SubjectScores sc{Eigen::VectorXd::Zero(index.size()), Eigen::VectorXd::Zero(index.size())};
    for (std::size_t r = s.first_row; r < s.end_row; ++r) {
        const auto& row = table.rows[r];
        add_row_score(row.cure == 1 ? sc.cured : sc.noncured, row, s, theta, index);
    }
    return sc;
}

Eigen::VectorXd weight_derivatives(const ExtendedLongTable& table, std::size_t subject, const ModelParameters& theta,
                                   const ParameterIndex& index) {
    const auto& s = table.subjects.at(subject);
    Eigen::VectorXd d = Eigen::VectorXd::Zero(index.size());
    if (s.known_noncured || s.forced >= 0 || theta.cure_degenerate) return d;
    const auto sc = score_components(table, subject, theta, index);
    const double c = s.weight * (1.0 - s.weight);
    d = c * (sc.cured - sc.noncured);
    d.segment(index.alpha, index.alpha_size) = c * s.z_cure;
    return d;
}

Eigen::VectorXd observed_score(ExtendedLongTable& table, const ModelParameters& theta, const ParameterIndex& index) {
    e_step(table, theta);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(index.size());
    for (std::size_t i = 0; i < table.subjects.size(); ++i) {
        const auto& s = table.subjects[i];
        const auto sc = score_components(table, i, theta, index);
        g += s.weight * sc.cured + (1.0 - s.weight) * sc.noncured;
        if (!theta.cure_degenerate) g.segment(index.alpha, index.alpha_size) += (s.weight - s.pi) * s.z_cure;
    }
    return g;
}

InformationResult information_matrices(ExtendedLongTable table, const ModelParameters& theta, const ModelSpec& spec) {
    e_step(table, theta);
    InformationResult res;
    res.index = parameter_index(theta, spec);
    const auto& index = res.index;
    const Eigen::Index P = index.size();
    Eigen::MatrixXd I = Eigen::MatrixXd::Zero(P, P);

    if (!theta.cure_degenerate) {
        auto A = I.block(index.alpha, index.alpha, index.alpha_size, index.alpha_size);
        for (const auto& s : table.subjects) A.noalias() += s.pi * (1.0 - s.pi) * s.z_cure * s.z_cure.transpose();
    }

    // Complete-data survival blocks, row by row with the row weight.
    for (const auto& row : table.rows) {
        const auto& block = index.transitions[static_cast<std::size_t>(row.trans - 1)];
        if (block.beta < 0 || row.weight == 0.0) continue;
        const auto& s = table.subjects[row.subject];
        const auto& steps = theta.baseline.at(row.trans);
        const double e = std::exp(theta.cox.linear_predictor(row.trans, s.z_survival, row.cure));
        const Eigen::VectorXd x = row_design(block, s, row.cure);
        const auto [lo, hi] = interval(steps, row.tstart, row.tstop);
        double base = 0.0;
        for (std::size_t j = lo; j < hi; ++j) {
            base += steps.increments[j];
            const int pj = block.lambda[j];
            if (pj < 0) continue;
            I.block(block.beta, pj, x.size(), 1) += row.weight * e * x;
        }
        I.block(block.beta, block.beta, x.size(), x.size()).noalias() += row.weight * e * base * x * x.transpose();
        if (row.status == 1 && hi > 0 && block.lambda[hi - 1] >= 0) {
            const double lam = steps.increments[hi - 1];
            I(block.lambda[hi - 1], block.lambda[hi - 1]) += row.weight / (lam * lam);
        }
    }
    // Mirror beta-lambda cross terms.
    for (const auto& block : index.transitions) {
        if (block.beta < 0) continue;
        const int p = index.beta_size + (block.gamma >= 0 ? 1 : 0);
        for (int pj : block.lambda)
            if (pj >= 0) I.block(pj, block.beta, 1, p) = I.block(block.beta, pj, p, 1).transpose();
    }
    res.complete = I;

    // Missing-information term: sum_i w(1-w) D_i D_i^T, D_i = [z; S_f - S_h].
    if (!theta.cure_degenerate) {
        std::vector<std::size_t> latent;
        for (std::size_t i = 0; i < table.subjects.size(); ++i) {
            const auto& s = table.subjects[i];
            if (!s.known_noncured && s.forced < 0) latent.push_back(i);
        }
        Eigen::MatrixXd G(static_cast<Eigen::Index>(latent.size()), P);
        const auto m = static_cast<std::ptrdiff_t>(latent.size());
        std::string error;
#pragma omp parallel for schedule(dynamic, 16)
        for (std::ptrdiff_t k = 0; k < m; ++k) {
            try {
                const auto& s = table.subjects[latent[static_cast<std::size_t>(k)]];
                const auto sc = score_components(table, latent[static_cast<std::size_t>(k)], theta, index);
                Eigen::VectorXd d = sc.cured - sc.noncured;
                d.segment(index.alpha, index.alpha_size) = s.z_cure;
                G.row(k) = std::sqrt(s.weight * (1.0 - s.weight)) * d.transpose();
            } catch (const Error& e) {
#pragma omp critical(mscure_information_error)
                if (error.empty()) error = e.what();
            }
        }
        if (!error.empty()) throw Error("inference", error);
        I.noalias() -= G.transpose() * G;
    }
    res.information = std::move(I);
    for (int k : index.regression()) res.names.push_back(index.entries[static_cast<std::size_t>(k)].name);
    return res;
}

namespace {

// Regression block of M^-1, solving in log-lambda coordinates for conditioning.
Eigen::MatrixXd regression_inverse(const Eigen::MatrixXd& M, const ParameterIndex& index,
                                   const ModelParameters& theta, const char* what) {
    const Eigen::Index P = index.size();
    Eigen::VectorXd scale = Eigen::VectorXd::Ones(P);
    const Eigen::VectorXd values = pack(theta, index);
    for (Eigen::Index k = 0; k < P; ++k)
        if (index.entries[static_cast<std::size_t>(k)].kind == ParameterIndex::Kind::lambda) scale[k] = values[k];
    const Eigen::MatrixXd S = scale.asDiagonal() * M * scale.asDiagonal();

    Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
    const auto& D = ldlt.vectorD();
    const double dmax = D.cwiseAbs().maxCoeff();
    const bool ok = ldlt.info() == Eigen::Success && D.minCoeff() > 1e-12 * dmax;
    if (!ok) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
        const auto& ev = eig.eigenvalues();
        const double emax = ev.cwiseAbs().maxCoeff();
        std::ostringstream msg;
        msg << what << " is singular or not positive definite; near-null directions load on:";
        int shown = 0;
        for (Eigen::Index c = 0; c < ev.size() && shown < 3; ++c) {
            if (ev[c] > 1e-10 * emax) break;
            Eigen::Index top;
            eig.eigenvectors().col(c).cwiseAbs().maxCoeff(&top);
            msg << (shown ? ", " : " ") << index.entries[static_cast<std::size_t>(top)].name;
            ++shown;
        }
        if (shown == 0) msg << " (negative curvature; estimate is not a maximum)";
        throw Error("inference", msg.str());
    }
    const auto reg = index.regression();
    Eigen::MatrixXd E = Eigen::MatrixXd::Zero(P, static_cast<Eigen::Index>(reg.size()));
    for (std::size_t c = 0; c < reg.size(); ++c) E(reg[c], static_cast<Eigen::Index>(c)) = 1.0;
    const Eigen::MatrixXd X = ldlt.solve(E);
    Eigen::MatrixXd out(E.cols(), E.cols());
    for (std::size_t r = 0; r < reg.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = X.row(reg[r]);
    return 0.5 * (out + out.transpose());
}

}  // namespace

InformationResult oakes_information(ExtendedLongTable table, const ModelParameters& theta, const ModelSpec& spec) {
    auto res = information_matrices(std::move(table), theta, spec);
    res.covariance = regression_inverse(res.information, res.index, theta, "observed information");
    res.naive_covariance = regression_inverse(res.complete, res.index, theta, "complete-data information");
    res.se = res.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    return res;
}

std::uint64_t replicate_seed(std::uint64_t seed, int replicate) {
    return derive_seed(seed, static_cast<std::uint64_t>(replicate));
}

std::vector<std::size_t> resample_indices(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx)
        i = static_cast<std::size_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
    return idx;
}

namespace {

struct Replicate {
    std::map<std::string, double> values;
    bool capped = false;
    std::string error;
};

Replicate run_replicate(const std::vector<WideRecord>& cohort, const ModelSpec& spec, const FittedModel& full,
                        const BootstrapOptions& o, int r) {
    Replicate rep;
    try {
        std::vector<WideRecord> sample;
        sample.reserve(cohort.size());
        if (o.identity_resample) {
            sample = cohort;
        } else {
            const auto idx = resample_indices(cohort.size(), replicate_seed(o.seed, r));
            for (std::size_t k = 0; k < idx.size(); ++k) {
                sample.push_back(cohort[idx[k]]);
                sample.back().id += "#" + std::to_string(k + 1);
            }
        }
        EmOptions em;
        em.epsilon = o.epsilon;
        em.max_iter = o.max_iter;
        em.parallel = false;
        auto table = build_extended_table(sample, spec);
        EmResult fit = [&] {
            if (o.warm_start) {
                try {
                    em.warm_start = full.theta;
                    return em_fit(table, spec, em);
                } catch (const Error&) {
                    em.warm_start.reset();
                }
            }
            return em_fit(std::move(table), spec, em);
        }();
        rep.capped = !fit.model.converged;
        for (const auto& p : regression_parameters(fit.model.theta, spec)) rep.values[p.name] = p.value;
    } catch (const std::exception& e) {
        rep.error = "replicate " + std::to_string(r + 1) + ": " + e.what();
    }
    return rep;
}

BootstrapResult summarize(std::vector<Replicate> reps, const ModelSpec& spec, const FittedModel& full) {
    BootstrapResult res;
    res.replicates = static_cast<int>(reps.size());
    for (const auto& p : regression_parameters(full.theta, spec)) res.names.push_back(p.name);
    const auto k = static_cast<Eigen::Index>(res.names.size());
    res.estimates = Eigen::MatrixXd::Constant(res.replicates, k, kNaN);
    for (int r = 0; r < res.replicates; ++r) {
        const auto& rep = reps[static_cast<std::size_t>(r)];
        if (!rep.error.empty()) {
            ++res.failures;
            res.failure_messages.push_back(rep.error);
            continue;
        }
        res.capped += rep.capped;
        for (Eigen::Index j = 0; j < k; ++j) {
            auto it = rep.values.find(res.names[static_cast<std::size_t>(j)]);
            if (it != rep.values.end()) res.estimates(r, j) = it->second;
        }
    }
    if (2 * res.failures > res.replicates)
        throw Error("inference", std::to_string(res.failures) + " of " + std::to_string(res.replicates) +
                                     " bootstrap replicates failed; first: " + res.failure_messages.front());
    res.se = Eigen::VectorXd::Constant(k, kNaN);
    res.available = Eigen::VectorXi::Zero(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        double sum = 0.0, sq = 0.0;
        int n = 0;
        for (int r = 0; r < res.replicates; ++r)
            if (const double v = res.estimates(r, j); !std::isnan(v)) sum += v, ++n;
        if (n < 2) continue;
        const double mean = sum / n;
        for (int r = 0; r < res.replicates; ++r)
            if (const double v = res.estimates(r, j); !std::isnan(v)) sq += (v - mean) * (v - mean);
        res.available[j] = n;
        res.se[j] = std::sqrt(sq / (n - 1));
    }
    return res;
}

void check_options(const BootstrapOptions& o, std::size_t n) {
    if (o.replicates < 2) throw Error("inference", "bootstrap needs at least 2 replicates");
    if (n == 0) throw Error("inference", "bootstrap on an empty cohort");
}

}  // namespace

BootstrapResult bootstrap_se(const std::vector<WideRecord>& cohort, const ModelSpec& spec, const FittedModel& full,
                             const BootstrapOptions& options) {
    check_options(options, cohort.size());
    std::vector<Replicate> reps(static_cast<std::size_t>(options.replicates));
    const int threads = options.jobs > 0 ? options.jobs : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (int r = 0; r < options.replicates; ++r)
        reps[static_cast<std::size_t>(r)] = run_replicate(cohort, spec, full, options, r);
    return summarize(std::move(reps), spec, full);
}

BootstrapResult bootstrap_se_reference(const std::vector<WideRecord>& cohort, const ModelSpec& spec,
                                       const FittedModel& full, const BootstrapOptions& options) {
    check_options(options, cohort.size());
    std::vector<Replicate> reps;
    for (int r = 0; r < options.replicates; ++r) reps.push_back(run_replicate(cohort, spec, full, options, r));
    return summarize(std::move(reps), spec, full);
}

}  // namespace mscure
