#include "mscure/survival.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Cholesky>

#include "mscure/csv.hpp"
#include "mscure/error.hpp"

namespace mscure {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw Error("survival-engine", msg); }

std::vector<std::size_t> order_desc(const std::vector<double>& key) {
    std::vector<std::size_t> idx(key.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
    return idx;
}

}  // namespace

CoxData::CoxData(std::vector<double> start, std::vector<double> stop, std::vector<int> status,
                 std::vector<double> weight, Eigen::MatrixXd x)
    : start_(std::move(start)),
      stop_(std::move(stop)),
      status_(std::move(status)),
      weight_(std::move(weight)),
      x_(std::move(x)) {
    const std::size_t n = start_.size();
    if (stop_.size() != n || status_.size() != n || weight_.size() != n || static_cast<std::size_t>(x_.rows()) != n)
        fail("Cox data columns have inconsistent lengths");
    for (std::size_t i = 0; i < n; ++i) {
        if (!(stop_[i] > start_[i])) fail("Cox data row with empty risk interval");
        if (weight_[i] < 0 || !std::isfinite(weight_[i])) fail("Cox data row with invalid weight");
        if (status_[i] == 1) event_times_.push_back(stop_[i]);
    }
    std::sort(event_times_.begin(), event_times_.end());
    event_times_.erase(std::unique(event_times_.begin(), event_times_.end()), event_times_.end());
    event_rows_.resize(event_times_.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (status_[i] != 1) continue;
        auto k = std::lower_bound(event_times_.begin(), event_times_.end(), stop_[i]) - event_times_.begin();
        event_rows_[static_cast<std::size_t>(k)].push_back(i);
    }
    by_stop_desc_ = order_desc(stop_);
    by_start_desc_ = order_desc(start_);
}

CoxEvaluation cox_partial_loglik(const CoxData& data, const Eigen::VectorXd& beta) {
    const Eigen::Index p = beta.size();
    const std::size_t n = data.size();
    if (p > data.columns()) fail("more coefficients than covariate columns");
    const auto& x = data.x();
    const auto& w = data.weight();
    Eigen::VectorXd eta = p > 0 ? Eigen::VectorXd(x.leftCols(p) * beta) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));

    CoxEvaluation out;
    out.gradient = Eigen::VectorXd::Zero(p);
    out.information = Eigen::MatrixXd::Zero(p, p);

    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
    std::size_t ia = 0, ir = 0;
    const auto& by_stop = data.by_stop_desc();
    const auto& by_start = data.by_start_desc();
    const auto& times = data.event_times();

    auto accumulate = [&](std::size_t i, double sign) {
        const double r = sign * w[i] * std::exp(eta[static_cast<Eigen::Index>(i)]);
        s0 += r;
        if (p > 0) {
            auto xi = x.row(static_cast<Eigen::Index>(i)).head(p).transpose();
            s1 += r * xi;
            s2.noalias() += r * xi * xi.transpose();
        }
    };

    for (std::size_t k = times.size(); k-- > 0;) {
        const double t = times[k];
        while (ia < n && data.stop()[by_stop[ia]] >= t) accumulate(by_stop[ia++], 1.0);
        while (ir < n && data.start()[by_start[ir]] >= t) accumulate(by_start[ir++], -1.0);

        double dw = 0.0, lw = 0.0;
        Eigen::VectorXd xw = Eigen::VectorXd::Zero(p);
        for (std::size_t i : data.events_at(k)) {
            dw += w[i];
            lw += w[i] * eta[static_cast<Eigen::Index>(i)];
            if (p > 0) xw += w[i] * x.row(static_cast<Eigen::Index>(i)).head(p).transpose();
        }
        if (dw <= 0.0) continue;
        if (!(s0 > 0.0)) fail("empty weighted risk set at event time " + csv::format_double(t));
        out.loglik += lw - dw * std::log(s0);
        if (p > 0) {
            Eigen::VectorXd mean = s1 / s0;
            out.gradient += xw - dw * mean;
            out.information += dw * (s2 / s0 - mean * mean.transpose());
        }
    }
    return out;
}

CoxFitResult fit_cox(const CoxData& data, const Eigen::VectorXd& start, const CoxSolverOptions& options) {
    CoxFitResult res;
    Eigen::VectorXd beta = start;
    CoxEvaluation ev = cox_partial_loglik(data, beta);
    res.coef = beta;
    res.loglik = ev.loglik;
    if (beta.size() == 0) return res;

    auto newton_step = [&](const CoxEvaluation& e) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(e.information);
        const auto d = ldlt.vectorD();
        const double dmax = std::max(d.cwiseAbs().maxCoeff(), 1e-300);
        if (ldlt.info() != Eigen::Success || d.minCoeff() <= 1e-12 * dmax) {
            Eigen::Index j = 0;
            e.information.diagonal().minCoeff(&j);
            fail("singular information in Cox fit (covariate column " + std::to_string(j) + ")");
        }
        return Eigen::VectorXd(ldlt.solve(e.gradient));
    };

    bool converged = false;
    bool polish = false;
    int it = 0;
    for (; it < options.max_iter; ++it) {
        if (ev.gradient.norm() < options.tol) {
            converged = true;
            break;
        }
        Eigen::VectorXd step = newton_step(ev);
        double scale = 1.0;
        Eigen::VectorXd cand;
        CoxEvaluation next;
        for (int halving = 0;; ++halving) {
            cand = beta + scale * step;
            next = cox_partial_loglik(data, cand);
            if (std::isfinite(next.loglik) && next.loglik >= ev.loglik - 1e-12 * std::abs(ev.loglik)) break;
            if (halving == 40) {
                cand = beta;
                next = ev;
                break;
            }
            scale *= 0.5;
        }
        const double change = std::abs(next.loglik - ev.loglik) / std::max(std::abs(ev.loglik), 1.0);
        beta = cand;
        ev = std::move(next);
        res.trace.push_back(ev.loglik);
        if (options.watch >= 0 && std::abs(beta[options.watch]) > options.watch_bound) {
            res.watch_exceeded = true;
            break;
        }
        if (polish) {
            converged = true;
            ++it;
            break;
        }
        if (change < options.tol) polish = true;  // one more step after the plateau
    }
    if (!converged && !res.watch_exceeded && ev.gradient.norm() < options.tol) converged = true;
    res.coef = beta;
    res.loglik = ev.loglik;
    res.gradient_norm = ev.gradient.norm();
    res.iterations = it;
    if (!converged && !res.watch_exceeded) {
        std::string iterate;
        for (Eigen::Index j = 0; j < beta.size(); ++j) iterate += (j ? ", " : "") + csv::format_double(beta[j]);
        fail("Cox fit did not converge in " + std::to_string(options.max_iter) + " iterations; last iterate [" +
             iterate + "], gradient norm " + csv::format_double(res.gradient_norm));
    }
    return res;
}

double BaselineSteps::cumulative_at(double t) const {
    auto k = std::upper_bound(times.begin(), times.end(), t) - times.begin();
    return k == 0 ? 0.0 : cumulative[static_cast<std::size_t>(k - 1)];
}

std::optional<double> BaselineSteps::increment_at(double t) const {
    auto it = std::lower_bound(times.begin(), times.end(), t);
    if (it == times.end() || *it != t) return std::nullopt;
    return increments[static_cast<std::size_t>(it - times.begin())];
}

BaselineSteps breslow(const CoxData& data, const Eigen::VectorXd& beta) {
    const Eigen::Index p = beta.size();
    const std::size_t n = data.size();
    const auto& w = data.weight();
    Eigen::VectorXd eta = p > 0 ? Eigen::VectorXd(data.x().leftCols(p) * beta) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    const auto& times = data.event_times();
    BaselineSteps steps;
    steps.times = times;
    steps.increments.assign(times.size(), 0.0);
    double s0 = 0.0;
    std::size_t ia = 0, ir = 0;
    for (std::size_t k = times.size(); k-- > 0;) {
        const double t = times[k];
        while (ia < n && data.stop()[data.by_stop_desc()[ia]] >= t) {
            auto i = data.by_stop_desc()[ia++];
            s0 += w[i] * std::exp(eta[static_cast<Eigen::Index>(i)]);
        }
        while (ir < n && data.start()[data.by_start_desc()[ir]] >= t) {
            auto i = data.by_start_desc()[ir++];
            s0 -= w[i] * std::exp(eta[static_cast<Eigen::Index>(i)]);
        }
        double dw = 0.0;
        for (std::size_t i : data.events_at(k)) dw += w[i];
        if (dw <= 0.0) continue;
        if (!(s0 > 0.0)) fail("empty weighted risk set at event time " + csv::format_double(t));
        steps.increments[k] = dw / s0;
    }
    steps.cumulative.resize(times.size());
    std::partial_sum(steps.increments.begin(), steps.increments.end(), steps.cumulative.begin());
    return steps;
}

double CoxCoefficients::linear_predictor(int trans, const Eigen::VectorXd& z_survival, int cure) const {
    const auto& c = at(trans);
    double eta = c.beta.size() > 0 ? c.beta.dot(z_survival) : 0.0;
    if (cure == 1 && c.gamma) eta += *c.gamma;
    return eta;
}

CoxData transition_data(const ExtendedLongTable& table, const ModelSpec& spec, int trans) {
    const bool split = spec.cure.is_split(trans);
    const auto p = static_cast<Eigen::Index>(table.survival_columns.size()) + (split ? 1 : 0);
    std::vector<std::size_t> idx;
    for (std::size_t r = 0; r < table.rows.size(); ++r)
        if (table.rows[r].trans == trans) idx.push_back(r);
    std::vector<double> start, stop, weight;
    std::vector<int> status;
    Eigen::MatrixXd x(static_cast<Eigen::Index>(idx.size()), p);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& row = table.rows[idx[k]];
        const auto& subj = table.subjects[row.subject];
        start.push_back(row.tstart);
        stop.push_back(row.tstop);
        status.push_back(row.status);
        weight.push_back(row.weight);
        const auto i = static_cast<Eigen::Index>(k);
        if (subj.z_survival.size() > 0) x.row(i).head(subj.z_survival.size()) = subj.z_survival.transpose();
        if (split) x(i, p - 1) = row.cure;
    }
    return CoxData(std::move(start), std::move(stop), std::move(status), std::move(weight), std::move(x));
}

CoxFitOptions cox_fit_options(const ModelSpec& spec) {
    CoxFitOptions o;
    o.solver.tol = spec.fit.inner_tol;
    o.solver.max_iter = spec.fit.inner_max_iter;
    o.gamma_drop_threshold = spec.fit.gamma_drop_threshold;
    return o;
}

CoxCoefficients fit_weighted_cox(const ExtendedLongTable& table, const ModelSpec& spec,
                                 const CoxFitOptions& options, const CoxCoefficients* previous) {
    const auto n_surv = static_cast<Eigen::Index>(table.survival_columns.size());
    CoxCoefficients out;
    out.by_transition.resize(static_cast<std::size_t>(spec.diagram.size()));
    for (const auto& t : spec.diagram.transitions) {
        const auto k = static_cast<std::size_t>(t.id - 1);
        auto& tc = out.by_transition[k];
        if (previous && k < options.keep.size() && options.keep[k]) {
            tc = previous->by_transition[k];
            continue;
        }
        const bool split = spec.cure.is_split(t.id);
        CoxData data = transition_data(table, spec, t.id);

        double events = 0.0, cured_events = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (data.status()[i] != 1) continue;
            events += data.weight()[i];
            if (split && data.x()(static_cast<Eigen::Index>(i), n_surv) == 1.0) cured_events += data.weight()[i];
        }
        tc.beta = Eigen::VectorXd::Zero(n_surv);
        if (!(events > 0.0)) {
            out.warnings.push_back("transition " + t.name() + " has no weighted events; skipped");
            tc.gamma_dropped = previous ? previous->by_transition[k].gamma_dropped : false;
            continue;
        }
        bool gamma_active = split && !(previous && previous->by_transition[k].gamma_dropped);
        tc.gamma_dropped = split && !gamma_active;
        if (gamma_active && !(cured_events > 0.0)) {
            gamma_active = false;
            tc.gamma_dropped = true;
            out.warnings.push_back("cure effect on transition " + t.name() +
                                   " dropped: no weighted events among cured rows");
        }

        auto solve = [&](bool with_gamma) {
            const Eigen::Index p = n_surv + (with_gamma ? 1 : 0);
            Eigen::VectorXd start = Eigen::VectorXd::Zero(p);
            if (previous && previous->by_transition[k].fitted) {
                const auto& prev = previous->by_transition[k];
                if (prev.beta.size() == n_surv) start.head(n_surv) = prev.beta;
                if (with_gamma && prev.gamma) start[n_surv] = *prev.gamma;
            }
            CoxSolverOptions so = options.solver;
            so.watch = with_gamma ? n_surv : -1;
            so.watch_bound = options.gamma_drop_threshold;
            try {
                return fit_cox(data, start, so);
            } catch (const Error& e) {
                fail("transition " + t.name() + ": " + e.what());
            }
        };

        CoxFitResult fit = solve(gamma_active);
        if (fit.watch_exceeded) {
            out.warnings.push_back("cure effect on transition " + t.name() + " dropped: |gamma| exceeded " +
                                   csv::format_double(options.gamma_drop_threshold));
            gamma_active = false;
            tc.gamma_dropped = true;
            fit = solve(false);
        }
        tc.fitted = true;
        tc.beta = fit.coef.head(n_surv);
        if (gamma_active) tc.gamma = fit.coef[n_surv];
        tc.iterations = fit.iterations;
        tc.loglik = fit.loglik;
        tc.gradient_norm = fit.gradient_norm;
    }
    return out;
}

BaselineHazard breslow_baseline(const ExtendedLongTable& table, const ModelSpec& spec,
                                const CoxCoefficients& coefs) {
    const auto n_surv = static_cast<Eigen::Index>(table.survival_columns.size());
    BaselineHazard out;
    out.by_transition.resize(static_cast<std::size_t>(spec.diagram.size()));
    for (const auto& t : spec.diagram.transitions) {
        const auto& tc = coefs.at(t.id);
        if (!tc.fitted) continue;
        CoxData data = transition_data(table, spec, t.id);
        Eigen::VectorXd beta(n_surv + (tc.gamma ? 1 : 0));
        beta.head(n_surv) = tc.beta;
        if (tc.gamma) beta[n_surv] = *tc.gamma;
        out.by_transition[static_cast<std::size_t>(t.id - 1)] = breslow(data, beta);
    }
    return out;
}

double cumulative_hazard(const ExtendedLongRow& row, const Subject& subject, const CoxCoefficients& coefs,
                         const BaselineHazard& baseline) {
    const auto& steps = baseline.at(row.trans);
    if (steps.times.empty()) return 0.0;
    const double base = steps.cumulative_at(row.tstop) - steps.cumulative_at(row.tstart);
    if (base == 0.0) return 0.0;
    return base * std::exp(coefs.linear_predictor(row.trans, subject.z_survival, row.cure));
}

double row_likelihood(double cum_haz, double hazard, int status) {
    return std::exp(-cum_haz) * (status == 1 ? hazard : 1.0);
}

void evaluate_row(ExtendedLongRow& row, const Subject& subject, const CoxCoefficients& coefs,
                  const BaselineHazard& baseline) {
    const double eta = std::exp(coefs.linear_predictor(row.trans, subject.z_survival, row.cure));
    const auto& steps = baseline.at(row.trans);
    const double base = steps.times.empty() ? 0.0 : steps.cumulative_at(row.tstop) - steps.cumulative_at(row.tstart);
    row.cum_haz = base * eta;
    row.hazard = 0.0;
    row.log_likelihood = -row.cum_haz;
    if (row.status == 1) {
        auto inc = steps.increment_at(row.tstop);
        if (!inc)
            throw Error("survival-engine", "subject " + subject.id + ": status 1 at " +
                                               csv::format_double(row.tstop) +
                                               " which is not an event time of transition " +
                                               std::to_string(row.trans));
        row.hazard = *inc * eta;
        row.log_likelihood += std::log(row.hazard);
    }
}

}  // namespace mscure
