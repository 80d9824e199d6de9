#include "mscure/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mscure/error.hpp"

namespace mscure {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double constrained_loglik(const Subject& s, double log_f, double log_h) {
    if (s.forced == 1) return s.pi > 0.0 ? std::log(s.pi) + log_f : kNegInf;
    return subject_loglik(s.pi, log_f, log_h, s.known_noncured || s.forced == 0);
}

// E-step work for one subject; returns its observed log-likelihood contribution.
double update_subject(ExtendedLongTable& table, std::size_t i, const ModelParameters& theta) {
    auto& s = table.subjects[i];
    s.pi = theta.pi(s.z_cure);
    double log_f = 0.0, log_h = 0.0;
    for (std::size_t r = s.first_row; r < s.end_row; ++r) {
        auto& row = table.rows[r];
        evaluate_row(row, s, theta.cox, theta.baseline);
        row.pi = s.pi;
        (row.cure == 1 ? log_f : log_h) += row.log_likelihood;
    }
    if (s.forced >= 0)
        set_subject_weight(table, i, s.forced);
    else if (!s.known_noncured)
        set_subject_weight(table, i, posterior_weight_log(s.pi, log_f, log_h));
    const double ll = constrained_loglik(s, log_f, log_h);
    if (!std::isfinite(ll))
        throw Error("em-engine", "non-finite observed log-likelihood contribution for subject " + s.id);
    return ll;
}

}  // namespace

double ModelParameters::pi(const Eigen::VectorXd& z_cure) const {
    return cure_degenerate ? 0.0 : cure_probability(z_cure, cure);
}

double posterior_weight_log(double pi, double log_cured, double log_noncured) {
    if (!(pi >= 0.0 && pi <= 1.0)) throw Error("em-engine", "cure probability outside [0, 1]");
    const double a = pi > 0.0 ? std::log(pi) + log_cured : kNegInf;
    const double b = pi < 1.0 ? std::log1p(-pi) + log_noncured : kNegInf;
    if (a == kNegInf && b == kNegInf)
        throw Error("em-engine", "degenerate subject: both cure branches have zero likelihood");
    if (a == kNegInf) return 0.0;
    if (b == kNegInf) return 1.0;
    const double d = b - a;
    return d >= 0 ? std::exp(-d) / (1.0 + std::exp(-d)) : 1.0 / (1.0 + std::exp(d));
}

double posterior_weight(double pi, double lik_cured, double lik_noncured) {
    if (lik_cured < 0.0 || lik_noncured < 0.0) throw Error("em-engine", "negative branch likelihood");
    return posterior_weight_log(pi, std::log(lik_cured), std::log(lik_noncured));
}

double subject_loglik(double pi, double log_cured, double log_noncured, bool known_noncured) {
    const double b = pi < 1.0 ? std::log1p(-pi) + log_noncured : kNegInf;
    if (known_noncured) return b;
    const double a = pi > 0.0 ? std::log(pi) + log_cured : kNegInf;
    return log_sum_exp(a, b);
}

EStepResult e_step(ExtendedLongTable& table, const ModelParameters& theta) {
    const auto n = static_cast<std::ptrdiff_t>(table.subjects.size());
    EStepResult res;
    res.subject_loglik.assign(table.subjects.size(), 0.0);
    std::string error_module, error_message;
    bool failed = false;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        try {
            res.subject_loglik[static_cast<std::size_t>(i)] = update_subject(table, static_cast<std::size_t>(i), theta);
        } catch (const Error& e) {
#pragma omp critical(mscure_estep_error)
            if (!failed) {
                failed = true;
                error_module = e.module();
                error_message = e.what();
            }
        }
    }
    if (failed) throw Error(error_module, error_message);
    for (double v : res.subject_loglik) res.loglik += v;
    return res;
}

EStepResult e_step_reference(ExtendedLongTable& table, const ModelParameters& theta) {
    EStepResult res;
    for (std::size_t i = 0; i < table.subjects.size(); ++i) {
        res.subject_loglik.push_back(update_subject(table, i, theta));
        res.loglik += res.subject_loglik.back();
    }
    return res;
}

double observed_loglik(const ExtendedLongTable& table) {
    std::vector<double> log_f(table.subjects.size(), 0.0), log_h(table.subjects.size(), 0.0);
    for (const auto& row : table.rows) (row.cure == 1 ? log_f : log_h)[row.subject] += row.log_likelihood;
    double total = 0.0;
    for (std::size_t i = 0; i < table.subjects.size(); ++i) {
        const auto& s = table.subjects[i];
        const double ll = constrained_loglik(s, log_f[i], log_h[i]);
        if (!std::isfinite(ll))
            throw Error("em-engine", "non-finite observed log-likelihood contribution for subject " + s.id);
        total += ll;
    }
    return total;
}

double noncure_tmax(const ExtendedLongTable& table, const ModelSpec& spec) {
    double t_max = kNegInf;
    for (const auto& row : table.rows)
        if (row.status == 1 && spec.cure.is_non_cure(row.to)) t_max = std::max(t_max, row.tstop);
    return t_max;
}

std::size_t apply_zero_tail(ExtendedLongTable& table, ZeroTail mode, double t_max) {
    const int forced = mode == ZeroTail::cure_censored_after_tmax ? 1 : 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < table.subjects.size(); ++i) {
        auto& s = table.subjects[i];
        s.forced = -1;
        if (mode == ZeroTail::off || s.known_noncured || !(s.noncure_followup > t_max)) continue;
        s.forced = forced;
        set_subject_weight(table, i, forced);
        ++count;
    }
    return count;
}

ModelParameters m_step(const ExtendedLongTable& table, const ModelSpec& spec, const ModelParameters* previous) {
    ModelParameters theta;
    auto options = cox_fit_options(spec);
    if (previous) {
        options.keep.resize(static_cast<std::size_t>(spec.diagram.size()), false);
        for (const auto& t : spec.diagram.transitions)
            options.keep[static_cast<std::size_t>(t.id - 1)] =
                spec.cure.is_frozen(t.id) && previous->cox.at(t.id).fitted;
    }
    theta.cox = fit_weighted_cox(table, spec, options, previous ? &previous->cox : nullptr);
    theta.baseline = breslow_baseline(table, spec, theta.cox);

    const auto q2 = build_q2_table(table.subjects);
    const Eigen::VectorXd* start = previous && !previous->cure_degenerate ? &previous->cure.alpha : nullptr;
    theta.cure = fit_weighted_logistic(q2, table.cure_columns, {}, start);
    return theta;
}

EmOptions em_options(const FitConfig& config) {
    EmOptions o;
    o.epsilon = config.em_epsilon;
    o.max_iter = config.em_max_iter;
    return o;
}

namespace {

void collect_warnings(std::vector<std::string>& into, const std::vector<std::string>& from) {
    for (const auto& w : from)
        if (std::find(into.begin(), into.end(), w) == into.end()) into.push_back(w);
}

FittedModel summarize(const ExtendedLongTable& table, const ModelSpec& spec, const ModelParameters& theta) {
    FittedModel m;
    m.spec = spec;
    m.theta = theta;
    for (const auto& s : table.subjects) m.subjects.push_back({s.id, s.known_noncured, s.pi, s.weight});
    return m;
}

}  // namespace

EmResult em_fit(ExtendedLongTable table, const ModelSpec& spec, const EmOptions& options) {
    auto estep = [&](ExtendedLongTable& t, const ModelParameters& th) {
        return options.parallel ? e_step(t, th) : e_step_reference(t, th);
    };
    std::vector<std::string> warnings;

    if (table.unknown_count() == 0) {
        // Every cure status is observed: a plain multistate fit, no latent structure.
        ModelParameters theta;
        theta.cox = fit_weighted_cox(table, spec, cox_fit_options(spec));
        theta.baseline = breslow_baseline(table, spec, theta.cox);
        theta.cure_degenerate = true;
        theta.cure.names = table.cure_columns;
        theta.cure.alpha = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(table.cure_columns.size()),
                                                     std::numeric_limits<double>::quiet_NaN());
        const double ll = estep(table, theta).loglik;
        if (options.observer) options.observer({1, ll, false, table, theta});
        collect_warnings(warnings, theta.cox.warnings);
        warnings.push_back("no subject of unknown cure status; cure model not estimable");
        EmResult res{summarize(table, spec, theta), std::move(table)};
        res.model.loglik_trace = {ll};
        res.model.converged = true;
        res.model.iterations = 1;
        res.model.warnings = warnings;
        return res;
    }

    apply_zero_tail(table, spec.fit.zero_tail, noncure_tmax(table, spec));
    if (options.warm_start) estep(table, *options.warm_start);

    ModelParameters theta = m_step(table, spec, options.warm_start ? &*options.warm_start : nullptr);
    collect_warnings(warnings, theta.cox.warnings);
    double ll = estep(table, theta).loglik;
    std::vector<double> trace{ll};
    if (options.observer) options.observer({1, ll, false, table, theta});
    std::vector<int> changes;

    bool converged = false;
    int iterations = 1;
    while (iterations < options.max_iter) {
        ModelParameters next;
        try {
            next = m_step(table, spec, &theta);
        } catch (const Error& e) {
            throw Error(e.module(), std::string(e.what()) + " (EM iteration " + std::to_string(iterations + 1) + ")");
        }
        bool changed = false;
        for (const auto& t : spec.diagram.transitions)
            changed |= next.cox.at(t.id).gamma_dropped != theta.cox.at(t.id).gamma_dropped;
        theta = std::move(next);
        collect_warnings(warnings, theta.cox.warnings);
        ++iterations;
        if (changed) changes.push_back(iterations);
        const double ll_next = estep(table, theta).loglik;
        trace.push_back(ll_next);
        if (options.observer) options.observer({iterations, ll_next, changed, table, theta});
        const double gain = ll_next - ll;
        ll = ll_next;
        if (!changed && gain < options.epsilon) {
            converged = true;
            break;
        }
    }

    EmResult res{summarize(table, spec, theta), std::move(table)};
    res.model.loglik_trace = std::move(trace);
    res.model.converged = converged;
    res.model.iterations = iterations;
    res.model.warnings = std::move(warnings);
    res.model.structure_changes = std::move(changes);
    if (!converged)
        res.model.warnings.push_back("EM reached " + std::to_string(options.max_iter) +
                                     " iterations without converging");
    return res;
}

EmResult em_fit(const std::vector<WideRecord>& cohort, const ModelSpec& spec) {
    return em_fit(build_extended_table(cohort, spec), spec, em_options(spec.fit));
}

}  // namespace mscure
