#include "mscure/fitted_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "mscure/csv.hpp"
#include "mscure/error.hpp"

namespace mscure {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw Error("em-engine", msg); }

nlohmann::json vec_json(const Eigen::VectorXd& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::isfinite(v[i]))
            a.push_back(v[i]);
        else
            a.push_back(nullptr);
    }
    return a;
}

Eigen::VectorXd json_vec(const nlohmann::json& a) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        v[static_cast<Eigen::Index>(i)] = a[i].is_null() ? std::numeric_limits<double>::quiet_NaN() : a[i].get<double>();
    return v;
}

std::string fixed3(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << v;
    return os.str();
}

}  // namespace

nlohmann::json to_json(const FittedModel& model) {
    const auto& spec = model.spec;
    const auto& theta = model.theta;
    nlohmann::json doc;
    doc["format"] = "mscure-fitted-model";
    doc["version"] = 1;
    doc["spec"] = to_json(spec);
    doc["cure"] = {{"degenerate", theta.cure_degenerate},
                   {"names", theta.cure.names},
                   {"alpha", vec_json(theta.cure.alpha)},
                   {"iterations", theta.cure.iterations}};
    nlohmann::json trans = nlohmann::json::array();
    for (const auto& t : spec.diagram.transitions) {
        const auto& c = theta.cox.at(t.id);
        const auto& b = theta.baseline.at(t.id);
        nlohmann::json e;
        e["id"] = t.id;
        e["from"] = t.from;
        e["to"] = t.to;
        e["kind"] = spec.cure.is_split(t.id) ? "split" : "noncure_only";
        e["frozen"] = spec.cure.is_frozen(t.id);
        e["fitted"] = c.fitted;
        e["beta"] = vec_json(c.beta);
        e["gamma"] = c.gamma ? nlohmann::json(*c.gamma) : nlohmann::json(nullptr);
        e["gamma_dropped"] = c.gamma_dropped;
        e["inner_iterations"] = c.iterations;
        e["baseline"] = {{"times", b.times}, {"increments", b.increments}};
        trans.push_back(e);
    }
    doc["survival_names"] = spec.covariates.survival_columns();
    doc["transitions"] = trans;
    nlohmann::json subjects = nlohmann::json::array();
    for (const auto& s : model.subjects)
        subjects.push_back({{"id", s.id}, {"known_noncured", s.known_noncured}, {"pi", s.pi}, {"weight", s.weight}});
    doc["subjects"] = subjects;
    doc["loglik_trace"] = model.loglik_trace;
    doc["converged"] = model.converged;
    doc["iterations"] = model.iterations;
    doc["warnings"] = model.warnings;
    return doc;
}

FittedModel fitted_model_from_json(const nlohmann::json& doc) {
    try {
        if (doc.value("format", "") != "mscure-fitted-model") fail("not a fitted model document");
        FittedModel m;
        m.spec = validate_model_spec(doc.at("spec"));
        auto& theta = m.theta;
        const auto& cure = doc.at("cure");
        theta.cure_degenerate = cure.at("degenerate").get<bool>();
        theta.cure.names = cure.at("names").get<std::vector<std::string>>();
        theta.cure.alpha = json_vec(cure.at("alpha"));
        theta.cure.iterations = cure.value("iterations", 0);
        const auto n = static_cast<std::size_t>(m.spec.diagram.size());
        theta.cox.by_transition.resize(n);
        theta.baseline.by_transition.resize(n);
        for (const auto& e : doc.at("transitions")) {
            const int id = e.at("id").get<int>();
            if (id < 1 || id > static_cast<int>(n)) fail("transition id out of range");
            auto& c = theta.cox.by_transition[static_cast<std::size_t>(id - 1)];
            c.fitted = e.at("fitted").get<bool>();
            c.beta = json_vec(e.at("beta"));
            if (!e.at("gamma").is_null()) c.gamma = e.at("gamma").get<double>();
            c.gamma_dropped = e.at("gamma_dropped").get<bool>();
            c.iterations = e.value("inner_iterations", 0);
            auto& b = theta.baseline.by_transition[static_cast<std::size_t>(id - 1)];
            b.times = e.at("baseline").at("times").get<std::vector<double>>();
            b.increments = e.at("baseline").at("increments").get<std::vector<double>>();
            if (b.times.size() != b.increments.size()) fail("baseline times and increments differ in length");
            b.cumulative.resize(b.increments.size());
            double acc = 0.0;
            for (std::size_t j = 0; j < b.increments.size(); ++j) b.cumulative[j] = acc += b.increments[j];
        }
        for (const auto& s : doc.at("subjects"))
            m.subjects.push_back({s.at("id").get<std::string>(), s.at("known_noncured").get<bool>(),
                                  s.at("pi").get<double>(), s.at("weight").get<double>()});
        m.loglik_trace = doc.at("loglik_trace").get<std::vector<double>>();
        m.converged = doc.at("converged").get<bool>();
        m.iterations = doc.at("iterations").get<int>();
        m.warnings = doc.value("warnings", std::vector<std::string>{});
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("malformed fitted model document: ") + e.what());
    }
}

FittedModel load_fitted_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open model '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        fail("cannot parse model '" + path + "': " + e.what());
    }
    return fitted_model_from_json(doc);
}

std::vector<NamedParameter> regression_parameters(const ModelParameters& theta, const ModelSpec& spec) {
    std::vector<NamedParameter> out;
    if (!theta.cure_degenerate)
        for (Eigen::Index j = 0; j < theta.cure.alpha.size(); ++j)
            out.push_back({"alpha:" + theta.cure.names[static_cast<std::size_t>(j)], theta.cure.alpha[j]});
    const auto names = spec.covariates.survival_columns();
    for (const auto& t : spec.diagram.transitions) {
        const auto& c = theta.cox.at(t.id);
        if (!c.fitted) continue;
        for (std::size_t j = 0; j < names.size(); ++j)
            out.push_back({"beta:" + t.name() + ":" + names[j], c.beta[static_cast<Eigen::Index>(j)]});
        if (c.gamma) out.push_back({"gamma:" + t.name(), *c.gamma});
    }
    return out;
}

namespace {

struct CoefficientRow {
    std::string analysis, transition;
    std::map<std::string, std::pair<double, std::string>> cells;  // term -> (value, parameter name)
};

std::pair<std::vector<std::string>, std::vector<CoefficientRow>> coefficient_rows(const FittedModel& model) {
    const auto& spec = model.spec;
    std::vector<std::string> terms{kInterceptName, "cure"};
    auto add_term = [&](const std::string& t) {
        if (std::find(terms.begin(), terms.end(), t) == terms.end()) terms.push_back(t);
    };
    std::vector<CoefficientRow> rows;
    CoefficientRow cure_row{"cure", "", {}};
    if (!model.theta.cure_degenerate)
        for (std::size_t j = 0; j < model.theta.cure.names.size(); ++j) {
            const auto& n = model.theta.cure.names[j];
            add_term(n);
            cure_row.cells[n] = {model.theta.cure.alpha[static_cast<Eigen::Index>(j)], "alpha:" + n};
        }
    rows.push_back(cure_row);
    const auto names = spec.covariates.survival_columns();
    for (const auto& n : names) add_term(n);
    for (const auto& t : spec.diagram.transitions) {
        const auto& c = model.theta.cox.at(t.id);
        CoefficientRow r{"survival", t.name(), {}};
        if (c.fitted) {
            if (c.gamma) r.cells["cure"] = {*c.gamma, "gamma:" + t.name()};
            for (std::size_t j = 0; j < names.size(); ++j)
                r.cells[names[j]] = {c.beta[static_cast<Eigen::Index>(j)], "beta:" + t.name() + ":" + names[j]};
        }
        rows.push_back(r);
    }
    return {terms, rows};
}

}  // namespace

void write_coefficients_csv(std::ostream& out, const FittedModel& model, const std::map<std::string, double>& se) {
    auto [terms, rows] = coefficient_rows(model);
    std::vector<std::string> header{"analysis", "transition"};
    for (const auto& t : terms) {
        header.push_back(t);
        header.push_back(t + "_se");
    }
    csv::write_row(out, header);
    for (const auto& r : rows) {
        std::vector<std::string> f{r.analysis, r.transition};
        for (const auto& t : terms) {
            auto it = r.cells.find(t);
            if (it == r.cells.end()) {
                f.insert(f.end(), {"", ""});
                continue;
            }
            f.push_back(csv::format_double(it->second.first));
            auto s = se.find(it->second.second);
            f.push_back(s == se.end() ? "" : csv::format_double(s->second));
        }
        csv::write_row(out, f);
    }
}

void write_coefficients_report(std::ostream& out, const FittedModel& model, const std::map<std::string, double>& se) {
    auto [terms, rows] = coefficient_rows(model);
    out << std::left << std::setw(12) << "analysis" << std::setw(12) << "transition";
    for (const auto& t : terms) out << std::setw(20) << t;
    out << '\n';
    for (const auto& r : rows) {
        out << std::setw(12) << r.analysis << std::setw(12) << r.transition;
        for (const auto& t : terms) {
            auto it = r.cells.find(t);
            std::string cell;
            if (it != r.cells.end()) {
                cell = fixed3(it->second.first);
                auto s = se.find(it->second.second);
                if (s != se.end()) cell += " (" + fixed3(s->second) + ")";
            }
            out << std::setw(20) << cell;
        }
        out << '\n';
    }
}

void write_cure_probabilities_csv(std::ostream& out, const FittedModel& model) {
    csv::write_row(out, {"id", "pi", "posterior_cured", "known_noncured"});
    for (const auto& s : model.subjects)
        csv::write_row(out, {s.id, csv::format_double(s.pi), csv::format_double(s.weight),
                             s.known_noncured ? "1" : "0"});
}

void write_trace_csv(std::ostream& out, const FittedModel& model) {
    csv::write_row(out, {"iteration", "loglik"});
    for (std::size_t r = 0; r < model.loglik_trace.size(); ++r)
        csv::write_row(out, {std::to_string(r + 1), csv::format_double(model.loglik_trace[r])});
}

void write_baseline_csv(std::ostream& out, const FittedModel& model) {
    csv::write_row(out, {"trans", "time", "increment", "cumhaz"});
    for (const auto& t : model.spec.diagram.transitions) {
        const auto& b = model.theta.baseline.at(t.id);
        for (std::size_t j = 0; j < b.times.size(); ++j)
            csv::write_row(out, {std::to_string(t.id), csv::format_double(b.times[j]),
                                 csv::format_double(b.increments[j]), csv::format_double(b.cumulative[j])});
    }
}

}  // namespace mscure
