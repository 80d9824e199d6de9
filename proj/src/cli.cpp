#include "mscure/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <omp.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "mscure/csv.hpp"
#include "mscure/error.hpp"
#include "mscure/fitted_model.hpp"
#include "mscure/inference.hpp"
#include "mscure/prediction.hpp"
#include "mscure/simulate.hpp"

#ifndef MSCURE_VERSION
#define MSCURE_VERSION "0.0.0"
#endif

namespace mscure {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << h;
    return s.str();
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cli", "cannot read " + path);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string now_utc() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Files of one run; removed again unless the run commits.
class Outputs {
public:
    explicit Outputs(const std::string& dir) : dir_(dir) {
        std::error_code ec;
        if (!fs::exists(dir_)) {
            fs::create_directories(dir_, ec);
            if (ec) throw Error("cli", "cannot create output directory " + dir + ": " + ec.message());
            created_ = true;
        } else if (!fs::is_directory(dir_)) {
            throw Error("cli", dir + " exists and is not a directory");
        }
    }
    Outputs(const Outputs&) = delete;
    Outputs& operator=(const Outputs&) = delete;
    ~Outputs() {
        if (committed_) return;
        std::error_code ec;
        for (const auto& p : written_) fs::remove(p, ec);
        if (created_) fs::remove(dir_, ec);
    }

    void write(const std::string& name, const std::string& content) {
        const auto path = dir_ / name;
        written_.push_back(path);
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cli", "cannot write " + path.string());
        out << content;
        if (!out) throw Error("cli", "failed writing " + path.string());
        hashes_[name] = fnv1a_hex(content);
    }
    template <class F>
    void write_with(const std::string& name, F&& f) {
        std::ostringstream s;
        f(s);
        write(name, s.str());
    }

    void commit(json manifest) {
        manifest["outputs"] = hashes_;
        manifest["finished"] = now_utc();
        write("manifest.json", manifest.dump(2) + "\n");
        committed_ = true;
    }

private:
    fs::path dir_;
    bool created_ = false;
    bool committed_ = false;
    std::vector<fs::path> written_;
    std::map<std::string, std::string> hashes_;
};

json manifest_base(const std::string& command, const std::vector<std::string>& args) {
    return {{"tool", "mscure"},
            {"version", MSCURE_VERSION},
            {"command", command},
            {"arguments", args},
            {"started", now_utc()}};
}

json input_hashes(const std::vector<std::string>& paths) {
    json j = json::object();
    for (const auto& p : paths)
        if (!p.empty()) j[p] = hash_file(p);
    return j;
}

json convergence_summary(const FittedModel& m) {
    return {{"converged", m.converged},
            {"iterations", m.iterations},
            {"loglik", m.loglik_trace.empty() ? json(nullptr) : json(m.loglik_trace.back())},
            {"structure_changes", m.structure_changes},
            {"warnings", m.warnings}};
}

int resolve_jobs(int flag) {
    if (flag > 0) return flag;
    if (const char* env = std::getenv("MSCURE_JOBS")) {
        try {
            const int v = std::stoi(env);
            if (v > 0) return v;
        } catch (const std::exception&) {
        }
        throw Error("cli", std::string("MSCURE_JOBS must be a positive integer, got '") + env + "'");
    }
    return 0;
}

// Table with zero-tail flags as em_fit sets them.
ExtendedLongTable prepared_table(const std::vector<WideRecord>& cohort, const FittedModel& model) {
    auto table = build_extended_table(cohort, model.spec);
    if (table.subjects.size() != model.subjects.size())
        throw Error("cli", "data has " + std::to_string(table.subjects.size()) + " subjects, the model was fitted on " +
                               std::to_string(model.subjects.size()));
    for (std::size_t i = 0; i < table.subjects.size(); ++i)
        if (table.subjects[i].id != model.subjects[i].id)
            throw Error("cli", "data subject " + table.subjects[i].id + " does not match model subject " +
                                   model.subjects[i].id);
    if (table.unknown_count() > 0)
        apply_zero_tail(table, model.spec.fit.zero_tail, noncure_tmax(table, model.spec));
    return table;
}

struct Args {
    std::string config, data, out, model, history, truth, method = "information";
    int replicates = 1000, jobs = 0, max_iter = 80, n = 0;
    std::uint64_t seed = 1;
    double epsilon = 0.01, landmark = 0.0;
    std::optional<double> horizon;
    std::vector<std::string> set;
};

int cmd_validate(const Args& a, std::ostream& out) {
    const auto spec = load_model_spec(a.config);
    const auto& c = spec.cure;
    out << "states: " << spec.states.size() << " (absorbing:";
    for (auto s : spec.states.absorbing) out << ' ' << s;
    out << ")\n";
    out << "transitions: " << spec.diagram.size() << "\n";
    out << "split: " << c.split_transitions.size() << "\n";
    out << "non-cure only: " << c.noncure_only_transitions.size() << "\n";
    out << "non-cure states:";
    for (auto s : c.non_cure_states) out << ' ' << s;
    out << "\n\n";
    out << std::left << std::setw(6) << "id" << std::setw(10) << "from->to" << std::setw(14) << "kind" << "note\n";
    for (const auto& t : spec.diagram.transitions) {
        out << std::setw(6) << t.id << std::setw(10) << t.name() << std::setw(14)
            << (c.is_split(t.id) ? "split" : "non-cure only") << (c.is_frozen(t.id) ? "fitted outside EM" : "")
            << "\n";
    }
    out << "\ncure design: ";
    for (const auto& n : spec.covariates.cure_columns()) out << n << "  ";
    out << "\nsurvival design: ";
    for (const auto& n : spec.covariates.survival_columns()) out << n << "  ";
    out << "\nzero tail: " << to_string(spec.fit.zero_tail) << "\n";
    return 0;
}

int cmd_prep(const Args& a, const std::vector<std::string>& argv) {
    const auto spec = load_model_spec(a.config);
    const auto cohort = read_wide_csv(a.data, spec);
    const auto table = build_extended_table(cohort, spec);
    Outputs o(a.out);
    o.write_with("extended.csv", [&](std::ostream& s) { write_extended_csv(s, table, spec); });
    o.write_with("q2.csv", [&](std::ostream& s) { write_q2_csv(s, table, spec); });
    auto m = manifest_base("prep", argv);
    m["config"] = a.config;
    m["inputs"] = input_hashes({a.config, a.data});
    m["seed"] = spec.fit.seed;
    m["summary"] = {{"subjects", table.subjects.size()}, {"rows", table.rows.size()},
                    {"unknown_status", table.unknown_count()}};
    o.commit(std::move(m));
    return 0;
}

int cmd_fit(const Args& a, const std::vector<std::string>& argv, std::ostream& out) {
    const auto spec = load_model_spec(a.config);
    const auto cohort = read_wide_csv(a.data, spec);
    const auto fit = em_fit(cohort, spec);
    const auto& model = fit.model;
    Outputs o(a.out);
    o.write("model.json", to_json(model).dump(2) + "\n");
    o.write_with("coefficients.csv", [&](std::ostream& s) { write_coefficients_csv(s, model); });
    o.write_with("coefficients.txt", [&](std::ostream& s) { write_coefficients_report(s, model); });
    o.write_with("cure_probabilities.csv", [&](std::ostream& s) { write_cure_probabilities_csv(s, model); });
    o.write_with("trace.csv", [&](std::ostream& s) { write_trace_csv(s, model); });
    o.write_with("baseline.csv", [&](std::ostream& s) { write_baseline_csv(s, model); });
    auto m = manifest_base("fit", argv);
    m["config"] = a.config;
    m["inputs"] = input_hashes({a.config, a.data});
    m["seed"] = spec.fit.seed;
    m["convergence"] = convergence_summary(model);
    o.commit(std::move(m));
    out << (model.converged ? "converged" : "not converged") << " after " << model.iterations
        << " iterations, log-likelihood " << csv::format_double(model.loglik_trace.back()) << "\n";
    for (const auto& w : model.warnings) out << "warning: " << w << "\n";
    return 0;
}

int cmd_se(const Args& a, const std::vector<std::string>& argv, std::ostream& out) {
    const auto model = load_fitted_model(a.model);
    const auto cohort = read_wide_csv(a.data, model.spec);
    std::map<std::string, double> se;
    std::vector<std::string> names;
    for (const auto& p : regression_parameters(model.theta, model.spec)) names.push_back(p.name);
    json summary;
    std::ostringstream table;
    csv::write_row(table, {"parameter", "estimate", "se", "method", "replicates"});
    const auto params = regression_parameters(model.theta, model.spec);

    if (a.method == "information") {
        const auto info = oakes_information(prepared_table(cohort, model), model.theta, model.spec);
        for (std::size_t k = 0; k < info.names.size(); ++k) se[info.names[k]] = info.se[static_cast<Eigen::Index>(k)];
        for (const auto& p : params)
            csv::write_row(table, {p.name, csv::format_double(p.value), csv::format_double(se.at(p.name)),
                                   "information", ""});
        summary = {{"method", "information"}, {"parameters", info.index.size()}};
    } else if (a.method == "bootstrap") {
        BootstrapOptions bo;
        bo.replicates = a.replicates;
        bo.seed = a.seed;
        bo.epsilon = a.epsilon;
        bo.max_iter = a.max_iter;
        bo.jobs = resolve_jobs(a.jobs);
        const auto b = bootstrap_se(cohort, model.spec, model, bo);
        for (std::size_t k = 0; k < b.names.size(); ++k) {
            const auto j = static_cast<Eigen::Index>(k);
            if (!std::isnan(b.se[j])) se[b.names[k]] = b.se[j];
            csv::write_row(table, {b.names[k], csv::format_double(params[k].value), csv::format_double(b.se[j]),
                                   "bootstrap", std::to_string(b.available[j])});
        }
        summary = {{"method", "bootstrap"}, {"replicates", b.replicates}, {"failures", b.failures},
                   {"capped", b.capped},    {"epsilon", bo.epsilon},      {"max_iter", bo.max_iter},
                   {"failure_messages", b.failure_messages}};
        out << b.replicates - b.failures << " of " << b.replicates << " replicates completed, " << b.capped
            << " stopped at the iteration cap\n";
    } else {
        throw Error("cli", "--method must be 'bootstrap' or 'information'");
    }

    Outputs o(a.out);
    o.write_with("coefficients.csv", [&](std::ostream& s) { write_coefficients_csv(s, model, se); });
    o.write_with("coefficients.txt", [&](std::ostream& s) { write_coefficients_report(s, model, se); });
    o.write("se.csv", table.str());
    auto m = manifest_base("se", argv);
    m["config"] = a.model;
    m["inputs"] = input_hashes({a.model, a.data});
    m["seed"] = a.seed;
    m["summary"] = summary;
    o.commit(std::move(m));
    write_coefficients_report(out, model, se);
    return 0;
}

int cmd_predict(const Args& a, const std::vector<std::string>& argv, std::ostream& out) {
    const auto model = load_fitted_model(a.model);
    History h;
    if (!a.history.empty()) h = load_history(a.history, model.spec);
    h.landmark = a.landmark;
    for (const auto& kv : a.set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error("cli", "--set expects name=value, got '" + kv + "'");
        h.covariates[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    h = normalize_history(std::move(h), model.spec);
    double horizon = a.horizon.value_or(0.0);
    if (!a.horizon)
        for (const auto& steps : model.theta.baseline.by_transition)
            if (!steps.times.empty()) horizon = std::max(horizon, steps.times.back());
    horizon = std::max(horizon, h.landmark);
    const auto curve = dynamic_predict(h, model, prediction_grid(model, h.landmark, horizon));
    Outputs o(a.out);
    o.write_with("prediction.csv", [&](std::ostream& s) { write_prediction_csv(s, curve, model.spec); });
    auto m = manifest_base("predict", argv);
    m["config"] = a.model;
    m["inputs"] = input_hashes({a.model, a.history});
    m["summary"] = {{"landmark", h.landmark}, {"horizon", horizon}, {"state", curve.state},
                    {"p_cured", curve.p_cured}, {"grid_points", curve.times.size()}};
    o.commit(std::move(m));
    out << "P(cured | history) = " << csv::format_double(curve.p_cured) << "\nstate occupancy at "
        << csv::format_double(curve.times.back()) << ":";
    for (Eigen::Index s = 0; s < curve.probability.cols(); ++s)
        out << ' ' << s + 1 << '=' << std::fixed << std::setprecision(4)
            << curve.probability(curve.probability.rows() - 1, s);
    out << std::defaultfloat << "\n";
    return 0;
}

int cmd_simulate(const Args& a, const std::vector<std::string>& argv) {
    if (a.n < 1) throw Error("cli", "--n must be at least 1");
    const auto truth = load_true_model(a.truth);
    std::vector<int> cured;
    const auto cohort = simulate_cohort(truth, static_cast<std::size_t>(a.n), a.seed, &cured);
    Outputs o(a.out);
    o.write_with("cohort.csv",
                 [&](std::ostream& s) { write_wide_csv(s, cohort, truth.spec, covariate_order(truth)); });
    o.write_with("cured.csv", [&](std::ostream& s) {
        csv::write_row(s, {"id", "cured"});
        for (std::size_t i = 0; i < cohort.size(); ++i) csv::write_row(s, {cohort[i].id, std::to_string(cured[i])});
    });
    auto m = manifest_base("simulate", argv);
    m["config"] = a.truth;
    m["inputs"] = input_hashes({a.truth});
    m["seed"] = a.seed;
    m["summary"] = {{"subjects", a.n}, {"cured", std::count(cured.begin(), cured.end(), 1)}};
    o.commit(std::move(m));
    return 0;
}

void error_document(std::ostream& err, const std::string& module, const std::string& message) {
    err << json{{"error", {{"module", module}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

std::string hash_file(const std::string& path) { return fnv1a_hex(read_file(path)); }

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multistate cure model fitting via EM"};
    app.name("mscure");
    app.set_version_flag("--version", MSCURE_VERSION);
    app.require_subcommand(1);
    Args a;

    auto* validate = app.add_subcommand("validate", "Check a model configuration");
    validate->add_option("--config", a.config, "Model configuration (JSON)")->required();

    auto* prep = app.add_subcommand("prep", "Write the extended long table and the cure table");
    prep->add_option("--config", a.config)->required();
    prep->add_option("--data", a.data, "Wide-format CSV")->required();
    prep->add_option("--out", a.out, "Output directory")->required();

    auto* fit = app.add_subcommand("fit", "Fit the model by EM");
    fit->add_option("--config", a.config)->required();
    fit->add_option("--data", a.data)->required();
    fit->add_option("--out", a.out)->required();

    auto* se = app.add_subcommand("se", "Standard errors for a fitted model");
    se->add_option("--model", a.model, "model.json written by fit")->required();
    se->add_option("--data", a.data, "The data the model was fitted on")->required();
    se->add_option("--out", a.out)->required();
    se->add_option("--method", a.method, "bootstrap or information")
        ->check(CLI::IsMember({"bootstrap", "information"}));
    se->add_option("--B", a.replicates, "Bootstrap replicates")->check(CLI::PositiveNumber);
    se->add_option("--seed", a.seed);
    se->add_option("--jobs", a.jobs, "Parallel replicates (default: MSCURE_JOBS or all cores)");
    se->add_option("--epsilon", a.epsilon, "EM tolerance per replicate");
    se->add_option("--max-iter", a.max_iter, "EM iteration cap per replicate")->check(CLI::PositiveNumber);

    auto* predict = app.add_subcommand("predict", "Dynamic prediction of state occupancy");
    predict->add_option("--model", a.model)->required();
    predict->add_option("--history", a.history, "History (JSON: visits, covariates)");
    predict->add_option("--landmark", a.landmark)->check(CLI::NonNegativeNumber);
    predict->add_option("--horizon", a.horizon);
    predict->add_option("--set", a.set, "Covariate value name=value");
    predict->add_option("--out", a.out)->required();

    auto* simulate = app.add_subcommand("simulate", "Simulate a cohort from a true model");
    simulate->add_option("--truth", a.truth)->required();
    simulate->add_option("--n", a.n)->required();
    simulate->add_option("--seed", a.seed);
    simulate->add_option("--out", a.out)->required();

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << MSCURE_VERSION << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        error_document(err, "cli", e.what());
        return 2;
    }

    try {
        if (const int jobs = resolve_jobs(a.jobs); jobs > 0) omp_set_num_threads(jobs);
        if (validate->parsed()) return cmd_validate(a, out);
        if (prep->parsed()) return cmd_prep(a, args);
        if (fit->parsed()) return cmd_fit(a, args, out);
        if (se->parsed()) return cmd_se(a, args, out);
        if (predict->parsed()) return cmd_predict(a, args, out);
        if (simulate->parsed()) return cmd_simulate(a, args);
    } catch (const Error& e) {
        error_document(err, e.module(), e.what());
        return 1;
    } catch (const std::exception& e) {
        error_document(err, "cli", e.what());
        return 1;
    }
    return 1;
}

}  // namespace mscure
