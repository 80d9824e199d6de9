#pragma once

#include <iosfwd>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mscure/model_spec.hpp"

namespace mscure {

struct EventField {
    double time = 0.0;
    int status = 0;

    bool operator==(const EventField&) const = default;
};

/// One subject in wide format: per non-initial state an event time/status pair.
struct WideRecord {
    std::string id;
    std::map<StateId, EventField> events;
    CovariateValues covariates;

    bool operator==(const WideRecord&) const = default;
};

struct StateVisit {
    StateId state = 0;
    double entry = 0.0;

    bool operator==(const StateVisit&) const = default;
};

/// The walk a subject took on the diagram, ending either in an absorbing
/// state (entered at `end_time`) or censored at `end_time`.
struct ObservedPath {
    std::vector<StateVisit> visits;
    double end_time = 0.0;
    bool absorbed = false;
};

struct LongRow {
    std::string id;
    StateId from = 0;
    StateId to = 0;
    int trans = 0;
    double tstart = 0.0;
    double tstop = 0.0;
    int status = 0;
};

struct ExtendedLongRow {
    std::size_t subject = 0;  // index into ExtendedLongTable::subjects
    StateId from = 0;
    StateId to = 0;
    int trans = 0;
    int cure = 0;  // hypothetical baseline cure status of this row
    double tstart = 0.0;
    double tstop = 0.0;
    int status = 0;

    // Analysis columns, rewritten by every E-step.
    double cum_haz = 0.0;
    double hazard = 0.0;
    double log_likelihood = 0.0;
    double pi = 0.5;
    double weight = 0.5;

    double likelihood() const;
};

struct Subject {
    std::string id;
    bool known_noncured = false;
    std::size_t first_row = 0;
    std::size_t end_row = 0;
    Eigen::VectorXd z_cure;      // includes intercept
    Eigen::VectorXd z_survival;
    CovariateValues covariates;
    /// Latest time the subject was at risk of entering a non-cure state, or -inf.
    double noncure_followup = -std::numeric_limits<double>::infinity();
    double weight = 0.5;  // posterior P(cured | data); 0 for known non-cured
    double pi = 0.5;
    /// Cure status imposed by a zero-tail constraint: -1 none, else 0 or 1.
    int forced = -1;
};

/// Risk rows for all subjects, grouped contiguously per subject.
struct ExtendedLongTable {
    std::vector<Subject> subjects;
    std::vector<ExtendedLongRow> rows;
    std::vector<std::string> cure_columns;
    std::vector<std::string> survival_columns;

    std::size_t unknown_count() const;
};

struct CureTableRow {
    std::string id;
    int cure = 0;
    double weight = 0.0;
    Eigen::VectorXd z;  // cure design row (with intercept)
};

ObservedPath observed_path(const WideRecord& wide, const ModelSpec& spec);
bool determine_known_noncured(const WideRecord& wide, const ModelSpec& spec);
bool path_enters_noncure(const ObservedPath& path, const ModelSpec& spec);

std::vector<LongRow> path_to_long(const std::string& id, const ObservedPath& path, const ModelSpec& spec);
std::vector<LongRow> wide_to_long(const WideRecord& wide, const ModelSpec& spec);

/// Canonical wide encoding of long rows: visited states carry their entry
/// time with status 1, everything else the subject's last time with status 0.
WideRecord long_to_wide(const std::vector<LongRow>& rows, const ModelSpec& spec, CovariateValues covariates = {});

/// Rows of one subject in extended form; `subject` is left at 0.
std::vector<ExtendedLongRow> long_to_extended(const std::vector<LongRow>& rows, bool known_noncured,
                                              const ModelSpec& spec);

ExtendedLongTable build_extended_table(const std::vector<WideRecord>& cohort, const ModelSpec& spec);

std::vector<CureTableRow> build_q2_table(const std::vector<Subject>& subjects);

/// Writes `w` to the subject and its rows: cured rows get `w`, others `1 - w`.
void set_subject_weight(ExtendedLongTable& table, std::size_t subject, double w);

std::vector<WideRecord> read_wide_csv(const std::string& path, const ModelSpec& spec);
std::vector<WideRecord> read_wide_csv(std::istream& in, const ModelSpec& spec);
void write_wide_csv(std::ostream& out, const std::vector<WideRecord>& cohort, const ModelSpec& spec,
                    const std::vector<std::string>& covariate_order);

/// Extended table with the `trans` label rendered as `<id>` or `<id>.2`.
void write_extended_csv(std::ostream& out, const ExtendedLongTable& table, const ModelSpec& spec);
void write_q2_csv(std::ostream& out, const ExtendedLongTable& table, const ModelSpec& spec);

std::string transition_label(int trans, int cure);

}  // namespace mscure
