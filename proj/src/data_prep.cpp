#include "mscure/data_prep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <set>

#include "mscure/csv.hpp"
#include "mscure/error.hpp"

namespace mscure {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw Error("data-prep", msg); }

std::vector<std::string> covariate_union(const ModelSpec& spec) {
    std::vector<std::string> out = spec.covariates.cure;
    for (const auto& name : spec.covariates.survival)
        if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    return out;
}

}  // namespace

double ExtendedLongRow::likelihood() const { return std::exp(log_likelihood); }

std::size_t ExtendedLongTable::unknown_count() const {
    return static_cast<std::size_t>(
        std::count_if(subjects.begin(), subjects.end(), [](const Subject& s) { return !s.known_noncured; }));
}

ObservedPath observed_path(const WideRecord& wide, const ModelSpec& spec) {
    const auto& schema = spec.wide;
    double follow_up = 0.0;
    for (const auto& [state, name] : schema.event_columns) {
        auto it = wide.events.find(state);
        if (it == wide.events.end())
            fail("subject " + wide.id + ": no event field for state " + std::to_string(state));
        const auto& ev = it->second;
        if (!std::isfinite(ev.time) || ev.time < 0)
            fail("subject " + wide.id + ": invalid time for '" + name + "'");
        if (ev.status != 0 && ev.status != 1)
            fail("subject " + wide.id + ": status of '" + name + "' must be 0 or 1");
        follow_up = std::max(follow_up, ev.time);
    }

    ObservedPath path;
    std::set<StateId> visited{schema.initial_state};
    path.visits.push_back({schema.initial_state, 0.0});
    while (true) {
        const auto current = path.visits.back();
        auto out = spec.diagram.outgoing(current.state);
        if (out.empty()) {
            path.absorbed = true;
            path.end_time = current.entry;
            break;
        }
        std::optional<std::pair<double, StateId>> next;
        for (int id : out) {
            StateId to = spec.diagram.at(id).to;
            const auto& ev = wide.events.at(to);
            if (ev.status != 1 || ev.time < current.entry || visited.count(to)) continue;
            std::pair<double, StateId> cand{ev.time, to};
            if (!next || cand < *next) next = cand;
        }
        if (!next) {
            path.end_time = follow_up;
            break;
        }
        visited.insert(next->second);
        path.visits.push_back({next->second, next->first});
    }

    const double last_transition = path.visits.back().entry;
    for (const auto& [state, ev] : wide.events)
        if (ev.status == 1 && !visited.count(state) && ev.time > last_transition)
            fail("subject " + wide.id + ": event into state " + std::to_string(state) + " at " +
                 csv::format_double(ev.time) + " cannot be reached from state " +
                 std::to_string(path.visits.back().state) + " on the transition diagram");
    return path;
}

bool path_enters_noncure(const ObservedPath& path, const ModelSpec& spec) {
    return std::any_of(path.visits.begin(), path.visits.end(),
                       [&](const StateVisit& v) { return spec.cure.is_non_cure(v.state); });
}

bool determine_known_noncured(const WideRecord& wide, const ModelSpec& spec) {
    return path_enters_noncure(observed_path(wide, spec), spec);
}

std::vector<LongRow> path_to_long(const std::string& id, const ObservedPath& path, const ModelSpec& spec) {
    std::vector<LongRow> rows;
    for (std::size_t i = 0; i < path.visits.size(); ++i) {
        const auto& visit = path.visits[i];
        const bool has_next = i + 1 < path.visits.size();
        const double exit = has_next ? path.visits[i + 1].entry : path.end_time;
        if (!(exit > visit.entry)) continue;  // zero-length sojourn
        for (int tid : spec.diagram.outgoing(visit.state)) {
            const auto& t = spec.diagram.at(tid);
            LongRow row;
            row.id = id;
            row.from = t.from;
            row.to = t.to;
            row.trans = t.id;
            row.tstart = visit.entry;
            row.tstop = exit;
            row.status = has_next && path.visits[i + 1].state == t.to ? 1 : 0;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::vector<LongRow> wide_to_long(const WideRecord& wide, const ModelSpec& spec) {
    return path_to_long(wide.id, observed_path(wide, spec), spec);
}

WideRecord long_to_wide(const std::vector<LongRow>& rows, const ModelSpec& spec, CovariateValues covariates) {
    WideRecord wide;
    wide.covariates = std::move(covariates);
    double end = 0.0;
    for (const auto& r : rows) {
        if (wide.id.empty()) wide.id = r.id;
        end = std::max(end, r.tstop);
    }
    for (const auto& [state, name] : spec.wide.event_columns) wide.events[state] = {end, 0};
    for (const auto& r : rows)
        if (r.status == 1) wide.events[r.to] = {r.tstop, 1};
    return wide;
}

std::vector<ExtendedLongRow> long_to_extended(const std::vector<LongRow>& rows, bool known_noncured,
                                              const ModelSpec& spec) {
    std::vector<ExtendedLongRow> out;
    out.reserve(rows.size() * 2);
    for (const auto& r : rows) {
        ExtendedLongRow e;
        e.from = r.from;
        e.to = r.to;
        e.trans = r.trans;
        e.tstart = r.tstart;
        e.tstop = r.tstop;
        e.status = r.status;
        if (known_noncured) {
            e.cure = 0;
            e.weight = 1.0;
            out.push_back(e);
            continue;
        }
        if (!spec.cure.is_split(r.trans) && (r.status == 1 || spec.cure.is_non_cure(r.from)))
            fail("subject " + r.id + " has unknown cure status but an observed path through transition " +
                 spec.diagram.at(r.trans).name());
        e.cure = 0;
        e.weight = 0.5;
        out.push_back(e);
        if (spec.cure.is_split(r.trans)) {
            e.cure = 1;
            out.push_back(e);
        }
    }
    return out;
}

ExtendedLongTable build_extended_table(const std::vector<WideRecord>& cohort, const ModelSpec& spec) {
    ExtendedLongTable table;
    table.cure_columns = spec.covariates.cure_columns();
    table.survival_columns = spec.covariates.survival_columns();
    table.subjects.reserve(cohort.size());
    std::set<std::string> ids;
    for (const auto& wide : cohort) {
        if (!ids.insert(wide.id).second) fail("duplicate subject id '" + wide.id + "'");
        auto path = observed_path(wide, spec);
        Subject subject;
        subject.id = wide.id;
        subject.known_noncured = path_enters_noncure(path, spec);
        subject.covariates = wide.covariates;
        subject.z_cure = spec.covariates.encode_cure(wide.covariates);
        subject.z_survival = spec.covariates.encode_survival(wide.covariates);
        subject.weight = subject.known_noncured ? 0.0 : 0.5;
        subject.first_row = table.rows.size();
        auto rows = long_to_extended(path_to_long(wide.id, path, spec), subject.known_noncured, spec);
        const std::size_t index = table.subjects.size();
        for (auto& r : rows) {
            r.subject = index;
            if (spec.cure.is_non_cure(r.to))
                subject.noncure_followup = std::max(subject.noncure_followup, r.tstop);
            table.rows.push_back(r);
        }
        subject.end_row = table.rows.size();
        table.subjects.push_back(std::move(subject));
    }
    return table;
}

std::vector<CureTableRow> build_q2_table(const std::vector<Subject>& subjects) {
    std::vector<CureTableRow> out;
    out.reserve(subjects.size() * 2);
    for (const auto& s : subjects) {
        if (s.known_noncured) {
            out.push_back({s.id, 0, 1.0, s.z_cure});
            continue;
        }
        if (!(s.weight >= 0.0 && s.weight <= 1.0))
            fail("subject " + s.id + ": weight " + csv::format_double(s.weight) + " outside [0, 1]");
        out.push_back({s.id, 0, 1.0 - s.weight, s.z_cure});
        out.push_back({s.id, 1, s.weight, s.z_cure});
    }
    return out;
}

void set_subject_weight(ExtendedLongTable& table, std::size_t subject, double w) {
    auto& s = table.subjects[subject];
    if (s.known_noncured) return;
    s.weight = w;
    for (std::size_t r = s.first_row; r < s.end_row; ++r) {
        auto& row = table.rows[r];
        row.weight = row.cure == 1 ? w : 1.0 - w;
    }
}

std::vector<WideRecord> read_wide_csv(std::istream& in, const ModelSpec& spec) {
    auto table = csv::read(in);
    auto need = [&](const std::string& name) {
        int c = table.column(name);
        if (c < 0) fail("wide data has no column '" + name + "'");
        return static_cast<std::size_t>(c);
    };
    const auto id_col = need(spec.wide.id_column);
    std::vector<std::tuple<StateId, std::size_t, std::size_t>> event_cols;
    for (const auto& [state, name] : spec.wide.event_columns)
        event_cols.emplace_back(state, need(name), need(name + spec.wide.status_suffix));
    std::vector<std::pair<std::string, std::size_t>> cov_cols;
    for (const auto& name : covariate_union(spec)) cov_cols.emplace_back(name, need(name));

    std::vector<WideRecord> cohort;
    cohort.reserve(table.rows.size());
    for (const auto& row : table.rows) {
        WideRecord w;
        w.id = row[id_col];
        for (const auto& [state, tc, sc] : event_cols) {
            EventField ev;
            ev.time = csv::parse_double(row[tc], table.header[tc] + " of subject " + w.id);
            double status = csv::parse_double(row[sc], table.header[sc] + " of subject " + w.id);
            if (status != 0.0 && status != 1.0)
                fail("subject " + w.id + ": status column '" + table.header[sc] + "' must be 0 or 1");
            ev.status = static_cast<int>(status);
            w.events[state] = ev;
        }
        for (const auto& [name, c] : cov_cols) w.covariates[name] = row[c];
        cohort.push_back(std::move(w));
    }
    return cohort;
}

std::vector<WideRecord> read_wide_csv(const std::string& path, const ModelSpec& spec) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open data file '" + path + "'");
    return read_wide_csv(in, spec);
}

void write_wide_csv(std::ostream& out, const std::vector<WideRecord>& cohort, const ModelSpec& spec,
                    const std::vector<std::string>& covariate_order) {
    std::vector<std::string> header{spec.wide.id_column};
    for (const auto& [state, name] : spec.wide.event_columns) {
        header.push_back(name);
        header.push_back(name + spec.wide.status_suffix);
    }
    header.insert(header.end(), covariate_order.begin(), covariate_order.end());
    csv::write_row(out, header);
    for (const auto& w : cohort) {
        std::vector<std::string> fields{w.id};
        for (const auto& [state, name] : spec.wide.event_columns) {
            const auto& ev = w.events.at(state);
            fields.push_back(csv::format_double(ev.time));
            fields.push_back(std::to_string(ev.status));
        }
        for (const auto& name : covariate_order) fields.push_back(w.covariates.at(name));
        csv::write_row(out, fields);
    }
}

std::string transition_label(int trans, int cure) {
    return cure == 1 ? std::to_string(trans) + ".2" : std::to_string(trans);
}

void write_extended_csv(std::ostream& out, const ExtendedLongTable& table, const ModelSpec& spec) {
    const auto covs = covariate_union(spec);
    std::vector<std::string> header{"id",     "from",   "to",     "trans",      "cure", "Tstart", "Tstop",
                                    "status", "cumHaz", "hazard", "likelihood", "pi",   "weight"};
    header.insert(header.end(), covs.begin(), covs.end());
    csv::write_row(out, header);
    for (const auto& r : table.rows) {
        const auto& s = table.subjects[r.subject];
        std::vector<std::string> f{s.id,
                                   std::to_string(r.from),
                                   std::to_string(r.to),
                                   transition_label(r.trans, r.cure),
                                   std::to_string(r.cure),
                                   csv::format_double(r.tstart),
                                   csv::format_double(r.tstop),
                                   std::to_string(r.status),
                                   csv::format_double(r.cum_haz),
                                   r.status == 1 ? csv::format_double(r.hazard) : std::string(),
                                   csv::format_double(r.likelihood()),
                                   csv::format_double(r.pi),
                                   csv::format_double(r.weight)};
        for (const auto& name : covs) f.push_back(s.covariates.at(name));
        csv::write_row(out, f);
    }
}

void write_q2_csv(std::ostream& out, const ExtendedLongTable& table, const ModelSpec& spec) {
    std::vector<std::string> header{"id", "weight", "cure"};
    header.insert(header.end(), spec.covariates.cure.begin(), spec.covariates.cure.end());
    csv::write_row(out, header);
    std::size_t i = 0;
    for (const auto& row : build_q2_table(table.subjects)) {
        while (table.subjects[i].id != row.id) ++i;
        std::vector<std::string> f{row.id, csv::format_double(row.weight), std::to_string(row.cure)};
        for (const auto& name : spec.covariates.cure) f.push_back(table.subjects[i].covariates.at(name));
        csv::write_row(out, f);
    }
}

}  // namespace mscure
