#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

namespace mscure {

using StateId = int;

/// Raw covariate values of one subject, keyed by covariate name.
using CovariateValues = std::map<std::string, std::string>;

struct StateSpace {
    std::vector<StateId> states;
    std::vector<StateId> absorbing;
    std::map<StateId, std::string> labels;

    int size() const { return static_cast<int>(states.size()); }
    bool contains(StateId s) const { return s >= 1 && s <= size(); }
    bool is_absorbing(StateId s) const;
    std::string label(StateId s) const;

    bool operator==(const StateSpace&) const = default;
};

struct Transition {
    int id = 0;  // 1-based, order of declaration
    StateId from = 0;
    StateId to = 0;

    std::string name() const { return std::to_string(from) + "->" + std::to_string(to); }
    bool operator==(const Transition&) const = default;
};

struct TransitionDiagram {
    std::vector<Transition> transitions;

    int size() const { return static_cast<int>(transitions.size()); }
    /// Transition by 1-based id.
    const Transition& at(int id) const { return transitions.at(static_cast<std::size_t>(id - 1)); }
    std::optional<int> find(StateId from, StateId to) const;
    std::vector<int> outgoing(StateId from) const;
    bool has_cycle(int n_states) const;

    bool operator==(const TransitionDiagram&) const = default;
};

enum class TransitionKind { split, noncure_only };

struct CureStructure {
    std::vector<StateId> non_cure_states;
    std::vector<int> split_transitions;        // ids
    std::vector<int> noncure_only_transitions; // ids
    std::vector<TransitionKind> kind;          // indexed by id - 1
    std::vector<bool> frozen;                  // leaves a non-cure state: fitted once, outside EM

    bool is_non_cure(StateId s) const;
    bool is_split(int transition_id) const {
        return kind.at(static_cast<std::size_t>(transition_id - 1)) == TransitionKind::split;
    }
    bool is_frozen(int transition_id) const { return frozen.at(static_cast<std::size_t>(transition_id - 1)); }

    bool operator==(const CureStructure&) const = default;
};

struct CovariateEncoding {
    enum class Type { numeric, factor };
    Type type = Type::numeric;
    std::vector<std::string> levels;  // factor only
    std::string reference;            // factor only, excluded from dummies

    bool operator==(const CovariateEncoding&) const = default;
};

struct CovariateSpec {
    std::vector<std::string> cure;
    std::vector<std::string> survival;
    std::map<std::string, CovariateEncoding> encodings;

    /// Design column names; the cure design always starts with the intercept.
    std::vector<std::string> cure_columns() const;
    std::vector<std::string> survival_columns() const;

    Eigen::VectorXd encode_cure(const CovariateValues& values) const;
    Eigen::VectorXd encode_survival(const CovariateValues& values) const;

    bool operator==(const CovariateSpec&) const = default;

private:
    std::vector<std::string> columns(const std::vector<std::string>& names) const;
    Eigen::VectorXd encode(const std::vector<std::string>& names, const CovariateValues& values,
                           bool intercept) const;
};

inline constexpr const char* kInterceptName = "(Intercept)";

enum class ZeroTail { off, cure_censored_after_tmax, noncure_censored_after_tmax };

struct FitConfig {
    double em_epsilon = 1e-4;
    int em_max_iter = 500;
    double inner_tol = 1e-9;
    int inner_max_iter = 50;
    ZeroTail zero_tail = ZeroTail::off;
    double gamma_drop_threshold = 10.0;
    std::uint64_t seed = 1;

    bool operator==(const FitConfig&) const = default;
};

/// How wide-format columns map onto states: each non-initial state has an
/// event time column `<name>` and a status column `<name><status_suffix>`.
struct WideSchema {
    std::string id_column = "id";
    StateId initial_state = 1;
    std::map<StateId, std::string> event_columns;
    std::string status_suffix = ".s";

    bool operator==(const WideSchema&) const = default;
};

struct ModelSpec {
    StateSpace states;
    TransitionDiagram diagram;
    CureStructure cure;
    CovariateSpec covariates;
    FitConfig fit;
    WideSchema wide;

    bool operator==(const ModelSpec&) const = default;
};

ModelSpec validate_model_spec(const nlohmann::json& raw);
ModelSpec load_model_spec(const std::string& path);
nlohmann::json to_json(const ModelSpec& spec);

std::string to_string(ZeroTail z);
ZeroTail zero_tail_from_string(const std::string& s);

}  // namespace mscure
