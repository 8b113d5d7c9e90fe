#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// Core domain types: state spaces, event paths, reported events with
// adjudication tracks, subject records, and shared configuration.
// All types are immutable after construction and safe to share across threads.

namespace msdelay {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

using Transition = std::pair<int, int>;

/// Finite state space with an explicit set of allowed transitions (j,k), j != k.
class StateSpace {
  public:
    StateSpace() : StateSpace(2, {"state1", "state2"}, {}) {}  // placeholder space

    StateSpace(int num_states, std::vector<std::string> labels,
               std::vector<Transition> allowed_transitions)
        : num_states_(num_states), labels_(std::move(labels)),
          transitions_(std::move(allowed_transitions)) {
        if (num_states_ < 2) throw ConfigError("state space needs at least 2 states");
        if (static_cast<int>(labels_.size()) != num_states_)
            throw ConfigError("one label per state required");
        for (std::size_t i = 0; i < labels_.size(); ++i)
            for (std::size_t l = i + 1; l < labels_.size(); ++l)
                if (labels_[i] == labels_[l]) throw ConfigError("state labels must be unique");
        std::sort(transitions_.begin(), transitions_.end());
        transitions_.erase(std::unique(transitions_.begin(), transitions_.end()),
                           transitions_.end());
        for (const auto& [j, k] : transitions_) {
            if (j < 1 || j > num_states_ || k < 1 || k > num_states_ || j == k)
                throw ConfigError("transition (" + std::to_string(j) + "," + std::to_string(k) +
                                  ") outside state space");
        }
    }

    int num_states() const { return num_states_; }
    const std::vector<std::string>& labels() const { return labels_; }
    const std::vector<Transition>& transitions() const { return transitions_; }

    bool allows(int j, int k) const {
        return std::binary_search(transitions_.begin(), transitions_.end(), Transition{j, k});
    }

    std::vector<int> exits_from(int j) const {
        std::vector<int> out;
        for (const auto& [a, b] : transitions_)
            if (a == j) out.push_back(b);
        return out;
    }

    bool is_absorbing(int j) const { return exits_from(j).empty(); }

    /// Topological order of states under the transition relation; empty if cyclic.
    std::vector<int> topological_order() const {
        std::vector<int> indeg(num_states_ + 1, 0);
        for (const auto& [j, k] : transitions_) indeg[k]++;
        std::vector<int> queue, order;
        for (int s = 1; s <= num_states_; ++s)
            if (indeg[s] == 0) queue.push_back(s);
        while (!queue.empty()) {
            int s = queue.back();
            queue.pop_back();
            order.push_back(s);
            for (const auto& [j, k] : transitions_)
                if (j == s && --indeg[k] == 0) queue.push_back(k);
        }
        if (static_cast<int>(order.size()) != num_states_) return {};
        return order;
    }

    bool acyclic() const { return !topological_order().empty(); }

  private:
    int num_states_;
    std::vector<std::string> labels_;
    std::vector<Transition> transitions_;
};

struct Jump {
    double time = 0.0;
    int mark = 0;
};

/// A realized path of the multistate process: initial state plus ordered jumps.
/// State lookups use the left-limit convention: a jump at time t takes effect
/// strictly after t.
class EventPath {
  public:
    EventPath() = default;
    EventPath(int initial_state, std::vector<Jump> jumps)
        : initial_state_(initial_state), jumps_(std::move(jumps)) {
        if (initial_state_ < 1) throw DataError("initial state must be >= 1");
        int prev_mark = initial_state_;
        double prev_time = -1.0;
        for (const auto& j : jumps_) {
            if (j.time < 0.0) throw DataError("jump times must be nonnegative");
            if (j.time <= prev_time) throw DataError("jump times must be strictly increasing");
            if (j.mark == prev_mark) throw DataError("self-transitions are not allowed");
            prev_time = j.time;
            prev_mark = j.mark;
        }
    }

    int initial_state() const { return initial_state_; }
    const std::vector<Jump>& jumps() const { return jumps_; }

    /// Occupied state just before t (jumps at exactly t not yet counted).
    int state_at(double t) const {
        int s = initial_state_;
        for (const auto& j : jumps_) {
            if (j.time < t) s = j.mark;
            else break;
        }
        return s;
    }

    /// Time the currently occupied state (just before t) was entered; 0 when
    /// no jump has occurred strictly before t.
    double segment_start(double t) const {
        double s = 0.0;
        for (const auto& j : jumps_) {
            if (j.time < t) s = j.time;
            else break;
        }
        return s;
    }

    /// D(t-): duration since the latest jump strictly before t (or since 0).
    double duration_at(double t) const { return t - segment_start(t); }

    std::pair<int, double> state_and_duration(double t) const {
        return {state_at(t), duration_at(t)};
    }

    /// Time of the jump that created the current segment, if any.
    std::optional<double> prior_jump_time(double t) const {
        std::optional<double> s;
        for (const auto& j : jumps_) {
            if (j.time < t) s = j.time;
            else break;
        }
        return s;
    }

  private:
    int initial_state_ = 1;
    std::vector<Jump> jumps_;
};

/// Occupied state just before t together with D(t-).
inline std::pair<int, double> path_state_at(const EventPath& path, double t) {
    if (t < 0.0) throw DataError("path_state_at requires t >= 0");
    return path.state_and_duration(t);
}

enum class AdjOutcome { Confirmed, Rejected, Pending };

/// Post-report adjudication history of one reported event: a path in the
/// adjudication state space observed from the report time onward.
struct AdjudicationTrack {
    double report_time = 0.0;
    int initial_adj_state = 1;
    std::vector<Jump> transitions;          // (time, adjudication state), times > report_time
    AdjOutcome outcome = AdjOutcome::Pending;
    std::optional<double> outcome_time;     // sigma; absent iff Pending

    void validate() const {
        double prev = report_time;
        for (const auto& tr : transitions) {
            if (tr.time <= prev)
                throw DataError("adjudication transition times must be strictly increasing and "
                                "after the report time");
            prev = tr.time;
        }
        if ((outcome == AdjOutcome::Pending) != !outcome_time.has_value())
            throw DataError("outcome_time must be present exactly when the outcome is decided");
        if (outcome_time && !transitions.empty() &&
            std::abs(*outcome_time - transitions.back().time) > 1e-9)
            throw DataError("outcome_time must equal the time the decision state was hit");
    }

    int state_at(double t) const {
        int s = initial_adj_state;
        for (const auto& tr : transitions) {
            if (tr.time <= t) s = tr.mark;
            else break;
        }
        return s;
    }

    /// Entry time of the adjudication state occupied at t.
    double state_entry_time(double t) const {
        double s = report_time;
        for (const auto& tr : transitions) {
            if (tr.time <= t) s = tr.time;
            else break;
        }
        return s;
    }

    bool decided() const { return outcome != AdjOutcome::Pending; }

    /// Track of an event that needs no review: confirmed the instant it is reported.
    static AdjudicationTrack trivially_confirmed(double report_time) {
        AdjudicationTrack tr;
        tr.report_time = report_time;
        tr.outcome = AdjOutcome::Confirmed;
        tr.outcome_time = report_time;
        return tr;
    }
};

/// One reported jump: occurrence time, destination mark, reporting delay and
/// the adjudication track attached to the report.
struct ReportedEvent {
    double time = 0.0;   // T
    int mark = 0;        // Y
    double delay = 0.0;  // U >= 0
    AdjudicationTrack track;

    double report_time() const { return time + delay; }
};

/// Everything observed about one subject at the time of analysis.
struct SubjectRecord {
    std::vector<double> x;       // baseline covariates
    double truncation = 0.0;     // V
    double censoring = 0.0;      // C
    int initial_state = 1;
    std::vector<ReportedEvent> events;  // ordered by event time

    const ReportedEvent* last_event() const { return events.empty() ? nullptr : &events.back(); }

    bool has_pending() const {
        return !events.empty() && events.back().track.outcome == AdjOutcome::Pending;
    }

    /// Path of the subject's reported jumps (all of them, regardless of outcome).
    EventPath reported_path() const {
        std::vector<Jump> jumps;
        jumps.reserve(events.size());
        for (const auto& e : events) jumps.push_back({e.time, e.mark});
        return EventPath(initial_state, std::move(jumps));
    }

    /// Path after dropping rejected events; `include_last` toggles the last
    /// event when it is not already rejected (the imputation branches).
    EventPath effective_path(bool include_last) const {
        std::vector<Jump> jumps;
        for (std::size_t i = 0; i < events.size(); ++i) {
            const auto& e = events[i];
            if (e.track.outcome == AdjOutcome::Rejected) continue;
            if (i + 1 == events.size() && !include_last) continue;
            jumps.push_back({e.time, e.mark});
        }
        return EventPath(initial_state, std::move(jumps));
    }
};

/// Validates the invariants that tie a record to the analysis horizon eta.
inline void validate_record(const SubjectRecord& r, double eta) {
    constexpr double kTimeTol = 5e-6;  // slack for times serialized at 1e-6 resolution
    if (!(0.0 <= r.truncation && r.truncation < r.censoring && r.censoring <= eta + kTimeTol))
        throw DataError("require 0 <= V < C <= eta");
    double prev_report = -1.0;
    double prev_time = -1.0;
    for (std::size_t i = 0; i < r.events.size(); ++i) {
        const auto& e = r.events[i];
        if (e.delay < 0.0) throw DataError("reporting delays must be nonnegative");
        if (!(e.time > r.truncation && e.time <= r.censoring + kTimeTol))
            throw DataError("event times must lie in (V, C]");
        if (e.time <= prev_time) throw DataError("event times must be strictly increasing");
        if (e.report_time() > eta + kTimeTol)
            throw DataError("only events reported by eta may be stored (T + U <= eta)");
        if (e.report_time() + kTimeTol < prev_report)
            throw DataError("reporting must be monotone across events");
        if (e.track.outcome == AdjOutcome::Pending && i + 1 != r.events.size())
            throw DataError("only the most recent reported event may be pending");
        e.track.validate();
        prev_report = e.report_time();
        prev_time = e.time;
    }
    r.effective_path(true);  // throws on mark inconsistencies
}

/// A dataset is a collection of subject records sharing one analysis horizon.
struct Dataset {
    double eta = 0.0;
    std::vector<SubjectRecord> subjects;

    void validate() const {
        if (eta <= 0.0) throw ConfigError("eta must be positive");
        for (const auto& s : subjects) validate_record(s, eta);
    }
};

/// Composite-Simpson quadrature resolution used for likelihood integrals.
struct QuadratureConfig {
    int subintervals_per_segment = 64;

    void validate() const {
        if (subintervals_per_segment < 2 || subintervals_per_segment % 2 != 0)
            throw ConfigError("quadrature subintervals must be even and >= 2");
    }
};

/// Derivative-free simplex search settings.
struct OptimizerConfig {
    int max_iterations = 5000;
    double simplex_tolerance = 1e-8;  // on simplex diameter and value spread
    double initial_step = 0.1;        // per coordinate
    int restarts = 2;

    void validate() const {
        if (simplex_tolerance <= 0.0 || initial_step <= 0.0)
            throw ConfigError("optimizer tolerances must be positive");
        if (max_iterations < 1 || restarts < 0) throw ConfigError("bad optimizer limits");
    }
};

}  // namespace msdelay
