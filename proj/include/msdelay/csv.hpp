#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "msdelay/core.hpp"

// Canonical dataset schema, one row per reported event (or one bare row for
// subjects with no events):
//
//   subject_id,covariate_1..covariate_p,V,C,event_index,T,Y,U,adj_state_seq,adj_time_seq,outcome
//
// Times are decimal years with six fractional digits; sequences are
// ';'-separated; outcome is C, R or P. The analysis horizon is carried in a
// leading metadata line `# eta=...`. Subjects start in state 1. All numbers
// use '.' as the decimal separator regardless of locale.

namespace msdelay {

namespace detail_csv {

inline std::string format_time(double t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", t);
    return buf;
}

inline std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_number(const std::string& s, int line_no, const char* what) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw DataError("line " + std::to_string(line_no) + ": cannot parse " + what + " from '" +
                        s + "'");
    }
}

}  // namespace detail_csv

inline std::string dataset_csv_header(int p) {
    std::string h = "subject_id";
    for (int i = 1; i <= p; ++i) h += ",covariate_" + std::to_string(i);
    h += ",V,C,event_index,T,Y,U,adj_state_seq,adj_time_seq,outcome";
    return h;
}

inline void export_dataset_csv(const Dataset& data, std::ostream& os) {
    const int p = data.subjects.empty() ? 0 : static_cast<int>(data.subjects.front().x.size());
    os << "# eta=" << detail_csv::format_time(data.eta) << "\n";
    os << dataset_csv_header(p) << "\n";
    for (std::size_t i = 0; i < data.subjects.size(); ++i) {
        const auto& r = data.subjects[i];
        if (r.initial_state != 1)
            throw DataError("the csv schema assumes subjects start in state 1");
        auto prefix = [&] {
            std::string row = std::to_string(i + 1);
            for (double v : r.x) row += "," + detail_csv::format_full(v);
            row += "," + detail_csv::format_time(r.truncation);
            row += "," + detail_csv::format_time(r.censoring);
            return row;
        }();
        if (r.events.empty()) {
            os << prefix << std::string(7, ',') << "\n";
            continue;
        }
        for (std::size_t e = 0; e < r.events.size(); ++e) {
            const auto& ev = r.events[e];
            std::string states, times;
            if (!ev.track.transitions.empty() || ev.track.outcome == AdjOutcome::Pending ||
                (ev.track.outcome_time &&
                 std::abs(*ev.track.outcome_time - ev.track.report_time) > 1e-9)) {
                states = std::to_string(ev.track.initial_adj_state);
                for (const auto& tr : ev.track.transitions) {
                    states += ";" + std::to_string(tr.mark);
                    times += times.empty() ? "" : ";";
                    times += detail_csv::format_time(tr.time);
                }
            }
            const char* outcome = ev.track.outcome == AdjOutcome::Confirmed  ? "C"
                                  : ev.track.outcome == AdjOutcome::Rejected ? "R"
                                                                             : "P";
            os << prefix << "," << (e + 1) << "," << detail_csv::format_time(ev.time) << ","
               << ev.mark << "," << detail_csv::format_time(ev.delay) << "," << states << ","
               << times << "," << outcome << "\n";
        }
    }
}

inline void export_dataset_csv(const Dataset& data, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open " + path + " for writing");
    export_dataset_csv(data, os);
}

/// Parses the canonical schema; malformed rows are reported with their line
/// numbers and the whole ingest fails.
inline Dataset ingest_grid_csv(std::istream& is, const std::string& name = "<stream>") {
    Dataset data;
    std::string line;
    int line_no = 0;
    bool have_eta = false, have_header = false;
    int p = 0;
    std::vector<std::string> errors;
    std::string current_key;
    SubjectRecord current;
    bool open = false;
    std::vector<std::string> seen_keys;

    auto flush = [&]() {
        if (!open) return;
        try {
            validate_record(current, data.eta);
            data.subjects.push_back(current);
        } catch (const DataError& e) {
            errors.push_back("subject " + current_key + ": " + e.what());
        }
        current = SubjectRecord{};
        open = false;
    };

    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find("eta=");
            if (eq != std::string::npos) {
                data.eta = detail_csv::parse_number(line.substr(eq + 4), line_no, "eta");
                have_eta = true;
            }
            continue;
        }
        if (!have_header) {
            if (line.rfind("subject_id", 0) != 0)
                throw DataError(name + " line " + std::to_string(line_no) +
                                ": expected the schema header");
            auto cols = detail_csv::split(line, ',');
            p = static_cast<int>(cols.size()) - 10;
            if (p < 0 || cols[0] != "subject_id")
                throw DataError(name + ": malformed header");
            have_header = true;
            continue;
        }
        auto f = detail_csv::split(line, ',');
        if (static_cast<int>(f.size()) != p + 10) {
            errors.push_back("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(p + 10) + " fields, got " + std::to_string(f.size()));
            continue;
        }
        try {
            const std::string& key = f[0];
            if (key != current_key) {
                flush();
                for (const auto& k : seen_keys)
                    if (k == key)
                        throw DataError("line " + std::to_string(line_no) +
                                        ": duplicate subject key '" + key + "'");
                seen_keys.push_back(key);
                current_key = key;
                current = SubjectRecord{};
                for (int c = 0; c < p; ++c)
                    current.x.push_back(
                        detail_csv::parse_number(f[1 + c], line_no, "covariate"));
                current.truncation = detail_csv::parse_number(f[1 + p], line_no, "V");
                current.censoring = detail_csv::parse_number(f[2 + p], line_no, "C");
                open = true;
            }
            const std::string& idx = f[3 + p];
            if (idx.empty()) continue;  // subject without events
            ReportedEvent ev;
            ev.time = detail_csv::parse_number(f[4 + p], line_no, "T");
            ev.mark = static_cast<int>(detail_csv::parse_number(f[5 + p], line_no, "Y"));
            ev.delay = detail_csv::parse_number(f[6 + p], line_no, "U");
            const std::string& states = f[7 + p];
            const std::string& times = f[8 + p];
            const std::string& outcome = f[9 + p];
            AdjudicationTrack track;
            track.report_time = ev.time + ev.delay;
            if (!states.empty()) {
                auto sseq = detail_csv::split(states, ';');
                track.initial_adj_state =
                    static_cast<int>(detail_csv::parse_number(sseq[0], line_no, "adj state"));
                std::vector<std::string> tseq =
                    times.empty() ? std::vector<std::string>{} : detail_csv::split(times, ';');
                if (tseq.size() + 1 != sseq.size())
                    throw DataError("line " + std::to_string(line_no) +
                                    ": adjudication sequences have inconsistent lengths");
                for (std::size_t k = 0; k < tseq.size(); ++k)
                    track.transitions.push_back(
                        {detail_csv::parse_number(tseq[k], line_no, "adj time"),
                         static_cast<int>(
                             detail_csv::parse_number(sseq[k + 1], line_no, "adj state"))});
            }
            if (outcome == "C") {
                track.outcome = AdjOutcome::Confirmed;
                track.outcome_time =
                    track.transitions.empty() ? track.report_time : track.transitions.back().time;
            } else if (outcome == "R") {
                track.outcome = AdjOutcome::Rejected;
                track.outcome_time =
                    track.transitions.empty() ? track.report_time : track.transitions.back().time;
            } else if (outcome == "P") {
                track.outcome = AdjOutcome::Pending;
            } else {
                throw DataError("line " + std::to_string(line_no) + ": unknown outcome '" +
                                outcome + "'");
            }
            ev.track = std::move(track);
            current.events.push_back(std::move(ev));
        } catch (const DataError& e) {
            errors.push_back(e.what());
        }
    }
    flush();
    if (!have_header) throw DataError(name + ": missing header");
    if (!have_eta) throw DataError(name + ": missing '# eta=' metadata line");
    if (!errors.empty()) {
        std::string msg = name + ": " + std::to_string(errors.size()) + " malformed row(s):";
        for (const auto& e : errors) msg += "\n  " + e;
        throw DataError(msg);
    }
    return data;
}

inline Dataset ingest_grid_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open " + path);
    return ingest_grid_csv(is, path);
}

}  // namespace msdelay
