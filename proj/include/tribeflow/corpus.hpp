#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tribeflow/common.hpp"

namespace tribeflow {

/// One item visit. The owning user is implicit in the EventLog grouping.
struct Event {
    std::int32_t item = -1;
    double timestamp = 0.0;  // seconds since epoch; ignored in no-timestamp corpora
};

/// Per-user, time-ordered visit sequences with dense integer dictionaries.
/// String identifiers exist only at the I/O boundary; everything downstream
/// works on dense ids so the count matrices stay compact.
struct EventLog {
    std::vector<std::string> user_names;              // dense user id -> external id
    std::vector<std::string> item_names;              // dense item id -> external id
    std::vector<std::vector<Event>> events;           // events[u], ascending timestamp
    bool has_timestamps = true;

    std::size_t n_users() const { return user_names.size(); }
    std::size_t n_items() const { return item_names.size(); }

    std::size_t n_events() const {
        std::size_t total = 0;
        for (const auto& seq : events) total += seq.size();
        return total;
    }

    // Transitions = consecutive event pairs within a user.
    std::size_t n_transitions() const {
        std::size_t total = 0;
        for (const auto& seq : events)
            if (seq.size() > 1) total += seq.size() - 1;
        return total;
    }

    std::unordered_map<std::string, std::int32_t> user_index() const {
        std::unordered_map<std::string, std::int32_t> m;
        m.reserve(user_names.size());
        for (std::size_t i = 0; i < user_names.size(); ++i)
            m.emplace(user_names[i], static_cast<std::int32_t>(i));
        return m;
    }

    std::unordered_map<std::string, std::int32_t> item_index() const {
        std::unordered_map<std::string, std::int32_t> m;
        m.reserve(item_names.size());
        for (std::size_t i = 0; i < item_names.size(); ++i)
            m.emplace(item_names[i], static_cast<std::int32_t>(i));
        return m;
    }
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find('\t', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

}  // namespace detail

/// Parses a tab-separated trajectory stream.
///
/// With timestamps each line is `user \t timestamp \t item`; without, it is
/// `user \t item`. Dictionaries are assigned in first-appearance order and
/// each user's events end up sorted ascending by timestamp (stable, so equal
/// timestamps keep input order). Malformed lines raise data_error with the
/// 1-based line number.
inline EventLog parse_events(std::istream& in, bool with_timestamps = true) {
    EventLog log;
    log.has_timestamps = with_timestamps;
    std::unordered_map<std::string, std::int32_t> users, items;

    std::string line;
    std::size_t line_no = 0;
    const std::size_t want = with_timestamps ? 3 : 2;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = detail::split_tabs(line);
        if (fields.size() != want)
            throw data_error("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(want) + " tab-separated fields, got " +
                             std::to_string(fields.size()));

        const std::string user(fields[0]);
        const std::string item(fields[with_timestamps ? 2 : 1]);
        if (user.empty() || item.empty())
            throw data_error("line " + std::to_string(line_no) + ": empty user or item field");

        double ts = 0.0;
        if (with_timestamps) {
            try {
                std::size_t used = 0;
                ts = std::stod(std::string(fields[1]), &used);
                if (used != fields[1].size()) throw std::invalid_argument("trailing garbage");
            } catch (const std::exception&) {
                throw data_error("line " + std::to_string(line_no) + ": bad timestamp '" +
                                 std::string(fields[1]) + "'");
            }
            if (!std::isfinite(ts) || ts < 0.0)
                throw data_error("line " + std::to_string(line_no) +
                                 ": timestamp must be finite and non-negative");
        }

        auto [uit, unew] = users.emplace(user, static_cast<std::int32_t>(log.user_names.size()));
        if (unew) {
            log.user_names.push_back(user);
            log.events.emplace_back();
        }
        auto [iit, inew] = items.emplace(item, static_cast<std::int32_t>(log.item_names.size()));
        if (inew) log.item_names.push_back(item);

        log.events[uit->second].push_back(Event{iit->second, ts});
    }

    if (with_timestamps) {
        for (auto& seq : log.events)
            std::stable_sort(seq.begin(), seq.end(),
                             [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
    }
    return log;
}

/// Writes the log back as TSV, users in id order. parse(serialize(log)) == log.
inline void serialize_events(const EventLog& log, std::ostream& out) {
    for (std::size_t u = 0; u < log.events.size(); ++u) {
        for (const Event& ev : log.events[u]) {
            out << log.user_names[u] << '\t';
            if (log.has_timestamps) out << ev.timestamp << '\t';
            out << log.item_names[ev.item] << '\n';
        }
    }
}

/// Collapses consecutive repeats of the same item within each user, keeping
/// the first event of every run. Inter-event times downstream are therefore
/// measured between retained events. Idempotent.
inline EventLog dedup_revisits(EventLog log) {
    for (auto& seq : log.events) {
        std::size_t w = 0;
        for (std::size_t r = 0; r < seq.size(); ++r) {
            if (w == 0 || seq[r].item != seq[w - 1].item) seq[w++] = seq[r];
        }
        seq.resize(w);
    }
    return log;
}

/// Splits transitions at a single global cut timestamp: the earliest
/// ceil(fraction * T) transitions land in train, the rest in test. A
/// transition's time is its destination event's timestamp, and ties at the
/// cut all go to train. The event shared by the last train transition and
/// the first test transition is duplicated so both sides stay walkable.
/// Dictionaries are shared between the two halves.
inline std::pair<EventLog, EventLog> temporal_split(const EventLog& log, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw config_error("temporal_split: fraction must be in (0,1)");
    if (!log.has_timestamps)
        throw config_error("temporal_split: corpus has no timestamps");

    std::vector<double> times;
    times.reserve(log.n_transitions());
    for (const auto& seq : log.events)
        for (std::size_t i = 1; i < seq.size(); ++i) times.push_back(seq[i].timestamp);

    EventLog train, test;
    train.user_names = test.user_names = log.user_names;
    train.item_names = test.item_names = log.item_names;
    train.has_timestamps = test.has_timestamps = true;
    train.events.resize(log.events.size());
    test.events.resize(log.events.size());

    if (times.empty()) return {train, test};

    const auto need = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(times.size())));
    std::vector<double> sorted = times;
    std::nth_element(sorted.begin(), sorted.begin() + (need - 1), sorted.end());
    const double cut = sorted[need - 1];

    for (std::size_t u = 0; u < log.events.size(); ++u) {
        const auto& seq = log.events[u];
        if (seq.empty()) continue;
        if (seq.size() == 1) {
            (seq[0].timestamp <= cut ? train : test).events[u].push_back(seq[0]);
            continue;
        }
        // Destination timestamps are non-decreasing, so train transitions
        // form a prefix: k = number of transitions at or before the cut.
        std::size_t k = 0;
        while (k + 1 < seq.size() && seq[k + 1].timestamp <= cut) ++k;
        if (k >= 1)
            train.events[u].assign(seq.begin(), seq.begin() + (k + 1));
        if (k + 1 < seq.size())
            test.events[u].assign(seq.begin() + k, seq.end());
    }
    return {train, test};
}

}  // namespace tribeflow
