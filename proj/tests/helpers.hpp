#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "tribeflow/common.hpp"
#include "tribeflow/corpus.hpp"
#include "tribeflow/windows.hpp"

namespace testutil {

// Random timestamped log: n_users users, 2..max_len events each over
// n_items items, consecutive duplicates allowed (dedup's job).
inline tribeflow::EventLog random_log(tribeflow::rng& r, int n_users, int n_items,
                                      int max_len) {
    tribeflow::EventLog log;
    log.has_timestamps = true;
    for (int u = 0; u < n_users; ++u) {
        log.user_names.push_back("u" + std::to_string(u));
        log.events.emplace_back();
        double t = r.uniform01() * 100.0;
        const int len = 2 + static_cast<int>(r.uniform_index(max_len - 1));
        for (int i = 0; i < len; ++i) {
            const auto item = static_cast<std::int32_t>(r.uniform_index(n_items));
            log.events[u].push_back(tribeflow::Event{item, t});
            t += r.uniform01() * 10.0;
        }
    }
    for (int i = 0; i < n_items; ++i) log.item_names.push_back("i" + std::to_string(i));
    return log;
}

inline tribeflow::EventLog parse_text(const std::string& text, bool with_ts = true) {
    std::istringstream in(text);
    return tribeflow::parse_events(in, with_ts);
}

}  // namespace testutil
