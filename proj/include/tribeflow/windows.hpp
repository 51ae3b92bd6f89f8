#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tribeflow/common.hpp"
#include "tribeflow/corpus.hpp"

namespace tribeflow {

/// The set D of sliding-window training tuples. Each window is a user, B+1
/// consecutive items, and the B inter-event times between them. Storage is
/// flat and windows of one user are contiguous, which is what the sharder
/// relies on.
struct WindowSet {
    int B = 1;
    bool has_taus = false;
    std::int64_t n_users = 0;
    std::int64_t n_items = 0;
    std::vector<std::int32_t> user;        // per window
    std::vector<std::int32_t> items;       // size() * (B+1), flattened
    std::vector<double> taus;              // size() * B, empty when !has_taus
    std::vector<std::int64_t> per_user;    // windows contributed by each user

    std::size_t size() const { return user.size(); }

    std::span<const std::int32_t> items_of(std::size_t w) const {
        return {items.data() + w * static_cast<std::size_t>(B + 1),
                static_cast<std::size_t>(B + 1)};
    }
    std::span<const double> taus_of(std::size_t w) const {
        if (!has_taus) return {};
        return {taus.data() + w * static_cast<std::size_t>(B),
                static_cast<std::size_t>(B)};
    }
};

/// Slides a stride-1 window of B+1 items over each user's deduped sequence.
/// A user with m events contributes max(0, m - B) windows.
inline WindowSet build_windows(const EventLog& log, int B) {
    if (B < 1) throw config_error("build_windows: B must be >= 1");

    WindowSet set;
    set.B = B;
    set.has_taus = log.has_timestamps;
    set.n_users = static_cast<std::int64_t>(log.n_users());
    set.n_items = static_cast<std::int64_t>(log.n_items());
    set.per_user.assign(log.n_users(), 0);

    const auto bp1 = static_cast<std::size_t>(B + 1);
    for (std::size_t u = 0; u < log.events.size(); ++u) {
        const auto& seq = log.events[u];
        if (seq.size() < bp1) continue;
        const std::size_t count = seq.size() - static_cast<std::size_t>(B);
        set.per_user[u] = static_cast<std::int64_t>(count);
        for (std::size_t t = 0; t < count; ++t) {
            set.user.push_back(static_cast<std::int32_t>(u));
            for (std::size_t k = 0; k < bp1; ++k) set.items.push_back(seq[t + k].item);
            if (set.has_taus)
                for (int k = 0; k < B; ++k)
                    set.taus.push_back(seq[t + k + 1].timestamp - seq[t + k].timestamp);
        }
    }
    return set;
}

}  // namespace tribeflow
