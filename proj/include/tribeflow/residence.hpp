#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "tribeflow/common.hpp"
#include "tribeflow/state.hpp"
#include "tribeflow/windows.hpp"

namespace tribeflow {

/// Per-environment empirical model of inter-event times: the sorted multiset
/// of all taus of windows currently assigned to each environment.
///
/// Tables are rebuilt between Gibbs passes (m-step) and read-only during a
/// pass, so the e-step scores every window against the same tau statistics.
/// A window's B taus each contribute one entry, hence size(M) == B * a[M].
class EccdfTable {
public:
    EccdfTable() = default;

    explicit EccdfTable(std::vector<std::vector<double>> times) : times_(std::move(times)) {
        for (auto& t : times_) std::sort(t.begin(), t.end());
    }

    /// Collects the taus of every assigned window into its environment's
    /// bucket and sorts. `extra` (optional, indexed by env) lets a parallel
    /// worker fold in times owned by other shards.
    static EccdfTable rebuild(const ModelState& st, const WindowSet& D,
                              const std::vector<std::vector<double>>* extra = nullptr) {
        EccdfTable tab;
        tab.times_.assign(static_cast<std::size_t>(st.K), {});
        if (D.has_taus) {
            for (std::size_t w = 0; w < D.size(); ++w) {
                const std::int32_t env = st.assignment[w];
                if (env < 0) continue;
                for (double tau : D.taus_of(w)) tab.times_[env].push_back(tau);
            }
        }
        tab.fold_extra_and_sort(D, extra);
        return tab;
    }

    /// Same, but scanning only the given windows. A parallel worker passes
    /// its shard here plus the times it holds for the other shards.
    static EccdfTable rebuild_windows(const ModelState& st, const WindowSet& D,
                                      std::span<const std::int32_t> windows,
                                      const std::vector<std::vector<double>>* extra = nullptr) {
        EccdfTable tab;
        tab.times_.assign(static_cast<std::size_t>(st.K), {});
        if (D.has_taus) {
            for (std::int32_t w : windows) {
                const std::int32_t env = st.assignment[w];
                if (env < 0) continue;
                for (double tau : D.taus_of(w)) tab.times_[env].push_back(tau);
            }
        }
        tab.fold_extra_and_sort(D, extra);
        return tab;
    }

    int n_envs() const { return static_cast<int>(times_.size()); }
    const std::vector<double>& times(int env) const { return times_[env]; }
    std::int64_t size(int env) const { return static_cast<std::int64_t>(times_[env].size()); }

    /// Number of stored times strictly greater than tau.
    std::int64_t tail_count(int env, double tau) const {
        const auto& t = times_[env];
        return t.end() - std::upper_bound(t.begin(), t.end(), tau);
    }

    /// Number of stored times greater than or equal to tau. Used by the
    /// joint-posterior score, where ties must count as tail mass (see
    /// adapt.hpp).
    std::int64_t tail_count_inclusive(int env, double tau) const {
        const auto& t = times_[env];
        return t.end() - std::lower_bound(t.begin(), t.end(), tau);
    }

    /// Bernoulli-Beta predictive posterior of observing a time above tau:
    /// (b + 1) / (n_M + K) with b the strict tail count. In (0, 1], equal to
    /// 1/K for an empty environment, and non-increasing in tau.
    double tau_likelihood(int env, double tau, int K) const {
        return (static_cast<double>(tail_count(env, tau)) + 1.0) /
               (static_cast<double>(times_[env].size()) + static_cast<double>(K));
    }

    // --- mutations used by the adapt sweeps; each mirrors what a rebuild
    // --- from the post-action assignment would produce.

    void merge_envs(int dst, int src) {
        std::vector<double> merged(times_[dst].size() + times_[src].size());
        std::merge(times_[dst].begin(), times_[dst].end(), times_[src].begin(),
                   times_[src].end(), merged.begin());
        times_[dst] = std::move(merged);
        times_[src].clear();
    }

    void remove_env(int env) {
        const int last = n_envs() - 1;
        if (env != last) times_[env] = std::move(times_[last]);
        times_.pop_back();
    }

    void append_env(std::vector<double> sorted_times) {
        times_.push_back(std::move(sorted_times));
    }

    /// Removes one occurrence of each value in `sorted_values` (multiset
    /// difference); every value must be present.
    void subtract(int env, std::span<const double> sorted_values) {
        auto& t = times_[env];
        std::vector<double> out;
        out.reserve(t.size() - sorted_values.size());
        std::size_t j = 0;
        for (double v : t) {
            if (j < sorted_values.size() && v == sorted_values[j]) {
                ++j;
                continue;
            }
            out.push_back(v);
        }
        if (j != sorted_values.size())
            throw invariant_error("EccdfTable::subtract: value not present");
        t = std::move(out);
    }

private:
    void fold_extra_and_sort(const WindowSet& D,
                             const std::vector<std::vector<double>>* extra) {
        if (D.has_taus && extra) {
            for (std::size_t m = 0; m < extra->size() && m < times_.size(); ++m)
                times_[m].insert(times_[m].end(), (*extra)[m].begin(), (*extra)[m].end());
        }
        for (auto& t : times_) std::sort(t.begin(), t.end());
    }

    std::vector<std::vector<double>> times_;
};

}  // namespace tribeflow
