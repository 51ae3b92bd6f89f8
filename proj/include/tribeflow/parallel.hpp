#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "tribeflow/adapt.hpp"
#include "tribeflow/common.hpp"
#include "tribeflow/residence.hpp"
#include "tribeflow/sampler.hpp"
#include "tribeflow/state.hpp"
#include "tribeflow/windows.hpp"

namespace tribeflow {

/// Partitions windows into P contiguous per-user ranges: all windows of a
/// user land on one shard, and cut points sit as close to the ideal equal
/// share as user granularity allows. Windows in a WindowSet are already
/// grouped by user, so a shard is an index range.
inline std::vector<std::pair<std::size_t, std::size_t>> shard(const WindowSet& D, int P) {
    if (P < 1) throw config_error("shard: P must be >= 1");
    std::int64_t active_users = 0;
    for (std::int64_t c : D.per_user) active_users += c > 0;
    if (P > active_users)
        throw config_error("shard: more shards than users with windows");

    // Cumulative window counts at user boundaries.
    std::vector<std::size_t> cum{0};
    for (std::int64_t c : D.per_user)
        if (c > 0) cum.push_back(cum.back() + static_cast<std::size_t>(c));
    const std::size_t total = cum.back();
    const auto n_cuts = static_cast<std::size_t>(P) - 1;

    std::vector<std::size_t> cuts(n_cuts);  // indices into cum
    std::size_t prev = 0;
    for (std::size_t j = 0; j < n_cuts; ++j) {
        const double ideal =
            static_cast<double>(total) * static_cast<double>(j + 1) / static_cast<double>(P);
        // Nearest user boundary to the ideal cut, keeping every shard
        // non-empty (leave at least P-1-j boundaries after this one).
        const std::size_t lo = prev + 1;
        const std::size_t hi = cum.size() - 1 - (n_cuts - 1 - j);
        std::size_t best = lo;
        double best_err = std::abs(static_cast<double>(cum[lo]) - ideal);
        for (std::size_t b = lo + 1; b <= hi; ++b) {
            const double err = std::abs(static_cast<double>(cum[b]) - ideal);
            if (err < best_err) {
                best = b;
                best_err = err;
            }
            if (static_cast<double>(cum[b]) > ideal && err > best_err) break;
        }
        cuts[j] = best;
        prev = best;
    }

    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    std::size_t begin = 0;
    for (std::size_t j = 0; j < n_cuts; ++j) {
        ranges.emplace_back(begin, cum[cuts[j]]);
        begin = cum[cuts[j]];
    }
    ranges.emplace_back(begin, total);
    return ranges;
}

/// One worker's net count increments since the last global barrier, plus its
/// current per-environment residence times (the net effect of its tau
/// insert/remove stream). This is the object two workers exchange when they
/// synchronize.
struct CountDelta {
    int worker_id = 0;
    std::vector<std::int64_t> de, dc, da, dn;
    std::vector<std::vector<double>> shard_times;  // per env, sorted

    void merge(const CountDelta& o) {
        for (std::size_t i = 0; i < de.size(); ++i) de[i] += o.de[i];
        for (std::size_t i = 0; i < dc.size(); ++i) dc[i] += o.dc[i];
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += o.da[i];
        for (std::size_t i = 0; i < dn.size(); ++i) dn[i] += o.dn[i];
    }
    CountDelta negated() const {
        CountDelta n = *this;
        for (auto& v : n.de) v = -v;
        for (auto& v : n.dc) v = -v;
        for (auto& v : n.da) v = -v;
        for (auto& v : n.dn) v = -v;
        return n;
    }
    bool counts_zero() const {
        const auto all0 = [](const std::vector<std::int64_t>& v) {
            return std::all_of(v.begin(), v.end(), [](std::int64_t x) { return x == 0; });
        };
        return all0(de) && all0(dc) && all0(da) && all0(dn);
    }
};

/// One training replica: full count matrices, exclusive ownership of one
/// shard's assignments, the barrier baseline, and this worker's (possibly
/// stale) record of every other worker's net since that baseline.
///
/// Replica counts are always base + sum of per-origin nets, each net being
/// some worker's true contribution change at the time it was last received.
/// Replacing a stale net wholesale (rather than accumulating incremental
/// diffs) keeps every cell non-negative: crossing increment/decrement pairs
/// routed to different partners would otherwise be able to drive a cell
/// below this worker's own contribution.
struct WorkerState {
    int id = 0;
    ModelState st;
    EccdfTable tables;
    std::vector<std::int32_t> windows;  // shard window ids
    std::vector<std::int64_t> base_e, base_c, base_a, base_n;
    std::vector<CountDelta> other;  // received nets, indexed by origin worker
    std::vector<std::vector<std::vector<double>>> views;  // views[j][env], j != id
    rng pass_rng{0};

    void rebase() {
        base_e = st.e;
        base_c = st.c;
        base_a = st.a;
        base_n = st.n;
        for (auto& o : other) {
            o.de.assign(base_e.size(), 0);
            o.dc.assign(base_c.size(), 0);
            o.da.assign(base_a.size(), 0);
            o.dn.assign(base_n.size(), 0);
        }
    }

    std::vector<std::vector<double>> own_shard_times(const WindowSet& D) const {
        std::vector<std::vector<double>> t(static_cast<std::size_t>(st.K));
        if (D.has_taus) {
            for (std::int32_t w : windows) {
                const std::int32_t env = st.assignment[w];
                if (env >= 0)
                    for (double tau : D.taus_of(w)) t[env].push_back(tau);
            }
            for (auto& v : t) std::sort(v.begin(), v.end());
        }
        return t;
    }

    /// This worker's own net since the barrier: live counts minus baseline
    /// minus everything received from others.
    CountDelta make_delta(const WindowSet& D) const {
        CountDelta d;
        d.worker_id = id;
        d.de.resize(st.e.size());
        d.dc.resize(st.c.size());
        d.da.resize(st.a.size());
        d.dn.resize(st.n.size());
        for (std::size_t i = 0; i < st.e.size(); ++i) d.de[i] = st.e[i] - base_e[i];
        for (std::size_t i = 0; i < st.c.size(); ++i) d.dc[i] = st.c[i] - base_c[i];
        for (std::size_t i = 0; i < st.a.size(); ++i) d.da[i] = st.a[i] - base_a[i];
        for (std::size_t i = 0; i < st.n.size(); ++i) d.dn[i] = st.n[i] - base_n[i];
        for (const auto& o : other) {
            if (o.de.empty()) continue;
            for (std::size_t i = 0; i < d.de.size(); ++i) d.de[i] -= o.de[i];
            for (std::size_t i = 0; i < d.dc.size(); ++i) d.dc[i] -= o.dc[i];
            for (std::size_t i = 0; i < d.da.size(); ++i) d.da[i] -= o.da[i];
            for (std::size_t i = 0; i < d.dn.size(); ++i) d.dn[i] -= o.dn[i];
        }
        d.shard_times = own_shard_times(D);
        return d;
    }

    /// Replaces the stored net of `delta.worker_id` with the fresh one,
    /// adjusting the live counts by the difference.
    void receive(const CountDelta& delta) {
        auto& old = other[static_cast<std::size_t>(delta.worker_id)];
        for (std::size_t i = 0; i < st.e.size(); ++i) st.e[i] += delta.de[i] - old.de[i];
        for (std::size_t i = 0; i < st.c.size(); ++i) st.c[i] += delta.dc[i] - old.dc[i];
        for (std::size_t i = 0; i < st.a.size(); ++i) st.a[i] += delta.da[i] - old.da[i];
        for (std::size_t i = 0; i < st.n.size(); ++i) st.n[i] += delta.dn[i] - old.dn[i];
        old = delta;
        views[static_cast<std::size_t>(delta.worker_id)] = delta.shard_times;
    }

    // Foreign residence times aggregated over all other shards.
    std::vector<std::vector<double>> foreign_times() const {
        std::vector<std::vector<double>> extra(static_cast<std::size_t>(st.K));
        for (std::size_t j = 0; j < views.size(); ++j) {
            if (static_cast<int>(j) == id) continue;
            for (std::size_t m = 0; m < views[j].size() && m < extra.size(); ++m)
                extra[m].insert(extra[m].end(), views[j][m].begin(), views[j][m].end());
        }
        return extra;
    }

    void rebuild_tables(const WindowSet& D) {
        const auto extra = foreign_times();
        tables = EccdfTable::rebuild_windows(st, D, windows, &extra);
    }
};

/// Pairwise synchronization: both workers exchange their nets since the last
/// barrier and fold them in, leaving both with the same merged counts
/// (barrier baseline + A's delta + B's delta, plus whatever both already
/// know of third parties). Returns false (sync deferred) if the replicas
/// have diverged in K, which cannot happen between barriers but is guarded
/// anyway.
inline bool sync_pair(WorkerState& A, WorkerState& B, const WindowSet& D) {
    if (A.st.K != B.st.K) return false;
    CountDelta da = A.make_delta(D);
    CountDelta db = B.make_delta(D);
    A.receive(db);
    B.receive(da);
    return true;
}

namespace detail {

/// Exact global state recomputed from the shard-owned assignments. This is
/// the barrier reconciliation: it depends only on the final labels, so any
/// pairwise sync order between barriers yields the same result.
inline ModelState global_recount(const WindowSet& D, std::span<const WorkerState> workers) {
    const ModelState& ref = workers[0].st;
    ModelState g;
    g.K = ref.K;
    g.n_users = ref.n_users;
    g.n_items = ref.n_items;
    g.hp = ref.hp;
    g.e.assign(static_cast<std::size_t>(g.n_users) * g.K, 0);
    g.c.assign(static_cast<std::size_t>(g.n_items) * g.K, 0);
    g.a.assign(static_cast<std::size_t>(g.K), 0);
    g.n.assign(static_cast<std::size_t>(g.n_users), 0);
    g.assignment.assign(D.size(), -1);
    for (const WorkerState& wk : workers)
        for (std::int32_t w : wk.windows) g.assign(D, w, wk.st.assignment[w]);
    return g;
}

inline void broadcast(const ModelState& global, const WindowSet& D,
                      std::vector<WorkerState>& workers) {
    // Per-shard, per-environment residence times under the global labels.
    const auto P = workers.size();
    std::vector<std::vector<std::vector<double>>> shard_times(P);
    for (std::size_t j = 0; j < P; ++j) {
        shard_times[j].assign(static_cast<std::size_t>(global.K), {});
        if (D.has_taus) {
            for (std::int32_t w : workers[j].windows) {
                const std::int32_t env = global.assignment[w];
                for (double tau : D.taus_of(w)) shard_times[j][env].push_back(tau);
            }
            for (auto& v : shard_times[j]) std::sort(v.begin(), v.end());
        }
    }
    for (std::size_t i = 0; i < P; ++i) {
        workers[i].st = global;
        workers[i].other.assign(P, CountDelta{});
        workers[i].rebase();
        workers[i].views = shard_times;
        workers[i].rebuild_tables(D);
    }
}

}  // namespace detail

/// Multi-worker training. Each worker runs collapsed-Gibbs passes over its
/// own shard against a full count replica; after every pass, randomly
/// matched pairs exchange count deltas; every adapt_every iterations all
/// workers meet a barrier where the master rebuilds the exact global state,
/// runs the merge/split sweeps, and broadcasts the result. The partner
/// schedule is drawn from a seeded master stream, so runs are reproducible,
/// and a one-worker run is bit-identical to sampler::train.
inline Model run_parallel(const WindowSet& D, const TrainConfig& cfg,
                          const TrainLogger* logger = nullptr,
                          std::vector<std::string> user_names = {},
                          std::vector<std::string> item_names = {}) {
    cfg.validate();
    if (D.size() == 0) throw config_error("run_parallel: empty window set");
    const bool nt = cfg.nt_mode || !D.has_taus;
    const int P = cfg.workers;
    const auto ranges = shard(D, P);

    rng r_init = make_init_rng(cfg.seed);
    ModelState global = init_state(D, cfg, r_init);

    std::vector<WorkerState> workers(static_cast<std::size_t>(P));
    for (int i = 0; i < P; ++i) {
        workers[i].id = i;
        workers[i].windows.resize(ranges[i].second - ranges[i].first);
        std::iota(workers[i].windows.begin(), workers[i].windows.end(),
                  static_cast<std::int32_t>(ranges[i].first));
        workers[i].pass_rng = make_pass_rng(cfg.seed, i);
    }
    detail::broadcast(global, D, workers);

    if (logger && logger->on_progress) {
        EccdfTable tables;
        const EccdfTable* tp = nullptr;
        if (!nt) {
            tables = EccdfTable::rebuild(global, D);
            tp = &tables;
        }
        logger->on_progress(0, global.K, joint_log_posterior(global, D, tp));
    }

    rng sync_rng(cfg.seed, 0x53594e43ULL);  // partner schedule stream

    for (int iter = 1; iter <= cfg.total_iterations; ++iter) {
        auto run_worker = [&](WorkerState& wk) {
            std::vector<double> scratch;
            gibbs_pass(wk.st, nt ? nullptr : &wk.tables, D, wk.windows, wk.pass_rng,
                       scratch);
            if (!nt) wk.rebuild_tables(D);
        };
        if (P == 1) {
            run_worker(workers[0]);
        } else {
            std::vector<std::thread> threads;
            threads.reserve(workers.size());
            for (auto& wk : workers) threads.emplace_back(run_worker, std::ref(wk));
            for (auto& t : threads) t.join();
        }

        if (P >= 2) {
            std::vector<int> order(static_cast<std::size_t>(P));
            std::iota(order.begin(), order.end(), 0);
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[sync_rng.uniform_index(i)]);
            for (std::size_t i = 0; i + 1 < order.size(); i += 2)
                sync_pair(workers[order[i]], workers[order[i + 1]], D);
        }

        const bool adapt_now = !nt && iter % cfg.adapt_every == 0;
        const bool last = iter == cfg.total_iterations;
        if (adapt_now || last) {
            global = detail::global_recount(D, workers);
            if (adapt_now) {
                EccdfTable tables = EccdfTable::rebuild(global, D);
                AdaptReport merges = merge_sweep(global, tables, D);
                AdaptReport splits = split_sweep(global, tables, D);
                if (logger && logger->on_adapt) logger->on_adapt(iter, merges, splits);
            }
            if (!last) detail::broadcast(global, D, workers);
            if (logger && logger->on_progress) {
                EccdfTable tables;
                const EccdfTable* tp = nullptr;
                if (!nt) {
                    tables = EccdfTable::rebuild(global, D);
                    tp = &tables;
                }
                logger->on_progress(iter, global.K, joint_log_posterior(global, D, tp));
            }
        }
    }

    EccdfTable final_tables;
    const EccdfTable* ftp = nullptr;
    if (!nt) {
        final_tables = EccdfTable::rebuild(global, D);
        ftp = &final_tables;
    }
    return freeze(global, ftp, nt, std::move(user_names), std::move(item_names));
}

}  // namespace tribeflow
