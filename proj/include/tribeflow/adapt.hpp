#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tribeflow/common.hpp"
#include "tribeflow/residence.hpp"
#include "tribeflow/state.hpp"
#include "tribeflow/windows.hpp"

namespace tribeflow {

/// One accepted structure change. For a merge, env_a absorbed env_b; for a
/// split, env_b is the environment created out of env_a's slow tail.
struct AdaptAction {
    enum class Kind { merge, split };
    Kind kind = Kind::merge;
    int env_a = 0;
    int env_b = 0;
    std::int64_t moved_windows = 0;
    double delta = 0.0;  // joint log posterior gain, > 0 for every kept action
};

struct AdaptReport {
    std::vector<AdaptAction> actions;
    std::size_t merges() const {
        std::size_t m = 0;
        for (const auto& x : actions) m += x.kind == AdaptAction::Kind::merge;
        return m;
    }
    std::size_t splits() const { return actions.size() - merges(); }
};

/// Joint log posterior of model structure and data at the current
/// assignments. Score used to accept or reject merges and splits:
///
///   sum_u log DirMult(e[.,u] | alpha * zeta)        user-environment counts
/// + sum_M log DirMult(c[.,M] | beta)                item-environment counts
/// + sum_w sum_k -log(1 - phi_z(source item))        self-transition exclusion
/// + sum_w sum_k log[(b>=tau + 1) / (n_z + K)]       residence-time term
///
/// The first two terms integrate pi and phi out of the window products in
/// closed form; the last two do not collapse, so they are evaluated at the
/// count point estimates. The residence term counts ties as tail mass
/// (>= rather than >): under a strict comparison a tied block of times gets
/// the minimum possible mass and no variance-reducing split could ever be
/// accepted.
inline double joint_log_posterior(const ModelState& st, const WindowSet& D,
                                  const EccdfTable* tables) {
    const double alpha = st.hp.alpha;
    const double beta = st.hp.beta;
    const int K = st.K;

    double sum_az = 0.0;
    for (double z : st.hp.zeta) sum_az += alpha * z;

    double lp = 0.0;
    for (std::int64_t u = 0; u < st.n_users; ++u) {
        lp += std::lgamma(sum_az) - std::lgamma(static_cast<double>(st.n[u]) + sum_az);
        for (int M = 0; M < K; ++M) {
            const std::int64_t e = st.e_at(u, M);
            if (e > 0) {
                const double az = alpha * st.hp.zeta[M];
                lp += std::lgamma(static_cast<double>(e) + az) - std::lgamma(az);
            }
        }
    }

    const double obeta = static_cast<double>(st.n_items) * beta;
    for (int M = 0; M < K; ++M)
        lp += std::lgamma(obeta) - std::lgamma(static_cast<double>(st.slots(M)) + obeta);
    for (std::int64_t i = 0; i < st.n_items; ++i)
        for (int M = 0; M < K; ++M) {
            const std::int64_t cv = st.c_at(i, M);
            if (cv > 0)
                lp += std::lgamma(static_cast<double>(cv) + beta) - std::lgamma(beta);
        }

    const bool with_tau = tables != nullptr && D.has_taus;
    for (std::size_t w = 0; w < D.size(); ++w) {
        const std::int32_t z = st.assignment[w];
        if (z < 0) continue;
        const auto items = D.items_of(w);
        for (int k = 0; k < D.B; ++k)
            lp -= std::log1p(-st.phi_estimate(z, items[k]));
        if (with_tau) {
            const double denom =
                static_cast<double>(tables->size(z)) + static_cast<double>(K);
            for (double tau : D.taus_of(w))
                lp += std::log(static_cast<double>(tables->tail_count_inclusive(z, tau)) + 1.0) -
                      std::log(denom);
        }
    }
    return lp;
}

namespace detail {

// Change in the per-user DirMult normalizers when the active environment
// count moves from K to K + dk (alpha itself is held fixed inside a sweep).
inline double env_count_shift_term(const ModelState& st, int dk) {
    const double alpha = st.hp.alpha;
    const double before = alpha * static_cast<double>(st.K);
    const double after = alpha * static_cast<double>(st.K + dk);
    double d = 0.0;
    for (std::int64_t u = 0; u < st.n_users; ++u) {
        const auto nu = static_cast<double>(st.n[u]);
        d += std::lgamma(after) - std::lgamma(nu + after) - std::lgamma(before) +
             std::lgamma(nu + before);
    }
    return d;
}

// Residence-term change for environments untouched by the action, caused by
// the K in every Eq-5 denominator moving to K + dk.
inline double tau_denominator_shift(const EccdfTable& tables, int skip_a, int skip_b,
                                    int K, int dk) {
    double d = 0.0;
    for (int M = 0; M < tables.n_envs(); ++M) {
        if (M == skip_a || M == skip_b) continue;
        const auto n = static_cast<double>(tables.size(M));
        if (n == 0.0) continue;
        d += n * (std::log(n + static_cast<double>(K)) -
                  std::log(n + static_cast<double>(K + dk)));
    }
    return d;
}

}  // namespace detail

/// Exact gain in joint_log_posterior from merging env b into env a (and
/// dropping b, K -> K-1), computed without touching the state.
inline double merge_delta(const ModelState& st, const WindowSet& D, const EccdfTable& tables,
                          const std::vector<std::vector<std::int32_t>>& env_windows, int a,
                          int b) {
    const double alpha = st.hp.alpha;
    const double beta = st.hp.beta;
    const int K = st.K;

    double d = detail::env_count_shift_term(st, -1);
    for (std::int64_t u = 0; u < st.n_users; ++u) {
        const std::int64_t ea = st.e_at(u, a), eb = st.e_at(u, b);
        if (ea == 0 && eb == 0) continue;
        d += std::lgamma(static_cast<double>(ea + eb) + alpha) -
             std::lgamma(static_cast<double>(ea) + alpha) -
             std::lgamma(static_cast<double>(eb) + alpha) + std::lgamma(alpha);
    }

    const double obeta = static_cast<double>(st.n_items) * beta;
    const double sa = static_cast<double>(st.slots(a)), sb = static_cast<double>(st.slots(b));
    d += std::lgamma(sa + obeta) + std::lgamma(sb + obeta) - std::lgamma(sa + sb + obeta) -
         std::lgamma(obeta);
    for (std::int64_t i = 0; i < st.n_items; ++i) {
        const std::int64_t ca = st.c_at(i, a), cb = st.c_at(i, b);
        if (ca == 0 || cb == 0) continue;  // one side zero: terms cancel exactly
        d += std::lgamma(static_cast<double>(ca + cb) + beta) -
             std::lgamma(static_cast<double>(ca) + beta) -
             std::lgamma(static_cast<double>(cb) + beta) + std::lgamma(beta);
    }

    // Window terms of the two populations, before vs merged.
    const double denom_merged = sa + sb + obeta;
    const auto merged_phi = [&](std::int32_t item) {
        return (static_cast<double>(st.c_at(item, a) + st.c_at(item, b)) + beta) / denom_merged;
    };
    const double tau_n_merged =
        static_cast<double>(tables.size(a) + tables.size(b)) + static_cast<double>(K - 1);
    for (int which = 0; which < 2; ++which) {
        const int env = which == 0 ? a : b;
        const double tau_n_own =
            static_cast<double>(tables.size(env)) + static_cast<double>(K);
        for (std::int32_t w : env_windows[env]) {
            const auto items = D.items_of(w);
            for (int k = 0; k < D.B; ++k) {
                d -= std::log1p(-merged_phi(items[k]));
                d += std::log1p(-st.phi_estimate(env, items[k]));
            }
            if (D.has_taus) {
                for (double tau : D.taus_of(w)) {
                    const double tail = static_cast<double>(
                        tables.tail_count_inclusive(a, tau) + tables.tail_count_inclusive(b, tau));
                    const double own =
                        static_cast<double>(tables.tail_count_inclusive(env, tau));
                    d += std::log(tail + 1.0) - std::log(tau_n_merged);
                    d -= std::log(own + 1.0) - std::log(tau_n_own);
                }
            }
        }
    }
    if (D.has_taus) d += detail::tau_denominator_shift(tables, a, b, K, -1);
    return d;
}

/// Exact gain from moving `moved` (a subset of env s's windows, sorted
/// ascending) into a brand-new environment (K -> K+1).
inline double split_delta(const ModelState& st, const WindowSet& D, const EccdfTable& tables,
                          const std::vector<std::vector<std::int32_t>>& env_windows, int s,
                          const std::vector<std::int32_t>& moved) {
    const double alpha = st.hp.alpha;
    const double beta = st.hp.beta;
    const int K = st.K;

    // Moved per-user window counts and per-item slot counts.
    std::vector<std::pair<std::int32_t, std::int64_t>> moved_users;  // (user, count)
    std::vector<std::pair<std::int32_t, std::int64_t>> moved_items;  // (item, count)
    {
        std::vector<std::int64_t> ucount(st.n_users, 0), icount(st.n_items, 0);
        for (std::int32_t w : moved) {
            ucount[D.user[w]] += 1;
            for (std::int32_t item : D.items_of(w)) icount[item] += 1;
        }
        for (std::int64_t u = 0; u < st.n_users; ++u)
            if (ucount[u]) moved_users.emplace_back(static_cast<std::int32_t>(u), ucount[u]);
        for (std::int64_t i = 0; i < st.n_items; ++i)
            if (icount[i]) moved_items.emplace_back(static_cast<std::int32_t>(i), icount[i]);
    }

    double d = detail::env_count_shift_term(st, +1);
    for (const auto& [u, cnt] : moved_users) {
        const std::int64_t es = st.e_at(u, s);
        d += std::lgamma(static_cast<double>(es - cnt) + alpha) +
             std::lgamma(static_cast<double>(cnt) + alpha) -
             std::lgamma(static_cast<double>(es) + alpha) - std::lgamma(alpha);
    }

    const double obeta = static_cast<double>(st.n_items) * beta;
    const double ss = static_cast<double>(st.slots(s));
    const auto sm = static_cast<double>(moved.size() * static_cast<std::size_t>(D.B + 1));
    d += std::lgamma(ss + obeta) - std::lgamma(ss - sm + obeta) - std::lgamma(sm + obeta) +
         std::lgamma(obeta);
    std::vector<std::int64_t> moved_item_count(st.n_items, 0);
    for (const auto& [i, cnt] : moved_items) {
        moved_item_count[i] = cnt;
        const std::int64_t cs = st.c_at(i, s);
        d += std::lgamma(static_cast<double>(cs - cnt) + beta) +
             std::lgamma(static_cast<double>(cnt) + beta) -
             std::lgamma(static_cast<double>(cs) + beta) - std::lgamma(beta);
    }

    // Window terms: remaining windows see reduced counts, moved windows see
    // the new environment's counts.
    std::vector<bool> is_moved(D.size(), false);
    for (std::int32_t w : moved) is_moved[w] = true;

    const double denom_rem = ss - sm + obeta;
    const double denom_new = sm + obeta;
    const auto rem_phi = [&](std::int32_t item) {
        return (static_cast<double>(st.c_at(item, s) - moved_item_count[item]) + beta) /
               denom_rem;
    };
    const auto new_phi = [&](std::int32_t item) {
        return (static_cast<double>(moved_item_count[item]) + beta) / denom_new;
    };

    // Residence statistics of the moved set.
    std::vector<double> moved_taus;
    if (D.has_taus) {
        for (std::int32_t w : moved)
            for (double tau : D.taus_of(w)) moved_taus.push_back(tau);
        std::sort(moved_taus.begin(), moved_taus.end());
    }
    const auto moved_tail = [&](double tau) {
        return static_cast<double>(
            moved_taus.end() - std::lower_bound(moved_taus.begin(), moved_taus.end(), tau));
    };
    const double tau_n_old = static_cast<double>(tables.size(s)) + static_cast<double>(K);
    const double tau_n_rem = static_cast<double>(tables.size(s)) -
                             static_cast<double>(moved_taus.size()) +
                             static_cast<double>(K + 1);
    const double tau_n_new =
        static_cast<double>(moved_taus.size()) + static_cast<double>(K + 1);

    for (std::int32_t w : env_windows[s]) {
        const auto items = D.items_of(w);
        const bool mv = is_moved[w];
        for (int k = 0; k < D.B; ++k) {
            d -= std::log1p(-(mv ? new_phi(items[k]) : rem_phi(items[k])));
            d += std::log1p(-st.phi_estimate(s, items[k]));
        }
        if (D.has_taus) {
            for (double tau : D.taus_of(w)) {
                const double full = static_cast<double>(tables.tail_count_inclusive(s, tau));
                const double part = moved_tail(tau);
                const double after_tail = mv ? part : full - part;
                d += std::log(after_tail + 1.0) - std::log(mv ? tau_n_new : tau_n_rem);
                d -= std::log(full + 1.0) - std::log(tau_n_old);
            }
        }
    }
    if (D.has_taus) d += detail::tau_denominator_shift(tables, s, -1, K, +1);
    return d;
}

namespace detail {

inline void apply_merge(ModelState& st, EccdfTable& tables,
                        std::vector<std::vector<std::int32_t>>& env_windows, int a, int b) {
    for (std::int32_t w : env_windows[b]) st.assignment[w] = static_cast<std::int32_t>(a);
    for (std::int64_t u = 0; u < st.n_users; ++u) {
        st.e_at(u, a) += st.e_at(u, b);
        st.e_at(u, b) = 0;
    }
    for (std::int64_t i = 0; i < st.n_items; ++i) {
        st.c_at(i, a) += st.c_at(i, b);
        st.c_at(i, b) = 0;
    }
    st.a[a] += st.a[b];
    st.a[b] = 0;
    env_windows[a].insert(env_windows[a].end(), env_windows[b].begin(), env_windows[b].end());
    env_windows[b].clear();
    tables.merge_envs(a, b);

    const int last = st.K - 1;
    st.remove_env(b, env_windows[last]);
    tables.remove_env(b);
    if (b != last) env_windows[b] = std::move(env_windows[last]);
    env_windows.pop_back();
}

inline void apply_split(ModelState& st, EccdfTable& tables, const WindowSet& D,
                        std::vector<std::vector<std::int32_t>>& env_windows, int s,
                        const std::vector<std::int32_t>& moved) {
    st.add_env();
    const int t = st.K - 1;
    std::vector<double> moved_taus;
    for (std::int32_t w : moved) {
        st.assignment[w] = static_cast<std::int32_t>(t);
        const std::int32_t u = D.user[w];
        st.e_at(u, s) -= 1;
        st.e_at(u, t) += 1;
        for (std::int32_t item : D.items_of(w)) {
            st.c_at(item, s) -= 1;
            st.c_at(item, t) += 1;
        }
        st.a[s] -= 1;
        st.a[t] += 1;
        for (double tau : D.taus_of(w)) moved_taus.push_back(tau);
    }
    std::sort(moved_taus.begin(), moved_taus.end());
    tables.subtract(s, moved_taus);
    tables.append_env(std::move(moved_taus));

    std::vector<bool> is_moved(D.size(), false);
    for (std::int32_t w : moved) is_moved[w] = true;
    auto& src_list = env_windows[s];
    src_list.erase(std::remove_if(src_list.begin(), src_list.end(),
                                  [&](std::int32_t w) { return is_moved[w]; }),
                   src_list.end());
    env_windows.emplace_back(moved);
}

inline std::vector<std::vector<std::int32_t>> collect_env_windows(const ModelState& st,
                                                                  const WindowSet& D) {
    std::vector<std::vector<std::int32_t>> lists(static_cast<std::size_t>(st.K));
    for (std::size_t w = 0; w < D.size(); ++w) {
        const std::int32_t z = st.assignment[w];
        if (z >= 0) lists[z].push_back(static_cast<std::int32_t>(w));
    }
    return lists;
}

}  // namespace detail

/// Folds redundant environments together. Candidate pairs are the ten most
/// cosine-similar item-count columns; each is folded provisionally and kept
/// only if the joint log posterior strictly increases. Kept merges shrink K.
inline AdaptReport merge_sweep(ModelState& st, EccdfTable& tables, const WindowSet& D) {
    AdaptReport report;
    if (st.K < 2) return report;

    auto env_windows = detail::collect_env_windows(st, D);

    // Cosine similarity over c columns; pairs involving empty environments
    // are skipped.
    const int K0 = st.K;
    std::vector<double> norm(K0, 0.0);
    std::vector<double> gram(static_cast<std::size_t>(K0) * K0, 0.0);
    for (std::int64_t i = 0; i < st.n_items; ++i) {
        const std::int64_t* row = st.c.data() + static_cast<std::size_t>(i) * K0;
        for (int x = 0; x < K0; ++x) {
            const auto vx = static_cast<double>(row[x]);
            if (vx == 0.0) continue;
            norm[x] += vx * vx;
            for (int y = x + 1; y < K0; ++y)
                if (row[y] != 0)
                    gram[static_cast<std::size_t>(x) * K0 + y] +=
                        vx * static_cast<double>(row[y]);
        }
    }
    struct Cand {
        double cos;
        int a, b;
    };
    std::vector<Cand> cands;
    for (int x = 0; x < K0; ++x)
        for (int y = x + 1; y < K0; ++y) {
            if (norm[x] == 0.0 || norm[y] == 0.0) continue;
            cands.push_back({gram[static_cast<std::size_t>(x) * K0 + y] /
                                 std::sqrt(norm[x] * norm[y]),
                             x, y});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& l, const Cand& r) {
        if (l.cos != r.cos) return l.cos > r.cos;
        if (l.a != r.a) return l.a < r.a;
        return l.b < r.b;
    });
    if (cands.size() > 10) cands.resize(10);

    // Kept merges rename environments (b disappears, the last env moves into
    // its slot); alias maps sweep-start indices to current ones.
    std::vector<int> alias(K0);
    for (int i = 0; i < K0; ++i) alias[i] = i;

    for (const Cand& cand : cands) {
        int a = alias[cand.a], b = alias[cand.b];
        if (a < 0 || b < 0 || a == b) continue;
        const double delta = merge_delta(st, D, tables, env_windows, a, b);
        if (!(delta > 0.0)) continue;
        const auto moved = static_cast<std::int64_t>(env_windows[b].size());
        const int last = st.K - 1;
        detail::apply_merge(st, tables, env_windows, a, b);
        for (int& al : alias) {
            if (al == b) al = -1;
            else if (al == last) al = b;
        }
        report.actions.push_back({AdaptAction::Kind::merge, a, b, moved, delta});
    }
    st.hp.refresh_for_k(st.K);
    return report;
}

/// Splits environments whose slowest 5% of windows (by each window's largest
/// tau) look like a separate regime. No-op for corpora without timestamps.
/// Kept splits append a new environment and grow K.
inline AdaptReport split_sweep(ModelState& st, EccdfTable& tables, const WindowSet& D) {
    AdaptReport report;
    if (!D.has_taus) return report;

    auto env_windows = detail::collect_env_windows(st, D);
    const int K0 = st.K;
    for (int s = 0; s < K0; ++s) {
        const auto n_s = env_windows[s].size();
        if (n_s < 40) continue;  // keeps the 5% tail at >= 2 windows
        const std::size_t m = n_s / 20;

        std::vector<std::int32_t> order = env_windows[s];
        const auto max_tau = [&](std::int32_t w) {
            double mx = 0.0;
            for (double tau : D.taus_of(w)) mx = std::max(mx, tau);
            return mx;
        };
        std::sort(order.begin(), order.end(), [&](std::int32_t l, std::int32_t r) {
            const double tl = max_tau(l), tr = max_tau(r);
            if (tl != tr) return tl > tr;
            return l < r;
        });
        std::vector<std::int32_t> moved(order.begin(), order.begin() + m);
        std::sort(moved.begin(), moved.end());

        const double delta = split_delta(st, D, tables, env_windows, s, moved);
        if (!(delta > 0.0)) continue;
        detail::apply_split(st, tables, D, env_windows, s, moved);
        report.actions.push_back({AdaptAction::Kind::split, s, st.K - 1,
                                  static_cast<std::int64_t>(m), delta});
    }
    st.hp.refresh_for_k(st.K);
    return report;
}

}  // namespace tribeflow
