#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tribeflow/common.hpp"
#include "tribeflow/windows.hpp"

namespace tribeflow {

/// Fixed prior settings. alpha is re-derived as 50/K whenever K changes at an
/// adapt sweep; beta stays at 0.001. zeta is the vector of environment base
/// weights, held uniform at 1.0 per component (K growth/shrink is handled by
/// the merge/split heuristics instead of resampling stick weights).
struct Hyperparams {
    double alpha = 0.5;
    double beta = 1e-3;
    std::vector<double> zeta;   // length K, all 1.0
    int B = 1;
    int K_init = 100;

    static Hyperparams make(int k_init, int B) {
        if (k_init < 1) throw config_error("Hyperparams: K_init must be >= 1");
        if (B < 1) throw config_error("Hyperparams: B must be >= 1");
        Hyperparams hp;
        hp.K_init = k_init;
        hp.B = B;
        hp.alpha = 50.0 / k_init;
        hp.zeta.assign(k_init, 1.0);
        return hp;
    }

    void refresh_for_k(int k) {
        alpha = 50.0 / k;
        zeta.assign(static_cast<std::size_t>(k), 1.0);
    }
};

/// Semi-Markov step probability for one environment with item weights `phi`:
/// zero on the diagonal, phi(d) / (1 - phi(s)) off it, so each row is a
/// proper distribution over d != s.
inline double semi_markov_transition(std::span<const double> phi, std::int64_t src,
                                     std::int64_t dst) {
    if (src == dst) return 0.0;
    const double ps = phi[static_cast<std::size_t>(src)];
    if (ps >= 1.0)
        throw invariant_error("semi_markov_transition: phi(src) >= 1");
    return phi[static_cast<std::size_t>(dst)] / (1.0 - ps);
}

/// Sufficient statistics of the collapsed sampler.
///
/// Layouts put the environment index innermost so the per-window posterior
/// scan over K touches contiguous memory:
///   e[u * K + M]  tuples of user u in environment M
///   c[i * K + M]  occurrences of item i in windows of environment M
///   a[M]          tuples assigned to M
///   n[u]          tuples of user u currently assigned anywhere
///
/// Invariants: sum_u e[M,u] == a[M]; sum_i c[i,M] == (B+1) * a[M];
/// sum_M e[M,u] == n[u].
struct ModelState {
    int K = 0;
    std::int64_t n_users = 0;
    std::int64_t n_items = 0;
    Hyperparams hp;
    std::vector<std::int64_t> e;
    std::vector<std::int64_t> c;
    std::vector<std::int64_t> a;
    std::vector<std::int64_t> n;
    std::vector<std::int32_t> assignment;  // env per window, -1 = unassigned

    static ModelState make(const WindowSet& D, const Hyperparams& hp) {
        ModelState st;
        st.K = hp.K_init;
        st.n_users = D.n_users;
        st.n_items = D.n_items;
        st.hp = hp;
        st.e.assign(static_cast<std::size_t>(st.n_users) * st.K, 0);
        st.c.assign(static_cast<std::size_t>(st.n_items) * st.K, 0);
        st.a.assign(st.K, 0);
        st.n.assign(st.n_users, 0);
        st.assignment.assign(D.size(), -1);
        return st;
    }

    std::int64_t& e_at(std::int64_t u, int env) {
        return e[static_cast<std::size_t>(u) * K + env];
    }
    std::int64_t e_at(std::int64_t u, int env) const {
        return e[static_cast<std::size_t>(u) * K + env];
    }
    std::int64_t& c_at(std::int64_t item, int env) {
        return c[static_cast<std::size_t>(item) * K + env];
    }
    std::int64_t c_at(std::int64_t item, int env) const {
        return c[static_cast<std::size_t>(item) * K + env];
    }

    // Item-slot total for an environment: sum_i c[i,M] == (B+1) * a[M].
    std::int64_t slots(int env) const {
        return static_cast<std::int64_t>(hp.B + 1) * a[env];
    }

    void assign(const WindowSet& D, std::size_t w, int env) {
        if (assignment[w] != -1)
            throw invariant_error("assign: window already assigned");
        const std::int32_t u = D.user[w];
        e_at(u, env) += 1;
        for (std::int32_t item : D.items_of(w)) c_at(item, env) += 1;
        a[env] += 1;
        n[u] += 1;
        assignment[w] = static_cast<std::int32_t>(env);
    }

    void unassign(const WindowSet& D, std::size_t w) {
        const std::int32_t env = assignment[w];
        if (env < 0) throw invariant_error("unassign: window not assigned");
        const std::int32_t u = D.user[w];
        if (--e_at(u, env) < 0) throw invariant_error("unassign: e underflow");
        for (std::int32_t item : D.items_of(w))
            if (--c_at(item, env) < 0) throw invariant_error("unassign: c underflow");
        if (--a[env] < 0) throw invariant_error("unassign: a underflow");
        if (--n[u] < 0) throw invariant_error("unassign: n underflow");
        assignment[w] = -1;
    }

    // pi(M | u) = (e[M,u] + alpha * zeta(M)) / (n[u] + K * alpha * zeta(M))
    double pi_estimate(int env, std::int64_t u) const {
        const double az = hp.alpha * hp.zeta[env];
        return (static_cast<double>(e_at(u, env)) + az) /
               (static_cast<double>(n[u]) + K * az);
    }

    // phi_M(i) = (c[i,M] + beta) / (slots(M) + |Omega| * beta)
    double phi_estimate(int env, std::int64_t item) const {
        return (static_cast<double>(c_at(item, env)) + hp.beta) /
               (static_cast<double>(slots(env)) + static_cast<double>(n_items) * hp.beta);
    }

    double transition_prob(int env, std::int64_t src, std::int64_t dst) const {
        if (src == dst) return 0.0;
        const double ps = phi_estimate(env, src);
        if (ps >= 1.0)
            throw invariant_error("transition_prob: phi(src) >= 1");
        return phi_estimate(env, dst) / (1.0 - ps);
    }

    /// Drops environment `env`, moving the last environment into its slot.
    /// `windows_of_last` are the windows currently labelled K-1; they get
    /// relabelled to `env`. The caller guarantees `env` holds no windows.
    void remove_env(int env, std::span<const std::int32_t> windows_of_last) {
        const int last = K - 1;
        if (a[env] != 0) throw invariant_error("remove_env: environment not empty");
        if (env != last) {
            for (std::int64_t u = 0; u < n_users; ++u) e_at(u, env) = e_at(u, last);
            for (std::int64_t i = 0; i < n_items; ++i) c_at(i, env) = c_at(i, last);
            a[env] = a[last];
            for (std::int32_t w : windows_of_last)
                assignment[w] = static_cast<std::int32_t>(env);
        }
        restride(K - 1);
        a.pop_back();
        K -= 1;
        hp.zeta.pop_back();
    }

    /// Appends a fresh empty environment at index K.
    void add_env() {
        restride(K + 1);
        a.push_back(0);
        K += 1;
        hp.zeta.push_back(1.0);
    }

    /// Recomputes all counts from scratch and compares. Test/diagnostic hook;
    /// throws invariant_error on the first mismatch.
    void check_consistency(const WindowSet& D) const {
        std::vector<std::int64_t> e2(e.size(), 0), c2(c.size(), 0), a2(a.size(), 0),
            n2(n.size(), 0);
        for (std::size_t w = 0; w < D.size(); ++w) {
            const std::int32_t env = assignment[w];
            if (env < 0) continue;
            const std::int32_t u = D.user[w];
            e2[static_cast<std::size_t>(u) * K + env] += 1;
            for (std::int32_t item : D.items_of(w))
                c2[static_cast<std::size_t>(item) * K + env] += 1;
            a2[env] += 1;
            n2[u] += 1;
        }
        if (e2 != e) throw invariant_error("check_consistency: e mismatch");
        if (c2 != c) throw invariant_error("check_consistency: c mismatch");
        if (a2 != a) throw invariant_error("check_consistency: a mismatch");
        if (n2 != n) throw invariant_error("check_consistency: n mismatch");
        for (int M = 0; M < K; ++M) {
            std::int64_t eu = 0;
            for (std::int64_t u = 0; u < n_users; ++u) eu += e_at(u, M);
            if (eu != a[M]) throw invariant_error("check_consistency: sum_u e != a");
            std::int64_t ci = 0;
            for (std::int64_t i = 0; i < n_items; ++i) ci += c_at(i, M);
            if (ci != slots(M)) throw invariant_error("check_consistency: sum_i c != (B+1)a");
        }
    }

private:
    // Rewrites e and c in place for a new environment stride. Shrinking
    // copies forward (dst <= src), growing resizes first and copies backward.
    void restride(int new_k) {
        if (new_k == K) return;
        const auto copy_rows = [&](std::vector<std::int64_t>& m, std::int64_t rows) {
            if (new_k < K) {
                for (std::int64_t r = 0; r < rows; ++r)
                    for (int k = 0; k < new_k; ++k)
                        m[static_cast<std::size_t>(r) * new_k + k] =
                            m[static_cast<std::size_t>(r) * K + k];
                m.resize(static_cast<std::size_t>(rows) * new_k);
            } else {
                m.resize(static_cast<std::size_t>(rows) * new_k);
                for (std::int64_t r = rows - 1; r >= 0; --r) {
                    for (int k = new_k - 1; k >= K; --k)
                        m[static_cast<std::size_t>(r) * new_k + k] = 0;
                    for (int k = K - 1; k >= 0; --k)
                        m[static_cast<std::size_t>(r) * new_k + k] =
                            m[static_cast<std::size_t>(r) * K + k];
                }
            }
        };
        copy_rows(e, n_users);
        copy_rows(c, n_items);
    }
};

/// Frozen posterior point estimates, ready for prediction and persistence.
struct Model {
    int K = 0;
    int B = 1;
    bool nt_mode = false;
    std::int64_t n_users = 0;
    std::int64_t n_items = 0;
    double alpha = 0.5;
    double beta = 1e-3;
    std::vector<double> pi;          // pi[u * K + M], each user row sums to 1
    std::vector<double> phi;         // phi[i * K + M], each env column sums to 1
    std::vector<double> env_weight;  // P[M] proportional to a[M], sums to 1
    std::vector<std::vector<double>> env_times;  // sorted residence times per env
    std::vector<std::string> user_names;
    std::vector<std::string> item_names;

    double pi_at(std::int64_t u, int env) const {
        return pi[static_cast<std::size_t>(u) * K + env];
    }
    double phi_at(std::int64_t item, int env) const {
        return phi[static_cast<std::size_t>(item) * K + env];
    }

    double transition(int env, std::int64_t src, std::int64_t dst) const {
        if (src == dst) return 0.0;
        const double ps = phi_at(src, env);
        if (ps >= 1.0) throw invariant_error("Model::transition: phi(src) >= 1");
        return phi_at(dst, env) / (1.0 - ps);
    }

    // Residence-time predictive posterior of Eq-5 shape:
    // (#times strictly above tau + 1) / (n_M + K).
    double tau_likelihood(int env, double tau) const {
        const auto& t = env_times[env];
        const auto above = static_cast<double>(
            t.end() - std::upper_bound(t.begin(), t.end(), tau));
        return (above + 1.0) / (static_cast<double>(t.size()) + K);
    }

    std::unordered_map<std::string, std::int32_t> user_index() const {
        std::unordered_map<std::string, std::int32_t> m;
        for (std::size_t i = 0; i < user_names.size(); ++i)
            m.emplace(user_names[i], static_cast<std::int32_t>(i));
        return m;
    }
    std::unordered_map<std::string, std::int32_t> item_index() const {
        std::unordered_map<std::string, std::int32_t> m;
        for (std::size_t i = 0; i < item_names.size(); ++i)
            m.emplace(item_names[i], static_cast<std::int32_t>(i));
        return m;
    }
};

}  // namespace tribeflow
