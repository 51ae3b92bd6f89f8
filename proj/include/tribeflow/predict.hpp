#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "tribeflow/common.hpp"
#include "tribeflow/state.hpp"

namespace tribeflow {

/// A prediction request: the user's recent history (oldest first, at most
/// B+1 items) with optional inter-event times. `taus` may hold the gaps
/// between the history items, optionally followed by the time already spent
/// on the last item; an empty vector skips the time factors. user == -1
/// means an unknown user, which falls back to the global environment
/// weights.
struct Query {
    std::int32_t user = -1;
    std::vector<std::int32_t> history;
    std::vector<double> taus;
};

namespace detail {

inline void validate_query(const Model& m, const Query& q) {
    if (q.history.empty()) throw config_error("query: empty history");
    if (q.history.size() > static_cast<std::size_t>(m.B) + 1)
        throw config_error("query: history longer than B+1");
    for (std::int32_t item : q.history)
        if (item < 0 || item >= m.n_items)
            throw data_error("query: unknown item in history");
    if (q.user >= m.n_users) throw data_error("query: user id out of range");
    const std::size_t hm = q.history.size();
    if (!q.taus.empty() && q.taus.size() != hm - 1 && q.taus.size() != hm)
        throw config_error("query: need history-1 or history inter-event times");
}

}  // namespace detail

/// Posterior over environments given the observed history: prior user
/// preference (or global weights for unknown users) times the semi-Markov
/// step probabilities of the observed transitions times the residence-time
/// likelihoods. Normalized.
inline std::vector<double> env_posterior(const Model& m, const Query& q) {
    detail::validate_query(m, q);
    std::vector<double> w(static_cast<std::size_t>(m.K));
    for (int M = 0; M < m.K; ++M)
        w[M] = q.user >= 0 ? m.pi_at(q.user, M) : m.env_weight[M];
    for (std::size_t k = 0; k + 1 < q.history.size(); ++k)
        for (int M = 0; M < m.K; ++M)
            w[M] *= m.transition(M, q.history[k], q.history[k + 1]);
    if (!m.nt_mode)
        for (double tau : q.taus)
            for (int M = 0; M < m.K; ++M) w[M] *= m.tau_likelihood(M, tau);

    double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (!(total > 0.0))
        throw data_error("env_posterior: history has zero probability (repeated item?)");
    for (double& v : w) v /= total;
    return w;
}

/// Unnormalized next-item scores over every item:
/// score(d) = sum_M P_M(last, d) * posterior(M). The current item scores 0.
inline void score_all_items(const Model& m, const Query& q, std::span<double> out) {
    const std::vector<double> post = env_posterior(m, q);
    const std::int32_t last = q.history.back();
    std::vector<double> scaled(post);
    for (int M = 0; M < m.K; ++M) scaled[M] /= 1.0 - m.phi_at(last, M);

    for (std::int64_t d = 0; d < m.n_items; ++d) {
        const double* row = m.phi.data() + static_cast<std::size_t>(d) * m.K;
        double s = 0.0;
        for (int M = 0; M < m.K; ++M) s += scaled[M] * row[M];
        out[static_cast<std::size_t>(d)] = s;
    }
    out[static_cast<std::size_t>(last)] = 0.0;
}

/// Normalized next-item distribution over the candidate set.
inline std::vector<double> next_item_likelihood(const Model& m, const Query& q,
                                                std::span<const std::int32_t> candidates) {
    if (candidates.empty()) throw config_error("next_item_likelihood: empty candidate set");
    const std::vector<double> post = env_posterior(m, q);
    const std::int32_t last = q.history.back();
    std::vector<double> p(candidates.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const std::int32_t d = candidates[i];
        if (d < 0 || d >= m.n_items) throw data_error("next_item_likelihood: unknown candidate");
        double s = 0.0;
        for (int M = 0; M < m.K; ++M) s += m.transition(M, last, d) * post[M];
        p[i] = s;
        total += s;
    }
    if (!(total > 0.0))
        throw data_error("next_item_likelihood: no candidate has positive probability");
    for (double& v : p) v /= total;
    return p;
}

/// Candidates ordered by unnormalized score, descending; ties break toward
/// the smaller item id.
inline std::vector<std::pair<std::int32_t, double>> rank_candidates(
    const Model& m, const Query& q, std::span<const std::int32_t> candidates) {
    const std::vector<double> post = env_posterior(m, q);
    const std::int32_t last = q.history.back();
    std::vector<std::pair<std::int32_t, double>> ranked;
    ranked.reserve(candidates.size());
    for (std::int32_t d : candidates) {
        if (d < 0 || d >= m.n_items) throw data_error("rank_candidates: unknown candidate");
        double s = 0.0;
        for (int M = 0; M < m.K; ++M) s += m.transition(M, last, d) * post[M];
        ranked.emplace_back(d, s);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& l, const auto& r) {
        if (l.second != r.second) return l.second > r.second;
        return l.first < r.first;
    });
    return ranked;
}

/// All-candidates overload.
inline std::vector<std::pair<std::int32_t, double>> rank_candidates(const Model& m,
                                                                    const Query& q) {
    std::vector<std::int32_t> all(static_cast<std::size_t>(m.n_items));
    std::iota(all.begin(), all.end(), 0);
    return rank_candidates(m, q, all);
}

/// Non-personalized transition likelihood
/// P[d | s] = sum_M phi_M(d) phi_M(s) P[M], normalized over d != s.
/// Zero by convention when d == s.
inline double pairwise_likelihood(const Model& m, std::int64_t src, std::int64_t dst) {
    if (src == dst) return 0.0;
    const double* srow = m.phi.data() + static_cast<std::size_t>(src) * m.K;
    const double* drow = m.phi.data() + static_cast<std::size_t>(dst) * m.K;
    double num = 0.0, denom = 0.0;
    for (int M = 0; M < m.K; ++M) {
        num += srow[M] * drow[M] * m.env_weight[M];
        denom += srow[M] * (1.0 - srow[M]) * m.env_weight[M];
    }
    if (!(denom > 0.0)) throw invariant_error("pairwise_likelihood: degenerate phi");
    return num / denom;
}

/// Expected transition count from src to dst given the total flow out of src.
inline double flow_estimate(const Model& m, std::int64_t src, std::int64_t dst,
                            double total_outflow) {
    if (total_outflow < 0.0) throw config_error("flow_estimate: negative outflow");
    return total_outflow * pairwise_likelihood(m, src, dst);
}

}  // namespace tribeflow
