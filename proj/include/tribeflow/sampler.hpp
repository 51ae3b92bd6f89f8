#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tribeflow/adapt.hpp"
#include "tribeflow/common.hpp"
#include "tribeflow/residence.hpp"
#include "tribeflow/state.hpp"
#include "tribeflow/windows.hpp"

namespace tribeflow {

struct TrainConfig {
    int k_init = 100;
    int B = 1;
    int total_iterations = 2000;
    int adapt_every = 200;
    std::uint64_t seed = 42;
    int workers = 1;
    bool nt_mode = false;  // ignore timestamps: no tau factors, K stays fixed
    int log_every = 10;

    void validate() const {
        if (k_init < 1) throw config_error("TrainConfig: k_init must be >= 1");
        if (B < 1) throw config_error("TrainConfig: B must be >= 1");
        if (total_iterations < 0) throw config_error("TrainConfig: negative iterations");
        if (adapt_every < 1) throw config_error("TrainConfig: adapt_every must be >= 1");
        if (total_iterations > 0 && adapt_every > total_iterations)
            throw config_error("TrainConfig: adapt_every must be <= total_iterations");
        if (workers < 1) throw config_error("TrainConfig: workers must be >= 1");
        if (log_every < 1) throw config_error("TrainConfig: log_every must be >= 1");
    }
};

/// Progress hooks. on_progress receives `iter, K, joint_log_posterior`
/// convergence lines; on_adapt fires after each merge+split round.
struct TrainLogger {
    std::function<void(int iter, int K, double jlp)> on_progress;
    std::function<void(int iter, const AdaptReport& merges, const AdaptReport& splits)>
        on_adapt;
};

// RNG stream ids: stream 0 initializes assignments, stream 1 + worker drives
// that worker's passes. The sequential path is worker 0 by definition, which
// is what makes the one-worker parallel run bit-identical to it.
inline rng make_init_rng(std::uint64_t seed) { return rng(seed, 0); }
inline rng make_pass_rng(std::uint64_t seed, int worker) {
    return rng(seed, 1 + static_cast<std::uint64_t>(worker));
}

/// Assigns every window uniformly at random among K_init environments.
inline ModelState init_state(const WindowSet& D, const TrainConfig& cfg, rng& r) {
    if (cfg.B != D.B) throw config_error("init_state: config B does not match windows");
    ModelState st = ModelState::make(D, Hyperparams::make(cfg.k_init, cfg.B));
    for (std::size_t w = 0; w < D.size(); ++w)
        st.assign(D, w, static_cast<int>(r.uniform_index(static_cast<std::size_t>(st.K))));
    return st;
}

/// Unnormalized posterior over environments for one window, with the window
/// itself already removed from the counts:
///
///   weight(M) = pi(M|u) * prod_k phi_M(x_{k+1}) / (1 - phi_M(x_k))
///                       * prod_k (b_{>tau_k} + 1) / (n_M + K)
///
/// Tau factors are dropped when `tables` is null (no-timestamp mode). The
/// product stays comfortably above double underflow for B <= 12 given the
/// beta floor, so it is accumulated directly; larger B goes through logs.
inline void window_env_posterior(const ModelState& st, const EccdfTable* tables,
                                 const WindowSet& D, std::size_t w,
                                 std::vector<double>& out) {
    const int K = st.K;
    const int B = D.B;
    out.resize(static_cast<std::size_t>(K));

    const std::int32_t u = D.user[w];
    const auto items = D.items_of(w);
    const double beta = st.hp.beta;
    const double obeta = static_cast<double>(st.n_items) * beta;
    const double alpha = st.hp.alpha;
    const auto nu = static_cast<double>(st.n[u]);
    const std::int64_t* e_row = st.e.data() + static_cast<std::size_t>(u) * K;

    const bool log_space = B > 12;
    for (int M = 0; M < K; ++M) {
        const double az = alpha * st.hp.zeta[M];
        const double pi = (static_cast<double>(e_row[M]) + az) / (nu + K * az);
        out[M] = log_space ? std::log(pi) : pi;
    }

    for (int k = 0; k < B; ++k) {
        const std::int64_t* c_src = st.c.data() + static_cast<std::size_t>(items[k]) * K;
        const std::int64_t* c_dst = st.c.data() + static_cast<std::size_t>(items[k + 1]) * K;
        for (int M = 0; M < K; ++M) {
            // phi(dst) / (1 - phi(src)) with the shared denominator cancelled
            const double total = static_cast<double>(st.slots(M)) + obeta;
            const double f = (static_cast<double>(c_dst[M]) + beta) /
                             (total - (static_cast<double>(c_src[M]) + beta));
            if (log_space) out[M] += std::log(f);
            else out[M] *= f;
        }
    }

    if (tables != nullptr && D.has_taus) {
        for (double tau : D.taus_of(w)) {
            for (int M = 0; M < K; ++M) {
                const double f = tables->tau_likelihood(M, tau, K);
                if (log_space) out[M] += std::log(f);
                else out[M] *= f;
            }
        }
    }

    if (log_space) {
        double mx = out[0];
        for (double v : out) mx = std::max(mx, v);
        for (double& v : out) v = std::exp(v - mx);
    }
    for (double v : out)
        if (!(v > 0.0) || !std::isfinite(v))
            throw invariant_error("window_env_posterior: non-positive or non-finite weight");
}

/// One collapsed-Gibbs pass: visits the given windows in order, removes each
/// from the counts, scores it, draws a new environment, and reassigns it.
inline void gibbs_pass(ModelState& st, const EccdfTable* tables, const WindowSet& D,
                       std::span<const std::int32_t> windows, rng& r,
                       std::vector<double>& scratch) {
    for (std::int32_t w : windows) {
        st.unassign(D, w);
        window_env_posterior(st, tables, D, w, scratch);
        st.assign(D, w, static_cast<int>(r.categorical(scratch)));
    }
}

/// Point-estimate snapshot of the current state.
inline Model freeze(const ModelState& st, const EccdfTable* tables, bool nt_mode,
                    std::vector<std::string> user_names = {},
                    std::vector<std::string> item_names = {}) {
    Model m;
    m.K = st.K;
    m.B = st.hp.B;
    m.nt_mode = nt_mode;
    m.n_users = st.n_users;
    m.n_items = st.n_items;
    m.alpha = st.hp.alpha;
    m.beta = st.hp.beta;

    m.pi.resize(static_cast<std::size_t>(st.n_users) * st.K);
    for (std::int64_t u = 0; u < st.n_users; ++u)
        for (int M = 0; M < st.K; ++M)
            m.pi[static_cast<std::size_t>(u) * st.K + M] = st.pi_estimate(M, u);
    m.phi.resize(static_cast<std::size_t>(st.n_items) * st.K);
    for (std::int64_t i = 0; i < st.n_items; ++i)
        for (int M = 0; M < st.K; ++M)
            m.phi[static_cast<std::size_t>(i) * st.K + M] = st.phi_estimate(M, i);

    std::int64_t total = 0;
    for (std::int64_t v : st.a) total += v;
    m.env_weight.resize(static_cast<std::size_t>(st.K));
    for (int M = 0; M < st.K; ++M)
        m.env_weight[M] = total > 0 ? static_cast<double>(st.a[M]) / static_cast<double>(total)
                                    : 1.0 / st.K;

    m.env_times.assign(static_cast<std::size_t>(st.K), {});
    if (!nt_mode && tables != nullptr)
        for (int M = 0; M < st.K; ++M) m.env_times[M] = tables->times(M);

    if (user_names.empty()) {
        user_names.reserve(static_cast<std::size_t>(st.n_users));
        for (std::int64_t u = 0; u < st.n_users; ++u)
            user_names.push_back("u" + std::to_string(u));
    }
    if (item_names.empty()) {
        item_names.reserve(static_cast<std::size_t>(st.n_items));
        for (std::int64_t i = 0; i < st.n_items; ++i)
            item_names.push_back("i" + std::to_string(i));
    }
    m.user_names = std::move(user_names);
    m.item_names = std::move(item_names);
    return m;
}

/// Full single-threaded training loop: alternate a Gibbs e-step over all
/// windows with an ECCDF rebuild m-step, run the merge/split sweeps every
/// adapt_every iterations (timestamped corpora only; the no-timestamp
/// variant keeps K fixed), then freeze point estimates.
inline Model train(const WindowSet& D, const TrainConfig& cfg,
                   const TrainLogger* logger = nullptr,
                   std::vector<std::string> user_names = {},
                   std::vector<std::string> item_names = {}) {
    cfg.validate();
    if (D.size() == 0) throw config_error("train: empty window set");
    const bool nt = cfg.nt_mode || !D.has_taus;

    rng r_init = make_init_rng(cfg.seed);
    ModelState st = init_state(D, cfg, r_init);
    EccdfTable tables;
    if (!nt) tables = EccdfTable::rebuild(st, D);
    const EccdfTable* tab_ptr = nt ? nullptr : &tables;

    std::vector<std::int32_t> all(D.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<double> scratch;
    rng r_pass = make_pass_rng(cfg.seed, 0);

    if (logger && logger->on_progress)
        logger->on_progress(0, st.K, joint_log_posterior(st, D, tab_ptr));

    for (int iter = 1; iter <= cfg.total_iterations; ++iter) {
        gibbs_pass(st, tab_ptr, D, all, r_pass, scratch);
        if (!nt) tables = EccdfTable::rebuild(st, D);
        if (!nt && iter % cfg.adapt_every == 0) {
            AdaptReport merges = merge_sweep(st, tables, D);
            AdaptReport splits = split_sweep(st, tables, D);
            tables = EccdfTable::rebuild(st, D);
            if (logger && logger->on_adapt) logger->on_adapt(iter, merges, splits);
        }
        if (logger && logger->on_progress &&
            (iter % cfg.log_every == 0 || iter == cfg.total_iterations))
            logger->on_progress(iter, st.K, joint_log_posterior(st, D, tab_ptr));
    }
    return freeze(st, tab_ptr, nt, std::move(user_names), std::move(item_names));
}

}  // namespace tribeflow
