#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "tribeflow/state.hpp"
#include "tribeflow/windows.hpp"

using namespace tribeflow;

namespace {

// 1 user, `n` B=1 windows cycling over `n_items` items.
WindowSet tiny_windows(int n, int n_items) {
    WindowSet D;
    D.B = 1;
    D.has_taus = true;
    D.n_users = 1;
    D.n_items = n_items;
    D.per_user = {n};
    for (int w = 0; w < n; ++w) {
        D.user.push_back(0);
        D.items.push_back(w % n_items);
        D.items.push_back((w + 1) % n_items);
        D.taus.push_back(1.0 + w);
    }
    return D;
}

}  // namespace

TEST_CASE("assign then unassign restores the state bit for bit") {
    const auto D = tiny_windows(4, 3);
    auto hp = Hyperparams::make(2, 1);
    ModelState st = ModelState::make(D, hp);
    const ModelState before = st;
    st.assign(D, 0, 1);
    st.unassign(D, 0);
    CHECK(st.e == before.e);
    CHECK(st.c == before.c);
    CHECK(st.a == before.a);
    CHECK(st.n == before.n);
    CHECK(st.assignment == before.assignment);
}

TEST_CASE("one B=1 assignment bumps a by 1 and c by 2 slots") {
    const auto D = tiny_windows(4, 3);
    ModelState st = ModelState::make(D, Hyperparams::make(2, 1));
    st.assign(D, 0, 0);
    CHECK(st.a[0] == 1);
    std::int64_t c_total = 0;
    for (auto v : st.c) c_total += v;
    CHECK(c_total == 2);
    CHECK(st.n[0] == 1);
    CHECK(st.e_at(0, 0) == 1);
}

TEST_CASE("random assigns keep counts consistent with a brute-force recount") {
    rng r(11);
    const auto log = dedup_revisits(testutil::random_log(r, 5, 7, 15));
    const auto D = build_windows(log, 2);
    ModelState st = ModelState::make(D, Hyperparams::make(4, 2));
    for (int step = 0; step < 100; ++step) {
        const auto w = r.uniform_index(D.size());
        if (st.assignment[w] >= 0) st.unassign(D, w);
        st.assign(D, w, static_cast<int>(r.uniform_index(4)));
    }
    CHECK_NOTHROW(st.check_consistency(D));
}

TEST_CASE("double assign and bad unassign are invariant errors") {
    const auto D = tiny_windows(2, 3);
    ModelState st = ModelState::make(D, Hyperparams::make(2, 1));
    CHECK_THROWS_AS(st.unassign(D, 0), invariant_error);
    st.assign(D, 0, 0);
    CHECK_THROWS_AS(st.assign(D, 0, 1), invariant_error);
}

TEST_CASE("pi estimate matches the hand-evaluated posterior mean") {
    // e = 2 of n_u = 4 windows in env 0, K = 2, alpha = 25:
    // (2 + 25) / (4 + 50) = 1/2
    const auto D = tiny_windows(4, 3);
    auto hp = Hyperparams::make(2, 1);
    hp.alpha = 25.0;
    ModelState st = ModelState::make(D, hp);
    st.assign(D, 0, 0);
    st.assign(D, 1, 0);
    st.assign(D, 2, 1);
    st.assign(D, 3, 1);
    CHECK(st.pi_estimate(0, 0) == Catch::Approx(27.0 / 54.0));
    double total = 0.0;
    for (int M = 0; M < st.K; ++M) total += st.pi_estimate(M, 0);
    CHECK(total == Catch::Approx(1.0));
}

TEST_CASE("pi falls back to the zeta prior for unseen users") {
    const auto D = tiny_windows(2, 3);
    ModelState st = ModelState::make(D, Hyperparams::make(4, 1));
    CHECK(st.pi_estimate(0, 0) == Catch::Approx(0.25));  // 1/K before any data
    CHECK(st.pi_estimate(3, 0) == Catch::Approx(0.25));
}

TEST_CASE("pi is 1 when K = 1 and the user has data") {
    const auto D = tiny_windows(3, 3);
    ModelState st = ModelState::make(D, Hyperparams::make(1, 1));
    for (int w = 0; w < 3; ++w) st.assign(D, w, 0);
    CHECK(st.pi_estimate(0, 0) == Catch::Approx(1.0));
}

TEST_CASE("phi estimate matches the hand evaluation") {
    // 5 windows (10 item slots) in env 0 over 4 items, c[item0] = 3:
    // (3 + 0.001) / (10 + 0.004)
    WindowSet D;
    D.B = 1;
    D.has_taus = false;
    D.n_users = 1;
    D.n_items = 4;
    D.per_user = {5};
    const int pairs[5][2] = {{0, 1}, {1, 0}, {0, 2}, {2, 3}, {3, 2}};
    for (auto& p : pairs) {
        D.user.push_back(0);
        D.items.push_back(p[0]);
        D.items.push_back(p[1]);
    }
    ModelState st = ModelState::make(D, Hyperparams::make(1, 1));
    for (int w = 0; w < 5; ++w) st.assign(D, w, 0);
    REQUIRE(st.c_at(0, 0) == 3);
    CHECK(st.phi_estimate(0, 0) == Catch::Approx(3.001 / 10.004));

    double total = 0.0;
    for (int i = 0; i < 4; ++i) total += st.phi_estimate(0, i);
    CHECK(total == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("phi of an empty environment is uniform") {
    const auto D = tiny_windows(2, 5);
    ModelState st = ModelState::make(D, Hyperparams::make(2, 1));
    CHECK(st.phi_estimate(0, 3) == Catch::Approx(0.2));
}

TEST_CASE("semi-Markov transition matches Theorem-1 algebra") {
    const std::vector<double> phi{0.2, 0.3, 0.5};
    CHECK(semi_markov_transition(phi, 0, 2) == Catch::Approx(0.5 / 0.8));
    CHECK(semi_markov_transition(phi, 1, 1) == 0.0);
    for (int s = 0; s < 3; ++s) {
        double row = 0.0;
        for (int d = 0; d < 3; ++d) row += semi_markov_transition(phi, s, d);
        CHECK(row == Catch::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("phi(src) at 1 is rejected") {
    const std::vector<double> degenerate{1.0, 0.0};
    CHECK_THROWS_AS(semi_markov_transition(degenerate, 0, 1), invariant_error);
}

TEST_CASE("power iteration converges to the analytic stationary distribution") {
    // For P(s,d) = phi(d)/(1-phi(s)) the chain is reversible with stationary
    // weight phi(s)(1-phi(s)).
    const std::vector<double> phi{0.1, 0.2, 0.3, 0.4};
    std::vector<double> dist{1.0, 0.0, 0.0, 0.0};
    for (int it = 0; it < 200; ++it) {
        std::vector<double> next(4, 0.0);
        for (int s = 0; s < 4; ++s)
            for (int d = 0; d < 4; ++d) next[d] += dist[s] * semi_markov_transition(phi, s, d);
        dist = next;
    }
    double z = 0.0;
    for (double p : phi) z += p * (1.0 - p);
    for (int s = 0; s < 4; ++s)
        CHECK(dist[s] == Catch::Approx(phi[s] * (1.0 - phi[s]) / z).epsilon(1e-9));
}

TEST_CASE("doubling counts while halving concentrations tightens toward empirical rates") {
    rng r(5);
    for (int trial = 0; trial < 50; ++trial) {
        const auto e = static_cast<double>(1 + r.uniform_index(20));
        const auto extra = static_cast<double>(r.uniform_index(20));
        const double n = e + extra;
        const double alpha = 0.5 + r.uniform01() * 30.0;
        const int K = 2;
        const double emp = e / n;
        const double est1 = (e + alpha) / (n + K * alpha);
        const double est2 = (2 * e + alpha / 2) / (2 * n + K * alpha / 2);
        CHECK(std::abs(est2 - emp) <= std::abs(est1 - emp) + 1e-12);
    }
}

TEST_CASE("remove_env and add_env preserve consistency") {
    rng r(17);
    const auto log = dedup_revisits(testutil::random_log(r, 4, 6, 12));
    const auto D = build_windows(log, 1);
    ModelState st = ModelState::make(D, Hyperparams::make(3, 1));
    for (std::size_t w = 0; w < D.size(); ++w)
        st.assign(D, w, static_cast<int>(r.uniform_index(2)));  // env 2 stays empty

    std::vector<std::int32_t> windows_of_last;
    for (std::size_t w = 0; w < D.size(); ++w)
        if (st.assignment[w] == 2) windows_of_last.push_back(static_cast<std::int32_t>(w));
    st.remove_env(2, windows_of_last);
    CHECK(st.K == 2);
    CHECK_NOTHROW(st.check_consistency(D));

    st.add_env();
    CHECK(st.K == 3);
    CHECK(st.a[2] == 0);
    CHECK_NOTHROW(st.check_consistency(D));
}
