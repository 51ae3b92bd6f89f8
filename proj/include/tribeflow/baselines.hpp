#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tribeflow/common.hpp"
#include "tribeflow/corpus.hpp"

namespace tribeflow {

constexpr double kEarthRadiusKm = 6371.0;

/// Great-circle distance in kilometers between two (lat, lon) points given
/// in degrees.
inline double haversine(double lat1, double lon1, double lat2, double lon2) {
    const double d2r = M_PI / 180.0;
    const double dlat = (lat2 - lat1) * d2r;
    const double dlon = (lon2 - lon1) * d2r;
    const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(lat1 * d2r) * std::cos(lat2 * d2r) * std::sin(dlon / 2) *
                         std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

/// Item coordinates, indexed by dense item id. Items without a row in the
/// geo file stay absent and are excluded from gravity fitting.
struct GeoTable {
    std::vector<double> lat, lon;
    std::vector<char> present;

    bool has(std::int64_t item) const {
        return item >= 0 && item < static_cast<std::int64_t>(present.size()) &&
               present[static_cast<std::size_t>(item)];
    }
    double distance(std::int64_t a, std::int64_t b) const {
        return haversine(lat[static_cast<std::size_t>(a)], lon[static_cast<std::size_t>(a)],
                         lat[static_cast<std::size_t>(b)], lon[static_cast<std::size_t>(b)]);
    }
};

/// Loads `item \t lat \t lon` rows, resolving item names through the given
/// dictionary. Unknown items are ignored (they cannot appear in transitions).
inline GeoTable load_geo(std::istream& in,
                         const std::unordered_map<std::string, std::int32_t>& item_index,
                         std::size_t n_items) {
    GeoTable geo;
    geo.lat.assign(n_items, 0.0);
    geo.lon.assign(n_items, 0.0);
    geo.present.assign(n_items, 0);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = detail::split_tabs(line);
        if (fields.size() != 3)
            throw data_error("geo line " + std::to_string(line_no) + ": expected 3 fields");
        double la, lo;
        try {
            la = std::stod(std::string(fields[1]));
            lo = std::stod(std::string(fields[2]));
        } catch (const std::exception&) {
            throw data_error("geo line " + std::to_string(line_no) + ": bad coordinate");
        }
        if (la < -90.0 || la > 90.0 || lo < -180.0 || lo > 180.0)
            throw data_error("geo line " + std::to_string(line_no) + ": coordinate out of range");
        auto it = item_index.find(std::string(fields[0]));
        if (it == item_index.end()) continue;
        geo.lat[it->second] = la;
        geo.lon[it->second] = lo;
        geo.present[it->second] = 1;
    }
    return geo;
}

/// Transition bookkeeping over an event log: pair counts, source totals r_s,
/// destination totals n_d, and raw item visit counts.
struct TransitionStats {
    std::int64_t n_items = 0;
    std::unordered_map<std::int64_t, std::int64_t> pair_count;  // s * n_items + d
    std::vector<std::int64_t> out_count;    // r_s
    std::vector<std::int64_t> in_count;     // n_d
    std::vector<std::int64_t> visit_count;  // all appearances
    std::int64_t total_transitions = 0;

    std::int64_t key(std::int64_t s, std::int64_t d) const { return s * n_items + d; }
    std::int64_t pairs(std::int64_t s, std::int64_t d) const {
        auto it = pair_count.find(key(s, d));
        return it == pair_count.end() ? 0 : it->second;
    }
};

inline TransitionStats transition_stats(const EventLog& log) {
    TransitionStats st;
    st.n_items = static_cast<std::int64_t>(log.n_items());
    st.out_count.assign(log.n_items(), 0);
    st.in_count.assign(log.n_items(), 0);
    st.visit_count.assign(log.n_items(), 0);
    for (const auto& seq : log.events) {
        for (std::size_t i = 0; i < seq.size(); ++i) {
            st.visit_count[seq[i].item] += 1;
            if (i + 1 < seq.size()) {
                st.pair_count[st.key(seq[i].item, seq[i + 1].item)] += 1;
                st.out_count[seq[i].item] += 1;
                st.in_count[seq[i + 1].item] += 1;
                st.total_transitions += 1;
            }
        }
    }
    return st;
}

/// Gravity model parameters: flow(s, d) = exp(theta0) r_s^theta1 n_d^theta2
/// / dist(d,s)^theta3.
struct GravityParams {
    double theta0 = 0.0, theta1 = 0.0, theta2 = 0.0, theta3 = 0.0;
    std::int64_t pairs_used = 0;
    std::int64_t pairs_excluded = 0;  // self pairs, zero distance, missing geo
    int iterations = 0;
};

/// Poisson regression of observed pair counts on
/// log mu = theta0 + theta1 log r_s + theta2 log n_d - theta3 log dist(d, s),
/// fitted by iteratively reweighted least squares with step halving so the
/// log likelihood never decreases. Converges when no parameter moves by more
/// than 1e-8, capped at 100 iterations.
inline GravityParams fit_gravity(const TransitionStats& stats, const GeoTable& geo,
                                 std::vector<double>* ll_trace = nullptr) {
    std::vector<std::array<double, 4>> X;
    std::vector<double> y;
    GravityParams params;
    for (const auto& [k, count] : stats.pair_count) {
        const std::int64_t s = k / stats.n_items;
        const std::int64_t d = k % stats.n_items;
        if (s == d || !geo.has(s) || !geo.has(d)) {
            params.pairs_excluded += 1;
            continue;
        }
        const double dist = geo.distance(s, d);
        if (!(dist > 0.0)) {
            params.pairs_excluded += 1;
            continue;
        }
        X.push_back({1.0, std::log(static_cast<double>(stats.out_count[s])),
                     std::log(static_cast<double>(stats.in_count[d])), std::log(dist)});
        y.push_back(static_cast<double>(count));
    }
    if (X.size() < 4)
        throw data_error("fit_gravity: need at least 4 usable (source, destination) pairs");
    params.pairs_used = static_cast<std::int64_t>(X.size());

    std::array<double, 4> theta{0.0, 0.0, 0.0, 0.0};
    const auto log_lik = [&](const std::array<double, 4>& th) {
        double ll = 0.0;
        for (std::size_t r = 0; r < X.size(); ++r) {
            double eta = 0.0;
            for (int j = 0; j < 4; ++j) eta += th[j] * X[r][j];
            eta = std::min(eta, 600.0);
            ll += y[r] * eta - std::exp(eta);
        }
        return ll;
    };

    double ll = log_lik(theta);
    if (ll_trace) ll_trace->push_back(ll);
    for (int it = 1; it <= 100; ++it) {
        params.iterations = it;
        // Normal equations X^T W X dtheta-system with W = mu.
        std::array<std::array<double, 5>, 4> A{};  // augmented [XtWX | XtWz]
        for (std::size_t r = 0; r < X.size(); ++r) {
            double eta = 0.0;
            for (int j = 0; j < 4; ++j) eta += theta[j] * X[r][j];
            eta = std::min(eta, 600.0);
            const double mu = std::exp(eta);
            const double z = eta + (y[r] - mu) / mu;
            for (int i = 0; i < 4; ++i) {
                for (int j = 0; j < 4; ++j) A[i][j] += mu * X[r][i] * X[r][j];
                A[i][4] += mu * X[r][i] * z;
            }
        }
        // Gaussian elimination with partial pivoting.
        std::array<double, 4> next{};
        double scale = 0.0;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) scale = std::max(scale, std::abs(A[i][j]));
        for (int col = 0; col < 4; ++col) {
            int piv = col;
            for (int r = col + 1; r < 4; ++r)
                if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
            if (std::abs(A[piv][col]) < 1e-12 * scale)
                throw data_error("fit_gravity: singular design matrix");
            std::swap(A[col], A[piv]);
            for (int r = 0; r < 4; ++r) {
                if (r == col) continue;
                const double f = A[r][col] / A[col][col];
                for (int j = col; j < 5; ++j) A[r][j] -= f * A[col][j];
            }
        }
        for (int i = 0; i < 4; ++i) next[i] = A[i][4] / A[i][i];

        // Step halving keeps the Poisson log likelihood non-decreasing.
        double step = 1.0;
        std::array<double, 4> cand{};
        double cand_ll = -std::numeric_limits<double>::infinity();
        for (int h = 0; h < 30; ++h) {
            for (int j = 0; j < 4; ++j) cand[j] = theta[j] + step * (next[j] - theta[j]);
            cand_ll = log_lik(cand);
            if (cand_ll >= ll) break;
            step *= 0.5;
        }
        if (cand_ll < ll) break;  // no uphill step left

        double max_change = 0.0;
        for (int j = 0; j < 4; ++j) max_change = std::max(max_change, std::abs(cand[j] - theta[j]));
        theta = cand;
        ll = cand_ll;
        if (ll_trace) ll_trace->push_back(ll);
        if (max_change < 1e-8) break;
    }
    for (double v : theta)
        if (!std::isfinite(v)) throw data_error("fit_gravity: fit diverged");
    params.theta0 = theta[0];
    params.theta1 = theta[1];
    params.theta2 = theta[2];
    params.theta3 = -theta[3];
    return params;
}

/// Expected flow under fitted gravity parameters.
inline double gravity_flow(const GravityParams& p, double r_s, double n_d, double dist) {
    if (!(dist > 0.0)) throw data_error("gravity_flow: zero distance");
    return std::exp(p.theta0) * std::pow(r_s, p.theta1) * std::pow(n_d, p.theta2) /
           std::pow(dist, p.theta3);
}

/// Smoothed first-order Markov chain: P[d|s] = (n_sd + eps) / (n_s. + |Omega| eps).
struct McMle {
    TransitionStats stats;
    double eps = 1e-3;

    static McMle fit(const EventLog& log, double eps = 1e-3) {
        if (!(eps > 0.0)) throw config_error("McMle: eps must be positive");
        return McMle{transition_stats(log), eps};
    }

    double prob(std::int64_t s, std::int64_t d) const {
        const double denom = static_cast<double>(stats.out_count[static_cast<std::size_t>(s)]) +
                             static_cast<double>(stats.n_items) * eps;
        return (static_cast<double>(stats.pairs(s, d)) + eps) / denom;
    }
};

/// Items ordered by total visit count, ties by ascending id.
inline std::vector<std::int32_t> popularity_rank(const EventLog& log) {
    std::vector<std::int64_t> count(log.n_items(), 0);
    for (const auto& seq : log.events)
        for (const Event& ev : seq) count[ev.item] += 1;
    std::vector<std::int32_t> order(log.n_items());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int32_t>(i);
    std::sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
        if (count[a] != count[b]) return count[a] > count[b];
        return a < b;
    });
    return order;
}

}  // namespace tribeflow
