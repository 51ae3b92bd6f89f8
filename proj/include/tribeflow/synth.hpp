#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "tribeflow/common.hpp"
#include "tribeflow/corpus.hpp"

namespace tribeflow {

/// Configuration of the ground-truth trajectory generator: users are split
/// round-robin into groups, each group owning a block of items with
/// lognormal popularity weights and its own exponential inter-event rate.
/// With probability `noise` a play is drawn from another group's
/// distribution. Users join staggered by `stagger_days`.
struct SynthConfig {
    int users = 50;
    int groups = 5;
    int items_per_group = 100;
    int plays_per_day = 100;
    int days = 5;
    int stagger_days = 1;
    double lognormal_mu = 0.0;
    double lognormal_sigma = 1.0;
    double rate_step = 0.25;  // group g rate multiplier = 1 + g * rate_step
    double noise = 0.01;
    std::uint64_t seed = 7;
    bool with_geo = false;
    double geo_jitter_deg = 1.0;

    void validate() const {
        if (users < 1 || groups < 1 || items_per_group < 2 || plays_per_day < 1 || days < 1)
            throw config_error("SynthConfig: counts must be positive (and >= 2 items/group)");
        if (stagger_days < 0) throw config_error("SynthConfig: negative stagger");
        if (!(noise >= 0.0 && noise < 1.0)) throw config_error("SynthConfig: noise in [0,1)");
        if (!(lognormal_sigma > 0.0)) throw config_error("SynthConfig: sigma must be positive");
        if (groups < 2 && noise > 0.0)
            throw config_error("SynthConfig: noise needs at least 2 groups");
    }
};

struct SynthData {
    EventLog log;
    std::vector<int> user_group;
    std::unordered_map<std::int64_t, std::int64_t> true_flows;  // s * n_items + d -> count
    std::vector<std::vector<double>> group_item_probs;          // per group over all items
    std::vector<std::int64_t> group_transitions;                // per group, total transitions
    double noise = 0.0;
    bool has_geo = false;
    std::vector<double> lat, lon;

    std::int64_t flow_key(std::int64_t s, std::int64_t d) const {
        return s * static_cast<std::int64_t>(log.n_items()) + d;
    }

    /// Expected within-group transition count s -> d under the generator:
    /// the rejection chain over weights w has stationary mass w(s)(1-w(s)),
    /// so E[flow] = N_g (1-noise) w(s) w(d) / sum_i w(i)(1-w(i)). Zero for
    /// cross-group pairs (reachable only through noise).
    double analytic_flow(std::int64_t s, std::int64_t d) const {
        if (s == d) return 0.0;
        const auto items_per_group =
            static_cast<std::int64_t>(log.n_items()) / static_cast<std::int64_t>(group_item_probs.size());
        const auto g = static_cast<std::size_t>(s / items_per_group);
        if (d / items_per_group != static_cast<std::int64_t>(g)) return 0.0;
        const auto& w = group_item_probs[g];
        double z = 0.0;
        for (double v : w) z += v * (1.0 - v);
        return static_cast<double>(group_transitions[g]) * (1.0 - noise) *
               w[static_cast<std::size_t>(s)] * w[static_cast<std::size_t>(d)] / z;
    }

    double analytic_outflow(std::int64_t s) const {
        double total = 0.0;
        for (std::int64_t d = 0; d < static_cast<std::int64_t>(log.n_items()); ++d)
            total += analytic_flow(s, d);
        return total;
    }
};

/// Jensen-Shannon divergence between two distributions (natural log).
inline double js_divergence(std::span<const double> p, std::span<const double> q) {
    double js = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        if (p[i] > 0.0) js += 0.5 * p[i] * std::log(p[i] / m);
        if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m);
    }
    return js;
}

inline SynthData generate(const SynthConfig& cfg) {
    cfg.validate();
    SynthData out;
    const int n_items = cfg.groups * cfg.items_per_group;
    rng r(cfg.seed, 0x53594e54ULL);

    // Popularity weights per group, drawn once.
    out.group_item_probs.assign(cfg.groups, std::vector<double>(n_items, 0.0));
    for (int g = 0; g < cfg.groups; ++g) {
        double total = 0.0;
        for (int j = 0; j < cfg.items_per_group; ++j) {
            const double w = std::exp(r.normal(cfg.lognormal_mu, cfg.lognormal_sigma));
            out.group_item_probs[g][g * cfg.items_per_group + j] = w;
            total += w;
        }
        for (double& v : out.group_item_probs[g]) v /= total;
    }

    out.log.has_timestamps = true;
    out.log.item_names.reserve(n_items);
    for (int i = 0; i < n_items; ++i) out.log.item_names.push_back("i" + std::to_string(i));
    out.log.user_names.reserve(cfg.users);
    out.log.events.resize(cfg.users);
    out.user_group.resize(cfg.users);
    out.group_transitions.assign(cfg.groups, 0);
    out.noise = cfg.noise;

    const double base_rate = static_cast<double>(cfg.plays_per_day) / 86400.0;
    const int plays = cfg.plays_per_day * cfg.days;

    for (int u = 0; u < cfg.users; ++u) {
        out.log.user_names.push_back("u" + std::to_string(u));
        const int g = u % cfg.groups;
        out.user_group[u] = g;
        const double rate = base_rate * (1.0 + cfg.rate_step * g);
        const int join_day = cfg.days > 0 ? (u * cfg.stagger_days) % cfg.days : 0;
        double t = static_cast<double>(join_day) * 86400.0;

        std::int32_t prev = -1;
        for (int p = 0; p < plays; ++p) {
            int src_group = g;
            if (cfg.noise > 0.0 && r.uniform01() < cfg.noise) {
                int other = static_cast<int>(r.uniform_index(cfg.groups - 1));
                if (other >= g) ++other;
                src_group = other;
            }
            const auto& probs = out.group_item_probs[src_group];
            std::int32_t item;
            do {
                item = static_cast<std::int32_t>(r.categorical(probs));
            } while (item == prev);
            out.log.events[u].push_back(Event{item, t});
            if (prev >= 0) {
                out.true_flows[out.flow_key(prev, item)] += 1;
                out.group_transitions[g] += 1;
            }
            prev = item;
            t += r.exponential(rate);
        }
    }

    if (cfg.with_geo) {
        out.has_geo = true;
        out.lat.resize(n_items);
        out.lon.resize(n_items);
        const double denom = std::max(1, cfg.groups - 1);
        for (int i = 0; i < n_items; ++i) {
            const int g = i / cfg.items_per_group;
            const double clat = -45.0 + 90.0 * static_cast<double>(g) / denom;
            const double clon = -150.0 + 300.0 * static_cast<double>(g) / denom;
            out.lat[i] = std::clamp(clat + r.normal(0.0, cfg.geo_jitter_deg), -89.0, 89.0);
            out.lon[i] = std::clamp(clon + r.normal(0.0, cfg.geo_jitter_deg), -179.0, 179.0);
        }
    }
    return out;
}

}  // namespace tribeflow
