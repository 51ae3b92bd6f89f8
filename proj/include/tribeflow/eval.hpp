#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "tribeflow/baselines.hpp"
#include "tribeflow/common.hpp"
#include "tribeflow/predict.hpp"
#include "tribeflow/windows.hpp"

namespace tribeflow {

/// Anything that can score every item as the next destination for a query.
struct Scorer {
    virtual ~Scorer() = default;
    virtual void score(const Query& q, std::span<double> out) const = 0;
};

struct TribeFlowScorer : Scorer {
    const Model& model;
    explicit TribeFlowScorer(const Model& m) : model(m) {}
    void score(const Query& q, std::span<double> out) const override {
        score_all_items(model, q, out);
    }
};

struct McMleScorer : Scorer {
    const McMle& mc;
    explicit McMleScorer(const McMle& m) : mc(m) {}
    void score(const Query& q, std::span<double> out) const override {
        const std::int64_t s = q.history.back();
        for (std::int64_t d = 0; d < mc.stats.n_items; ++d)
            out[static_cast<std::size_t>(d)] = mc.prob(s, d);
        out[static_cast<std::size_t>(s)] = 0.0;
    }
};

struct PopularityScorer : Scorer {
    std::vector<double> counts;
    explicit PopularityScorer(const EventLog& train) {
        counts.assign(train.n_items(), 0.0);
        for (const auto& seq : train.events)
            for (const Event& ev : seq) counts[ev.item] += 1.0;
    }
    void score(const Query& q, std::span<double> out) const override {
        std::copy(counts.begin(), counts.end(), out.begin());
        out[static_cast<std::size_t>(q.history.back())] = 0.0;
    }
};

struct GravityScorer : Scorer {
    GravityParams params;
    const GeoTable& geo;
    const TransitionStats& stats;
    GravityScorer(GravityParams p, const GeoTable& g, const TransitionStats& s)
        : params(p), geo(g), stats(s) {}
    void score(const Query& q, std::span<double> out) const override {
        const std::int64_t s = q.history.back();
        for (std::int64_t d = 0; d < stats.n_items; ++d) {
            double v = 0.0;
            if (d != s && geo.has(s) && geo.has(d)) {
                const double dist = geo.distance(s, d);
                if (dist > 0.0 && stats.out_count[s] > 0 && stats.in_count[d] > 0)
                    v = gravity_flow(params, static_cast<double>(stats.out_count[s]),
                                     static_cast<double>(stats.in_count[d]), dist);
            }
            out[static_cast<std::size_t>(d)] = v;
        }
    }
};

/// Pessimistic 1-based rank of `true_item` under the scores: ties share the
/// worst position among equals, so a constant scorer cannot inflate MRR.
inline std::int64_t pessimistic_rank(std::span<const double> scores, std::int32_t true_item) {
    const double st = scores[static_cast<std::size_t>(true_item)];
    std::int64_t rank = 0;
    for (double s : scores) rank += s >= st;
    return rank;
}

/// Reciprocal rank: 1 / position of the true destination, position counted
/// pessimistically.
inline double reciprocal_rank(std::span<const double> scores, std::int32_t true_item) {
    return 1.0 / static_cast<double>(pessimistic_rank(scores, true_item));
}

/// Two-sample Kolmogorov-Smirnov statistic: the sup distance between the
/// empirical CDFs.
inline double ks_statistic(std::span<const double> sample_a, std::span<const double> sample_b) {
    if (sample_a.empty() || sample_b.empty())
        throw config_error("ks_statistic: empty sample");
    std::vector<double> a(sample_a.begin(), sample_a.end());
    std::vector<double> b(sample_b.begin(), sample_b.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        const double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= v) ++i;
        while (j < b.size() && b[j] <= v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

struct EvalReport {
    double mrr = 0.0;
    double precision_at_1 = 0.0;
    double precision_at_5 = 0.0;
    double precision_at_10 = 0.0;
    double predll_total = 0.0;
    double predll_mean = 0.0;
    std::int64_t predll_transitions = 0;
    std::optional<double> flow_mae;
    std::int64_t flow_pairs = 0;
    std::optional<double> ks;
    std::vector<double> rr_values;
    std::int64_t queries = 0;
    std::int64_t skipped_unknown_history = 0;
    std::int64_t missing_destination = 0;

    void print_table(std::ostream& os) const {
        os << "metric            value\n";
        os << "----------------  ----------\n";
        const auto row = [&](const char* name, double v) {
            os << name;
            for (std::size_t i = std::string(name).size(); i < 18; ++i) os << ' ';
            os << v << '\n';
        };
        row("mrr", mrr);
        row("precision@1", precision_at_1);
        row("precision@5", precision_at_5);
        row("precision@10", precision_at_10);
        if (predll_transitions > 0) {
            row("predll_total", predll_total);
            row("predll_mean", predll_mean);
        }
        if (flow_mae) row("flow_mae", *flow_mae);
        if (ks) row("ks_statistic", *ks);
        row("queries", static_cast<double>(queries));
        row("skipped_history", static_cast<double>(skipped_unknown_history));
        row("missing_dest", static_cast<double>(missing_destination));
    }

    void print_kv(std::ostream& os, const std::string& prefix = "") const {
        os << prefix << "mrr=" << mrr << '\n';
        os << prefix << "precision_at_1=" << precision_at_1 << '\n';
        os << prefix << "precision_at_5=" << precision_at_5 << '\n';
        os << prefix << "precision_at_10=" << precision_at_10 << '\n';
        if (predll_transitions > 0) {
            os << prefix << "predll_total=" << predll_total << '\n';
            os << prefix << "predll_mean=" << predll_mean << '\n';
        }
        if (flow_mae) os << prefix << "flow_mae=" << *flow_mae << '\n';
        if (ks) os << prefix << "ks_statistic=" << *ks << '\n';
        os << prefix << "queries=" << queries << '\n';
        os << prefix << "skipped_history=" << skipped_unknown_history << '\n';
        os << prefix << "missing_dest=" << missing_destination << '\n';
    }
};

/// Builds one query per test window (history = first B items plus all taus,
/// truth = last item) and accumulates rank metrics. `translate_user` /
/// `translate_item` map test-corpus ids into the scorer's id space; identity
/// by default. Queries whose history contains an item the scorer's model has
/// never seen are skipped and counted; a missing true destination contributes
/// RR = 0 and is flagged.
inline EvalReport evaluate_ranking(
    const Scorer& scorer, const WindowSet& test, std::int64_t n_score_items,
    const std::function<std::int32_t(std::int32_t)>& translate_user = nullptr,
    const std::function<std::int32_t(std::int32_t)>& translate_item = nullptr) {
    EvalReport rep;
    std::vector<double> scores(static_cast<std::size_t>(n_score_items));
    const auto tr_user = [&](std::int32_t u) { return translate_user ? translate_user(u) : u; };
    const auto tr_item = [&](std::int32_t i) { return translate_item ? translate_item(i) : i; };

    for (std::size_t w = 0; w < test.size(); ++w) {
        const auto items = test.items_of(w);
        Query q;
        q.user = tr_user(test.user[w]);
        bool unknown_history = false;
        for (int k = 0; k < test.B; ++k) {
            const std::int32_t item = tr_item(items[k]);
            if (item < 0) {
                unknown_history = true;
                break;
            }
            q.history.push_back(item);
        }
        if (unknown_history) {
            rep.skipped_unknown_history += 1;
            continue;
        }
        const auto taus = test.taus_of(w);
        q.taus.assign(taus.begin(), taus.end());

        const std::int32_t truth = tr_item(items[test.B]);
        scorer.score(q, scores);
        rep.queries += 1;
        if (truth < 0) {
            rep.missing_destination += 1;
            rep.rr_values.push_back(0.0);
            continue;
        }
        const std::int64_t rank = pessimistic_rank(scores, truth);
        rep.rr_values.push_back(1.0 / static_cast<double>(rank));
        rep.precision_at_1 += rank <= 1;
        rep.precision_at_5 += rank <= 5;
        rep.precision_at_10 += rank <= 10;
    }
    if (rep.queries > 0) {
        double total = 0.0;
        for (double v : rep.rr_values) total += v;
        rep.mrr = total / static_cast<double>(rep.queries);
        rep.precision_at_1 /= static_cast<double>(rep.queries);
        rep.precision_at_5 /= static_cast<double>(rep.queries);
        rep.precision_at_10 /= static_cast<double>(rep.queries);
    }
    return rep;
}

/// Predictive log likelihood sum log P[d | s] over the given transitions.
/// Returns {total, mean, count}; transitions with an unmappable endpoint are
/// skipped via the `valid` filter the caller encodes in `prob` by returning
/// a negative value.
inline std::tuple<double, double, std::int64_t> pred_ll(
    const std::function<double(std::int64_t, std::int64_t)>& prob,
    const std::vector<std::pair<std::int32_t, std::int32_t>>& transitions) {
    double total = 0.0;
    std::int64_t used = 0;
    for (const auto& [s, d] : transitions) {
        const double p = prob(s, d);
        if (p < 0.0) continue;  // caller marked the pair unusable
        total += std::log(p);
        used += 1;
    }
    return {total, used > 0 ? total / static_cast<double>(used) : 0.0, used};
}

/// Mean absolute error between estimated and observed flows over the
/// observed pairs. The estimator returns a negative value for pairs it
/// cannot score (excluded and counted). Throws if no pair is usable.
inline std::pair<double, std::int64_t> flow_mae(
    const std::unordered_map<std::int64_t, std::int64_t>& observed, std::int64_t n_items,
    const std::function<double(std::int64_t, std::int64_t)>& estimate) {
    double total = 0.0;
    std::int64_t used = 0;
    for (const auto& [key, count] : observed) {
        const std::int64_t s = key / n_items, d = key % n_items;
        const double est = estimate(s, d);
        if (est < 0.0) continue;
        total += std::abs(est - static_cast<double>(count));
        used += 1;
    }
    if (used == 0) throw data_error("flow_mae: no common (source, destination) support");
    return {total / static_cast<double>(used), used};
}

}  // namespace tribeflow
