// Command-line front end: train / eval / predict / synth / export-json.
// Exit codes: 0 success, 1 usage or configuration error, 2 data error.

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tribeflow/tribeflow.hpp"

namespace tf = tribeflow;

namespace {

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw tf::data_error("cannot open " + path);
    return in;
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw tf::data_error("cannot write " + path);
    return out;
}

tf::EventLog load_corpus(const std::string& path, bool no_timestamps) {
    auto in = open_input(path);
    return tf::parse_events(in, !no_timestamps);
}

// Maps ids of a freshly parsed corpus into the model's id space (-1 when the
// model has never seen the name).
struct Translation {
    std::vector<std::int32_t> user, item;

    static Translation make(const tf::EventLog& log, const tf::Model& model) {
        Translation tr;
        const auto users = model.user_index();
        const auto items = model.item_index();
        tr.user.resize(log.n_users(), -1);
        tr.item.resize(log.n_items(), -1);
        for (std::size_t u = 0; u < log.n_users(); ++u) {
            auto it = users.find(log.user_names[u]);
            if (it != users.end()) tr.user[u] = it->second;
        }
        for (std::size_t i = 0; i < log.n_items(); ++i) {
            auto it = items.find(log.item_names[i]);
            if (it != items.end()) tr.item[i] = it->second;
        }
        return tr;
    }
};

// Rewrites a corpus into the model's item id space, dropping events whose
// item the model does not know (counted). User grouping is preserved.
tf::EventLog translate_log(const tf::EventLog& log, const tf::Model& model,
                           std::size_t* dropped_events = nullptr) {
    const auto tr = Translation::make(log, model);
    tf::EventLog out;
    out.has_timestamps = log.has_timestamps;
    out.user_names = log.user_names;
    out.item_names = model.item_names;
    out.events.resize(log.events.size());
    std::size_t dropped = 0;
    for (std::size_t u = 0; u < log.events.size(); ++u) {
        for (const auto& ev : log.events[u]) {
            const std::int32_t item = tr.item[ev.item];
            if (item < 0) {
                ++dropped;
                continue;
            }
            out.events[u].push_back(tf::Event{item, ev.timestamp});
        }
    }
    if (dropped_events) *dropped_events = dropped;
    return out;
}

int cmd_train(const std::string& corpus_path, const std::string& out_path,
              std::string log_path, tf::TrainConfig cfg, bool no_timestamps,
              bool export_json) {
    auto log = tf::dedup_revisits(load_corpus(corpus_path, no_timestamps));
    const auto D = tf::build_windows(log, cfg.B);

    if (log_path.empty()) log_path = out_path + ".log";
    std::ofstream progress;
    std::ostream* ps = nullptr;
    if (log_path == "-") {
        ps = &std::cerr;
    } else {
        progress = open_output(log_path);
        ps = &progress;
    }

    tf::TrainLogger logger;
    logger.on_progress = [&](int iter, int K, double jlp) {
        (*ps) << iter << ',' << K << ',' << std::setprecision(12) << jlp << '\n';
    };
    logger.on_adapt = [&](int iter, const tf::AdaptReport& merges,
                          const tf::AdaptReport& splits) {
        for (const auto& a : merges.actions)
            (*ps) << "adapt," << iter << ",merge," << a.env_a << ',' << a.env_b << ','
                  << a.moved_windows << ',' << a.delta << '\n';
        for (const auto& a : splits.actions)
            (*ps) << "adapt," << iter << ",split," << a.env_a << ',' << a.env_b << ','
                  << a.moved_windows << ',' << a.delta << '\n';
    };

    const tf::Model model =
        cfg.workers > 1
            ? tf::run_parallel(D, cfg, &logger, log.user_names, log.item_names)
            : tf::train(D, cfg, &logger, log.user_names, log.item_names);

    auto out = open_output(out_path);
    tf::save_model(model, out);
    if (export_json) {
        auto jout = open_output(out_path + ".json");
        tf::export_model_json(model, jout);
    }
    std::cerr << "trained K=" << model.K << " |U|=" << model.n_users
              << " |Omega|=" << model.n_items << " -> " << out_path << '\n';
    return 0;
}

std::vector<std::pair<std::int32_t, std::int32_t>> translated_transitions(
    const tf::EventLog& test, const Translation& tr, std::int64_t* skipped) {
    std::vector<std::pair<std::int32_t, std::int32_t>> out;
    for (const auto& seq : test.events)
        for (std::size_t i = 1; i < seq.size(); ++i) {
            const std::int32_t s = tr.item[seq[i - 1].item];
            const std::int32_t d = tr.item[seq[i].item];
            if (s < 0 || d < 0) {
                if (skipped) ++*skipped;
                continue;
            }
            out.emplace_back(s, d);
        }
    return out;
}

int cmd_eval(const std::string& model_path, const std::string& test_path,
             const std::string& train_path, const std::string& baseline,
             const std::string& geo_path, const std::string& metric, bool no_timestamps,
             double eps) {
    auto min = open_input(model_path);
    const tf::Model model = tf::load_model(min);

    const auto test_raw = tf::dedup_revisits(load_corpus(test_path, no_timestamps));
    const auto tr = Translation::make(test_raw, model);
    const auto test_windows = tf::build_windows(test_raw, model.B);

    const bool want_rank = metric == "all" || metric == "mrr";
    const bool want_predll = metric == "all" || metric == "predll";
    const bool want_flows = metric == "flows";

    std::optional<tf::EventLog> train_log;
    if (!train_path.empty())
        train_log = translate_log(tf::dedup_revisits(load_corpus(train_path, no_timestamps)),
                                  model);
    if ((!baseline.empty() || want_flows) && !train_log)
        throw tf::config_error("--train is required for baselines and flow evaluation");

    tf::GeoTable geo;
    if (!geo_path.empty()) {
        auto gin = open_input(geo_path);
        geo = tf::load_geo(gin, model.item_index(), static_cast<std::size_t>(model.n_items));
    }
    if (baseline == "gravity" && geo_path.empty())
        throw tf::config_error("--baseline gravity requires --geo");

    const auto tr_user = [&](std::int32_t u) { return tr.user[u]; };
    const auto tr_item = [&](std::int32_t i) { return tr.item[i]; };

    tf::EvalReport model_rep;
    const tf::TribeFlowScorer model_scorer(model);
    if (want_rank)
        model_rep = tf::evaluate_ranking(model_scorer, test_windows, model.n_items, tr_user,
                                         tr_item);

    std::vector<std::pair<std::int32_t, std::int32_t>> transitions;
    if (want_predll || want_flows) {
        std::int64_t skipped = 0;
        transitions = translated_transitions(test_raw, tr, &skipped);
        if (want_predll) {
            auto [total, mean, used] = tf::pred_ll(
                [&](std::int64_t s, std::int64_t d) {
                    return s == d ? -1.0 : tf::pairwise_likelihood(model, s, d);
                },
                transitions);
            model_rep.predll_total = total;
            model_rep.predll_mean = mean;
            model_rep.predll_transitions = used;
        }
    }

    // Baseline setup (train corpus already translated into model ids).
    std::optional<tf::McMle> mc;
    std::optional<tf::TransitionStats> train_stats;
    std::optional<tf::GravityParams> gravity;
    std::unique_ptr<tf::Scorer> base_scorer;
    if (train_log) train_stats = tf::transition_stats(*train_log);
    if (baseline == "mcmle") {
        mc = tf::McMle::fit(*train_log, eps);
        base_scorer = std::make_unique<tf::McMleScorer>(*mc);
    } else if (baseline == "popularity") {
        base_scorer = std::make_unique<tf::PopularityScorer>(*train_log);
    } else if (baseline == "gravity") {
        gravity = tf::fit_gravity(*train_stats, geo);
        base_scorer = std::make_unique<tf::GravityScorer>(*gravity, geo, *train_stats);
    } else if (!baseline.empty()) {
        throw tf::config_error("unknown baseline '" + baseline + "'");
    }

    tf::EvalReport base_rep;
    if (base_scorer && want_rank) {
        base_rep = tf::evaluate_ranking(*base_scorer, test_windows, model.n_items, tr_user,
                                        tr_item);
        if (!model_rep.rr_values.empty() && !base_rep.rr_values.empty())
            model_rep.ks = tf::ks_statistic(model_rep.rr_values, base_rep.rr_values);
    }
    if (base_scorer && want_predll) {
        auto prob = [&](std::int64_t s, std::int64_t d) -> double {
            if (s == d) return -1.0;
            if (mc) return mc->prob(s, d);
            if (gravity) {
                if (!geo.has(s) || !geo.has(d) || train_stats->out_count[s] == 0) return -1.0;
                double z = 0.0, v = 0.0;
                for (std::int64_t o = 0; o < model.n_items; ++o) {
                    if (o == s || !geo.has(o) || train_stats->in_count[o] == 0) continue;
                    const double dist = geo.distance(s, o);
                    if (!(dist > 0.0)) continue;
                    const double mu = tf::gravity_flow(
                        *gravity, static_cast<double>(train_stats->out_count[s]),
                        static_cast<double>(train_stats->in_count[o]), dist);
                    z += mu;
                    if (o == d) v = mu;
                }
                return z > 0.0 && v > 0.0 ? v / z : -1.0;
            }
            // popularity: mass proportional to train visit count
            const auto& pop = static_cast<tf::PopularityScorer&>(*base_scorer).counts;
            double total = 0.0;
            for (double c : pop) total += c;
            const double denom = total - pop[static_cast<std::size_t>(s)];
            return denom > 0.0 && pop[static_cast<std::size_t>(d)] > 0.0
                       ? pop[static_cast<std::size_t>(d)] / denom
                       : -1.0;
        };
        auto [total, mean, used] = tf::pred_ll(prob, transitions);
        base_rep.predll_total = total;
        base_rep.predll_mean = mean;
        base_rep.predll_transitions = used;
    }

    if (want_flows) {
        // Observed test flows vs estimates scaled from train outflows by the
        // global test/train volume ratio (applied to every estimator alike).
        std::unordered_map<std::int64_t, std::int64_t> observed;
        for (const auto& [s, d] : transitions)
            if (s != d) observed[s * model.n_items + d] += 1;
        const double scale = train_stats->total_transitions > 0
                                 ? static_cast<double>(transitions.size()) /
                                       static_cast<double>(train_stats->total_transitions)
                                 : 1.0;
        auto [mae, used] = tf::flow_mae(
            observed, model.n_items, [&](std::int64_t s, std::int64_t d) {
                const double out =
                    static_cast<double>(train_stats->out_count[static_cast<std::size_t>(s)]);
                return tf::flow_estimate(model, s, d, out * scale);
            });
        model_rep.flow_mae = mae;
        model_rep.flow_pairs = used;
        if (gravity) {
            auto [gmae, gused] = tf::flow_mae(
                observed, model.n_items, [&](std::int64_t s, std::int64_t d) -> double {
                    if (!geo.has(s) || !geo.has(d)) return -1.0;
                    const double dist = geo.distance(s, d);
                    if (!(dist > 0.0)) return -1.0;
                    const auto r_s = static_cast<double>(
                        train_stats->out_count[static_cast<std::size_t>(s)]);
                    const auto n_d = static_cast<double>(
                        train_stats->in_count[static_cast<std::size_t>(d)]);
                    if (r_s <= 0.0 || n_d <= 0.0) return -1.0;
                    return tf::gravity_flow(*gravity, r_s, n_d, dist) * scale;
                });
            base_rep.flow_mae = gmae;
            base_rep.flow_pairs = gused;
        }
    }

    std::cout << "== model ==\n";
    model_rep.print_table(std::cout);
    model_rep.print_kv(std::cout, "model.");
    if (base_scorer || base_rep.flow_mae) {
        std::cout << "== baseline: " << baseline << " ==\n";
        base_rep.print_table(std::cout);
        base_rep.print_kv(std::cout, "baseline.");
    }
    return 0;
}

int cmd_predict(const std::string& model_path, const std::string& queries_path, int top,
                bool no_timestamps) {
    auto min = open_input(model_path);
    const tf::Model model = tf::load_model(min);
    const auto users = model.user_index();
    const auto items = model.item_index();

    std::ifstream file;
    std::istream* qs = &std::cin;
    if (queries_path != "-") {
        file = open_input(queries_path);
        qs = &file;
    }

    std::string line;
    std::size_t line_no = 0, qid = 0;
    while (std::getline(*qs, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = tf::detail::split_tabs(line);
        if (fields.size() != 2 && fields.size() != 3)
            throw tf::data_error("query line " + std::to_string(line_no) +
                                 ": expected 2 or 3 tab-separated fields");
        tf::Query q;
        const auto uit = users.find(std::string(fields[0]));
        q.user = uit == users.end() ? -1 : uit->second;

        std::stringstream hs{std::string(fields[1])};
        std::string tok;
        while (std::getline(hs, tok, ',')) {
            const auto iit = items.find(tok);
            if (iit == items.end())
                throw tf::data_error("query line " + std::to_string(line_no) +
                                     ": unknown item '" + tok + "'");
            q.history.push_back(iit->second);
        }
        if (!no_timestamps && fields.size() == 3 && !fields[2].empty()) {
            std::stringstream ts{std::string(fields[2])};
            while (std::getline(ts, tok, ',')) {
                try {
                    q.taus.push_back(std::stod(tok));
                } catch (const std::exception&) {
                    throw tf::data_error("query line " + std::to_string(line_no) +
                                         ": bad tau '" + tok + "'");
                }
            }
        }
        const auto ranked = tf::rank_candidates(model, q);
        const auto limit = std::min<std::size_t>(ranked.size(),
                                                 static_cast<std::size_t>(top));
        for (std::size_t r = 0; r < limit; ++r)
            std::cout << qid << '\t' << (r + 1) << '\t' << model.item_names[ranked[r].first]
                      << '\t' << std::setprecision(10) << ranked[r].second << '\n';
        ++qid;
    }
    return 0;
}

int cmd_synth(const std::string& prefix, tf::SynthConfig cfg) {
    const auto data = tf::generate(cfg);
    {
        auto out = open_output(prefix + "corpus.tsv");
        out << std::setprecision(15);
        tf::serialize_events(data.log, out);
    }
    {
        auto out = open_output(prefix + "groups.tsv");
        for (std::size_t u = 0; u < data.user_group.size(); ++u)
            out << data.log.user_names[u] << '\t' << data.user_group[u] << '\n';
    }
    {
        auto out = open_output(prefix + "flows.tsv");
        std::vector<std::pair<std::int64_t, std::int64_t>> flows(data.true_flows.begin(),
                                                                 data.true_flows.end());
        std::sort(flows.begin(), flows.end());
        const auto n = static_cast<std::int64_t>(data.log.n_items());
        for (const auto& [k, count] : flows)
            out << data.log.item_names[static_cast<std::size_t>(k / n)] << '\t'
                << data.log.item_names[static_cast<std::size_t>(k % n)] << '\t' << count
                << '\n';
    }
    if (data.has_geo) {
        auto out = open_output(prefix + "geo.tsv");
        out << std::setprecision(10);
        for (std::size_t i = 0; i < data.lat.size(); ++i)
            out << data.log.item_names[i] << '\t' << data.lat[i] << '\t' << data.lon[i]
                << '\n';
    }
    std::cerr << "wrote " << data.log.n_events() << " events, " << data.log.n_users()
              << " users, " << data.log.n_items() << " items -> " << prefix << "*.tsv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TribeFlow-style latent-environment trajectory model"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "learn a model from a trajectory corpus");
    std::string corpus_path, out_path = "model.tf", log_path;
    tf::TrainConfig cfg;
    bool no_timestamps = false, export_json = false;
    train->add_option("corpus", corpus_path, "TSV corpus file")->required();
    train->add_option("--out", out_path, "model output path");
    train->add_option("--log", log_path, "progress log path ('-' = stderr)");
    train->add_option("--k-init", cfg.k_init, "initial environment count");
    train->add_option("--b", cfg.B, "window length B");
    train->add_option("--iters", cfg.total_iterations, "total Gibbs iterations");
    train->add_option("--adapt-every", cfg.adapt_every, "merge/split cadence");
    train->add_option("--workers", cfg.workers, "parallel workers");
    train->add_option("--seed", cfg.seed, "random seed");
    train->add_option("--log-every", cfg.log_every, "progress line cadence");
    train->add_flag("--no-timestamps", no_timestamps,
                    "2-column corpus; ignore inter-event times (TribeFlow-NT)");
    train->add_flag("--export-json", export_json, "also dump <out>.json");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a model (and optional baseline)");
    std::string model_path, test_path, train_path, baseline, geo_path, metric = "all";
    double eps = 1e-3;
    eval->add_option("--model", model_path)->required();
    eval->add_option("--test", test_path)->required();
    eval->add_option("--train", train_path, "training corpus (baselines, flows)");
    eval->add_option("--baseline", baseline, "mcmle | gravity | popularity");
    eval->add_option("--geo", geo_path, "item coordinates TSV");
    eval->add_option("--metric", metric, "all | mrr | predll | flows");
    eval->add_option("--eps", eps, "MC-MLE smoothing");
    eval->add_flag("--no-timestamps", no_timestamps);

    // predict
    auto* predict = app.add_subcommand("predict", "rank next items for query histories");
    std::string queries_path = "-";
    int top = 20;
    predict->add_option("--model", model_path)->required();
    predict->add_option("--queries", queries_path, "TSV queries ('-' = stdin)");
    predict->add_option("--top", top, "ranked items per query");
    predict->add_flag("--no-timestamps", no_timestamps);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a ground-truth corpus");
    std::string prefix = "synth_";
    tf::SynthConfig scfg;
    bool with_geo = false;
    synth->add_option("--out-prefix", prefix, "output file prefix");
    synth->add_option("--users", scfg.users);
    synth->add_option("--groups", scfg.groups);
    synth->add_option("--items-per-group", scfg.items_per_group);
    synth->add_option("--plays-per-day", scfg.plays_per_day);
    synth->add_option("--days", scfg.days);
    synth->add_option("--stagger", scfg.stagger_days, "days between joins (1 or 2)");
    synth->add_option("--sigma", scfg.lognormal_sigma, "lognormal popularity sigma");
    synth->add_option("--noise", scfg.noise, "cross-group play probability");
    synth->add_option("--seed", scfg.seed);
    synth->add_flag("--geo", with_geo, "attach per-group coordinate clusters");

    // export-json
    auto* exportj = app.add_subcommand("export-json", "dump a model file as JSON");
    std::string json_out = "-";
    exportj->add_option("--model", model_path)->required();
    exportj->add_option("--out", json_out, "output path ('-' = stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;  // help exits clean, usage errors are 1
    }

    try {
        if (train->parsed()) return cmd_train(corpus_path, out_path, log_path, cfg,
                                              no_timestamps, export_json);
        if (eval->parsed()) return cmd_eval(model_path, test_path, train_path, baseline,
                                            geo_path, metric, no_timestamps, eps);
        if (predict->parsed()) return cmd_predict(model_path, queries_path, top,
                                                  no_timestamps);
        if (synth->parsed()) {
            scfg.with_geo = with_geo;
            return cmd_synth(prefix, scfg);
        }
        if (exportj->parsed()) {
            auto min = open_input(model_path);
            const tf::Model model = tf::load_model(min);
            if (json_out == "-") {
                tf::export_model_json(model, std::cout);
            } else {
                auto out = open_output(json_out);
                tf::export_model_json(model, out);
            }
            return 0;
        }
    } catch (const tf::config_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const tf::data_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
