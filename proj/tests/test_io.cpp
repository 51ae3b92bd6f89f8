#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "helpers.hpp"
#include "tribeflow/io.hpp"
#include "tribeflow/predict.hpp"
#include "tribeflow/sampler.hpp"
#include "tribeflow/synth.hpp"

using namespace tribeflow;

namespace {

Model trained_model() {
    SynthConfig scfg;
    scfg.users = 10;
    scfg.groups = 2;
    scfg.items_per_group = 8;
    scfg.plays_per_day = 20;
    scfg.days = 2;
    scfg.seed = 5;
    const auto data = generate(scfg);
    const auto log = dedup_revisits(data.log);
    const auto D = build_windows(log, 1);
    TrainConfig cfg;
    cfg.k_init = 3;
    cfg.B = 1;
    cfg.total_iterations = 10;
    cfg.adapt_every = 10;
    cfg.seed = 8;
    return train(D, cfg, nullptr, log.user_names, log.item_names);
}

}  // namespace

TEST_CASE("save then load reproduces the model and its predictions") {
    const Model m = trained_model();
    std::stringstream buf;
    save_model(m, buf);
    const Model back = load_model(buf);

    CHECK(back.K == m.K);
    CHECK(back.B == m.B);
    CHECK(back.nt_mode == m.nt_mode);
    CHECK(back.pi == m.pi);
    CHECK(back.phi == m.phi);
    CHECK(back.env_weight == m.env_weight);
    CHECK(back.env_times == m.env_times);
    CHECK(back.user_names == m.user_names);

    rng r(71);
    for (int trial = 0; trial < 100; ++trial) {
        Query q;
        q.user = static_cast<std::int32_t>(r.uniform_index(m.n_users));
        q.history = {static_cast<std::int32_t>(r.uniform_index(m.n_items))};
        if (!m.nt_mode) q.taus = {r.uniform01() * 100.0};
        const auto a = rank_candidates(m, q);
        const auto b = rank_candidates(back, q);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].first == b[i].first);
            CHECK(a[i].second == b[i].second);
        }
    }

    // double round-trip is byte-stable
    std::stringstream buf2;
    save_model(back, buf2);
    CHECK(buf.str() == buf2.str());
}

TEST_CASE("bad magic and truncation are rejected") {
    const Model m = trained_model();
    std::stringstream buf;
    save_model(m, buf);
    std::string bytes = buf.str();

    std::string corrupted = bytes;
    corrupted[0] = 'X';
    std::istringstream bad(corrupted);
    CHECK_THROWS_AS(load_model(bad), data_error);

    std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_model(truncated), data_error);

    std::istringstream empty("");
    CHECK_THROWS_AS(load_model(empty), data_error);
}

TEST_CASE("json export carries the header fields") {
    const Model m = trained_model();
    std::ostringstream os;
    export_model_json(m, os);
    const auto j = nlohmann::json::parse(os.str());
    CHECK(j["K"] == m.K);
    CHECK(j["B"] == m.B);
    CHECK(j["n_items"] == m.n_items);
    CHECK(j["env_weight"].size() == static_cast<std::size_t>(m.K));
    CHECK(j["item_names"].size() == static_cast<std::size_t>(m.n_items));
}
