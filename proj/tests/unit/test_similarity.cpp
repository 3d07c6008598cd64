#include "doctest.h"
#include "spass/similarity.hpp"
#include "../oracles/bleu_oracle.hpp"

#include <cmath>
#include <random>

using namespace spass::similarity;
using spass::text::ParameterError;

namespace {

SearchTaskSet tasks_of(std::vector<TokenList> refs) {
    std::vector<SearchTask> tasks;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        tasks.push_back({static_cast<std::int64_t>(i), spass::text::join(refs[i]), refs[i]});
    }
    return SearchTaskSet(std::move(tasks));
}

TokenList random_tokens(std::mt19937& rng, int vocab, int min_len, int max_len) {
    const int len = min_len + static_cast<int>(rng() % static_cast<unsigned>(max_len - min_len + 1));
    TokenList t;
    for (int i = 0; i < len; ++i) t.push_back("w" + std::to_string(rng() % static_cast<unsigned>(vocab)));
    return t;
}

}  // namespace

TEST_CASE("default config carries the search weights") {
    const ScoreConfig cfg;
    CHECK(cfg.max_order == 4);
    REQUIRE(cfg.weights.size() == 4);
    CHECK(cfg.weights[0] == 0.8);
    CHECK(cfg.weights[1] == 0.15);
    CHECK(cfg.weights[2] == 0.045);
    CHECK(cfg.weights[3] == 0.005);
    CHECK(cfg.weights[0] + cfg.weights[1] + cfg.weights[2] + cfg.weights[3] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_FALSE(cfg.smoothing);
}

TEST_CASE("config validation") {
    ScoreConfig cfg;
    cfg.weights.pop_back();
    CHECK_THROWS_AS(cfg.validate(), ParameterError);
    cfg = ScoreConfig{};
    cfg.weights[2] = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ParameterError);
    CHECK_NOTHROW(ScoreConfig::uniform(3).validate());
}

TEST_CASE("modified precision examples") {
    CHECK(modified_precision({"the", "cat"}, tasks_of({{"the", "cat"}}), 1) == 1.0);
    CHECK(modified_precision({"a", "a", "a", "a"}, tasks_of({{"a", "b"}}), 1) == 0.25);
    CHECK(oracle::precision({"a", "a", "a", "a"}, {{"a", "b"}}, 1) == 0.25);
    CHECK(modified_precision({"a", "b"}, tasks_of({{"c", "d"}}), 1) == 0.0);
    CHECK(modified_precision({"a"}, tasks_of({{"a", "b"}}), 2) == 0.0);
    CHECK_THROWS_AS(modified_precision({"a"}, tasks_of({{"a"}}), 0), ParameterError);
    CHECK_THROWS_AS(SearchTaskSet(std::vector<SearchTask>{}), ParameterError);
    CHECK_THROWS_AS(SearchTaskSet::from_texts({"rock", "..."}), ParameterError);
}

TEST_CASE("clipping takes the maximum over references") {
    // "a" appears twice in the second reference only
    auto r = tasks_of({{"a", "b"}, {"a", "a", "c"}});
    CHECK(modified_precision({"a", "a", "a"}, r, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("brevity penalty branches") {
    CHECK(brevity_penalty(10, 5) == 1.0);
    CHECK(brevity_penalty(5, 5) == 1.0);
    CHECK(std::abs(brevity_penalty(5, 10) - 0.36787944117144233) < 1e-12);
    CHECK_THROWS_AS(brevity_penalty(TokenList{}, TokenList{"a"}), ParameterError);
}

TEST_CASE("score identity and disjoint cases") {
    TokenList c{"layered", "rock", "with", "white", "veins"};
    auto s = score(c, tasks_of({c}));
    CHECK(s.value == 1.0);
    CHECK(s.log_value == 0.0);
    CHECK(s.brevity_penalty == 1.0);

    auto z = score({"a", "b"}, tasks_of({{"c", "d"}}));
    CHECK(z.value == 0.0);
    CHECK(std::isinf(z.log_value));
    CHECK(z.log_value < 0);

    // shorter than N: p_4 is zero so the whole score is zero
    auto short_c = score({"a", "b", "c"}, tasks_of({{"a", "b", "c"}}));
    CHECK(short_c.value == 0.0);
    CHECK(short_c.precisions[3] == 0.0);

    CHECK_THROWS_AS(score({}, tasks_of({{"a"}})), ParameterError);
}

TEST_CASE("brevity reference is the longest task") {
    auto r = tasks_of({{"a", "b", "c", "d"}, {"a", "b", "c", "d", "e", "f", "g", "h"}});
    auto s = score({"a", "b", "c", "d"}, r);
    CHECK(s.brevity_penalty == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
    CHECK(r.longest().id == 1);
    auto tie = tasks_of({{"x", "y"}, {"p", "q"}});
    CHECK(tie.longest().id == 0);
}

TEST_CASE("smoothing ranks zero-precision candidates") {
    ScoreConfig cfg;
    cfg.smoothing = true;
    auto r = tasks_of({{"red", "rock", "on", "sand"}});
    auto a = score({"red", "rock", "in", "dust"}, r, cfg);
    auto b = score({"blue", "sky", "in", "dust"}, r, cfg);
    CHECK(a.value > 0.0);
    CHECK(b.value > 0.0);
    CHECK(a.value > b.value);
}

TEST_CASE("score matches the brute-force oracle on random instances") {
    std::mt19937 rng(2024);
    const ScoreConfig cfg;
    for (int trial = 0; trial < 300; ++trial) {
        auto c = random_tokens(rng, 6, 4, 8);
        std::vector<TokenList> refs;
        for (int k = 0, nr = 1 + static_cast<int>(rng() % 3); k < nr; ++k) refs.push_back(random_tokens(rng, 6, 4, 8));
        auto got = score(c, tasks_of(refs), cfg);
        auto want = oracle::score(c, refs, cfg.weights);
        REQUIRE(std::abs(got.value - want.value) <= 1e-12);
        REQUIRE(std::abs(got.brevity_penalty - want.eta) <= 1e-12);
        for (std::size_t n = 0; n < 4; ++n) REQUIRE(std::abs(got.precisions[n] - want.p[n]) <= 1e-12);
        if (got.value > 0) REQUIRE(std::abs(std::exp(got.log_value) - got.value) <= 1e-12);
    }
}

TEST_CASE("precision properties") {
    std::mt19937 rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        auto ref = random_tokens(rng, 5, 4, 10);
        // a contiguous piece of a single reference has precision 1 at all orders it supports
        const std::size_t b = rng() % ref.size();
        const std::size_t e = b + 1 + rng() % (ref.size() - b);
        TokenList piece(ref.begin() + static_cast<long>(b), ref.begin() + static_cast<long>(e));
        auto other = random_tokens(rng, 5, 1, 6);
        auto set1 = tasks_of({ref, other});
        for (int n = 1; n <= static_cast<int>(piece.size()) && n <= 4; ++n) {
            REQUIRE(modified_precision(piece, set1, n) == 1.0);
        }
        // an unrelated task never lowers any precision
        auto c = random_tokens(rng, 5, 1, 8);
        auto base = tasks_of({ref});
        auto widened = tasks_of({ref, {"zz1", "zz2", "zz3"}});
        for (int n = 1; n <= 4; ++n) {
            const double p0 = modified_precision(c, base, n);
            REQUIRE(p0 <= 1.0);
            REQUIRE(modified_precision(c, widened, n) >= p0);
        }
    }
}

TEST_CASE("self-similarity") {
    std::mt19937 rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        auto c = random_tokens(rng, 8, 4, 20);
        REQUIRE(score(c, tasks_of({c})).value == 1.0);
    }
}

TEST_CASE("rank ordering") {
    auto r = tasks_of({{"layered", "rock", "outcrop", "near", "rover"}});
    auto ranked = rank({{"b", {"sand", "dune", "field"}}, {"a", {"layered", "rock", "outcrop", "near", "rover"}}}, r);
    REQUIRE(ranked.size() == 2);
    CHECK(ranked[0].id == "a");

    auto zeros = rank({{"c", {"x"}}, {"a", {"y"}}, {"b", {}}}, r);
    CHECK(zeros[0].id == "a");
    CHECK(zeros[1].id == "b");
    CHECK(zeros[2].id == "c");
}

TEST_CASE("rank agrees with an oracle sort of oracle scores") {
    std::mt19937 rng(99);
    std::vector<TokenList> refs{random_tokens(rng, 6, 4, 8), random_tokens(rng, 6, 4, 8)};
    std::vector<CandidateCaption> caps;
    std::vector<std::pair<double, std::string>> expect;
    const ScoreConfig cfg;
    for (int i = 0; i < 50; ++i) {
        char id[8];
        std::snprintf(id, sizeof id, "img%02d", i);
        caps.push_back({id, random_tokens(rng, 6, 4, 8)});
        expect.emplace_back(oracle::score(caps.back().tokens, refs, cfg.weights).value, id);
    }
    std::sort(expect.begin(), expect.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    auto ranked = rank(caps, tasks_of(refs), cfg);
    for (std::size_t i = 0; i < ranked.size(); ++i) REQUIRE(ranked[i].id == expect[i].second);
}
