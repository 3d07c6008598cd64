#include "doctest.h"
#include "spass/text.hpp"

#include <random>

using namespace spass::text;

namespace {

// Reference tokenizer written independently of the library: python's
// [w.strip('.,;:!?"()') for w in s.lower().split()] with empties removed.
TokenList reference_tokenize(const std::string& s) {
    TokenList out;
    std::string cur;
    auto flush = [&] {
        const std::string punct = ".,;:!?\"()";
        auto b = cur.find_first_not_of(punct);
        if (b != std::string::npos) {
            auto e = cur.find_last_not_of(punct);
            std::string t = cur.substr(b, e - b + 1);
            for (auto& ch : t) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            out.push_back(t);
        }
        cur.clear();
    };
    for (char ch : s) {
        if (std::isspace(static_cast<unsigned char>(ch))) flush();
        else cur += ch;
    }
    flush();
    return out;
}

}  // namespace

TEST_CASE("tokenize examples") {
    CHECK(tokenize("A rock.") == TokenList{"a", "rock"});
    CHECK(tokenize("").empty());
    CHECK(tokenize("Layered   bedrock, dusty") == TokenList{"layered", "bedrock", "dusty"});
    CHECK(tokenize("  ... ,, ") .empty());
    CHECK(tokenize("(\"Vein\")!") == TokenList{"vein"});
    CHECK(tokenize("mid.dle") == TokenList{"mid.dle"});
}

TEST_CASE("tokenize agrees with the reference tokenizer and is idempotent") {
    std::mt19937 rng(7);
    const std::string alphabet = "aBc Rk.,;:!?\"()\t\n xyZ";
    for (int trial = 0; trial < 2000; ++trial) {
        std::string s;
        const int len = static_cast<int>(rng() % 40);
        for (int i = 0; i < len; ++i) s += alphabet[rng() % alphabet.size()];
        const auto toks = tokenize(s);
        REQUIRE(toks == reference_tokenize(s));
        REQUIRE(tokenize(join(toks)) == toks);
    }
}

TEST_CASE("build_vocabulary") {
    std::vector<TokenList> corpus{{"a", "rock"}, {"a"}};
    auto v1 = build_vocabulary(corpus, 1);
    CHECK(v1.size() == 6);
    CHECK(v1.token_of(4) == "a");
    CHECK(v1.token_of(5) == "rock");

    auto v2 = build_vocabulary(corpus, 2);
    CHECK(v2.size() == 5);
    CHECK(v2.token_of(4) == "a");

    CHECK(build_vocabulary({}, 1).size() == 4);
    CHECK_THROWS_AS(build_vocabulary(corpus, 0), ParameterError);

    // equal frequency falls back to lexicographic order
    auto v3 = build_vocabulary({{"zeta", "alpha", "mid"}}, 1);
    CHECK(v3.tokens() == TokenList{"<start>", "<end>", "<pad>", "<unk>", "alpha", "mid", "zeta"});
}

TEST_CASE("special tokens sit at fixed indices") {
    Vocabulary v({"rock"});
    CHECK(v.token_of(Vocabulary::kStart) == "<start>");
    CHECK(v.token_of(Vocabulary::kEnd) == "<end>");
    CHECK(v.token_of(Vocabulary::kPad) == "<pad>");
    CHECK(v.token_of(Vocabulary::kUnk) == "<unk>");
    CHECK_THROWS_AS(Vocabulary({"rock", "rock"}), ParameterError);
    CHECK_THROWS_AS(Vocabulary({"<pad>"}), ParameterError);
}

TEST_CASE("token and index maps are mutual inverses") {
    auto v = build_vocabulary({{"dark", "layered", "rock", "dark"}, {"sand", "rock"}}, 1);
    for (TokenId i = 0; i < v.size(); ++i) CHECK(v.id_of(v.token_of(i)) == i);
}

TEST_CASE("vocabulary JSON round trip") {
    auto v = build_vocabulary({{"dark", "layered", "rock"}}, 1);
    const auto json = v.to_json();
    CHECK(json == R"(["<start>","<end>","<pad>","<unk>","dark","layered","rock"])");
    CHECK(Vocabulary::from_json(json) == v);
    CHECK_THROWS_AS(Vocabulary::from_json(R"(["a","b"])"), ParameterError);
}

TEST_CASE("encode and decode") {
    auto v = build_vocabulary({{"a", "rock"}}, 1);
    CHECK(decode(encode({"a", "rock"}, v), v) == TokenList{"a", "rock"});
    CHECK(encode({"xyzzy"}, v).ids == std::vector<TokenId>{Vocabulary::kUnk});
    CHECK(decode({Vocabulary::kStart, v.id_of("a"), Vocabulary::kEnd}, v) == TokenList{"a"});
    CHECK_THROWS_AS(decode({99}, v), OutOfRangeError);
}

TEST_CASE("round trip over random in-vocabulary token lists") {
    TokenList words{"basalt", "crater", "dune", "layered", "vein", "pebble", "sand"};
    auto v = build_vocabulary({words}, 1);
    std::mt19937 rng(3);
    for (int trial = 0; trial < 500; ++trial) {
        TokenList t;
        for (int i = 0, n = static_cast<int>(rng() % 12); i < n; ++i) t.push_back(words[rng() % words.size()]);
        REQUIRE(decode(encode(t, v), v) == t);
    }
}

TEST_CASE("validate_caption") {
    CHECK_NOTHROW(validate_caption(Caption{{4, 5}}));
    CHECK_NOTHROW(validate_caption(Caption{{4, 5, Vocabulary::kPad, Vocabulary::kPad}}));
    CHECK_THROWS_AS(validate_caption(Caption{{4, Vocabulary::kPad, 5}}), ParameterError);
    CHECK_THROWS_AS(validate_caption(Caption{{}}), ParameterError);
    CHECK_THROWS_AS(validate_caption(Caption{std::vector<TokenId>(21, 4)}), ParameterError);
    CHECK_NOTHROW(validate_caption(Caption{std::vector<TokenId>(21, 4)}, 21));
}

TEST_CASE("ngrams") {
    auto g = ngrams({"a", "a", "b"}, 2);
    CHECK(g.counts.size() == 2);
    CHECK(g.count({"a", "a"}) == 1);
    CHECK(g.count({"a", "b"}) == 1);
    CHECK(ngrams({"a"}, 2).counts.empty());
    CHECK(ngrams({"a", "a", "a"}, 1).count({"a"}) == 3);
    CHECK_THROWS_AS(ngrams({"a"}, 0), ParameterError);
    CHECK_THROWS_AS(ngrams({"a"}, -2), ParameterError);
}

TEST_CASE("ngram total count law") {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        TokenList t;
        for (int i = 0, len = static_cast<int>(rng() % 10); i < len; ++i) t.push_back(std::string(1, char('a' + rng() % 3)));
        const int n = 1 + static_cast<int>(rng() % 5);
        const long expect = std::max(0L, static_cast<long>(t.size()) - n + 1);
        REQUIRE(static_cast<long>(ngrams(t, n).total()) == expect);
    }
}
