#include "doctest.h"
#include "spass/captioner/model.hpp"
#include "../oracles/finite_difference.hpp"

#include <cmath>

using namespace spass;
using namespace spass::captioner;
using spass::text::Vocabulary;

namespace {

ModelDims tiny_dims() {
    ModelDims d;
    d.vocab = 12;
    d.embed = 8;
    d.hidden = 16;
    d.feature = 8;
    d.locations = 4;
    d.attention = 16;
    return d;
}

FeatureMap random_features(std::size_t L, std::size_t D, std::uint64_t seed) {
    Rng rng(seed);
    FeatureMap f{Matrix(L, D)};
    for (double& x : f.annotations.data) x = rng.uniform(-1.0, 1.0);
    return f;
}

Vector random_vector(std::size_t n, Rng& rng, double scale = 0.8) {
    Vector v(n);
    for (double& x : v) x = rng.uniform(-scale, scale);
    return v;
}

// Element-by-element reference implementations of the gate and attention formulas.
double ref_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double matvec_row(const Matrix& m, std::size_t r, const Vector& x) {
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) acc += m(r, c) * x[c];
    return acc;
}

}  // namespace

TEST_CASE("attend: uniform weights from zero parameters") {
    auto d = tiny_dims();
    auto w = ModelWeights::zeros(d);
    auto f = random_features(d.locations, d.feature, 1);
    auto att = attend(f, Vector(d.hidden, 0.3), w);
    for (double a : att.weights) CHECK(a == doctest::Approx(0.25).epsilon(1e-15));
    for (std::size_t k = 0; k < d.feature; ++k) {
        double mean = 0.0;
        for (std::size_t i = 0; i < d.locations; ++i) mean += f.annotations(i, k) / 4.0;
        CHECK(att.context[k] == doctest::Approx(mean).epsilon(1e-14));
    }
}

TEST_CASE("attend: one dominant logit without overflow") {
    auto d = tiny_dims();
    auto w = ModelWeights::zeros(d);
    auto f = random_features(d.locations, d.feature, 2);
    // tanh saturates to 1 for the first location only, scaled to +1000 by v
    w.att_score.data.assign(d.attention, 0.0);
    w.att_score.data[0] = 1000.0;
    f.annotations.row(0)[0] = 5.0;
    for (std::size_t i = 1; i < d.locations; ++i) f.annotations.row(i)[0] = 0.0;
    w.att_feature(0, 0) = 10.0;
    auto att = attend(f, Vector(d.hidden, 0.0), w);
    CHECK(att.logits[0] == doctest::Approx(1000.0));
    CHECK(att.weights[0] >= 1.0 - 1e-6);
    CHECK(all_finite(att.weights));
    double sum = 0.0;
    for (double a : att.weights) sum += a;
    CHECK(std::abs(sum - 1.0) < 1e-9);
}

TEST_CASE("attend: matches direct summation oracle and is shift invariant") {
    auto d = tiny_dims();
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto w = ModelWeights::random(d, seed);
        Rng rng(seed + 100);
        for (double& x : w.att_bias.data) x = rng.uniform(-0.5, 0.5);
        auto f = random_features(d.locations, d.feature, seed + 7);
        auto h = random_vector(d.hidden, rng);
        auto att = attend(f, h, w);

        Vector e(d.locations);
        for (std::size_t i = 0; i < d.locations; ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d.attention; ++k) {
                double pre = w.att_bias(k, 0);
                for (std::size_t c = 0; c < d.feature; ++c) pre += w.att_feature(k, c) * f.annotations(i, c);
                for (std::size_t c = 0; c < d.hidden; ++c) pre += w.att_hidden(k, c) * h[c];
                acc += w.att_score(0, k) * std::tanh(pre);
            }
            e[i] = acc;
        }
        double z = 0.0;
        for (double x : e) z += std::exp(x);
        for (std::size_t i = 0; i < d.locations; ++i) {
            REQUIRE(std::abs(att.logits[i] - e[i]) < 1e-12);
            REQUIRE(std::abs(att.weights[i] - std::exp(e[i]) / z) < 1e-12);
        }
        for (std::size_t c = 0; c < d.feature; ++c) {
            double expect = 0.0;
            for (std::size_t i = 0; i < d.locations; ++i) expect += std::exp(e[i]) / z * f.annotations(i, c);
            REQUIRE(std::abs(att.context[c] - expect) < 1e-12);
        }

        Vector shifted = att.logits;
        for (double& x : shifted) x += 37.5;
        softmax_inplace(shifted);
        for (std::size_t i = 0; i < d.locations; ++i) REQUIRE(std::abs(shifted[i] - att.weights[i]) < 1e-12);
    }
}

TEST_CASE("attend rejects non-finite input") {
    auto d = tiny_dims();
    auto w = ModelWeights::random(d, 3);
    auto f = random_features(d.locations, d.feature, 3);
    Vector h(d.hidden, 0.0);
    h[2] = std::nan("");
    CHECK_THROWS_AS(attend(f, h, w), NumericError);
    f.annotations(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(attend(f, Vector(d.hidden, 0.0), w), NumericError);
    CHECK_THROWS_AS(attend(random_features(3, d.feature, 1), Vector(d.hidden, 0.0), w), ShapeError);
}

TEST_CASE("init_state") {
    auto d = tiny_dims();
    auto w = ModelWeights::random(d, 4);
    FeatureMap zero{Matrix(d.locations, d.feature)};
    auto [h0, c0] = init_state(zero, w);
    for (double x : h0) CHECK(x == 0.0);
    for (double x : c0) CHECK(x == 0.0);

    Rng rng(9);
    for (auto* net : {&w.init_h, &w.init_c}) {
        for (double& x : net->b1.data) x = rng.uniform(-0.3, 0.3);
        for (double& x : net->b2.data) x = rng.uniform(-0.3, 0.3);
    }
    auto f = random_features(d.locations, d.feature, 5);
    auto [h, c] = init_state(f, w);
    auto [h2, c2] = init_state(f, w);
    CHECK(h == h2);
    CHECK(c == c2);

    Vector mean(d.feature, 0.0);
    for (std::size_t i = 0; i < d.locations; ++i)
        for (std::size_t k = 0; k < d.feature; ++k) mean[k] += f.annotations(i, k) / static_cast<double>(d.locations);
    for (auto [net, got] : {std::pair{&w.init_h, &h}, std::pair{&w.init_c, &c}}) {
        Vector hid(d.hidden);
        for (std::size_t r = 0; r < d.hidden; ++r) hid[r] = std::tanh(matvec_row(net->W1, r, mean) + net->b1(r, 0));
        for (std::size_t r = 0; r < d.hidden; ++r) {
            REQUIRE(std::abs((*got)[r] - std::tanh(matvec_row(net->W2, r, hid) + net->b2(r, 0))) < 1e-12);
        }
    }
}

TEST_CASE("lstm_step: zero weights") {
    auto d = tiny_dims();
    auto w = ModelWeights::zeros(d);
    auto s = lstm_step(5, Vector(d.hidden, 0.4), Vector(d.hidden, 0.0), Vector(d.feature, 0.2), w);
    for (std::size_t j = 0; j < d.hidden; ++j) {
        CHECK(s.input[j] == 0.5);
        CHECK(s.forget[j] == 0.5);
        CHECK(s.output[j] == 0.5);
        CHECK(s.c[j] == 0.0);
        CHECK(s.h[j] == 0.0);
    }
    CHECK_THROWS_AS(lstm_step(12, Vector(d.hidden), Vector(d.hidden), Vector(d.feature), w), text::OutOfRangeError);
}

TEST_CASE("lstm_step: memory carry") {
    auto d = tiny_dims();
    auto w = ModelWeights::random(d, 6);
    for (double& x : w.gates[kForgetGate].b.data) x = 40.0;
    for (double& x : w.gates[kInputGate].b.data) x = -40.0;
    Rng rng(1);
    auto c_prev = random_vector(d.hidden, rng);
    auto s = lstm_step(4, random_vector(d.hidden, rng), c_prev, random_vector(d.feature, rng), w);
    for (std::size_t j = 0; j < d.hidden; ++j) CHECK(std::abs(s.c[j] - c_prev[j]) < 1e-6);
}

TEST_CASE("lstm_step: matches the element-wise reference") {
    auto d = tiny_dims();
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
        auto w = ModelWeights::random(d, seed);
        Rng rng(seed);
        for (auto& g : w.gates)
            for (double& x : g.b.data) x = rng.uniform(-0.5, 0.5);
        const TokenId y = 7;
        auto h_prev = random_vector(d.hidden, rng);
        auto c_prev = random_vector(d.hidden, rng);
        auto z = random_vector(d.feature, rng);
        auto s = lstm_step(y, h_prev, c_prev, z, w);

        Vector Ey(d.embed);
        for (std::size_t r = 0; r < d.embed; ++r) Ey[r] = w.embedding(r, y);
        auto pre = [&](Gate g, std::size_t j) {
            return matvec_row(w.gates[g].W, j, Ey) + matvec_row(w.gates[g].U, j, h_prev) +
                   matvec_row(w.gates[g].Z, j, z) + w.gates[g].b(j, 0);
        };
        for (std::size_t j = 0; j < d.hidden; ++j) {
            const double i_t = ref_sigmoid(pre(kInputGate, j));
            const double f_t = ref_sigmoid(pre(kForgetGate, j));
            const double c_t = f_t * c_prev[j] + i_t * std::tanh(pre(kCellGate, j));
            const double o_t = ref_sigmoid(pre(kOutputGate, j));
            const double h_t = o_t * std::tanh(c_t);
            REQUIRE(std::abs(s.input[j] - i_t) < 1e-12);
            REQUIRE(std::abs(s.forget[j] - f_t) < 1e-12);
            REQUIRE(std::abs(s.output[j] - o_t) < 1e-12);
            REQUIRE(std::abs(s.c[j] - c_t) < 1e-12);
            REQUIRE(std::abs(s.h[j] - h_t) < 1e-12);
            REQUIRE(std::abs(s.h[j]) < 1.0);
            REQUIRE(s.input[j] > 0.0);
            REQUIRE(s.input[j] < 1.0);
        }
    }
}

TEST_CASE("word_distribution") {
    auto d = tiny_dims();
    auto zero = ModelWeights::zeros(d);
    auto p0 = word_distribution(3, Vector(d.hidden, 0.5), Vector(d.feature, 0.5), zero);
    for (double p : p0) CHECK(p == doctest::Approx(1.0 / 12.0).epsilon(1e-15));

    for (std::uint64_t seed = 20; seed < 25; ++seed) {
        auto w = ModelWeights::random(d, seed);
        Rng rng(seed);
        auto h = random_vector(d.hidden, rng);
        auto z = random_vector(d.feature, rng);
        const TokenId y = 9;
        auto p = word_distribution(y, h, z, w);
        double sum = 0.0;
        for (double x : p) sum += x;
        REQUIRE(std::abs(sum - 1.0) < 1e-9);

        Vector q(d.embed);
        for (std::size_t r = 0; r < d.embed; ++r) {
            q[r] = w.embedding(r, y) + matvec_row(w.out_hidden, r, h) + matvec_row(w.out_context, r, z);
        }
        Vector logits(d.vocab);
        double norm = 0.0;
        for (std::size_t k = 0; k < d.vocab; ++k) {
            logits[k] = matvec_row(w.out_vocab, k, q);
            norm += std::exp(logits[k]);
        }
        for (std::size_t k = 0; k < d.vocab; ++k) REQUIRE(std::abs(p[k] - std::exp(logits[k]) / norm) < 1e-12);
    }
}

TEST_CASE("generate: END first yields a degenerate caption") {
    auto d = tiny_dims();
    auto w = ModelWeights::zeros(d);
    // L_o q with q = E y: make END's logit huge through the embedding of START
    w.embedding(0, Vocabulary::kStart) = 1.0;
    w.out_vocab(Vocabulary::kEnd, 0) = 100.0;
    auto g = generate(random_features(d.locations, d.feature, 1), w);
    CHECK(g.caption.ids.empty());
    CHECK(g.degenerate);
}

TEST_CASE("generate: beam width 1 equals greedy, decoding is deterministic") {
    auto d = tiny_dims();
    for (std::uint64_t seed = 30; seed < 40; ++seed) {
        auto w = ModelWeights::random(d, seed);
        // push the model towards emitting content words for a few steps
        for (double& x : w.out_vocab.data) x *= 4.0;
        auto f = random_features(d.locations, d.feature, seed);
        DecodeOptions greedy_opts;
        greedy_opts.max_len = 8;
        DecodeOptions beam1{DecodeMode::kBeam, 1, 8};
        auto a = generate(f, w, greedy_opts);
        auto b = generate(f, w, beam1);
        REQUIRE(a.caption == b.caption);
        REQUIRE(generate(f, w, greedy_opts).caption == a.caption);
        DecodeOptions beam3{DecodeMode::kBeam, 3, 8};
        auto c = generate(f, w, beam3);
        REQUIRE(c.caption == generate(f, w, beam3).caption);
        // a wider beam never finds a less likely sequence than greedy
        REQUIRE(c.log_prob >= a.log_prob - 1e-12);
        for (auto id : c.caption.ids) {
            REQUIRE(id != Vocabulary::kStart);
            REQUIRE(id != Vocabulary::kPad);
        }
        REQUIRE(c.caption.ids.size() <= 8);
    }
}

TEST_CASE("generate: attention stays normalized at every step") {
    auto d = tiny_dims();
    auto w = ModelWeights::random(d, 41);
    DecodeTrace trace;
    generate(random_features(d.locations, d.feature, 2), w, {DecodeMode::kBeam, 4, 10}, &trace);
    REQUIRE_FALSE(trace.attention.empty());
    for (const auto& a : trace.attention) {
        double s = 0.0;
        for (double x : a) {
            REQUIRE(x >= 0.0);
            s += x;
        }
        REQUIRE(std::abs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("loss: uniform model gives ln K per token") {
    auto d = tiny_dims();
    auto w = ModelWeights::zeros(d);
    std::vector<TrainingSample> batch{{random_features(d.locations, d.feature, 1), text::Caption{{4, 5, 6}}}};
    auto r = loss_and_gradients(std::span<const TrainingSample>(batch), w, 0.0, 0);
    CHECK(r.tokens == 4);
    CHECK(r.loss == doctest::Approx(std::log(12.0)).epsilon(1e-14));
}

TEST_CASE("loss: duplicating the batch leaves the loss unchanged") {
    auto d = tiny_dims();
    auto w = ModelWeights::random(d, 8);
    TrainingSample s{random_features(d.locations, d.feature, 1), text::Caption{{4, 5, 6}}};
    std::vector<TrainingSample> one{s}, two{s, s};
    auto a = loss_and_gradients(std::span<const TrainingSample>(one), w, 0.0, 0);
    auto b = loss_and_gradients(std::span<const TrainingSample>(two), w, 0.0, 0);
    CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-14));
}

TEST_CASE("loss: error paths") {
    auto d = tiny_dims();
    auto w = ModelWeights::random(d, 8);
    std::vector<TrainingSample> empty;
    CHECK_THROWS_AS(loss_and_gradients(std::span<const TrainingSample>(empty), w, 0.0, 0), text::ParameterError);
    std::vector<TrainingSample> bad{{random_features(d.locations, d.feature, 1), text::Caption{{4, 50}}}};
    CHECK_THROWS_AS(loss_and_gradients(std::span<const TrainingSample>(bad), w, 0.0, 0), text::OutOfRangeError);
    std::vector<TrainingSample> ok{{random_features(d.locations, d.feature, 1), text::Caption{{4}}}};
    CHECK_THROWS_AS(loss_and_gradients(std::span<const TrainingSample>(ok), w, 1.0, 0), text::ParameterError);
}

TEST_CASE("loss: dropout masks are seed-deterministic") {
    auto d = tiny_dims();
    auto w = ModelWeights::random(d, 12);
    std::vector<TrainingSample> batch{{random_features(d.locations, d.feature, 1), text::Caption{{4, 5, 6, 7}}}};
    auto a = loss_and_gradients(std::span<const TrainingSample>(batch), w, 0.5, 77);
    auto b = loss_and_gradients(std::span<const TrainingSample>(batch), w, 0.5, 77);
    auto c = loss_and_gradients(std::span<const TrainingSample>(batch), w, 0.5, 78);
    CHECK(a.loss == b.loss);
    CHECK(a.gradients == b.gradients);
    CHECK(a.loss != c.loss);
}

TEST_CASE("gradients match central finite differences") {
    auto d = tiny_dims();
    for (bool prev_hidden : {false, true}) {
        ModelOptions opts;
        opts.output_uses_prev_hidden = prev_hidden;
        auto w = ModelWeights::random(d, 99, opts);
        Rng rng(5);
        w.for_each([&](const std::string&, Matrix& m) {
            for (double& x : m.data) x += rng.uniform(-0.1, 0.1);
        });
        std::vector<TrainingSample> batch{{random_features(d.locations, d.feature, 3), text::Caption{{4, 9, 11}}}};
        auto checks = oracle::gradient_check(std::span<const TrainingSample>(batch), w);
        for (const auto& [name, c] : checks) {
            INFO(name);
            CHECK(c.analytic_norm > 0.0);
            CHECK(c.relative_error < 1e-4);
        }
    }
}
