#include "doctest.h"
#include "spass/captioner/encoder.hpp"
#include "spass/captioner/synthetic.hpp"
#include "spass/captioner/train.hpp"

#include <cmath>
#include <sstream>

using namespace spass;
using namespace spass::captioner;

namespace {

ModelDims small_dims(std::size_t K) {
    ModelDims d;
    d.vocab = K;
    d.embed = 8;
    d.hidden = 16;
    d.feature = 8;
    d.locations = 4;
    d.attention = 8;
    return d;
}

FeatureMap random_features(std::uint64_t seed) {
    Rng rng(seed);
    FeatureMap f{Matrix(4, 8)};
    for (double& x : f.annotations.data) x = rng.uniform(-1.0, 1.0);
    return f;
}

struct Toy {
    text::Vocabulary vocab{{"dark", "layered", "rock", "bright", "dune", "field"}};
    std::vector<TrainingSample> data;

    explicit Toy(std::size_t n) {
        const std::vector<std::string> captions{"dark layered rock field bright dune", "bright dune field", "dark dune",
                                                "layered rock field", "bright rock"};
        for (std::size_t i = 0; i < n; ++i) {
            data.push_back({random_features(100 + i), text::encode(text::tokenize(captions[i % captions.size()]), vocab)});
        }
    }
};

}  // namespace

TEST_CASE("adam with zero learning rate leaves weights unchanged") {
    Toy toy(6);
    const auto init = ModelWeights::random(small_dims(toy.vocab.size()), 3);
    TrainConfig cfg;
    cfg.adam.learning_rate = 0.0;
    cfg.batch_size = 2;
    cfg.max_epochs = 5;
    cfg.patience = kNoPatienceLimit;
    const auto r = fit(toy.data, toy.data, toy.vocab, init, cfg);
    CHECK(r.history.size() == 5);
    CHECK(r.weights == init);
}

TEST_CASE("adam first step moves each weight by about the learning rate") {
    auto w = ModelWeights::random(small_dims(10), 1);
    const auto before = w;
    auto g = ModelWeights::zeros(w.dims, w.options);
    g.embedding.data[0] = 3.0;
    g.embedding.data[1] = -0.001;
    AdamConfig cfg;
    cfg.learning_rate = 0.01;
    AdamOptimizer adam(w, cfg);
    adam.step(w, g);
    CHECK(w.embedding.data[0] == doctest::Approx(before.embedding.data[0] - 0.01).epsilon(1e-6));
    CHECK(w.embedding.data[1] == doctest::Approx(before.embedding.data[1] + 0.01).epsilon(1e-4));
    CHECK(w.embedding.data[2] == before.embedding.data[2]);
    CHECK(adam.steps() == 1);
    CHECK_THROWS_AS(AdamOptimizer(w, AdamConfig{-1.0}), text::ParameterError);
}

TEST_CASE("fixed seed gives a bitwise identical trajectory") {
    Toy toy(10);
    TrainConfig cfg;
    cfg.batch_size = 3;
    cfg.max_epochs = 6;
    cfg.dropout = 0.3;
    cfg.seed = 9;
    const auto init = ModelWeights::random(small_dims(toy.vocab.size()), 4);
    const auto a = train(toy.data, toy.vocab, init, cfg);
    const auto b = train(toy.data, toy.vocab, init, cfg);
    CHECK(a.weights == b.weights);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].bleu == b.history[i].bleu);
    }
    cfg.seed = 10;
    CHECK_FALSE(train(toy.data, toy.vocab, init, cfg).weights == a.weights);
}

TEST_CASE("single pair overfits: loss falls below 0.01 and generation reproduces it") {
    Toy toy(1);
    TrainConfig cfg;
    cfg.adam.learning_rate = 1e-2;
    cfg.batch_size = 1;
    cfg.max_epochs = 400;
    cfg.patience = kNoPatienceLimit;
    const auto r = fit(toy.data, toy.data, toy.vocab, ModelWeights::random(small_dims(toy.vocab.size()), 2), cfg);
    REQUIRE(r.history.size() >= 50);
    CHECK(r.history[49].train_loss < r.history[0].train_loss);
    CHECK(r.history.back().train_loss < 0.01);
    CHECK(generate(toy.data[0].features, r.weights).caption == toy.data[0].caption);
}

TEST_CASE("target loss stops early") {
    Toy toy(1);
    TrainConfig cfg;
    cfg.adam.learning_rate = 1e-2;
    cfg.batch_size = 1;
    cfg.max_epochs = 1000;
    cfg.patience = kNoPatienceLimit;
    cfg.target_loss = 0.5;
    const auto r = fit(toy.data, toy.data, toy.vocab, ModelWeights::random(small_dims(toy.vocab.size()), 2), cfg);
    CHECK(r.history.back().train_loss < 0.5);
    CHECK(r.history.size() < 1000);
    for (std::size_t i = 0; i + 1 < r.history.size(); ++i) CHECK(r.history[i].train_loss >= 0.5);
}

TEST_CASE("patience stops training and best weights are kept") {
    Toy toy(5);
    TrainConfig cfg;
    cfg.adam.learning_rate = 0.0;
    cfg.max_epochs = 50;
    cfg.patience = 3;
    const auto init = ModelWeights::random(small_dims(toy.vocab.size()), 8);
    const auto r = fit(toy.data, toy.data, toy.vocab, init, cfg);
    CHECK(r.history.size() == 4);
    CHECK(r.best_epoch == 1);
}

TEST_CASE("split sizes and filtering") {
    Toy toy(20);
    toy.data[3].caption.ids.assign(25, 4);
    toy.data[7].caption.ids.clear();
    TrainConfig cfg;
    cfg.max_epochs = 1;
    const auto r = train(toy.data, toy.vocab, ModelWeights::random(small_dims(toy.vocab.size()), 1), cfg);
    CHECK(r.removed_too_long == 2);
    CHECK(r.validation_size == 2);
    CHECK(r.train_size == 16);
}

TEST_CASE("degenerate datasets are parameter errors") {
    Toy toy(2);
    const auto init = ModelWeights::random(small_dims(toy.vocab.size()), 1);
    TrainConfig cfg;
    cfg.max_epochs = 1;
    CHECK_THROWS_AS(train({toy.data[0]}, toy.vocab, init, cfg), text::ParameterError);
    cfg.validation_fraction = 0.9;
    CHECK_THROWS_AS(train(toy.data, toy.vocab, init, cfg), text::ParameterError);
    cfg.validation_fraction = 0.0;
    CHECK_THROWS_AS(train(toy.data, toy.vocab, init, cfg), text::ParameterError);
    CHECK_THROWS_AS(fit({}, toy.data, toy.vocab, init, TrainConfig{}), text::ParameterError);
    CHECK_THROWS_AS(fit(toy.data, {}, toy.vocab, init, TrainConfig{}), text::ParameterError);
    cfg.validation_fraction = 0.5;
    CHECK_NOTHROW(train(toy.data, toy.vocab, init, cfg));
}

TEST_CASE("empty hypotheses score zero bleu") {
    Toy toy(3);
    // zero weights: uniform distribution, greedy picks END first
    const auto w = ModelWeights::zeros(small_dims(toy.vocab.size()), {});
    CHECK(generate(toy.data[0].features, w).degenerate);
    for (double b : evaluate_bleu(toy.data, w, toy.vocab, 20)) CHECK(b == 0.0);
}

TEST_CASE("history csv format") {
    std::vector<EpochMetrics> h{{1, 2.5, {0.5, 0.25, 0.125, 0.0625}}, {2, 1.0, {1, 1, 1, 1}}};
    std::ostringstream out;
    write_history_csv(out, h);
    CHECK(out.str() ==
          "epoch,train_loss,bleu1,bleu2,bleu3,bleu4\n"
          "1,2.500000,0.500000,0.250000,0.125000,0.062500\n"
          "2,1.000000,1.000000,1.000000,1.000000,1.000000\n");
}

TEST_CASE("vocabulary remap carries shared tokens") {
    text::Vocabulary old_vocab({"rock", "dune"});
    text::Vocabulary new_vocab({"crater", "rock", "ice", "dune"});
    const auto w = ModelWeights::random(small_dims(old_vocab.size()), 6);
    const auto r = remap_vocabulary(w, old_vocab, new_vocab, 2);
    CHECK(r.dims.vocab == new_vocab.size());
    CHECK_NOTHROW(r.check_shapes());
    for (const std::string tok : {"<start>", "<end>", "<pad>", "<unk>", "rock", "dune"}) {
        const auto a = old_vocab.id_of(tok), b = new_vocab.id_of(tok);
        for (std::size_t k = 0; k < w.dims.embed; ++k) {
            CHECK(r.embedding(k, b) == w.embedding(k, a));
            CHECK(r.out_vocab(b, k) == w.out_vocab(a, k));
        }
    }
    CHECK(r.gates[0].W == w.gates[0].W);
    CHECK(r.out_hidden == w.out_hidden);
    CHECK_THROWS_AS(remap_vocabulary(w, new_vocab, old_vocab, 2), ShapeError);
}
