#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <vector>

#include "spass/captioner/model.hpp"
#include "spass/captioner/weights.hpp"
#include "spass/text.hpp"

namespace spass::captioner {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class AdamOptimizer {
public:
    AdamOptimizer(const ModelWeights& like, const AdamConfig& cfg);
    void step(ModelWeights& w, const ModelWeights& grad);
    std::size_t steps() const { return t_; }

private:
    AdamConfig cfg_;
    ModelWeights m_, v_;
    std::size_t t_ = 0;
};

inline constexpr std::size_t kNoPatienceLimit = std::numeric_limits<std::size_t>::max();

struct TrainConfig {
    AdamConfig adam;
    std::size_t batch_size = 16;
    double dropout = 0.0;
    std::size_t patience = 20;  // epochs without BLEU-4 improvement
    std::size_t max_epochs = 200;
    double validation_fraction = 0.10;
    std::size_t max_caption_length = text::kDefaultMaxCaptionLength;
    std::uint64_t seed = 1;
    // Stop as soon as an epoch's mean training loss falls below this.
    std::optional<double> target_loss;
};

// Mean sentence-level BLEU-1..4 (uniform weights) of greedy captions against
// each sample's reference caption.
using BleuScores = std::array<double, 4>;

struct EpochMetrics {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    BleuScores bleu{};
};

struct TrainResult {
    ModelWeights weights;  // best validation BLEU-4
    std::vector<EpochMetrics> history;
    std::size_t best_epoch = 0;
    std::size_t removed_too_long = 0;
    std::size_t train_size = 0;
    std::size_t validation_size = 0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

BleuScores evaluate_bleu(const std::vector<TrainingSample>& samples, const ModelWeights& w,
                         const text::Vocabulary& vocab, std::size_t max_len);

// Trains on `train_set`, early-stopping on BLEU-4 measured on `validation_set`.
TrainResult fit(const std::vector<TrainingSample>& train_set, const std::vector<TrainingSample>& validation_set,
                const text::Vocabulary& vocab, ModelWeights init, const TrainConfig& cfg,
                const EpochCallback& on_epoch = {});

// Drops captions longer than max_caption_length, shuffles with the seed and
// splits by validation_fraction before calling fit.
TrainResult train(const std::vector<TrainingSample>& dataset, const text::Vocabulary& vocab, ModelWeights init,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// epoch,train_loss,bleu1,bleu2,bleu3,bleu4
void write_history_csv(std::ostream& out, const std::vector<EpochMetrics>& history);

// Rebuilds the vocabulary-dependent tensors for `new_vocab`, carrying over
// rows/columns of tokens present in both vocabularies and initializing the
// rest from `seed`.
ModelWeights remap_vocabulary(const ModelWeights& w, const text::Vocabulary& old_vocab,
                              const text::Vocabulary& new_vocab, std::uint64_t seed);

}  // namespace spass::captioner
