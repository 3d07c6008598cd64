#pragma once

// Soft-attention LSTM captioner: attention over annotation vectors, one LSTM
// step per word, a linear deep-output layer, decoding, and the teacher-forced
// cross-entropy loss with hand-written reverse-mode gradients.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "spass/captioner/weights.hpp"
#include "spass/text.hpp"

namespace spass::captioner {

using text::TokenId;

// L annotation vectors of dimension D, one row per location.
struct FeatureMap {
    Matrix annotations;

    std::size_t locations() const { return annotations.rows; }
    std::size_t dim() const { return annotations.cols; }
    // Throws ShapeError / NumericError.
    void validate(std::size_t expect_locations, std::size_t expect_dim) const;

    friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

struct AttentionState {
    Vector logits;   // e_t
    Vector weights;  // alpha_t
    Vector context;  // z_t
};

struct LstmState {
    Vector h, c;
    Vector input, forget, output;  // gate activations
    Vector candidate;              // tanh branch feeding the memory cell
};

AttentionState attend(const FeatureMap& features, std::span<const double> h_prev, const ModelWeights& w);

// (h_0, c_0) predicted from the mean annotation vector.
std::pair<Vector, Vector> init_state(const FeatureMap& features, const ModelWeights& w);

LstmState lstm_step(TokenId y_prev, std::span<const double> h_prev, std::span<const double> c_prev,
                    std::span<const double> context, const ModelWeights& w);

// softmax(L_o (E y_prev + L_h h + L_z z))
Vector word_distribution(TokenId y_prev, std::span<const double> h, std::span<const double> context,
                         const ModelWeights& w);

enum class DecodeMode { kGreedy, kBeam };

struct DecodeOptions {
    DecodeMode mode = DecodeMode::kGreedy;
    std::size_t beam_width = 3;
    std::size_t max_len = text::kDefaultMaxCaptionLength;
};

struct GeneratedCaption {
    text::Caption caption;  // content tokens only
    double log_prob = 0.0;
    bool degenerate = false;  // no content token before END
};

// Attention weights of every decode step, for inspection.
struct DecodeTrace {
    std::vector<Vector> attention;
};

// START and PAD are never emitted.
GeneratedCaption generate(const FeatureMap& features, const ModelWeights& w, const DecodeOptions& opts = {},
                          DecodeTrace* trace = nullptr);

struct TrainingSample {
    FeatureMap features;
    text::Caption caption;
};

struct LossAndGradients {
    double loss = 0.0;        // mean token cross-entropy
    std::size_t tokens = 0;   // predicted tokens, END included
    ModelWeights gradients;
};

// Teacher-forced cross-entropy averaged over all predicted tokens of the
// batch. Dropout (inverted) is applied to the hidden state entering the
// output layer; the mask stream is a function of `seed` only.
LossAndGradients loss_and_gradients(std::span<const TrainingSample* const> batch, const ModelWeights& w,
                                    double dropout_rate, std::uint64_t seed);
LossAndGradients loss_and_gradients(std::span<const TrainingSample> batch, const ModelWeights& w,
                                    double dropout_rate, std::uint64_t seed);

}  // namespace spass::captioner
