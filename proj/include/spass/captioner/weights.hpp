#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "spass/tensor.hpp"

namespace spass::captioner {

// Sizes of the attention captioner. `attention` is the hidden width of the
// attention scoring network (defaults to the LSTM width).
struct ModelDims {
    std::size_t vocab = 0;      // K
    std::size_t embed = 32;     // m
    std::size_t hidden = 64;    // n
    std::size_t feature = 32;   // D
    std::size_t locations = 16; // L
    std::size_t attention = 64;

    void validate() const;
    friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct ModelOptions {
    // Feed h_{t-1} instead of h_t to the output layer.
    bool output_uses_prev_hidden = false;
    friend bool operator==(const ModelOptions&, const ModelOptions&) = default;
};

enum Gate : std::size_t { kInputGate = 0, kForgetGate = 1, kCellGate = 2, kOutputGate = 3 };
inline constexpr std::array<std::string_view, 4> kGateNames{"i", "f", "c", "o"};

struct LstmGateWeights {
    Matrix W;  // n x m, applied to the previous word embedding
    Matrix U;  // n x n, applied to h_{t-1}
    Matrix Z;  // n x D, applied to the context vector
    Matrix b;  // n x 1

    friend bool operator==(const LstmGateWeights&, const LstmGateWeights&) = default;
};

// One hidden layer, tanh on both layers.
struct InitNetWeights {
    Matrix W1;  // n x D
    Matrix b1;  // n x 1
    Matrix W2;  // n x n
    Matrix b2;  // n x 1

    friend bool operator==(const InitNetWeights&, const InitNetWeights&) = default;
};

struct ModelWeights {
    ModelDims dims;
    ModelOptions options;

    Matrix embedding;  // E: m x K

    // f_att(a_i, h) = v . tanh(W_a a_i + W_h h + b)
    Matrix att_feature;  // W_a: A x D
    Matrix att_hidden;   // W_h: A x n
    Matrix att_bias;     // b:   A x 1
    Matrix att_score;    // v:   1 x A

    std::array<LstmGateWeights, 4> gates;
    InitNetWeights init_h;
    InitNetWeights init_c;

    Matrix out_vocab;    // L_o: K x m
    Matrix out_hidden;   // L_h: m x n
    Matrix out_context;  // L_z: m x D

    static ModelWeights zeros(const ModelDims& dims, ModelOptions options = {});
    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrices, zero biases.
    static ModelWeights random(const ModelDims& dims, std::uint64_t seed, ModelOptions options = {});

    // Visits every learned tensor with its stable serialization name.
    template <class F>
    void for_each(F&& f) {
        f(std::string("embedding"), embedding);
        f(std::string("attention.W_a"), att_feature);
        f(std::string("attention.W_h"), att_hidden);
        f(std::string("attention.b"), att_bias);
        f(std::string("attention.v"), att_score);
        for (std::size_t g = 0; g < 4; ++g) {
            const std::string s(kGateNames[g]);
            f("lstm.W_" + s, gates[g].W);
            f("lstm.U_" + s, gates[g].U);
            f("lstm.Z_" + s, gates[g].Z);
            f("lstm.b_" + s, gates[g].b);
        }
        f(std::string("init_h.W1"), init_h.W1);
        f(std::string("init_h.b1"), init_h.b1);
        f(std::string("init_h.W2"), init_h.W2);
        f(std::string("init_h.b2"), init_h.b2);
        f(std::string("init_c.W1"), init_c.W1);
        f(std::string("init_c.b1"), init_c.b1);
        f(std::string("init_c.W2"), init_c.W2);
        f(std::string("init_c.b2"), init_c.b2);
        f(std::string("output.L_o"), out_vocab);
        f(std::string("output.L_h"), out_hidden);
        f(std::string("output.L_z"), out_context);
    }

    template <class F>
    void for_each(F&& f) const {
        const_cast<ModelWeights*>(this)->for_each(
            [&](const std::string& name, Matrix& m) { f(name, static_cast<const Matrix&>(m)); });
    }

    std::size_t parameter_count() const;
    bool all_finite() const;
    // Throws ShapeError when any tensor disagrees with `dims`.
    void check_shapes() const;

    friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

}  // namespace spass::captioner
