#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sevad/tensor.hpp"
#include "sevad/windowing.hpp"

namespace sevad {

// Token vocabulary of the state classifier.
enum Token : int { kContinue = 0, kStop = 1, kEos = 2 };
constexpr int kVocab = 3;

// Desk-scale classifier: a 2-layer strided causal convolution encoder
// (100 Hz -> 25 Hz), a concat-k downsampling adapter MLP, and a small
// causal self-attention backbone that autoregressively emits the two-token
// state sequence {y, <eos>}.
struct ModelConfig {
    int n_mels = 80;
    int d_enc = 64;
    int conv_kernel = 3;
    int concat_k = 4;
    int d_hidden = 128;  // adapter hidden width
    int d_model = 128;
    int n_heads = 4;
    int n_layers = 2;
    int d_ff = 256;
    int prompt_len = 4;
    int max_seq = 32;
    // Fixed affine applied to incoming log-mel values before the encoder.
    float input_shift = -13.0f;
    float input_scale = 1.0f / 6.0f;

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct DecisionT {
    int y = kContinue;
    TensorT<T> logits;  // [2 x 3], one row per decoded position
    T confidence = T(0);
};
using StateDecision = DecisionT<float>;

template <typename T>
struct LinearT {
    TensorT<T> w;  // [out x in]
    TensorT<T> b;  // [out]
};

template <typename T>
struct LayerNormT {
    TensorT<T> gamma;
    TensorT<T> beta;
};

template <typename T>
struct BlockT {
    LayerNormT<T> ln1;
    LinearT<T> wq, wk, wv, wo;
    LayerNormT<T> ln2;
    LinearT<T> ff1, ff2;
};

// Concatenate every k consecutive rows along the feature axis; the
// trailing rows % k rows are dropped. [N x d] -> [floor(N/k) x k*d].
template <typename T>
TensorT<T> downsample_concat(const TensorT<T>& a, int k);

// Pads a window shorter than min_frames by repeating its final frame, so
// the tail chunk stays classifiable. Returns the frames unchanged when
// already long enough.
std::vector<float> pad_frames(const float* frames, int64_t len, int n_mels,
                              int64_t min_frames);

template <typename T>
struct ModelT {
    ModelConfig cfg;

    TensorT<T> conv1_w, conv1_b;  // [d_enc x n_mels x K]
    TensorT<T> conv2_w, conv2_b;  // [d_enc x d_enc x K]
    LinearT<T> adapter1;          // k*d_enc -> d_hidden
    LinearT<T> adapter2;          // d_hidden -> d_model
    TensorT<T> tok_emb;           // [3 x d_model]
    TensorT<T> pos_emb;           // [max_seq x d_model]
    TensorT<T> prompt;            // [prompt_len x d_model]
    std::vector<BlockT<T>> blocks;
    LayerNormT<T> final_ln;
    LinearT<T> head;              // d_model -> 3

    static ModelT init(const ModelConfig& cfg, uint64_t seed);
    // Same shapes, all zero. Used for gradients and optimizer state.
    static ModelT zeros_like(const ModelT& m);

    // Fixed-order registry of every trainable tensor; checkpoint layout,
    // optimizer slots and the finite-difference sweep all follow it.
    std::vector<std::pair<std::string, TensorT<T>*>> param_registry();
    std::vector<std::pair<std::string, const TensorT<T>*>> param_registry() const;

    // 4x-downsampling causal encoder: [len x n_mels] window -> [len/4 x d_enc]
    // rows at 25 Hz. Throws degenerate_input_error below 4 frames.
    TensorT<T> encode(const float* frames, int64_t len) const;

    // Adapter MLP applied row-wise to concat-k features.
    TensorT<T> adapter_forward(const TensorT<T>& a_i) const;

    // Greedy two-token decode for one window. Pads internally so that the
    // adapted sequence is non-empty (see pad_frames).
    DecisionT<T> classify_window(const float* frames, int64_t len) const;
    DecisionT<T> classify_chunk(const ChunkView& chunk) const;

    // Teacher-forced sequence loss for one (window, label) pair: the sum of
    // the two decoded positions' cross-entropies. When `grads` is non-null,
    // accumulates d(loss)/d(param) into it.
    T compute_loss(const float* frames, int64_t len, int label, ModelT* grads) const;

    bool frozen_encoder = false;  // skip encoder gradient accumulation
};

using Model = ModelT<float>;

// Uniform-logits loss reference: two positions over a 3-token vocabulary.
double uniform_loss_reference();

template <typename T>
void check_finite_or_throw(const ModelT<T>& m, const TensorT<T>& logits);

}  // namespace sevad
