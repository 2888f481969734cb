#pragma once

#include <cstdint>
#include <vector>

#include "xprompt/tensor.hpp"

namespace xp {

// Shape of the desk-scale GPT-style decoder that stands in for a large
// frozen base LM. vocab_size counts base tokens only; imaginary words live
// in a separate extension table.
struct ModelConfig {
    int n_layers = 2;
    int n_heads = 4;
    int d_model = 64;
    int d_ffn = 128;
    int max_seq_len = 128;
    int vocab_size = 0;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Linear maps are applied as y = x W (row vectors), so W is stored
// input-dim x output-dim.
template <typename S>
struct LayerWeightsT {
    Mat<S> ln1_g, ln1_b;          // 1 x d_model
    Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;  // d x d and 1 x d
    Mat<S> ln2_g, ln2_b;          // 1 x d_model
    Mat<S> w1, b1;                // d x d_ffn, 1 x d_ffn
    Mat<S> w2, b2;                // d_ffn x d, 1 x d
};

// Full parameter set. The output head is tied to tok_emb (base rows only),
// so there is no separate projection tensor. Frozen after pretraining:
// nothing but the toy pretraining recipe may write to it.
template <typename S>
struct WeightsT {
    ModelConfig config;
    Mat<S> tok_emb;  // |V| x d_model
    Mat<S> pos_emb;  // max_seq_len x d_model
    std::vector<LayerWeightsT<S>> layers;
    Mat<S> lnf_g, lnf_b;  // final layernorm, 1 x d_model

    // Visits every tensor in the declared (serialization) order.
    template <typename F>
    void for_each_tensor(F&& f) {
        f(tok_emb);
        f(pos_emb);
        for (auto& l : layers) {
            f(l.ln1_g); f(l.ln1_b);
            f(l.wq); f(l.bq); f(l.wk); f(l.bk); f(l.wv); f(l.bv); f(l.wo); f(l.bo);
            f(l.ln2_g); f(l.ln2_b);
            f(l.w1); f(l.b1); f(l.w2); f(l.b2);
        }
        f(lnf_g);
        f(lnf_b);
    }
    template <typename F>
    void for_each_tensor(F&& f) const {
        const_cast<WeightsT*>(this)->for_each_tensor(
            [&](auto& m) { f(static_cast<const Mat<S>&>(m)); });
    }
};

using ModelWeights = WeightsT<float>;

// All tensors allocated to config shapes, zero-filled.
template <typename S>
WeightsT<S> make_weights(const ModelConfig& config);

extern template WeightsT<float> make_weights<float>(const ModelConfig&);
extern template WeightsT<double> make_weights<double>(const ModelConfig&);

WeightsT<double> widen_weights(const ModelWeights& w);

// Digest over every tensor's bytes, in declared order (frozen-weight checks).
uint64_t weights_checksum(const ModelWeights& w);

// The only trainable parameters in the system: one row per imaginary word,
// indexed by id - |V|. Base rows are read from ModelWeights.tok_emb.
struct EmbeddingTable {
    Mat<float> extension;  // |Ṽ| x d_model
};

// Per-position log-probability rows over the BASE vocabulary (n x |V|),
// each row normalized (logsumexp = 0).
using LogProbs = Mat<double>;

// Deterministic pseudo-random init: same (config, seed) -> identical bytes.
ModelWeights init_model(const ModelConfig& config, uint64_t seed);

// Causal forward pass; position t sees ids[0..t]. Imaginary ids embed via
// the extension table but are excluded from every output distribution.
LogProbs forward_logprobs(const ModelWeights& w, const EmbeddingTable& emb,
                          const std::vector<int>& ids);

// log P(continuation | prompt): sum over continuation positions only.
// Continuations must be base tokens; the prompt needs at least one token.
double score_continuation(const ModelWeights& w, const EmbeddingTable& emb,
                          const std::vector<int>& prompt_ids,
                          const std::vector<int>& continuation_ids);

// d(score_continuation)/d(embedding vector fed at each target position);
// one row per target position, in the order given. Positions index the
// prompt (continuation embeddings are conditioning for later positions,
// but only prompt slots hold trainable words).
Mat<float> input_embedding_grad(const ModelWeights& w, const EmbeddingTable& emb,
                                const std::vector<int>& prompt_ids,
                                const std::vector<int>& continuation_ids,
                                const std::vector<int>& target_positions);

// 64-bit verification mode: same math, double precision end to end.
// Exists for gradient checking against central finite differences.
double score_continuation_f64(const ModelWeights& w, const EmbeddingTable& emb,
                              const std::vector<int>& prompt_ids,
                              const std::vector<int>& continuation_ids);
Mat<double> input_embedding_grad_f64(const ModelWeights& w, const EmbeddingTable& emb,
                                     const std::vector<int>& prompt_ids,
                                     const std::vector<int>& continuation_ids,
                                     const std::vector<int>& target_positions);

struct DecodeConfig {
    enum class Mode { kGreedy, kSample };
    Mode mode = Mode::kGreedy;
    double temperature = 1.0;
    int top_k = 0;  // 0 = no truncation
    int max_new_tokens = 16;
    uint64_t seed = 0;
};

// Autoregressive decode; stops at eos (token id 1) or max_new_tokens.
// Imaginary ids are never emitted. Greedy ties break toward the lowest id;
// sampling is deterministic given the seed. Returns new tokens only.
std::vector<int> generate(const ModelWeights& w, const EmbeddingTable& emb,
                          const std::vector<int>& prompt_ids, const DecodeConfig& decode);

}  // namespace xp
