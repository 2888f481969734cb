#pragma once

// Internal execution engine behind the public model API. Templated on the
// scalar type: float is the runtime mode, double the verification mode used
// by gradient checks. Construction caches transposed weight copies so every
// hot matmul runs in the broadcast-FMA orientation (fast on one core).

#include <cmath>
#include <stdexcept>
#include <vector>

#include "xprompt/model.hpp"

namespace xp {

// c (m x n) += a (m x k) · b (k x n); all row-major, tightly packed.
template <typename S>
inline void mm_add_nn(S* c, const S* a, const S* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const S* ai = a + static_cast<size_t>(i) * k;
        S* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const S av = ai[p];
            const S* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) {
                ci[j] += av * bp[j];
            }
        }
    }
}

// c (m x n) += aᵀ · b where a is (k x m), b is (k x n).
template <typename S>
inline void mm_add_tn(S* c, const S* a, const S* b, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const S* ap = a + static_cast<size_t>(p) * m;
        const S* bp = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const S av = ap[i];
            S* ci = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                ci[j] += av * bp[j];
            }
        }
    }
}

template <typename S>
inline S gelu(S x) {
    return S(0.5) * x * (S(1) + std::erf(x * S(0.7071067811865475)));
}

template <typename S>
inline S gelu_deriv(S x) {
    const S phi_cdf = S(0.5) * (S(1) + std::erf(x * S(0.7071067811865475)));
    const S phi_pdf = S(0.3989422804014327) * std::exp(S(-0.5) * x * x);
    return phi_cdf + x * phi_pdf;
}

// Per-continuation-position scoring results (eval path).
struct ScoredTokens {
    std::vector<double> nll;  // -log P(token | prefix), one per continuation token
    std::vector<int> argmax;  // model's top base token at that position (ties -> lowest id)
};

template <typename S>
class Engine {
public:
    explicit Engine(const WeightsT<S>& w);

    const ModelConfig& config() const { return w_->config; }
    const WeightsT<S>& weights() const { return *w_; }

    // Normalized log-probabilities over the base vocabulary, every position.
    LogProbs logprobs(const Mat<S>& ext, const std::vector<int>& ids) const;

    // log P(cont | prompt); grads optional. dinput, when given, receives
    // d(score)/d(input embedding) for every position (len(prompt)+len(cont)
    // rows). wgrads, when given, is accumulated into (+=), including the
    // token-embedding rows via both the input path and the tied head.
    double score(const Mat<S>& ext, const std::vector<int>& prompt_ids,
                 const std::vector<int>& continuation_ids) const;
    double score_grad(const Mat<S>& ext, const std::vector<int>& prompt_ids,
                      const std::vector<int>& continuation_ids, Mat<S>* dinput,
                      WeightsT<S>* wgrads) const;

    // Per-token NLL and argmax for eval metrics.
    ScoredTokens score_tokens(const Mat<S>& ext, const std::vector<int>& prompt_ids,
                              const std::vector<int>& continuation_ids) const;

    // Unnormalized base-vocab logits at the last position (decode path).
    std::vector<S> last_logits(const Mat<S>& ext, const std::vector<int>& ids) const;

private:
    struct LayerStash {
        Mat<S> x;          // layer input (residual stream)
        Mat<S> ln1;        // post first layernorm
        std::vector<S> mu1, rs1;
        Mat<S> q, k, v;    // projections, heads side by side
        Mat<S> att;        // attention probs, row i: [head0 j..][head1 j..], L cols per head
        Mat<S> ctx;        // attention-weighted values, pre output projection
        Mat<S> x2;         // residual after attention
        Mat<S> ln2;
        std::vector<S> mu2, rs2;
        Mat<S> h1;         // FFN pre-activation
        Mat<S> h1g;        // gelu(h1)
    };
    struct Stash {
        std::vector<LayerStash> layers;
        Mat<S> xf;  // trunk output, pre final layernorm
        Mat<S> hf;  // post final layernorm
        std::vector<S> muf, rsf;
    };

    const WeightsT<S>* w_;
    Mat<S> emb_t_;  // d_model x |V|
    struct LayerTrans {
        Mat<S> wq_t, wk_t, wv_t, wo_t, w1_t, w2_t;
    };
    std::vector<LayerTrans> lt_;

    const S* emb_row(const Mat<S>& ext, int id) const {
        return id < w_->config.vocab_size ? w_->tok_emb.row(id)
                                          : ext.row(id - w_->config.vocab_size);
    }
    void check_ids(const Mat<S>& ext, const std::vector<int>& ids) const;
    void check_score_args(const Mat<S>& ext, const std::vector<int>& prompt_ids,
                          const std::vector<int>& continuation_ids) const;

    // Trunk + logits for positions [lo, hi); logits resized to (hi-lo) x |V|.
    void forward(const Mat<S>& ext, const std::vector<int>& ids, int lo, int hi,
                 Stash* stash, Mat<S>& logits) const;
    void backward(const std::vector<int>& ids, int lo, const Mat<S>& dlogits,
                  const Stash& stash, Mat<S>* dinput, WeightsT<S>* wgrads) const;

    // score + optional gradient plumbing shared by the public entry points
    double scored_sum(const Mat<S>& logits, const std::vector<int>& continuation_ids,
                      Mat<S>* dlogits, ScoredTokens* per_token) const;
};

extern template class Engine<float>;
extern template class Engine<double>;

}  // namespace xp
