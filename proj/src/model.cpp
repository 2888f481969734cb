#include "xprompt/model.hpp"

#include <stdexcept>
#include <string>

#include "engine.hpp"
#include "xprompt/rng.hpp"

namespace xp {

void ModelConfig::validate() const {
    if (n_layers <= 0 || n_heads <= 0 || d_model <= 0 || d_ffn <= 0 || max_seq_len <= 0 ||
        vocab_size <= 0) {
        throw std::invalid_argument("model config dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw std::invalid_argument("d_model must be divisible by n_heads");
    }
}

template <typename S>
WeightsT<S> make_weights(const ModelConfig& config) {
    config.validate();
    WeightsT<S> w;
    w.config = config;
    w.tok_emb.resize(config.vocab_size, config.d_model);
    w.pos_emb.resize(config.max_seq_len, config.d_model);
    w.layers.resize(static_cast<size_t>(config.n_layers));
    for (auto& l : w.layers) {
        l.ln1_g.resize(1, config.d_model);
        l.ln1_b.resize(1, config.d_model);
        l.wq.resize(config.d_model, config.d_model);
        l.bq.resize(1, config.d_model);
        l.wk.resize(config.d_model, config.d_model);
        l.bk.resize(1, config.d_model);
        l.wv.resize(config.d_model, config.d_model);
        l.bv.resize(1, config.d_model);
        l.wo.resize(config.d_model, config.d_model);
        l.bo.resize(1, config.d_model);
        l.ln2_g.resize(1, config.d_model);
        l.ln2_b.resize(1, config.d_model);
        l.w1.resize(config.d_model, config.d_ffn);
        l.b1.resize(1, config.d_ffn);
        l.w2.resize(config.d_ffn, config.d_model);
        l.b2.resize(1, config.d_model);
    }
    w.lnf_g.resize(1, config.d_model);
    w.lnf_b.resize(1, config.d_model);
    return w;
}

template WeightsT<float> make_weights<float>(const ModelConfig&);
template WeightsT<double> make_weights<double>(const ModelConfig&);

WeightsT<double> widen_weights(const ModelWeights& w) {
    WeightsT<double> out = make_weights<double>(w.config);
    std::vector<const Mat<float>*> src;
    w.for_each_tensor([&](const Mat<float>& m) { src.push_back(&m); });
    size_t i = 0;
    out.for_each_tensor([&](Mat<double>& m) {
        m = cast_mat<float, double>(*src[i]);
        ++i;
    });
    return out;
}

uint64_t weights_checksum(const ModelWeights& w) {
    uint64_t state = fnv1a64(&w.config, sizeof(w.config));
    w.for_each_tensor([&](const Mat<float>& m) { state = checksum(m, state); });
    return state;
}

ModelWeights init_model(const ModelConfig& config, uint64_t seed) {
    ModelWeights w = make_weights<float>(config);
    Rng rng(seed);
    auto fill_normal = [&](Mat<float>& m, double sigma) {
        for (auto& v : m.a) {
            v = static_cast<float>(rng.normal() * sigma);
        }
    };
    fill_normal(w.tok_emb, 0.02);
    fill_normal(w.pos_emb, 0.01);
    for (auto& l : w.layers) {
        l.ln1_g.fill(1.0f);
        fill_normal(l.wq, 0.02);
        fill_normal(l.wk, 0.02);
        fill_normal(l.wv, 0.02);
        fill_normal(l.wo, 0.02);
        l.ln2_g.fill(1.0f);
        fill_normal(l.w1, 0.02);
        fill_normal(l.w2, 0.02);
    }
    w.lnf_g.fill(1.0f);
    return w;
}

LogProbs forward_logprobs(const ModelWeights& w, const EmbeddingTable& emb,
                          const std::vector<int>& ids) {
    return Engine<float>(w).logprobs(emb.extension, ids);
}

double score_continuation(const ModelWeights& w, const EmbeddingTable& emb,
                          const std::vector<int>& prompt_ids,
                          const std::vector<int>& continuation_ids) {
    return Engine<float>(w).score(emb.extension, prompt_ids, continuation_ids);
}

namespace {

void check_positions(const std::vector<int>& target_positions, size_t prompt_len) {
    for (const int p : target_positions) {
        if (p < 0 || static_cast<size_t>(p) >= prompt_len) {
            throw std::invalid_argument("target position out of range: " + std::to_string(p));
        }
    }
}

}  // namespace

Mat<float> input_embedding_grad(const ModelWeights& w, const EmbeddingTable& emb,
                                const std::vector<int>& prompt_ids,
                                const std::vector<int>& continuation_ids,
                                const std::vector<int>& target_positions) {
    check_positions(target_positions, prompt_ids.size());
    Mat<float> dinput;
    Engine<float>(w).score_grad(emb.extension, prompt_ids, continuation_ids, &dinput, nullptr);
    Mat<float> out(static_cast<int>(target_positions.size()), w.config.d_model);
    for (size_t i = 0; i < target_positions.size(); ++i) {
        const float* src = dinput.row(target_positions[i]);
        std::copy(src, src + w.config.d_model, out.row(static_cast<int>(i)));
    }
    return out;
}

double score_continuation_f64(const ModelWeights& w, const EmbeddingTable& emb,
                              const std::vector<int>& prompt_ids,
                              const std::vector<int>& continuation_ids) {
    const WeightsT<double> wd = widen_weights(w);
    const Mat<double> ext = cast_mat<float, double>(emb.extension);
    return Engine<double>(wd).score(ext, prompt_ids, continuation_ids);
}

Mat<double> input_embedding_grad_f64(const ModelWeights& w, const EmbeddingTable& emb,
                                     const std::vector<int>& prompt_ids,
                                     const std::vector<int>& continuation_ids,
                                     const std::vector<int>& target_positions) {
    check_positions(target_positions, prompt_ids.size());
    const WeightsT<double> wd = widen_weights(w);
    const Mat<double> ext = cast_mat<float, double>(emb.extension);
    Mat<double> dinput;
    Engine<double>(wd).score_grad(ext, prompt_ids, continuation_ids, &dinput, nullptr);
    Mat<double> out(static_cast<int>(target_positions.size()), w.config.d_model);
    for (size_t i = 0; i < target_positions.size(); ++i) {
        const double* src = dinput.row(target_positions[i]);
        std::copy(src, src + w.config.d_model, out.row(static_cast<int>(i)));
    }
    return out;
}

}  // namespace xp
