#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "engine.hpp"
#include "xprompt/model.hpp"
#include "xprompt/rng.hpp"

namespace xp {
namespace {

int pick_greedy(const std::vector<float>& logits) {
    int arg = 0;
    for (int j = 1; j < static_cast<int>(logits.size()); ++j) {
        if (logits[j] > logits[arg]) {
            arg = j;
        }
    }
    return arg;
}

int pick_sample(const std::vector<float>& logits, const DecodeConfig& decode, Rng& rng) {
    // order by logit descending, ties toward the lowest id
    std::vector<int> order(logits.size());
    for (size_t j = 0; j < logits.size(); ++j) {
        order[j] = static_cast<int>(j);
    }
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (logits[a] != logits[b]) {
            return logits[a] > logits[b];
        }
        return a < b;
    });
    if (decode.top_k > 0 && decode.top_k < static_cast<int>(order.size())) {
        order.resize(static_cast<size_t>(decode.top_k));
    }
    const double mx = logits[order.front()];
    std::vector<double> p(order.size());
    double z = 0.0;
    for (size_t j = 0; j < order.size(); ++j) {
        p[j] = std::exp((logits[order[j]] - mx) / decode.temperature);
        z += p[j];
    }
    const double r = rng.next_double() * z;
    double cdf = 0.0;
    for (size_t j = 0; j < order.size(); ++j) {
        cdf += p[j];
        if (r < cdf) {
            return order[j];
        }
    }
    return order.back();
}

}  // namespace

std::vector<int> generate(const ModelWeights& w, const EmbeddingTable& emb,
                          const std::vector<int>& prompt_ids, const DecodeConfig& decode) {
    if (prompt_ids.empty()) {
        throw std::invalid_argument("prompt must contain at least one token");
    }
    if (decode.max_new_tokens < 1) {
        throw std::invalid_argument("max_new_tokens must be at least 1");
    }
    if (decode.mode == DecodeConfig::Mode::kSample && decode.temperature <= 0.0) {
        throw std::invalid_argument("sampling temperature must be positive");
    }
    const Engine<float> eng(w);
    constexpr int kEos = 1;
    Rng rng(decode.seed);
    std::vector<int> ids = prompt_ids;
    std::vector<int> out;
    for (int step = 0; step < decode.max_new_tokens; ++step) {
        if (static_cast<int>(ids.size()) >= w.config.max_seq_len) {
            break;  // context full; nothing more can be conditioned on
        }
        const std::vector<float> logits = eng.last_logits(emb.extension, ids);
        const int next = decode.mode == DecodeConfig::Mode::kGreedy
                             ? pick_greedy(logits)
                             : pick_sample(logits, decode, rng);
        out.push_back(next);
        ids.push_back(next);
        if (next == kEos) {
            break;
        }
    }
    return out;
}

}  // namespace xp
