#include "xprompt/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "engine.hpp"
#include "xprompt/rng.hpp"
#include "xprompt/threading.hpp"

namespace xp {

void PretrainConfig::validate() const {
    if (max_lr <= 0.0 || total_updates < 0 || tokens_per_batch <= 0) {
        throw std::invalid_argument("bad pretrain config");
    }
    if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0) {
        throw std::invalid_argument("warmup_fraction must be in (0, 1)");
    }
}

namespace {

constexpr int kBos = 0;
constexpr int kEos = 1;
constexpr size_t kGradGroup = 8;  // fixed accumulation group, thread-count invariant

// continuation actually trained on: the line plus a closing eos
std::vector<int> with_eos(const TrainingExample& ex) {
    std::vector<int> cont = ex.continuation_ids;
    cont.push_back(kEos);
    return cont;
}

std::vector<std::vector<const TrainingExample*>> pack_epoch(
    const std::vector<TrainingExample>& corpus, int tokens_per_batch, Rng& rng) {
    std::vector<size_t> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    rng.shuffle(order);
    std::vector<std::vector<const TrainingExample*>> batches;
    std::vector<const TrainingExample*> cur;
    int tokens = 0;
    for (const size_t i : order) {
        const int n = static_cast<int>(corpus[i].continuation_ids.size()) + 1;  // + eos
        if (!cur.empty() && tokens + n > tokens_per_batch) {
            batches.push_back(std::move(cur));
            cur.clear();
            tokens = 0;
        }
        cur.push_back(&corpus[i]);
        tokens += n;
    }
    if (!cur.empty()) {
        batches.push_back(std::move(cur));
    }
    return batches;
}

}  // namespace

PretrainResult train_base_model(ModelWeights& w, const std::vector<TrainingExample>& corpus,
                                const PretrainConfig& config) {
    config.validate();
    if (corpus.empty()) {
        throw std::invalid_argument("empty corpus");
    }
    for (const auto& ex : corpus) {
        if (static_cast<int>(ex.continuation_ids.size()) + 2 > w.config.max_seq_len) {
            throw std::invalid_argument("corpus line exceeds max_seq_len");
        }
    }
    const std::vector<int> prompt = {kBos};

    // one Adam state per tensor, visited in the declared order every step
    std::vector<Mat<float>*> params;
    w.for_each_tensor([&](Mat<float>& m) { params.push_back(&m); });
    std::vector<OptimizerState> opt;
    opt.reserve(params.size());
    for (const Mat<float>* p : params) {
        opt.push_back(OptimizerState::like(*p, config.beta1, config.beta2, config.epsilon));
    }

    const Mat<float> no_ext(0, w.config.d_model);
    PretrainResult result;
    result.log.reserve(static_cast<size_t>(config.total_updates));

    std::vector<std::vector<const TrainingExample*>> batches;
    size_t next_batch = 0;
    int epoch = 0;
    for (int step = 1; step <= config.total_updates; ++step) {
        if (next_batch >= batches.size()) {
            Rng epoch_rng(derive_seed(config.seed, "pretrain-epoch:" + std::to_string(epoch)));
            batches = pack_epoch(corpus, config.tokens_per_batch, epoch_rng);
            next_batch = 0;
            ++epoch;
        }
        const auto& batch = batches[next_batch];
        ++next_batch;

        const Engine<float> eng(w);  // rebuilt: cached transposes go stale per update
        const size_t n_groups = (batch.size() + kGradGroup - 1) / kGradGroup;
        std::vector<ModelWeights> group_grads(n_groups);
        std::vector<double> group_logp(n_groups, 0.0);
        std::vector<long> group_tokens(n_groups, 0);
        parallel_for(n_groups, config.threads, [&](size_t g) {
            group_grads[g] = make_weights<float>(w.config);
            const size_t begin = g * kGradGroup;
            const size_t end = std::min(batch.size(), begin + kGradGroup);
            for (size_t i = begin; i < end; ++i) {
                const std::vector<int> cont = with_eos(*batch[i]);
                group_logp[g] += eng.score_grad(no_ext, prompt, cont, nullptr, &group_grads[g]);
                group_tokens[g] += static_cast<long>(cont.size());
            }
        });

        double logp = 0.0;
        long tokens = 0;
        for (size_t g = 0; g < n_groups; ++g) {
            logp += group_logp[g];
            tokens += group_tokens[g];
        }
        const double mean_nll = -logp / static_cast<double>(tokens);
        if (!std::isfinite(mean_nll)) {
            throw std::runtime_error("pretraining diverged (non-finite loss) at step " +
                                     std::to_string(step));
        }
        const double lr =
            lr_at_step(config.max_lr, config.total_updates, config.warmup_fraction, step);
        result.log.push_back({step, lr, mean_nll});

        // descent on mean NLL = -(1/tokens) * accumulated log-prob gradient
        const float scale = static_cast<float>(-1.0 / static_cast<double>(tokens));
        std::vector<std::vector<Mat<float>*>> group_tensors(n_groups);
        for (size_t g = 0; g < n_groups; ++g) {
            group_grads[g].for_each_tensor(
                [&](Mat<float>& m) { group_tensors[g].push_back(&m); });
        }
        for (size_t t = 0; t < params.size(); ++t) {
            Mat<float> grad(params[t]->rows, params[t]->cols);
            for (size_t g = 0; g < n_groups; ++g) {
                const Mat<float>& part = *group_tensors[g][t];
                for (size_t i = 0; i < grad.a.size(); ++i) {
                    grad.a[i] += part.a[i];
                }
            }
            for (auto& v : grad.a) {
                v *= scale;
            }
            adam_step(opt[t], grad, lr, *params[t]);
        }
    }
    return result;
}

double base_lm_perplexity(const ModelWeights& w, const std::vector<TrainingExample>& dataset,
                          int threads) {
    if (dataset.empty()) {
        throw std::invalid_argument("empty evaluation dataset");
    }
    const Engine<float> eng(w);
    const Mat<float> no_ext(0, w.config.d_model);
    const std::vector<int> prompt = {kBos};
    std::vector<double> nll(dataset.size(), 0.0);
    std::vector<long> count(dataset.size(), 0);
    parallel_for(dataset.size(), threads, [&](size_t i) {
        const std::vector<int> cont = with_eos(dataset[i]);
        nll[i] = -eng.score(no_ext, prompt, cont);
        count[i] = static_cast<long>(cont.size());
    });
    double total = 0.0;
    long tokens = 0;
    for (size_t i = 0; i < dataset.size(); ++i) {
        total += nll[i];
        tokens += count[i];
    }
    return std::exp(total / static_cast<double>(tokens));
}

}  // namespace xp
