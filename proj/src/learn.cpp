#include "xprompt/learn.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "engine.hpp"
#include "xprompt/threading.hpp"

namespace xp {

void TrainConfig::validate() const {
    if (max_lr <= 0.0) {
        throw std::invalid_argument("max_lr must be positive");
    }
    if (total_updates < 0) {
        throw std::invalid_argument("total_updates must be non-negative");
    }
    if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0) {
        throw std::invalid_argument("warmup_fraction must be in (0, 1)");
    }
    if (tokens_per_batch <= 0) {
        throw std::invalid_argument("tokens_per_batch must be positive");
    }
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 || epsilon <= 0.0) {
        throw std::invalid_argument("bad Adam hyperparameters");
    }
}

double lr_at_step(double max_lr, int total_updates, double warmup_fraction, int step) {
    if (step < 0 || step > total_updates) {
        throw std::invalid_argument("step outside the schedule: " + std::to_string(step));
    }
    if (total_updates == 0) {
        return 0.0;
    }
    const int warmup_end = static_cast<int>(std::ceil(warmup_fraction * total_updates));
    if (step <= warmup_end) {
        return max_lr * static_cast<double>(step) / static_cast<double>(warmup_end);
    }
    return max_lr * static_cast<double>(total_updates - step) /
           static_cast<double>(total_updates - warmup_end);
}

double lr_at_step(const TrainConfig& config, int step) {
    return lr_at_step(config.max_lr, config.total_updates, config.warmup_fraction, step);
}

OptimizerState OptimizerState::like(const Mat<float>& rows, double beta1, double beta2,
                                    double epsilon) {
    OptimizerState s;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    s.m.resize(rows.rows, rows.cols);
    s.v.resize(rows.rows, rows.cols);
    return s;
}

void adam_step(OptimizerState& state, const Mat<float>& grads, double lr, Mat<float>& rows) {
    if (grads.rows != rows.rows || grads.cols != rows.cols || state.m.rows != rows.rows ||
        state.m.cols != rows.cols) {
        throw std::invalid_argument("gradient shape disagrees with optimizer state");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, state.step);
    const double bc2 = 1.0 - std::pow(state.beta2, state.step);
    for (size_t i = 0; i < rows.a.size(); ++i) {
        const double g = static_cast<double>(grads.a[i]);
        state.m.a[i] = state.beta1 * state.m.a[i] + (1.0 - state.beta1) * g;
        state.v.a[i] = state.beta2 * state.v.a[i] + (1.0 - state.beta2) * g * g;
        const double mhat = state.m.a[i] / bc1;
        const double vhat = state.v.a[i] / bc2;
        rows.a[i] = static_cast<float>(static_cast<double>(rows.a[i]) -
                                       lr * mhat / (std::sqrt(vhat) + state.epsilon));
    }
}

namespace {

struct ExampleResult {
    double objective = 0.0;
    std::vector<double> grad;  // d_model, empty when gradients were not requested
};

// Mean over the example's applicable templates of log P(continuation |
// rendered prompt); gradient restricted to the imaginary word's row.
ExampleResult score_example(const Engine<float>& eng, const Mat<float>& ext, int word_id,
                            const TemplateSet& set, const TrainingExample& ex,
                            const Vocabulary& vocab, bool with_grad) {
    const int d = eng.config().d_model;
    std::vector<const PromptTemplate*> applicable;
    for (const auto& t : set.templates) {
        if (!t.has_keyword_slot() || ex.keyword.has_value()) {
            applicable.push_back(&t);
        }
    }
    if (applicable.empty()) {
        throw std::runtime_error("keyword-augmented template requires annotated example");
    }
    ExampleResult res;
    if (with_grad) {
        res.grad.assign(static_cast<size_t>(d), 0.0);
    }
    for (const PromptTemplate* t : applicable) {
        Bindings b;
        b.imaginary_id = word_id;
        if (t->has_keyword_slot()) {
            b.keyword = *ex.keyword;
        }
        const std::vector<int> prompt = render(*t, b, vocab);
        if (!with_grad) {
            res.objective += eng.score(ext, prompt, ex.continuation_ids);
            continue;
        }
        Mat<float> dinput;
        res.objective += eng.score_grad(ext, prompt, ex.continuation_ids, &dinput, nullptr);
        for (size_t pos = 0; pos < prompt.size(); ++pos) {
            if (prompt[pos] != word_id) {
                continue;
            }
            const float* g = dinput.row(static_cast<int>(pos));
            for (int j = 0; j < d; ++j) {
                res.grad[static_cast<size_t>(j)] += static_cast<double>(g[j]);
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(applicable.size());
    res.objective *= inv;
    for (double& g : res.grad) {
        g *= inv;
    }
    return res;
}

// Batch mean of per-example objectives/gradients. Per-example work may run
// on several threads; the reduction walks results in example order, so the
// outcome never depends on the worker count.
BatchResult batch_core(const Engine<float>& eng, const Mat<float>& ext, int word_id,
                       const TemplateSet& set, const std::vector<const TrainingExample*>& batch,
                       const Vocabulary& vocab, int threads, bool with_grad) {
    if (batch.empty()) {
        throw std::invalid_argument("empty batch");
    }
    const int d = eng.config().d_model;
    std::vector<ExampleResult> results(batch.size());
    parallel_for(batch.size(), threads, [&](size_t i) {
        results[i] = score_example(eng, ext, word_id, set, *batch[i], vocab, with_grad);
    });
    BatchResult out;
    std::vector<double> gsum(static_cast<size_t>(d), 0.0);
    for (const auto& r : results) {
        out.objective += r.objective;
        for (int j = 0; j < d; ++j) {
            gsum[static_cast<size_t>(j)] += r.grad.empty() ? 0.0 : r.grad[static_cast<size_t>(j)];
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.objective *= inv;
    out.grad.resize(1, d);
    if (with_grad) {
        for (int j = 0; j < d; ++j) {
            out.grad.at(0, j) = static_cast<float>(gsum[static_cast<size_t>(j)] * inv);
        }
    }
    return out;
}

TemplateSet effective_templates(const TemplateSet& set, const Augmentation& aug) {
    if (!set.has_imaginary_slot()) {
        throw std::invalid_argument("training template set must contain an {X} slot");
    }
    TemplateSet eff;
    eff.name = set.name;
    for (const auto& t : set.templates) {
        if (!aug.keywords && t.has_keyword_slot()) {
            continue;
        }
        eff.templates.push_back(t);
    }
    if (eff.templates.empty()) {
        throw std::invalid_argument(
            "template set has only keyword-augmented templates but keyword augmentation is off");
    }
    if (!aug.templates) {
        eff.templates.resize(1);  // single fixed template: the w/o-PA arm
    }
    return eff;
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
        const int n = static_cast<int>(corpus[i].continuation_ids.size());
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

BatchResult batch_objective(const ModelWeights& w, const EmbeddingTable& emb,
                            const ImaginaryWord& word, const TemplateSet& set,
                            const std::vector<TrainingExample>& batch, const Vocabulary& vocab,
                            int threads) {
    const Engine<float> eng(w);
    std::vector<const TrainingExample*> ptrs;
    ptrs.reserve(batch.size());
    for (const auto& ex : batch) {
        ptrs.push_back(&ex);
    }
    return batch_core(eng, emb.extension, word.id, set, ptrs, vocab, threads, true);
}

TrainResult train_imaginary_word(const ModelWeights& w, EmbeddingTable& emb,
                                 const Vocabulary& vocab, const ImaginaryWord& word,
                                 const TemplateSet& set,
                                 const std::vector<TrainingExample>& corpus,
                                 const TrainConfig& config) {
    config.validate();
    if (corpus.empty()) {
        throw std::invalid_argument("empty corpus");
    }
    if (!vocab.is_imaginary(word.id)) {
        throw std::invalid_argument("word is not registered in the imaginary vocabulary: " +
                                    word.name);
    }
    const int d = w.config.d_model;
    const int row_idx = word.id - w.config.vocab_size;
    if (row_idx < 0 || row_idx >= emb.extension.rows || emb.extension.cols != d) {
        throw std::invalid_argument("embedding table has no row for " + word.name);
    }
    const TemplateSet eff = effective_templates(set, config.augmentation);

    // start at the base-embedding centroid plus small seeded noise so the
    // first prompts land in-distribution
    {
        std::vector<double> centroid(static_cast<size_t>(d), 0.0);
        for (int i = 0; i < w.tok_emb.rows; ++i) {
            const float* r = w.tok_emb.row(i);
            for (int j = 0; j < d; ++j) {
                centroid[static_cast<size_t>(j)] += static_cast<double>(r[j]);
            }
        }
        Rng init_rng(derive_seed(config.seed, "init:" + word.name));
        float* row = emb.extension.row(row_idx);
        for (int j = 0; j < d; ++j) {
            row[j] = static_cast<float>(centroid[static_cast<size_t>(j)] / w.tok_emb.rows +
                                        0.01 * init_rng.normal());
        }
    }

    TrainResult result;
    result.log.reserve(static_cast<size_t>(config.total_updates));
    if (config.total_updates > 0) {
        const Engine<float> eng(w);
        Mat<float> row_mat(1, d);
        std::copy(emb.extension.row(row_idx), emb.extension.row(row_idx) + d, row_mat.row(0));
        OptimizerState opt =
            OptimizerState::like(row_mat, config.beta1, config.beta2, config.epsilon);

        std::vector<std::vector<const TrainingExample*>> batches;
        size_t next_batch = 0;
        int epoch = 0;
        for (int step = 1; step <= config.total_updates; ++step) {
            if (next_batch >= batches.size()) {
                Rng epoch_rng(derive_seed(config.seed, "epoch:" + std::to_string(epoch)));
                batches = pack_epoch(corpus, config.tokens_per_batch, epoch_rng);
                next_batch = 0;
                ++epoch;
            }
            const BatchResult batch = batch_core(eng, emb.extension, word.id, eff,
                                                 batches[next_batch], vocab, config.threads, true);
            ++next_batch;
            if (!std::isfinite(batch.objective)) {
                throw std::runtime_error("objective diverged (non-finite) at step " +
                                         std::to_string(step));
            }
            const double lr = lr_at_step(config, step);
            result.log.push_back({step, lr, batch.objective});

            Mat<float> descent(1, d);
            for (int j = 0; j < d; ++j) {
                descent.at(0, j) = -batch.grad.at(0, j);  // Adam minimizes; we maximize
            }
            adam_step(opt, descent, lr, row_mat);
            std::copy(row_mat.row(0), row_mat.row(0) + d, emb.extension.row(row_idx));
        }
    }
    result.row.assign(emb.extension.row(row_idx), emb.extension.row(row_idx) + d);
    return result;
}

void save_train_log(const std::filesystem::path& path, const std::vector<TrainLogEntry>& log) {
    std::ofstream f(path);
    if (!f) {
        throw std::runtime_error("cannot write train log: " + path.string());
    }
    for (const auto& e : log) {
        nlohmann::json j;
        j["step"] = e.step;
        j["lr"] = e.lr;
        j["objective"] = e.objective;
        f << j.dump() << '\n';
    }
    if (!f) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

}  // namespace xp
