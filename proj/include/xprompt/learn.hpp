#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "xprompt/model.hpp"
#include "xprompt/template.hpp"
#include "xprompt/vocab.hpp"

namespace xp {

// One line of style corpus: the continuation whose likelihood the prompt
// must explain, plus the keyword the annotation pipeline attached (if any).
struct TrainingExample {
    std::vector<int> continuation_ids;        // base ids only, length >= 1
    std::optional<std::vector<int>> keyword;  // bound into {K} slots when present
};

// Prompt augmentation switches. Both off reproduces the single-template,
// keywordless ablation arm ("w/o PA").
struct Augmentation {
    bool templates = true;
    bool keywords = true;
};

struct TrainConfig {
    double max_lr = 2e-4;
    int total_updates = 2000;    // 6000 at paper scale
    double warmup_fraction = 0.10;
    int tokens_per_batch = 2048;  // 8192 at paper scale
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    uint64_t seed = 0;
    Augmentation augmentation;
    int threads = 1;  // 0 = hardware concurrency

    void validate() const;
};

// Linear warmup to max_lr over the first ceil(warmup_fraction * total)
// steps, then linear decay to 0 at step = total_updates. Throws outside
// [0, total_updates].
double lr_at_step(const TrainConfig& config, int step);
double lr_at_step(double max_lr, int total_updates, double warmup_fraction, int step);

// Adam moments shaped like the trainable rows. Moments are kept in double
// so the update math matches a scalar re-derivation exactly; only the
// parameter rows themselves live in float32.
struct OptimizerState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    Mat<double> m;
    Mat<double> v;
    int step = 0;

    static OptimizerState like(const Mat<float>& rows, double beta1 = 0.9,
                               double beta2 = 0.999, double epsilon = 1e-8);
};

// Standard bias-corrected Adam descent step, applied in place to `rows`.
// Callers maximizing an objective pass the negated gradient.
void adam_step(OptimizerState& state, const Mat<float>& grads, double lr, Mat<float>& rows);

struct BatchResult {
    double objective = 0.0;  // mean over examples of mean-over-templates log P
    Mat<float> grad;         // d(objective)/d(word row), 1 x d_model
};

// Template-averaged training objective: for each example, render every
// applicable template (keyword templates apply only to annotated examples),
// score the continuation, average over templates, then average over the
// batch. Throws when an example has no applicable template.
BatchResult batch_objective(const ModelWeights& w, const EmbeddingTable& emb,
                            const ImaginaryWord& word, const TemplateSet& set,
                            const std::vector<TrainingExample>& batch, const Vocabulary& vocab,
                            int threads = 1);

struct TrainLogEntry {
    int step = 0;
    double lr = 0.0;
    double objective = 0.0;
};

struct TrainResult {
    std::vector<float> row;  // the learned embedding row (also written in place)
    std::vector<TrainLogEntry> log;
};

// Context-guided learning of one imaginary word. Initializes the word's
// extension row to the base-embedding centroid plus seeded noise, then runs
// total_updates Adam steps over batches packed to about tokens_per_batch
// continuation tokens. Only that one row changes. Deterministic given seed.
TrainResult train_imaginary_word(const ModelWeights& w, EmbeddingTable& emb,
                                 const Vocabulary& vocab, const ImaginaryWord& word,
                                 const TemplateSet& set,
                                 const std::vector<TrainingExample>& corpus,
                                 const TrainConfig& config);

// Newline-delimited {step, lr, objective} records.
void save_train_log(const std::filesystem::path& path, const std::vector<TrainLogEntry>& log);

}  // namespace xp
