#pragma once

#include <cstdint>
#include <vector>

#include "xprompt/learn.hpp"
#include "xprompt/model.hpp"

namespace xp {

struct PretrainConfig {
    double max_lr = 1e-3;
    int total_updates = 1000;
    double warmup_fraction = 0.10;
    int tokens_per_batch = 4096;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    uint64_t seed = 0;
    int threads = 1;

    void validate() const;
};

struct PretrainResult {
    std::vector<TrainLogEntry> log;  // objective = batch mean per-token NLL
};

// Next-token training of the toy base LM on [bos] line [eos] sequences with
// full-weight Adam — the only code path that writes to ModelWeights.
// Gradients accumulate over fixed groups of 8 examples and the groups are
// reduced in order, so results never depend on the worker count.
PretrainResult train_base_model(ModelWeights& w, const std::vector<TrainingExample>& corpus,
                                const PretrainConfig& config);

// Micro-averaged perplexity of plain [bos]-prompted lines (with eos),
// matching the pretraining objective; used for validation tracking.
double base_lm_perplexity(const ModelWeights& w, const std::vector<TrainingExample>& dataset,
                          int threads = 1);

}  // namespace xp
