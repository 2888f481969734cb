#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "xprompt/learn.hpp"
#include "xprompt/model.hpp"
#include "xprompt/template.hpp"
#include "xprompt/vocab.hpp"

namespace xp {

enum class PromptKind { kNL, kXPrompt };

// One evaluation setting: which prompt precedes every test example. The
// template's slots decide the kind — an {X} slot makes it an X-Prompt
// condition (imaginary_id must be set), a {K} slot makes it keyword-hinted
// (each example's annotated keyword gets bound in).
struct EvalCondition {
    PromptTemplate tmpl;
    std::optional<int> imaginary_id;
    bool keyword_hint = false;
    std::string label;

    PromptKind prompt_kind() const {
        return imaginary_id.has_value() ? PromptKind::kXPrompt : PromptKind::kNL;
    }
};

// Micro-averaged over all continuation tokens of all examples.
struct EvalResult {
    double ppl = 0.0;
    double accuracy = 0.0;
    long tokens = 0;
    double total_nll = 0.0;
};

// One audit record per continuation token, in (example, position) order.
struct TokenRecord {
    int example = 0;
    int pos = 0;     // index within the continuation
    int ref = 0;     // reference token id
    int argmax = 0;  // model's top base token (ties -> lowest id)
    double nll = 0.0;
};

// Renders the condition's prompt per example, scores the continuation, and
// pools token NLLs/matches across the dataset. dump, when given, receives
// every token record (PPL is recomputable from it exactly).
EvalResult evaluate_condition(const ModelWeights& w, const EmbeddingTable& emb,
                              const EvalCondition& condition,
                              const std::vector<TrainingExample>& dataset,
                              const Vocabulary& vocab, int threads = 1,
                              std::vector<TokenRecord>* dump = nullptr);

// exp(sum NLL / token count) over all continuation tokens.
double perplexity(const ModelWeights& w, const EmbeddingTable& emb,
                  const EvalCondition& condition, const std::vector<TrainingExample>& dataset,
                  const Vocabulary& vocab);

// Fraction of continuation positions where the model's argmax (base vocab,
// ties toward the lowest id) equals the reference token.
double next_word_accuracy(const ModelWeights& w, const EmbeddingTable& emb,
                          const EvalCondition& condition,
                          const std::vector<TrainingExample>& dataset, const Vocabulary& vocab);

// Templates for the 3x2 robustness grid: {NL, X-Prompt w/o PA, X-Prompt}
// rows by {no hint, keyword hint} columns. The plain/hint pairs share
// phrasing; hint variants carry a {K} slot, x variants an {X} slot.
struct RobustnessConfig {
    PromptTemplate nl_plain, nl_hint;
    PromptTemplate x_plain, x_hint;
    bool ood = true;  // templates held out from training (the robustness probe)
    int threads = 1;
};

struct RobustnessCell {
    double ppl = 0.0;
    double accuracy = 0.0;
    long tokens = 0;
};

struct RobustnessReport {
    bool ood = true;
    // rows: 0 = NL, 1 = X-Prompt w/o PA, 2 = X-Prompt (full); cols: 0 = no
    // hint, 1 = keyword hint
    std::array<std::array<RobustnessCell, 2>, 3> cells{};
    // ppl(no hint) - ppl(hint) per row; positive means hints helped
    std::array<double, 3> hint_delta{};
};

// Evaluates all six cells on a keyword-annotated dataset. full_id/wopa_id
// name the two learned variants of the same style word (rows of emb).
RobustnessReport robustness_matrix(const ModelWeights& w, const EmbeddingTable& emb,
                                   const Vocabulary& vocab, int full_id, int wopa_id,
                                   const std::vector<TrainingExample>& dataset,
                                   const RobustnessConfig& config);

std::string report_json(const RobustnessReport& report);
std::string report_table(const RobustnessReport& report);

// Newline-delimited {example, pos, ref, argmax, nll} records.
void save_token_dump(const std::filesystem::path& path, const std::vector<TokenRecord>& dump);

}  // namespace xp
