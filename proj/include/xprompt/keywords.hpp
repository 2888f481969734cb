#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xprompt/corpus.hpp"
#include "xprompt/model.hpp"
#include "xprompt/vocab.hpp"

namespace xp {

struct KeywordConfig {
    // appended after the text to ask the frozen LM for candidates
    std::string extraction_prompt = "Top keywords of the above text are:";
    // scored against the text once per candidate; must carry exactly one {K}
    std::string ranking_template = "Write with keyword {K}:";
    int max_candidates = 5;  // C
    int max_gen_tokens = 16;
    int threads = 1;
};

struct RankedKeyword {
    std::vector<int> tokens;
    double score = 0.0;  // log P(text | ranking prompt with these tokens)
};

// Greedy-generates after "<text> <extraction_prompt>", splits the output on
// comma tokens up to eos, drops empties/specials/duplicates (first stays),
// and truncates to max_candidates. An empty result is valid; callers fall
// back to training without a keyword.
std::vector<std::vector<int>> extract_candidates(const ModelWeights& w, const EmbeddingTable& emb,
                                                 const Vocabulary& vocab, const std::string& text,
                                                 const KeywordConfig& config);

// Picks the candidate that best explains the text: argmax over candidates
// of score_continuation(text | ranking prompt). Ties go to the earliest
// candidate. Throws on an empty candidate list.
RankedKeyword rank_keyword(const ModelWeights& w, const EmbeddingTable& emb,
                           const Vocabulary& vocab,
                           const std::vector<std::vector<int>>& candidates,
                           const std::vector<int>& text_ids, const KeywordConfig& config);

struct AnnotateStats {
    long model_calls = 0;  // generation + ranking invocations of the LM
    long cache_hits = 0;
};

// extract -> rank for every example of the corpus, writing the winner into
// TrainingExample.keyword. Results are cached at cache_path keyed by a
// digest of the line text; a warm cache answers without touching the model.
// The cache file is rewritten atomically (temp file + rename).
AnnotateStats annotate_corpus(const ModelWeights& w, const EmbeddingTable& emb,
                              const Vocabulary& vocab, UserCorpus& corpus,
                              const KeywordConfig& config,
                              const std::filesystem::path& cache_path);

}  // namespace xp
