#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xprompt/learn.hpp"
#include "xprompt/vocab.hpp"

namespace xp {

// One style source (user): raw lines plus their tokenized examples.
// lines[i] is the text behind examples[i] (kept for keyword annotation).
struct UserCorpus {
    std::string user_id;
    std::vector<std::string> lines;
    std::vector<TrainingExample> examples;
};

// Reads one text file per user from root (user id = file stem). Trailing
// whitespace is stripped, lines that tokenize to nothing are dropped, and
// lines longer than max_line_tokens are truncated at a token boundary.
std::vector<UserCorpus> ingest(const std::filesystem::path& root, const Vocabulary& vocab,
                               int max_line_tokens);

struct SplitRatios {
    double train = 0.90;
    double valid = 0.05;
    double test = 0.05;
};

struct UserSplit {
    std::string user_id;
    std::vector<TrainingExample> train, valid, test;
};

struct Split {
    std::vector<UserSplit> users;

    std::vector<TrainingExample> all_train() const;
    std::vector<TrainingExample> all_valid() const;
    std::vector<TrainingExample> all_test() const;
};

// Per-user deterministic shuffle, then contiguous cuts at floor(r1*k) and
// floor((r1+r2)*k). Users with fewer than 3 examples place at least one
// example in train and the remainder in test.
Split split_corpora(const std::vector<UserCorpus>& corpora, const SplitRatios& ratios,
                    uint64_t seed);

// Examples-per-user summary (population standard deviation; nothing is
// rounded until formatting).
struct CorpusStats {
    int users = 0;
    long total = 0;
    int max_count = 0;
    int min_count = 0;
    double avg = 0.0;
    double stddev = 0.0;
};

CorpusStats stats(const std::vector<UserCorpus>& corpora);
std::string format_stats(const CorpusStats& s);

}  // namespace xp
