#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "support/builders.hpp"
#include "xprompt/corpus.hpp"
#include "xprompt/vocab.hpp"

using namespace xp;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("xp_corpus_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_file(const fs::path& p, const std::vector<std::string>& lines) {
    std::ofstream f(p);
    REQUIRE(f);
    for (const auto& l : lines) {
        f << l << '\n';
    }
}

// Examples transplanted into synthetic per-user corpora for split tests.
std::vector<UserCorpus> synthetic(const std::vector<int>& sizes) {
    std::vector<UserCorpus> out;
    for (size_t u = 0; u < sizes.size(); ++u) {
        UserCorpus uc;
        uc.user_id = "u" + std::to_string(u);
        for (int i = 0; i < sizes[u]; ++i) {
            // unique payload: (user, index) encoded in the ids
            uc.lines.push_back("line");
            uc.examples.push_back({{static_cast<int>(u) + 3, i + 3}, std::nullopt});
        }
        out.push_back(std::move(uc));
    }
    return out;
}

std::vector<std::vector<int>> sorted_payloads(const std::vector<TrainingExample>& v) {
    std::vector<std::vector<int>> out;
    out.reserve(v.size());
    for (const auto& ex : v) {
        out.push_back(ex.continuation_ids);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_CASE("ingest reads one file per user in sorted filename order") {
    const fs::path dir = temp_dir("order");
    const Vocabulary v = test::small_vocab(10);
    write_file(dir / "beta.txt", {"w1 w2"});
    write_file(dir / "alpha.txt", {"w3", "w4 w5"});
    write_file(dir / "gamma.txt", {"w6"});
    const auto corpora = ingest(dir, v, 32);
    REQUIRE(corpora.size() == 3);
    CHECK(corpora[0].user_id == "alpha");
    CHECK(corpora[1].user_id == "beta");
    CHECK(corpora[2].user_id == "gamma");
    CHECK(corpora[0].examples.size() == 2);
    CHECK(corpora[0].lines[1] == "w4 w5");
    CHECK(corpora[0].examples[1].continuation_ids == v.tokenize("w4 w5"));
    CHECK_FALSE(corpora[0].examples[0].keyword.has_value());
}

TEST_CASE("ingest strips trailing whitespace and drops empty lines") {
    const fs::path dir = temp_dir("clean");
    const Vocabulary v = test::small_vocab(10);
    write_file(dir / "u.txt", {"w1 w2  \t", "", "   ", "\t", "w3"});
    const auto corpora = ingest(dir, v, 32);
    REQUIRE(corpora.size() == 1);
    REQUIRE(corpora[0].examples.size() == 2);
    CHECK(corpora[0].lines[0] == "w1 w2");
    CHECK(corpora[0].lines[1] == "w3");
    // words outside the vocabulary still make an example (as unk)
    write_file(dir / "u.txt", {"zzz qqq"});
    const auto unk = ingest(dir, v, 32);
    REQUIRE(unk[0].examples.size() == 1);
    CHECK(unk[0].examples[0].continuation_ids ==
          std::vector<int>{v.unk(), v.unk()});
}

TEST_CASE("ingest truncates long lines at a token boundary") {
    const fs::path dir = temp_dir("truncate");
    const Vocabulary v = test::small_vocab(10);
    write_file(dir / "u.txt", {"w1 w2 w3 w4 w5"});
    const auto corpora = ingest(dir, v, 3);
    REQUIRE(corpora[0].examples.size() == 1);
    const std::vector<int> full = v.tokenize("w1 w2 w3 w4 w5");
    const std::vector<int> want(full.begin(), full.begin() + 3);
    CHECK(corpora[0].examples[0].continuation_ids == want);
    // the raw line is kept whole for later annotation
    CHECK(corpora[0].lines[0] == "w1 w2 w3 w4 w5");
}

TEST_CASE("ingest validates its inputs") {
    const Vocabulary v = test::small_vocab(4);
    const fs::path dir = temp_dir("errors");
    CHECK_THROWS_WITH_AS(ingest(dir / "missing", v, 32),
                         doctest::Contains("corpus root is not a directory"), std::runtime_error);
    CHECK_THROWS_WITH_AS(ingest(dir, v, 32), doctest::Contains("no user files found"),
                         std::runtime_error);
    write_file(dir / "u.txt", {"w1"});
    CHECK_THROWS_WITH_AS(ingest(dir, v, 0), "max_line_tokens must be at least 1",
                         std::invalid_argument);
}

TEST_CASE("split cuts at the documented boundaries") {
    const SplitRatios r{};

    auto sizes = [&](int n) {
        const Split s = split_corpora(synthetic({n}), r, 5);
        REQUIRE(s.users.size() == 1);
        return std::array<size_t, 3>{s.users[0].train.size(), s.users[0].valid.size(),
                                     s.users[0].test.size()};
    };

    CHECK(sizes(100) == std::array<size_t, 3>{90, 5, 5});
    CHECK(sizes(20) == std::array<size_t, 3>{18, 1, 1});
    CHECK(sizes(1) == std::array<size_t, 3>{1, 0, 0});
    CHECK(sizes(2) == std::array<size_t, 3>{1, 0, 1});
    CHECK(sizes(3) == std::array<size_t, 3>{2, 0, 1});  // floor cuts leave valid empty
}

TEST_CASE("split is an exact deterministic partition") {
    const std::vector<UserCorpus> corpora = synthetic({37, 11});
    const SplitRatios r{};
    const Split a = split_corpora(corpora, r, 42);
    const Split b = split_corpora(corpora, r, 42);

    for (size_t u = 0; u < a.users.size(); ++u) {
        CHECK(sorted_payloads(a.users[u].train) == sorted_payloads(b.users[u].train));
        CHECK(sorted_payloads(a.users[u].valid) == sorted_payloads(b.users[u].valid));
        CHECK(sorted_payloads(a.users[u].test) == sorted_payloads(b.users[u].test));

        // every example lands in exactly one part
        std::vector<TrainingExample> all = a.users[u].train;
        all.insert(all.end(), a.users[u].valid.begin(), a.users[u].valid.end());
        all.insert(all.end(), a.users[u].test.begin(), a.users[u].test.end());
        CHECK(sorted_payloads(all) == sorted_payloads(corpora[u].examples));
    }

    // a different seed shuffles differently somewhere
    const Split c = split_corpora(corpora, r, 43);
    bool any_difference = false;
    for (size_t u = 0; u < a.users.size(); ++u) {
        std::vector<std::vector<int>> ta;
        std::vector<std::vector<int>> tc;
        for (const auto& ex : a.users[u].train) {
            ta.push_back(ex.continuation_ids);
        }
        for (const auto& ex : c.users[u].train) {
            tc.push_back(ex.continuation_ids);
        }
        any_difference = any_difference || ta != tc;
    }
    CHECK(any_difference);
}

TEST_CASE("each user splits independently of its neighbors") {
    const std::vector<UserCorpus> both = synthetic({25, 40});
    const std::vector<UserCorpus> solo = {both[1]};
    const SplitRatios r{};
    const Split together = split_corpora(both, r, 9);
    const Split alone = split_corpora(solo, r, 9);

    auto payloads = [](const std::vector<TrainingExample>& v) {
        std::vector<std::vector<int>> out;
        for (const auto& ex : v) {
            out.push_back(ex.continuation_ids);
        }
        return out;
    };
    CHECK(payloads(together.users[1].train) == payloads(alone.users[0].train));
    CHECK(payloads(together.users[1].valid) == payloads(alone.users[0].valid));
    CHECK(payloads(together.users[1].test) == payloads(alone.users[0].test));
}

TEST_CASE("split ratios must be positive and sum to one") {
    const std::vector<UserCorpus> corpora = synthetic({10});
    CHECK_THROWS_WITH_AS(split_corpora(corpora, {0.5, 0.25, 0.2}, 1),
                         "split ratios must be positive and sum to 1", std::invalid_argument);
    CHECK_THROWS_AS(split_corpora(corpora, {1.0, 0.0, 0.0}, 1), std::invalid_argument);
}

TEST_CASE("stats summarize examples per user") {
    const CorpusStats even = stats(synthetic({2, 2, 2}));
    CHECK(even.users == 3);
    CHECK(even.total == 6);
    CHECK(even.max_count == 2);
    CHECK(even.min_count == 2);
    CHECK(even.avg == 2.0);
    CHECK(even.stddev == 0.0);

    const CorpusStats skew = stats(synthetic({1, 3}));
    CHECK(skew.users == 2);
    CHECK(skew.total == 4);
    CHECK(skew.max_count == 3);
    CHECK(skew.min_count == 1);
    CHECK(skew.avg == 2.0);
    CHECK(skew.stddev == 1.0);  // population standard deviation

    const CorpusStats none = stats({});
    CHECK(none.users == 0);
    CHECK(none.total == 0);
}

TEST_CASE("stats render with one decimal place") {
    CHECK(format_stats(stats(synthetic({1, 3}))) ==
          "users 2\nexamples total 4\nexamples per user: max 3  min 1  avg 2.0  std 1.0\n");
    CHECK(format_stats(stats(synthetic({7}))) ==
          "users 1\nexamples total 7\nexamples per user: max 7  min 7  avg 7.0  std 0.0\n");
}

TEST_CASE("ingest and stats agree with a hand count") {
    const fs::path dir = temp_dir("handcount");
    const Vocabulary v = test::small_vocab(10);
    std::vector<std::string> a_lines;
    for (int i = 0; i < 50; ++i) {
        a_lines.push_back("w" + std::to_string(i % 10) + " w" + std::to_string((i + 1) % 10));
        if (i % 10 == 0) {
            a_lines.push_back("   ");  // dropped
        }
    }
    write_file(dir / "a.txt", a_lines);
    std::vector<std::string> b_lines(30, "w1 w2 w3");
    write_file(dir / "b.txt", b_lines);

    const auto corpora = ingest(dir, v, 16);
    const CorpusStats s = stats(corpora);
    CHECK(s.users == 2);
    CHECK(s.total == 80);
    CHECK(s.max_count == 50);
    CHECK(s.min_count == 30);
    CHECK(s.avg == 40.0);
    CHECK(s.stddev == 10.0);
}
