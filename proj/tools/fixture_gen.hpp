#pragma once

// Synthetic style corpus for desk-scale experiments. Six styles share a
// topic-noun inventory, an opener ("the") and one connective ("and") but
// differ in their marker words, end punctuation ("alpha": near/with + ".";
// "beta": via/under + "!"; four more as background), and Zipf rank order
// over the nouns, so a line's style shows up softly and often late. The two
// test styles get their own corpora; the other four live in the background
// user, which also teaches the base LM the prompt phrasings the pipeline
// relies on — keyword extraction/hints, named-style conditioning, and the
// held-out evaluation phrasing. Name slots almost always hold background
// style names, so the conditioning machinery is strong while the two test
// names stay weakly bound, the way a niche author is rare in a web corpus.

#include <filesystem>
#include <string>
#include <vector>

#include "xprompt/eval.hpp"
#include "xprompt/keywords.hpp"
#include "xprompt/learn.hpp"
#include "xprompt/model.hpp"
#include "xprompt/pretrain.hpp"

namespace xp {

struct StyleLine {
    std::string text;
    std::string topic;  // first topic noun; doubles as the line's keyword
};

// style 0 = "alpha", style 1 = "beta"; 2..5 are the background styles
StyleLine fixture_style_line(int style, Rng& rng);
std::vector<std::string> fixture_style_lines(int style, int count, uint64_t seed);

// taught phrasings (roughly per_kind lines each) plus raw background-style lines
std::vector<std::string> fixture_background_lines(int per_kind, uint64_t seed);

struct FixtureSpec {
    int lines_per_style = 2200;
    int background_per_kind = 400;
    uint64_t seed = 1234;
};

// Writes alpha.txt, beta.txt, background.txt under root.
void write_fixture_corpus(const std::filesystem::path& root, const FixtureSpec& spec);

// Desk-scale defaults used by the acceptance pipeline and the CLI demos.
ModelConfig fixture_model_config(int vocab_size);
PretrainConfig fixture_pretrain_config(uint64_t seed);
TrainConfig fixture_train_config(bool pa_on, uint64_t seed);
KeywordConfig fixture_keyword_config();

// Two training templates: "write in {X} style :" and the keyword-augmented
// "write with keyword {K} in {X} style :".
std::vector<std::string> fixture_train_template_lines();

// The 3x2 robustness grid templates built around the held-out phrasing
// "here is text written in ... style", instantiated for one style name.
RobustnessConfig fixture_robustness_config(const std::string& style_name, int threads);

}  // namespace xp
