#include "fixture_gen.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace xp {
namespace {

constexpr int kStyles = 6;

const std::vector<std::string>& topic_nouns() {
    static const std::vector<std::string> nouns = {
        "river",  "mountain", "coffee", "music",    "garden", "winter",
        "market", "robot",    "ocean",  "forest",   "train",  "moon",
        "bread",  "storm",    "chess",  "harbor",   "desert", "lantern",
        "meadow", "violin",   "castle", "engine",   "island", "bridge",
    };
    return nouns;
}

// Style definitions. Every style shares the opener "the" and the connective
// "and" but owns its two marker words, its end punctuation, and its Zipf
// rank order over the shared nouns. Styles 2..5 exist only as pretraining
// background: they give the base LM a rich style space to condition over.
struct StyleDef {
    const char* name;
    const char* c0;
    const char* c1;
    const char* punct;
};

const std::array<StyleDef, kStyles>& style_defs() {
    static const std::array<StyleDef, kStyles> defs = {{
        {"alpha", "near", "with", "."},
        {"beta", "via", "under", "!"},
        {"gamma", "by", "over", "?"},
        {"delta", "from", "beside", ";"},
        {"omega", "off", "along", "."},
        {"sigma", "past", "beyond", "!"},
    }};
    return defs;
}

std::string style_name(int style) {
    return style_defs()[static_cast<size_t>(style)].name;
}

// Per-style noun rank order: alpha counts up the inventory, beta counts
// down, the background styles use fixed shuffles. The orders are part of
// the style definitions, so they do not depend on the corpus seed.
size_t noun_for_rank(int style, size_t rank) {
    static const auto perms = [] {
        std::array<std::array<size_t, 24>, kStyles> p{};
        for (int s = 0; s < kStyles; ++s) {
            std::iota(p[static_cast<size_t>(s)].begin(), p[static_cast<size_t>(s)].end(),
                      size_t{0});
        }
        for (size_t r = 0; r < 24; ++r) {
            p[1][r] = 23 - r;
        }
        Rng rng(derive_seed(271, "style-noun-orders"));
        for (int s = 2; s < kStyles; ++s) {
            auto& perm = p[static_cast<size_t>(s)];
            for (size_t i = perm.size(); i > 1; --i) {
                std::swap(perm[i - 1], perm[rng.below(i)]);
            }
        }
        return p;
    }();
    return perms[static_cast<size_t>(style)][rank];
}

size_t sample_topic_rank(Rng& rng) {
    static const std::array<double, 24> cdf = [] {
        std::array<double, 24> c{};
        double total = 0.0;
        for (size_t r = 0; r < c.size(); ++r) {
            total += std::pow(static_cast<double>(r) + 1.5, -2.2);
            c[r] = total;
        }
        for (double& v : c) {
            v /= total;
        }
        return c;
    }();
    const double u = rng.next_double();
    for (size_t r = 0; r < cdf.size(); ++r) {
        if (u < cdf[r]) {
            return r;
        }
    }
    return cdf.size() - 1;
}

size_t sample_topic(int style, Rng& rng) {
    return noun_for_rank(style, sample_topic_rank(rng));
}

size_t fresh_topic(int style, Rng& rng, size_t avoid_a, size_t avoid_b) {
    size_t n = sample_topic(style, rng);
    while (n == avoid_a || n == avoid_b) {
        n = sample_topic(style, rng);
    }
    return n;
}

// Prompted background lines mention the real names rarely, the way a niche
// author's name is rare in a web-scale corpus; the four background styles
// carry the name-slot conditioning. Names always label their style
// truthfully.
int prompted_style(Rng& rng) {
    const uint64_t r = rng.below(80);
    if (r < 2) {
        return static_cast<int>(r);  // alpha or beta, 1.25% each
    }
    return 2 + static_cast<int>(rng.below(4));
}

}  // namespace

StyleLine fixture_style_line(int style, Rng& rng) {
    const auto& nouns = topic_nouns();
    const StyleDef& def = style_defs()[static_cast<size_t>(style)];
    const size_t t_rank = sample_topic_rank(rng);
    const size_t t = noun_for_rank(style, t_rank);
    // The opener and "and" are shared between styles, so over half the
    // shapes reveal the style's marker words only late in the line. Most
    // shapes also carry one slot that is deterministic once the style is
    // known: alpha/gamma/omega repeat the topic noun, while beta/delta/
    // sigma follow it with the next noun in their own frequency order —
    // a cue that stays useless until the style has been identified.
    const bool echo = style % 2 == 0;
    const size_t paired = echo ? t : noun_for_rank(style, (t_rank + 1) % nouns.size());
    const size_t x = fresh_topic(style, rng, t, paired);
    StyleLine line;
    line.topic = nouns[t];
    const uint64_t shape = rng.below(20);
    if (shape < 9) {
        line.text = "the " + nouns[t] + " and the " + nouns[paired] + " " + def.c0 + " the " +
                    nouns[x] + " " + def.punct;
    } else if (shape < 13) {
        const size_t y = fresh_topic(style, rng, t, x);
        line.text = "the " + nouns[t] + " " + def.c0 + " the " + nouns[x] + " and the " +
                    nouns[y] + " " + def.punct;
    } else if (shape < 15) {
        line.text = "the " + nouns[t] + " " + def.c1 + " the " + nouns[x] + " " + def.punct;
    } else {
        line.text = "the " + nouns[t] + " and the " + nouns[x] + " " + def.c1 + " the " +
                    nouns[paired] + " " + def.punct;
    }
    return line;
}

std::vector<std::string> fixture_style_lines(int style, int count, uint64_t seed) {
    Rng rng(derive_seed(seed, "style:" + style_name(style)));
    std::vector<std::string> lines;
    lines.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        lines.push_back(fixture_style_line(style, rng).text);
    }
    return lines;
}

std::vector<std::string> fixture_background_lines(int per_kind, uint64_t seed) {
    Rng rng(derive_seed(seed, "background"));
    std::vector<std::string> lines;
    lines.reserve(static_cast<size_t>(per_kind) * 6);
    const auto& nouns = topic_nouns();
    for (int kind = 0; kind < 6; ++kind) {
        // Hint-bearing kinds run at reduced volume so keyword usage is taught
        // without making the base hint circuit do all the work at eval time.
        const bool hint_kind = kind == 1 || kind == 3 || kind == 5;
        const int count = hint_kind ? per_kind * 3 / 8 : per_kind;
        for (int i = 0; i < count; ++i) {
            const int style = kind <= 1 ? i % kStyles : prompted_style(rng);
            const StyleLine sl = fixture_style_line(style, rng);
            const std::string name = style_name(style);
            switch (kind) {
                case 0: {
                    // keyword extraction: the topic first, then a second noun
                    size_t x = rng.below(nouns.size());
                    while (nouns[x] == sl.topic) {
                        x = rng.below(nouns.size());
                    }
                    lines.push_back(sl.text + " top keywords of the above text are : " + sl.topic +
                                    " , " + nouns[x]);
                    break;
                }
                case 1:
                    lines.push_back("write with keyword " + sl.topic + " : " + sl.text);
                    break;
                case 2:
                    lines.push_back("write in " + name + " style : " + sl.text);
                    break;
                case 3:
                    lines.push_back("write with keyword " + sl.topic + " in " + name +
                                    " style : " + sl.text);
                    break;
                case 4:
                    lines.push_back("here is text written in " + name + " style : " + sl.text);
                    break;
                case 5:
                    lines.push_back("here is text written in " + name + " style with keyword " +
                                    sl.topic + " : " + sl.text);
                    break;
                default:
                    break;
            }
        }
    }
    // Raw lines for the background styles keep the unprompted distribution a
    // genuine six-way mixture rather than a two-way one.
    for (int style = 2; style < kStyles; ++style) {
        Rng raw(derive_seed(seed, "raw:" + style_name(style)));
        const int count = per_kind * 2;
        for (int i = 0; i < count; ++i) {
            lines.push_back(fixture_style_line(style, raw).text);
        }
    }
    return lines;
}

void write_fixture_corpus(const std::filesystem::path& root, const FixtureSpec& spec) {
    std::filesystem::create_directories(root);
    auto write_lines = [&](const std::string& name, const std::vector<std::string>& lines) {
        std::ofstream f(root / name);
        if (!f) {
            throw std::runtime_error("cannot write fixture file: " + (root / name).string());
        }
        for (const auto& l : lines) {
            f << l << '\n';
        }
    };
    write_lines("alpha.txt", fixture_style_lines(0, spec.lines_per_style, spec.seed));
    write_lines("beta.txt", fixture_style_lines(1, spec.lines_per_style, spec.seed));
    write_lines("background.txt", fixture_background_lines(spec.background_per_kind, spec.seed));
}

ModelConfig fixture_model_config(int vocab_size) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.d_model = 64;
    cfg.d_ffn = 128;
    cfg.max_seq_len = 48;
    cfg.vocab_size = vocab_size;
    return cfg;
}

PretrainConfig fixture_pretrain_config(uint64_t seed) {
    PretrainConfig cfg;
    cfg.max_lr = 1e-3;
    cfg.total_updates = 1200;
    cfg.warmup_fraction = 0.10;
    cfg.tokens_per_batch = 4096;
    cfg.seed = seed;
    return cfg;
}

TrainConfig fixture_train_config(bool pa_on, uint64_t seed) {
    TrainConfig cfg;  // defaults are the desk-scale paper analogues
    cfg.seed = seed;
    cfg.augmentation.templates = pa_on;
    cfg.augmentation.keywords = pa_on;
    return cfg;
}

KeywordConfig fixture_keyword_config() {
    KeywordConfig cfg;
    cfg.max_gen_tokens = 8;
    return cfg;
}

std::vector<std::string> fixture_train_template_lines() {
    return {
        "write in {X} style :",
        "write with keyword {K} in {X} style :",
    };
}

RobustnessConfig fixture_robustness_config(const std::string& style_name, int threads) {
    RobustnessConfig cfg;
    cfg.nl_plain = parse_template("here is text written in " + style_name + " style :");
    cfg.nl_hint =
        parse_template("here is text written in " + style_name + " style with keyword {K} :");
    cfg.x_plain = parse_template("here is text written in {X} style :");
    cfg.x_hint = parse_template("here is text written in {X} style with keyword {K} :");
    cfg.ood = true;  // phrasing never used by the imaginary-word trainer
    cfg.threads = threads;
    return cfg;
}

}  // namespace xp
