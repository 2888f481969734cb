// xprompt: pipeline driver for learning and using imaginary words on a
// frozen desk-scale LM. Subcommands: pretrain, learn, annotate, eval,
// generate, keywords. Each accepts --config FILE (flat JSON, keys = long
// option names); command-line flags override file values, and runs with an
// output directory echo their resolved config into <out>/config.json.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "xprompt/checkpoint.hpp"
#include "xprompt/corpus.hpp"
#include "xprompt/eval.hpp"
#include "xprompt/keywords.hpp"
#include "xprompt/learn.hpp"
#include "xprompt/model.hpp"
#include "xprompt/pretrain.hpp"
#include "xprompt/template.hpp"
#include "xprompt/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flat JSON object as a CLI11 config source: {"updates": 500, "out": "run"}.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override {
        return "{}\n";
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        json j;
        try {
            j = json::parse(input);
        } catch (const std::exception& e) {
            throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) {
            throw CLI::ConversionError("config file must hold a JSON object");
        }
        std::vector<CLI::ConfigItem> items;
        for (const auto& [key, value] : j.items()) {
            CLI::ConfigItem item;
            item.name = key;
            if (value.is_array()) {
                for (const auto& v : value) {
                    item.inputs.push_back(scalar(v));
                }
            } else {
                item.inputs.push_back(scalar(value));
            }
            items.push_back(std::move(item));
        }
        return items;
    }

private:
    static std::string scalar(const json& v) {
        if (v.is_string()) {
            return v.get<std::string>();
        }
        if (v.is_boolean()) {
            return v.get<bool>() ? "true" : "false";
        }
        return v.dump();
    }
};

void use_json_config(CLI::App* sub) {
    sub->config_formatter(std::make_shared<JsonConfig>());
    sub->set_config("--config", "", "JSON config file; explicit flags override it");
}

void write_config_echo(const fs::path& out_dir, const json& resolved) {
    fs::create_directories(out_dir);
    std::ofstream f(out_dir / "config.json");
    if (!f) {
        throw std::runtime_error("cannot write " + (out_dir / "config.json").string());
    }
    f << resolved.dump(2) << "\n";
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) {
        throw std::runtime_error("cannot write " + path.string());
    }
    f << text;
}

// Raw lines of every user file under root, files in sorted order (the
// vocabulary-fitting pass; ingest() re-reads them against the fitted vocab).
std::vector<std::string> read_corpus_lines(const fs::path& root) {
    if (!fs::is_directory(root)) {
        throw std::runtime_error("corpus root is not a directory: " + root.string());
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_regular_file()) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        throw std::runtime_error("no user files found in " + root.string());
    }
    std::vector<std::string> lines;
    for (const auto& p : files) {
        std::ifstream f(p);
        if (!f) {
            throw std::runtime_error("cannot open user file: " + p.string());
        }
        std::string line;
        while (std::getline(f, line)) {
            lines.push_back(line);
        }
    }
    return lines;
}

xp::UserCorpus& find_user(std::vector<xp::UserCorpus>& corpora, const std::string& user_id) {
    for (auto& c : corpora) {
        if (c.user_id == user_id) {
            return c;
        }
    }
    std::string known;
    for (const auto& c : corpora) {
        known += (known.empty() ? "" : ", ") + c.user_id;
    }
    throw std::runtime_error("no user '" + user_id + "' in corpus; found: " + known);
}

const std::vector<xp::TrainingExample>& pick_split(const xp::UserSplit& split,
                                                   const std::string& name) {
    if (name == "train") {
        return split.train;
    }
    if (name == "valid") {
        return split.valid;
    }
    return split.test;
}

// "<ix:alpha>" -> "ix_alpha" (sidecar file stem).
std::string sanitize_word_name(const std::string& name) {
    std::string out;
    for (const char c : name) {
        if (std::isalnum(static_cast<unsigned char>(c)) != 0) {
            out += c;
        } else if (!out.empty() && out.back() != '_') {
            out += '_';
        }
    }
    while (!out.empty() && out.back() == '_') {
        out.pop_back();
    }
    return out.empty() ? "word" : out;
}

// Registers a learned word from its sidecar and appends its row to the
// extension table. Returns the assigned id.
int register_sidecar(const fs::path& path, const xp::ModelWeights& w, xp::Vocabulary& vocab,
                     xp::EmbeddingTable& emb) {
    const xp::ImaginarySidecar sc = xp::load_sidecar(path);
    if (static_cast<int>(sc.row.size()) != w.config.d_model) {
        throw std::runtime_error("sidecar row width " + std::to_string(sc.row.size()) +
                                 " disagrees with checkpoint d_model " +
                                 std::to_string(w.config.d_model));
    }
    const xp::ImaginaryWord& word = vocab.add_imaginary_word(sc.name, sc.provenance);
    xp::Mat<float> grown(vocab.imaginary_size(), w.config.d_model);
    for (int r = 0; r < emb.extension.rows; ++r) {
        std::copy(emb.extension.row(r), emb.extension.row(r) + emb.extension.cols, grown.row(r));
    }
    std::copy(sc.row.begin(), sc.row.end(), grown.row(word.id - vocab.base_size()));
    emb.extension = std::move(grown);
    return word.id;
}

// Every "<ix:...>" span in the prompt must name a loaded word; the word
// tokenizer would otherwise quietly shred the span into punctuation.
void check_prompt_imaginary_names(const std::string& prompt, const xp::Vocabulary& vocab) {
    size_t pos = 0;
    while ((pos = prompt.find(xp::Vocabulary::kImaginaryPrefix, pos)) != std::string::npos) {
        const size_t end = prompt.find('>', pos);
        if (end == std::string::npos) {
            throw std::runtime_error("unterminated imaginary name in prompt: " +
                                     prompt.substr(pos));
        }
        const std::string name =
            xp::canonical_imaginary_name(prompt.substr(pos, end - pos + 1));
        if (vocab.find_imaginary(name) == nullptr) {
            std::string known;
            for (const auto& iw : vocab.imaginary_words()) {
                known += (known.empty() ? "" : ", ") + iw.name;
            }
            throw std::runtime_error("unknown imaginary word '" + name +
                                     "'; loaded: " + (known.empty() ? "(none)" : known));
        }
        pos = end + 1;
    }
}

struct KeywordKnobs {
    std::string extraction_prompt = xp::KeywordConfig{}.extraction_prompt;
    std::string ranking_template = xp::KeywordConfig{}.ranking_template;
    int max_candidates = 5;
    int max_gen_tokens = 16;

    void attach(CLI::App* sub) {
        sub->add_option("--extraction-prompt", extraction_prompt,
                        "suffix asking the LM for keyword candidates");
        sub->add_option("--ranking-template", ranking_template,
                        "{K} template scored to pick the best candidate");
        sub->add_option("--max-candidates", max_candidates, "candidate cap (C)");
        sub->add_option("--max-gen-tokens", max_gen_tokens, "extraction generation budget");
    }

    xp::KeywordConfig config(int threads) const {
        xp::KeywordConfig kc;
        kc.extraction_prompt = extraction_prompt;
        kc.ranking_template = ranking_template;
        kc.max_candidates = max_candidates;
        kc.max_gen_tokens = max_gen_tokens;
        kc.threads = threads;
        return kc;
    }

    void echo(json& cfg) const {
        cfg["extraction_prompt"] = extraction_prompt;
        cfg["ranking_template"] = ranking_template;
        cfg["max_candidates"] = max_candidates;
        cfg["max_gen_tokens"] = max_gen_tokens;
    }
};

// ---------------------------------------------------------------- pretrain

struct PretrainArgs {
    std::string corpus, out;
    int max_vocab = 2000;
    int layers = 2, heads = 4, d_model = 64, d_ffn = 128, max_seq_len = 128;
    int max_line_tokens = 0;  // 0 = max_seq_len - 2
    int updates = 1000, tokens_per_batch = 4096;
    double max_lr = 1e-3, warmup = 0.10;
    std::uint64_t seed = 0, split_seed = 7;
    int threads = 0;
};

int run_pretrain(const PretrainArgs& a) {
    const auto lines = read_corpus_lines(a.corpus);
    xp::Vocabulary vocab = xp::Vocabulary::fit(lines, a.max_vocab);

    xp::ModelConfig mc;
    mc.n_layers = a.layers;
    mc.n_heads = a.heads;
    mc.d_model = a.d_model;
    mc.d_ffn = a.d_ffn;
    mc.max_seq_len = a.max_seq_len;
    mc.vocab_size = vocab.base_size();
    mc.validate();

    const int line_cap = a.max_line_tokens > 0 ? a.max_line_tokens : a.max_seq_len - 2;
    auto corpora = xp::ingest(a.corpus, vocab, line_cap);
    std::cout << xp::format_stats(xp::stats(corpora)) << "\n";

    const xp::Split split = xp::split_corpora(corpora, xp::SplitRatios{}, a.split_seed);
    const auto train = split.all_train();
    const auto valid = split.all_valid();

    xp::ModelWeights w = xp::init_model(mc, a.seed);
    const double ppl_before = xp::base_lm_perplexity(w, valid, a.threads);

    xp::PretrainConfig pc;
    pc.max_lr = a.max_lr;
    pc.total_updates = a.updates;
    pc.warmup_fraction = a.warmup;
    pc.tokens_per_batch = a.tokens_per_batch;
    pc.seed = a.seed;
    pc.threads = a.threads;
    const xp::PretrainResult result = xp::train_base_model(w, train, pc);

    const double ppl_after = xp::base_lm_perplexity(w, valid, a.threads);
    if (!(ppl_after < ppl_before)) {
        std::cout << "warning: validation perplexity did not improve\n";
    }

    fs::create_directories(a.out);
    vocab.save(fs::path(a.out) / "vocab.xpv1");
    xp::save_checkpoint(fs::path(a.out) / "model.xpc1", w);
    xp::save_train_log(fs::path(a.out) / "pretrain_log.jsonl", result.log);

    json cfg;
    cfg["command"] = "pretrain";
    cfg["corpus"] = a.corpus;
    cfg["out"] = a.out;
    cfg["max_vocab"] = a.max_vocab;
    cfg["layers"] = a.layers;
    cfg["heads"] = a.heads;
    cfg["d_model"] = a.d_model;
    cfg["d_ffn"] = a.d_ffn;
    cfg["max_seq_len"] = a.max_seq_len;
    cfg["max_line_tokens"] = line_cap;
    cfg["updates"] = a.updates;
    cfg["tokens_per_batch"] = a.tokens_per_batch;
    cfg["max_lr"] = a.max_lr;
    cfg["warmup"] = a.warmup;
    cfg["seed"] = a.seed;
    cfg["split_seed"] = a.split_seed;
    cfg["threads"] = a.threads;
    write_config_echo(a.out, cfg);

    std::cout << "vocab size " << vocab.base_size() << ", train lines " << train.size()
              << ", validation ppl " << ppl_before << " -> " << ppl_after << "\n";
    std::cout << "wrote " << (fs::path(a.out) / "model.xpc1").string() << ", "
              << (fs::path(a.out) / "vocab.xpv1").string() << "\n";
    return 0;
}

// ------------------------------------------------------------------- learn

struct LearnArgs {
    std::string checkpoint, vocab, corpus, user, word, templates, out;
    std::string cache;  // annotation cache; default <out>/annotations.jsonl
    bool no_template_aug = false, no_keyword_aug = false;
    int max_line_tokens = 0;  // 0 = auto from the template set's length bound
    int updates = 2000, tokens_per_batch = 2048;
    double max_lr = 2e-4, warmup = 0.10;
    std::uint64_t seed = 0, split_seed = 7;
    int threads = 0;
    KeywordKnobs keywords;
};

int run_learn(const LearnArgs& a) {
    const xp::ModelWeights w = xp::load_checkpoint(a.checkpoint);
    xp::Vocabulary vocab = xp::Vocabulary::load(a.vocab);
    const xp::TemplateSet set = xp::load_template_set(a.templates);

    const int prompt_bound = xp::rendered_length_bound(set, vocab, 8);
    int line_cap = a.max_line_tokens > 0 ? a.max_line_tokens
                                         : w.config.max_seq_len - prompt_bound - 1;
    line_cap = std::max(line_cap, 1);

    auto corpora = xp::ingest(a.corpus, vocab, line_cap);
    xp::UserCorpus& user = find_user(corpora, a.user);

    fs::create_directories(a.out);
    const fs::path cache_path =
        a.cache.empty() ? fs::path(a.out) / "annotations.jsonl" : fs::path(a.cache);

    const bool want_keywords = !a.no_keyword_aug && set.has_keyword_slot();
    if (want_keywords) {
        const xp::EmbeddingTable base_only;
        const xp::AnnotateStats st =
            annotate_corpus(w, base_only, vocab, user, a.keywords.config(a.threads), cache_path);
        std::cout << "annotated " << user.examples.size() << " lines (model calls "
                  << st.model_calls << ", cache hits " << st.cache_hits << ")\n";
    }

    const xp::Split split =
        xp::split_corpora(std::vector<xp::UserCorpus>{user}, xp::SplitRatios{}, a.split_seed);
    const auto& train = split.users[0].train;

    std::string provenance = "user=" + a.user + " updates=" + std::to_string(a.updates) +
                             " seed=" + std::to_string(a.seed) +
                             " templates=" + (a.no_template_aug ? "off" : "on") +
                             " keywords=" + (a.no_keyword_aug ? "off" : "on");
    const xp::ImaginaryWord& word = vocab.add_imaginary_word(a.word, provenance);

    xp::EmbeddingTable emb;
    emb.extension = xp::Mat<float>(vocab.imaginary_size(), w.config.d_model);

    xp::TrainConfig tc;
    tc.max_lr = a.max_lr;
    tc.total_updates = a.updates;
    tc.warmup_fraction = a.warmup;
    tc.tokens_per_batch = a.tokens_per_batch;
    tc.seed = a.seed;
    tc.augmentation.templates = !a.no_template_aug;
    tc.augmentation.keywords = !a.no_keyword_aug;
    tc.threads = a.threads;

    const xp::TrainResult result = xp::train_imaginary_word(w, emb, vocab, word, set, train, tc);

    const fs::path sidecar_path = fs::path(a.out) / (sanitize_word_name(word.name) + ".xps1");
    xp::save_sidecar(sidecar_path, {word.name, provenance, result.row});
    xp::save_train_log(fs::path(a.out) / "train_log.jsonl", result.log);

    json cfg;
    cfg["command"] = "learn";
    cfg["checkpoint"] = a.checkpoint;
    cfg["vocab"] = a.vocab;
    cfg["corpus"] = a.corpus;
    cfg["user"] = a.user;
    cfg["word"] = word.name;
    cfg["templates"] = a.templates;
    cfg["out"] = a.out;
    cfg["cache"] = cache_path.string();
    cfg["no_template_aug"] = a.no_template_aug;
    cfg["no_keyword_aug"] = a.no_keyword_aug;
    cfg["max_line_tokens"] = line_cap;
    cfg["updates"] = a.updates;
    cfg["tokens_per_batch"] = a.tokens_per_batch;
    cfg["max_lr"] = a.max_lr;
    cfg["warmup"] = a.warmup;
    cfg["seed"] = a.seed;
    cfg["split_seed"] = a.split_seed;
    cfg["threads"] = a.threads;
    if (want_keywords) {
        a.keywords.echo(cfg);
    }
    write_config_echo(a.out, cfg);

    const double first = result.log.empty() ? 0.0 : result.log.front().objective;
    const double last = result.log.empty() ? 0.0 : result.log.back().objective;
    std::cout << "trained " << word.name << " on " << train.size() << " lines, objective "
              << first << " -> " << last << "\n";
    std::cout << "wrote " << sidecar_path.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- annotate

struct AnnotateArgs {
    std::string checkpoint, vocab, corpus, user, cache;
    int threads = 0;
    KeywordKnobs keywords;
};

int run_annotate(const AnnotateArgs& a) {
    const xp::ModelWeights w = xp::load_checkpoint(a.checkpoint);
    const xp::Vocabulary vocab = xp::Vocabulary::load(a.vocab);
    auto corpora = xp::ingest(a.corpus, vocab, w.config.max_seq_len - 2);
    const xp::EmbeddingTable base_only;
    const xp::KeywordConfig kc = a.keywords.config(a.threads);
    for (auto& user : corpora) {
        if (!a.user.empty() && user.user_id != a.user) {
            continue;
        }
        const xp::AnnotateStats st = annotate_corpus(w, base_only, vocab, user, kc, a.cache);
        long annotated = 0;
        for (const auto& ex : user.examples) {
            annotated += ex.keyword.has_value() ? 1 : 0;
        }
        std::cout << "user " << user.user_id << ": " << annotated << "/" << user.examples.size()
                  << " annotated, model calls " << st.model_calls << ", cache hits "
                  << st.cache_hits << "\n";
    }
    if (!a.user.empty()) {
        find_user(corpora, a.user);  // error out if the filter matched nothing
    }
    return 0;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
    std::string checkpoint, vocab, corpus, user, out;
    std::string split = "test";
    std::uint64_t split_seed = 7;
    int threads = 0;
    // grid mode
    bool grid = false;
    std::string style;  // NL style name; defaults to the user id
    std::string sidecar_full, sidecar_wopa, cache;
    std::string nl_template, nl_hint_template, x_template, x_hint_template;
    bool in_distribution = false;
    // single-condition mode
    std::string tmpl, sidecar, dump;
    bool hint = false;
    KeywordKnobs keywords;
};

int run_eval_grid(const EvalArgs& a, const xp::ModelWeights& w, xp::Vocabulary& vocab,
                  std::vector<xp::UserCorpus>& corpora) {
    xp::UserCorpus& user = find_user(corpora, a.user);
    fs::create_directories(a.out);
    const fs::path cache_path =
        a.cache.empty() ? fs::path(a.out) / "annotations.jsonl" : fs::path(a.cache);
    const xp::EmbeddingTable base_only;
    annotate_corpus(w, base_only, vocab, user, a.keywords.config(a.threads), cache_path);

    const xp::Split split =
        xp::split_corpora(std::vector<xp::UserCorpus>{user}, xp::SplitRatios{}, a.split_seed);
    const auto& dataset = pick_split(split.users[0], a.split);

    xp::EmbeddingTable emb;
    const int full_id = register_sidecar(a.sidecar_full, w, vocab, emb);
    const int wopa_id = register_sidecar(a.sidecar_wopa, w, vocab, emb);

    const std::string style = a.style.empty() ? a.user : a.style;
    const std::string nl_plain = a.nl_template.empty()
                                     ? "here is text written in " + style + " style :"
                                     : a.nl_template;
    const std::string nl_hint =
        a.nl_hint_template.empty()
            ? "here is text written in " + style + " style with keyword {K} :"
            : a.nl_hint_template;
    const std::string x_plain =
        a.x_template.empty() ? "here is text written in {X} style :" : a.x_template;
    const std::string x_hint = a.x_hint_template.empty()
                                   ? "here is text written in {X} style with keyword {K} :"
                                   : a.x_hint_template;

    xp::RobustnessConfig rc;
    rc.nl_plain = xp::parse_template(nl_plain);
    rc.nl_hint = xp::parse_template(nl_hint);
    rc.x_plain = xp::parse_template(x_plain);
    rc.x_hint = xp::parse_template(x_hint);
    rc.ood = !a.in_distribution;
    rc.threads = a.threads;

    const xp::RobustnessReport report =
        xp::robustness_matrix(w, emb, vocab, full_id, wopa_id, dataset, rc);

    fs::create_directories(a.out);
    write_text_file(fs::path(a.out) / "report.json", xp::report_json(report));
    const std::string table = xp::report_table(report);
    write_text_file(fs::path(a.out) / "report.txt", table);

    json cfg;
    cfg["command"] = "eval";
    cfg["mode"] = "grid";
    cfg["checkpoint"] = a.checkpoint;
    cfg["vocab"] = a.vocab;
    cfg["corpus"] = a.corpus;
    cfg["user"] = a.user;
    cfg["split"] = a.split;
    cfg["split_seed"] = a.split_seed;
    cfg["style"] = style;
    cfg["sidecar_full"] = a.sidecar_full;
    cfg["sidecar_wopa"] = a.sidecar_wopa;
    cfg["cache"] = cache_path.string();
    cfg["nl_template"] = nl_plain;
    cfg["nl_hint_template"] = nl_hint;
    cfg["x_template"] = x_plain;
    cfg["x_hint_template"] = x_hint;
    cfg["ood"] = rc.ood;
    cfg["out"] = a.out;
    cfg["threads"] = a.threads;
    a.keywords.echo(cfg);
    write_config_echo(a.out, cfg);

    std::cout << table;
    std::cout << "wrote " << (fs::path(a.out) / "report.json").string() << "\n";
    return 0;
}

int run_eval_single(const EvalArgs& a, const xp::ModelWeights& w, xp::Vocabulary& vocab,
                    std::vector<xp::UserCorpus>& corpora) {
    xp::UserCorpus& user = find_user(corpora, a.user);
    fs::path cache_path;
    if (a.hint) {
        fs::create_directories(a.out);
        cache_path = a.cache.empty() ? fs::path(a.out) / "annotations.jsonl" : fs::path(a.cache);
        const xp::EmbeddingTable base_only;
        annotate_corpus(w, base_only, vocab, user, a.keywords.config(a.threads), cache_path);
    }

    const xp::Split split =
        xp::split_corpora(std::vector<xp::UserCorpus>{user}, xp::SplitRatios{}, a.split_seed);
    const auto& dataset = pick_split(split.users[0], a.split);

    xp::EmbeddingTable emb;
    xp::EvalCondition cond;
    cond.tmpl = xp::parse_template(a.tmpl);
    if (!a.sidecar.empty()) {
        cond.imaginary_id = register_sidecar(a.sidecar, w, vocab, emb);
    }
    cond.keyword_hint = a.hint;
    cond.label = (cond.imaginary_id ? "xprompt" : "nl") + std::string(a.hint ? "+hint" : "");

    std::vector<xp::TokenRecord> dump;
    const xp::EvalResult result =
        xp::evaluate_condition(w, emb, cond, dataset, vocab, a.threads,
                               a.dump.empty() ? nullptr : &dump);

    fs::create_directories(a.out);
    json out;
    out["label"] = cond.label;
    out["template"] = a.tmpl;
    out["ppl"] = result.ppl;
    out["accuracy"] = result.accuracy;
    out["tokens"] = result.tokens;
    out["total_nll"] = result.total_nll;
    write_text_file(fs::path(a.out) / "eval.json", out.dump(2) + "\n");
    if (!a.dump.empty()) {
        xp::save_token_dump(a.dump, dump);
    }

    json cfg;
    cfg["command"] = "eval";
    cfg["mode"] = "single";
    cfg["checkpoint"] = a.checkpoint;
    cfg["vocab"] = a.vocab;
    cfg["corpus"] = a.corpus;
    cfg["user"] = a.user;
    cfg["split"] = a.split;
    cfg["split_seed"] = a.split_seed;
    cfg["template"] = a.tmpl;
    cfg["sidecar"] = a.sidecar;
    cfg["hint"] = a.hint;
    cfg["dump"] = a.dump;
    cfg["out"] = a.out;
    cfg["threads"] = a.threads;
    if (a.hint) {
        cfg["cache"] = cache_path.string();
        a.keywords.echo(cfg);
    }
    write_config_echo(a.out, cfg);

    std::cout << cond.label << ": ppl " << result.ppl << ", accuracy " << result.accuracy
              << ", tokens " << result.tokens << "\n";
    return 0;
}

int run_eval(const EvalArgs& a) {
    const xp::ModelWeights w = xp::load_checkpoint(a.checkpoint);
    xp::Vocabulary vocab = xp::Vocabulary::load(a.vocab);
    auto corpora = xp::ingest(a.corpus, vocab, w.config.max_seq_len - 2);
    if (a.grid) {
        return run_eval_grid(a, w, vocab, corpora);
    }
    return run_eval_single(a, w, vocab, corpora);
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
    std::string checkpoint, vocab, prompt, out;
    std::vector<std::string> sidecars;
    bool sample = false;
    double temperature = 1.0;
    int top_k = 0;
    int max_new_tokens = 16;
    std::uint64_t seed = 0;
};

int run_generate(const GenerateArgs& a) {
    const xp::ModelWeights w = xp::load_checkpoint(a.checkpoint);
    xp::Vocabulary vocab = xp::Vocabulary::load(a.vocab);
    xp::EmbeddingTable emb;
    for (const auto& s : a.sidecars) {
        register_sidecar(s, w, vocab, emb);
    }
    check_prompt_imaginary_names(a.prompt, vocab);

    std::vector<int> ids = {vocab.bos()};
    for (const int id : vocab.tokenize(a.prompt)) {
        ids.push_back(id);
    }

    xp::DecodeConfig dc;
    dc.mode = a.sample ? xp::DecodeConfig::Mode::kSample : xp::DecodeConfig::Mode::kGreedy;
    dc.temperature = a.temperature;
    dc.top_k = a.top_k;
    dc.max_new_tokens = a.max_new_tokens;
    dc.seed = a.seed;

    const std::vector<int> out_ids = xp::generate(w, emb, ids, dc);
    const std::string text = vocab.detokenize(out_ids);
    std::cout << text << "\n";

    if (!a.out.empty()) {
        fs::create_directories(a.out);
        write_text_file(fs::path(a.out) / "generation.txt", text + "\n");
        json cfg;
        cfg["command"] = "generate";
        cfg["checkpoint"] = a.checkpoint;
        cfg["vocab"] = a.vocab;
        cfg["sidecars"] = a.sidecars;
        cfg["prompt"] = a.prompt;
        cfg["sample"] = a.sample;
        cfg["temperature"] = a.temperature;
        cfg["top_k"] = a.top_k;
        cfg["max_new_tokens"] = a.max_new_tokens;
        cfg["seed"] = a.seed;
        cfg["out"] = a.out;
        write_config_echo(a.out, cfg);
    }
    return 0;
}

// ---------------------------------------------------------------- keywords

struct KeywordsArgs {
    std::string checkpoint, vocab, text, out;
    int threads = 0;
    KeywordKnobs keywords;
};

int run_keywords(const KeywordsArgs& a) {
    const xp::ModelWeights w = xp::load_checkpoint(a.checkpoint);
    const xp::Vocabulary vocab = xp::Vocabulary::load(a.vocab);
    const xp::EmbeddingTable emb;
    const xp::KeywordConfig kc = a.keywords.config(a.threads);

    const auto candidates = xp::extract_candidates(w, emb, vocab, a.text, kc);
    std::ostringstream table;
    if (candidates.empty()) {
        table << "no candidates\n";
    } else {
        const std::vector<int> text_ids = vocab.tokenize(a.text);
        std::vector<std::pair<double, std::string>> rows;
        for (const auto& cand : candidates) {
            const xp::RankedKeyword rk =
                xp::rank_keyword(w, emb, vocab, {cand}, text_ids, kc);
            rows.emplace_back(rk.score, vocab.detokenize(cand));
        }
        std::stable_sort(rows.begin(), rows.end(),
                         [](const auto& x, const auto& y) { return x.first > y.first; });
        const xp::RankedKeyword best = xp::rank_keyword(w, emb, vocab, candidates, text_ids, kc);
        table.setf(std::ios::fixed);
        table.precision(6);
        for (size_t i = 0; i < rows.size(); ++i) {
            table << (i + 1) << ". " << rows[i].second << "  " << rows[i].first << "\n";
        }
        table << "best: " << vocab.detokenize(best.tokens) << "\n";
    }
    std::cout << table.str();

    if (!a.out.empty()) {
        fs::create_directories(a.out);
        write_text_file(fs::path(a.out) / "keywords.txt", table.str());
        json cfg;
        cfg["command"] = "keywords";
        cfg["checkpoint"] = a.checkpoint;
        cfg["vocab"] = a.vocab;
        cfg["text"] = a.text;
        cfg["out"] = a.out;
        cfg["threads"] = a.threads;
        a.keywords.echo(cfg);
        write_config_echo(a.out, cfg);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"imaginary-word prompting for a frozen desk-scale LM"};
    app.require_subcommand(1);

    PretrainArgs pa;
    CLI::App* pre = app.add_subcommand("pretrain", "fit vocab and train the toy base LM");
    use_json_config(pre);
    pre->add_option("--corpus", pa.corpus, "corpus root, one text file per user")->required();
    pre->add_option("--out", pa.out, "output directory")->required();
    pre->add_option("--max-vocab", pa.max_vocab, "vocabulary cap incl. specials");
    pre->add_option("--layers", pa.layers);
    pre->add_option("--heads", pa.heads);
    pre->add_option("--d-model", pa.d_model);
    pre->add_option("--d-ffn", pa.d_ffn);
    pre->add_option("--max-seq-len", pa.max_seq_len);
    pre->add_option("--max-line-tokens", pa.max_line_tokens, "0 = max_seq_len - 2");
    pre->add_option("--updates", pa.updates);
    pre->add_option("--tokens-per-batch", pa.tokens_per_batch);
    pre->add_option("--max-lr", pa.max_lr);
    pre->add_option("--warmup", pa.warmup, "warmup fraction of total updates");
    pre->add_option("--seed", pa.seed);
    pre->add_option("--split-seed", pa.split_seed);
    pre->add_option("--threads", pa.threads, "0 = hardware concurrency");

    LearnArgs la;
    CLI::App* lrn = app.add_subcommand("learn", "learn one imaginary word on a user corpus");
    use_json_config(lrn);
    lrn->add_option("--checkpoint", la.checkpoint)->required();
    lrn->add_option("--vocab", la.vocab)->required();
    lrn->add_option("--corpus", la.corpus)->required();
    lrn->add_option("--user", la.user, "user file stem to learn from")->required();
    lrn->add_option("--word", la.word, "imaginary name, e.g. <ix:alice>")->required();
    lrn->add_option("--templates", la.templates, "training template file")->required();
    lrn->add_option("--out", la.out)->required();
    lrn->add_option("--cache", la.cache, "annotation cache (default <out>/annotations.jsonl)");
    lrn->add_flag("--no-template-aug", la.no_template_aug,
                  "train on the first template only");
    lrn->add_flag("--no-keyword-aug", la.no_keyword_aug, "drop keyword-augmented templates");
    lrn->add_option("--max-line-tokens", la.max_line_tokens, "0 = auto from template bound");
    lrn->add_option("--updates", la.updates);
    lrn->add_option("--tokens-per-batch", la.tokens_per_batch);
    lrn->add_option("--max-lr", la.max_lr);
    lrn->add_option("--warmup", la.warmup);
    lrn->add_option("--seed", la.seed);
    lrn->add_option("--split-seed", la.split_seed);
    lrn->add_option("--threads", la.threads);
    la.keywords.attach(lrn);

    AnnotateArgs aa;
    CLI::App* ann = app.add_subcommand("annotate", "extract and rank keywords for a corpus");
    use_json_config(ann);
    ann->add_option("--checkpoint", aa.checkpoint)->required();
    ann->add_option("--vocab", aa.vocab)->required();
    ann->add_option("--corpus", aa.corpus)->required();
    ann->add_option("--user", aa.user, "only this user (default: all)");
    ann->add_option("--cache", aa.cache, "annotation cache file")->required();
    ann->add_option("--threads", aa.threads);
    aa.keywords.attach(ann);

    EvalArgs ea;
    CLI::App* ev = app.add_subcommand("eval", "evaluate prompts on a held-out split");
    use_json_config(ev);
    ev->add_option("--checkpoint", ea.checkpoint)->required();
    ev->add_option("--vocab", ea.vocab)->required();
    ev->add_option("--corpus", ea.corpus)->required();
    ev->add_option("--user", ea.user)->required();
    ev->add_option("--out", ea.out)->required();
    ev->add_option("--split", ea.split)->check(CLI::IsMember({"train", "valid", "test"}));
    ev->add_option("--split-seed", ea.split_seed);
    ev->add_option("--threads", ea.threads);
    ev->add_flag("--grid", ea.grid, "run the 3x2 robustness grid");
    ev->add_option("--style", ea.style, "NL style name (default: user id)");
    ev->add_option("--sidecar-full", ea.sidecar_full, "fully augmented word (grid)");
    ev->add_option("--sidecar-wopa", ea.sidecar_wopa, "single-template word (grid)");
    ev->add_option("--cache", ea.cache, "annotation cache file");
    ev->add_option("--nl-template", ea.nl_template);
    ev->add_option("--nl-hint-template", ea.nl_hint_template);
    ev->add_option("--x-template", ea.x_template);
    ev->add_option("--x-hint-template", ea.x_hint_template);
    ev->add_flag("--in-distribution", ea.in_distribution,
                 "mark the grid templates as seen during training");
    ev->add_option("--template", ea.tmpl, "single evaluation template");
    ev->add_option("--sidecar", ea.sidecar, "imaginary word bound to {X} (single mode)");
    ev->add_flag("--hint", ea.hint, "bind each example's keyword into {K}");
    ev->add_option("--dump", ea.dump, "per-token NLL dump file (single mode)");
    ea.keywords.attach(ev);

    GenerateArgs ga;
    CLI::App* gen = app.add_subcommand("generate", "decode a continuation for a prompt");
    use_json_config(gen);
    gen->add_option("--checkpoint", ga.checkpoint)->required();
    gen->add_option("--vocab", ga.vocab)->required();
    gen->add_option("--sidecar", ga.sidecars, "learned word sidecar (repeatable)");
    gen->add_option("prompt", ga.prompt, "prompt text; may contain <ix:...> names")->required();
    gen->add_flag("--sample", ga.sample, "sample instead of greedy decoding");
    gen->add_option("--temperature", ga.temperature);
    gen->add_option("--top-k", ga.top_k, "0 = no truncation");
    gen->add_option("--max-new-tokens", ga.max_new_tokens);
    gen->add_option("--seed", ga.seed);
    gen->add_option("--out", ga.out, "also record generation.txt and config.json here");

    KeywordsArgs ka;
    CLI::App* kw = app.add_subcommand("keywords", "extract and rank keywords for one text");
    use_json_config(kw);
    kw->add_option("--checkpoint", ka.checkpoint)->required();
    kw->add_option("--vocab", ka.vocab)->required();
    kw->add_option("text", ka.text, "text to annotate")->required();
    kw->add_option("--threads", ka.threads);
    kw->add_option("--out", ka.out, "also record keywords.txt and config.json here");
    ka.keywords.attach(kw);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (pre->parsed()) {
            return run_pretrain(pa);
        }
        if (lrn->parsed()) {
            return run_learn(la);
        }
        if (ann->parsed()) {
            return run_annotate(aa);
        }
        if (ev->parsed()) {
            if (ea.grid == !ea.tmpl.empty()) {
                std::cerr << "error: eval needs exactly one of --grid or --template\n";
                return 1;
            }
            if (ea.grid && (ea.sidecar_full.empty() || ea.sidecar_wopa.empty())) {
                std::cerr << "error: --grid requires --sidecar-full and --sidecar-wopa\n";
                return 1;
            }
            return run_eval(ea);
        }
        if (gen->parsed()) {
            return run_generate(ga);
        }
        if (kw->parsed()) {
            return run_keywords(ka);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
