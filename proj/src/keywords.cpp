#include "xprompt/keywords.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "engine.hpp"
#include "xprompt/template.hpp"
#include "xprompt/threading.hpp"

namespace xp {
namespace {

PromptTemplate parse_ranking_template(const KeywordConfig& config) {
    const PromptTemplate t = parse_template(config.ranking_template);
    if (!t.has_keyword_slot() || t.has_imaginary_slot()) {
        throw std::invalid_argument("ranking template must carry exactly one {K} slot: " +
                                    config.ranking_template);
    }
    return t;
}

std::vector<int> greedy_tokens(const Engine<float>& eng, const Mat<float>& ext,
                               std::vector<int> ids, int max_new) {
    constexpr int kEos = 1;
    std::vector<int> out;
    for (int step = 0; step < max_new; ++step) {
        if (static_cast<int>(ids.size()) >= eng.config().max_seq_len) {
            break;
        }
        const std::vector<float> logits = eng.last_logits(ext, ids);
        int arg = 0;
        for (int j = 1; j < static_cast<int>(logits.size()); ++j) {
            if (logits[j] > logits[arg]) {
                arg = j;
            }
        }
        if (arg == kEos) {
            break;
        }
        out.push_back(arg);
        ids.push_back(arg);
    }
    return out;
}

std::vector<std::vector<int>> extract_core(const Engine<float>& eng, const Mat<float>& ext,
                                           const Vocabulary& vocab, const std::string& text,
                                           const KeywordConfig& config) {
    if (text.empty()) {
        throw std::invalid_argument("text must be non-empty");
    }
    std::vector<int> text_ids = vocab.tokenize(text);
    const std::vector<int> suffix = vocab.tokenize(config.extraction_prompt);
    const int budget =
        eng.config().max_seq_len - config.max_gen_tokens - static_cast<int>(suffix.size()) - 1;
    if (budget < 1) {
        return {};
    }
    if (static_cast<int>(text_ids.size()) > budget) {
        text_ids.resize(static_cast<size_t>(budget));
    }
    std::vector<int> ids;
    ids.push_back(vocab.bos());
    ids.insert(ids.end(), text_ids.begin(), text_ids.end());
    ids.insert(ids.end(), suffix.begin(), suffix.end());

    const std::vector<int> gen = greedy_tokens(eng, ext, std::move(ids), config.max_gen_tokens);

    const int comma = vocab.id_of(",");
    std::vector<std::vector<int>> items;
    std::vector<int> cur;
    auto flush = [&] {
        if (!cur.empty() &&
            std::none_of(items.begin(), items.end(), [&](const auto& it) { return it == cur; })) {
            items.push_back(cur);
        }
        cur.clear();
    };
    for (const int id : gen) {
        if (id == comma) {
            flush();
        } else if (!vocab.is_special(id)) {
            cur.push_back(id);
        }
    }
    flush();
    if (static_cast<int>(items.size()) > config.max_candidates) {
        items.resize(static_cast<size_t>(config.max_candidates));
    }
    return items;
}

RankedKeyword rank_core(const Engine<float>& eng, const Mat<float>& ext, const Vocabulary& vocab,
                        const PromptTemplate& tmpl,
                        const std::vector<std::vector<int>>& candidates,
                        std::vector<int> text_ids) {
    if (candidates.empty()) {
        throw std::invalid_argument("empty candidate list");
    }
    if (text_ids.empty()) {
        throw std::invalid_argument("text must be non-empty");
    }
    RankedKeyword best;
    bool have = false;
    for (const auto& cand : candidates) {
        Bindings b;
        b.keyword = cand;
        const std::vector<int> prompt = render(tmpl, b, vocab);
        std::vector<int> cont = text_ids;
        const int room = eng.config().max_seq_len - static_cast<int>(prompt.size());
        if (room < 1) {
            continue;
        }
        if (static_cast<int>(cont.size()) > room) {
            cont.resize(static_cast<size_t>(room));
        }
        const double s = eng.score(ext, prompt, cont);
        if (!have || s > best.score) {  // ties keep the earliest candidate
            best.tokens = cand;
            best.score = s;
            have = true;
        }
    }
    if (!have) {
        throw std::runtime_error("no candidate fits within max_seq_len");
    }
    return best;
}

std::string line_digest(const std::string& text) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(text)));
    return std::string(buf);
}

using CacheMap = std::unordered_map<std::string, std::optional<std::vector<int>>>;

CacheMap load_cache(const std::filesystem::path& path) {
    CacheMap cache;
    std::ifstream f(path);
    if (!f) {
        return cache;  // cold cache
    }
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) {
            continue;
        }
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("digest")) {
            throw std::runtime_error("bad cache record in " + path.string() + ": " + line);
        }
        std::optional<std::vector<int>> kw;
        if (j.contains("keyword") && !j["keyword"].is_null()) {
            kw = j["keyword"].get<std::vector<int>>();
        }
        cache[j["digest"].get<std::string>()] = std::move(kw);
    }
    return cache;
}

void save_cache(const std::filesystem::path& path, const CacheMap& cache,
                const std::vector<std::string>& digest_order) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) {
            throw std::runtime_error("cannot write cache: " + tmp.string());
        }
        // this corpus's digests in first-seen order, then any entries other
        // corpora left in the shared cache (sorted); reruns are byte-stable
        std::unordered_map<std::string, bool> written;
        auto emit = [&](const std::string& d) {
            if (written.count(d) != 0) {
                return;
            }
            written[d] = true;
            const auto it = cache.find(d);
            nlohmann::json j;
            j["digest"] = d;
            if (it->second.has_value()) {
                j["keyword"] = *it->second;
            } else {
                j["keyword"] = nullptr;
            }
            f << j.dump() << '\n';
        };
        for (const auto& d : digest_order) {
            emit(d);
        }
        std::vector<std::string> rest;
        for (const auto& [d, kw] : cache) {
            if (written.count(d) == 0) {
                rest.push_back(d);
            }
        }
        std::sort(rest.begin(), rest.end());
        for (const auto& d : rest) {
            emit(d);
        }
        if (!f) {
            throw std::runtime_error("write failed: " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

std::vector<std::vector<int>> extract_candidates(const ModelWeights& w, const EmbeddingTable& emb,
                                                 const Vocabulary& vocab, const std::string& text,
                                                 const KeywordConfig& config) {
    if (config.max_candidates < 1) {
        throw std::invalid_argument("max_candidates must be at least 1");
    }
    const Engine<float> eng(w);
    return extract_core(eng, emb.extension, vocab, text, config);
}

RankedKeyword rank_keyword(const ModelWeights& w, const EmbeddingTable& emb,
                           const Vocabulary& vocab,
                           const std::vector<std::vector<int>>& candidates,
                           const std::vector<int>& text_ids, const KeywordConfig& config) {
    const Engine<float> eng(w);
    return rank_core(eng, emb.extension, vocab, parse_ranking_template(config), candidates,
                     text_ids);
}

AnnotateStats annotate_corpus(const ModelWeights& w, const EmbeddingTable& emb,
                              const Vocabulary& vocab, UserCorpus& corpus,
                              const KeywordConfig& config,
                              const std::filesystem::path& cache_path) {
    if (corpus.lines.size() != corpus.examples.size()) {
        throw std::invalid_argument("corpus lines and examples out of step");
    }
    const Engine<float> eng(w);
    const PromptTemplate tmpl = parse_ranking_template(config);
    CacheMap cache = load_cache(cache_path);

    std::vector<std::string> digests(corpus.lines.size());
    std::vector<size_t> missing;
    AnnotateStats stats;
    for (size_t i = 0; i < corpus.lines.size(); ++i) {
        digests[i] = line_digest(corpus.lines[i]);
        if (cache.count(digests[i]) != 0) {
            ++stats.cache_hits;
        } else {
            missing.push_back(i);
        }
    }

    std::vector<std::optional<std::vector<int>>> fresh(missing.size());
    std::vector<long> calls(missing.size(), 0);
    parallel_for(missing.size(), config.threads, [&](size_t mi) {
        const size_t i = missing[mi];
        const auto candidates = extract_core(eng, emb.extension, vocab, corpus.lines[i], config);
        long n = 1;  // the extraction generation
        if (!candidates.empty()) {
            fresh[mi] = rank_core(eng, emb.extension, vocab, tmpl, candidates,
                                  corpus.examples[i].continuation_ids)
                            .tokens;
            n += static_cast<long>(candidates.size());  // one scoring pass per candidate
        }
        calls[mi] = n;
    });
    for (size_t mi = 0; mi < missing.size(); ++mi) {
        cache[digests[missing[mi]]] = fresh[mi];
        stats.model_calls += calls[mi];
    }

    for (size_t i = 0; i < corpus.examples.size(); ++i) {
        corpus.examples[i].keyword = cache[digests[i]];
    }
    save_cache(cache_path, cache, digests);
    return stats;
}

}  // namespace xp
