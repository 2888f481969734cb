#include "xprompt/template.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace xp {
namespace {

bool blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

bool PromptTemplate::has_imaginary_slot() const {
    return std::any_of(segments.begin(), segments.end(), [](const Segment& s) {
        return s.kind == SegmentKind::kImaginarySlot;
    });
}

bool PromptTemplate::has_keyword_slot() const {
    return std::any_of(segments.begin(), segments.end(), [](const Segment& s) {
        return s.kind == SegmentKind::kKeywordSlot;
    });
}

bool TemplateSet::has_imaginary_slot() const {
    return !templates.empty() && templates.front().has_imaginary_slot();
}

bool TemplateSet::has_keyword_slot() const {
    return std::any_of(templates.begin(), templates.end(), [](const PromptTemplate& t) {
        return t.has_keyword_slot();
    });
}

PromptTemplate parse_template(const std::string& text) {
    PromptTemplate t;
    t.source = text;
    bool saw_x = false;
    bool saw_k = false;
    std::string literal;
    auto flush = [&] {
        if (!literal.empty()) {
            t.segments.push_back({SegmentKind::kLiteral, literal});
            literal.clear();
        }
    };
    size_t i = 0;
    while (i < text.size()) {
        if (text.compare(i, 3, "{X}") == 0) {
            if (saw_x) {
                throw std::invalid_argument("template has more than one {X} slot: " + text);
            }
            saw_x = true;
            flush();
            t.segments.push_back({SegmentKind::kImaginarySlot, ""});
            i += 3;
        } else if (text.compare(i, 3, "{K}") == 0) {
            if (saw_k) {
                throw std::invalid_argument("template has more than one {K} slot: " + text);
            }
            saw_k = true;
            flush();
            t.segments.push_back({SegmentKind::kKeywordSlot, ""});
            i += 3;
        } else {
            literal.push_back(text[i]);
            ++i;
        }
    }
    flush();
    const bool has_words = std::any_of(t.segments.begin(), t.segments.end(), [](const Segment& s) {
        return s.kind == SegmentKind::kLiteral && !normalize_words(s.text).empty();
    });
    if (!has_words) {
        throw std::invalid_argument("template has no literal content: " + text);
    }
    return t;
}

std::vector<int> render(const PromptTemplate& tmpl, const Bindings& bindings,
                        const Vocabulary& vocab) {
    if (tmpl.has_imaginary_slot() != bindings.imaginary_id.has_value()) {
        throw std::invalid_argument(tmpl.has_imaginary_slot()
                                        ? "template requires an imaginary-word binding"
                                        : "imaginary-word binding without an {X} slot");
    }
    if (tmpl.has_keyword_slot() != bindings.keyword.has_value()) {
        throw std::invalid_argument(tmpl.has_keyword_slot()
                                        ? "template requires a keyword binding"
                                        : "keyword binding without a {K} slot");
    }
    std::vector<int> ids;
    ids.push_back(vocab.bos());
    for (const auto& seg : tmpl.segments) {
        switch (seg.kind) {
            case SegmentKind::kLiteral: {
                const auto toks = vocab.tokenize(seg.text);
                ids.insert(ids.end(), toks.begin(), toks.end());
                break;
            }
            case SegmentKind::kImaginarySlot: {
                const int id = *bindings.imaginary_id;
                if (!vocab.is_imaginary(id)) {
                    throw std::invalid_argument("imaginary binding id is not an imaginary word");
                }
                ids.push_back(id);
                break;
            }
            case SegmentKind::kKeywordSlot: {
                if (bindings.keyword->empty()) {
                    throw std::invalid_argument("keyword binding is empty");
                }
                ids.insert(ids.end(), bindings.keyword->begin(), bindings.keyword->end());
                break;
            }
        }
    }
    return ids;
}

TemplateSet parse_template_set(const std::vector<std::string>& lines, const std::string& name) {
    TemplateSet set;
    set.name = name;
    for (const auto& line : lines) {
        if (blank(line) || line[0] == '#') {
            continue;
        }
        set.templates.push_back(parse_template(line));
    }
    if (set.templates.empty()) {
        throw std::invalid_argument("template set is empty: " + name);
    }
    const bool first_x = set.templates.front().has_imaginary_slot();
    for (const auto& t : set.templates) {
        if (t.has_imaginary_slot() != first_x) {
            throw std::invalid_argument("template set mixes NL and X-Prompt templates");
        }
    }
    return set;
}

TemplateSet load_template_set(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) {
        throw std::runtime_error("cannot open template set: " + path.string());
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        lines.push_back(line);
    }
    return parse_template_set(lines, path.stem().string());
}

int rendered_length_bound(const PromptTemplate& tmpl, const Vocabulary& vocab,
                          int keyword_len_bound) {
    int n = 1;  // bos
    for (const auto& seg : tmpl.segments) {
        switch (seg.kind) {
            case SegmentKind::kLiteral:
                n += static_cast<int>(vocab.tokenize(seg.text).size());
                break;
            case SegmentKind::kImaginarySlot:
                n += 1;
                break;
            case SegmentKind::kKeywordSlot:
                n += keyword_len_bound;
                break;
        }
    }
    return n;
}

int rendered_length_bound(const TemplateSet& set, const Vocabulary& vocab,
                          int keyword_len_bound) {
    int best = 0;
    for (const auto& t : set.templates) {
        best = std::max(best, rendered_length_bound(t, vocab, keyword_len_bound));
    }
    return best;
}

}  // namespace xp
