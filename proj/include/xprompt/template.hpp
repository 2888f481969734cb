#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xprompt/vocab.hpp"

namespace xp {

enum class SegmentKind { kLiteral, kImaginarySlot, kKeywordSlot };

struct Segment {
    SegmentKind kind = SegmentKind::kLiteral;
    std::string text;  // meaningful for kLiteral only
};

// A prompt skeleton: literal text plus at most one imaginary-word slot ({X})
// and at most one keyword slot ({K}). A slotless template is a plain NL
// prompt (the natural-language baseline).
struct PromptTemplate {
    std::vector<Segment> segments;
    std::string source;  // the text it was parsed from

    bool has_imaginary_slot() const;
    bool has_keyword_slot() const;
};

// T templates trained/evaluated together. All members agree on whether they
// carry an imaginary-word slot (an NL set and an X-Prompt set never mix).
struct TemplateSet {
    std::string name;
    std::vector<PromptTemplate> templates;

    int size() const { return static_cast<int>(templates.size()); }
    bool has_imaginary_slot() const;
    bool has_keyword_slot() const;  // true if any member carries {K}
};

// Values substituted at render time. imaginary_id must be present iff the
// template has an {X} slot; keyword iff it has a {K} slot.
struct Bindings {
    std::optional<int> imaginary_id;
    std::optional<std::vector<int>> keyword;
};

// "{X}" -> imaginary slot, "{K}" -> keyword slot, everything else literal.
// Throws on a second {X}/{K} or when no literal content remains.
PromptTemplate parse_template(const std::string& text);

// bos, then tokenized literals with slot substitutions, in template order.
// Deterministic; throws when bindings and slots disagree.
std::vector<int> render(const PromptTemplate& tmpl, const Bindings& bindings,
                        const Vocabulary& vocab);

// One template per non-empty line; '#'-prefixed lines are comments.
TemplateSet parse_template_set(const std::vector<std::string>& lines, const std::string& name);
TemplateSet load_template_set(const std::filesystem::path& path);

// Upper bound on render(...) length: bos + literals + one token per {X} +
// keyword_len_bound per {K}. Used to budget continuation truncation.
int rendered_length_bound(const PromptTemplate& tmpl, const Vocabulary& vocab,
                          int keyword_len_bound);
int rendered_length_bound(const TemplateSet& set, const Vocabulary& vocab,
                          int keyword_len_bound);

}  // namespace xp
