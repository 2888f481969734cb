#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "support/builders.hpp"
#include "xprompt/rng.hpp"
#include "xprompt/template.hpp"
#include "xprompt/vocab.hpp"

using xp::Bindings;
using xp::parse_template;
using xp::parse_template_set;
using xp::PromptTemplate;
using xp::SegmentKind;
using xp::TemplateSet;
using xp::Vocabulary;
namespace fs = std::filesystem;

#ifndef XP_DATA_DIR
#define XP_DATA_DIR "data"
#endif

namespace {

Vocabulary style_vocab() {
    Vocabulary v = Vocabulary::fit({"the style of is clear in following text write go with keyword : ."}, 100);
    v.add_imaginary_word("<ix:style>");
    return v;
}

}  // namespace

TEST_CASE("parse_template recognizes imaginary and keyword slots") {
    const PromptTemplate a = parse_template("The style of {X} is clear in the following text:");
    REQUIRE(a.segments.size() == 3);
    CHECK(a.segments[0].kind == SegmentKind::kLiteral);
    CHECK(a.segments[1].kind == SegmentKind::kImaginarySlot);
    CHECK(a.segments[2].kind == SegmentKind::kLiteral);
    CHECK(a.has_imaginary_slot());
    CHECK_FALSE(a.has_keyword_slot());

    const PromptTemplate b = parse_template("Write with keyword {K}:");
    REQUIRE(b.segments.size() == 3);
    CHECK(b.segments[1].kind == SegmentKind::kKeywordSlot);
    CHECK(b.has_keyword_slot());
    CHECK_FALSE(b.has_imaginary_slot());
}

TEST_CASE("parse_template rejects duplicate slots and empty literals") {
    CHECK_THROWS_AS(parse_template("{X} {X}"), std::invalid_argument);
    CHECK_THROWS_AS(parse_template("a {K} b {K}"), std::invalid_argument);
    CHECK_THROWS_AS(parse_template("{X}"), std::invalid_argument);
    CHECK_THROWS_AS(parse_template("   "), std::invalid_argument);
}

TEST_CASE("render prepends bos and substitutes slots") {
    const Vocabulary v = style_vocab();
    const auto plain = xp::render(parse_template("go :"), Bindings{}, v);
    CHECK(plain == std::vector<int>{v.bos(), v.id_of("go"), v.id_of(":")});

    const int word_id = v.find_imaginary("<ix:style>")->id;
    Bindings b;
    b.imaginary_id = word_id;
    const auto with_x = xp::render(parse_template("in {X} style :"), b, v);
    CHECK(with_x == std::vector<int>{v.bos(), v.id_of("in"), word_id, v.id_of("style"),
                                     v.id_of(":")});
    CHECK(with_x[2] >= v.base_size());
}

TEST_CASE("render validates bindings against slots") {
    const Vocabulary v = style_vocab();
    const PromptTemplate with_x = parse_template("in {X} style :");
    const PromptTemplate with_k = parse_template("write with keyword {K} :");
    const PromptTemplate plain = parse_template("write :");

    CHECK_THROWS_AS(xp::render(with_x, Bindings{}, v), std::invalid_argument);
    CHECK_THROWS_AS(xp::render(with_k, Bindings{}, v), std::invalid_argument);

    Bindings extra;
    extra.imaginary_id = v.find_imaginary("<ix:style>")->id;
    CHECK_THROWS_AS(xp::render(plain, extra, v), std::invalid_argument);

    Bindings empty_keyword;
    empty_keyword.keyword = std::vector<int>{};
    CHECK_THROWS_AS(xp::render(with_k, empty_keyword, v), std::invalid_argument);

    Bindings not_imaginary;
    not_imaginary.imaginary_id = v.id_of("style");
    CHECK_THROWS_AS(xp::render(with_x, not_imaginary, v), std::invalid_argument);
}

TEST_CASE("render is injective over distinct keyword bindings") {
    const Vocabulary v = style_vocab();
    const PromptTemplate t = parse_template("write with keyword {K} :");
    xp::Rng rng(11);
    std::set<std::vector<int>> keywords;
    while (keywords.size() < 50) {
        std::vector<int> kw;
        const int len = 1 + static_cast<int>(rng.below(3));
        for (int i = 0; i < len; ++i) {
            kw.push_back(3 + static_cast<int>(rng.below(static_cast<uint64_t>(v.base_size() - 3))));
        }
        keywords.insert(kw);
    }
    std::set<std::vector<int>> rendered;
    for (const auto& kw : keywords) {
        Bindings b;
        b.keyword = kw;
        rendered.insert(xp::render(t, b, v));
    }
    CHECK(rendered.size() == keywords.size());
}

TEST_CASE("template sets enforce slot agreement and skip comments") {
    const TemplateSet set = parse_template_set(
        {"# comment", "", "in {X} style :", "the style of {X} :", "write in {X} style :"},
        "demo");
    CHECK(set.size() == 3);
    CHECK(set.has_imaginary_slot());

    CHECK_THROWS_WITH_AS(parse_template_set({"in {X} style :", "write :"}, "bad"),
                         "template set mixes NL and X-Prompt templates", std::invalid_argument);
    CHECK_THROWS_AS(parse_template_set({"# only comments"}, "empty"), std::invalid_argument);
}

TEST_CASE("the shipped default template set loads with four imaginary-slot templates") {
    const TemplateSet set =
        xp::load_template_set(fs::path(XP_DATA_DIR) / "templates" / "default_xprompt.txt");
    CHECK(set.name == "default_xprompt");
    REQUIRE(set.size() == 4);
    CHECK(set.has_imaginary_slot());
    CHECK_FALSE(set.has_keyword_slot());
    CHECK(set.templates[0].source == "The style of {X} is clear in the following text:");
    CHECK(set.templates[1].source == "{X} style can be identified in the following text:");
    CHECK(set.templates[2].source == "The following text is in the style of {X}:");
    CHECK(set.templates[3].source == "Write in {X} style:");
}

TEST_CASE("rendered token count equals literals plus slots plus bos") {
    const Vocabulary v = style_vocab();
    const PromptTemplate t = parse_template("write with keyword {K} in {X} style :");
    Bindings b;
    b.imaginary_id = v.find_imaginary("<ix:style>")->id;
    b.keyword = std::vector<int>{v.id_of("text"), v.id_of("go")};
    const auto ids = xp::render(t, b, v);

    size_t literal_tokens = 0;
    for (const auto& seg : t.segments) {
        if (seg.kind == SegmentKind::kLiteral) {
            literal_tokens += v.tokenize(seg.text).size();
        }
    }
    CHECK(ids.size() == 1 + literal_tokens + 1 + b.keyword->size());

    const int bound = xp::rendered_length_bound(t, v, 2);
    CHECK(static_cast<int>(ids.size()) <= bound);
    CHECK(xp::render(t, b, v) == ids);  // re-render is bit-identical
}
