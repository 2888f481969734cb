#include "xprompt/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace xp {
namespace {

// --- codepoint-level normalization -----------------------------------------

bool is_space_cp(uint32_t cp) {
    switch (cp) {
        case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D:
        case 0x20: case 0x85: case 0xA0: case 0x1680:
        case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

bool is_punct_cp(uint32_t cp) {
    if (cp < 0x80) {
        return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) ||
               (cp >= 0x5B && cp <= 0x60) || (cp >= 0x7B && cp <= 0x7E);
    }
    switch (cp) {
        case 0xA1: case 0xA6: case 0xA7: case 0xAB: case 0xB6:
        case 0xB7: case 0xBB: case 0xBF: case 0xD7: case 0xF7:
            return true;
        default:
            break;
    }
    return (cp >= 0x2010 && cp <= 0x2027) || (cp >= 0x2030 && cp <= 0x205E) ||
           (cp >= 0x2E00 && cp <= 0x2E7F) || (cp >= 0x3001 && cp <= 0x3003) ||
           (cp >= 0x3008 && cp <= 0x3011) || (cp >= 0x3014 && cp <= 0x301F) ||
           (cp >= 0xFF01 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20) ||
           (cp >= 0xFF3B && cp <= 0xFF40) || (cp >= 0xFF5B && cp <= 0xFF65);
}

uint32_t lower_cp(uint32_t cp) {
    if (cp >= 'A' && cp <= 'Z') {
        return cp + 0x20;
    }
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) {
        return cp + 0x20;
    }
    return cp;
}

// Decodes one codepoint starting at s[i]; advances i. Invalid bytes are
// passed through one at a time as their own codepoints.
uint32_t decode_cp(const std::string& s, size_t& i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) {
        ++i;
        return b0;
    }
    int extra = 0;
    uint32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        extra = 1;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        extra = 2;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        extra = 3;
        cp = b0 & 0x07;
    } else {
        ++i;
        return b0;
    }
    if (i + static_cast<size_t>(extra) >= s.size()) {
        // truncated sequence
        ++i;
        return b0;
    }
    for (int k = 1; k <= extra; ++k) {
        const auto bk = static_cast<unsigned char>(s[i + k]);
        if ((bk & 0xC0) != 0x80) {
            ++i;
            return b0;
        }
        cp = (cp << 6) | (bk & 0x3F);
    }
    i += static_cast<size_t>(extra) + 1;
    return cp;
}

void encode_cp(uint32_t cp, std::string& out) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

std::string lowercase_utf8(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    size_t i = 0;
    while (i < s.size()) {
        const size_t before = i;
        const uint32_t cp = decode_cp(s, i);
        if (i == before + 1 && cp >= 0x80) {
            // invalid byte, keep verbatim
            out.push_back(s[before]);
        } else {
            encode_cp(lower_cp(cp), out);
        }
    }
    return out;
}

bool ascii_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

// Splits lowercased text into surface tokens; when `imaginary` is non-null,
// exact occurrences of registered imaginary names come out as single tokens.
std::vector<std::string> split_surface(const std::string& lowered,
                                       const std::unordered_map<std::string, int>* imaginary) {
    std::vector<std::string> out;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            out.push_back(word);
            word.clear();
        }
    };
    size_t i = 0;
    const size_t n = lowered.size();
    while (i < n) {
        if (imaginary != nullptr && lowered[i] == '<' &&
            lowered.compare(i, 4, Vocabulary::kImaginaryPrefix) == 0) {
            size_t j = i + 4;
            while (j < n && lowered[j] != '>' && lowered[j] != '<' && !ascii_space(lowered[j])) {
                ++j;
            }
            if (j < n && lowered[j] == '>' && j > i + 4) {
                const std::string candidate = lowered.substr(i, j - i + 1);
                if (imaginary->count(candidate) != 0) {
                    flush();
                    out.push_back(candidate);
                    i = j + 1;
                    continue;
                }
            }
        }
        const uint32_t cp = decode_cp(lowered, i);
        if (is_space_cp(cp)) {
            flush();
        } else if (is_punct_cp(cp)) {
            flush();
            std::string p;
            encode_cp(cp, p);
            out.push_back(p);
        } else {
            encode_cp(cp, word);
        }
    }
    flush();
    return out;
}

}  // namespace

std::vector<std::string> normalize_words(const std::string& text) {
    return split_surface(lowercase_utf8(text), nullptr);
}

std::string canonical_imaginary_name(const std::string& name) {
    std::string lower = name;
    for (char& c : lower) {
        if (c >= 'A' && c <= 'Z') {
            c = static_cast<char>(c + 0x20);
        }
    }
    if (lower.rfind(Vocabulary::kImaginaryPrefix, 0) != 0) {
        throw std::invalid_argument("imaginary name must begin with reserved prefix");
    }
    if (lower.size() < 6 || lower.back() != '>') {
        throw std::invalid_argument("imaginary name must end with '>' and be non-empty: " + name);
    }
    for (size_t i = 4; i + 1 < lower.size(); ++i) {
        const char c = lower[i];
        if (ascii_space(c) || c == '<' || c == '>' ||
            static_cast<unsigned char>(c) < 0x21) {
            throw std::invalid_argument("imaginary name contains whitespace or brackets: " + name);
        }
    }
    return lower;
}

Vocabulary Vocabulary::fit(const std::vector<std::string>& corpus_lines, int max_size) {
    if (corpus_lines.empty()) {
        throw std::invalid_argument("empty corpus");
    }
    if (max_size < 4) {
        throw std::invalid_argument("max_size must be at least 4");
    }
    std::unordered_map<std::string, long> counts;
    for (const auto& line : corpus_lines) {
        for (auto& tok : normalize_words(line)) {
            ++counts[tok];
        }
    }
    if (counts.empty()) {
        throw std::invalid_argument("empty corpus");
    }
    std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });

    Vocabulary v;
    v.base_ = {kBosToken, kEosToken, kUnkToken};
    const size_t keep = std::min(ranked.size(), static_cast<size_t>(max_size - 3));
    for (size_t i = 0; i < keep; ++i) {
        v.base_.push_back(ranked[i].first);
    }
    v.rebuild_index();
    return v;
}

void Vocabulary::rebuild_index() {
    index_.clear();
    for (size_t i = 0; i < base_.size(); ++i) {
        if (!index_.emplace(base_[i], static_cast<int>(i)).second) {
            throw std::runtime_error("duplicate base token: " + base_[i]);
        }
    }
    for (const auto& w : imaginary_) {
        if (!index_.emplace(w.name, w.id).second) {
            throw std::runtime_error("duplicate imaginary name: " + w.name);
        }
    }
}

int Vocabulary::id_of(const std::string& token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
    if (id < 0 || id >= total_size()) {
        throw std::out_of_range("unknown token id");
    }
    if (id < base_size()) {
        return base_[static_cast<size_t>(id)];
    }
    return imaginary_[static_cast<size_t>(id - base_size())].name;
}

const ImaginaryWord& Vocabulary::add_imaginary_word(const std::string& name,
                                                    const std::string& provenance) {
    const std::string canon = canonical_imaginary_name(name);
    if (index_.count(canon) != 0) {
        throw std::invalid_argument("imaginary word already registered: " + canon);
    }
    ImaginaryWord w;
    w.name = canon;
    w.id = total_size();
    w.provenance = provenance;
    imaginary_.push_back(std::move(w));
    index_.emplace(imaginary_.back().name, imaginary_.back().id);
    return imaginary_.back();
}

const ImaginaryWord* Vocabulary::find_imaginary(const std::string& name) const {
    const auto it = index_.find(canonical_imaginary_name(name));
    if (it == index_.end() || !is_imaginary(it->second)) {
        return nullptr;
    }
    return &imaginary_[static_cast<size_t>(it->second - base_size())];
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
    const std::string lowered = lowercase_utf8(text);
    const auto surfaces = split_surface(lowered, imaginary_.empty() ? nullptr : &index_);
    std::vector<int> ids;
    ids.reserve(surfaces.size());
    for (const auto& s : surfaces) {
        const auto it = index_.find(s);
        if (it != index_.end() && (is_imaginary(it->second) || !is_special(it->second))) {
            ids.push_back(it->second);
        } else {
            ids.push_back(kUnk);
        }
    }
    return ids;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (const int id : ids) {
        const std::string& tok = token_of(id);  // validates range
        if (is_special(id)) {
            continue;
        }
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += tok;
    }
    return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot write vocabulary file: " + path.string());
    }
    f << "XPV1 " << base_size() << ' ' << imaginary_size() << '\n';
    for (const auto& t : base_) {
        f << t << '\n';
    }
    for (const auto& w : imaginary_) {
        f << w.name << '\n';
    }
    if (!f) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open vocabulary file: " + path.string());
    }
    std::string magic;
    int nbase = 0;
    int nimag = 0;
    f >> magic >> nbase >> nimag;
    if (!f || magic != "XPV1" || nbase < 3 || nimag < 0) {
        throw std::runtime_error("bad vocabulary header in " + path.string());
    }
    f.ignore(1);  // newline after header
    Vocabulary v;
    std::string line;
    for (int i = 0; i < nbase; ++i) {
        if (!std::getline(f, line)) {
            throw std::runtime_error("truncated vocabulary file: " + path.string());
        }
        v.base_.push_back(line);
    }
    if (v.base_[0] != kBosToken || v.base_[1] != kEosToken || v.base_[2] != kUnkToken) {
        throw std::runtime_error("vocabulary file missing special tokens: " + path.string());
    }
    v.rebuild_index();
    for (int i = 0; i < nimag; ++i) {
        if (!std::getline(f, line)) {
            throw std::runtime_error("truncated vocabulary file: " + path.string());
        }
        v.add_imaginary_word(line);
    }
    return v;
}

}  // namespace xp
