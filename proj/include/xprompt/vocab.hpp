#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace xp {

// A trainable token appended past the base vocabulary. Its surface form
// carries a reserved prefix so it can never collide with a natural word.
struct ImaginaryWord {
    std::string name;        // lowercase, "<ix:...>"
    int id = -1;             // >= base vocabulary size
    std::string provenance;  // free-form, e.g. the corpus it was trained on
};

// Base natural-language vocabulary plus the extensible imaginary inventory.
// Token ids: base ids are 0..|V|-1, imaginary ids follow contiguously.
// Immutable after construction except add_imaginary_word (single writer).
class Vocabulary {
public:
    static constexpr const char* kImaginaryPrefix = "<ix:";
    static constexpr const char* kBosToken = "<bos>";
    static constexpr const char* kEosToken = "<eos>";
    static constexpr const char* kUnkToken = "<unk>";

    Vocabulary() = default;

    // Builds the base vocabulary: three specials then the most frequent
    // normalized tokens, at most max_size total. Frequency ties break
    // lexicographically ascending. max_size must be >= 4.
    static Vocabulary fit(const std::vector<std::string>& corpus_lines, int max_size);

    int bos() const { return kBos; }
    int eos() const { return kEos; }
    int unk() const { return kUnk; }

    int base_size() const { return static_cast<int>(base_.size()); }
    int imaginary_size() const { return static_cast<int>(imaginary_.size()); }
    int total_size() const { return base_size() + imaginary_size(); }

    const std::vector<std::string>& base_tokens() const { return base_; }
    const std::vector<ImaginaryWord>& imaginary_words() const { return imaginary_; }

    // -1 when the token is not in the union vocabulary.
    int id_of(const std::string& token) const;
    const std::string& token_of(int id) const;  // throws on out-of-range id
    bool is_special(int id) const { return id == kBos || id == kEos || id == kUnk; }
    bool is_imaginary(int id) const { return id >= base_size() && id < total_size(); }

    // Appends to the imaginary inventory; existing ids never move.
    // The name must carry the reserved prefix and be unused; it is stored
    // lowercased so prompt text matches after normalization.
    const ImaginaryWord& add_imaginary_word(const std::string& name,
                                            const std::string& provenance = "");
    const ImaginaryWord* find_imaginary(const std::string& name) const;

    // Lowercase, split on whitespace, each punctuation codepoint its own
    // token; exact occurrences of registered imaginary names map to their
    // ids; unknown words map to unk. No bos/eos added. Total function.
    std::vector<int> tokenize(const std::string& text) const;

    // Space-joined surface forms; specials render as empty and are elided.
    std::string detokenize(const std::vector<int>& ids) const;

    // "XPV1 <|V|> <|Vx|>" header then one token per line; byte-exact round trip.
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

private:
    static constexpr int kBos = 0, kEos = 1, kUnk = 2;

    std::vector<std::string> base_;
    std::vector<ImaginaryWord> imaginary_;
    std::unordered_map<std::string, int> index_;  // surface -> id over the union

    void rebuild_index();
};

// The normalization rule behind tokenize/fit, without vocabulary lookup:
// lowercased surface tokens in order.
std::vector<std::string> normalize_words(const std::string& text);

// Validates an imaginary name (reserved prefix, "<ix:...>" shape, no
// whitespace) and returns the lowercased form. Throws on malformed names.
std::string canonical_imaginary_name(const std::string& name);

}  // namespace xp
