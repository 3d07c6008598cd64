#pragma once

// Tokenization, vocabulary and n-gram utilities shared by the scorer and the
// captioner.

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace spass::text {

using TokenList = std::vector<std::string>;
using TokenId = std::uint32_t;

class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class OutOfRangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

// Lowercases (ASCII), splits on whitespace and strips the characters
// . , ; : ! ? " ( ) from both ends of every token. Empty tokens are dropped.
TokenList tokenize(std::string_view text);

std::string join(const TokenList& tokens, std::string_view sep = " ");

class Vocabulary {
public:
    static constexpr TokenId kStart = 0;
    static constexpr TokenId kEnd = 1;
    static constexpr TokenId kPad = 2;
    static constexpr TokenId kUnk = 3;
    static constexpr std::size_t kNumSpecials = 4;

    static constexpr std::string_view kStartToken = "<start>";
    static constexpr std::string_view kEndToken = "<end>";
    static constexpr std::string_view kPadToken = "<pad>";
    static constexpr std::string_view kUnkToken = "<unk>";

    // Specials only.
    Vocabulary();

    // `content` must not repeat tokens or contain the special strings.
    explicit Vocabulary(const TokenList& content);

    std::size_t size() const { return tokens_.size(); }

    TokenId id_of(const std::string& token) const;  // kUnk when absent
    bool contains(const std::string& token) const { return index_.count(token) != 0; }
    const std::string& token_of(TokenId id) const;

    const TokenList& tokens() const { return tokens_; }
    static bool is_special(TokenId id) { return id < kNumSpecials; }

    // JSON array of token strings in index order.
    std::string to_json() const;
    static Vocabulary from_json(std::string_view json);

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

private:
    TokenList tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

// Content tokens with frequency >= min_count, ordered by descending
// frequency then lexicographically.
Vocabulary build_vocabulary(const std::vector<TokenList>& corpus, std::size_t min_count = 1);

// A caption as a sequence of vocabulary indices (content tokens only).
struct Caption {
    std::vector<TokenId> ids;

    std::size_t length() const { return ids.size(); }
    friend bool operator==(const Caption&, const Caption&) = default;
};

inline constexpr std::size_t kDefaultMaxCaptionLength = 20;

Caption encode(const TokenList& tokens, const Vocabulary& vocab);

// Drops START/END/PAD; throws OutOfRangeError for ids >= K.
TokenList decode(const std::vector<TokenId>& ids, const Vocabulary& vocab);
inline TokenList decode(const Caption& c, const Vocabulary& vocab) { return decode(c.ids, vocab); }

// Throws ParameterError unless 1 <= C <= max_len and no PAD precedes a
// non-PAD index.
void validate_caption(const Caption& c, std::size_t max_len = kDefaultMaxCaptionLength);

using NGram = std::vector<std::string>;

struct NGramCounts {
    std::size_t order = 1;
    std::map<NGram, std::size_t> counts;

    std::size_t total() const;
    std::size_t count(const NGram& g) const;
};

NGramCounts ngrams(const TokenList& tokens, int n);

}  // namespace spass::text
