#include "spass/text.hpp"

#include <algorithm>
#include "json.hpp"

namespace spass::text {

namespace {

bool is_edge_punct(char ch) {
    switch (ch) {
        case '.': case ',': case ';': case ':': case '!':
        case '?': case '"': case '(': case ')':
            return true;
        default:
            return false;
    }
}

bool is_space(char ch) {
    return ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\f' || ch == '\v';
}

}  // namespace

TokenList tokenize(std::string_view text) {
    TokenList out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        std::size_t b = i, e = j;
        while (b < e && is_edge_punct(text[b])) ++b;
        while (e > b && is_edge_punct(text[e - 1])) --e;
        if (e > b) {
            std::string tok(text.substr(b, e - b));
            for (char& ch : tok) {
                if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
            }
            out.push_back(std::move(tok));
        }
        i = j;
    }
    return out;
}

std::string join(const TokenList& tokens, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += sep;
        out += tokens[i];
    }
    return out;
}

Vocabulary::Vocabulary() : Vocabulary(TokenList{}) {}

Vocabulary::Vocabulary(const TokenList& content) {
    tokens_ = {std::string(kStartToken), std::string(kEndToken), std::string(kPadToken),
               std::string(kUnkToken)};
    tokens_.insert(tokens_.end(), content.begin(), content.end());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (tokens_[i].empty()) throw ParameterError("vocabulary: empty token");
        auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
        if (!inserted) throw ParameterError("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
}

TokenId Vocabulary::id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(TokenId id) const {
    if (id >= tokens_.size()) {
        throw OutOfRangeError("token index " + std::to_string(id) + " >= K=" + std::to_string(tokens_.size()));
    }
    return tokens_[id];
}

std::string Vocabulary::to_json() const {
    return nlohmann::json(tokens_).dump();
}

Vocabulary Vocabulary::from_json(std::string_view json) {
    auto j = nlohmann::json::parse(json);
    if (!j.is_array()) throw ParameterError("vocabulary JSON must be an array");
    auto all = j.get<TokenList>();
    if (all.size() < kNumSpecials || all[kStart] != kStartToken || all[kEnd] != kEndToken ||
        all[kPad] != kPadToken || all[kUnk] != kUnkToken) {
        throw ParameterError("vocabulary JSON must begin with the four special tokens");
    }
    return Vocabulary(TokenList(all.begin() + kNumSpecials, all.end()));
}

Vocabulary build_vocabulary(const std::vector<TokenList>& corpus, std::size_t min_count) {
    if (min_count < 1) throw ParameterError("min_count must be >= 1");
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto& sentence : corpus) {
        for (const auto& tok : sentence) ++freq[tok];
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [tok, n] : freq) {
        if (n < min_count) continue;
        if (tok == Vocabulary::kStartToken || tok == Vocabulary::kEndToken || tok == Vocabulary::kPadToken ||
            tok == Vocabulary::kUnkToken) {
            continue;
        }
        kept.emplace_back(tok, n);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    TokenList content;
    content.reserve(kept.size());
    for (auto& [tok, n] : kept) content.push_back(tok);
    return Vocabulary(content);
}

Caption encode(const TokenList& tokens, const Vocabulary& vocab) {
    Caption c;
    c.ids.reserve(tokens.size());
    for (const auto& t : tokens) c.ids.push_back(vocab.id_of(t));
    return c;
}

TokenList decode(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
    TokenList out;
    for (TokenId id : ids) {
        const std::string& tok = vocab.token_of(id);
        if (id == Vocabulary::kStart || id == Vocabulary::kEnd || id == Vocabulary::kPad) continue;
        out.push_back(tok);
    }
    return out;
}

void validate_caption(const Caption& c, std::size_t max_len) {
    std::size_t content = 0;
    bool seen_pad = false;
    for (TokenId id : c.ids) {
        if (id == Vocabulary::kPad) {
            seen_pad = true;
            continue;
        }
        if (seen_pad) throw ParameterError("caption: PAD before content token");
        if (id != Vocabulary::kStart && id != Vocabulary::kEnd) ++content;
    }
    if (content < 1 || content > max_len) {
        throw ParameterError("caption length " + std::to_string(content) + " outside [1, " +
                             std::to_string(max_len) + "]");
    }
}

std::size_t NGramCounts::total() const {
    std::size_t s = 0;
    for (const auto& [g, n] : counts) s += n;
    return s;
}

std::size_t NGramCounts::count(const NGram& g) const {
    auto it = counts.find(g);
    return it == counts.end() ? 0 : it->second;
}

NGramCounts ngrams(const TokenList& tokens, int n) {
    if (n <= 0) throw ParameterError("n-gram order must be >= 1");
    NGramCounts out;
    out.order = static_cast<std::size_t>(n);
    const std::size_t order = out.order;
    if (tokens.size() < order) return out;
    for (std::size_t i = 0; i + order <= tokens.size(); ++i) {
        ++out.counts[NGram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                           tokens.begin() + static_cast<std::ptrdiff_t>(i + order))];
    }
    return out;
}

}  // namespace spass::text
