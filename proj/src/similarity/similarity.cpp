#include "spass/similarity.hpp"

#include <algorithm>
#include <cmath>

namespace spass::similarity {

using text::ParameterError;

SearchTaskSet SearchTaskSet::from_texts(const std::vector<std::string>& texts) {
    std::vector<SearchTask> tasks;
    tasks.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        tasks.push_back({static_cast<std::int64_t>(i), texts[i], text::tokenize(texts[i])});
    }
    return SearchTaskSet(std::move(tasks));
}

SearchTaskSet::SearchTaskSet(std::vector<SearchTask> tasks) : tasks_(std::move(tasks)) {
    if (tasks_.empty()) throw ParameterError("search task set is empty");
    for (const auto& t : tasks_) {
        if (t.tokens.empty()) throw ParameterError("search task " + std::to_string(t.id) + " is empty");
    }
}

const SearchTask& SearchTaskSet::longest() const {
    const SearchTask* best = &tasks_.front();
    for (const auto& t : tasks_) {
        if (t.tokens.size() > best->tokens.size() ||
            (t.tokens.size() == best->tokens.size() && t.id < best->id)) {
            best = &t;
        }
    }
    return *best;
}

ScoreConfig ScoreConfig::uniform(int n) {
    ScoreConfig cfg;
    cfg.max_order = n;
    cfg.weights.assign(static_cast<std::size_t>(n), 1.0 / n);
    return cfg;
}

void ScoreConfig::validate() const {
    if (max_order < 1) throw ParameterError("max_order must be >= 1");
    if (weights.size() != static_cast<std::size_t>(max_order)) {
        throw ParameterError("expected " + std::to_string(max_order) + " weights, got " +
                             std::to_string(weights.size()));
    }
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ParameterError("weights must be finite and non-negative");
    }
    if (smoothing && !(smoothing_epsilon > 0.0)) throw ParameterError("smoothing epsilon must be positive");
}

ReferenceIndex::ReferenceIndex(const SearchTaskSet& tasks, int max_order) {
    if (max_order < 1) throw ParameterError("max_order must be >= 1");
    max_counts_.resize(static_cast<std::size_t>(max_order));
    for (const auto& t : tasks.tasks()) {
        for (int n = 1; n <= max_order; ++n) {
            auto& table = max_counts_[static_cast<std::size_t>(n - 1)];
            for (const auto& [gram, cnt] : text::ngrams(t.tokens, n).counts) {
                auto& slot = table[gram];
                slot = std::max(slot, cnt);
            }
        }
    }
    longest_length_ = tasks.longest().tokens.size();
}

double ReferenceIndex::modified_precision(const TokenList& candidate, int n, double epsilon) const {
    if (n < 1 || n > max_order()) throw ParameterError("n-gram order outside the indexed range");
    const auto cand = text::ngrams(candidate, n);
    const std::size_t denom = cand.total();
    if (denom == 0) return 0.0;
    const auto& table = max_counts_[static_cast<std::size_t>(n - 1)];
    std::size_t clipped = 0;
    for (const auto& [gram, cnt] : cand.counts) {
        auto it = table.find(gram);
        if (it == table.end()) continue;  // indicator is 0
        clipped += std::min(cnt, it->second);
    }
    return (static_cast<double>(clipped) + epsilon) / static_cast<double>(denom);
}

double modified_precision(const TokenList& candidate, const SearchTaskSet& tasks, int n) {
    if (n < 1) throw ParameterError("n-gram order must be >= 1");
    return ReferenceIndex(tasks, n).modified_precision(candidate, n);
}

double brevity_penalty(std::size_t candidate_length, std::size_t reference_length) {
    if (candidate_length == 0) throw ParameterError("brevity penalty: empty candidate");
    if (reference_length == 0) throw ParameterError("brevity penalty: empty reference");
    if (candidate_length > reference_length) return 1.0;
    return std::exp(1.0 - static_cast<double>(reference_length) / static_cast<double>(candidate_length));
}

double brevity_penalty(const TokenList& candidate, const TokenList& reference) {
    return brevity_penalty(candidate.size(), reference.size());
}

SimilarityScore score(const TokenList& candidate, const ReferenceIndex& refs, const ScoreConfig& cfg) {
    cfg.validate();
    if (candidate.empty()) throw ParameterError("score: empty caption");
    if (refs.max_order() < cfg.max_order) throw ParameterError("reference index built for a lower order");

    SimilarityScore s;
    const double eps = cfg.smoothing ? cfg.smoothing_epsilon : 0.0;
    bool any_zero = false;
    double weighted_log = 0.0;
    s.precisions.reserve(static_cast<std::size_t>(cfg.max_order));
    for (int n = 1; n <= cfg.max_order; ++n) {
        const double p = refs.modified_precision(candidate, n, eps);
        s.precisions.push_back(p);
        if (p <= 0.0) {
            any_zero = true;
        } else {
            weighted_log += cfg.weights[static_cast<std::size_t>(n - 1)] * std::log(p);
        }
    }

    const auto lc = static_cast<double>(candidate.size());
    const auto lr = static_cast<double>(refs.longest_length());
    const double log_eta = std::min(1.0 - lr / lc, 0.0);
    s.brevity_penalty = brevity_penalty(candidate.size(), refs.longest_length());

    if (any_zero) {
        s.value = 0.0;
        s.log_value = kNegInf;
        return s;
    }
    s.log_value = log_eta + weighted_log;
    s.value = s.brevity_penalty * std::exp(weighted_log);
    return s;
}

SimilarityScore score(const TokenList& candidate, const SearchTaskSet& tasks, const ScoreConfig& cfg) {
    return score(candidate, ReferenceIndex(tasks, cfg.max_order), cfg);
}

std::vector<RankedItem> rank(const std::vector<CandidateCaption>& captions, const SearchTaskSet& tasks,
                             const ScoreConfig& cfg) {
    cfg.validate();
    const ReferenceIndex refs(tasks, cfg.max_order);
    std::vector<RankedItem> out;
    out.reserve(captions.size());
    for (const auto& c : captions) {
        RankedItem item{c.id, {}};
        if (c.tokens.empty()) {
            item.score.precisions.assign(static_cast<std::size_t>(cfg.max_order), 0.0);
            item.score.brevity_penalty = 0.0;
        } else {
            item.score = score(c.tokens, refs, cfg);
        }
        out.push_back(std::move(item));
    }
    std::stable_sort(out.begin(), out.end(), [](const RankedItem& a, const RankedItem& b) {
        if (a.score.value != b.score.value) return a.score.value > b.score.value;
        return a.id < b.id;
    });
    return out;
}

}  // namespace spass::similarity
