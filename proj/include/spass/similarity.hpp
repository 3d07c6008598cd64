#pragma once

// Caption-to-search-task similarity: a BLEU variant that clips candidate
// n-gram counts against the union of the uploaded tasks and applies the
// brevity penalty against the longest task.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "spass/text.hpp"

namespace spass::similarity {

using text::TokenList;

struct SearchTask {
    std::int64_t id = 0;
    std::string text;
    TokenList tokens;
};

class SearchTaskSet {
public:
    // Tasks get ids 0..n-1 in input order. Throws ParameterError when empty
    // or when any task tokenizes to nothing.
    static SearchTaskSet from_texts(const std::vector<std::string>& texts);
    explicit SearchTaskSet(std::vector<SearchTask> tasks);

    const std::vector<SearchTask>& tasks() const { return tasks_; }
    std::size_t size() const { return tasks_.size(); }

    // Longest task; ties go to the lowest id.
    const SearchTask& longest() const;

private:
    std::vector<SearchTask> tasks_;
};

struct ScoreConfig {
    int max_order = 4;
    std::vector<double> weights{0.8, 0.15, 0.045, 0.005};
    // Adds epsilon to every clipped count so that candidates with a zero
    // precision still rank among themselves. Off by default.
    bool smoothing = false;
    double smoothing_epsilon = 1e-9;

    static ScoreConfig search_default() { return {}; }
    // BLEU-n with uniform weights 1/n.
    static ScoreConfig uniform(int n);

    void validate() const;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct SimilarityScore {
    double value = 0.0;
    double log_value = kNegInf;
    std::vector<double> precisions;
    double brevity_penalty = 1.0;
};

// Per-reference n-gram tables, reused across many candidates.
class ReferenceIndex {
public:
    ReferenceIndex(const SearchTaskSet& tasks, int max_order);

    double modified_precision(const TokenList& candidate, int n, double epsilon = 0.0) const;
    std::size_t longest_length() const { return longest_length_; }
    int max_order() const { return static_cast<int>(max_counts_.size()); }

private:
    // For each order, the maximum count of each n-gram over all references.
    // A missing key means no reference contains the n-gram.
    std::vector<std::map<text::NGram, std::size_t>> max_counts_;
    std::size_t longest_length_ = 0;
};

double modified_precision(const TokenList& candidate, const SearchTaskSet& tasks, int n);

double brevity_penalty(const TokenList& candidate, const TokenList& reference);
double brevity_penalty(std::size_t candidate_length, std::size_t reference_length);

SimilarityScore score(const TokenList& candidate, const SearchTaskSet& tasks,
                      const ScoreConfig& cfg = ScoreConfig{});
SimilarityScore score(const TokenList& candidate, const ReferenceIndex& refs, const ScoreConfig& cfg);

struct RankedItem {
    std::string id;
    SimilarityScore score;
};

struct CandidateCaption {
    std::string id;
    TokenList tokens;
};

// Descending value, ties by ascending id. Empty candidates score 0.
std::vector<RankedItem> rank(const std::vector<CandidateCaption>& captions, const SearchTaskSet& tasks,
                             const ScoreConfig& cfg = ScoreConfig{});

}  // namespace spass::similarity
