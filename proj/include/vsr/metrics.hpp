#pragma once

#include <map>
#include <string>
#include <vector>

namespace vsr {

struct EditCounts {
    std::int64_t substitutions = 0;
    std::int64_t deletions = 0;
    std::int64_t insertions = 0;
    std::int64_t reference_length = 0;

    std::int64_t errors() const { return substitutions + deletions + insertions; }
    // NaN when the reference is empty (rate undefined).
    double rate() const;
    bool rate_defined() const { return reference_length > 0; }
    EditCounts& operator+=(const EditCounts& o);
};

// Minimal unit-cost alignment. Among optimal alignments the backtrace
// prefers substitution, then insertion, then deletion.
EditCounts edit_distance_counts(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);
EditCounts edit_distance_counts(const std::vector<std::int64_t>& hyp, const std::vector<std::int64_t>& ref);

enum class ScoreUnit { Word, Char };
ScoreUnit parse_score_unit(const std::string& name);

// Words split on runs of spaces; characters keep spaces as tokens.
std::vector<std::string> tokenize(const std::string& text, ScoreUnit unit);

struct CorpusScore {
    EditCounts total;
    std::map<std::string, EditCounts> per_utterance;
    double rate() const { return total.rate(); }
};

// Pooled over utterances: sum(S + D + I) / sum(N).
CorpusScore score_corpus(const std::map<std::string, std::string>& hypotheses,
                         const std::map<std::string, std::string>& references, ScoreUnit unit);

struct RunSummary {
    std::vector<double> values;
    double mean = 0;
    double std = 0;  // sample standard deviation, 0 for a single value
    double best = 0; // minimum
};

RunSummary summarize_runs(const std::vector<double>& values);

}  // namespace vsr
