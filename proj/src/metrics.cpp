#include "vsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vsr/errors.hpp"

namespace vsr {

double EditCounts::rate() const {
    if (reference_length == 0) return std::numeric_limits<double>::quiet_NaN();
    return static_cast<double>(errors()) / static_cast<double>(reference_length);
}

EditCounts& EditCounts::operator+=(const EditCounts& o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    reference_length += o.reference_length;
    return *this;
}

namespace {

template <class T>
EditCounts align(const std::vector<T>& hyp, const std::vector<T>& ref) {
    const std::size_t n = ref.size(), m = hyp.size();
    // cost[i][j]: ref[:i] vs hyp[:j]
    std::vector<std::int64_t> cost((n + 1) * (m + 1));
    auto at = [&](std::size_t i, std::size_t j) -> std::int64_t& { return cost[i * (m + 1) + j]; };
    for (std::size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<std::int64_t>(i);
    for (std::size_t j = 0; j <= m; ++j) at(0, j) = static_cast<std::int64_t>(j);
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j) {
            const std::int64_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            at(i, j) = std::min({diag, at(i, j - 1) + 1, at(i - 1, j) + 1});
        }
    EditCounts c;
    c.reference_length = static_cast<std::int64_t>(n);
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
            if (ref[i - 1] != hyp[j - 1]) ++c.substitutions;
            --i;
            --j;
        } else if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
            ++c.insertions;
            --j;
        } else {
            ++c.deletions;
            --i;
        }
    }
    return c;
}

}  // namespace

EditCounts edit_distance_counts(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
    return align(hyp, ref);
}

EditCounts edit_distance_counts(const std::vector<std::int64_t>& hyp, const std::vector<std::int64_t>& ref) {
    return align(hyp, ref);
}

ScoreUnit parse_score_unit(const std::string& name) {
    if (name == "word") return ScoreUnit::Word;
    if (name == "char") return ScoreUnit::Char;
    throw ConfigError("unknown scoring unit '" + name + "' (word, char)");
}

std::vector<std::string> tokenize(const std::string& text, ScoreUnit unit) {
    std::vector<std::string> out;
    if (unit == ScoreUnit::Char) {
        for (char c : text) out.emplace_back(1, c);
        return out;
    }
    std::string cur;
    for (char c : text) {
        if (c == ' ') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

CorpusScore score_corpus(const std::map<std::string, std::string>& hypotheses,
                         const std::map<std::string, std::string>& references, ScoreUnit unit) {
    std::vector<std::string> missing, extra;
    for (const auto& [id, r] : references)
        if (!hypotheses.count(id)) missing.push_back(id);
    for (const auto& [id, h] : hypotheses)
        if (!references.count(id)) extra.push_back(id);
    if (!missing.empty() || !extra.empty()) {
        std::string msg = "decode/reference ids do not align;";
        if (!missing.empty()) {
            msg += " missing decodes:";
            for (const auto& id : missing) msg += " " + id;
        }
        if (!extra.empty()) {
            msg += (missing.empty() ? "" : ";") + std::string(" unknown ids:");
            for (const auto& id : extra) msg += " " + id;
        }
        throw DataError(msg);
    }
    CorpusScore s;
    for (const auto& [id, ref] : references) {
        const auto c = edit_distance_counts(tokenize(hypotheses.at(id), unit), tokenize(ref, unit));
        s.per_utterance[id] = c;
        s.total += c;
    }
    return s;
}

RunSummary summarize_runs(const std::vector<double>& values) {
    RunSummary r;
    r.values = values;
    if (values.empty()) return r;
    double sum = 0;
    for (double v : values) sum += v;
    r.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0;
        for (double v : values) ss += (v - r.mean) * (v - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    r.best = *std::min_element(values.begin(), values.end());
    return r;
}

}  // namespace vsr
