#include "vsr/beam_search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vsr/errors.hpp"
#include "vsr/losses.hpp"

namespace vsr {

namespace {

constexpr Scalar kNegInf = -std::numeric_limits<Scalar>::infinity();

inline Scalar log_add(Scalar a, Scalar b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const Scalar m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

struct PresetRow {
    const char* language;
    std::int64_t beam;
    Scalar beta;
};

constexpr PresetRow kPresets[] = {
    {"en", 40, 0.6}, {"zh", 20, 0.3}, {"es", 35, 0.4}, {"it", 25, 0.5}, {"fr", 40, 0.3}, {"pt", 35, 0.3},
};

std::vector<std::vector<Scalar>> last_rows(const Tensor& out) {
    const auto B = out.dim(0), L = out.dim(1), V = out.dim(2);
    auto d = out.data();
    std::vector<std::vector<Scalar>> rows(static_cast<std::size_t>(B));
    for (std::int64_t b = 0; b < B; ++b) {
        auto first = d.begin() + (b * L + L - 1) * V;
        rows[b].assign(first, first + V);
    }
    return rows;
}

std::vector<std::vector<Scalar>> all_rows(const Tensor& out) {
    const auto L = out.dim(1), V = out.dim(2);
    auto d = out.data();
    std::vector<std::vector<Scalar>> rows(static_cast<std::size_t>(L));
    for (std::int64_t l = 0; l < L; ++l) rows[l].assign(d.begin() + l * V, d.begin() + (l + 1) * V);
    return rows;
}

}  // namespace

void DecodeConfig::validate() const {
    if (beam_size < 1) throw ConfigError("beam_size must be >= 1, got " + std::to_string(beam_size));
    if (!(ctc_weight >= 0 && ctc_weight <= 1)) throw ConfigError("ctc_weight (lambda) must be in [0, 1]");
    if (!(lm_weight >= 0)) throw ConfigError("lm_weight (beta) must be >= 0");
    if (max_len <= 0 && !(max_len_ratio > 0)) throw ConfigError("max_len_ratio must be > 0");
}

std::vector<std::string> supported_languages() {
    std::vector<std::string> out;
    for (const auto& p : kPresets) out.emplace_back(p.language);
    return out;
}

DecodeConfig beam_preset(const std::string& language) {
    for (const auto& p : kPresets) {
        if (language == p.language) {
            DecodeConfig c;
            c.beam_size = p.beam;
            c.lm_weight = p.beta;
            c.ctc_weight = 0.1;
            c.language = language;
            return c;
        }
    }
    std::string list;
    for (const auto& l : supported_languages()) list += (list.empty() ? "" : ", ") + l;
    throw ConfigError("unknown language '" + language + "'; supported: " + list);
}

Scalar fuse_scores(Scalar lambda, Scalar beta, Scalar ctc, Scalar att, Scalar lm) {
    Scalar s = 0;
    if (lambda != 0) s += lambda * ctc;
    if (lambda != 1) s += (1 - lambda) * att;
    if (beta != 0) s += beta * lm;
    return s;
}

// ---- CTC prefix scoring ----

CtcPrefixScorer::CtcPrefixScorer(std::span<const Scalar> logprobs, std::int64_t frames, std::int64_t classes)
    : lp_(logprobs), T_(frames), C_(classes) {
    if (static_cast<std::int64_t>(logprobs.size()) < frames * classes) throw ShapeError("CTC prefix scorer: short logprobs");
}

CtcPrefixScorer::State CtcPrefixScorer::initial() const {
    State s;
    s.r_n.assign(static_cast<std::size_t>(T_), kNegInf);
    s.r_b.assign(static_cast<std::size_t>(T_), kNegInf);
    Scalar acc = 0;
    for (std::int64_t t = 0; t < T_; ++t) {
        acc += lp_[t * C_];
        s.r_b[t] = acc;
    }
    s.psi = 0;
    return s;
}

CtcPrefixScorer::State CtcPrefixScorer::extend(const State& parent, std::int64_t cls) const {
    if (cls <= 0 || cls >= C_) throw ContractError("CTC prefix extension with class " + std::to_string(cls));
    if (static_cast<std::int64_t>(parent.r_n.size()) != T_ || static_cast<std::int64_t>(parent.r_b.size()) != T_) {
        throw ContractError("CTC prefix cache does not match the utterance length");
    }
    State s;
    s.prefix = parent.prefix;
    s.prefix.push_back(cls);
    s.r_n.assign(static_cast<std::size_t>(T_), kNegInf);
    s.r_b.assign(static_cast<std::size_t>(T_), kNegInf);
    if (T_ == 0) {
        s.psi = kNegInf;
        return s;
    }
    const bool repeat = !parent.prefix.empty() && parent.prefix.back() == cls;
    s.r_n[0] = parent.prefix.empty() ? lp_[cls] : kNegInf;
    Scalar psi = s.r_n[0];
    for (std::int64_t t = 1; t < T_; ++t) {
        const Scalar phi = repeat ? parent.r_b[t - 1] : log_add(parent.r_b[t - 1], parent.r_n[t - 1]);
        const Scalar emit = lp_[t * C_ + cls];
        const Scalar n = log_add(s.r_n[t - 1], phi);
        s.r_n[t] = n == kNegInf ? kNegInf : n + emit;
        const Scalar b = log_add(s.r_b[t - 1], s.r_n[t - 1]);
        s.r_b[t] = b == kNegInf ? kNegInf : b + lp_[t * C_];
        if (phi != kNegInf) psi = log_add(psi, phi + emit);
    }
    s.psi = psi;
    return s;
}

Scalar CtcPrefixScorer::final_score(const State& state) const {
    if (T_ == 0) return state.prefix.empty() ? 0 : kNegInf;
    return log_add(state.r_n[T_ - 1], state.r_b[T_ - 1]);
}

// ---- model adapters ----

std::vector<std::vector<Scalar>> DecoderScorer::next(const TokenBatch& prefixes) {
    NoGradGuard ng;
    return last_rows(decoder_.forward(memory_, {length_}, prefixes));
}

std::vector<std::vector<Scalar>> DecoderScorer::teacher_forced(const std::vector<std::int64_t>& tokens) {
    NoGradGuard ng;
    return all_rows(decoder_.forward(memory_, {length_}, {tokens}));
}

std::vector<std::vector<Scalar>> LmScorer::next(const TokenBatch& prefixes) {
    NoGradGuard ng;
    return last_rows(lm_.forward(prefixes));
}

std::vector<std::vector<Scalar>> LmScorer::teacher_forced(const std::vector<std::int64_t>& tokens) {
    NoGradGuard ng;
    return all_rows(lm_.forward({tokens}));
}

// ---- search ----

bool ranks_before(const ScoredHypothesis& a, const ScoredHypothesis& b) {
    if (a.combined != b.combined) return a.combined > b.combined;
    return a.labels < b.labels;
}

std::int64_t max_output_length(const DecodeConfig& cfg, std::int64_t frames) {
    if (cfg.max_len > 0) return cfg.max_len;
    return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(cfg.max_len_ratio * static_cast<Scalar>(frames))));
}

namespace {

void check_inputs(const BeamInputs& in) {
    if (!in.attention) throw ContractError("beam search needs an attention scorer");
    if (in.ctc_class.size() != in.token.size()) throw ContractError("beam search label maps differ in size");
}

struct Active {
    ScoredHypothesis hyp;
    CtcPrefixScorer::State ctc;
};

std::vector<std::int64_t> with_sos(const BeamInputs& in, const std::vector<std::int64_t>& labels) {
    std::vector<std::int64_t> t{in.sos};
    for (auto k : labels) t.push_back(in.token[k]);
    return t;
}

}  // namespace

BeamResult beam_search(const BeamInputs& in, const DecodeConfig& cfg) {
    cfg.validate();
    check_inputs(in);
    BeamResult result;
    if (in.frames <= 0) {
        result.ranked.push_back({});
        return result;
    }
    const CtcPrefixScorer ctc(in.ctc_logprobs, in.frames, in.ctc_classes);
    const Scalar lambda = cfg.ctc_weight, beta = in.lm ? cfg.lm_weight : Scalar(0);
    const std::int64_t max_len = max_output_length(cfg, in.frames);
    const auto K = static_cast<std::int64_t>(in.token.size());

    std::vector<Active> active(1);
    active[0].ctc = ctc.initial();
    std::vector<ScoredHypothesis> finished;

    for (std::int64_t step = 0; step <= max_len && !active.empty(); ++step) {
        result.steps = step + 1;
        TokenBatch prefixes;
        for (const auto& a : active) prefixes.push_back(with_sos(in, a.hyp.labels));
        const auto att = in.attention->next(prefixes);
        std::vector<std::vector<Scalar>> lm;
        if (beta != 0) lm = in.lm->next(prefixes);

        std::vector<Active> candidates;
        for (std::size_t h = 0; h < active.size(); ++h) {
            const auto& parent = active[h];
            ScoredHypothesis done = parent.hyp;
            done.ctc = lambda != 0 ? ctc.final_score(parent.ctc) : Scalar(0);
            done.att += att[h][in.eos];
            if (beta != 0) done.lm += lm[h][in.eos];
            done.combined = fuse_scores(lambda, beta, done.ctc, done.att, done.lm);
            finished.push_back(std::move(done));
            if (step == max_len) continue;
            for (std::int64_t k = 0; k < K; ++k) {
                Active c;
                c.hyp.labels = parent.hyp.labels;
                c.hyp.labels.push_back(k);
                c.ctc = lambda != 0 ? ctc.extend(parent.ctc, in.ctc_class[k]) : CtcPrefixScorer::State{};
                c.hyp.ctc = lambda != 0 ? c.ctc.psi : Scalar(0);
                c.hyp.att = parent.hyp.att + att[h][in.token[k]];
                c.hyp.lm = beta != 0 ? parent.hyp.lm + lm[h][in.token[k]] : Scalar(0);
                c.hyp.combined = fuse_scores(lambda, beta, c.hyp.ctc, c.hyp.att, c.hyp.lm);
                candidates.push_back(std::move(c));
            }
        }
        std::sort(candidates.begin(), candidates.end(),
                  [](const Active& a, const Active& b) { return ranks_before(a.hyp, b.hyp); });
        if (static_cast<std::int64_t>(candidates.size()) > cfg.beam_size) candidates.resize(static_cast<std::size_t>(cfg.beam_size));
        // Drop hypotheses that can no longer reach any labelling.
        while (!candidates.empty() && candidates.back().hyp.combined == kNegInf) candidates.pop_back();
        active = std::move(candidates);

        // Scores only decrease along a hypothesis, so once the best active one
        // is behind the best finished one nothing can overtake it.
        const auto best = std::min_element(finished.begin(), finished.end(), ranks_before);
        if (!active.empty() && best != finished.end() && active.front().hyp.combined < best->combined) {
            result.stopped_early = true;
            break;
        }
    }
    std::sort(finished.begin(), finished.end(), ranks_before);
    result.ranked = std::move(finished);
    return result;
}

BeamResult exhaustive_search(const BeamInputs& in, const DecodeConfig& cfg) {
    check_inputs(in);
    BeamResult result;
    if (in.frames <= 0) {
        result.ranked.push_back({});
        return result;
    }
    const Scalar lambda = cfg.ctc_weight, beta = in.lm ? cfg.lm_weight : Scalar(0);
    const std::int64_t max_len = max_output_length(cfg, in.frames);
    const auto K = static_cast<std::int64_t>(in.token.size());
    std::vector<std::int64_t> labels;
    auto score = [&] {
        ScoredHypothesis h;
        h.labels = labels;
        std::vector<std::int64_t> target;
        for (auto k : labels) target.push_back(in.ctc_class[k]);
        h.ctc = ctc_log_likelihood(in.ctc_logprobs, in.frames, in.ctc_classes, target);
        auto tokens = with_sos(in, labels);
        std::vector<std::int64_t> next(tokens.begin() + 1, tokens.end());
        next.push_back(in.eos);
        const auto att = in.attention->teacher_forced(tokens);
        for (std::size_t i = 0; i < next.size(); ++i) h.att += att[i][next[i]];
        if (beta != 0) {
            const auto lm = in.lm->teacher_forced(tokens);
            for (std::size_t i = 0; i < next.size(); ++i) h.lm += lm[i][next[i]];
        }
        h.combined = fuse_scores(lambda, beta, h.ctc, h.att, h.lm);
        result.ranked.push_back(std::move(h));
    };
    // Depth-first over all sequences of length 0..max_len.
    score();
    while (true) {
        if (static_cast<std::int64_t>(labels.size()) < max_len) {
            labels.push_back(0);
        } else {
            while (!labels.empty() && labels.back() == K - 1) labels.pop_back();
            if (labels.empty()) break;
            ++labels.back();
        }
        score();
    }
    std::sort(result.ranked.begin(), result.ranked.end(), ranks_before);
    return result;
}

}  // namespace vsr
