#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "tiny_models.hpp"
#include "vsr/errors.hpp"
#include "vsr/losses.hpp"

using namespace vsr;
using namespace vsr::testing;

TEST_CASE("fusion arithmetic and presets") {
    CHECK(fuse_scores(0.1, 0.6, -1, -2, -0.5) == doctest::Approx(-2.2).epsilon(1e-15));
    auto en = beam_preset("en");
    CHECK(en.beam_size == 40);
    CHECK(en.lm_weight == 0.6);
    CHECK(en.ctc_weight == 0.1);
    CHECK(beam_preset("zh").beam_size == 20);
    CHECK(beam_preset("zh").lm_weight == 0.3);
    CHECK(beam_preset("pt").beam_size == 35);
    CHECK(beam_preset("pt").lm_weight == 0.3);
    CHECK(beam_preset("es").beam_size == 35);
    CHECK(beam_preset("es").lm_weight == 0.4);
    CHECK(beam_preset("it").beam_size == 25);
    CHECK(beam_preset("it").lm_weight == 0.5);
    CHECK(beam_preset("fr").beam_size == 40);
    CHECK(beam_preset("fr").lm_weight == 0.3);
    try {
        beam_preset("de");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("en, zh, es, it, fr, pt") != std::string::npos);
    }
    DecodeConfig bad;
    bad.beam_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("ctc prefix scores") {
    std::vector<Scalar> lp{std::log(0.4), std::log(0.6)};
    CtcPrefixScorer one(lp, 1, 2);
    auto a = one.extend(one.initial(), 1);
    CHECK(one.final_score(a) == doctest::Approx(std::log(0.6)).epsilon(1e-14));

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::int64_t T = 2 + trial % 4, C = 3 + trial % 2;
        auto probs = random_log_probs(T, C, rng);
        CtcPrefixScorer sc(probs, T, C);
        // Probability mass over all labellings of length <= T sums to one.
        double mass = std::exp(sc.final_score(sc.initial()));
        std::vector<CtcPrefixScorer::State> frontier{sc.initial()};
        for (std::int64_t len = 1; len <= T; ++len) {
            std::vector<CtcPrefixScorer::State> next;
            for (const auto& s : frontier)
                for (std::int64_t c = 1; c < C; ++c) {
                    auto e = sc.extend(s, c);
                    // Incremental equals recomputation from scratch.
                    auto scratch = sc.initial();
                    for (auto k : e.prefix) scratch = sc.extend(scratch, k);
                    CHECK(((std::isinf(scratch.psi) && std::isinf(e.psi)) || std::abs(scratch.psi - e.psi) < 1e-10));
                    const double full = sc.final_score(e);
                    const double fwd = ctc_log_likelihood(probs, T, C, e.prefix);
                    if (std::isinf(fwd)) CHECK(std::isinf(full));
                    else CHECK(std::abs(full - fwd) < 1e-10);
                    if (!std::isinf(full)) mass += std::exp(full);
                    next.push_back(std::move(e));
                }
            frontier = std::move(next);
        }
        CHECK(std::abs(mass - 1) < 1e-9);
        // psi(empty) is 1, psi(prefix) sums its completions.
        auto e = sc.extend(sc.initial(), 1);
        double completions = std::exp(sc.final_score(e));
        std::vector<CtcPrefixScorer::State> tails{e};
        for (std::int64_t len = 2; len <= T; ++len) {
            std::vector<CtcPrefixScorer::State> nxt;
            for (auto& s : tails)
                for (std::int64_t c = 1; c < C; ++c) {
                    auto x = sc.extend(s, c);
                    double f = sc.final_score(x);
                    if (!std::isinf(f)) completions += std::exp(f);
                    nxt.push_back(std::move(x));
                }
            tails = std::move(nxt);
        }
        CHECK(std::abs(std::log(completions) - e.psi) < 1e-9);
    }
    CHECK_THROWS_AS(CtcPrefixScorer(lp, 1, 2).extend(CtcPrefixScorer::State{}, 1), ContractError);
}

TEST_CASE("beam search equals exhaustive search on tiny models") {
    for (std::uint64_t seed = 1; seed <= 15; ++seed) {
        TinyDecodeProblem p(seed, 3, 5);
        auto in = p.inputs();
        DecodeConfig cfg;
        cfg.beam_size = 81;
        cfg.lm_weight = 0.6;
        cfg.max_len = 4;
        auto beam = beam_search(in, cfg);
        auto full = exhaustive_search(in, cfg);
        REQUIRE(!beam.ranked.empty());
        CHECK(beam.ranked[0].labels == full.ranked[0].labels);
        CHECK(std::abs(beam.ranked[0].combined - full.ranked[0].combined) < 1e-9);
        const auto& h = beam.ranked[0];
        CHECK(std::abs(h.combined - (0.1 * h.ctc + 0.9 * h.att + 0.6 * h.lm)) < 1e-12);
    }
}

TEST_CASE("degenerate weights give greedy attention decoding") {
    TinyDecodeProblem p(99, 3, 6);
    auto in = p.inputs();
    DecodeConfig cfg;
    cfg.beam_size = 1;
    cfg.ctc_weight = 0;
    cfg.lm_weight = 0;
    cfg.max_len = 5;
    auto beam = beam_search(in, cfg);
    // greedy by hand
    std::vector<std::int64_t> tokens{1}, labels;
    for (int i = 0; i < 5; ++i) {
        auto row = p.att_scorer->next({tokens})[0];
        std::int64_t best = 2;
        for (std::int64_t k = 3; k < 6; ++k)
            if (row[k] > row[best]) best = k;
        if (best == 2) break;
        tokens.push_back(best);
        labels.push_back(best - 3);
    }
    CHECK(beam.ranked[0].labels == labels);
}

TEST_CASE("beam search edge cases and determinism") {
    TinyDecodeProblem p(5, 3, 4);
    auto in = p.inputs();
    in.frames = 0;
    auto r = beam_search(in, beam_preset("en"));
    CHECK(r.ranked.at(0).labels.empty());
    in = p.inputs();
    DecodeConfig cfg = beam_preset("en");
    cfg.beam_size = 3;
    auto a = beam_search(in, cfg), b = beam_search(in, cfg);
    REQUIRE(a.ranked.size() == b.ranked.size());
    for (std::size_t i = 0; i < a.ranked.size(); ++i) {
        CHECK(a.ranked[i].labels == b.ranked[i].labels);
        CHECK(a.ranked[i].combined == b.ranked[i].combined);
    }
}

TEST_CASE("larger beams do not lower the best score on random instances") {
    int violations = 0, total = 0;
    for (std::uint64_t seed = 200; seed < 215; ++seed) {
        TinyDecodeProblem p(seed, 4, 6);
        auto in = p.inputs();
        Scalar prev = -INFINITY;
        for (std::int64_t beam : {1, 2, 4, 8, 16}) {
            DecodeConfig cfg;
            cfg.beam_size = beam;
            cfg.max_len = 4;
            auto best = beam_search(in, cfg).ranked[0].combined;
            ++total;
            if (best < prev - 1e-12) ++violations;
            prev = std::max(prev, best);
        }
    }
    CHECK(violations == 0);
}
