// Acceptance suite: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "gradcheck.hpp"
#include "op_cases.hpp"
#include "oracles.hpp"
#include "tiny_models.hpp"
#include "vsr/augment.hpp"
#include "vsr/errors.hpp"
#include "vsr/metrics.hpp"
#include "vsr/pipeline.hpp"

using namespace vsr;
using namespace vsr::testing;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Context {
    fs::path work;
    bool verbose = false;
    void log(const std::string& s) const {
        if (verbose) std::cerr << "  | " << s << std::endl;
    }
};

std::string fmt(double v, int digits = 2) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::string sci(double v) {
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << v;
    return os.str();
}

// ---- corpora ----

CorpusOptions injective_corpus() {
    CorpusOptions o;
    o.seed = 11;
    o.size = 500;
    return o;
}

CorpusOptions ambiguous_corpus() {
    CorpusOptions o;
    o.seed = 7;
    o.size = 500;
    o.merge_groups = "bpm,fv,dt,gk";
    o.visual_sigma = 0.5;
    o.audio_sigma = 0.1;
    return o;
}

Dataset corpus(const Context& ctx, const std::string& name, const CorpusOptions& o) {
    const fs::path dir = ctx.work / "corpora" / name;
    bool fresh = !fs::exists(dir / "corpus.json");
    if (!fresh) {
        const CorpusOptions have = load_corpus_options(dir / "corpus.json");
        fresh = have.seed != o.seed || have.size != o.size || have.merge_groups != o.merge_groups ||
                have.visual_sigma != o.visual_sigma || have.audio_sigma != o.audio_sigma;
    }
    if (fresh) {
        fs::remove_all(dir);
        generate_corpus(o, dir);
    }
    return Dataset::load(dir);
}

ExperimentConfig desk(const Context& ctx) {
    ExperimentConfig c = make_preset("desk");
    c.train.log_every = ctx.verbose ? 1 : 0;
    return c;
}

LogFn logger(const Context& ctx) {
    if (!ctx.verbose) return {};
    return [&ctx](const std::string& s) { ctx.log(s); };
}

// ---- 1 ----

Outcome ctc_oracle(const Context&) {
    std::mt19937_64 rng(2024);
    double worst = 0;
    int infeasible = 0, mismatched_feasibility = 0;
    for (int n = 0; n < 500; ++n) {
        const std::int64_t V = 1 + static_cast<std::int64_t>(rng() % 3), C = V + 1;
        const std::int64_t T = 1 + static_cast<std::int64_t>(rng() % 6);
        const std::int64_t L = static_cast<std::int64_t>(rng() % 4);
        std::vector<std::int64_t> target;
        for (std::int64_t i = 0; i < L; ++i) target.push_back(1 + static_cast<std::int64_t>(rng() % V));
        const auto lp = random_log_probs(T, C, rng);
        const double want = brute_force_ctc(lp, T, C, target);
        const double got = ctc_log_likelihood(lp, T, C, target);
        const CtcResult r = ctc_loss(Tensor::from_data({T, C}, lp), target);
        if (std::isinf(want)) {
            ++infeasible;
            if (!std::isinf(got) || r.feasible || !std::isinf(r.loss.item())) ++mismatched_feasibility;
            continue;
        }
        worst = std::max({worst, std::abs(got - want), std::abs(-r.loss.item() - want)});
    }
    return {worst < 1e-9 && mismatched_feasibility == 0,
            "max |dlog| " + sci(worst) + " over 500 instances (" + std::to_string(infeasible) +
                " infeasible, all flagged: " + (mismatched_feasibility ? "no" : "yes") + ")"};
}

// ---- 2 ----

Outcome gradient_suite(const Context& ctx) {
    double worst_op = 0;
    std::string worst_name;
    std::size_t n_ops = 0;
    for (auto& c : op_cases()) {
        const auto r = grad_check(c.f, c.inputs);
        ++n_ops;
        if (r.rel_error > worst_op) {
            worst_op = r.rel_error;
            worst_name = c.name;
        }
    }

    // Full desk-scale student loss with both predictors on.
    ExperimentConfig cfg = desk(ctx);
    cfg.model.encoder.dropout = 0;
    cfg.model.decoder.dropout = 0;
    const Vocabulary vocab(injective_corpus().alphabet, "en");
    ModelSpec spec;
    spec.frontend.kind = FrontendKind::Passthrough;
    spec.frontend.output_dim = 12;
    spec.encoder = cfg.model.encoder;
    spec.decoder = cfg.model.decoder;
    spec.ctc_classes = vocab.ctc_size();
    spec.decoder_classes = vocab.decoder_size();
    spec.predictors = true;
    spec.audio_target_dim = spec.visual_target_dim = spec.encoder.model_dim;
    VsrModel model(spec, 5);
    model.train(true);
    const std::vector<std::int64_t> lengths{7, 5};
    const auto x = random_tensor({2, 12, 7}, 6);
    const std::vector<std::vector<std::int64_t>> transcripts{vocab.encode("bad"), vocab.encode("ok")};
    TeacherTargets targets{random_tensor({2, 7, 64}, 7), random_tensor({2, 7, 64}, 8), {7, 5}, {7, 5}};
    const LossWeights w;  // 0.1, 0.4, 0.4
    auto total = [&] {
        ModelOutput out = model.encode(x, lengths);
        auto ctc = ctc_loss_batch(out.ctc_logprobs, out.lengths, ctc_targets(vocab, transcripts));
        const DecoderIo io = decoder_io(vocab, transcripts);
        auto att = attention_loss(model.decoder().forward(out.memory, out.lengths, io.inputs), io.targets);
        return total_loss(vsr_loss(ctc.loss, att, w.ctc), aux_loss(out.tap, out.lengths, targets, model.predictors(), w));
    };
    std::vector<Tensor> inputs{x};
    std::size_t n_params = 0;
    for (auto& [name, p] : model.named_parameters()) {
        inputs.push_back(p);
        n_params += static_cast<std::size_t>(p.numel());
    }
    const auto r = grad_check(total, inputs, 1e-6, 16);
    ctx.log("desk loss worst: " + r.worst);
    const bool ok = worst_op < 1e-4 && r.rel_error < 1e-4;
    return {ok, std::to_string(n_ops) + " op checks, worst rel err " + sci(worst_op) + " (" + worst_name +
                    "); desk total loss (" + std::to_string(inputs.size() - 1) + " tensors, " +
                    std::to_string(n_params) + " weights, sampled) rel err " + sci(r.rel_error)};
}

// ---- 3 ----

Outcome beam_oracle(const Context&) {
    int label_mismatch = 0;
    double worst = 0;
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
        const std::int64_t chars = 1 + static_cast<std::int64_t>(seed % 4);
        const std::int64_t max_len = 1 + static_cast<std::int64_t>((seed / 4) % 4);
        TinyDecodeProblem p(seed, chars, 6);
        const bool with_lm = seed % 2 == 0;
        const auto in = p.inputs(with_lm);
        DecodeConfig cfg = beam_preset("en");
        if (!with_lm) cfg.lm_weight = 0;
        cfg.max_len = max_len;
        // every label sequence of every length up to max_len fits in the beam
        std::int64_t beam = 1;
        for (std::int64_t i = 0; i < max_len; ++i) beam *= chars + 1;
        cfg.beam_size = beam;
        const auto b = beam_search(in, cfg);
        const auto e = exhaustive_search(in, cfg);
        if (b.ranked.empty() || e.ranked.empty() || b.ranked[0].labels != e.ranked[0].labels) {
            ++label_mismatch;
            continue;
        }
        worst = std::max(worst, std::abs(b.ranked[0].combined - e.ranked[0].combined));
    }
    return {label_mismatch == 0 && worst < 1e-9, "200 tiny models: " + std::to_string(label_mismatch) +
                                                     " transcript mismatches, max |dscore| " + sci(worst)};
}

// ---- 4 ----

struct ShapeRow {
    std::string stage;
    Shape out;
};

std::string show(const Shape& s) {
    std::string r = "[";
    for (std::size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
    return r + "]";
}

int compare_trace(const std::string& name, const StageTrace& trace, const std::vector<ShapeRow>& want,
                  std::vector<std::string>& problems) {
    int rows = 0;
    for (const auto& row : want) {
        auto it = std::find_if(trace.begin(), trace.end(), [&](const StageShape& s) { return s.stage == row.stage; });
        if (it == trace.end()) {
            problems.push_back(name + " " + row.stage + ": missing");
        } else if (it->output != row.out) {
            problems.push_back(name + " " + row.stage + ": " + show(it->output) + " != " + show(row.out));
        }
        ++rows;
    }
    return rows;
}

Outcome shape_tables(const Context&) {
    NoGradGuard ng;
    std::vector<std::string> problems;
    int rows = 0;
    Rng init(1);
    {
        VisualFrontend fe(1.0, init);
        fe.train(false);
        StageTrace tr;
        const auto y = fe.forward(random_tensor({2, 1, 29, 88, 88}, 2, 0, 1), &tr);
        const std::int64_t BT = 58;
        rows += compare_trace("visual", tr,
                              {{"stem.conv3d", {2, 64, 29, 44, 44}},
                               {"stem.maxpool3d", {2, 64, 29, 22, 22}},
                               {"reshape.frames", {BT, 64, 22, 22}},
                               {"residual2", {BT, 64, 22, 22}},
                               {"residual3", {BT, 128, 11, 11}},
                               {"residual4", {BT, 256, 6, 6}},
                               {"residual5", {BT, 512, 3, 3}},
                               {"global_avg_pool", {BT, 512, 1, 1}},
                               {"reshape.sequence", {2, 512, 29}}},
                              problems);
        if (y.shape() != Shape{2, 512, 29}) problems.push_back("visual output " + show(y.shape()));
    }
    const std::int64_t Ta = 16000;
    {
        AudioResidualFrontend fe(1.0, init);
        fe.train(false);
        StageTrace tr;
        const auto y = fe.forward(random_tensor({2, 1, Ta}, 3), &tr);
        rows += compare_trace("audio", tr,
                              {{"stem.conv1d", {2, 64, Ta / 4}},
                               {"residual2", {2, 64, Ta / 4}},
                               {"residual3", {2, 128, Ta / 8}},
                               {"residual4", {2, 256, Ta / 16}},
                               {"residual5", {2, 512, Ta / 32}},
                               {"avg_pool", {2, 512, Ta / 640}}},
                              problems);
        if (y.dim(2) != 25) problems.push_back("audio T_a=16000 gives " + std::to_string(y.dim(2)) + " frames");
    }
    for (std::int64_t ta : {Ta, 2 * Ta}) {
        AudioCnnFrontend fe(1.0, init);
        fe.train(false);
        StageTrace tr;
        fe.forward(random_tensor({1, 1, ta}, 4), &tr);
        rows += compare_trace("audio-cnn", tr,
                              {{"conv1", {1, 64, ta / 4}},
                               {"conv2", {1, 64, ta / 16}},
                               {"conv3", {1, 128, ta / 32}},
                               {"conv4", {1, 256, ta / 64}},
                               {"conv5", {1, 512, ta / 128}},
                               {"avg_pool", {1, 512, ta / 640}}},
                              problems);
    }
    std::string detail = std::to_string(rows) + " table rows checked at width 1";
    if (!problems.empty()) detail += "; first mismatch: " + problems.front();
    return {problems.empty(), detail};
}

// ---- 5 ----

// Regularized upper incomplete gamma Q(a, x), by series or continued fraction.
double gamma_q(double a, double x) {
    if (x <= 0) return 1;
    const double lg = std::lgamma(a);
    if (x < a + 1) {
        double sum = 1 / a, term = sum;
        for (int n = 1; n < 1000; ++n) {
            term *= x / (a + n);
            sum += term;
            if (std::abs(term) < std::abs(sum) * 1e-16) break;
        }
        return 1 - sum * std::exp(-x + a * std::log(x) - lg);
    }
    double b = x + 1 - a, c = 1e300, d = 1 / b, h = d;
    for (int i = 1; i < 1000; ++i) {
        const double an = -i * (i - a);
        b += 2;
        d = an * d + b;
        if (std::abs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::abs(c) < 1e-300) c = 1e-300;
        d = 1 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - lg) * h;
}

Outcome time_mask_statistics(const Context&) {
    const std::int64_t T = 250, D = 3;
    std::vector<Scalar> d(static_cast<std::size_t>(D * T));
    std::mt19937_64 src(9);
    std::normal_distribution<double> n(0, 1);
    for (auto& v : d) v = static_cast<Scalar>(n(src));
    const Tensor x = Tensor::from_data({D, T}, d);
    std::vector<Scalar> mean(static_cast<std::size_t>(D), 0);
    for (std::int64_t i = 0; i < D; ++i) {
        Scalar s = 0;
        for (std::int64_t t = 0; t < T; ++t) s += d[static_cast<std::size_t>(i * T + t)];
        mean[static_cast<std::size_t>(i)] = s / static_cast<Scalar>(T);
    }
    Rng rng(123);
    std::vector<std::int64_t> hist(11, 0);
    int wrong_count = 0, out_of_range = 0, fill_mismatch = 0, untouched_mismatch = 0;
    for (int draw = 0; draw < 10000; ++draw) {
        const auto r = time_mask(x, 1, rng);
        if (r.log.size() != 10) ++wrong_count;
        std::vector<bool> masked(static_cast<std::size_t>(T), false);
        for (const auto& s : r.log) {
            if (s.length < 0 || s.length > 10 || s.start < 0 || s.start + s.length > T) {
                ++out_of_range;
                continue;
            }
            ++hist[static_cast<std::size_t>(s.length)];
            for (std::int64_t t = s.start; t < s.start + s.length; ++t) masked[static_cast<std::size_t>(t)] = true;
        }
        const auto out = r.masked.data();
        for (std::int64_t i = 0; i < D; ++i)
            for (std::int64_t t = 0; t < T; ++t) {
                const auto k = static_cast<std::size_t>(i * T + t);
                if (masked[static_cast<std::size_t>(t)]) fill_mismatch += out[k] != mean[static_cast<std::size_t>(i)];
                else untouched_mismatch += out[k] != d[k];
            }
    }
    std::int64_t total = 0;
    for (auto h : hist) total += h;
    const double expected = static_cast<double>(total) / 11;
    double chi2 = 0;
    for (auto h : hist) chi2 += (static_cast<double>(h) - expected) * (static_cast<double>(h) - expected) / expected;
    const double p = gamma_q(5.0, chi2 / 2);  // 10 degrees of freedom
    const bool ok = wrong_count == 0 && out_of_range == 0 && fill_mismatch == 0 && untouched_mismatch == 0 && p > 0.001;
    return {ok, "10000 draws: " + std::to_string(wrong_count) + " with mask count != 10, chi2 " + fmt(chi2) +
                    " (p " + fmt(p, 4) + "), " + std::to_string(fill_mismatch) + " fill mismatches, " +
                    std::to_string(untouched_mismatch) + " altered unmasked frames"};
}

// ---- 6 ----

Outcome metric_oracle(const Context&) {
    const auto seqs = all_sequences(3, 5);
    std::int64_t pairs = 0, bad = 0;
    const char* words[] = {"ka", "lo", "mi"};
    for (const auto& h : seqs)
        for (const auto& r : seqs) {
            ++pairs;
            const auto bf = brute_force_edit(h, r);
            auto agrees = [&](const EditCounts& e) {
                return e.errors() == bf.cost && e.substitutions == bf.s && e.deletions == bf.d && e.insertions == bf.i &&
                       e.reference_length == static_cast<std::int64_t>(r.size());
            };
            std::string hc, rc, hw, rw;
            for (auto v : h) {
                hc += static_cast<char>('a' + v);
                hw += (hw.empty() ? "" : " ") + std::string(words[v]);
            }
            for (auto v : r) {
                rc += static_cast<char>('a' + v);
                rw += (rw.empty() ? "" : " ") + std::string(words[v]);
            }
            const bool ok = agrees(edit_distance_counts(h, r)) &&
                            agrees(edit_distance_counts(tokenize(hc, ScoreUnit::Char), tokenize(rc, ScoreUnit::Char))) &&
                            agrees(edit_distance_counts(tokenize(hw, ScoreUnit::Word), tokenize(rw, ScoreUnit::Word)));
            bad += !ok;
        }
    int hand_bad = 0;
    auto del = edit_distance_counts(tokenize("the cat", ScoreUnit::Word), tokenize("the cat sat", ScoreUnit::Word));
    hand_bad += !(del.deletions == 1 && del.errors() == 1 && del.rate() == 1.0 / 3);
    auto ch = edit_distance_counts(tokenize("axcd", ScoreUnit::Char), tokenize("abc", ScoreUnit::Char));
    hand_bad += !(ch.substitutions == 1 && ch.insertions == 1 && ch.deletions == 0 && ch.reference_length == 3 &&
                  ch.rate() == 2.0 / 3);
    return {bad == 0 && hand_bad == 0, std::to_string(pairs) + " sequence pairs x (ids, CER, WER): " +
                                           std::to_string(bad) + " mismatches; hand cases " +
                                           (hand_bad ? "FAIL" : "ok")};
}

// ---- 7 ----

Outcome desk_learning(const Context& ctx) {
    const Dataset data = corpus(ctx, "injective", injective_corpus());
    ExperimentConfig cfg = desk(ctx);
    cfg.ablation = {false, false, false};
    std::vector<std::string> parts;
    bool ok = true;
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto t0 = std::chrono::steady_clock::now();
        TrainOptions o;
        o.out_dir = ctx.work / "c7" / ("seed" + std::to_string(seed));
        o.seed = seed;
        o.log = logger(ctx);
        const auto tr = train(cfg, data, o);
        LoadedModel m = load_model(tr.final_checkpoint);
        const auto recs = decode_split(m, data, "test", cfg.decode);
        const double cer = evaluate(recs, data.test).cer.total.rate() * 100;
        const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;
        ok = ok && cer <= 10 && minutes < 15;
        parts.push_back("seed " + std::to_string(seed) + " test CER " + fmt(cer) + "% in " + fmt(minutes, 1) + " min");
    }
    std::string detail;
    for (const auto& p : parts) detail += (detail.empty() ? "" : "; ") + p;
    return {ok, detail};
}

// ---- 8 ----

double mean_of(const std::vector<RunRecord>& runs, const std::string& config, double RunRecord::*field, int& n,
               const std::set<std::uint64_t>& seeds = {}) {
    double s = 0;
    n = 0;
    for (const auto& r : runs)
        if (r.config == config && r.status == "ok" && (seeds.empty() || seeds.count(r.seed))) {
            s += r.*field;
            ++n;
        }
    return n ? s / n : std::nan("");
}

Outcome ablation_direction(const Context& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset data = corpus(ctx, "ambiguous", ambiguous_corpus());
    ExperimentConfig cfg = desk(ctx);
    cfg.seeds = {1, 2, 3, 4, 5};
    AblationOptions o;
    o.out_dir = ctx.work / "c8";
    o.log = logger(ctx);
    fs::remove_all(o.out_dir);
    const auto runs = ablate(cfg, data, o);
    const double hours = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 3600;
    const std::string report = render_report(runs, "test_cer");
    std::cout << report;
    std::ofstream(o.out_dir / "report_dev.txt") << render_report(runs, "dev_cer");
    int nf, nb, nm;
    const double full = mean_of(runs, "full", &RunRecord::test_cer, nf);
    const double no_aux = mean_of(runs, "-both_aux", &RunRecord::test_cer, nb);
    const double no_mask = mean_of(runs, "-time_masking", &RunRecord::test_cer, nm);
    const bool ok = nf == 5 && nb == 5 && nm == 5 && full <= no_aux + 0.5 && full <= no_mask + 0.5 && hours < 2 &&
                    fs::exists(o.out_dir / "report.txt");
    return {ok, "mean test CER full " + fmt(full) + ", -both_aux " + fmt(no_aux) + ", -time_masking " + fmt(no_mask) +
                    " (" + std::to_string(nf) + "/" + std::to_string(nb) + "/" + std::to_string(nm) + " runs ok) in " +
                    fmt(hours, 2) + " h; report at " + (o.out_dir / "report.txt").string()};
}

// ---- 9 ----

Outcome teacher_quality(const Context& ctx) {
    const Dataset data = corpus(ctx, "ambiguous", ambiguous_corpus());
    ExperimentConfig cfg = desk(ctx);
    cfg.seeds = {1, 2, 3};
    const std::set<std::uint64_t> seeds{1, 2, 3};
    std::vector<RunRecord> converged;
    const fs::path shared = ctx.work / "c8" / "runs.csv";
    if (fs::exists(shared)) converged = read_runs_csv(shared);
    int n_conv;
    double conv = mean_of(converged, "full", &RunRecord::dev_cer, n_conv, seeds);
    std::string source = "ablation runs";
    if (n_conv != 3) {
        AblationOptions o;
        o.out_dir = ctx.work / "c9" / "converged";
        o.only = {"full"};
        o.log = logger(ctx);
        converged = ablate(cfg, data, o);
        conv = mean_of(converged, "full", &RunRecord::dev_cer, n_conv, seeds);
        source = "fresh runs";
    }
    AblationOptions o;
    o.out_dir = ctx.work / "c9" / "one_epoch";
    o.only = {"full"};
    o.teacher_epochs = 1;
    o.log = logger(ctx);
    const auto weak = ablate(cfg, data, o);
    int n_weak;
    const double weak_cer = mean_of(weak, "full", &RunRecord::dev_cer, n_weak, seeds);
    const double delta = weak_cer - conv;
    return {n_conv == 3 && n_weak == 3 && delta >= -0.2,
            "mean dev CER with converged teachers " + fmt(conv) + " (" + source + "), with 1-epoch teachers " +
                fmt(weak_cer) + "; delta " + fmt(delta) + " points"};
}

// ---- 10 ----

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

Outcome reproducibility(const Context& ctx) {
    const Dataset data = corpus(ctx, "ambiguous", ambiguous_corpus());
    ExperimentConfig cfg = desk(ctx);
    cfg.train.epochs = 5;
    cfg.train.average_last = 5;
    cfg.curriculum.caps = {40, 100};
    cfg.train.stage_epochs = {2};
    auto run = [&](const std::string& name) {
        const fs::path dir = ctx.work / "c10" / name;
        fs::remove_all(dir);
        Teachers t = train_teachers(cfg, data, dir / "teachers", 3, 1, logger(ctx));
        TrainOptions o;
        o.out_dir = dir / "student";
        o.seed = 3;
        o.teachers = &t;
        o.log = logger(ctx);
        const auto tr = train(cfg, data, o);
        LoadedModel m = load_model(tr.final_checkpoint);
        write_decodes(dir / "dev.decode.jsonl", decode_split(m, data, "dev", cfg.decode));
        return tr;
    };
    const auto a = run("a");
    run("b");
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(ctx.work / "c10" / "a"))
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), ctx.work / "c10" / "a").string());
    int differ = 0;
    for (const auto& f : files) {
        if (f.find("train_log") != std::string::npos) continue;  // holds wall-clock seconds
        differ += slurp(ctx.work / "c10" / "a" / f) != slurp(ctx.work / "c10" / "b" / f);
    }

    // independent elementwise mean of the five epoch checkpoints
    std::vector<Checkpoint> ins;
    for (const auto& p : a.epoch_checkpoints) ins.push_back(Checkpoint::load(p));
    const Checkpoint avg = Checkpoint::load(a.final_checkpoint);
    double worst = 0;
    bool structure_ok = ins.size() == 5;
    for (const auto& e : avg.tensors) {
        for (std::size_t i = 0; i < e.values.size(); ++i) {
            long double s = 0;
            for (const auto& c : ins) {
                const auto* t = c.find(e.name);
                if (!t) {
                    structure_ok = false;
                    break;
                }
                s += t->values[i];
            }
            worst = std::max(worst, static_cast<double>(std::abs(s / ins.size() - e.values[i])));
        }
    }
    return {differ == 0 && structure_ok && worst <= 1e-12,
            std::to_string(files.size()) + " artifacts compared across two runs, " + std::to_string(differ) +
                " differ; k=" + std::to_string(ins.size()) + " average max |d| " + sci(worst)};
}

// ---- 11 ----

bool close(double a, double b) { return std::abs(a - b) <= 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(b)); }

Outcome arithmetic_constants(const Context&) {
    std::vector<std::string> bad;
    const LossWeights w;
    if (!(w.ctc == 0.1 && w.audio_aux == 0.4 && w.visual_aux == 0.4)) bad.push_back("default loss weights");
    const ExperimentConfig large = make_preset("large");
    if (!(large.loss.ctc == 0.1 && large.loss.audio_aux == 0.4 && large.loss.visual_aux == 0.4)) bad.push_back("large preset weights");
    if (!close(vsr_loss(Tensor::scalar(2), Tensor::scalar(1), w.ctc).item(), 1.1)) bad.push_back("vsr_loss 1.1");
    if (vsr_loss(Tensor::scalar(2), Tensor::scalar(1), 0).item() != 1) bad.push_back("vsr_loss alpha 0");
    if (vsr_loss(Tensor::scalar(2), Tensor::scalar(1), 1).item() != 2) bad.push_back("vsr_loss alpha 1");
    if (!close(total_loss(Tensor::scalar(1.1), Tensor::scalar(0.8)).item(), 1.9)) bad.push_back("total_loss 1.9");
    {
        Rng init(3);
        nn::Linear ha(4, 4, init), hv(4, 4, init);
        const auto tap = random_tensor({2, 3, 4}, 12);
        TeacherTargets t{ops::add_scalar(ha.forward(tap).detach(), 1), ops::add_scalar(hv.forward(tap).detach(), -1),
                         {3, 3}, {3, 3}};
        if (!close(aux_loss(tap, {3, 3}, t, {&ha, &hv}, w).item(), 0.8)) bad.push_back("aux_loss 0.8");
        TeacherTargets same{ha.forward(tap).detach(), hv.forward(tap).detach(), {3, 3}, {3, 3}};
        if (aux_loss(tap, {3, 3}, same, {&ha, &hv}, w).item() != 0) bad.push_back("aux_loss 0");
    }
    const DecodeConfig en = beam_preset("en");
    if (!close(fuse_scores(en.ctc_weight, en.lm_weight, -1, -2, -0.5), -2.2)) bad.push_back("fusion -2.2");
    const std::map<std::string, std::pair<std::int64_t, double>> presets{
        {"en", {40, 0.6}}, {"zh", {20, 0.3}}, {"pt", {35, 0.3}}, {"es", {35, 0.4}}, {"it", {25, 0.5}}, {"fr", {40, 0.3}}};
    for (const auto& [lang, bw] : presets) {
        const auto p = beam_preset(lang);
        if (p.beam_size != bw.first || p.lm_weight != bw.second || p.ctc_weight != 0.1) bad.push_back("preset " + lang);
    }
    std::string detail = "loss weights, vsr_loss, aux_loss, total_loss, fusion and " + std::to_string(presets.size()) +
                         " language presets";
    if (!bad.empty()) {
        detail += "; failed:";
        for (const auto& b : bad) detail += " " + b;
    }
    return {bad.empty(), detail};
}

struct Criterion {
    int id;
    std::string name;
    double budget_seconds;  // 0: none
    std::function<Outcome(const Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria, one line each"};
    std::string selection;
    std::string work = "acceptance_work";
    bool verbose = false;
    app.add_option("--criteria", selection, "Comma-separated ids (default: all)");
    app.add_option("--work", work, "Directory for corpora and training runs");
    app.add_flag("-v,--verbose", verbose, "Log training progress to stderr");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> all{
        {1, "ctc-oracle", 10, ctc_oracle},
        {2, "gradient-suite", 300, gradient_suite},
        {3, "beam-oracle", 120, beam_oracle},
        {4, "shape-tables", 30, shape_tables},
        {5, "time-mask-statistics", 60, time_mask_statistics},
        {6, "metric-oracle", 0, metric_oracle},
        {7, "desk-learning", 0, desk_learning},  // per-seed limit checked inside
        {8, "ablation-direction", 0, ablation_direction},  // 2 h checked inside
        {9, "teacher-quality", 0, teacher_quality},
        {10, "reproducibility", 0, reproducibility},
        {11, "arithmetic-constants", 0, arithmetic_constants},
    };
    std::set<int> chosen;
    if (!selection.empty()) {
        std::stringstream ss(selection);
        std::string tok;
        while (std::getline(ss, tok, ',')) chosen.insert(std::stoi(tok));
    }

    Context ctx{fs::absolute(work), verbose};
    fs::create_directories(ctx.work);
    int failed = 0, ran = 0;
    for (const auto& c : all) {
        if (!chosen.empty() && !chosen.count(c.id)) continue;
        ++ran;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome r;
        try {
            r = c.run(ctx);
        } catch (const std::exception& e) {
            r = {false, std::string("error: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget_seconds > 0 && s > c.budget_seconds) {
            r.pass = false;
            r.detail += "; over the " + fmt(c.budget_seconds, 0) + " s budget";
        }
        failed += !r.pass;
        std::cout << (r.pass ? "PASS" : "FAIL") << "  criterion " << std::setw(2) << c.id << "  " << c.name << ": "
                  << r.detail << " [" << fmt(s, 1) << " s]" << std::endl;
    }
    std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
    return failed ? 1 : 0;
}
