#include "vsr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "vsr/batching.hpp"
#include "vsr/beam_search.hpp"
#include "vsr/errors.hpp"
#include "vsr/optim.hpp"
#include "vsr/random.hpp"

namespace vsr {

using nlohmann::json;

// ---- data ----

Dataset Dataset::load(const fs::path& dir) {
    Dataset d;
    d.directory = dir;
    if (!fs::exists(dir / "corpus.json")) throw DataError("no corpus at " + dir.string() + " (missing corpus.json)");
    d.options = load_corpus_options(dir / "corpus.json");
    d.vocab = Vocabulary::load(dir / "vocab.txt");
    d.train = load_utterances(Manifest::load(dir / "train.jsonl"), d.vocab);
    d.dev = load_utterances(Manifest::load(dir / "dev.jsonl"), d.vocab);
    d.test = load_utterances(Manifest::load(dir / "test.jsonl"), d.vocab);
    if (d.train.empty()) throw DataError("training split of " + dir.string() + " is empty");
    d.has_audio = std::all_of(d.train.begin(), d.train.end(), [](const Utterance& u) { return u.audio.defined(); });
    d.image = d.train.front().visual.rank() == 4;
    return d;
}

const std::vector<Utterance>& Dataset::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "dev") return dev;
    if (name == "test") return test;
    throw ConfigError("unknown split '" + name + "' (train, dev, test)");
}

std::int64_t Dataset::visual_dim() const { return image ? 1 : train.front().visual.dim(0); }

std::int64_t Dataset::audio_dim() const {
    if (!has_audio) throw DataError("corpus " + directory.string() + " has no audio channel");
    return train.front().audio.dim(0);
}

NormStats visual_stats(const Dataset& data) {
    std::vector<const Tensor*> xs;
    for (const auto& u : data.train) xs.push_back(&u.visual);
    return NormStats::compute(xs, !data.image, (data.directory / "train.jsonl").string());
}

NormStats audio_stats(const Dataset& data) {
    if (!data.has_audio) throw DataError("missing audio channel: cannot build the ASR teacher");
    std::vector<const Tensor*> xs;
    for (const auto& u : data.train) xs.push_back(&u.audio);
    return NormStats::compute(xs, true, (data.directory / "train.jsonl").string());
}

json stats_to_json(const NormStats& s) {
    return {{"mean", s.mean}, {"std", s.std}, {"per_dimension", s.per_dimension}, {"provenance", s.provenance}};
}

NormStats stats_from_json(const json& j) {
    NormStats s;
    s.mean = j.at("mean").get<std::vector<Scalar>>();
    s.std = j.at("std").get<std::vector<Scalar>>();
    s.per_dimension = j.at("per_dimension").get<bool>();
    s.provenance = j.value("provenance", "");
    return s;
}

std::string to_string(Role role) {
    switch (role) {
        case Role::Student: return "vsr";
        case Role::AsrTeacher: return "asr-teacher";
        case Role::VsrTeacher: return "vsr-teacher";
    }
    return "?";
}

namespace {

Role parse_role(const std::string& s) {
    if (s == "vsr") return Role::Student;
    if (s == "asr-teacher") return Role::AsrTeacher;
    if (s == "vsr-teacher") return Role::VsrTeacher;
    throw DataError("unknown model role '" + s + "' in checkpoint");
}

std::string characters(const Vocabulary& v) {
    std::string s;
    for (auto id : v.char_ids()) s += v.token(id);
    return s;
}

void say(const LogFn& log, const std::string& msg) {
    if (log) log(msg);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

LoadedModel load_model(const fs::path& path) {
    LoadedModel m;
    m.checkpoint = Checkpoint::load(path);
    const json& meta = m.checkpoint.meta;
    if (!meta.contains("model")) throw DataError(path.string() + " is not a model checkpoint");
    const ModelSpec spec = ModelSpec::from_json(meta.at("model"));
    m.model = std::make_unique<VsrModel>(spec, 0);
    m.checkpoint.apply(*m.model);
    m.model->train(false);
    m.stats = stats_from_json(meta.at("input_stats"));
    m.characters = meta.at("characters").get<std::string>();
    m.role = parse_role(spec.role);
    return m;
}

Teachers load_teachers(const fs::path& dir) {
    Teachers t{load_model(dir / "asr" / "model.vsrc"), load_model(dir / "vsr" / "model.vsrc")};
    if (t.asr.role != Role::AsrTeacher || t.vsr.role != Role::VsrTeacher)
        throw DataError("teacher directory " + dir.string() + " holds the wrong model roles");
    return t;
}

ModelSpec model_spec(const ExperimentConfig& cfg, const Dataset& data, Role role) {
    ModelSpec s;
    s.role = to_string(role);
    s.encoder = cfg.model.encoder;
    s.decoder = cfg.model.decoder;
    s.ctc_classes = data.vocab.ctc_size();
    s.decoder_classes = data.vocab.decoder_size();
    s.frontend.width_multiplier = cfg.model.width_multiplier;
    if (role == Role::AsrTeacher) {
        // Audio features are already frame-level; real waveforms are out of scope.
        s.frontend.kind = FrontendKind::Passthrough;
        s.frontend.output_dim = data.audio_dim();
    } else if (cfg.model.frontend != "auto") {
        s.frontend.kind = parse_frontend_kind(cfg.model.frontend);
        s.frontend.output_dim = data.visual_dim();
    } else {
        s.frontend.kind = data.image ? FrontendKind::Visual3dResidual : FrontendKind::Passthrough;
        s.frontend.output_dim = data.visual_dim();
    }
    if (role == Role::Student) {
        s.predictors = true;
        s.audio_target_dim = cfg.model.encoder.model_dim;
        s.visual_target_dim = cfg.model.encoder.model_dim;
    }
    return s;
}

// ---- training ----

namespace {

struct StepLosses {
    Tensor total;
    double ctc = 0, att = 0, aux_a = 0, aux_v = 0;
    std::vector<std::size_t> infeasible;
};

StepLosses forward_losses(VsrModel& model, const Batch& batch, const Vocabulary& vocab, const ExperimentConfig& cfg,
                          Role role, const Teachers* teachers) {
    const bool audio_in = role == Role::AsrTeacher;
    const Tensor& input = audio_in ? batch.audio : batch.visual;
    const auto& lengths = audio_in ? batch.audio_lengths : batch.lengths;
    ModelOutput out = model.encode(input, lengths);

    StepLosses r;
    CtcBatchResult ctc = ctc_loss_batch(out.ctc_logprobs, out.lengths, ctc_targets(vocab, batch.transcripts));
    r.infeasible = ctc.infeasible;
    const DecoderIo io = decoder_io(vocab, batch.transcripts);
    const Tensor att = attention_loss(model.decoder().forward(out.memory, out.lengths, io.inputs), io.targets,
                                      cfg.train.label_smoothing);
    r.ctc = ctc.loss.item();
    r.att = att.item();
    r.total = vsr_loss(ctc.loss, att, cfg.loss.ctc);

    if (role != Role::Student) return r;
    const LossWeights w = cfg.effective_loss();
    if (w.audio_aux == 0 && w.visual_aux == 0) return r;
    if (!teachers) throw ConfigError("auxiliary losses are on but no teachers were given");
    TeacherTargets targets;
    if (w.audio_aux != 0) {
        targets.audio = teachers->asr.model->teacher_features(batch.audio, batch.audio_lengths);
        targets.audio_lengths = batch.audio_lengths;
    }
    if (w.visual_aux != 0) {
        const Tensor& clean = batch.visual_clean.defined() ? batch.visual_clean : batch.visual;
        targets.visual = teachers->vsr.model->teacher_features(clean, batch.lengths);
        targets.visual_lengths = batch.lengths;
    }
    const AuxPredictors preds = model.predictors();
    Tensor aux_a, aux_v;
    if (w.audio_aux != 0) aux_a = aux_loss(out.tap, out.lengths, targets, preds, {w.ctc, w.audio_aux, 0});
    if (w.visual_aux != 0) aux_v = aux_loss(out.tap, out.lengths, targets, preds, {w.ctc, 0, w.visual_aux});
    if (aux_a.defined()) {
        r.aux_a = aux_a.item();
        r.total = total_loss(r.total, aux_a);
    }
    if (aux_v.defined()) {
        r.aux_v = aux_v.item();
        r.total = total_loss(r.total, aux_v);
    }
    return r;
}

void dump_batch(const fs::path& path, const Batch& batch, const StepLosses& l, std::int64_t step) {
    json j{{"step", step},  {"ids", batch.ids},     {"lengths", batch.lengths}, {"audio_lengths", batch.audio_lengths},
           {"ctc", l.ctc},  {"att", l.att},         {"aux_audio", l.aux_a},     {"aux_visual", l.aux_v},
           {"infeasible", l.infeasible}};
    for (const auto& spans : batch.mask_logs) {
        json m = json::array();
        for (const auto& s : spans) m.push_back({s.start, s.length});
        j["masks"].push_back(m);
    }
    std::ofstream os(path);
    os << j.dump(1) << '\n';
}

json model_meta(const VsrModel& model, const NormStats& stats, const Dataset& data, const ExperimentConfig& cfg,
                std::uint64_t seed) {
    return {{"model", model.spec().to_json()},
            {"input_stats", stats_to_json(stats)},
            {"characters", characters(data.vocab)},
            {"language", data.vocab.language()},
            {"config_hash", cfg.hash()},
            {"seed", seed},
            {"crop", data.image ? cfg.model.crop : 0}};
}

// Epoch -> curriculum stage; the last stage takes whatever is left.
std::size_t stage_of(const ExperimentConfig& cfg, std::int64_t epoch) {
    std::int64_t acc = 0;
    const std::size_t stages = cfg.curriculum.caps.size();
    for (std::size_t s = 0; s + 1 < stages && s < cfg.train.stage_epochs.size(); ++s) {
        acc += cfg.train.stage_epochs[s];
        if (epoch < acc) return s;
    }
    return stages - 1;
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const Dataset& data, const TrainOptions& opt) {
    cfg.validate();
    const Role role = opt.role;
    const LossWeights w = cfg.effective_loss();
    const bool need_teachers = role == Role::Student && (w.audio_aux != 0 || w.visual_aux != 0);
    if (need_teachers && !opt.teachers) throw ConfigError("auxiliary losses are on: teachers are required");
    if (role == Role::AsrTeacher && !data.has_audio) throw DataError("missing audio channel: cannot build the ASR teacher");
    if (data.image && cfg.model.crop > data.options.canvas)
        throw ConfigError("model.crop " + std::to_string(cfg.model.crop) + " exceeds the corpus canvas " +
                          std::to_string(data.options.canvas));

    fs::create_directories(opt.out_dir);
    {
        std::ofstream os(opt.out_dir / "config.ini");
        os << cfg.to_ini();
    }

    VsrModel model(model_spec(cfg, data, role), opt.seed);
    model.train(true);
    const NormStats vstats = visual_stats(data);
    std::optional<NormStats> astats;
    if (data.has_audio && (role == Role::AsrTeacher || (need_teachers && w.audio_aux != 0))) astats = audio_stats(data);
    const NormStats& input_stats = role == Role::AsrTeacher ? *astats : vstats;

    Adam adam(model.named_parameters(), cfg.train.adam, cfg.train.schedule);
    const std::int64_t epochs =
        opt.epochs ? *opt.epochs : (role == Role::Student ? cfg.train.epochs : cfg.train.teacher_epochs);
    if (epochs < 1) throw ConfigError("epochs must be >= 1");

    CollateOptions co;
    co.training = true;
    co.time_masking = cfg.time_masking_enabled();
    co.mask = cfg.augment.mask;
    co.crop = data.image ? cfg.model.crop : 0;
    co.visual_stats = &vstats;
    co.audio_stats = astats ? &*astats : nullptr;
    co.need_audio = astats.has_value();
    co.mask_audio = role == Role::AsrTeacher;
    co.keep_clean = need_teachers && w.visual_aux != 0;
    if (!cfg.augment.spatial && data.image) co.crop = 0;

    std::vector<std::int64_t> frames;
    for (const auto& u : data.train) frames.push_back(u.frames());

    TrainResult result;
    std::ofstream log(opt.out_dir / "train_log.jsonl");
    std::vector<fs::path> kept;
    for (std::int64_t epoch = 0; epoch < epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::size_t stage = stage_of(cfg, epoch);
        const std::vector<std::size_t> subset = curriculum_filter(frames, cfg.curriculum, stage);
        std::vector<std::int64_t> sub_frames;
        for (auto i : subset) sub_frames.push_back(frames[i]);
        const BatchPlan plan = make_batches(sub_frames, {cfg.train.batch_size, cfg.train.halve_threshold, 0,
                                                         derive_seed(opt.seed, "epoch:" + std::to_string(epoch))});
        Rng aug = make_rng(opt.seed, "augment:" + std::to_string(epoch));

        EpochLog el;
        el.epoch = epoch + 1;
        el.stage = static_cast<std::int64_t>(stage);
        for (const auto& local : plan.batches) {
            std::vector<std::size_t> idx;
            for (auto i : local) idx.push_back(subset[i]);
            const Batch batch = collate(data.train, idx, co, aug);
            StepLosses l = forward_losses(model, batch, data.vocab, cfg, role, opt.teachers);
            const double value = l.total.item();
            if (!std::isfinite(value)) {
                const fs::path dump = opt.out_dir / "nonfinite_batch.json";
                dump_batch(dump, batch, l, adam.step_count() + 1);
                throw NumericError("non-finite loss at step " + std::to_string(adam.step_count() + 1) +
                                   " (epoch " + std::to_string(epoch + 1) + "); batch dumped to " + dump.string());
            }
            if (result.steps == 0) result.first_batch_loss = value;
            model.zero_grad();
            backward(l.total);
            el.lr = adam.step();
            ++result.steps;
            const double n = static_cast<double>(batch.ids.size());
            el.loss += value * n;
            el.ctc += l.ctc * n;
            el.att += l.att * n;
            el.aux_audio += l.aux_a * n;
            el.aux_visual += l.aux_v * n;
            el.utterances += static_cast<std::int64_t>(batch.ids.size());
        }
        const double n = static_cast<double>(std::max<std::int64_t>(1, el.utterances));
        el.loss /= n;
        el.ctc /= n;
        el.att /= n;
        el.aux_audio /= n;
        el.aux_visual /= n;
        el.steps = adam.step_count();
        el.seconds = seconds_since(t0);
        result.epochs.push_back(el);

        Checkpoint ck = Checkpoint::from_module(model);
        ck.meta = model_meta(model, input_stats, data, cfg, opt.seed);
        ck.meta["step"] = adam.step_count();
        ck.meta["epoch"] = epoch + 1;
        ck.meta["rng"] = {{"augment", rng_state(aug)}};
        const fs::path path = opt.out_dir / ("epoch" + std::to_string(epoch + 1) + ".vsrc");
        ck.save(path);
        kept.push_back(path);
        while (static_cast<std::int64_t>(kept.size()) > cfg.train.average_last) {
            fs::remove(kept.front());
            kept.erase(kept.begin());
        }

        json line{{"epoch", el.epoch},          {"stage", el.stage},   {"step", el.steps},
                  {"utterances", el.utterances}, {"loss", el.loss},     {"ctc", el.ctc},
                  {"att", el.att},               {"aux_audio", el.aux_audio}, {"aux_visual", el.aux_visual},
                  {"lr", el.lr},                 {"seconds", el.seconds}};
        log << line.dump() << '\n';
        log.flush();
        if (cfg.train.log_every > 0 && (epoch + 1) % cfg.train.log_every == 0) {
            std::ostringstream os;
            os << to_string(role) << " epoch " << el.epoch << "/" << epochs << " stage " << el.stage << " loss "
               << std::fixed << std::setprecision(4) << el.loss << " (ctc " << el.ctc << ", att " << el.att;
            if (role == Role::Student) os << ", aux_a " << el.aux_audio << ", aux_v " << el.aux_visual;
            os << ") " << std::setprecision(1) << el.seconds << "s";
            say(opt.log, os.str());
        }
    }

    std::vector<Checkpoint> last;
    for (const auto& p : kept) last.push_back(Checkpoint::load(p));
    Checkpoint avg = average_checkpoints(last);
    result.final_checkpoint = opt.out_dir / "model.vsrc";
    avg.save(result.final_checkpoint);
    result.epoch_checkpoints = kept;
    return result;
}

Teachers train_teachers(const ExperimentConfig& cfg, const Dataset& data, const fs::path& out_dir, std::uint64_t seed,
                        std::optional<std::int64_t> epochs, const LogFn& log) {
    if (!data.has_audio) throw DataError("missing audio channel: cannot build the ASR teacher");
    // Teachers are plain hybrid CTC/attention models: no auxiliary terms.
    ExperimentConfig tc = cfg;
    tc.ablation.audio_aux = tc.ablation.visual_aux = false;
    TrainOptions o;
    o.seed = derive_seed(seed, "teacher");
    o.epochs = epochs;
    o.log = log;
    o.role = Role::AsrTeacher;
    o.out_dir = out_dir / "asr";
    train(tc, data, o);
    o.role = Role::VsrTeacher;
    o.out_dir = out_dir / "vsr";
    train(tc, data, o);
    return load_teachers(out_dir);
}

// ---- language model ----

fs::path train_lm(const ExperimentConfig& cfg, const Dataset& data, const fs::path& out_dir, std::uint64_t seed,
                  const LogFn& log) {
    fs::create_directories(out_dir);
    Rng init = make_rng(seed, "init:lm");
    CharLm lm(data.vocab.decoder_size(), cfg.lm.model, init);
    lm.reseed(derive_seed(seed, "lm-dropout"));
    lm.train(true);
    Adam adam(lm.named_parameters(), cfg.train.adam, {cfg.lm.peak_lr, cfg.lm.warmup});
    std::vector<std::vector<std::int64_t>> texts;
    for (const auto& u : data.train) texts.push_back(u.transcript_ids);
    for (std::int64_t epoch = 0; epoch < cfg.lm.epochs; ++epoch) {
        std::vector<std::size_t> order(texts.size());
        std::iota(order.begin(), order.end(), 0);
        Rng r = make_rng(seed, "lm-epoch:" + std::to_string(epoch));
        std::shuffle(order.begin(), order.end(), r);
        double total = 0;
        for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(cfg.lm.batch_size)) {
            std::vector<std::vector<std::int64_t>> batch;
            for (std::size_t i = pos; i < std::min(order.size(), pos + static_cast<std::size_t>(cfg.lm.batch_size)); ++i)
                batch.push_back(texts[order[i]]);
            const DecoderIo io = decoder_io(data.vocab, batch);
            const Tensor loss = attention_loss(lm.forward(io.inputs), io.targets);
            if (!std::isfinite(loss.item())) throw NumericError("non-finite LM loss in epoch " + std::to_string(epoch + 1));
            lm.zero_grad();
            backward(loss);
            adam.step();
            total += loss.item() * static_cast<double>(batch.size());
        }
        if (cfg.train.log_every > 0 && (epoch + 1) % cfg.train.log_every == 0) {
            std::ostringstream os;
            os << "lm epoch " << epoch + 1 << "/" << cfg.lm.epochs << " nll/utt " << std::fixed << std::setprecision(4)
               << total / static_cast<double>(texts.size());
            say(log, os.str());
        }
    }
    Checkpoint ck = Checkpoint::from_module(lm);
    ck.meta = {{"lm",
                {{"blocks", cfg.lm.model.num_blocks},
                 {"dim", cfg.lm.model.model_dim},
                 {"ff", cfg.lm.model.ff_dim},
                 {"head_dim", cfg.lm.model.head_dim},
                 {"dropout", cfg.lm.model.dropout},
                 {"vocab", data.vocab.decoder_size()}}},
               {"characters", characters(data.vocab)},
               {"step", adam.step_count()}};
    const fs::path path = out_dir / "lm.vsrc";
    ck.save(path);
    return path;
}

std::unique_ptr<CharLm> load_lm(const fs::path& path) {
    const Checkpoint ck = Checkpoint::load(path);
    if (!ck.meta.contains("lm")) throw DataError(path.string() + " is not a language-model checkpoint");
    const json& j = ck.meta.at("lm");
    LmConfig c{j.at("blocks"), j.at("dim"), j.at("ff"), j.at("head_dim"), j.at("dropout")};
    Rng init(0);
    auto lm = std::make_unique<CharLm>(j.at("vocab").get<std::int64_t>(), c, init);
    ck.apply(*lm);
    lm->train(false);
    return lm;
}

// ---- decoding ----

std::vector<DecodeRecord> decode_split(LoadedModel& m, const Dataset& data, const std::string& split,
                                       const DecodeConfig& decode, CharLm* lm) {
    decode.validate();
    if (m.characters != characters(data.vocab))
        throw DataError("model vocabulary '" + m.characters + "' does not match corpus vocabulary '" +
                        characters(data.vocab) + "'");
    if (lm && lm->vocab() != data.vocab.decoder_size()) throw DataError("language model vocabulary size mismatch");
    const Vocabulary& vocab = data.vocab;
    const bool audio_in = m.role == Role::AsrTeacher;
    VsrModel& model = *m.model;
    model.train(false);
    NoGradGuard guard;

    const std::vector<std::int64_t> chars = vocab.char_ids();
    BeamInputs proto;
    proto.ctc_classes = vocab.ctc_size();
    for (auto id : chars) {
        proto.ctc_class.push_back(vocab.to_ctc(id));
        proto.token.push_back(vocab.to_decoder(id));
    }
    proto.sos = vocab.to_decoder(Vocabulary::kSos);
    proto.eos = vocab.to_decoder(Vocabulary::kEos);

    CollateOptions co;
    co.training = false;
    const NormStats& stats = m.stats;
    if (audio_in) {
        co.audio_stats = &stats;
        co.need_audio = true;
    } else {
        co.visual_stats = &stats;
    }
    // Image mode evaluates on the centre crop used in training.
    if (data.image) co.crop = m.checkpoint.meta.value("crop", std::int64_t{0});

    const auto& utts = data.split(split);
    std::vector<DecodeRecord> out;
    Rng unused(0);
    for (std::size_t i = 0; i < utts.size(); ++i) {
        const Batch b = collate(utts, {i}, co, unused);
        const Tensor& input = audio_in ? b.audio : b.visual;
        const auto& lengths = audio_in ? b.audio_lengths : b.lengths;
        const ModelOutput enc = model.encode(input, lengths);
        BeamInputs in = proto;
        in.frames = enc.lengths[0];
        in.ctc_logprobs = enc.ctc_logprobs.data().subspan(0, static_cast<std::size_t>(in.frames * in.ctc_classes));
        DecoderScorer att(model.decoder(), enc.memory, in.frames);
        in.attention = &att;
        std::optional<LmScorer> lms;
        if (lm) {
            lms.emplace(*lm);
            in.lm = &*lms;
        }
        DecodeConfig dc = decode;
        if (!lm) dc.lm_weight = 0;
        const BeamResult r = beam_search(in, dc);
        DecodeRecord rec;
        rec.id = utts[i].meta.id;
        rec.reference = utts[i].meta.transcript;
        if (!r.ranked.empty()) {
            const auto& best = r.ranked.front();
            std::vector<std::int64_t> ids;
            for (auto k : best.labels) ids.push_back(chars[static_cast<std::size_t>(k)]);
            rec.hypothesis = vocab.decode(ids);
            rec.combined = best.combined;
            rec.ctc = best.ctc;
            rec.att = best.att;
            rec.lm = best.lm;
        }
        out.push_back(std::move(rec));
    }
    return out;
}

void write_decodes(const fs::path& path, const std::vector<DecodeRecord>& records) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path.string());
    for (const auto& r : records) {
        json j{{"id", r.id}, {"transcript", r.hypothesis}, {"reference", r.reference},
               {"score", r.combined}, {"ctc", r.ctc}, {"att", r.att}, {"lm", r.lm}};
        os << j.dump() << '\n';
    }
}

std::vector<DecodeRecord> read_decodes(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open decodes " + path.string());
    std::vector<DecodeRecord> out;
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            DecodeRecord r;
            r.id = j.at("id");
            r.hypothesis = j.at("transcript");
            r.reference = j.value("reference", "");
            r.combined = j.value("score", 0.0);
            r.ctc = j.value("ctc", 0.0);
            r.att = j.value("att", 0.0);
            r.lm = j.value("lm", 0.0);
            out.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

Evaluation evaluate(const std::vector<DecodeRecord>& records, const std::vector<Utterance>& references) {
    std::map<std::string, std::string> hyp, ref;
    for (const auto& r : records) hyp[r.id] = r.hypothesis;
    for (const auto& u : references) ref[u.meta.id] = u.meta.transcript;
    return {score_corpus(hyp, ref, ScoreUnit::Char), score_corpus(hyp, ref, ScoreUnit::Word)};
}

// ---- ablation ----

const std::vector<AblationVariant>& ablation_variants() {
    static const std::vector<AblationVariant> v = {
        {"full", true, true, true},
        {"-audio_aux", false, true, true},
        {"-visual_aux", true, false, true},
        {"-both_aux", false, false, true},
        {"-time_masking", true, true, false},
        {"-both_aux-time_masking", false, false, false},
    };
    return v;
}

std::vector<RunRecord> ablate(const ExperimentConfig& cfg, const Dataset& data, const AblationOptions& opt) {
    if (cfg.seeds.size() < 2) throw ConfigError("ablation needs at least two seeds");
    std::vector<AblationVariant> variants;
    for (const auto& v : ablation_variants())
        if (opt.only.empty() || std::find(opt.only.begin(), opt.only.end(), v.name) != opt.only.end())
            variants.push_back(v);
    if (variants.empty()) throw ConfigError("no ablation variant matches the selection");
    const bool any_aux = std::any_of(variants.begin(), variants.end(), [](const auto& v) { return v.audio_aux || v.visual_aux; });

    fs::create_directories(opt.out_dir);
    std::vector<RunRecord> runs;
    for (const auto seed : cfg.seeds) {
        const fs::path seed_dir = opt.out_dir / ("seed" + std::to_string(seed));
        std::optional<Teachers> teachers;
        std::string teacher_error;
        if (any_aux) {
            try {
                say(opt.log, "seed " + std::to_string(seed) + ": training teachers");
                teachers = train_teachers(cfg, data, seed_dir / "teachers", seed, opt.teacher_epochs, opt.log);
            } catch (const Error& e) {
                teacher_error = std::string("teachers failed: ") + e.what();
            }
        }
        for (const auto& v : variants) {
            RunRecord rec;
            rec.config = v.name;
            rec.seed = seed;
            try {
                if ((v.audio_aux || v.visual_aux) && !teachers) throw DataError(teacher_error);
                ExperimentConfig c = cfg;
                c.ablation = {v.audio_aux, v.visual_aux, v.time_masking};
                c.seed = seed;
                TrainOptions o;
                o.out_dir = seed_dir / v.name;
                o.seed = seed;
                o.teachers = teachers ? &*teachers : nullptr;
                o.log = opt.log;
                say(opt.log, "seed " + std::to_string(seed) + ": training " + v.name);
                const TrainResult tr = train(c, data, o);
                LoadedModel m = load_model(tr.final_checkpoint);
                const auto dev = decode_split(m, data, "dev", c.decode);
                const auto test = decode_split(m, data, "test", c.decode);
                write_decodes(o.out_dir / "dev.decode.jsonl", dev);
                write_decodes(o.out_dir / "test.decode.jsonl", test);
                rec.dev_cer = evaluate(dev, data.dev).cer.rate() * 100;
                const Evaluation te = evaluate(test, data.test);
                rec.test_cer = te.cer.rate() * 100;
                rec.test_wer = te.wer.rate() * 100;
                std::ostringstream os;
                os << "seed " << seed << " " << v.name << ": dev CER " << std::fixed << std::setprecision(2)
                   << rec.dev_cer << "%, test CER " << rec.test_cer << "%";
                say(opt.log, os.str());
            } catch (const Error& e) {
                rec.status = e.what();
                say(opt.log, "seed " + std::to_string(seed) + " " + v.name + " failed: " + e.what());
            }
            runs.push_back(rec);
            write_runs_csv(opt.out_dir / "runs.csv", runs);
        }
    }
    std::ofstream(opt.out_dir / "report.txt") << render_report(runs, "test_cer");
    return runs;
}

void write_runs_csv(const fs::path& path, const std::vector<RunRecord>& runs) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path.string());
    os << "config,seed,dev_cer,test_cer,test_wer,status\n";
    os << std::setprecision(17);
    for (const auto& r : runs) {
        std::string status = r.status;
        std::replace(status.begin(), status.end(), ',', ';');
        std::replace(status.begin(), status.end(), '\n', ' ');
        os << r.config << ',' << r.seed << ',' << r.dev_cer << ',' << r.test_cer << ',' << r.test_wer << ',' << status
           << '\n';
    }
}

std::vector<RunRecord> read_runs_csv(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path.string());
    std::string line;
    std::getline(is, line);
    if (line.rfind("config,seed", 0) != 0) throw DataError(path.string() + " is not a runs table");
    std::vector<RunRecord> out;
    int n = 1;
    while (std::getline(is, line)) {
        ++n;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        for (int i = 0; i < 5 && std::getline(ss, cell, ','); ++i) f.push_back(cell);
        std::getline(ss, cell);
        f.push_back(cell);
        if (f.size() != 6) throw DataError(path.string() + ":" + std::to_string(n) + ": expected 6 columns");
        try {
            out.push_back({f[0], std::stoull(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), f[5]});
        } catch (const std::exception&) {
            throw DataError(path.string() + ":" + std::to_string(n) + ": malformed number");
        }
    }
    return out;
}

namespace {

double metric_of(const RunRecord& r, const std::string& metric) {
    if (metric == "test_cer") return r.test_cer;
    if (metric == "dev_cer") return r.dev_cer;
    if (metric == "test_wer") return r.test_wer;
    throw ConfigError("unknown report metric '" + metric + "' (test_cer, dev_cer, test_wer)");
}

}  // namespace

std::map<std::string, RunSummary> summarize_by_config(const std::vector<RunRecord>& runs, const std::string& metric) {
    std::map<std::string, std::vector<double>> values;
    for (const auto& r : runs)
        if (r.status == "ok") values[r.config].push_back(metric_of(r, metric));
    std::map<std::string, RunSummary> out;
    for (const auto& [k, v] : values) out[k] = summarize_runs(v);
    return out;
}

std::string render_report(const std::vector<RunRecord>& runs, const std::string& metric) {
    std::vector<std::string> order;
    for (const auto& r : runs)
        if (std::find(order.begin(), order.end(), r.config) == order.end()) order.push_back(r.config);
    const auto summary = summarize_by_config(runs, metric);
    std::size_t width = 13;
    for (const auto& c : order) width = std::max(width, c.size());

    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width)) << "Configuration" << "  " << "Mean±Std" << std::string(6, ' ')
       << "Best  (" << metric << ", %)\n";
    os << std::string(width + 30, '-') << '\n';
    for (const auto& c : order) {
        os << std::left << std::setw(static_cast<int>(width)) << c << "  ";
        const auto it = summary.find(c);
        std::int64_t failed = 0;
        for (const auto& r : runs) failed += r.config == c && r.status != "ok";
        if (it == summary.end()) {
            os << "failed";
        } else {
            std::ostringstream ms;
            ms << std::fixed << std::setprecision(1) << it->second.mean << "±" << it->second.std;
            // setw counts bytes; "±" is two.
            os << ms.str() << std::string(ms.str().size() < 15 ? 15 - ms.str().size() : 1, ' ') << std::fixed
               << std::setprecision(1) << it->second.best;
        }
        if (failed) os << "  (" << failed << " run" << (failed > 1 ? "s" : "") << " failed)";
        os << '\n';
    }
    return os.str();
}

}  // namespace vsr
