#include <fstream>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "vsr/errors.hpp"
#include "vsr/ops.hpp"
#include "vsr/pipeline.hpp"

using namespace vsr;

namespace {

struct Fixture {
    fs::path root;
    Dataset data;
    ExperimentConfig cfg;

    Fixture() {
        root = fs::temp_directory_path() / ("vsr_pipe_" + std::to_string(::getpid()));
        fs::remove_all(root);
        CorpusOptions o;
        o.seed = 4;
        o.size = 30;
        o.visual_dim = 6;
        o.audio_dim = 6;
        o.min_chars = 3;
        o.max_chars = 8;
        o.visual_sigma = 0.1;
        o.audio_sigma = 0.1;
        generate_corpus(o, root / "corpus");
        data = Dataset::load(root / "corpus");
        cfg = make_preset("desk");
        for (auto [k, v] : std::vector<std::pair<std::string, std::string>>{
                 {"encoder.blocks", "1"}, {"encoder.model_dim", "8"}, {"encoder.ff_dim", "16"},
                 {"encoder.head_dim", "4"}, {"encoder.conv_kernel", "3"}, {"encoder.tap_layer", "1"},
                 {"decoder.blocks", "1"}, {"decoder.model_dim", "8"}, {"decoder.ff_dim", "16"},
                 {"decoder.head_dim", "4"}, {"train.epochs", "2"}, {"train.teacher_epochs", "1"},
                 {"train.average_last", "2"}, {"train.log_every", "0"}, {"curriculum.caps", "12,1000"},
                 {"curriculum.stage_epochs", "1"}, {"decode.beam_size", "2"}})
            cfg.set(k, v);
        cfg.validate();
    }
    ~Fixture() { fs::remove_all(root); }
};

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE_FIXTURE(Fixture, "plain hybrid loss, curriculum and reproducibility") {
    cfg.set("ablation.audio_aux", "off");
    cfg.set("ablation.visual_aux", "off");
    cfg.set("ablation.time_masking", "off");
    TrainOptions opt;
    opt.out_dir = root / "a";
    auto a = train(cfg, data, opt);
    REQUIRE(a.epochs.size() == 2);
    std::int64_t short_ones = 0;
    for (const auto& u : data.train) short_ones += u.frames() <= 12;
    CHECK(a.epochs[0].stage == 0);
    CHECK(a.epochs[0].utterances == short_ones);
    CHECK(a.epochs[1].utterances == static_cast<std::int64_t>(data.train.size()));
    const double alpha = cfg.loss.ctc;
    for (const auto& e : a.epochs) {
        CHECK(e.aux_audio == 0);
        CHECK(e.aux_visual == 0);
        CHECK(std::abs(e.loss - (alpha * e.ctc + (1 - alpha) * e.att)) < 1e-9);
    }
    opt.out_dir = root / "b";
    auto b = train(cfg, data, opt);
    CHECK(a.first_batch_loss == b.first_batch_loss);
    CHECK(slurp(a.final_checkpoint) == slurp(b.final_checkpoint));
    opt.seed = 2;
    opt.out_dir = root / "c";
    CHECK(train(cfg, data, opt).first_batch_loss != a.first_batch_loss);
}

TEST_CASE_FIXTURE(Fixture, "students need teachers; teachers stay frozen") {
    TrainOptions opt;
    opt.out_dir = root / "s";
    CHECK_THROWS_AS(train(cfg, data, opt), ConfigError);

    Teachers t = train_teachers(cfg, data, root / "teachers", 1);
    CHECK(t.asr.role == Role::AsrTeacher);
    CHECK(t.vsr.role == Role::VsrTeacher);
    VsrModel student(model_spec(cfg, data, Role::Student), 3);
    std::vector<std::int64_t> lengths{data.train[0].frames()};
    Tensor x = ops::reshape(data.train[0].visual, {1, data.visual_dim(), lengths[0]});
    ModelOutput out = student.encode(x, lengths);
    TeacherTargets targets;
    targets.visual = t.vsr.model->teacher_features(x, lengths);
    targets.visual_lengths = lengths;
    CHECK_FALSE(targets.visual.requires_grad());
    Tensor loss = aux_loss(out.tap, out.lengths, targets, student.predictors(), {0.1, 0, 1});
    student.zero_grad();
    t.vsr.model->zero_grad();
    backward(loss);
    for (const auto& [name, p] : t.vsr.model->named_parameters()) CHECK_MESSAGE(!p.has_grad(), name);
    for (const auto& [name, p] : student.named_parameters())
        if (name.rfind("h_a.", 0) == 0) CHECK_MESSAGE(!p.has_grad(), name);

    opt.teachers = &t;
    auto r = train(cfg, data, opt);
    CHECK(r.epochs.back().aux_visual > 0);
    CHECK(r.epochs.back().aux_audio > 0);
    LoadedModel m = load_model(r.final_checkpoint);
    auto recs = decode_split(m, data, "dev", cfg.decode);
    CHECK(recs.size() == data.dev.size());
    write_decodes(root / "dev.jsonl", recs);
    auto back = read_decodes(root / "dev.jsonl");
    REQUIRE(back.size() == recs.size());
    CHECK(back[0].hypothesis == recs[0].hypothesis);
    auto ev = evaluate(back, data.dev);
    CHECK(ev.cer.total.rate() >= 0);
}

TEST_CASE("runs table and report") {
    std::vector<RunRecord> runs;
    for (std::uint64_t s = 1; s <= 2; ++s)
        for (const auto& v : ablation_variants()) runs.push_back({v.name, s, 10.0 * s, 12.0 * s, 30, "ok"});
    runs.push_back({"full", 3, 0, 0, 0, "non-finite loss at step 9"});
    auto path = fs::temp_directory_path() / ("vsr_runs_" + std::to_string(::getpid()) + ".csv");
    write_runs_csv(path, runs);
    auto back = read_runs_csv(path);
    REQUIRE(back.size() == runs.size());
    CHECK(back[3].config == runs[3].config);
    CHECK(back[3].test_cer == runs[3].test_cer);
    CHECK(back.back().status == runs.back().status);
    fs::remove(path);

    auto by = summarize_by_config(runs, "test_cer");
    CHECK(by.size() == 6);
    CHECK(std::abs(by["full"].mean - 18) < 1e-9);
    CHECK(std::abs(by["full"].best - 12) < 1e-9);
    const std::string report = render_report(runs);
    std::int64_t rows = 0;
    for (const auto& v : ablation_variants()) rows += report.find("\n" + v.name + " ") != std::string::npos;
    CHECK(rows == 6);
    CHECK(report.find("18.0") != std::string::npos);
    CHECK(report.find("1 run failed") != std::string::npos);
}
