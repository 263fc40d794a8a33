#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "vsr/checkpoint.hpp"
#include "vsr/config.hpp"
#include "vsr/errors.hpp"
#include "vsr/pipeline.hpp"

using namespace vsr;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4 };

// Shared experiment options: a config file, a preset, and per-key overrides.
struct ExperimentArgs {
    std::string config_file;
    std::string preset;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flags;  // --section.key value

    void attach(CLI::App* app) {
        app->add_option("--config", config_file, "INI config file ([section] key = value)");
        app->add_option("--preset", preset, "base preset: large or desk");
        app->add_option("--set", sets, "override, section.key=value (repeatable)");
        for (const auto& key : ExperimentConfig::keys()) {
            if (key == "experiment.preset") continue;
            app->add_option("--" + key, flags[key], "config " + key)->group("Config keys");
        }
    }

    ExperimentConfig resolve() const {
        std::vector<std::pair<std::string, std::string>> overrides;
        if (!preset.empty()) overrides.emplace_back("experiment.preset", preset);
        for (const auto& [k, v] : flags)
            if (!v.empty()) overrides.emplace_back(k, v);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
            overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
        }
        std::vector<std::pair<std::string, std::string>> entries;
        if (!config_file.empty()) {
            std::ifstream is(config_file);
            if (!is) throw ConfigError("cannot open config file " + config_file);
            std::stringstream ss;
            ss << is.rdbuf();
            entries = parse_ini(ss.str(), config_file);
        }
        // A preset given on the command line replaces the file's preset but
        // keeps the file's other keys.
        entries.insert(entries.end(), overrides.begin(), overrides.end());
        return config_from_entries(entries);
    }
};

void log_line(const std::string& msg) { std::cerr << msg << std::endl; }

std::string pct(double v) {
    if (std::isnan(v)) return "undefined";
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v * 100 << "%";
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vsr: lipreading experiments with auxiliary prediction tasks"};
    app.require_subcommand(1);

    // generate-data
    CorpusOptions corpus;
    std::string corpus_out, corpus_mode = "feature";
    bool no_audio = false;
    auto* gen = app.add_subcommand("generate-data", "write a synthetic corpus");
    gen->add_option("--out", corpus_out, "output directory")->required();
    gen->add_option("--seed", corpus.seed);
    gen->add_option("--size", corpus.size, "number of utterances");
    gen->add_option("--mode", corpus_mode, "feature or image");
    gen->add_option("--language", corpus.language);
    gen->add_option("--alphabet", corpus.alphabet);
    gen->add_option("--merge-groups", corpus.merge_groups, "viseme groups, e.g. bpm,fv,dt,gk");
    gen->add_option("--visual-sigma", corpus.visual_sigma);
    gen->add_option("--audio-sigma", corpus.audio_sigma);
    gen->add_option("--visual-dim", corpus.visual_dim);
    gen->add_option("--audio-dim", corpus.audio_dim);
    gen->add_option("--min-chars", corpus.min_chars);
    gen->add_option("--max-chars", corpus.max_chars);
    gen->add_option("--min-frames-per-char", corpus.min_frames_per_char);
    gen->add_option("--max-frames-per-char", corpus.max_frames_per_char);
    gen->add_option("--canvas", corpus.canvas, "image mode frame size");
    gen->add_option("--dev-fraction", corpus.dev_fraction);
    gen->add_option("--test-fraction", corpus.test_fraction);
    gen->add_flag("--no-audio", no_audio, "omit the audio channel");

    std::string data_dir, out_dir, teachers_dir, model_path, lm_path, split = "test", decodes, unit = "char";
    std::uint64_t seed = 0;
    std::int64_t epochs = 0;

    ExperimentArgs teach_args, train_args, lm_args, dec_args, abl_args, eval_args;

    auto* teach = app.add_subcommand("train-teachers", "train the frozen ASR and VSR teachers");
    teach->add_option("--data", data_dir)->required();
    teach->add_option("--out", out_dir)->required();
    teach->add_option("--epochs", epochs, "override train.teacher_epochs");
    teach_args.attach(teach);

    auto* tr = app.add_subcommand("train", "train the VSR model");
    tr->add_option("--data", data_dir)->required();
    tr->add_option("--out", out_dir)->required();
    tr->add_option("--teachers", teachers_dir, "directory from train-teachers");
    train_args.attach(tr);

    auto* trlm = app.add_subcommand("train-lm", "train the character language model");
    trlm->add_option("--data", data_dir)->required();
    trlm->add_option("--out", out_dir)->required();
    lm_args.attach(trlm);

    auto* dec = app.add_subcommand("decode", "beam-search decode one split");
    dec->add_option("--model", model_path)->required();
    dec->add_option("--data", data_dir)->required();
    dec->add_option("--split", split);
    dec->add_option("--out", decodes, "decodes JSONL")->required();
    dec->add_option("--lm", lm_path, "language model checkpoint");
    dec_args.attach(dec);

    auto* ev = app.add_subcommand("evaluate", "score decodes against references");
    ev->add_option("--decodes", decodes)->required();
    ev->add_option("--data", data_dir)->required();
    ev->add_option("--split", split);
    ev->add_option("--unit", unit, "char or word; both are always printed")->check(CLI::IsMember({"char", "word"}));

    std::vector<std::string> inputs;
    auto* avg = app.add_subcommand("average-checkpoints", "element-wise mean of checkpoints");
    avg->add_option("inputs", inputs)->required();
    avg->add_option("--out", model_path)->required();

    std::vector<std::string> only;
    std::int64_t teacher_epochs = 0;
    auto* abl = app.add_subcommand("ablate", "run the six ablation configurations over every seed");
    abl->add_option("--data", data_dir)->required();
    abl->add_option("--out", out_dir)->required();
    abl->add_option("--only", only, "subset of variant names");
    abl->add_option("--teacher-epochs", teacher_epochs);
    abl_args.attach(abl);

    std::string runs_csv, metric = "test_cer", report_out;
    auto* rep = app.add_subcommand("report", "render a runs table as Mean±Std / Best");
    rep->add_option("--runs", runs_csv, "runs.csv from ablate")->required();
    rep->add_option("--metric", metric)->check(CLI::IsMember({"test_cer", "dev_cer", "test_wer"}));
    rep->add_option("--out", report_out, "also write the table here");

    auto* show = app.add_subcommand("show-config", "print the resolved configuration");
    ExperimentArgs show_args;
    show_args.attach(show);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*gen) {
            corpus.mode = parse_corpus_mode(corpus_mode);
            corpus.with_audio = !no_audio;
            const CorpusSummary s = generate_corpus(corpus, corpus_out);
            for (const auto& w : s.warnings) log_line("warning: " + w);
            std::cout << "wrote " << s.directory.string() << ": train " << s.train << ", dev " << s.dev << ", test "
                      << s.test << "\n";
        } else if (*teach) {
            const ExperimentConfig cfg = teach_args.resolve();
            const Dataset data = Dataset::load(data_dir);
            train_teachers(cfg, data, out_dir, cfg.seed,
                           epochs > 0 ? std::optional<std::int64_t>(epochs) : std::nullopt, log_line);
            std::cout << "teachers written to " << out_dir << "\n";
        } else if (*tr) {
            const ExperimentConfig cfg = train_args.resolve();
            const Dataset data = Dataset::load(data_dir);
            std::optional<Teachers> teachers;
            if (!teachers_dir.empty()) teachers = load_teachers(teachers_dir);
            TrainOptions o;
            o.out_dir = out_dir;
            o.seed = cfg.seed;
            o.teachers = teachers ? &*teachers : nullptr;
            o.log = log_line;
            const TrainResult r = train(cfg, data, o);
            std::cout << "model: " << r.final_checkpoint.string() << " (" << r.steps << " steps)\n";
        } else if (*trlm) {
            const ExperimentConfig cfg = lm_args.resolve();
            const Dataset data = Dataset::load(data_dir);
            std::cout << "lm: " << train_lm(cfg, data, out_dir, cfg.seed, log_line).string() << "\n";
        } else if (*dec) {
            const ExperimentConfig cfg = dec_args.resolve();
            const Dataset data = Dataset::load(data_dir);
            LoadedModel m = load_model(model_path);
            std::unique_ptr<CharLm> lm;
            if (!lm_path.empty()) lm = load_lm(lm_path);
            const auto records = decode_split(m, data, split, cfg.decode, lm.get());
            write_decodes(decodes, records);
            const Evaluation e = evaluate(records, data.split(split));
            std::cout << split << ": CER " << pct(e.cer.rate()) << ", WER " << pct(e.wer.rate()) << " ("
                      << records.size() << " utterances)\n";
        } else if (*ev) {
            const Dataset data = Dataset::load(data_dir);
            const Evaluation e = evaluate(read_decodes(decodes), data.split(split));
            const CorpusScore& main = unit == "char" ? e.cer : e.wer;
            const CorpusScore& other = unit == "char" ? e.wer : e.cer;
            std::cout << (unit == "char" ? "CER " : "WER ") << pct(main.rate()) << " (S " << main.total.substitutions
                      << ", D " << main.total.deletions << ", I " << main.total.insertions << ", N "
                      << main.total.reference_length << "); " << (unit == "char" ? "WER " : "CER ")
                      << pct(other.rate()) << "\n";
        } else if (*avg) {
            std::vector<Checkpoint> cks;
            for (const auto& p : inputs) cks.push_back(Checkpoint::load(p));
            average_checkpoints(cks).save(model_path);
            std::cout << "averaged " << cks.size() << " checkpoints into " << model_path << "\n";
        } else if (*abl) {
            const ExperimentConfig cfg = abl_args.resolve();
            const Dataset data = Dataset::load(data_dir);
            AblationOptions o;
            o.out_dir = out_dir;
            o.only = only;
            if (teacher_epochs > 0) o.teacher_epochs = teacher_epochs;
            o.log = log_line;
            const auto runs = ablate(cfg, data, o);
            std::cout << render_report(runs, "test_cer");
        } else if (*rep) {
            const std::string table = render_report(read_runs_csv(runs_csv), metric);
            std::cout << table;
            if (!report_out.empty()) std::ofstream(report_out) << table;
        } else if (*show) {
            const ExperimentConfig cfg = show_args.resolve();
            std::cout << cfg.to_ini() << "# hash " << cfg.hash() << "\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    }
    return kOk;
}
