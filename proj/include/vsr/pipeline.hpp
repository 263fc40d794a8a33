#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vsr/augment.hpp"
#include "vsr/checkpoint.hpp"
#include "vsr/config.hpp"
#include "vsr/corpus.hpp"
#include "vsr/metrics.hpp"
#include "vsr/model.hpp"

namespace vsr {

namespace fs = std::filesystem;

using LogFn = std::function<void(const std::string&)>;

struct Dataset {
    fs::path directory;
    CorpusOptions options;
    Vocabulary vocab;
    std::vector<Utterance> train, dev, test;
    bool has_audio = false;
    bool image = false;

    static Dataset load(const fs::path& dir);
    const std::vector<Utterance>& split(const std::string& name) const;
    std::int64_t visual_dim() const;
    std::int64_t audio_dim() const;
};

// Normalisation statistics from the training split.
NormStats visual_stats(const Dataset& data);
NormStats audio_stats(const Dataset& data);
nlohmann::json stats_to_json(const NormStats& s);
NormStats stats_from_json(const nlohmann::json& j);

enum class Role { Student, AsrTeacher, VsrTeacher };
std::string to_string(Role role);

// A trained model with what is needed to feed it.
struct LoadedModel {
    std::unique_ptr<VsrModel> model;
    Checkpoint checkpoint;
    NormStats stats;  // input normalisation
    std::string characters;
    Role role = Role::Student;
};
LoadedModel load_model(const fs::path& path);

struct Teachers {
    LoadedModel asr;
    LoadedModel vsr;
};
Teachers load_teachers(const fs::path& dir);

struct EpochLog {
    std::int64_t epoch = 0;
    std::int64_t stage = 0;
    std::int64_t steps = 0;
    std::int64_t utterances = 0;
    double loss = 0, ctc = 0, att = 0, aux_audio = 0, aux_visual = 0;
    double lr = 0;
    double seconds = 0;
};

struct TrainOptions {
    fs::path out_dir;
    std::uint64_t seed = 1;
    Role role = Role::Student;
    const Teachers* teachers = nullptr;
    std::optional<std::int64_t> epochs;  // overrides the config
    LogFn log;
};

struct TrainResult {
    fs::path final_checkpoint;  // averaged model
    std::vector<fs::path> epoch_checkpoints;  // those kept
    std::vector<EpochLog> epochs;
    std::int64_t steps = 0;
    double first_batch_loss = 0;
};

// Builds the model for `role` from the config and dataset dimensions.
ModelSpec model_spec(const ExperimentConfig& cfg, const Dataset& data, Role role);

// Curriculum training; one checkpoint per epoch, the last train.average_last
// kept and averaged into model.vsrc.
TrainResult train(const ExperimentConfig& cfg, const Dataset& data, const TrainOptions& options);

// ASR teacher on audio, VSR teacher on video; writes asr/ and vsr/ under out_dir.
Teachers train_teachers(const ExperimentConfig& cfg, const Dataset& data, const fs::path& out_dir, std::uint64_t seed,
                        std::optional<std::int64_t> epochs = std::nullopt, const LogFn& log = {});

// Character LM on the training transcripts.
fs::path train_lm(const ExperimentConfig& cfg, const Dataset& data, const fs::path& out_dir, std::uint64_t seed,
                  const LogFn& log = {});
std::unique_ptr<CharLm> load_lm(const fs::path& path);

struct DecodeRecord {
    std::string id;
    std::string hypothesis;
    std::string reference;
    double combined = 0, ctc = 0, att = 0, lm = 0;
};

// Beam search over one split, in manifest order.
std::vector<DecodeRecord> decode_split(LoadedModel& model, const Dataset& data, const std::string& split,
                                       const DecodeConfig& decode, CharLm* lm = nullptr);
void write_decodes(const fs::path& path, const std::vector<DecodeRecord>& records);
std::vector<DecodeRecord> read_decodes(const fs::path& path);

struct Evaluation {
    CorpusScore cer;
    CorpusScore wer;
};
Evaluation evaluate(const std::vector<DecodeRecord>& records, const std::vector<Utterance>& references);

// ---- ablation ----

struct AblationVariant {
    std::string name;
    bool audio_aux, visual_aux, time_masking;
};
const std::vector<AblationVariant>& ablation_variants();

struct RunRecord {
    std::string config;
    std::uint64_t seed = 0;
    double dev_cer = 0, test_cer = 0, test_wer = 0;
    std::string status = "ok";  // or the failure message
};

struct AblationOptions {
    fs::path out_dir;
    std::vector<std::string> only;  // variant names; empty runs all six
    std::optional<std::int64_t> teacher_epochs;
    LogFn log;
};

std::vector<RunRecord> ablate(const ExperimentConfig& cfg, const Dataset& data, const AblationOptions& options);

void write_runs_csv(const fs::path& path, const std::vector<RunRecord>& runs);
std::vector<RunRecord> read_runs_csv(const fs::path& path);

// "Mean±Std / Best" table, one row per configuration in first-seen order.
// metric: test_cer, dev_cer or test_wer; values in percent.
std::string render_report(const std::vector<RunRecord>& runs, const std::string& metric = "test_cer");
std::map<std::string, RunSummary> summarize_by_config(const std::vector<RunRecord>& runs, const std::string& metric);

}  // namespace vsr
