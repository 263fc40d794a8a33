#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vsr/batching.hpp"
#include "vsr/beam_search.hpp"
#include "vsr/decoder.hpp"
#include "vsr/encoder.hpp"
#include "vsr/frontends.hpp"
#include "vsr/losses.hpp"
#include "vsr/optim.hpp"

namespace vsr {

struct ModelConfig {
    std::string frontend = "auto";  // auto: passthrough for features, visual-3d-residual for clips
    double width_multiplier = 0.25;
    ConformerConfig encoder;
    DecoderConfig decoder;
    std::int64_t crop = 88;  // image mode
};

struct TrainConfig {
    std::int64_t epochs = 50;
    std::int64_t batch_size = 16;
    std::int64_t halve_threshold = 220;
    std::int64_t average_last = 10;
    Scalar label_smoothing = 0;
    ScheduleConfig schedule;
    AdamConfig adam;
    // Epochs spent in each curriculum stage; the last stage gets whatever
    // remains of `epochs`.
    std::vector<std::int64_t> stage_epochs{10, 10, 10, 10};
    std::int64_t teacher_epochs = 50;
    std::int64_t log_every = 1;
};

struct AugmentConfig {
    bool time_masking = true;
    TimeMaskConfig mask;
    bool spatial = true;
};

struct AblationSwitches {
    bool audio_aux = true;
    bool visual_aux = true;
    bool time_masking = true;
};

struct LmTrainConfig {
    LmConfig model;
    std::int64_t epochs = 50;
    std::int64_t batch_size = 16;
    Scalar peak_lr = 1e-3;
    std::int64_t warmup = 100;
};

struct ExperimentConfig {
    std::string preset = "large";
    ModelConfig model;
    LossWeights loss;
    TrainConfig train;
    CurriculumSchedule curriculum;
    AugmentConfig augment;
    AblationSwitches ablation;
    DecodeConfig decode = beam_preset("en");
    bool use_lm = false;
    LmTrainConfig lm;
    std::uint64_t seed = 1;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

    // Loss weights after the ablation switches are applied.
    LossWeights effective_loss() const;
    bool time_masking_enabled() const { return augment.time_masking && ablation.time_masking; }

    void validate() const;
    // Every key as "section.key" -> value, in registry order.
    std::vector<std::pair<std::string, std::string>> entries() const;
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    static std::vector<std::string> keys();

    // Stable hex digest of entries().
    std::string hash() const;
    std::string to_ini() const;
};

// "large" keeps the full-size defaults; "desk" is the small CPU preset.
ExperimentConfig make_preset(const std::string& name);

// key = value lines under [section] headers; '#' and ';' start comments.
// A top-level or [experiment] "preset" key selects the base preset.
std::vector<std::pair<std::string, std::string>> parse_ini(const std::string& text, const std::string& origin);
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides = {});
ExperimentConfig config_from_entries(const std::vector<std::pair<std::string, std::string>>& entries);

}  // namespace vsr
