#pragma once

#include <string>
#include <vector>

#include "vsr/augment.hpp"
#include "vsr/corpus.hpp"

namespace vsr {

struct CurriculumSchedule {
    std::vector<std::int64_t> caps{100, 150, 300, 450, 600};
    void validate() const;
    std::int64_t cap(std::size_t stage) const;
};

// Utterances with at most cap(stage) frames, in input order.
std::vector<std::size_t> curriculum_filter(const std::vector<std::int64_t>& frames, const CurriculumSchedule& schedule,
                                           std::size_t stage);

struct BatchPlanOptions {
    std::int64_t batch_size = 16;
    std::int64_t halve_threshold = 220;
    std::int64_t max_frames = 0;  // > 0 drops longer utterances
    std::uint64_t seed = 0;
};

struct BatchPlan {
    std::vector<std::vector<std::size_t>> batches;
    std::vector<std::size_t> excluded;  // longer than max_frames
};

// Shuffle, sort by length, cut into batch_size chunks, halve any chunk that
// holds a sequence over halve_threshold, then shuffle the batch order.
BatchPlan make_batches(const std::vector<std::int64_t>& frames, const BatchPlanOptions& options);

// Padded model input for one batch.
struct Batch {
    std::vector<std::string> ids;
    Tensor visual;   // [B, D, T] or [B, 1, T, H, W]
    Tensor visual_clean;  // before time masking; only with keep_clean
    Tensor audio;    // [B, D_a, T_a] or undefined
    std::vector<std::int64_t> lengths;        // visual frames
    std::vector<std::int64_t> audio_lengths;
    std::vector<std::vector<std::int64_t>> transcripts;  // vocabulary ids
    std::vector<std::vector<MaskSpan>> mask_logs;
    std::vector<SpatialLog> spatial_logs;
};

struct CollateOptions {
    bool training = false;
    bool time_masking = false;
    TimeMaskConfig mask;
    std::int64_t crop = 0;  // image mode
    const NormStats* visual_stats = nullptr;
    const NormStats* audio_stats = nullptr;
    bool need_audio = false;
    bool mask_audio = false;  // time-mask the audio channel too (ASR teacher)
    bool keep_clean = false;
};

// Normalises, augments (training only) and zero-pads the selected utterances.
// Augmentation draws from `rng` in batch order.
Batch collate(const std::vector<Utterance>& data, const std::vector<std::size_t>& indices, const CollateOptions& options,
              Rng& rng);

}  // namespace vsr
