#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vsr/corpus.hpp"

namespace vsr {

struct TimeMaskConfig {
    Scalar frame_rate = 25;
    Scalar max_seconds = 0.4;      // longest mask
    Scalar masks_per_second = 1;
    // Alternative reading: each mask covers up to this fraction of the sequence
    // instead of max_seconds. 0 disables.
    Scalar max_fraction = 0;

    std::int64_t max_length(std::int64_t frames) const;
    std::int64_t num_masks(std::int64_t frames) const;
};

struct MaskSpan {
    std::int64_t start = 0;
    std::int64_t length = 0;
};

struct TimeMaskResult {
    Tensor masked;
    std::vector<MaskSpan> log;
    std::vector<Scalar> mean_frame;  // pre-mask temporal mean, one value per non-time element
};

// Masks spans along `time_axis`, filling them with the sequence's temporal
// mean. Mask lengths are uniform on {0..max_length}, starts uniform over the
// positions where the span fits; spans may overlap.
TimeMaskResult time_mask(const Tensor& sequence, int time_axis, Rng& rng, const TimeMaskConfig& cfg = {});

struct SpatialLog {
    std::int64_t top = 0;
    std::int64_t left = 0;
    bool flipped = false;
};

// frames: [C, T, H, W]. One crop offset and one flip decision for the whole
// sequence. Eval mode: centre crop, no flip.
Tensor spatial_augment(const Tensor& frames, std::int64_t crop, bool training, Rng& rng, SpatialLog* log = nullptr);
// Horizontal flip of [C, T, H, W].
Tensor flip_horizontal(const Tensor& frames);

// Training-set statistics. Feature mode: one mean/std per feature dimension
// (rows of [D, T]); image mode: one scalar pair.
struct NormStats {
    std::vector<Scalar> mean;
    std::vector<Scalar> std;
    bool per_dimension = true;
    std::string provenance;  // which manifest the statistics came from
    std::int64_t floored = 0;  // dimensions whose std hit the epsilon floor

    static constexpr Scalar kEpsilon = 1e-8;

    static NormStats compute(const std::vector<const Tensor*>& training, bool per_dimension, std::string provenance);
    void save(const std::filesystem::path& path) const;
    static NormStats load(const std::filesystem::path& path);
};

// (x - mean) / std with the training-set statistics.
Tensor normalize(const Tensor& features, const NormStats& stats);

}  // namespace vsr
