#include "vsr/batching.hpp"

#include <algorithm>
#include <numeric>

#include "vsr/errors.hpp"

namespace vsr {

void CurriculumSchedule::validate() const {
    if (caps.empty()) throw ConfigError("curriculum needs at least one stage");
    for (std::size_t i = 0; i < caps.size(); ++i) {
        if (caps[i] < 1) throw ConfigError("curriculum caps must be positive");
        if (i > 0 && caps[i] <= caps[i - 1]) throw ConfigError("curriculum caps must be strictly increasing");
    }
}

std::int64_t CurriculumSchedule::cap(std::size_t stage) const {
    if (stage >= caps.size()) {
        throw ConfigError("curriculum stage " + std::to_string(stage) + " out of range (" + std::to_string(caps.size()) +
                          " stages)");
    }
    return caps[stage];
}

std::vector<std::size_t> curriculum_filter(const std::vector<std::int64_t>& frames, const CurriculumSchedule& schedule,
                                           std::size_t stage) {
    schedule.validate();
    const std::int64_t cap = schedule.cap(stage);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < frames.size(); ++i)
        if (frames[i] <= cap) out.push_back(i);
    if (out.empty()) {
        throw DataError("curriculum stage " + std::to_string(stage) + " (<= " + std::to_string(cap) +
                        " frames) selects no utterances; regenerate the corpus with shorter transcripts or raise the cap");
    }
    return out;
}

BatchPlan make_batches(const std::vector<std::int64_t>& frames, const BatchPlanOptions& opt) {
    if (opt.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    BatchPlan plan;
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (opt.max_frames > 0 && frames[i] > opt.max_frames) plan.excluded.push_back(i);
        else order.push_back(i);
    }
    Rng rng = make_rng(opt.seed, "batches");
    std::shuffle(order.begin(), order.end(), rng);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frames[a] < frames[b]; });
    for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(opt.batch_size)) {
        const std::size_t end = std::min(order.size(), pos + static_cast<std::size_t>(opt.batch_size));
        std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(pos), order.begin() + static_cast<std::ptrdiff_t>(end));
        const bool too_long = std::any_of(batch.begin(), batch.end(), [&](std::size_t i) { return frames[i] > opt.halve_threshold; });
        if (too_long && batch.size() > 1) {
            const std::size_t half = (batch.size() + 1) / 2;
            plan.batches.emplace_back(batch.begin(), batch.begin() + static_cast<std::ptrdiff_t>(half));
            plan.batches.emplace_back(batch.begin() + static_cast<std::ptrdiff_t>(half), batch.end());
        } else {
            plan.batches.push_back(std::move(batch));
        }
    }
    std::shuffle(plan.batches.begin(), plan.batches.end(), rng);
    return plan;
}

namespace {

// Pads [D, T_i] sequences to [B, D, T_max].
Tensor pad_features(const std::vector<Tensor>& items) {
    const std::int64_t B = static_cast<std::int64_t>(items.size()), D = items.front().dim(0);
    std::int64_t T = 0;
    for (const auto& t : items) {
        if (t.rank() != 2 || t.dim(0) != D) throw DataError("feature dims differ within a batch");
        T = std::max(T, t.dim(1));
    }
    std::vector<Scalar> out(static_cast<std::size_t>(B * D * T), 0);
    for (std::int64_t b = 0; b < B; ++b) {
        const auto d = items[b].data();
        const std::int64_t Ti = items[b].dim(1);
        for (std::int64_t i = 0; i < D; ++i) std::copy_n(d.begin() + i * Ti, Ti, out.begin() + (b * D + i) * T);
    }
    return Tensor::from_data({B, D, T}, std::move(out));
}

// Pads [1, T_i, H, W] clips to [B, 1, T_max, H, W].
Tensor pad_clips(const std::vector<Tensor>& items) {
    const std::int64_t B = static_cast<std::int64_t>(items.size()), H = items.front().dim(2), W = items.front().dim(3);
    std::int64_t T = 0;
    for (const auto& t : items) T = std::max(T, t.dim(1));
    std::vector<Scalar> out(static_cast<std::size_t>(B * T * H * W), 0);
    for (std::int64_t b = 0; b < B; ++b) std::copy(items[b].data().begin(), items[b].data().end(), out.begin() + b * T * H * W);
    return Tensor::from_data({B, 1, T, H, W}, std::move(out));
}

}  // namespace

Batch collate(const std::vector<Utterance>& data, const std::vector<std::size_t>& indices, const CollateOptions& opt,
              Rng& rng) {
    if (indices.empty()) throw ContractError("collate needs at least one utterance");
    Batch batch;
    std::vector<Tensor> visual, clean, audio;
    for (std::size_t idx : indices) {
        const Utterance& u = data.at(idx);
        batch.ids.push_back(u.meta.id);
        batch.transcripts.push_back(u.transcript_ids);
        Tensor v = u.visual;
        if (v.rank() == 4) {
            SpatialLog log;
            if (opt.crop > 0) v = spatial_augment(v, opt.crop, opt.training, rng, &log);
            if (opt.visual_stats) v = normalize(v, *opt.visual_stats);
            batch.spatial_logs.push_back(log);
            if (opt.keep_clean) clean.push_back(v);
            if (opt.training && opt.time_masking) {
                auto m = time_mask(v, 1, rng, opt.mask);
                v = m.masked;
                batch.mask_logs.push_back(std::move(m.log));
            }
        } else {
            if (opt.visual_stats) v = normalize(v, *opt.visual_stats);
            if (opt.keep_clean) clean.push_back(v);
            if (opt.training && opt.time_masking) {
                auto m = time_mask(v, 1, rng, opt.mask);
                v = m.masked;
                batch.mask_logs.push_back(std::move(m.log));
            }
        }
        batch.lengths.push_back(u.frames());
        visual.push_back(v);
        if (opt.need_audio) {
            if (!u.audio.defined()) throw DataError("utterance " + u.meta.id + " has no audio channel");
            Tensor a = opt.audio_stats ? normalize(u.audio, *opt.audio_stats) : u.audio;
            if (opt.training && opt.time_masking && opt.mask_audio) a = time_mask(a, 1, rng, opt.mask).masked;
            batch.audio_lengths.push_back(a.dim(1));
            audio.push_back(a);
        }
    }
    batch.visual = visual.front().rank() == 4 ? pad_clips(visual) : pad_features(visual);
    if (opt.keep_clean) batch.visual_clean = clean.front().rank() == 4 ? pad_clips(clean) : pad_features(clean);
    if (opt.need_audio) batch.audio = pad_features(audio);
    return batch;
}

}  // namespace vsr
