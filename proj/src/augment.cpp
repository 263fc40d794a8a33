#include "vsr/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "vsr/errors.hpp"

namespace vsr {

std::int64_t TimeMaskConfig::max_length(std::int64_t frames) const {
    if (max_fraction > 0) return static_cast<std::int64_t>(std::floor(max_fraction * static_cast<Scalar>(frames)));
    return static_cast<std::int64_t>(std::floor(max_seconds * frame_rate + Scalar(1e-9)));
}

std::int64_t TimeMaskConfig::num_masks(std::int64_t frames) const {
    return static_cast<std::int64_t>(std::floor(static_cast<Scalar>(frames) * masks_per_second / frame_rate + Scalar(1e-9)));
}

TimeMaskResult time_mask(const Tensor& sequence, int time_axis, Rng& rng, const TimeMaskConfig& cfg) {
    const Shape& shape = sequence.shape();
    if (time_axis < 0) time_axis += sequence.rank();
    if (time_axis < 0 || time_axis >= sequence.rank()) throw ShapeError("time_mask: bad time axis");
    const std::int64_t T = shape[time_axis];
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < time_axis; ++i) outer *= shape[i];
    for (int i = time_axis + 1; i < sequence.rank(); ++i) inner *= shape[i];

    TimeMaskResult r;
    std::vector<Scalar> data(sequence.data().begin(), sequence.data().end());
    r.mean_frame.assign(static_cast<std::size_t>(outer * inner), 0);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            Scalar s = 0;
            for (std::int64_t t = 0; t < T; ++t) s += data[(o * T + t) * inner + i];
            r.mean_frame[o * inner + i] = s / static_cast<Scalar>(T);
        }
    const std::int64_t n = cfg.num_masks(T);
    const std::int64_t cap = std::min(cfg.max_length(T), T);
    for (std::int64_t m = 0; m < n; ++m) {
        const std::int64_t len = std::uniform_int_distribution<std::int64_t>(0, cap)(rng);
        const std::int64_t start = std::uniform_int_distribution<std::int64_t>(0, T - len)(rng);
        r.log.push_back({start, len});
        for (std::int64_t t = start; t < start + len; ++t)
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < inner; ++i) data[(o * T + t) * inner + i] = r.mean_frame[o * inner + i];
    }
    r.masked = Tensor::from_data(shape, std::move(data));
    return r;
}

Tensor flip_horizontal(const Tensor& frames) {
    if (frames.rank() != 4) throw ShapeError("flip expects [C, T, H, W]");
    const std::int64_t W = frames.dim(3), rows = frames.numel() / W;
    std::vector<Scalar> out(frames.data().begin(), frames.data().end());
    for (std::int64_t r = 0; r < rows; ++r) std::reverse(out.begin() + r * W, out.begin() + (r + 1) * W);
    return Tensor::from_data(frames.shape(), std::move(out));
}

Tensor spatial_augment(const Tensor& frames, std::int64_t crop, bool training, Rng& rng, SpatialLog* log) {
    if (frames.rank() != 4) throw ShapeError("spatial_augment expects [C, T, H, W], got " + shape_str(frames.shape()));
    const std::int64_t C = frames.dim(0), T = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
    if (crop < 1 || crop > H || crop > W) {
        throw ConfigError("crop " + std::to_string(crop) + " larger than canvas " + std::to_string(H) + "x" + std::to_string(W));
    }
    SpatialLog l;
    if (training) {
        l.top = std::uniform_int_distribution<std::int64_t>(0, H - crop)(rng);
        l.left = std::uniform_int_distribution<std::int64_t>(0, W - crop)(rng);
        l.flipped = std::bernoulli_distribution(0.5)(rng);
    } else {
        l.top = (H - crop) / 2;
        l.left = (W - crop) / 2;
    }
    std::vector<Scalar> out(static_cast<std::size_t>(C * T * crop * crop));
    auto in = frames.data();
    for (std::int64_t f = 0; f < C * T; ++f)
        for (std::int64_t y = 0; y < crop; ++y)
            for (std::int64_t x = 0; x < crop; ++x) {
                const std::int64_t sx = l.flipped ? crop - 1 - x : x;
                out[(f * crop + y) * crop + x] = in[(f * H + y + l.top) * W + sx + l.left];
            }
    if (log) *log = l;
    return Tensor::from_data({C, T, crop, crop}, std::move(out));
}

NormStats NormStats::compute(const std::vector<const Tensor*>& training, bool per_dimension, std::string provenance) {
    if (training.empty()) throw DataError("normalisation statistics need at least one training utterance");
    NormStats s;
    s.per_dimension = per_dimension;
    s.provenance = std::move(provenance);
    const std::int64_t D = per_dimension ? training.front()->dim(0) : 1;
    std::vector<double> sum(static_cast<std::size_t>(D), 0), sq(static_cast<std::size_t>(D), 0);
    std::vector<double> count(static_cast<std::size_t>(D), 0);
    for (const Tensor* t : training) {
        auto d = t->data();
        if (per_dimension) {
            if (t->rank() != 2 || t->dim(0) != D) throw ShapeError("per-dimension statistics need [D, T] features");
            const std::int64_t T = t->dim(1);
            for (std::int64_t i = 0; i < D; ++i)
                for (std::int64_t k = 0; k < T; ++k) {
                    const double v = d[i * T + k];
                    sum[i] += v;
                    sq[i] += v * v;
                    count[i] += 1;
                }
        } else {
            for (Scalar v : d) {
                sum[0] += v;
                sq[0] += static_cast<double>(v) * v;
                count[0] += 1;
            }
        }
    }
    for (std::int64_t i = 0; i < D; ++i) {
        const double m = sum[i] / count[i];
        const double var = std::max(0.0, sq[i] / count[i] - m * m);
        double sd = std::sqrt(var);
        if (sd < kEpsilon) {
            sd = kEpsilon;
            ++s.floored;
        }
        s.mean.push_back(static_cast<Scalar>(m));
        s.std.push_back(static_cast<Scalar>(sd));
    }
    return s;
}

void NormStats::save(const std::filesystem::path& path) const {
    nlohmann::json j{{"mean", mean}, {"std", std}, {"per_dimension", per_dimension}, {"provenance", provenance}, {"floored", floored}};
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path.string());
    os << j.dump(1) << '\n';
}

NormStats NormStats::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open normalisation statistics " + path.string());
    try {
        const auto j = nlohmann::json::parse(is);
        NormStats s;
        s.mean = j.at("mean").get<std::vector<Scalar>>();
        s.std = j.at("std").get<std::vector<Scalar>>();
        s.per_dimension = j.at("per_dimension").get<bool>();
        s.provenance = j.at("provenance").get<std::string>();
        s.floored = j.value("floored", std::int64_t{0});
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

Tensor normalize(const Tensor& features, const NormStats& stats) {
    std::vector<Scalar> out(features.data().begin(), features.data().end());
    if (stats.per_dimension) {
        if (features.rank() != 2 || features.dim(0) != static_cast<std::int64_t>(stats.mean.size())) {
            throw ShapeError("features " + shape_str(features.shape()) + " do not match " + std::to_string(stats.mean.size()) +
                             "-dimensional statistics");
        }
        const std::int64_t D = features.dim(0), T = features.dim(1);
        for (std::int64_t d = 0; d < D; ++d)
            for (std::int64_t t = 0; t < T; ++t) out[d * T + t] = (out[d * T + t] - stats.mean[d]) / stats.std[d];
    } else {
        for (auto& v : out) v = (v - stats.mean.at(0)) / stats.std.at(0);
    }
    return Tensor::from_data(features.shape(), std::move(out));
}

}  // namespace vsr
