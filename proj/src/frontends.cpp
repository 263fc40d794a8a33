#include "vsr/frontends.hpp"

#include <cmath>

#include "vsr/errors.hpp"

namespace vsr {

FrontendKind parse_frontend_kind(const std::string& name) {
    if (name == "visual-3d-residual") return FrontendKind::Visual3dResidual;
    if (name == "audio-1d-residual") return FrontendKind::Audio1dResidual;
    if (name == "audio-1d-cnn") return FrontendKind::Audio1dCnn;
    if (name == "passthrough") return FrontendKind::Passthrough;
    throw ConfigError("unknown front-end kind '" + name +
                      "' (expected visual-3d-residual, audio-1d-residual, audio-1d-cnn, passthrough)");
}

std::string to_string(FrontendKind kind) {
    switch (kind) {
        case FrontendKind::Visual3dResidual: return "visual-3d-residual";
        case FrontendKind::Audio1dResidual: return "audio-1d-residual";
        case FrontendKind::Audio1dCnn: return "audio-1d-cnn";
        case FrontendKind::Passthrough: return "passthrough";
    }
    return "?";
}

std::int64_t scaled_channels(std::int64_t base, double width) {
    if (!(width > 0)) throw ConfigError("width multiplier must be positive");
    return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(static_cast<double>(base) * width)));
}

std::unique_ptr<Frontend> make_frontend(const FrontendConfig& cfg, Rng& init) {
    switch (cfg.kind) {
        case FrontendKind::Visual3dResidual: return std::make_unique<VisualFrontend>(cfg.width_multiplier, init);
        case FrontendKind::Audio1dResidual: return std::make_unique<AudioResidualFrontend>(cfg.width_multiplier, init);
        case FrontendKind::Audio1dCnn: return std::make_unique<AudioCnnFrontend>(cfg.width_multiplier, init);
        case FrontendKind::Passthrough:
            if (cfg.output_dim <= 0) throw ConfigError("passthrough front-end needs output_dim > 0");
            return std::make_unique<PassthroughFrontend>(cfg.output_dim);
    }
    throw ConfigError("unhandled front-end kind");
}

namespace {

template <class F>
Tensor run_stage(const std::string& name, const Tensor& x, StageTrace* trace, F&& f) {
    Tensor y;
    try {
        y = f(x);
    } catch (const ConfigError& e) {
        throw ConfigError("front-end stage " + name + ": " + e.what());
    }
    if (trace) trace->push_back({name, x.shape(), y.shape()});
    return y;
}

ops::ConvOptions same3(std::int64_t stride) { return {{stride}, {1}, 1}; }

}  // namespace

// ---- residual unit ----

ResidualUnit::ResidualUnit(int dims, std::int64_t in, std::int64_t out, std::int64_t stride, Rng& init)
    : conv1_(in, out, std::vector<std::int64_t>(dims, 3), same3(stride), init, false),
      conv2_(out, out, std::vector<std::int64_t>(dims, 3), same3(1), init, false),
      bn1_(out),
      bn2_(out) {
    register_module("conv1", conv1_);
    register_module("bn1", bn1_);
    register_module("conv2", conv2_);
    register_module("bn2", bn2_);
    if (stride != 1 || in != out) {
        proj_ = std::make_unique<nn::Conv>(in, out, std::vector<std::int64_t>(dims, 1),
                                           ops::ConvOptions{{stride}, {0}, 1}, init, false);
        proj_bn_ = std::make_unique<nn::BatchNorm>(out);
        register_module("proj", *proj_);
        register_module("proj_bn", *proj_bn_);
    }
}

Tensor ResidualUnit::forward(const Tensor& x) {
    Tensor h = ops::swish(bn1_.forward(conv1_.forward(x)));
    h = bn2_.forward(conv2_.forward(h));
    const Tensor shortcut = proj_ ? proj_bn_->forward(proj_->forward(x)) : x;
    return ops::swish(ops::add(h, shortcut));
}

// ---- visual ----

VisualFrontend::VisualFrontend(double width, Rng& init)
    : channels_{scaled_channels(64, width), scaled_channels(128, width), scaled_channels(256, width),
                scaled_channels(512, width)},
      stem_(1, channels_[0], {5, 7, 7}, ops::ConvOptions{{1, 2, 2}, {2, 3, 3}, 1}, init, false),
      stem_bn_(channels_[0]) {
    register_module("stem", stem_);
    register_module("stem_bn", stem_bn_);
    std::int64_t in = channels_[0];
    for (int s = 0; s < 4; ++s) {
        for (int u = 0; u < 2; ++u) {
            const std::int64_t stride = (s > 0 && u == 0) ? 2 : 1;
            units_.push_back(std::make_unique<ResidualUnit>(2, in, channels_[s], stride, init));
            register_module("stage" + std::to_string(s + 2) + "_" + std::to_string(u), *units_.back());
            in = channels_[s];
        }
    }
}

Tensor VisualFrontend::forward(const Tensor& clip, StageTrace* trace) {
    if (clip.rank() != 5 || clip.dim(1) != 1) {
        throw ShapeError("visual front-end expects [B, 1, T, H, W], got " + shape_str(clip.shape()));
    }
    const std::int64_t B = clip.dim(0), T = clip.dim(2);
    if (clip.dim(3) < kMinVisualExtent || clip.dim(4) < kMinVisualExtent) {
        throw ConfigError("stage stem.conv3d: spatial input " + std::to_string(clip.dim(3)) + "x" +
                          std::to_string(clip.dim(4)) + " collapses before the residual stages (minimum " +
                          std::to_string(kMinVisualExtent) + ")");
    }
    Tensor x = run_stage("stem.conv3d", clip, trace, [&](const Tensor& in) {
        return ops::swish(stem_bn_.forward(stem_.forward(in)));
    });
    x = run_stage("stem.maxpool3d", x, trace, [](const Tensor& in) {
        return ops::max_pool(in, {1, 3, 3}, {1, 2, 2}, {0, 1, 1});
    });
    x = run_stage("reshape.frames", x, trace, [&](const Tensor& in) {
        const Tensor p = ops::permute(in, {0, 2, 1, 3, 4});  // [B, T, C, H, W]
        return ops::reshape(p, {B * T, in.dim(1), in.dim(3), in.dim(4)});
    });
    for (int s = 0; s < 4; ++s) {
        x = run_stage("residual" + std::to_string(s + 2), x, trace, [&](const Tensor& in) {
            return units_[2 * s + 1]->forward(units_[2 * s]->forward(in));
        });
    }
    x = run_stage("global_avg_pool", x, trace, [](const Tensor& in) {
        const Tensor flat = ops::reshape(in, {in.dim(0), in.dim(1), in.dim(2) * in.dim(3)});
        return ops::reshape(ops::mean(flat, 2, false), {in.dim(0), in.dim(1), 1, 1});
    });
    x = run_stage("reshape.sequence", x, trace, [&](const Tensor& in) {
        const Tensor seq = ops::reshape(in, {B, T, in.dim(1)});
        return ops::permute(seq, {0, 2, 1});
    });
    return x;
}

// ---- audio ----

namespace {

// Drops the trailing partial 640-sample frame so every stride divides exactly.
Tensor trim_wave(const Tensor& wave) {
    if (wave.rank() != 3 || wave.dim(1) != 1) {
        throw ShapeError("audio front-end expects [B, 1, T_a], got " + shape_str(wave.shape()));
    }
    const std::int64_t ta = wave.dim(2);
    if (ta < kSamplesPerFrame) {
        throw DataError("audio input too short: " + std::to_string(ta) + " samples, need at least " +
                        std::to_string(kSamplesPerFrame));
    }
    const std::int64_t keep = ta / kSamplesPerFrame * kSamplesPerFrame;
    return keep == ta ? wave : ops::slice(wave, 2, 0, keep);
}

}  // namespace

AudioResidualFrontend::AudioResidualFrontend(double width, Rng& init)
    : channels_{scaled_channels(64, width), scaled_channels(128, width), scaled_channels(256, width),
                scaled_channels(512, width)},
      stem_(1, channels_[0], {80}, ops::ConvOptions{{4}, {38}, 1}, init, false),
      stem_bn_(channels_[0]) {
    register_module("stem", stem_);
    register_module("stem_bn", stem_bn_);
    std::int64_t in = channels_[0];
    for (int s = 0; s < 4; ++s) {
        for (int u = 0; u < 2; ++u) {
            const std::int64_t stride = (s > 0 && u == 0) ? 2 : 1;
            units_.push_back(std::make_unique<ResidualUnit>(1, in, channels_[s], stride, init));
            register_module("stage" + std::to_string(s + 2) + "_" + std::to_string(u), *units_.back());
            in = channels_[s];
        }
    }
}

Tensor AudioResidualFrontend::forward(const Tensor& wave, StageTrace* trace) {
    Tensor x = trim_wave(wave);
    x = run_stage("stem.conv1d", x, trace, [&](const Tensor& in) {
        return ops::swish(stem_bn_.forward(stem_.forward(in)));
    });
    for (int s = 0; s < 4; ++s) {
        x = run_stage("residual" + std::to_string(s + 2), x, trace, [&](const Tensor& in) {
            return units_[2 * s + 1]->forward(units_[2 * s]->forward(in));
        });
    }
    return run_stage("avg_pool", x, trace, [](const Tensor& in) { return ops::avg_pool(in, {20}, {20}); });
}

AudioCnnFrontend::AudioCnnFrontend(double width, Rng& init)
    : channels_{scaled_channels(64, width), scaled_channels(128, width), scaled_channels(256, width),
                scaled_channels(512, width)} {
    struct Layer {
        std::int64_t out, kernel, stride, pad;
    };
    const Layer layers[] = {{channels_[0], 80, 4, 38},
                            {channels_[0], 20, 4, 8},
                            {channels_[1], 4, 2, 1},
                            {channels_[2], 4, 2, 1},
                            {channels_[3], 4, 2, 1}};
    std::int64_t in = 1;
    int i = 1;
    for (const auto& l : layers) {
        convs_.push_back(std::make_unique<nn::Conv>(in, l.out, std::vector<std::int64_t>{l.kernel},
                                                    ops::ConvOptions{{l.stride}, {l.pad}, 1}, init, false));
        norms_.push_back(std::make_unique<nn::BatchNorm>(l.out));
        register_module("conv" + std::to_string(i), *convs_.back());
        register_module("bn" + std::to_string(i), *norms_.back());
        in = l.out;
        ++i;
    }
}

Tensor AudioCnnFrontend::forward(const Tensor& wave, StageTrace* trace) {
    Tensor x = trim_wave(wave);
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        x = run_stage("conv" + std::to_string(i + 1), x, trace, [&](const Tensor& in) {
            return ops::swish(norms_[i]->forward(convs_[i]->forward(in)));
        });
    }
    return run_stage("avg_pool", x, trace, [](const Tensor& in) { return ops::avg_pool(in, {5}, {5}); });
}

Tensor PassthroughFrontend::forward(const Tensor& features, StageTrace* trace) {
    if (features.rank() != 3 || features.dim(1) != dim_) {
        throw ShapeError("passthrough front-end expects [B, " + std::to_string(dim_) + ", T], got " +
                         shape_str(features.shape()));
    }
    if (trace) trace->push_back({"identity", features.shape(), features.shape()});
    return features;
}

}  // namespace vsr
