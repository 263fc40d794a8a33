#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vsr/nn.hpp"

namespace vsr {

enum class FrontendKind { Visual3dResidual, Audio1dResidual, Audio1dCnn, Passthrough };

FrontendKind parse_frontend_kind(const std::string& name);
std::string to_string(FrontendKind kind);

struct FrontendConfig {
    FrontendKind kind = FrontendKind::Passthrough;
    // Scales the 64-128-256-512 channel ladder; 1 reproduces it exactly.
    double width_multiplier = 1.0;
    // Passthrough only: expected feature dimension.
    std::int64_t output_dim = 0;
};

// Per-stage record used to check the layer-by-layer shape contract.
struct StageShape {
    std::string stage;
    Shape input;
    Shape output;
};
using StageTrace = std::vector<StageShape>;

// Every front-end maps raw input to a [B, C, T] sequence at 25 frames per second.
class Frontend : public nn::Module {
public:
    virtual Tensor forward(const Tensor& input, StageTrace* trace = nullptr) = 0;
    virtual std::int64_t output_dim() const = 0;
    // Valid output frames for an input of `input_length` samples or frames.
    virtual std::int64_t output_length(std::int64_t input_length) const = 0;
};

std::unique_ptr<Frontend> make_frontend(const FrontendConfig& cfg, Rng& init);

// Audio front-ends emit one frame per this many 16 kHz samples.
inline constexpr std::int64_t kSamplesPerFrame = 640;
// Smallest frame height/width the visual stem accepts.
inline constexpr std::int64_t kMinVisualExtent = 12;

std::int64_t scaled_channels(std::int64_t base, double width);

// Two-conv residual unit with batchnorm and swish; strided units use a
// 1x1 projection shortcut. dims is 1 or 2.
class ResidualUnit : public nn::Module {
public:
    ResidualUnit(int dims, std::int64_t in, std::int64_t out, std::int64_t stride, Rng& init);
    Tensor forward(const Tensor& x);

private:
    nn::Conv conv1_, conv2_;
    nn::BatchNorm bn1_, bn2_;
    std::unique_ptr<nn::Conv> proj_;
    std::unique_ptr<nn::BatchNorm> proj_bn_;
};

class VisualFrontend : public Frontend {
public:
    VisualFrontend(double width, Rng& init);
    // clip: [B, 1, T, H, W] -> [B, C, T].
    Tensor forward(const Tensor& clip, StageTrace* trace = nullptr) override;
    std::int64_t output_dim() const override { return channels_[3]; }
    std::int64_t output_length(std::int64_t frames) const override { return frames; }

private:
    std::int64_t channels_[4];
    nn::Conv stem_;
    nn::BatchNorm stem_bn_;
    std::vector<std::unique_ptr<ResidualUnit>> units_;
};

class AudioResidualFrontend : public Frontend {
public:
    AudioResidualFrontend(double width, Rng& init);
    // wave: [B, 1, T_a] -> [B, C, T_a / 640].
    Tensor forward(const Tensor& wave, StageTrace* trace = nullptr) override;
    std::int64_t output_dim() const override { return channels_[3]; }
    std::int64_t output_length(std::int64_t samples) const override { return samples / kSamplesPerFrame; }

private:
    std::int64_t channels_[4];
    nn::Conv stem_;
    nn::BatchNorm stem_bn_;
    std::vector<std::unique_ptr<ResidualUnit>> units_;
};

class AudioCnnFrontend : public Frontend {
public:
    AudioCnnFrontend(double width, Rng& init);
    Tensor forward(const Tensor& wave, StageTrace* trace = nullptr) override;
    std::int64_t output_dim() const override { return channels_[3]; }
    std::int64_t output_length(std::int64_t samples) const override { return samples / kSamplesPerFrame; }

private:
    std::int64_t channels_[4];
    std::vector<std::unique_ptr<nn::Conv>> convs_;
    std::vector<std::unique_ptr<nn::BatchNorm>> norms_;
};

class PassthroughFrontend : public Frontend {
public:
    explicit PassthroughFrontend(std::int64_t dim) : dim_(dim) {}
    Tensor forward(const Tensor& features, StageTrace* trace = nullptr) override;
    std::int64_t output_dim() const override { return dim_; }
    std::int64_t output_length(std::int64_t frames) const override { return frames; }

private:
    std::int64_t dim_;
};

}  // namespace vsr
