#pragma once

#include <string>
#include <vector>

#include "vsr/nn.hpp"

namespace vsr {

struct ScheduleConfig {
    Scalar peak_lr = 4e-4;
    std::int64_t warmup = 25000;
};

// peak * min(step / warmup, sqrt(warmup / step)).
Scalar learning_rate(const ScheduleConfig& cfg, std::int64_t step);

struct AdamConfig {
    Scalar beta1 = 0.9;
    Scalar beta2 = 0.98;
    Scalar eps = 1e-9;
    Scalar grad_clip = 0;  // global norm; 0 disables
};

class Adam {
public:
    Adam(nn::NamedTensors params, AdamConfig cfg, ScheduleConfig schedule);

    // Applies one update from the accumulated gradients and returns the
    // learning rate used. Parameters without a gradient are skipped.
    Scalar step();
    std::int64_t step_count() const { return step_; }

    // Moments, flattened in parameter order, for checkpointing.
    std::vector<Scalar> export_moments() const;
    void import_moments(const std::vector<Scalar>& moments, std::int64_t step);

private:
    nn::NamedTensors params_;
    AdamConfig cfg_;
    ScheduleConfig schedule_;
    std::int64_t step_ = 0;
    std::vector<std::vector<Scalar>> m_, v_;
};

}  // namespace vsr
