#include "vsr/optim.hpp"

#include <algorithm>
#include <cmath>

#include "vsr/errors.hpp"

namespace vsr {

Scalar learning_rate(const ScheduleConfig& cfg, std::int64_t step) {
    if (step < 1) throw ContractError("learning rate step must be >= 1");
    if (cfg.warmup < 1) throw ConfigError("warmup must be >= 1");
    const double s = static_cast<double>(step), w = static_cast<double>(cfg.warmup);
    return static_cast<Scalar>(cfg.peak_lr * std::min(s / w, std::sqrt(w / s)));
}

Adam::Adam(nn::NamedTensors params, AdamConfig cfg, ScheduleConfig schedule)
    : params_(std::move(params)), cfg_(cfg), schedule_(schedule) {
    for (const auto& [name, t] : params_) {
        m_.emplace_back(static_cast<std::size_t>(t.numel()), Scalar(0));
        v_.emplace_back(static_cast<std::size_t>(t.numel()), Scalar(0));
    }
}

Scalar Adam::step() {
    ++step_;
    double norm2 = 0;
    for (const auto& [name, t] : params_) {
        if (!t.has_grad()) continue;
        for (Scalar g : t.grad()) {
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient in parameter '" + name + "' at step " + std::to_string(step_));
            }
            norm2 += static_cast<double>(g) * g;
        }
    }
    Scalar clip = 1;
    if (cfg_.grad_clip > 0) {
        const double norm = std::sqrt(norm2);
        if (norm > cfg_.grad_clip) clip = static_cast<Scalar>(cfg_.grad_clip / norm);
    }
    const Scalar lr = learning_rate(schedule_, step_);
    const Scalar c1 = Scalar(1) - std::pow(cfg_.beta1, static_cast<Scalar>(step_));
    const Scalar c2 = Scalar(1) - std::pow(cfg_.beta2, static_cast<Scalar>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& t = params_[i].second;
        if (!t.has_grad()) continue;
        auto g = t.grad();
        auto w = t.mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const Scalar gj = g[j] * clip;
            m[j] = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * gj;
            v[j] = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * gj * gj;
            w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
        }
    }
    return lr;
}

std::vector<Scalar> Adam::export_moments() const {
    std::vector<Scalar> out;
    for (std::size_t i = 0; i < m_.size(); ++i) {
        out.insert(out.end(), m_[i].begin(), m_[i].end());
        out.insert(out.end(), v_[i].begin(), v_[i].end());
    }
    return out;
}

void Adam::import_moments(const std::vector<Scalar>& moments, std::int64_t step) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < m_.size(); ++i) {
        const std::size_t n = m_[i].size();
        if (pos + 2 * n > moments.size()) throw DataError("optimizer state too short");
        std::copy_n(moments.begin() + static_cast<std::ptrdiff_t>(pos), n, m_[i].begin());
        std::copy_n(moments.begin() + static_cast<std::ptrdiff_t>(pos + n), n, v_[i].begin());
        pos += 2 * n;
    }
    if (pos != moments.size()) throw DataError("optimizer state size mismatch");
    step_ = step;
}

}  // namespace vsr
