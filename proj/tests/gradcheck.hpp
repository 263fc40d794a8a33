#pragma once

#include <cmath>
#include <algorithm>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "vsr/tensor.hpp"

namespace vsr::testing {

struct GradCheckResult {
    double rel_error = 0;
    double max_abs = 0;
    std::string worst;  // input index and element of the worst deviation
};

// Central differences of a scalar function of `inputs`, compared with the
// tape gradients. Inputs are perturbed in place and restored. Relative error
// is ||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-12).
inline GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double h = 1e-6,
                                  std::size_t max_elements_per_input = 0) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    backward(f());
    double diff2 = 0, norm2 = 0, worst = -1;
    GradCheckResult r;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto& t = inputs[i];
        const std::vector<Scalar> analytic = t.has_grad() ? std::vector<Scalar>(t.grad().begin(), t.grad().end())
                                                          : std::vector<Scalar>(static_cast<std::size_t>(t.numel()), 0);
        auto data = t.mutable_data();
        std::size_t n = data.size();
        std::size_t stride = 1;
        if (max_elements_per_input > 0 && n > max_elements_per_input) stride = (n + max_elements_per_input - 1) / max_elements_per_input;
        for (std::size_t j = 0; j < n; j += stride) {
            const Scalar saved = data[j];
            data[j] = saved + static_cast<Scalar>(h);
            const double up = f().item();
            data[j] = saved - static_cast<Scalar>(h);
            const double down = f().item();
            data[j] = saved;
            const double numeric = (up - down) / (2 * h);
            const double d = std::abs(numeric - analytic[j]);
            diff2 += d * d;
            norm2 += (std::abs(numeric) + std::abs(analytic[j])) * (std::abs(numeric) + std::abs(analytic[j]));
            if (d > worst) {
                worst = d;
                r.worst = "input " + std::to_string(i) + "[" + std::to_string(j) + "] analytic " +
                          std::to_string(analytic[j]) + " numeric " + std::to_string(numeric);
            }
        }
    }
    r.max_abs = worst;
    r.rel_error = std::sqrt(diff2) / std::max(std::sqrt(norm2), 1e-12);
    return r;
}

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1, double hi = 1) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<Scalar> d(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : d) v = static_cast<Scalar>(u(rng));
    return Tensor::from_data(shape, std::move(d));
}

}  // namespace vsr::testing
