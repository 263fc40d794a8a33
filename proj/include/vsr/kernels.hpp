#pragma once

#include <array>
#include <cstdint>

#include "vsr/tensor.hpp"

// Dense compute kernels. The default entry points are OpenMP-parallel and
// partition work over output elements only, so every output is reduced in
// the same order regardless of thread count. The serial reference versions
// are the plain textbook loops, kept for tests and benchmarks.
namespace vsr::kernels {

// Row-major C[M,N] (+)= op(A) * op(B); op(A) is [M,K], op(B) is [K,N].
struct GemmArgs {
    bool trans_a = false;
    bool trans_b = false;
    std::int64_t m = 0, n = 0, k = 0;
    const Scalar* a = nullptr;
    std::int64_t lda = 0;
    const Scalar* b = nullptr;
    std::int64_t ldb = 0;
    Scalar* c = nullptr;
    std::int64_t ldc = 0;
    bool accumulate = false;
};

void gemm(const GemmArgs& args);

// Up to three spatial axes; unused trailing axes have extent 1, kernel 1,
// stride 1, padding 0.
struct ConvGeometry {
    std::int64_t batch = 1;
    std::int64_t in_channels = 1;
    std::int64_t out_channels = 1;
    std::int64_t groups = 1;
    std::array<std::int64_t, 3> in{1, 1, 1};
    std::array<std::int64_t, 3> kernel{1, 1, 1};
    std::array<std::int64_t, 3> stride{1, 1, 1};
    std::array<std::int64_t, 3> pad{0, 0, 0};
    std::array<std::int64_t, 3> out{1, 1, 1};

    std::int64_t in_spatial() const { return in[0] * in[1] * in[2]; }
    std::int64_t out_spatial() const { return out[0] * out[1] * out[2]; }
    std::int64_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
};

// Fills `out` from the other fields; throws ConfigError on a non-positive extent.
void resolve_output_extents(ConvGeometry& geom);

// x: [B, Cin, in...], w: [Cout, Cin/groups, kernel...], y: [B, Cout, out...].
void conv_forward(const ConvGeometry& geom, const Scalar* x, const Scalar* w, Scalar* y);
void conv_backward_input(const ConvGeometry& geom, const Scalar* dy, const Scalar* w, Scalar* dx);
void conv_backward_weight(const ConvGeometry& geom, const Scalar* x, const Scalar* dy, Scalar* dw);

int max_threads();

namespace reference {

void gemm(const GemmArgs& args);
void conv_forward(const ConvGeometry& geom, const Scalar* x, const Scalar* w, Scalar* y);

}  // namespace reference

}  // namespace vsr::kernels
