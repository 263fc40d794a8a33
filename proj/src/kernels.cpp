#include "vsr/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "vsr/errors.hpp"

namespace vsr::kernels {

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

// ---- GEMM ----

namespace {

// Copies op(X) into a dense row-major [rows, cols] buffer.
std::vector<Scalar> pack(const Scalar* x, std::int64_t ld, bool trans, std::int64_t rows,
                         std::int64_t cols) {
    std::vector<Scalar> out(static_cast<std::size_t>(rows * cols));
    if (trans) {
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < cols; ++c) out[r * cols + c] = x[c * ld + r];
    } else {
        for (std::int64_t r = 0; r < rows; ++r) std::copy_n(x + r * ld, cols, out.data() + r * cols);
    }
    return out;
}

// 64-byte GCC vector of Scalar; split into narrower registers when needed.
typedef Scalar Vec __attribute__((vector_size(64), aligned(8)));
constexpr std::int64_t kLanes = static_cast<std::int64_t>(64 / sizeof(Scalar));
constexpr std::int64_t kRows = 4;
constexpr std::int64_t kCols = 2 * kLanes;

inline Vec load(const Scalar* p) { return *reinterpret_cast<const Vec*>(p); }
inline void store(Scalar* p, Vec v) { *reinterpret_cast<Vec*>(p) = v; }

// C[0:kRows, 0:kCols] += A * B held in registers.
inline void micro_tile(const Scalar* a, std::int64_t lda, const Scalar* b, std::int64_t ldb, Scalar* c,
                       std::int64_t ldc, std::int64_t k) {
    const Scalar *a0 = a, *a1 = a + lda, *a2 = a + 2 * lda, *a3 = a + 3 * lda;
    Vec c00 = load(c), c01 = load(c + kLanes);
    Vec c10 = load(c + ldc), c11 = load(c + ldc + kLanes);
    Vec c20 = load(c + 2 * ldc), c21 = load(c + 2 * ldc + kLanes);
    Vec c30 = load(c + 3 * ldc), c31 = load(c + 3 * ldc + kLanes);
    for (std::int64_t p = 0; p < k; ++p) {
        const Vec b0 = load(b + p * ldb), b1 = load(b + p * ldb + kLanes);
        c00 += a0[p] * b0;
        c01 += a0[p] * b1;
        c10 += a1[p] * b0;
        c11 += a1[p] * b1;
        c20 += a2[p] * b0;
        c21 += a2[p] * b1;
        c30 += a3[p] * b0;
        c31 += a3[p] * b1;
    }
    store(c, c00), store(c + kLanes, c01);
    store(c + ldc, c10), store(c + ldc + kLanes, c11);
    store(c + 2 * ldc, c20), store(c + 2 * ldc + kLanes, c21);
    store(c + 3 * ldc, c30), store(c + 3 * ldc + kLanes, c31);
}

// Ragged edge: same per-element order, plain loops.
inline void edge_tile(const Scalar* a, std::int64_t lda, const Scalar* b, std::int64_t ldb, Scalar* c,
                      std::int64_t ldc, std::int64_t rows, std::int64_t cols, std::int64_t k) {
    for (std::int64_t r = 0; r < rows; ++r) {
        Scalar* __restrict crow = c + r * ldc;
        for (std::int64_t p = 0; p < k; ++p) {
            const Scalar av = a[r * lda + p];
            const Scalar* __restrict bp = b + p * ldb;
            for (std::int64_t j = 0; j < cols; ++j) crow[j] += av * bp[j];
        }
    }
}

}  // namespace

void gemm(const GemmArgs& g) {
    if (g.m <= 0 || g.n <= 0) return;
    if (!g.accumulate) {
        for (std::int64_t i = 0; i < g.m; ++i) std::fill_n(g.c + i * g.ldc, g.n, Scalar(0));
    }
    if (g.k <= 0) return;

    std::vector<Scalar> a_buf;
    const Scalar* a = g.a;
    std::int64_t lda = g.lda;
    if (g.trans_a) {
        a_buf = pack(g.a, g.lda, true, g.m, g.k);
        a = a_buf.data();
        lda = g.k;
    }
    const std::int64_t m = g.m, n = g.n, k = g.k, ldc = g.ldc;
    const std::int64_t strips = n / kCols, full_n = strips * kCols;

    // B as [strips][k][kCols] panels plus a dense [k, n - full_n] tail.
    std::vector<Scalar> panels(static_cast<std::size_t>(k * full_n));
    std::vector<Scalar> tail(static_cast<std::size_t>(k * (n - full_n)));
    const std::int64_t tail_n = n - full_n;
    for (std::int64_t p = 0; p < k; ++p) {
        for (std::int64_t j = 0; j < n; ++j) {
            const Scalar v = g.trans_b ? g.b[j * g.ldb + p] : g.b[p * g.ldb + j];
            if (j < full_n) panels[static_cast<std::size_t>(((j / kCols) * k + p) * kCols + j % kCols)] = v;
            else tail[static_cast<std::size_t>(p * tail_n + j - full_n)] = v;
        }
    }

    Scalar* c = g.c;
    const std::int64_t row_blocks = (m + kRows - 1) / kRows;
    // Each block of C rows is owned by one thread; k runs ascending for every element.
#pragma omp parallel for schedule(static) if (m * n * k > 32768)
    for (std::int64_t ib = 0; ib < row_blocks; ++ib) {
        const std::int64_t i = ib * kRows;
        const std::int64_t rows = std::min(kRows, m - i);
        const Scalar* ai = a + i * lda;
        Scalar* ci = c + i * ldc;
        for (std::int64_t s = 0; s < strips; ++s) {
            const Scalar* panel = panels.data() + s * k * kCols;
            if (rows == kRows) micro_tile(ai, lda, panel, kCols, ci + s * kCols, ldc, k);
            else edge_tile(ai, lda, panel, kCols, ci + s * kCols, ldc, rows, kCols, k);
        }
        if (tail_n > 0) edge_tile(ai, lda, tail.data(), tail_n, ci + full_n, ldc, rows, tail_n, k);
    }
}

// ---- convolution ----

void resolve_output_extents(ConvGeometry& geom) {
    if (geom.groups <= 0 || geom.in_channels % geom.groups != 0 ||
        geom.out_channels % geom.groups != 0) {
        throw ConfigError("channel counts " + std::to_string(geom.in_channels) + "->" +
                          std::to_string(geom.out_channels) + " not divisible by groups " +
                          std::to_string(geom.groups));
    }
    for (int d = 0; d < 3; ++d) {
        if (geom.stride[d] <= 0) throw ConfigError("convolution stride must be positive");
        const std::int64_t span = geom.in[d] + 2 * geom.pad[d] - geom.kernel[d];
        const std::int64_t o = span < 0 ? 0 : span / geom.stride[d] + 1;
        if (o <= 0) {
            throw ConfigError("convolution output extent on spatial axis " + std::to_string(d) +
                              " is non-positive (in " + std::to_string(geom.in[d]) + ", kernel " +
                              std::to_string(geom.kernel[d]) + ", pad " +
                              std::to_string(geom.pad[d]) + ")");
        }
        geom.out[d] = o;
    }
}

namespace {

constexpr std::int64_t kColumnChunk = 2048;

// Column rows are (cin_g, kz, ky, kx); columns are output positions [p0, p0+pc).
void im2col(const ConvGeometry& g, const Scalar* x, std::int64_t p0, std::int64_t pc, Scalar* col) {
    const std::int64_t cin_g = g.in_channels / g.groups;
    const std::int64_t kv = g.kernel_volume();
    const std::int64_t rows = cin_g * kv;
#pragma omp parallel for schedule(static) if (rows * pc > 65536)
    for (std::int64_t r = 0; r < rows; ++r) {
        const std::int64_t c = r / kv;
        std::int64_t rem = r % kv;
        const std::int64_t kx = rem % g.kernel[2];
        rem /= g.kernel[2];
        const std::int64_t ky = rem % g.kernel[1];
        const std::int64_t kz = rem / g.kernel[1];
        const Scalar* xc = x + c * g.in_spatial();
        Scalar* out = col + r * pc;
        for (std::int64_t q = 0; q < pc; ++q) {
            const std::int64_t p = p0 + q;
            const std::int64_t ox = p % g.out[2];
            const std::int64_t oy = (p / g.out[2]) % g.out[1];
            const std::int64_t oz = p / (g.out[2] * g.out[1]);
            const std::int64_t iz = oz * g.stride[0] - g.pad[0] + kz;
            const std::int64_t iy = oy * g.stride[1] - g.pad[1] + ky;
            const std::int64_t ix = ox * g.stride[2] - g.pad[2] + kx;
            if (iz < 0 || iz >= g.in[0] || iy < 0 || iy >= g.in[1] || ix < 0 || ix >= g.in[2]) {
                out[q] = Scalar(0);
            } else {
                out[q] = xc[(iz * g.in[1] + iy) * g.in[2] + ix];
            }
        }
    }
}

// Scatter-add of columns back into the input layout. Serial over rows: two
// rows can hit the same input element.
void col2im(const ConvGeometry& g, const Scalar* col, std::int64_t p0, std::int64_t pc, Scalar* dx) {
    const std::int64_t cin_g = g.in_channels / g.groups;
    const std::int64_t kv = g.kernel_volume();
    // Channels are disjoint in dx, so parallelise across them.
#pragma omp parallel for schedule(static) if (cin_g * kv * pc > 65536)
    for (std::int64_t c = 0; c < cin_g; ++c) {
        Scalar* dxc = dx + c * g.in_spatial();
        for (std::int64_t kr = 0; kr < kv; ++kr) {
            std::int64_t rem = kr;
            const std::int64_t kx = rem % g.kernel[2];
            rem /= g.kernel[2];
            const std::int64_t ky = rem % g.kernel[1];
            const std::int64_t kz = rem / g.kernel[1];
            const Scalar* in = col + (c * kv + kr) * pc;
            for (std::int64_t q = 0; q < pc; ++q) {
                const std::int64_t p = p0 + q;
                const std::int64_t ox = p % g.out[2];
                const std::int64_t oy = (p / g.out[2]) % g.out[1];
                const std::int64_t oz = p / (g.out[2] * g.out[1]);
                const std::int64_t iz = oz * g.stride[0] - g.pad[0] + kz;
                const std::int64_t iy = oy * g.stride[1] - g.pad[1] + ky;
                const std::int64_t ix = ox * g.stride[2] - g.pad[2] + kx;
                if (iz < 0 || iz >= g.in[0] || iy < 0 || iy >= g.in[1] || ix < 0 || ix >= g.in[2])
                    continue;
                dxc[(iz * g.in[1] + iy) * g.in[2] + ix] += in[q];
            }
        }
    }
}

}  // namespace

void conv_forward(const ConvGeometry& g, const Scalar* x, const Scalar* w, Scalar* y) {
    const std::int64_t cin_g = g.in_channels / g.groups;
    const std::int64_t cout_g = g.out_channels / g.groups;
    const std::int64_t kg = cin_g * g.kernel_volume();
    const std::int64_t P = g.out_spatial();
    std::vector<Scalar> col(static_cast<std::size_t>(kg * std::min(P, kColumnChunk)));
    for (std::int64_t b = 0; b < g.batch; ++b) {
        for (std::int64_t grp = 0; grp < g.groups; ++grp) {
            const Scalar* xg = x + (b * g.in_channels + grp * cin_g) * g.in_spatial();
            Scalar* yg = y + (b * g.out_channels + grp * cout_g) * P;
            const Scalar* wg = w + grp * cout_g * kg;
            for (std::int64_t p0 = 0; p0 < P; p0 += kColumnChunk) {
                const std::int64_t pc = std::min(kColumnChunk, P - p0);
                im2col(g, xg, p0, pc, col.data());
                gemm({.m = cout_g, .n = pc, .k = kg, .a = wg, .lda = kg, .b = col.data(), .ldb = pc,
                      .c = yg + p0, .ldc = P});
            }
        }
    }
}

void conv_backward_input(const ConvGeometry& g, const Scalar* dy, const Scalar* w, Scalar* dx) {
    const std::int64_t cin_g = g.in_channels / g.groups;
    const std::int64_t cout_g = g.out_channels / g.groups;
    const std::int64_t kg = cin_g * g.kernel_volume();
    const std::int64_t P = g.out_spatial();
    std::vector<Scalar> col(static_cast<std::size_t>(kg * std::min(P, kColumnChunk)));
    for (std::int64_t b = 0; b < g.batch; ++b) {
        for (std::int64_t grp = 0; grp < g.groups; ++grp) {
            Scalar* dxg = dx + (b * g.in_channels + grp * cin_g) * g.in_spatial();
            const Scalar* dyg = dy + (b * g.out_channels + grp * cout_g) * P;
            const Scalar* wg = w + grp * cout_g * kg;
            for (std::int64_t p0 = 0; p0 < P; p0 += kColumnChunk) {
                const std::int64_t pc = std::min(kColumnChunk, P - p0);
                gemm({.trans_a = true, .m = kg, .n = pc, .k = cout_g, .a = wg, .lda = kg,
                      .b = dyg + p0, .ldb = P, .c = col.data(), .ldc = pc});
                col2im(g, col.data(), p0, pc, dxg);
            }
        }
    }
}

void conv_backward_weight(const ConvGeometry& g, const Scalar* x, const Scalar* dy, Scalar* dw) {
    const std::int64_t cin_g = g.in_channels / g.groups;
    const std::int64_t cout_g = g.out_channels / g.groups;
    const std::int64_t kg = cin_g * g.kernel_volume();
    const std::int64_t P = g.out_spatial();
    std::vector<Scalar> col(static_cast<std::size_t>(kg * std::min(P, kColumnChunk)));
    for (std::int64_t b = 0; b < g.batch; ++b) {
        for (std::int64_t grp = 0; grp < g.groups; ++grp) {
            const Scalar* xg = x + (b * g.in_channels + grp * cin_g) * g.in_spatial();
            const Scalar* dyg = dy + (b * g.out_channels + grp * cout_g) * P;
            Scalar* dwg = dw + grp * cout_g * kg;
            for (std::int64_t p0 = 0; p0 < P; p0 += kColumnChunk) {
                const std::int64_t pc = std::min(kColumnChunk, P - p0);
                im2col(g, xg, p0, pc, col.data());
                gemm({.trans_b = true, .m = cout_g, .n = kg, .k = pc, .a = dyg + p0, .lda = P,
                      .b = col.data(), .ldb = pc, .c = dwg, .ldc = kg, .accumulate = true});
            }
        }
    }
}

// ---- serial references ----

namespace reference {

void gemm(const GemmArgs& g) {
    for (std::int64_t i = 0; i < g.m; ++i) {
        for (std::int64_t j = 0; j < g.n; ++j) {
            Scalar acc = 0;
            for (std::int64_t p = 0; p < g.k; ++p) {
                const Scalar av = g.trans_a ? g.a[p * g.lda + i] : g.a[i * g.lda + p];
                const Scalar bv = g.trans_b ? g.b[j * g.ldb + p] : g.b[p * g.ldb + j];
                acc += av * bv;
            }
            Scalar& out = g.c[i * g.ldc + j];
            out = g.accumulate ? out + acc : acc;
        }
    }
}

void conv_forward(const ConvGeometry& g, const Scalar* x, const Scalar* w, Scalar* y) {
    const std::int64_t cin_g = g.in_channels / g.groups;
    const std::int64_t cout_g = g.out_channels / g.groups;
    for (std::int64_t b = 0; b < g.batch; ++b)
        for (std::int64_t co = 0; co < g.out_channels; ++co) {
            const std::int64_t grp = co / cout_g;
            for (std::int64_t oz = 0; oz < g.out[0]; ++oz)
                for (std::int64_t oy = 0; oy < g.out[1]; ++oy)
                    for (std::int64_t ox = 0; ox < g.out[2]; ++ox) {
                        Scalar acc = 0;
                        for (std::int64_t ci = 0; ci < cin_g; ++ci)
                            for (std::int64_t kz = 0; kz < g.kernel[0]; ++kz)
                                for (std::int64_t ky = 0; ky < g.kernel[1]; ++ky)
                                    for (std::int64_t kx = 0; kx < g.kernel[2]; ++kx) {
                                        const std::int64_t iz = oz * g.stride[0] - g.pad[0] + kz;
                                        const std::int64_t iy = oy * g.stride[1] - g.pad[1] + ky;
                                        const std::int64_t ix = ox * g.stride[2] - g.pad[2] + kx;
                                        if (iz < 0 || iz >= g.in[0] || iy < 0 || iy >= g.in[1] ||
                                            ix < 0 || ix >= g.in[2])
                                            continue;
                                        const std::int64_t c = grp * cin_g + ci;
                                        acc += x[((b * g.in_channels + c) * g.in[0] + iz) * g.in[1] *
                                                     g.in[2] +
                                                 iy * g.in[2] + ix] *
                                               w[(((co * cin_g + ci) * g.kernel[0] + kz) *
                                                      g.kernel[1] +
                                                  ky) *
                                                     g.kernel[2] +
                                                 kx];
                                    }
                        y[((b * g.out_channels + co) * g.out[0] + oz) * g.out[1] * g.out[2] +
                          oy * g.out[2] + ox] = acc;
                    }
        }
}

}  // namespace reference

}  // namespace vsr::kernels
