// Serial reference kernels vs the OpenMP kernels on shapes the models use.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vsr/kernels.hpp"

using namespace vsr;
using namespace vsr::kernels;

namespace {

std::vector<Scalar> random_vec(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<Scalar> v(n);
    for (auto& x : v) x = static_cast<Scalar>(u(rng));
    return v;
}

// Median seconds per call over `reps` timed batches.
double time_it(const std::function<void()>& f, double min_seconds) {
    f();
    std::vector<double> samples;
    for (int r = 0; r < 5; ++r) {
        int calls = 0;
        const auto t0 = std::chrono::steady_clock::now();
        double el = 0;
        do {
            f();
            ++calls;
            el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        } while (el < min_seconds / 5);
        samples.push_back(el / calls);
    }
    std::sort(samples.begin(), samples.end());
    return samples[2];
}

double max_diff(const std::vector<Scalar>& a, const std::vector<Scalar>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i] - b[i])));
    return m;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kernel benchmark: serial reference vs OpenMP"};
    double min_seconds = 0.5;
    app.add_option("--seconds", min_seconds, "timing budget per measurement");
    CLI11_PARSE(app, argc, argv);

    std::printf("threads: %d\n\n", max_threads());
    std::printf("%-34s %12s %12s %9s %10s %10s\n", "gemm (m x k x n, op)", "ref ms", "omp ms", "speedup", "GFLOP/s", "max|diff|");
    struct G {
        std::int64_t m, k, n;
        bool ta, tb;
    };
    const G shapes[] = {
        {512, 64, 256, false, false},   // linear forward
        {512, 256, 64, false, true},    // linear input grad
        {64, 512, 256, true, false},    // linear weight grad
        {40, 16, 40, false, true},      // attention scores
        {40, 40, 16, false, false},     // attention context
        {256, 256, 256, false, false},
        {1024, 512, 512, false, false},
    };
    for (const auto& s : shapes) {
        const auto a = random_vec(static_cast<std::size_t>(s.m * s.k), 1);
        const auto b = random_vec(static_cast<std::size_t>(s.k * s.n), 2);
        std::vector<Scalar> c_ref(static_cast<std::size_t>(s.m * s.n)), c(c_ref.size());
        GemmArgs g{s.ta, s.tb, s.m, s.n, s.k, a.data(), s.ta ? s.m : s.k, b.data(), s.tb ? s.k : s.n, nullptr, s.n, false};
        GemmArgs gr = g;
        gr.c = c_ref.data();
        g.c = c.data();
        const double tr = time_it([&] { reference::gemm(gr); }, min_seconds);
        const double tp = time_it([&] { gemm(g); }, min_seconds);
        char name[64];
        std::snprintf(name, sizeof(name), "%ld x %ld x %ld%s%s", static_cast<long>(s.m), static_cast<long>(s.k),
                      static_cast<long>(s.n), s.ta ? " A^T" : "", s.tb ? " B^T" : "");
        std::printf("%-34s %12.4f %12.4f %8.2fx %10.2f %10.2e\n", name, tr * 1e3, tp * 1e3, tr / tp,
                    2.0 * s.m * s.n * s.k / tp * 1e-9, max_diff(c_ref, c));
    }

    std::printf("\n%-34s %12s %12s %9s %10s\n", "conv", "ref ms", "omp ms", "speedup", "max|diff|");
    struct C {
        const char* name;
        ConvGeometry g;
    };
    std::vector<C> convs;
    {
        ConvGeometry g;  // visual stem at width 0.25 on a 4-frame 88x88 clip
        g.batch = 1, g.in_channels = 1, g.out_channels = 16, g.in = {4, 88, 88}, g.kernel = {5, 7, 7},
        g.stride = {1, 2, 2}, g.pad = {2, 3, 3};
        convs.push_back({"conv3d stem 1->16 5x7x7", g});
    }
    {
        ConvGeometry g;  // residual 3x3 at 22x22
        g.batch = 8, g.in_channels = 16, g.out_channels = 16, g.in = {22, 22, 1}, g.kernel = {3, 3, 1},
        g.pad = {1, 1, 0};
        convs.push_back({"conv2d 16->16 3x3 @22x22 B8", g});
    }
    {
        ConvGeometry g;  // depthwise temporal conv in a conformer block
        g.batch = 16, g.in_channels = 64, g.out_channels = 64, g.groups = 64, g.in = {40, 1, 1},
        g.kernel = {7, 1, 1}, g.pad = {3, 0, 0};
        convs.push_back({"depthwise 64ch k7 T40 B16", g});
    }
    {
        ConvGeometry g;  // audio stem
        g.batch = 2, g.in_channels = 1, g.out_channels = 16, g.in = {16000, 1, 1}, g.kernel = {80, 1, 1},
        g.stride = {4, 1, 1}, g.pad = {38, 0, 0};
        convs.push_back({"conv1d audio stem k80 s4", g});
    }
    for (auto& cv : convs) {
        resolve_output_extents(cv.g);
        const auto& g = cv.g;
        const auto x = random_vec(static_cast<std::size_t>(g.batch * g.in_channels * g.in_spatial()), 3);
        const auto w = random_vec(
            static_cast<std::size_t>(g.out_channels * (g.in_channels / g.groups) * g.kernel_volume()), 4);
        std::vector<Scalar> y_ref(static_cast<std::size_t>(g.batch * g.out_channels * g.out_spatial())), y(y_ref.size());
        const double tr = time_it([&] { reference::conv_forward(g, x.data(), w.data(), y_ref.data()); }, min_seconds);
        const double tp = time_it([&] { conv_forward(g, x.data(), w.data(), y.data()); }, min_seconds);
        std::printf("%-34s %12.4f %12.4f %8.2fx %10.2e\n", cv.name, tr * 1e3, tp * 1e3, tr / tp, max_diff(y_ref, y));
    }
    return 0;
}
