#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gradcheck.hpp"
#include "op_cases.hpp"
#include "vsr/errors.hpp"
#include "vsr/kernels.hpp"
#include "vsr/ops.hpp"
#include "vsr/optim.hpp"

using namespace vsr;
using vsr::testing::grad_check;
using vsr::testing::random_tensor;

static std::vector<Scalar> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

TEST_CASE("matmul examples") {
    auto a = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto b = Tensor::from_data({2, 2}, {2, 3, 4, 5});
    CHECK(values(ops::matmul(a, b)) == std::vector<Scalar>{2, 3, 4, 5});
    auto r = ops::matmul(Tensor::from_data({1, 2}, {1, 2}), Tensor::from_data({2, 1}, {3, 4}));
    CHECK(r.shape() == Shape{1, 1});
    CHECK(r.item() == 11);
    CHECK_THROWS_AS(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("matmul gradient") {
    auto a = random_tensor({4, 5}, 1), b = random_tensor({5, 3}, 2);
    auto r = grad_check([&] { return ops::sum(ops::matmul(a, b)); }, {a, b});
    CHECK(r.rel_error < 1e-6);
    auto x = random_tensor({2, 3, 4, 5}, 3), y = random_tensor({3, 5, 2}, 4);
    CHECK(grad_check([&] { return ops::sum(ops::mul(ops::matmul(x, y), ops::matmul(x, y))); }, {x, y}).rel_error < 1e-6);
}

TEST_CASE("conv examples") {
    ops::ConvOptions o{{1}, {0}, 1};
    auto y = ops::conv(Tensor::from_data({1, 1, 3}, {1, 2, 3}), Tensor::from_data({1, 1, 1}, {1}), nullptr, o);
    CHECK(values(y) == std::vector<Scalar>{1, 2, 3});
    o.stride = {2};
    y = ops::conv(Tensor::from_data({1, 1, 4}, {1, 2, 3, 4}), Tensor::from_data({1, 1, 2}, {1, 1}), nullptr, o);
    CHECK(values(y) == std::vector<Scalar>{3, 7});
    CHECK(ops::conv_output_shape({2, 1, 29, 88, 88}, {64, 1, 5, 7, 7}, {{1, 2, 2}, {2, 3, 3}, 1}) ==
          Shape{2, 64, 29, 44, 44});
    CHECK_THROWS_AS(ops::conv_output_shape({1, 1, 3}, {1, 1, 5}, {{1}, {0}, 1}), ConfigError);
}

TEST_CASE("conv gradient 1d 2d 3d and depthwise") {
    for (int d = 1; d <= 3; ++d) {
        Shape xs{2, 4}, ws{6, 2};
        for (int i = 0; i < d; ++i) {
            xs.push_back(5);
            ws.push_back(3);
        }
        auto x = random_tensor(xs, 10 + d), w = random_tensor(ws, 20 + d), b = random_tensor({6}, 30 + d);
        ops::ConvOptions o{{2}, {1}, 2};
        auto r = grad_check([&] { auto y = ops::conv(x, w, &b, o); return ops::sum(ops::mul(y, y)); }, {x, w, b});
        CHECK_MESSAGE(r.rel_error < 1e-6, r.worst);
    }
    auto x = random_tensor({1, 4, 7}, 40), w = random_tensor({4, 1, 3}, 41);
    CHECK(grad_check([&] { return ops::sum(ops::swish(ops::conv(x, w, nullptr, {{1}, {1}, 4}))); }, {x, w}).rel_error < 1e-6);
}

TEST_CASE("parallel kernels match serial reference") {
    auto x = random_tensor({2, 3, 9, 11}, 50), w = random_tensor({5, 3, 3, 3}, 51);
    ops::ConvOptions o{{2, 1}, {1, 1}, 1};
    auto y = ops::conv(x, w, nullptr, o);
    kernels::ConvGeometry g;
    g.batch = 2;
    g.in_channels = 3;
    g.out_channels = 5;
    g.in = {9, 11, 1};
    g.kernel = {3, 3, 1};
    g.stride = {2, 1, 1};
    g.pad = {1, 1, 0};
    kernels::resolve_output_extents(g);
    std::vector<Scalar> ref(static_cast<std::size_t>(g.batch * g.out_channels * g.out_spatial()));
    kernels::reference::conv_forward(g, x.data().data(), w.data().data(), ref.data());
    REQUIRE(ref.size() == static_cast<std::size_t>(y.numel()));
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(ref[i] - y.data()[i]) < 1e-12);
}

TEST_CASE("elementwise and normalization examples") {
    auto s = ops::softmax(Tensor::from_data({2}, {0, 0}), 0);
    CHECK(values(s) == std::vector<Scalar>{0.5, 0.5});
    auto g = ops::glu(Tensor::from_data({2}, {3, 0}), 0);
    CHECK(g.item() == doctest::Approx(1.5));
    CHECK_THROWS_AS(ops::glu(Tensor::zeros({3}), 0), ShapeError);
    Rng rng(1);
    CHECK_THROWS_AS(ops::dropout(Tensor::zeros({3}), 1.0, rng, true), ConfigError);
    auto x = random_tensor({3, 4}, 5);
    CHECK(values(ops::dropout(x, 0.5, rng, false)) == values(x));
    auto ls = ops::log_softmax(x, 1), sm = ops::softmax(x, 1);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(std::abs(std::exp(ls.data()[i]) - sm.data()[i]) < 1e-12);
    CHECK(ops::l1_distance(Tensor::from_data({2}, {1, 2}), Tensor::from_data({2}, {2, 0})).item() == doctest::Approx(1.5));
}

TEST_CASE("layernorm gradient") {
    auto x = random_tensor({3, 7}, 6), gain = random_tensor({7}, 7), bias = random_tensor({7}, 8);
    auto w = random_tensor({3, 7}, 9);
    auto r = grad_check([&] { return ops::sum(ops::mul(ops::layernorm(x, gain, bias), w)); }, {x, gain, bias});
    CHECK(r.rel_error < 1e-6);
}

TEST_CASE("op gradients") {
    for (auto& c : vsr::testing::op_cases()) {
        auto r = grad_check(c.f, c.inputs);
        CHECK_MESSAGE(r.rel_error < 1e-6, c.name << ": " << r.worst);
    }
}

TEST_CASE("batchnorm gradient in training mode, with and without mask") {
    auto x = random_tensor({2, 3, 4}, 21), gain = random_tensor({3}, 22), bias = random_tensor({3}, 23);
    auto w = random_tensor({2, 3, 4}, 24);
    std::vector<std::uint8_t> mask{1, 1, 1, 0, 1, 1, 0, 0};
    for (auto* mk : {static_cast<std::vector<std::uint8_t>*>(nullptr), &mask}) {
        auto r = grad_check([&] {
            ops::BatchNormStats st{std::vector<Scalar>(3, 0), std::vector<Scalar>(3, 1)};
            return ops::sum(ops::mul(ops::batchnorm(x, gain, bias, st, true, mk), w));
        }, {x, gain, bias});
        CHECK_MESSAGE(r.rel_error < 1e-6, r.worst);
    }
}

TEST_CASE("backward contract") {
    auto x = random_tensor({2, 3}, 30);
    x.set_requires_grad(true);
    backward(ops::sum(x));
    for (Scalar g : x.grad()) CHECK(g == 1);
    auto v = Tensor::from_data({2}, {1, 2}, true);
    backward(ops::sum(ops::mul(v, v)));
    CHECK(values(Tensor::from_data({2}, {v.grad()[0], v.grad()[1]})) == std::vector<Scalar>{2, 4});
    backward(ops::sum(ops::mul(v, v)));
    CHECK(v.grad()[1] == 8);  // accumulates
    CHECK_THROWS_AS(backward(x), ContractError);
}

TEST_CASE("composite conv layernorm softmax") {
    auto x = random_tensor({1, 2, 6}, 31), w = random_tensor({4, 2, 3}, 32);
    auto gain = random_tensor({4}, 33), bias = random_tensor({4}, 34), probe = random_tensor({1, 6, 4}, 35);
    auto r = grad_check([&] {
        auto y = ops::transpose(ops::conv(x, w, nullptr, {{1}, {1}, 1}), 1, 2);
        return ops::sum(ops::mul(ops::softmax(ops::layernorm(y, gain, bias), 2), probe));
    }, {x, w, gain, bias});
    CHECK(r.rel_error < 1e-5);
}

TEST_CASE("learning rate schedule") {
    ScheduleConfig s;
    CHECK(learning_rate(s, 25000) == doctest::Approx(0.0004).epsilon(1e-12));
    CHECK(learning_rate(s, 6250) == doctest::Approx(0.0001).epsilon(1e-12));
    CHECK(learning_rate(s, 100000) == doctest::Approx(0.0002).epsilon(1e-12));
    CHECK_THROWS_AS(learning_rate(s, 0), ContractError);
}

TEST_CASE("adam aborts on non-finite gradient") {
    auto w = Tensor::from_data({2}, {1, 1}, true);
    Adam adam({{"layer.w", w}}, {}, {});
    backward(ops::sum(ops::log(ops::scale(w, 0))));
    try {
        adam.step();
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("layer.w") != std::string::npos);
        CHECK(std::string(e.what()).find("step 1") != std::string::npos);
    }
}

TEST_CASE("adam decreases a quadratic") {
    auto w = Tensor::from_data({3}, {1, -2, 3}, true);
    Adam adam({{"w", w}}, {}, {0.1, 1});
    for (int i = 0; i < 1000; ++i) {
        w.zero_grad();
        backward(ops::sum(ops::mul(w, w)));
        adam.step();
    }
    for (Scalar v : w.data()) CHECK(std::abs(v) < 0.2);
}
