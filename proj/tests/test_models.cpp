#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vsr/decoder.hpp"
#include "vsr/encoder.hpp"
#include "vsr/errors.hpp"
#include "vsr/frontends.hpp"

using namespace vsr;
using vsr::testing::grad_check;
using vsr::testing::random_tensor;

namespace {

ConformerConfig tiny_conformer(std::int64_t blocks = 2, std::int64_t tap = 1) {
    ConformerConfig c;
    c.num_blocks = blocks;
    c.model_dim = 8;
    c.ff_dim = 16;
    c.head_dim = 4;
    c.dropout = 0;
    c.conv_kernel = 3;
    c.rel_clip = 4;
    c.tap_layer = tap;
    return c;
}

DecoderConfig tiny_decoder() {
    DecoderConfig c;
    c.num_blocks = 2;
    c.model_dim = 8;
    c.ff_dim = 16;
    c.head_dim = 4;
    c.dropout = 0;
    return c;
}

}  // namespace

TEST_CASE("visual front-end shapes") {
    Rng init(1);
    VisualFrontend fe(0.25, init);
    fe.train(false);
    NoGradGuard ng;
    StageTrace trace;
    auto y = fe.forward(random_tensor({1, 1, 5, 24, 24}, 2, 0, 1), &trace);
    CHECK(y.shape() == Shape{1, 128, 5});
    CHECK(fe.forward(random_tensor({1, 1, 1, 24, 24}, 3, 0, 1)).shape() == Shape{1, 128, 1});
    CHECK_THROWS_AS(fe.forward(random_tensor({1, 1, 2, 3, 3}, 4)), ConfigError);
}

TEST_CASE("audio front-end temporal contract") {
    Rng init(5);
    AudioResidualFrontend res(0.125, init);
    AudioCnnFrontend cnn(0.125, init);
    res.train(false);
    cnn.train(false);
    NoGradGuard ng;
    for (std::int64_t ta : {640, 1279, 1280, 3000, 16000}) {
        CHECK(res.forward(random_tensor({1, 1, ta}, 6)).dim(2) == ta / 640);
        CHECK(cnn.forward(random_tensor({1, 1, ta}, 7)).dim(2) == ta / 640);
    }
    CHECK_THROWS_AS(res.forward(random_tensor({1, 1, 639}, 8)), DataError);
    CHECK_THROWS_AS(cnn.forward(random_tensor({1, 1, 100}, 8)), DataError);
}

TEST_CASE("passthrough front-end") {
    PassthroughFrontend fe(8);
    auto x = random_tensor({1, 8, 10}, 9);
    auto y = fe.forward(x);
    CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
    CHECK_THROWS_AS(fe.forward(random_tensor({1, 7, 10}, 9)), ShapeError);
}

TEST_CASE("conformer embedding") {
    Rng init(10);
    auto cfg = tiny_conformer();
    ConformerEncoder enc(12, cfg, init);
    enc.train(false);
    auto e = enc.embed(Tensor::zeros({1, 12, 5}));
    CHECK(e.shape() == Shape{1, 5, 8});
    for (std::int64_t t = 1; t < 5; ++t)
        for (std::int64_t d = 0; d < 8; ++d) CHECK(e.at({0, t, d}) == e.at({0, 0, d}));
    CHECK_THROWS_AS(enc.embed(Tensor::zeros({1, 11, 5})), ShapeError);
    auto x = random_tensor({1, 12, 3}, 11);
    auto probe = random_tensor({1, 3, 8}, 12);
    auto params = enc.parameters();
    std::vector<Tensor> inputs{x};
    auto r = grad_check([&] { return ops::sum(ops::mul(enc.embed(x), probe)); }, inputs);
    CHECK(r.rel_error < 1e-5);
}

TEST_CASE("conformer block gradient and masking") {
    Rng init(13);
    auto cfg = tiny_conformer(1, 1);
    ConformerBlock block(cfg, init);
    block.train(true);  // batch statistics path
    auto x = random_tensor({1, 3, 8}, 14);
    auto probe = random_tensor({1, 3, 8}, 15);
    auto mask = SequenceMask::from_lengths({3}, 3);
    std::vector<Tensor> inputs{x};
    for (auto& [n, p] : block.named_parameters()) inputs.push_back(p);
    auto r = grad_check([&] { return ops::sum(ops::mul(block.forward(x, mask), probe)); }, inputs, 1e-6, 40);
    CHECK_MESSAGE(r.rel_error < 1e-4, r.worst);

    // Single frame: shape preserved and finite.
    block.train(false);
    auto one = block.forward(random_tensor({1, 1, 8}, 16), SequenceMask::from_lengths({1}, 1));
    CHECK(one.shape() == Shape{1, 1, 8});
    CHECK(nn::all_finite(one));
}

TEST_CASE("padding does not influence valid positions") {
    Rng init(17);
    auto cfg = tiny_conformer(2, 1);
    ConformerEncoder enc(6, cfg, init);
    enc.train(false);
    NoGradGuard ng;
    auto a = random_tensor({1, 6, 7}, 18);
    auto b_data = std::vector<Scalar>(a.data().begin(), a.data().end());
    for (std::int64_t c = 0; c < 6; ++c)
        for (std::int64_t t = 4; t < 7; ++t) b_data[c * 7 + t] = static_cast<Scalar>(100 + c - t);
    auto b = Tensor::from_data({1, 6, 7}, b_data);
    auto ya = enc.encode(a, {4}).top, yb = enc.encode(b, {4}).top;
    auto solo = enc.encode(ops::slice(a, 2, 0, 4), {4}).top;
    double worst = 0, worst_solo = 0;
    for (std::int64_t t = 0; t < 4; ++t)
        for (std::int64_t d = 0; d < 8; ++d) {
            worst = std::max(worst, std::abs(double(ya.at({0, t, d}) - yb.at({0, t, d}))));
            worst_solo = std::max(worst_solo, std::abs(double(ya.at({0, t, d}) - solo.at({0, t, d}))));
        }
    CHECK(worst <= 1e-12);
    CHECK(worst_solo <= 1e-10);
    const auto& att = enc.block(0).attention().last_attention();
    for (std::int64_t h = 0; h < att.dim(1); ++h)
        for (std::int64_t i = 0; i < 4; ++i) {
            double s = 0;
            for (std::int64_t j = 0; j < 4; ++j) s += att.at({0, h, i, j});
            CHECK(std::abs(s - 1) < 1e-12);
        }
}

TEST_CASE("encoder tap and determinism") {
    Rng init(19);
    auto cfg = tiny_conformer(3, 3);
    ConformerEncoder enc(6, cfg, init);
    enc.train(false);
    NoGradGuard ng;
    auto x = random_tensor({2, 6, 5}, 20);
    auto out = enc.encode(x, {5, 3});
    CHECK(std::equal(out.tap.data().begin(), out.tap.data().end(), out.top.data().begin()));
    auto again = enc.encode(x, {5, 3});
    CHECK(std::equal(out.top.data().begin(), out.top.data().end(), again.top.data().begin()));
    auto prefix = enc.encode_prefix(x, {5, 3}, 2);
    Rng init2(19);
    auto cfg2 = tiny_conformer(3, 2);
    ConformerEncoder enc2(6, cfg2, init2);
    enc2.train(false);
    auto out2 = enc2.encode(x, {5, 3});
    CHECK(std::equal(out2.tap.data().begin(), out2.tap.data().end(), prefix.data().begin()));
    auto bad = tiny_conformer(2, 3);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("decoder causality, normalization and incremental consistency") {
    Rng init(21);
    TransformerDecoder dec(7, tiny_decoder(), init);
    dec.train(false);
    NoGradGuard ng;
    auto memory = random_tensor({1, 5, 8}, 22);
    std::vector<std::int64_t> tokens{1, 4, 5, 6, 3};
    auto full = dec.forward(memory, {5}, {tokens});
    for (std::size_t i = 1; i <= tokens.size(); ++i) {
        std::vector<std::int64_t> prefix(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(i));
        auto step = dec.decode_step(memory, 5, prefix);
        double lse = 0;
        for (std::int64_t v = 0; v < 7; ++v) {
            CHECK(std::abs(step[v] - full.at({0, static_cast<std::int64_t>(i) - 1, v})) < 1e-10);
            lse += std::exp(step[v]);
        }
        CHECK(std::abs(std::log(lse)) < 1e-10);
    }
    auto altered = tokens;
    altered[4] = 2;
    auto full2 = dec.forward(memory, {5}, {altered});
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t v = 0; v < 7; ++v) CHECK(full.at({0, i, v}) == full2.at({0, i, v}));
    CHECK_THROWS_AS(dec.decode_step(memory, 5, {}), ContractError);
}

TEST_CASE("zeroed LM is uniform") {
    Rng init(23);
    LmConfig lc;
    lc.model_dim = 8;
    lc.ff_dim = 16;
    lc.head_dim = 4;
    CharLm lm(6, lc, init);
    lm.zero_parameters();
    lm.train(false);
    auto s = lm.score({1, 3, 4});
    for (Scalar v : s) CHECK(std::abs(v + std::log(6.0)) < 1e-10);
}

TEST_CASE("ctc head") {
    Rng init(24);
    CtcHead head(8, 5, init);
    auto x = random_tensor({2, 3, 8}, 25);
    auto y = head.forward(x);
    CHECK(y.shape() == Shape{2, 3, 5});
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t t = 0; t < 3; ++t) {
            double s = 0;
            for (std::int64_t k = 0; k < 5; ++k) s += std::exp(y.at({b, t, k}));
            CHECK(std::abs(s - 1) < 1e-12);
        }
    auto probe = random_tensor({2, 3, 5}, 26);
    std::vector<Tensor> inputs{x};
    for (auto& [n, p] : head.named_parameters()) inputs.push_back(p);
    CHECK(grad_check([&] { return ops::sum(ops::mul(head.forward(x), probe)); }, inputs).rel_error < 1e-5);
    auto again = head.forward(x);
    CHECK(std::equal(y.data().begin(), y.data().end(), again.data().begin()));
}
