#include <fstream>
#include <unistd.h>

#include "doctest.h"
#include "gradcheck.hpp"
#include "vsr/checkpoint.hpp"
#include "vsr/errors.hpp"
#include "vsr/model.hpp"

using namespace vsr;

namespace {

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("vsr_ck_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

Checkpoint single(double w) {
    Checkpoint c;
    c.tensors.push_back({"w", {1}, {w}});
    return c;
}

ModelSpec small_spec() {
    ModelSpec s;
    s.frontend.kind = FrontendKind::Passthrough;
    s.frontend.output_dim = 6;
    s.encoder.num_blocks = 1;
    s.encoder.model_dim = 8;
    s.encoder.ff_dim = 16;
    s.encoder.head_dim = 4;
    s.encoder.conv_kernel = 3;
    s.encoder.tap_layer = 1;
    s.decoder.num_blocks = 1;
    s.decoder.model_dim = 8;
    s.decoder.ff_dim = 16;
    s.decoder.head_dim = 4;
    s.ctc_classes = 5;
    s.decoder_classes = 6;
    return s;
}

}  // namespace

TEST_CASE("checkpoint round trip reproduces the forward pass") {
    auto dir = scratch("rt");
    VsrModel a(small_spec(), 1), b(small_spec(), 2);
    a.train(false);
    b.train(false);
    Checkpoint ck = Checkpoint::from_module(a);
    ck.meta["step"] = 7;
    ck.save(dir / "a.vsrc");
    Checkpoint back = Checkpoint::load(dir / "a.vsrc");
    CHECK(back.meta["step"] == 7);
    CHECK(max_abs_difference(ck, back) == 0);
    back.apply(b);
    auto x = testing::random_tensor({2, 6, 5}, 3);
    auto ya = a.encode(x, {5, 4}).ctc_logprobs, yb = b.encode(x, {5, 4}).ctc_logprobs;
    for (std::int64_t i = 0; i < ya.numel(); ++i) CHECK(ya.data()[i] == yb.data()[i]);
    std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint load rejects corrupt files") {
    auto dir = scratch("bad");
    single(1).save(dir / "ok.vsrc");
    {
        std::ofstream os(dir / "ok.vsrc", std::ios::app | std::ios::binary);
        os << "x";
    }
    CHECK_THROWS_AS(Checkpoint::load(dir / "ok.vsrc"), DataError);
    std::ofstream(dir / "junk.vsrc") << "junk";
    CHECK_THROWS_AS(Checkpoint::load(dir / "junk.vsrc"), DataError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("averaging examples") {
    auto avg = average_checkpoints({single(1), single(3)});
    CHECK(avg.tensors[0].values[0] == 2);
    Checkpoint c = single(0.1);
    auto same = average_checkpoints({c, c, c, c, c});
    CHECK(std::abs(same.tensors[0].values[0] - 0.1) < 1e-15);
    Checkpoint other;
    other.tensors.push_back({"v", {1}, {1}});
    CHECK_THROWS_AS(average_checkpoints({single(1), other}), DataError);
    Checkpoint shaped;
    shaped.tensors.push_back({"w", {2}, {1, 2}});
    CHECK_THROWS_WITH_AS(average_checkpoints({single(1), shaped}), doctest::Contains("w"), DataError);
}

TEST_CASE("averaging matches the arithmetic mean") {
    std::vector<Checkpoint> ins;
    for (int k = 0; k < 10; ++k) {
        VsrModel m(small_spec(), 10 + k);
        ins.push_back(Checkpoint::from_module(m));
        ins.back().meta["step"] = k;
    }
    auto avg = average_checkpoints(ins);
    CHECK(avg.meta["averaged_from"].size() == 10);
    double worst = 0;
    for (std::size_t t = 0; t < avg.tensors.size(); ++t)
        for (std::size_t i = 0; i < avg.tensors[t].values.size(); ++i) {
            long double s = 0;
            for (const auto& c : ins) s += c.tensors[t].values[i];
            worst = std::max(worst, std::abs(static_cast<double>(s / 10) - avg.tensors[t].values[i]));
        }
    CHECK(worst <= 1e-12);
}
