#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "vsr/losses.hpp"
#include "vsr/ops.hpp"

namespace vsr::testing {

struct OpCase {
    std::string name;
    std::function<Tensor()> f;
    std::vector<Tensor> inputs;
};

// One gradient check per differentiable op (and per loss built on the tape).
inline std::vector<OpCase> op_cases() {
    std::vector<OpCase> c;
    auto x = random_tensor({2, 3, 4}, 11), y = random_tensor({3, 4}, 12), w = random_tensor({2, 3, 4}, 13);
    auto probe = [w](const Tensor& t) { return ops::sum(ops::mul(t, w)); };
    auto unary = [&](const std::string& name, Tensor (*op)(const Tensor&), const Tensor& in) {
        c.push_back({name, [=] { return probe(op(in)); }, {in}});
    };
    c.push_back({"add", [=] { return probe(ops::add(x, y)); }, {x, y}});
    c.push_back({"sub", [=] { return probe(ops::sub(x, y)); }, {x, y}});
    c.push_back({"mul", [=] { return probe(ops::mul(x, y)); }, {x, y}});
    c.push_back({"scale", [=] { return probe(ops::scale(x, 3)); }, {x}});
    c.push_back({"add_scalar", [=] { return probe(ops::add_scalar(x, 0.5)); }, {x}});
    unary("relu", ops::relu, x);
    unary("sigmoid", ops::sigmoid, x);
    unary("swish", ops::swish, x);
    unary("abs", ops::abs, x);
    unary("exp", ops::exp, x);
    unary("log", ops::log, random_tensor({2, 3, 4}, 14, 0.5, 2));
    c.push_back({"softmax", [=] { return probe(ops::softmax(x, 1)); }, {x}});
    c.push_back({"log_softmax", [=] { return probe(ops::log_softmax(x, 2)); }, {x}});
    c.push_back({"glu", [=] { return ops::sum(ops::mul(ops::glu(x, 2), ops::glu(w, 2))); }, {x}});
    c.push_back({"sum", [=] { return ops::sum(ops::mul(ops::sum(x, 0, true), ops::sum(w, 0, true))); }, {x}});
    c.push_back({"mean", [=] { return ops::sum(ops::mul(ops::mean(x, 1), ops::mean(w, 1))); }, {x}});
    c.push_back({"mean_all", [=] { return ops::mean(ops::mul(x, x)); }, {x}});
    c.push_back({"l1_distance", [=] { return ops::l1_distance(x, w); }, {x}});
    c.push_back({"reshape", [=] { return probe(ops::reshape(ops::reshape(x, {6, 4}), {2, 3, 4})); }, {x}});
    c.push_back({"transpose", [=] { return ops::sum(ops::mul(ops::transpose(x, 0, 2), ops::transpose(w, 0, 2))); }, {x}});
    c.push_back({"permute", [=] { return ops::sum(ops::mul(ops::permute(x, {1, 2, 0}), ops::permute(w, {1, 2, 0}))); }, {x}});
    c.push_back({"slice", [=] { return ops::sum(ops::mul(ops::slice(x, 2, 1, 2), ops::slice(w, 2, 1, 2))); }, {x}});
    c.push_back({"concat", [=] { return probe(ops::concat({ops::slice(x, 1, 0, 1), ops::slice(x, 1, 1, 2)}, 1)); }, {x}});
    auto mask = Tensor::from_data({1, 3, 1}, {1, 0, 1});
    c.push_back({"masked_fill", [=] { return probe(ops::masked_fill(x, mask, -5)); }, {x}});
    c.push_back({"dropout", [=] {
                     std::mt19937_64 rng(5);
                     return probe(ops::dropout(x, 0.3, rng, true));
                 }, {x}});
    auto table = random_tensor({5, 4}, 15);
    c.push_back({"embedding", [=] { return ops::sum(ops::mul(ops::embedding(table, {1, 3, 1, 0, 4, 2}, {2, 3}), w)); }, {table}});
    auto m = random_tensor({3, 5}, 16);
    c.push_back({"pick", [=] { return ops::sum(ops::pick(ops::log_softmax(m, 1), {0, 4, 2})); }, {m}});
    auto rel = random_tensor({2, 4, 5}, 17), rw = random_tensor({2, 4, 4}, 18);
    c.push_back({"relative_logits", [=] { return ops::sum(ops::mul(ops::relative_logits(rel, 2), rw)); }, {rel}});
    auto img = random_tensor({1, 2, 5, 5}, 19);
    c.push_back({"max_pool", [=] { auto p = ops::max_pool(img, {3, 3}, {2, 2}, {1, 1}); return ops::sum(ops::mul(p, p)); }, {img}});
    c.push_back({"avg_pool", [=] { auto p = ops::avg_pool(img, {2, 2}, {2, 2}); return ops::sum(ops::mul(p, p)); }, {img}});
    auto a = random_tensor({4, 5}, 1), b = random_tensor({5, 3}, 2);
    c.push_back({"matmul", [=] { return ops::sum(ops::mul(ops::matmul(a, b), ops::matmul(a, b))); }, {a, b}});
    auto bx = random_tensor({2, 3, 4, 5}, 3), by = random_tensor({3, 5, 2}, 4);
    c.push_back({"matmul_batched", [=] { return ops::sum(ops::mul(ops::matmul(bx, by), ops::matmul(bx, by))); }, {bx, by}});
    for (int d = 1; d <= 3; ++d) {
        Shape xs{2, 4}, ws{6, 2};
        for (int i = 0; i < d; ++i) {
            xs.push_back(5);
            ws.push_back(3);
        }
        auto cx = random_tensor(xs, 10 + d), cw = random_tensor(ws, 20 + d), cb = random_tensor({6}, 30 + d);
        c.push_back({"conv" + std::to_string(d) + "d", [=] {
                         auto out = ops::conv(cx, cw, &cb, {{2}, {1}, 2});
                         return ops::sum(ops::mul(out, out));
                     }, {cx, cw, cb}});
    }
    auto dx = random_tensor({1, 4, 7}, 40), dw = random_tensor({4, 1, 3}, 41);
    c.push_back({"conv_depthwise", [=] { return ops::sum(ops::swish(ops::conv(dx, dw, nullptr, {{1}, {1}, 4}))); }, {dx, dw}});
    auto lx = random_tensor({3, 7}, 6), lg = random_tensor({7}, 7), lb = random_tensor({7}, 8), lw = random_tensor({3, 7}, 9);
    c.push_back({"layernorm", [=] { return ops::sum(ops::mul(ops::layernorm(lx, lg, lb), lw)); }, {lx, lg, lb}});
    auto nx = random_tensor({2, 3, 4}, 21), ng = random_tensor({3}, 22), nb = random_tensor({3}, 23);
    auto nmask = std::vector<std::uint8_t>{1, 1, 1, 0, 1, 1, 0, 0};
    for (bool masked : {false, true}) {
        c.push_back({masked ? "batchnorm_masked" : "batchnorm", [=] {
                         ops::BatchNormStats st{std::vector<Scalar>(3, 0), std::vector<Scalar>(3, 1)};
                         auto mk = nmask;
                         return ops::sum(ops::mul(ops::batchnorm(nx, ng, nb, st, true, masked ? &mk : nullptr), w));
                     }, {nx, ng, nb}});
    }
    auto logits = random_tensor({2, 5, 4}, 50);
    c.push_back({"ctc_loss", [=] {
                     return ctc_loss_batch(ops::log_softmax(logits, 2), {5, 4}, {{1, 2}, {3, 3}}).loss;
                 }, {logits}});
    auto alogits = random_tensor({2, 3, 5}, 51);
    c.push_back({"attention_loss", [=] {
                     return attention_loss(ops::log_softmax(alogits, 2), {{1, 2, 4}, {0, 4}}, 0.1);
                 }, {alogits}});
    auto pred = random_tensor({2, 3, 4}, 52), tgt = random_tensor({2, 3, 4}, 53);
    c.push_back({"masked_l1", [=] { return masked_l1(pred, tgt, {3, 2}); }, {pred}});
    return c;
}

}  // namespace vsr::testing
