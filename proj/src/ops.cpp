#include "vsr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "vsr/errors.hpp"
#include "vsr/kernels.hpp"

namespace vsr::ops {

namespace {

using Vec = std::vector<Scalar>;

int normalize_axis(int axis, int rank) {
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw ShapeError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
    }
    return a;
}

struct AxisSplit {
    std::int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
    AxisSplit r;
    for (int d = 0; d < axis; ++d) r.outer *= s[d];
    r.len = s[axis];
    for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
    return r;
}

// Strides of `in` aligned to `out` (right-aligned), zero on broadcast axes.
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    const std::size_t r = out.size();
    std::vector<std::int64_t> strides(r, 0);
    std::int64_t s = 1;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const std::size_t din = in.size() - 1 - i;
        const std::size_t dout = r - 1 - i;
        strides[dout] = in[din] == 1 && out[dout] != 1 ? 0 : s;
        s *= in[din];
    }
    return strides;
}

// Calls f(out_index, offset_a, offset_b) for every element of `out`.
template <class F>
void broadcast_for_each(const Shape& out, const std::vector<std::int64_t>& sa,
                        const std::vector<std::int64_t>& sb, F&& f) {
    const int r = static_cast<int>(out.size());
    const std::int64_t n = shape_numel(out);
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t ia = 0, ib = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (int d = r - 1; d >= 0; --d) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

// b's shape is a suffix of a's shape (bias-style broadcast).
bool is_suffix(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
    const Shape out = broadcast_shape(a.shape(), b.shape());
    const std::int64_t n = shape_numel(out);
    Vec y(static_cast<std::size_t>(n));
    const auto& ad = a.node()->data;
    const auto& bd = b.node()->data;
    auto apply = [op](Scalar x, Scalar z) {
        switch (op) {
            case BinOp::Add: return x + z;
            case BinOp::Sub: return x - z;
            default: return x * z;
        }
    };
    const bool same = a.shape() == b.shape();
    const bool b_suffix = !same && a.shape() == out && is_suffix(out, b.shape());
    const std::int64_t nb = static_cast<std::int64_t>(bd.size());
    if (same) {
        for (std::int64_t i = 0; i < n; ++i) y[i] = apply(ad[i], bd[i]);
    } else if (b_suffix) {
        for (std::int64_t i = 0; i < n; ++i) y[i] = apply(ad[i], bd[i % nb]);
    } else {
        const auto sa = broadcast_strides(a.shape(), out);
        const auto sb = broadcast_strides(b.shape(), out);
        broadcast_for_each(out, sa, sb,
                           [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { y[i] = apply(ad[ia], bd[ib]); });
    }
    NodePtr an = a.node(), bn = b.node();
    return make_op_result(out, std::move(y), {a, b}, [an, bn, op, same, b_suffix, nb, out](const TensorNode& self) {
        const auto& g = self.grad;
        const std::int64_t n = static_cast<std::int64_t>(g.size());
        const bool need_a = an->requires_grad, need_b = bn->requires_grad;
        Vec* ga = need_a ? &an->ensure_grad() : nullptr;
        Vec* gb = need_b ? &bn->ensure_grad() : nullptr;
        auto push = [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
            switch (op) {
                case BinOp::Add:
                    if (ga) (*ga)[ia] += g[i];
                    if (gb) (*gb)[ib] += g[i];
                    break;
                case BinOp::Sub:
                    if (ga) (*ga)[ia] += g[i];
                    if (gb) (*gb)[ib] -= g[i];
                    break;
                case BinOp::Mul:
                    if (ga) (*ga)[ia] += g[i] * bn->data[ib];
                    if (gb) (*gb)[ib] += g[i] * an->data[ia];
                    break;
            }
        };
        if (same) {
            for (std::int64_t i = 0; i < n; ++i) push(i, i, i);
        } else if (b_suffix) {
            for (std::int64_t i = 0; i < n; ++i) push(i, i, i % nb);
        } else {
            broadcast_for_each(out, broadcast_strides(an->shape, out), broadcast_strides(bn->shape, out), push);
        }
    });
}

template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
    const auto& xd = x.node()->data;
    Vec y(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) y[i] = f(xd[i]);
    NodePtr xn = x.node();
    return make_op_result(x.shape(), std::move(y), {x}, [xn, df](const TensorNode& self) {
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * df(xn->data[i], self.data[i]);
    });
}

Scalar sigmoid_scalar(Scalar v) {
    return v >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-v)) : std::exp(v) / (Scalar(1) + std::exp(v));
}

}  // namespace

// ---- elementwise ----

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const std::int64_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
        const std::int64_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (ea != eb && ea != 1 && eb != 1) {
            throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
        }
        out[r - 1 - i] = std::max(ea, eb);
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul); }

Tensor scale(const Tensor& x, Scalar factor) {
    return unary(x, [factor](Scalar v) { return v * factor; }, [factor](Scalar, Scalar) { return factor; });
}

Tensor add_scalar(const Tensor& x, Scalar value) {
    return unary(x, [value](Scalar v) { return v + value; }, [](Scalar, Scalar) { return Scalar(1); });
}

Tensor relu(const Tensor& x) {
    return unary(x, [](Scalar v) { return v > 0 ? v : Scalar(0); },
                 [](Scalar v, Scalar) { return v > 0 ? Scalar(1) : Scalar(0); });
}

Tensor sigmoid(const Tensor& x) {
    return unary(x, sigmoid_scalar, [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

Tensor swish(const Tensor& x) {
    return unary(x, [](Scalar v) { return v * sigmoid_scalar(v); },
                 [](Scalar v, Scalar) {
                     const Scalar s = sigmoid_scalar(v);
                     return s * (Scalar(1) + v * (Scalar(1) - s));
                 });
}

Tensor abs(const Tensor& x) {
    return unary(x, [](Scalar v) { return std::abs(v); },
                 [](Scalar v, Scalar) { return v > 0 ? Scalar(1) : (v < 0 ? Scalar(-1) : Scalar(0)); });
}

Tensor exp(const Tensor& x) {
    return unary(x, [](Scalar v) { return std::exp(v); }, [](Scalar, Scalar y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary(x, [](Scalar v) { return std::log(v); }, [](Scalar v, Scalar) { return Scalar(1) / v; });
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2) {
        throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(as) + " and " + shape_str(bs));
    }
    const std::int64_t m = as[as.size() - 2], k = as.back(), n = bs.back();
    if (bs[bs.size() - 2] != k) {
        throw ShapeError("matmul inner extents differ: " + shape_str(as) + " x " + shape_str(bs));
    }
    const Shape batch_a(as.begin(), as.end() - 2);
    const Shape batch_b(bs.begin(), bs.end() - 2);
    NodePtr an = a.node(), bn = b.node();

    if (batch_b.empty()) {
        // Weight-style right operand: one GEMM over the flattened batch.
        const std::int64_t rows = shape_numel(batch_a) * m;
        Shape out = batch_a;
        out.push_back(m);
        out.push_back(n);
        Vec y(static_cast<std::size_t>(rows * n));
        kernels::gemm({.m = rows, .n = n, .k = k, .a = a.data().data(), .lda = k, .b = b.data().data(),
                       .ldb = n, .c = y.data(), .ldc = n});
        return make_op_result(out, std::move(y), {a, b}, [an, bn, rows, n, k](const TensorNode& self) {
            if (an->requires_grad) {
                kernels::gemm({.trans_b = true, .m = rows, .n = k, .k = n, .a = self.grad.data(), .lda = n,
                               .b = bn->data.data(), .ldb = n, .c = an->ensure_grad().data(), .ldc = k,
                               .accumulate = true});
            }
            if (bn->requires_grad) {
                kernels::gemm({.trans_a = true, .m = k, .n = n, .k = rows, .a = an->data.data(), .lda = k,
                               .b = self.grad.data(), .ldb = n, .c = bn->ensure_grad().data(), .ldc = n,
                               .accumulate = true});
            }
        });
    }

    const Shape batch_out = broadcast_shape(batch_a.empty() ? Shape{1} : batch_a, batch_b);
    const Shape ba = batch_a.empty() ? Shape{1} : batch_a;
    const auto sa = broadcast_strides(ba, batch_out);
    const auto sb = broadcast_strides(batch_b, batch_out);
    const std::int64_t nbatch = shape_numel(batch_out);
    std::vector<std::int64_t> off_a(nbatch), off_b(nbatch);
    broadcast_for_each(batch_out, sa, sb, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
        off_a[i] = ia * m * k;
        off_b[i] = ib * k * n;
    });
    Shape out = batch_out;
    out.push_back(m);
    out.push_back(n);
    Vec y(static_cast<std::size_t>(nbatch * m * n));
    for (std::int64_t i = 0; i < nbatch; ++i) {
        kernels::gemm({.m = m, .n = n, .k = k, .a = a.data().data() + off_a[i], .lda = k,
                       .b = b.data().data() + off_b[i], .ldb = n, .c = y.data() + i * m * n, .ldc = n});
    }
    return make_op_result(out, std::move(y), {a, b}, [an, bn, m, n, k, nbatch, off_a, off_b](const TensorNode& self) {
        for (std::int64_t i = 0; i < nbatch; ++i) {
            const Scalar* g = self.grad.data() + i * m * n;
            if (an->requires_grad) {
                kernels::gemm({.trans_b = true, .m = m, .n = k, .k = n, .a = g, .lda = n,
                               .b = bn->data.data() + off_b[i], .ldb = n,
                               .c = an->ensure_grad().data() + off_a[i], .ldc = k, .accumulate = true});
            }
            if (bn->requires_grad) {
                kernels::gemm({.trans_a = true, .m = k, .n = n, .k = m, .a = an->data.data() + off_a[i],
                               .lda = k, .b = g, .ldb = n, .c = bn->ensure_grad().data() + off_b[i],
                               .ldc = n, .accumulate = true});
            }
        }
    });
}

// ---- gating and normalisation ----

Tensor glu(const Tensor& x, int axis) {
    const int ax = normalize_axis(axis, x.rank());
    const auto sp = split_at(x.shape(), ax);
    if (sp.len % 2 != 0) {
        throw ShapeError("glu needs an even extent on axis " + std::to_string(ax) + ", got " + shape_str(x.shape()));
    }
    const std::int64_t half = sp.len / 2;
    Shape out = x.shape();
    out[ax] = half;
    const auto& xd = x.node()->data;
    Vec y(static_cast<std::size_t>(shape_numel(out)));
    for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t l = 0; l < half; ++l)
            for (std::int64_t i = 0; i < sp.inner; ++i) {
                const Scalar av = xd[(o * sp.len + l) * sp.inner + i];
                const Scalar bv = xd[(o * sp.len + l + half) * sp.inner + i];
                y[(o * half + l) * sp.inner + i] = av * sigmoid_scalar(bv);
            }
    NodePtr xn = x.node();
    return make_op_result(out, std::move(y), {x}, [xn, sp, half](const TensorNode& self) {
        auto& gx = xn->ensure_grad();
        for (std::int64_t o = 0; o < sp.outer; ++o)
            for (std::int64_t l = 0; l < half; ++l)
                for (std::int64_t i = 0; i < sp.inner; ++i) {
                    const std::int64_t ia = (o * sp.len + l) * sp.inner + i;
                    const std::int64_t ib = (o * sp.len + l + half) * sp.inner + i;
                    const Scalar g = self.grad[(o * half + l) * sp.inner + i];
                    const Scalar s = sigmoid_scalar(xn->data[ib]);
                    gx[ia] += g * s;
                    gx[ib] += g * xn->data[ia] * s * (Scalar(1) - s);
                }
    });
}

namespace {

Tensor softmax_impl(const Tensor& x, int axis, bool log_space) {
    const int ax = normalize_axis(axis, x.rank());
    const auto sp = split_at(x.shape(), ax);
    const auto& xd = x.node()->data;
    Vec y(xd.size());
    for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t i = 0; i < sp.inner; ++i) {
            const std::int64_t base = o * sp.len * sp.inner + i;
            Scalar mx = -std::numeric_limits<Scalar>::infinity();
            for (std::int64_t l = 0; l < sp.len; ++l) mx = std::max(mx, xd[base + l * sp.inner]);
            Scalar z = 0;
            for (std::int64_t l = 0; l < sp.len; ++l) z += std::exp(xd[base + l * sp.inner] - mx);
            const Scalar logz = mx + std::log(z);
            for (std::int64_t l = 0; l < sp.len; ++l) {
                const Scalar v = xd[base + l * sp.inner] - logz;
                y[base + l * sp.inner] = log_space ? v : std::exp(v);
            }
        }
    NodePtr xn = x.node();
    return make_op_result(x.shape(), std::move(y), {x}, [xn, sp, log_space](const TensorNode& self) {
        auto& gx = xn->ensure_grad();
        for (std::int64_t o = 0; o < sp.outer; ++o)
            for (std::int64_t i = 0; i < sp.inner; ++i) {
                const std::int64_t base = o * sp.len * sp.inner + i;
                if (log_space) {
                    Scalar gsum = 0;
                    for (std::int64_t l = 0; l < sp.len; ++l) gsum += self.grad[base + l * sp.inner];
                    for (std::int64_t l = 0; l < sp.len; ++l) {
                        const std::int64_t j = base + l * sp.inner;
                        gx[j] += self.grad[j] - std::exp(self.data[j]) * gsum;
                    }
                } else {
                    Scalar dot = 0;
                    for (std::int64_t l = 0; l < sp.len; ++l) {
                        const std::int64_t j = base + l * sp.inner;
                        dot += self.grad[j] * self.data[j];
                    }
                    for (std::int64_t l = 0; l < sp.len; ++l) {
                        const std::int64_t j = base + l * sp.inner;
                        gx[j] += self.data[j] * (self.grad[j] - dot);
                    }
                }
            }
    });
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) { return softmax_impl(x, axis, false); }
Tensor log_softmax(const Tensor& x, int axis) { return softmax_impl(x, axis, true); }

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps) {
    const std::int64_t d = x.shape().back();
    if (gain.numel() != d || bias.numel() != d) {
        throw ShapeError("layernorm parameters must have " + std::to_string(d) + " elements");
    }
    const std::int64_t rows = x.numel() / d;
    const auto& xd = x.node()->data;
    const auto& gd = gain.node()->data;
    const auto& bd = bias.node()->data;
    Vec y(xd.size()), xhat(xd.size()), inv_std(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const Scalar* row = xd.data() + r * d;
        Scalar mu = 0;
        for (std::int64_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<Scalar>(d);
        Scalar var = 0;
        for (std::int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<Scalar>(d);
        const Scalar is = Scalar(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            const Scalar h = (row[j] - mu) * is;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gd[j] + bd[j];
        }
    }
    NodePtr xn = x.node(), gn = gain.node(), bn = bias.node();
    return make_op_result(x.shape(), std::move(y), {x, gain, bias},
                          [xn, gn, bn, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](const TensorNode& self) {
        Vec* gx = xn->requires_grad ? &xn->ensure_grad() : nullptr;
        Vec* gg = gn->requires_grad ? &gn->ensure_grad() : nullptr;
        Vec* gb = bn->requires_grad ? &bn->ensure_grad() : nullptr;
        for (std::int64_t r = 0; r < rows; ++r) {
            const Scalar* g = self.grad.data() + r * d;
            const Scalar* h = xhat.data() + r * d;
            Scalar m1 = 0, m2 = 0;
            for (std::int64_t j = 0; j < d; ++j) {
                const Scalar dh = g[j] * gn->data[j];
                m1 += dh;
                m2 += dh * h[j];
                if (gg) (*gg)[j] += g[j] * h[j];
                if (gb) (*gb)[j] += g[j];
            }
            if (!gx) continue;
            m1 /= static_cast<Scalar>(d);
            m2 /= static_cast<Scalar>(d);
            for (std::int64_t j = 0; j < d; ++j) {
                (*gx)[r * d + j] += inv_std[r] * (g[j] * gn->data[j] - m1 - h[j] * m2);
            }
        }
    });
}

Tensor batchnorm(const Tensor& x, const Tensor& gain, const Tensor& bias, BatchNormStats& stats, bool training,
                 const std::vector<std::uint8_t>* mask) {
    if (x.rank() < 2) throw ShapeError("batchnorm expects [B, C, ...], got " + shape_str(x.shape()));
    const std::int64_t B = x.dim(0), C = x.dim(1);
    const std::int64_t S = x.numel() / (B * C);
    if (gain.numel() != C || bias.numel() != C) throw ShapeError("batchnorm parameters must have C elements");
    if (mask && static_cast<std::int64_t>(mask->size()) != B * S) {
        throw ShapeError("batchnorm mask must have B*spatial entries");
    }
    if (stats.running_mean.empty()) {
        stats.running_mean.assign(static_cast<std::size_t>(C), Scalar(0));
        stats.running_var.assign(static_cast<std::size_t>(C), Scalar(1));
    }
    auto valid = [mask, S](std::int64_t b, std::int64_t s) { return !mask || (*mask)[b * S + s] != 0; };
    const auto& xd = x.node()->data;
    Vec mu(static_cast<std::size_t>(C)), inv_std(static_cast<std::size_t>(C));
    std::vector<std::int64_t> count(static_cast<std::size_t>(C), 0);
    for (std::int64_t c = 0; c < C; ++c) {
        if (training) {
            Scalar m = 0;
            std::int64_t n = 0;
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t s = 0; s < S; ++s)
                    if (valid(b, s)) {
                        m += xd[(b * C + c) * S + s];
                        ++n;
                    }
            if (n == 0) throw DataError("batchnorm over an empty (fully masked) batch");
            m /= static_cast<Scalar>(n);
            Scalar v = 0;
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t s = 0; s < S; ++s)
                    if (valid(b, s)) {
                        const Scalar dlt = xd[(b * C + c) * S + s] - m;
                        v += dlt * dlt;
                    }
            const Scalar biased = v / static_cast<Scalar>(n);
            const Scalar unbiased = n > 1 ? v / static_cast<Scalar>(n - 1) : biased;
            stats.running_mean[c] = (1 - stats.momentum) * stats.running_mean[c] + stats.momentum * m;
            stats.running_var[c] = (1 - stats.momentum) * stats.running_var[c] + stats.momentum * unbiased;
            mu[c] = m;
            inv_std[c] = Scalar(1) / std::sqrt(biased + stats.eps);
            count[c] = n;
        } else {
            mu[c] = stats.running_mean[c];
            inv_std[c] = Scalar(1) / std::sqrt(stats.running_var[c] + stats.eps);
        }
    }
    const auto& gd = gain.node()->data;
    const auto& bd = bias.node()->data;
    Vec y(xd.size(), Scalar(0)), xhat(xd.size(), Scalar(0));
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t s = 0; s < S; ++s) {
                if (!valid(b, s)) continue;
                const std::int64_t i = (b * C + c) * S + s;
                xhat[i] = (xd[i] - mu[c]) * inv_std[c];
                y[i] = xhat[i] * gd[c] + bd[c];
            }
    std::vector<std::uint8_t> mask_copy = mask ? *mask : std::vector<std::uint8_t>{};
    NodePtr xn = x.node(), gn = gain.node(), bn = bias.node();
    return make_op_result(x.shape(), std::move(y), {x, gain, bias},
                          [xn, gn, bn, B, C, S, training, xhat = std::move(xhat), inv_std, count,
                           mask_copy = std::move(mask_copy)](const TensorNode& self) {
        auto valid = [&](std::int64_t b, std::int64_t s) { return mask_copy.empty() || mask_copy[b * S + s] != 0; };
        Vec* gx = xn->requires_grad ? &xn->ensure_grad() : nullptr;
        Vec* gg = gn->requires_grad ? &gn->ensure_grad() : nullptr;
        Vec* gb = bn->requires_grad ? &bn->ensure_grad() : nullptr;
        for (std::int64_t c = 0; c < C; ++c) {
            Scalar sum_g = 0, sum_gh = 0;
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t s = 0; s < S; ++s) {
                    if (!valid(b, s)) continue;
                    const std::int64_t i = (b * C + c) * S + s;
                    sum_g += self.grad[i];
                    sum_gh += self.grad[i] * xhat[i];
                }
            if (gg) (*gg)[c] += sum_gh;
            if (gb) (*gb)[c] += sum_g;
            if (!gx) continue;
            const Scalar gamma = gn->data[c];
            const Scalar n = training ? static_cast<Scalar>(count[c]) : Scalar(1);
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t s = 0; s < S; ++s) {
                    if (!valid(b, s)) continue;
                    const std::int64_t i = (b * C + c) * S + s;
                    Scalar v = self.grad[i];
                    if (training) v -= sum_g / n + xhat[i] * sum_gh / n;
                    (*gx)[i] += gamma * inv_std[c] * v;
                }
        }
    });
}

Tensor dropout(const Tensor& x, Scalar p, std::mt19937_64& rng, bool training) {
    if (!(p >= 0 && p < 1)) throw ConfigError("dropout probability must be in [0, 1), got " + std::to_string(p));
    if (!training || p == 0) return x;
    std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
    const Scalar sc = Scalar(1) / (Scalar(1) - p);
    Vec m(static_cast<std::size_t>(x.numel()));
    for (auto& v : m) v = keep(rng) ? sc : Scalar(0);
    const auto& xd = x.node()->data;
    Vec y(xd.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = xd[i] * m[i];
    NodePtr xn = x.node();
    return make_op_result(x.shape(), std::move(y), {x}, [xn, m = std::move(m)](const TensorNode& self) {
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * m[i];
    });
}

// ---- reductions ----

Tensor sum(const Tensor& x) {
    Scalar s = 0;
    for (Scalar v : x.data()) s += v;
    NodePtr xn = x.node();
    return make_op_result({1}, {s}, {x}, [xn](const TensorNode& self) {
        auto& gx = xn->ensure_grad();
        for (auto& g : gx) g += self.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.numel())); }

Tensor sum(const Tensor& x, int axis, bool keepdim) {
    const int ax = normalize_axis(axis, x.rank());
    const auto sp = split_at(x.shape(), ax);
    Shape out = x.shape();
    if (keepdim) {
        out[ax] = 1;
    } else {
        out.erase(out.begin() + ax);
        if (out.empty()) out.push_back(1);
    }
    const auto& xd = x.node()->data;
    Vec y(static_cast<std::size_t>(sp.outer * sp.inner), Scalar(0));
    for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t l = 0; l < sp.len; ++l)
            for (std::int64_t i = 0; i < sp.inner; ++i) y[o * sp.inner + i] += xd[(o * sp.len + l) * sp.inner + i];
    NodePtr xn = x.node();
    return make_op_result(out, std::move(y), {x}, [xn, sp](const TensorNode& self) {
        auto& gx = xn->ensure_grad();
        for (std::int64_t o = 0; o < sp.outer; ++o)
            for (std::int64_t l = 0; l < sp.len; ++l)
                for (std::int64_t i = 0; i < sp.inner; ++i)
                    gx[(o * sp.len + l) * sp.inner + i] += self.grad[o * sp.inner + i];
    });
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
    const int ax = normalize_axis(axis, x.rank());
    return scale(sum(x, ax, keepdim), Scalar(1) / static_cast<Scalar>(x.dim(ax)));
}

Tensor l1_distance(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("l1_distance shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    return mean(abs(sub(a, b)));
}

// ---- layout ----

Tensor reshape(const Tensor& x, const Shape& shape) {
    Shape out = shape;
    std::int64_t known = 1;
    int infer = -1;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i] == -1) {
            if (infer >= 0) throw ShapeError("reshape allows a single -1");
            infer = static_cast<int>(i);
        } else {
            known *= out[i];
        }
    }
    if (infer >= 0 && known > 0) out[infer] = x.numel() / known;
    if (shape_numel(out) != x.numel()) {
        throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    NodePtr xn = x.node();
    return make_op_result(out, x.node()->data, {x}, [xn](const TensorNode& self) {
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
    const int r = x.rank();
    if (static_cast<int>(perm.size()) != r) throw ShapeError("permute rank mismatch for " + shape_str(x.shape()));
    std::vector<std::int64_t> in_strides(r);
    std::int64_t s = 1;
    for (int d = r - 1; d >= 0; --d) {
        in_strides[d] = s;
        s *= x.shape()[d];
    }
    Shape out(r);
    std::vector<std::int64_t> src_strides(r);
    std::vector<bool> seen(r, false);
    for (int d = 0; d < r; ++d) {
        const int p = normalize_axis(perm[d], r);
        if (seen[p]) throw ShapeError("permute axes must be distinct");
        seen[p] = true;
        out[d] = x.shape()[p];
        src_strides[d] = in_strides[p];
    }
    const std::int64_t n = x.numel();
    std::vector<std::int64_t> src(static_cast<std::size_t>(n));
    const std::vector<std::int64_t> zero(r, 0);
    broadcast_for_each(out, src_strides, zero, [&](std::int64_t i, std::int64_t ia, std::int64_t) { src[i] = ia; });
    const auto& xd = x.node()->data;
    Vec y(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) y[i] = xd[src[i]];
    NodePtr xn = x.node();
    return make_op_result(out, std::move(y), {x}, [xn, src = std::move(src)](const TensorNode& self) {
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += self.grad[i];
    });
}

Tensor transpose(const Tensor& x, int axis_a, int axis_b) {
    std::vector<int> perm(x.rank());
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[normalize_axis(axis_a, x.rank())], perm[normalize_axis(axis_b, x.rank())]);
    return permute(x, perm);
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
    const int ax = normalize_axis(axis, x.rank());
    const auto sp = split_at(x.shape(), ax);
    if (start < 0 || length <= 0 || start + length > sp.len) {
        throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range for " +
                         shape_str(x.shape()));
    }
    Shape out = x.shape();
    out[ax] = length;
    const auto& xd = x.node()->data;
    Vec y(static_cast<std::size_t>(shape_numel(out)));
    for (std::int64_t o = 0; o < sp.outer; ++o)
        std::copy_n(xd.begin() + (o * sp.len + start) * sp.inner, length * sp.inner, y.begin() + o * length * sp.inner);
    NodePtr xn = x.node();
    return make_op_result(out, std::move(y), {x}, [xn, sp, start, length](const TensorNode& self) {
        auto& gx = xn->ensure_grad();
        for (std::int64_t o = 0; o < sp.outer; ++o)
            for (std::int64_t j = 0; j < length * sp.inner; ++j)
                gx[(o * sp.len + start) * sp.inner + j] += self.grad[o * length * sp.inner + j];
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const int ax = normalize_axis(axis, parts[0].rank());
    Shape out = parts[0].shape();
    out[ax] = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != out.size()) throw ShapeError("concat rank mismatch");
        const std::int64_t e = s[ax];
        s[ax] = 0;
        for (std::size_t d = 0; d < s.size(); ++d) {
            if (static_cast<int>(d) != ax && s[d] != out[d]) {
                throw ShapeError("concat shape mismatch: " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
            }
        }
        out[ax] += e;
    }
    const auto sp = split_at(out, ax);
    Vec y(static_cast<std::size_t>(shape_numel(out)));
    std::vector<std::int64_t> offsets;
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const std::int64_t len = p.dim(ax);
        offsets.push_back(off);
        for (std::int64_t o = 0; o < sp.outer; ++o)
            std::copy_n(p.data().begin() + o * len * sp.inner, len * sp.inner, y.begin() + (o * sp.len + off) * sp.inner);
        off += len;
    }
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return make_op_result(out, std::move(y), parts, [nodes, offsets, sp, ax](const TensorNode& self) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            if (!nodes[k]->requires_grad) continue;
            auto& g = nodes[k]->ensure_grad();
            const std::int64_t len = nodes[k]->shape[ax];
            for (std::int64_t o = 0; o < sp.outer; ++o)
                for (std::int64_t j = 0; j < len * sp.inner; ++j)
                    g[o * len * sp.inner + j] += self.grad[(o * sp.len + offsets[k]) * sp.inner + j];
        }
    });
}

// ---- convolution and pooling ----

namespace {

std::vector<std::int64_t> expand_param(const std::vector<std::int64_t>& v, int dims, std::int64_t fallback,
                                       const char* what) {
    if (v.empty()) return std::vector<std::int64_t>(dims, fallback);
    if (v.size() == 1) return std::vector<std::int64_t>(dims, v[0]);
    if (static_cast<int>(v.size()) != dims) {
        throw ConfigError(std::string(what) + " needs 1 or " + std::to_string(dims) + " values");
    }
    return v;
}

kernels::ConvGeometry make_geometry(const Shape& xs, const Shape& ws, const ConvOptions& opt) {
    const int dims = static_cast<int>(ws.size()) - 2;
    if (dims < 1 || dims > 3) throw ConfigError("convolution supports 1, 2 or 3 spatial dims");
    if (static_cast<int>(xs.size()) != dims + 2) {
        throw ShapeError("conv input " + shape_str(xs) + " does not match kernel rank of " + shape_str(ws));
    }
    const auto stride = expand_param(opt.stride, dims, 1, "stride");
    const auto pad = expand_param(opt.pad, dims, 0, "padding");
    kernels::ConvGeometry g;
    g.batch = xs[0];
    g.in_channels = xs[1];
    g.out_channels = ws[0];
    g.groups = opt.groups;
    if (g.groups <= 0 || xs[1] % g.groups != 0 || ws[1] * g.groups != xs[1]) {
        throw ConfigError("conv channel/group mismatch: input " + shape_str(xs) + ", kernel " + shape_str(ws) +
                          ", groups " + std::to_string(opt.groups));
    }
    for (int d = 0; d < dims; ++d) {
        const int slot = 3 - dims + d;
        g.in[slot] = xs[2 + d];
        g.kernel[slot] = ws[2 + d];
        g.stride[slot] = stride[d];
        g.pad[slot] = pad[d];
    }
    kernels::resolve_output_extents(g);
    return g;
}

}  // namespace

Shape conv_output_shape(const Shape& input, const Shape& weight, const ConvOptions& opt) {
    const auto g = make_geometry(input, weight, opt);
    const int dims = static_cast<int>(weight.size()) - 2;
    Shape out{input[0], weight[0]};
    for (int d = 0; d < dims; ++d) out.push_back(g.out[3 - dims + d]);
    return out;
}

Tensor conv(const Tensor& x, const Tensor& weight, const Tensor* bias, const ConvOptions& opt) {
    const auto g = make_geometry(x.shape(), weight.shape(), opt);
    const Shape out = conv_output_shape(x.shape(), weight.shape(), opt);
    Vec y(static_cast<std::size_t>(shape_numel(out)));
    kernels::conv_forward(g, x.data().data(), weight.data().data(), y.data());
    const std::int64_t P = g.out_spatial();
    if (bias) {
        if (bias->numel() != g.out_channels) throw ShapeError("conv bias must have Cout elements");
        for (std::int64_t b = 0; b < g.batch; ++b)
            for (std::int64_t c = 0; c < g.out_channels; ++c) {
                Scalar* row = y.data() + (b * g.out_channels + c) * P;
                const Scalar bv = bias->data()[c];
                for (std::int64_t p = 0; p < P; ++p) row[p] += bv;
            }
    }
    std::vector<Tensor> inputs{x, weight};
    if (bias) inputs.push_back(*bias);
    NodePtr xn = x.node(), wn = weight.node(), bn = bias ? bias->node() : nullptr;
    return make_op_result(out, std::move(y), inputs, [xn, wn, bn, g, P](const TensorNode& self) {
        if (xn->requires_grad) kernels::conv_backward_input(g, self.grad.data(), wn->data.data(), xn->ensure_grad().data());
        if (wn->requires_grad) kernels::conv_backward_weight(g, xn->data.data(), self.grad.data(), wn->ensure_grad().data());
        if (bn && bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (std::int64_t b = 0; b < g.batch; ++b)
                for (std::int64_t c = 0; c < g.out_channels; ++c) {
                    const Scalar* row = self.grad.data() + (b * g.out_channels + c) * P;
                    Scalar s = 0;
                    for (std::int64_t p = 0; p < P; ++p) s += row[p];
                    gb[c] += s;
                }
        }
    });
}

namespace {

// Pool geometry over [N = B*C planes, spatial...]; reuses the conv geometry
// with one channel per plane.
kernels::ConvGeometry pool_geometry(const Shape& xs, const std::vector<std::int64_t>& kernel,
                                    const std::vector<std::int64_t>& stride, const std::vector<std::int64_t>& pad) {
    const int dims = static_cast<int>(kernel.size());
    if (dims < 1 || dims > 3 || static_cast<int>(xs.size()) != dims + 2) {
        throw ShapeError("pooling kernel rank does not match input " + shape_str(xs));
    }
    const auto st = expand_param(stride, dims, 1, "stride");
    const auto pd = expand_param(pad, dims, 0, "padding");
    kernels::ConvGeometry g;
    g.batch = xs[0] * xs[1];
    for (int d = 0; d < dims; ++d) {
        const int slot = 3 - dims + d;
        g.in[slot] = xs[2 + d];
        g.kernel[slot] = kernel[d];
        g.stride[slot] = st[d];
        g.pad[slot] = pd[d];
    }
    kernels::resolve_output_extents(g);
    return g;
}

Shape pool_output_shape(const Shape& xs, const kernels::ConvGeometry& g, int dims) {
    Shape out{xs[0], xs[1]};
    for (int d = 0; d < dims; ++d) out.push_back(g.out[3 - dims + d]);
    return out;
}

}  // namespace

Tensor max_pool(const Tensor& x, const std::vector<std::int64_t>& kernel, const std::vector<std::int64_t>& stride,
                const std::vector<std::int64_t>& pad) {
    const auto g = pool_geometry(x.shape(), kernel, stride, pad);
    const Shape out = pool_output_shape(x.shape(), g, static_cast<int>(kernel.size()));
    const std::int64_t P = g.out_spatial(), I = g.in_spatial();
    Vec y(static_cast<std::size_t>(shape_numel(out)));
    std::vector<std::int64_t> arg(y.size(), -1);
    const auto& xd = x.node()->data;
#pragma omp parallel for schedule(static) if (g.batch * P > 65536)
    for (std::int64_t n = 0; n < g.batch; ++n)
        for (std::int64_t p = 0; p < P; ++p) {
            const std::int64_t ox = p % g.out[2], oy = (p / g.out[2]) % g.out[1], oz = p / (g.out[2] * g.out[1]);
            Scalar best = -std::numeric_limits<Scalar>::infinity();
            std::int64_t where = -1;
            for (std::int64_t kz = 0; kz < g.kernel[0]; ++kz)
                for (std::int64_t ky = 0; ky < g.kernel[1]; ++ky)
                    for (std::int64_t kx = 0; kx < g.kernel[2]; ++kx) {
                        const std::int64_t iz = oz * g.stride[0] - g.pad[0] + kz;
                        const std::int64_t iy = oy * g.stride[1] - g.pad[1] + ky;
                        const std::int64_t ix = ox * g.stride[2] - g.pad[2] + kx;
                        if (iz < 0 || iz >= g.in[0] || iy < 0 || iy >= g.in[1] || ix < 0 || ix >= g.in[2]) continue;
                        const std::int64_t i = n * I + (iz * g.in[1] + iy) * g.in[2] + ix;
                        if (where < 0 || xd[i] > best) {
                            best = xd[i];
                            where = i;
                        }
                    }
            y[n * P + p] = best;
            arg[n * P + p] = where;
        }
    NodePtr xn = x.node();
    return make_op_result(out, std::move(y), {x}, [xn, arg = std::move(arg)](const TensorNode& self) {
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < arg.size(); ++i)
            if (arg[i] >= 0) gx[arg[i]] += self.grad[i];
    });
}

Tensor avg_pool(const Tensor& x, const std::vector<std::int64_t>& kernel, const std::vector<std::int64_t>& stride) {
    const auto g = pool_geometry(x.shape(), kernel, stride, {});
    const Shape out = pool_output_shape(x.shape(), g, static_cast<int>(kernel.size()));
    const std::int64_t P = g.out_spatial(), I = g.in_spatial();
    const Scalar inv = Scalar(1) / static_cast<Scalar>(g.kernel_volume());
    const auto& xd = x.node()->data;
    Vec y(static_cast<std::size_t>(shape_numel(out)), Scalar(0));
    auto visit = [g](std::int64_t p, auto&& f) {
        const std::int64_t ox = p % g.out[2], oy = (p / g.out[2]) % g.out[1], oz = p / (g.out[2] * g.out[1]);
        for (std::int64_t kz = 0; kz < g.kernel[0]; ++kz)
            for (std::int64_t ky = 0; ky < g.kernel[1]; ++ky)
                for (std::int64_t kx = 0; kx < g.kernel[2]; ++kx) {
                    const std::int64_t iz = oz * g.stride[0] + kz, iy = oy * g.stride[1] + ky, ix = ox * g.stride[2] + kx;
                    f((iz * g.in[1] + iy) * g.in[2] + ix);
                }
    };
    for (std::int64_t n = 0; n < g.batch; ++n)
        for (std::int64_t p = 0; p < P; ++p) {
            Scalar s = 0;
            visit(p, [&](std::int64_t i) { s += xd[n * I + i]; });
            y[n * P + p] = s * inv;
        }
    NodePtr xn = x.node();
    return make_op_result(out, std::move(y), {x}, [xn, g, P, I, inv, visit](const TensorNode& self) {
        auto& gx = xn->ensure_grad();
        for (std::int64_t n = 0; n < g.batch; ++n)
            for (std::int64_t p = 0; p < P; ++p) {
                const Scalar gv = self.grad[n * P + p] * inv;
                visit(p, [&](std::int64_t i) { gx[n * I + i] += gv; });
            }
    });
}

// ---- indexing ----

Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& ids, const Shape& prefix) {
    if (table.rank() != 2) throw ShapeError("embedding table must be [V, D]");
    const std::int64_t V = table.dim(0), D = table.dim(1);
    if (shape_numel(prefix) != static_cast<std::int64_t>(ids.size())) throw ShapeError("embedding prefix/id count mismatch");
    Shape out = prefix;
    out.push_back(D);
    Vec y(static_cast<std::size_t>(ids.size() * D));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= V) throw ShapeError("embedding id " + std::to_string(ids[i]) + " out of range");
        std::copy_n(table.data().begin() + ids[i] * D, D, y.begin() + static_cast<std::int64_t>(i) * D);
    }
    NodePtr tn = table.node();
    return make_op_result(out, std::move(y), {table}, [tn, ids, D](const TensorNode& self) {
        auto& g = tn->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::int64_t d = 0; d < D; ++d) g[ids[i] * D + d] += self.grad[static_cast<std::int64_t>(i) * D + d];
    });
}

Tensor pick(const Tensor& x, const std::vector<std::int64_t>& index) {
    if (x.rank() != 2 || x.dim(0) != static_cast<std::int64_t>(index.size())) {
        throw ShapeError("pick expects [N, V] with N indices, got " + shape_str(x.shape()));
    }
    const std::int64_t V = x.dim(1);
    Vec y(index.size());
    for (std::size_t n = 0; n < index.size(); ++n) {
        if (index[n] < 0 || index[n] >= V) throw ShapeError("pick index out of range");
        y[n] = x.data()[static_cast<std::int64_t>(n) * V + index[n]];
    }
    NodePtr xn = x.node();
    return make_op_result({static_cast<std::int64_t>(index.size())}, std::move(y), {x}, [xn, index, V](const TensorNode& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t n = 0; n < index.size(); ++n) g[static_cast<std::int64_t>(n) * V + index[n]] += self.grad[n];
    });
}

Tensor masked_fill(const Tensor& x, const Tensor& mask, Scalar value) {
    const Shape out = broadcast_shape(x.shape(), mask.shape());
    if (out != x.shape()) throw ShapeError("mask " + shape_str(mask.shape()) + " does not broadcast to " + shape_str(x.shape()));
    const auto& xd = x.node()->data;
    const auto& md = mask.node()->data;
    Vec y(xd.size());
    std::vector<std::uint8_t> keep(xd.size());
    broadcast_for_each(out, broadcast_strides(x.shape(), out), broadcast_strides(mask.shape(), out),
                       [&](std::int64_t i, std::int64_t ix, std::int64_t im) {
                           keep[i] = md[im] != 0;
                           y[i] = keep[i] ? xd[ix] : value;
                       });
    NodePtr xn = x.node();
    return make_op_result(out, std::move(y), {x}, [xn, keep = std::move(keep)](const TensorNode& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < keep.size(); ++i)
            if (keep[i]) g[i] += self.grad[i];
    });
}

Tensor relative_logits(const Tensor& x, std::int64_t clip) {
    const std::int64_t R = 2 * clip + 1;
    if (x.rank() < 2 || x.shape().back() != R) {
        throw ShapeError("relative_logits expects [..., T, " + std::to_string(R) + "], got " + shape_str(x.shape()));
    }
    const std::int64_t T = x.dim(-2);
    const std::int64_t outer = x.numel() / (T * R);
    Shape out = x.shape();
    out.back() = T;
    std::vector<std::int64_t> col(static_cast<std::size_t>(T * T));
    for (std::int64_t i = 0; i < T; ++i)
        for (std::int64_t j = 0; j < T; ++j) col[i * T + j] = std::clamp(j - i, -clip, clip) + clip;
    const auto& xd = x.node()->data;
    Vec y(static_cast<std::size_t>(outer * T * T));
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < T; ++i)
            for (std::int64_t j = 0; j < T; ++j) y[(o * T + i) * T + j] = xd[(o * T + i) * R + col[i * T + j]];
    NodePtr xn = x.node();
    return make_op_result(out, std::move(y), {x}, [xn, col = std::move(col), outer, T, R](const TensorNode& self) {
        auto& g = xn->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < T; ++i)
                for (std::int64_t j = 0; j < T; ++j) g[(o * T + i) * R + col[i * T + j]] += self.grad[(o * T + i) * T + j];
    });
}

}  // namespace vsr::ops
