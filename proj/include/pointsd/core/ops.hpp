#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "pointsd/core/autograd.hpp"

// Differentiable tensor operations. Matrices are rank-2 row-major; images are
// [C, H, W]. Every op validates shapes and throws std::invalid_argument.
namespace pointsd::ops {

using ag::Graph;
using ag::Node;
using ag::Var;

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

/// C += alpha * op(A) * op(B)
template <class T>
void gemm_acc(MatMap<T> C, const ConstMatMap<T>& A, bool ta, const ConstMatMap<T>& B, bool tb, T alpha = T{1}) {
    if (!ta && !tb) C.noalias() += alpha * (A * B);
    else if (ta && !tb) C.noalias() += alpha * (A.transpose() * B);
    else if (!ta && tb) C.noalias() += alpha * (A * B.transpose());
    else C.noalias() += alpha * (A.transpose() * B.transpose());
}

template <class T>
T sigmoid(T x) {
    return T{1} / (T{1} + std::exp(-x));
}

}  // namespace detail

/// op(a) * op(b) for rank-2 tensors.
template <class T>
Var<T> matmul(Graph<T>& g, const Var<T>& a, const Var<T>& b, bool ta = false, bool tb = false) {
    const auto& A = a->val();
    const auto& B = b->val();
    detail::require(A.rank() == 2 && B.rank() == 2, "matmul: operands must be rank 2, got " +
                                                        shape_string(A.shape()) + " and " + shape_string(B.shape()));
    const std::size_t m = ta ? A.dim(1) : A.dim(0);
    const std::size_t k = ta ? A.dim(0) : A.dim(1);
    const std::size_t kb = tb ? B.dim(1) : B.dim(0);
    const std::size_t n = tb ? B.dim(0) : B.dim(1);
    detail::require(k == kb, "matmul: inner dimensions differ (" + shape_string(A.shape()) + " vs " +
                                 shape_string(B.shape()) + ")");
    Tensor<T> out({m, n});
    detail::gemm_acc<T>(as_matrix(out), as_matrix(A), ta, as_matrix(B), tb);
    return g.record(std::move(out), {a, b}, [ta, tb](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto dC = as_matrix(std::as_const(self.grad));
        if (pa.requires_grad) {
            auto& gA = pa.grad_ref();
            auto GA = as_matrix(gA);
            const auto Bm = as_matrix(pb.val());
            // d op(A) = dC op(B)^T
            if (!ta) detail::gemm_acc<T>(GA, dC, false, Bm, !tb);
            else detail::gemm_acc<T>(GA, Bm, tb, dC, true);
        }
        if (pb.requires_grad) {
            auto& gB = pb.grad_ref();
            auto GB = as_matrix(gB);
            const auto Am = as_matrix(pa.val());
            // d op(B) = op(A)^T dC
            if (!tb) detail::gemm_acc<T>(GB, Am, !ta, dC, false);
            else detail::gemm_acc<T>(GB, dC, true, Am, ta);
        }
    });
}

template <class T>
Var<T> add(Graph<T>& g, const Var<T>& a, const Var<T>& b) {
    detail::require(a->shape() == b->shape(),
                    "add: shape mismatch " + shape_string(a->shape()) + " vs " + shape_string(b->shape()));
    Tensor<T> out = a->val();
    out += b->val();
    return g.record(std::move(out), {a, b}, [](Node<T>& self) {
        for (auto& p : self.parents)
            if (p->requires_grad) p->grad_ref() += self.grad;
    });
}

template <class T>
Var<T> sub(Graph<T>& g, const Var<T>& a, const Var<T>& b) {
    detail::require(a->shape() == b->shape(),
                    "sub: shape mismatch " + shape_string(a->shape()) + " vs " + shape_string(b->shape()));
    Tensor<T> out = a->val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->val()[i];
    return g.record(std::move(out), {a, b}, [](Node<T>& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->grad_ref() += self.grad;
        if (self.parents[1]->requires_grad) {
            auto& gb = self.parents[1]->grad_ref();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
        }
    });
}

template <class T>
Var<T> mul(Graph<T>& g, const Var<T>& a, const Var<T>& b) {
    detail::require(a->shape() == b->shape(), "mul: shape mismatch");
    Tensor<T> out = a->val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->val()[i];
    return g.record(std::move(out), {a, b}, [](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& ga = pa.grad_ref();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * pb.val()[i];
        }
        if (pb.requires_grad) {
            auto& gb = pb.grad_ref();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * pa.val()[i];
        }
    });
}

template <class T>
Var<T> scale(Graph<T>& g, const Var<T>& a, T s) {
    Tensor<T> out = a->val();
    for (auto& v : out.storage()) v *= s;
    return g.record(std::move(out), {a}, [s](Node<T>& self) {
        auto& ga = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
    });
}

/// x[n, c] + v broadcast over rows; v holds c values (any shape).
template <class T>
Var<T> add_row_vector(Graph<T>& g, const Var<T>& x, const Var<T>& v) {
    const auto& X = x->val();
    const std::size_t c = X.cols();
    detail::require(X.rank() >= 1 && v->val().size() == c, "add_row_vector: vector of " +
                                                               std::to_string(v->val().size()) + " for " +
                                                               std::to_string(c) + " columns");
    Tensor<T> out = X;
    const std::size_t n = X.rows();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] += v->val()[j];
    return g.record(std::move(out), {x, v}, [n, c](Node<T>& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->grad_ref() += self.grad;
        if (self.parents[1]->requires_grad) {
            auto& gv = self.parents[1]->grad_ref();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < c; ++j) gv[j] += self.grad[r * c + j];
        }
    });
}

/// x[C, ...] + v[C] broadcast over everything after the leading dimension.
template <class T>
Var<T> add_channel_vector(Graph<T>& g, const Var<T>& x, const Var<T>& v) {
    const auto& X = x->val();
    const std::size_t C = X.dim(0);
    const std::size_t S = X.size() / C;
    detail::require(v->val().size() == C, "add_channel_vector: vector of " + std::to_string(v->val().size()) +
                                              " for " + std::to_string(C) + " channels");
    Tensor<T> out = X;
    for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t s = 0; s < S; ++s) out[ch * S + s] += v->val()[ch];
    return g.record(std::move(out), {x, v}, [C, S](Node<T>& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->grad_ref() += self.grad;
        if (self.parents[1]->requires_grad) {
            auto& gv = self.parents[1]->grad_ref();
            for (std::size_t ch = 0; ch < C; ++ch) {
                T acc{0};
                for (std::size_t s = 0; s < S; ++s) acc += self.grad[ch * S + s];
                gv[ch] += acc;
            }
        }
    });
}

template <class T>
Var<T> silu(Graph<T>& g, const Var<T>& x) {
    Tensor<T> out = x->val();
    for (auto& v : out.storage()) v = v * detail::sigmoid(v);
    return g.record(std::move(out), {x}, [](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& gx = px.grad_ref();
        const auto& X = px.val();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const T s = detail::sigmoid(X[i]);
            gx[i] += self.grad[i] * s * (T{1} + X[i] * (T{1} - s));
        }
    });
}

/// tanh-approximated GELU.
template <class T>
Var<T> gelu(Graph<T>& g, const Var<T>& x) {
    constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T c = T(0.044715);
    Tensor<T> out = x->val();
    for (auto& v : out.storage()) v = T(0.5) * v * (T{1} + std::tanh(k * (v + c * v * v * v)));
    return g.record(std::move(out), {x}, [](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& gx = px.grad_ref();
        const auto& X = px.val();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const T v = X[i];
            const T th = std::tanh(k * (v + c * v * v * v));
            const T d = T(0.5) * (T{1} + th) + T(0.5) * v * (T{1} - th * th) * k * (T{1} + T{3} * c * v * v);
            gx[i] += self.grad[i] * d;
        }
    });
}

template <class T>
Var<T> relu(Graph<T>& g, const Var<T>& x) {
    Tensor<T> out = x->val();
    for (auto& v : out.storage()) v = v > T{0} ? v : T{0};
    return g.record(std::move(out), {x}, [](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& gx = px.grad_ref();
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (px.val()[i] > T{0}) gx[i] += self.grad[i];
    });
}

/// Row-wise softmax of a rank-2 tensor.
template <class T>
Var<T> softmax_rows(Graph<T>& g, const Var<T>& x) {
    const auto& X = x->val();
    detail::require(X.rank() == 2, "softmax_rows: rank-2 input required");
    const std::size_t n = X.dim(0), c = X.dim(1);
    Tensor<T> out({n, c});
    for (std::size_t r = 0; r < n; ++r) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, X(r, j));
        T sum{0};
        for (std::size_t j = 0; j < c; ++j) {
            out(r, j) = std::exp(X(r, j) - mx);
            sum += out(r, j);
        }
        for (std::size_t j = 0; j < c; ++j) out(r, j) /= sum;
    }
    return g.record(std::move(out), {x}, [n, c](Node<T>& self) {
        auto& gx = self.parents[0]->grad_ref();
        const auto& Y = self.value;
        for (std::size_t r = 0; r < n; ++r) {
            T dot{0};
            for (std::size_t j = 0; j < c; ++j) dot += self.grad(r, j) * Y(r, j);
            for (std::size_t j = 0; j < c; ++j) gx(r, j) += Y(r, j) * (self.grad(r, j) - dot);
        }
    });
}

namespace detail {

// Shared normalization over `groups` blocks of `block` contiguous elements; block
// element e belongs to affine channel channel_of(e).
template <class T, class ChannelOf>
Var<T> normalize_blocks(Graph<T>& g, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, std::size_t groups,
                        std::size_t block, ChannelOf channel_of, T eps) {
    const auto& X = x->val();
    Tensor<T> out(X.shape());
    std::vector<T> xhat(X.size());
    std::vector<T> inv_std(groups);
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const T* src = X.data() + gi * block;
        T mean{0};
        for (std::size_t e = 0; e < block; ++e) mean += src[e];
        mean /= static_cast<T>(block);
        T var{0};
        for (std::size_t e = 0; e < block; ++e) var += (src[e] - mean) * (src[e] - mean);
        var /= static_cast<T>(block);
        inv_std[gi] = T{1} / std::sqrt(var + eps);
        for (std::size_t e = 0; e < block; ++e) {
            const std::size_t i = gi * block + e;
            xhat[i] = (src[e] - mean) * inv_std[gi];
            const std::size_t ch = channel_of(i);
            out[i] = xhat[i] * gamma->val()[ch] + beta->val()[ch];
        }
    }
    return g.record(std::move(out), {x, gamma, beta},
                    [groups, block, channel_of, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                        auto& px = *self.parents[0];
                        auto& pg = *self.parents[1];
                        auto& pb = *self.parents[2];
                        const auto& dy = self.grad;
                        if (pg.requires_grad || pb.requires_grad) {
                            auto& gg = pg.grad_ref();
                            auto& gb = pb.grad_ref();
                            for (std::size_t i = 0; i < dy.size(); ++i) {
                                const std::size_t ch = channel_of(i);
                                if (pg.requires_grad) gg[ch] += dy[i] * xhat[i];
                                if (pb.requires_grad) gb[ch] += dy[i];
                            }
                        }
                        if (!px.requires_grad) return;
                        auto& gx = px.grad_ref();
                        const auto& G = pg.val();
                        for (std::size_t gi = 0; gi < groups; ++gi) {
                            T mean_d{0}, mean_dx{0};
                            for (std::size_t e = 0; e < block; ++e) {
                                const std::size_t i = gi * block + e;
                                const T dxh = dy[i] * G[channel_of(i)];
                                mean_d += dxh;
                                mean_dx += dxh * xhat[i];
                            }
                            mean_d /= static_cast<T>(block);
                            mean_dx /= static_cast<T>(block);
                            for (std::size_t e = 0; e < block; ++e) {
                                const std::size_t i = gi * block + e;
                                const T dxh = dy[i] * G[channel_of(i)];
                                gx[i] += inv_std[gi] * (dxh - mean_d - xhat[i] * mean_dx);
                            }
                        }
                    });
}

}  // namespace detail

/// Per-row normalization of x[n, c] with affine gamma[c], beta[c].
template <class T>
Var<T> layer_norm(Graph<T>& g, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    const std::size_t n = x->val().rows(), c = x->val().cols();
    detail::require(gamma->val().size() == c && beta->val().size() == c, "layer_norm: affine size mismatch");
    return detail::normalize_blocks<T>(g, x, gamma, beta, n, c, [c](std::size_t i) { return i % c; }, eps);
}

/// Group normalization of x[C, ...]: `groups` contiguous channel blocks, affine per channel.
template <class T>
Var<T> group_norm(Graph<T>& g, const Var<T>& x, std::size_t groups, const Var<T>& gamma, const Var<T>& beta,
                  T eps = T(1e-5)) {
    const std::size_t C = x->val().dim(0);
    const std::size_t S = x->val().size() / C;
    detail::require(groups > 0 && C % groups == 0,
                    "group_norm: " + std::to_string(C) + " channels not divisible into " + std::to_string(groups) +
                        " groups");
    detail::require(gamma->val().size() == C && beta->val().size() == C, "group_norm: affine size mismatch");
    return detail::normalize_blocks<T>(g, x, gamma, beta, groups, (C / groups) * S,
                                       [S](std::size_t i) { return i / S; }, eps);
}

/// 2-D convolution of x[Cin, H, W] with w[Cout, Cin, k, k] and bias[Cout], zero padding.
template <class T>
Var<T> conv2d(Graph<T>& g, const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::size_t stride, std::size_t pad) {
    const auto& X = x->val();
    const auto& Wt = w->val();
    detail::require(X.rank() == 3, "conv2d: input must be [C,H,W], got " + shape_string(X.shape()));
    detail::require(Wt.rank() == 4 && Wt.dim(1) == X.dim(0) && Wt.dim(2) == Wt.dim(3),
                    "conv2d: kernel " + shape_string(Wt.shape()) + " incompatible with input " +
                        shape_string(X.shape()));
    const std::size_t Cin = X.dim(0), H = X.dim(1), W = X.dim(2);
    const std::size_t Cout = Wt.dim(0), k = Wt.dim(2);
    detail::require(bias->val().size() == Cout, "conv2d: bias size mismatch");
    detail::require(H + 2 * pad >= k && W + 2 * pad >= k, "conv2d: input smaller than kernel");
    const std::size_t Ho = (H + 2 * pad - k) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - k) / stride + 1;
    const std::size_t K = Cin * k * k, S = Ho * Wo;

    const bool pointwise = (k == 1 && stride == 1 && pad == 0);
    Tensor<T> cols;
    if (!pointwise) {
        cols = Tensor<T>({K, S});
        for (std::size_t c = 0; c < Cin; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                    T* row = cols.data() + ((c * k + ky) * k + kx) * S;
                    for (std::size_t oy = 0; oy < Ho; ++oy) {
                        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                            row[oy * Wo + ox] = (iy < 0 || ix < 0 || iy >= static_cast<long>(H) ||
                                                 ix >= static_cast<long>(W))
                                                    ? T{0}
                                                    : X.data()[(c * H + static_cast<std::size_t>(iy)) * W +
                                                               static_cast<std::size_t>(ix)];
                        }
                    }
                }
    }
    const Tensor<T>& colref = pointwise ? X : cols;
    Tensor<T> out({Cout, Ho, Wo});
    auto O = as_matrix(out, Cout, S);
    O.noalias() = as_matrix(Wt, Cout, K) * as_matrix(colref, K, S);
    for (std::size_t co = 0; co < Cout; ++co) O.row(static_cast<Eigen::Index>(co)).array() += bias->val()[co];

    return g.record(std::move(out), {x, w, bias},
                    [=, cols = std::move(cols)](Node<T>& self) {
                        auto& px = *self.parents[0];
                        auto& pw = *self.parents[1];
                        auto& pb = *self.parents[2];
                        const auto dO = as_matrix(std::as_const(self.grad), Cout, S);
                        const Tensor<T>& C = pointwise ? px.val() : cols;
                        if (pw.requires_grad) {
                            as_matrix(pw.grad_ref(), Cout, K).noalias() += dO * as_matrix(C, K, S).transpose();
                        }
                        if (pb.requires_grad) {
                            auto& gb = pb.grad_ref();
                            for (std::size_t co = 0; co < Cout; ++co) gb[co] += dO.row(static_cast<Eigen::Index>(co)).sum();
                        }
                        if (!px.requires_grad) return;
                        auto& gx = px.grad_ref();
                        const auto Wm = as_matrix(pw.val(), Cout, K);
                        if (pointwise) {
                            as_matrix(gx, K, S).noalias() += Wm.transpose() * dO;
                            return;
                        }
                        Tensor<T> dcols({K, S});
                        as_matrix(dcols).noalias() = Wm.transpose() * dO;
                        for (std::size_t c = 0; c < Cin; ++c)
                            for (std::size_t ky = 0; ky < k; ++ky)
                                for (std::size_t kx = 0; kx < k; ++kx) {
                                    const T* row = dcols.data() + ((c * k + ky) * k + kx) * S;
                                    for (std::size_t oy = 0; oy < Ho; ++oy) {
                                        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                                        if (iy < 0 || iy >= static_cast<long>(H)) continue;
                                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                                            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                                            if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                            gx.data()[(c * H + static_cast<std::size_t>(iy)) * W +
                                                      static_cast<std::size_t>(ix)] += row[oy * Wo + ox];
                                        }
                                    }
                                }
                    });
}

/// Nearest-neighbour 2x upsampling of x[C, H, W].
template <class T>
Var<T> upsample2x(Graph<T>& g, const Var<T>& x) {
    const auto& X = x->val();
    detail::require(X.rank() == 3, "upsample2x: input must be [C,H,W]");
    const std::size_t C = X.dim(0), H = X.dim(1), W = X.dim(2);
    Tensor<T> out({C, 2 * H, 2 * W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < 2 * H; ++y)
            for (std::size_t xx = 0; xx < 2 * W; ++xx)
                out.data()[(c * 2 * H + y) * 2 * W + xx] = X.data()[(c * H + y / 2) * W + xx / 2];
    return g.record(std::move(out), {x}, [C, H, W](Node<T>& self) {
        auto& gx = self.parents[0]->grad_ref();
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < 2 * H; ++y)
                for (std::size_t xx = 0; xx < 2 * W; ++xx)
                    gx.data()[(c * H + y / 2) * W + xx / 2] += self.grad.data()[(c * 2 * H + y) * 2 * W + xx];
    });
}

/// Concatenates along the leading dimension; trailing dimensions must agree.
template <class T>
Var<T> concat0(Graph<T>& g, const std::vector<Var<T>>& parts) {
    detail::require(!parts.empty(), "concat0: no inputs");
    Shape tail(parts[0]->shape().begin() + 1, parts[0]->shape().end());
    std::size_t lead = 0;
    std::vector<std::size_t> offsets;
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape t(p->shape().begin() + 1, p->shape().end());
        detail::require(t == tail, "concat0: trailing shapes differ");
        lead += p->shape()[0];
        offsets.push_back(total);
        total += p->val().size();
    }
    Shape shape{lead};
    shape.insert(shape.end(), tail.begin(), tail.end());
    Tensor<T> out(shape);
    for (std::size_t i = 0; i < parts.size(); ++i)
        std::copy(parts[i]->val().data(), parts[i]->val().data() + parts[i]->val().size(), out.data() + offsets[i]);
    return g.record(std::move(out), parts, [offsets](Node<T>& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            auto& p = *self.parents[i];
            if (!p.requires_grad) continue;
            auto& gp = p.grad_ref();
            for (std::size_t e = 0; e < gp.size(); ++e) gp[e] += self.grad[offsets[i] + e];
        }
    });
}

/// Concatenates rank-2 tensors with equal row counts along columns.
template <class T>
Var<T> concat_cols(Graph<T>& g, const std::vector<Var<T>>& parts) {
    detail::require(!parts.empty(), "concat_cols: no inputs");
    const std::size_t n = parts[0]->val().rows();
    std::vector<std::size_t> widths, starts;
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::require(p->val().rows() == n, "concat_cols: row counts differ");
        starts.push_back(total);
        widths.push_back(p->val().cols());
        total += p->val().cols();
    }
    Tensor<T> out({n, total});
    for (std::size_t i = 0; i < parts.size(); ++i)
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < widths[i]; ++j) out(r, starts[i] + j) = parts[i]->val()[r * widths[i] + j];
    return g.record(std::move(out), parts, [n, widths, starts](Node<T>& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            auto& p = *self.parents[i];
            if (!p.requires_grad) continue;
            auto& gp = p.grad_ref();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < widths[i]; ++j) gp[r * widths[i] + j] += self.grad(r, starts[i] + j);
        }
    });
}

template <class T>
Var<T> slice_cols(Graph<T>& g, const Var<T>& x, std::size_t start, std::size_t count) {
    const auto& X = x->val();
    detail::require(X.rank() == 2 && start + count <= X.dim(1), "slice_cols: range out of bounds");
    const std::size_t n = X.dim(0), c = X.dim(1);
    Tensor<T> out({n, count});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < count; ++j) out(r, j) = X(r, start + j);
    return g.record(std::move(out), {x}, [n, c, start, count](Node<T>& self) {
        auto& gx = self.parents[0]->grad_ref();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < count; ++j) gx[r * c + start + j] += self.grad(r, j);
    });
}

template <class T>
Var<T> transpose(Graph<T>& g, const Var<T>& x) {
    const auto& X = x->val();
    detail::require(X.rank() == 2, "transpose: rank-2 input required");
    Tensor<T> out({X.dim(1), X.dim(0)});
    as_matrix(out) = as_matrix(X).transpose();
    return g.record(std::move(out), {x}, [](Node<T>& self) {
        auto& gx = self.parents[0]->grad_ref();
        as_matrix(gx) += as_matrix(std::as_const(self.grad)).transpose();
    });
}

template <class T>
Var<T> reshape(Graph<T>& g, const Var<T>& x, Shape shape) {
    Tensor<T> out = x->val().reshaped(std::move(shape));
    return g.record(std::move(out), {x}, [](Node<T>& self) {
        auto& gx = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    });
}

/// Selects rows of a rank-2 table.
template <class T>
Var<T> gather_rows(Graph<T>& g, const Var<T>& table, const std::vector<std::size_t>& rows) {
    const auto& X = table->val();
    detail::require(X.rank() == 2, "gather_rows: rank-2 table required");
    const std::size_t c = X.dim(1);
    Tensor<T> out({rows.size(), c});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        detail::require(rows[r] < X.dim(0), "gather_rows: index out of range");
        for (std::size_t j = 0; j < c; ++j) out(r, j) = X(rows[r], j);
    }
    return g.record(std::move(out), {table}, [rows, c](Node<T>& self) {
        auto& gx = self.parents[0]->grad_ref();
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t j = 0; j < c; ++j) gx[rows[r] * c + j] += self.grad(r, j);
    });
}

/// Max over consecutive blocks of `group` rows: x[n, c] -> [n / group, c]. Ties take the first row.
template <class T>
Var<T> group_max_rows(Graph<T>& g, const Var<T>& x, std::size_t group) {
    const auto& X = x->val();
    detail::require(X.rank() == 2 && group > 0 && X.dim(0) % group == 0, "group_max_rows: rows not divisible by group");
    const std::size_t n = X.dim(0) / group, c = X.dim(1);
    Tensor<T> out({n, c});
    std::vector<std::size_t> arg(n * c);
    for (std::size_t gi = 0; gi < n; ++gi)
        for (std::size_t j = 0; j < c; ++j) {
            std::size_t best = gi * group;
            for (std::size_t r = gi * group + 1; r < (gi + 1) * group; ++r)
                if (X(r, j) > X(best, j)) best = r;
            out(gi, j) = X(best, j);
            arg[gi * c + j] = best;
        }
    return g.record(std::move(out), {x}, [c, arg = std::move(arg)](Node<T>& self) {
        auto& gx = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i] * c + i % c] += self.grad[i];
    });
}

/// Mean over rows: x[n, c] -> [1, c].
template <class T>
Var<T> mean_rows(Graph<T>& g, const Var<T>& x) {
    const auto& X = x->val();
    const std::size_t n = X.rows(), c = X.cols();
    Tensor<T> out({1, c});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) out[j] += X[r * c + j];
    for (auto& v : out.storage()) v /= static_cast<T>(n);
    return g.record(std::move(out), {x}, [n, c](Node<T>& self) {
        auto& gx = self.parents[0]->grad_ref();
        const T inv = T{1} / static_cast<T>(n);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += self.grad[j] * inv;
    });
}

/// Mean over everything after the leading dimension: x[C, ...] -> [C].
template <class T>
Var<T> mean_trailing(Graph<T>& g, const Var<T>& x) {
    const auto& X = x->val();
    const std::size_t C = X.dim(0), S = X.size() / C;
    Tensor<T> out({C});
    for (std::size_t c = 0; c < C; ++c) {
        T acc{0};
        for (std::size_t s = 0; s < S; ++s) acc += X[c * S + s];
        out[c] = acc / static_cast<T>(S);
    }
    return g.record(std::move(out), {x}, [C, S](Node<T>& self) {
        auto& gx = self.parents[0]->grad_ref();
        const T inv = T{1} / static_cast<T>(S);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t s = 0; s < S; ++s) gx[c * S + s] += self.grad[c] * inv;
    });
}

template <class T>
Var<T> sum(Graph<T>& g, const Var<T>& x) {
    T acc{0};
    for (T v : x->val().storage()) acc += v;
    return g.record(Tensor<T>({1}, std::vector<T>{acc}), {x}, [](Node<T>& self) {
        auto& gx = self.parents[0]->grad_ref();
        for (auto& v : gx.storage()) v += self.grad[0];
    });
}

/// Sum of squared differences, a scalar [1].
template <class T>
Var<T> squared_distance(Graph<T>& g, const Var<T>& a, const Var<T>& b) {
    detail::require(a->val().size() == b->val().size(), "squared_distance: size mismatch (" +
                                                            std::to_string(a->val().size()) + " vs " +
                                                            std::to_string(b->val().size()) + ")");
    T acc{0};
    for (std::size_t i = 0; i < a->val().size(); ++i) {
        const T d = a->val()[i] - b->val()[i];
        acc += d * d;
    }
    return g.record(Tensor<T>({1}, std::vector<T>{acc}), {a, b}, [](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const T s = T{2} * self.grad[0];
        for (std::size_t i = 0; i < pa.val().size(); ++i) {
            const T d = s * (pa.val()[i] - pb.val()[i]);
            if (pa.requires_grad) pa.grad_ref()[i] += d;
            if (pb.requires_grad) pb.grad_ref()[i] -= d;
        }
    });
}

/// Mean squared error over all elements, a scalar [1].
template <class T>
Var<T> mse(Graph<T>& g, const Var<T>& a, const Var<T>& b) {
    const T n = static_cast<T>(a->val().size());
    return scale(g, squared_distance(g, a, b), T{1} / n);
}

/// Mean softmax cross-entropy of logits[n, K] against integer labels.
template <class T>
Var<T> cross_entropy(Graph<T>& g, const Var<T>& logits, const std::vector<int>& labels) {
    const auto& L = logits->val();
    detail::require(L.rank() == 2 && L.dim(0) == labels.size(), "cross_entropy: label/logit count mismatch");
    const std::size_t n = L.dim(0), K = L.dim(1);
    Tensor<T> prob({n, K});
    T loss{0};
    for (std::size_t r = 0; r < n; ++r) {
        detail::require(labels[r] >= 0 && static_cast<std::size_t>(labels[r]) < K, "cross_entropy: label out of range");
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < K; ++j) mx = std::max(mx, L(r, j));
        T s{0};
        for (std::size_t j = 0; j < K; ++j) s += std::exp(L(r, j) - mx);
        for (std::size_t j = 0; j < K; ++j) prob(r, j) = std::exp(L(r, j) - mx) / s;
        loss += -(L(r, static_cast<std::size_t>(labels[r])) - mx - std::log(s));
    }
    loss /= static_cast<T>(n);
    return g.record(Tensor<T>({1}, std::vector<T>{loss}), {logits},
                    [n, K, labels, prob = std::move(prob)](Node<T>& self) {
                        auto& gx = self.parents[0]->grad_ref();
                        const T s = self.grad[0] / static_cast<T>(n);
                        for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t j = 0; j < K; ++j)
                                gx(r, j) += s * (prob(r, j) - (static_cast<int>(j) == labels[r] ? T{1} : T{0}));
                    });
}

}  // namespace pointsd::ops
