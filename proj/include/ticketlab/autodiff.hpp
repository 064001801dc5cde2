#pragma once

// Reverse-mode automatic differentiation over dense tensors. Each forward op
// returns a graph node holding its output and a closure that scatters the
// node's gradient into its parents. backward() runs the closures in reverse
// topological order. Matrix products go through Eigen; everything else is
// hand-rolled.

#include <Eigen/Core>

#include <algorithm>
#include <functional>
#include <memory>
#include <type_traits>
#include <unordered_set>
#include <vector>

#include "ticketlab/tensor.hpp"

namespace ticketlab {

template <typename T>
struct ParameterT {
    std::string name;
    TensorT<T> value;
    TensorT<T> grad;
    bool prunable = true;

    ParameterT() = default;
    ParameterT(std::string n, TensorT<T> v, bool prune)
        : name(std::move(n)), value(std::move(v)), grad(value.shape), prunable(prune) {}
};

using Parameter = ParameterT<float>;

template <typename T>
struct NodeT;

template <typename T>
using VarT = std::shared_ptr<NodeT<T>>;

using Var = VarT<float>;

template <typename T>
struct NodeT {
    TensorT<T> value;
    TensorT<T> grad;  // allocated lazily during backward
    std::vector<VarT<T>> parents;
    std::function<void(NodeT<T>&)> backprop;
    ParameterT<T>* param = nullptr;  // set on parameter leaves
    bool requires_grad = false;
    bool backward_done = false;

    void ensure_grad() {
        if (grad.numel() != value.numel()) grad = TensorT<T>(value.shape);
    }
};

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

template <typename T>
VarT<T> make_node(TensorT<T> value, std::vector<VarT<T>> parents, const char* op) {
    check_finite(value, op);
    auto n = std::make_shared<NodeT<T>>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) n->requires_grad = n->requires_grad || p->requires_grad;
    return n;
}

}  // namespace detail

template <typename T>
VarT<T> make_leaf(TensorT<T> value, bool requires_grad = false) {
    auto n = std::make_shared<NodeT<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

template <typename T>
VarT<T> make_param_leaf(ParameterT<T>& p) {
    auto n = std::make_shared<NodeT<T>>();
    n->value = p.value;
    n->param = &p;
    n->requires_grad = true;
    return n;
}

// ---------------------------------------------------------------- add / mul

// Elementwise addition; the second operand may also be a trailing-suffix
// shape (e.g. [N,F] + [F]) which broadcasts over the leading dims.
template <typename T>
VarT<T> add(const VarT<T>& a, const VarT<T>& b) {
    const Shape& sa = a->value.shape;
    const Shape& sb = b->value.shape;
    const bool same = sa == sb;
    const bool suffix = !same && sb.size() < sa.size() &&
                        std::equal(sb.begin(), sb.end(), sa.end() - static_cast<long>(sb.size()));
    if (!same && !suffix)
        throw ShapeError("add: shapes " + shape_str(sa) + " and " + shape_str(sb) +
                         " are neither equal nor suffix-broadcastable");
    TensorT<T> out(sa);
    const size_t nb = b->value.numel();
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] + b->value.data[i % nb];
    auto n = detail::make_node(std::move(out), {a, b}, "add");
    n->backprop = [nb](NodeT<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.numel(); ++i) pa->grad.data[i] += self.grad.data[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.numel(); ++i) pb->grad.data[i % nb] += self.grad.data[i];
        }
    };
    return n;
}

template <typename T>
VarT<T> mul(const VarT<T>& a, const VarT<T>& b) {
    check_same_shape(a->value, b->value, "mul");
    TensorT<T> out(a->value.shape);
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] * b->value.data[i];
    auto n = detail::make_node(std::move(out), {a, b}, "mul");
    n->backprop = [](NodeT<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.numel(); ++i)
                pa->grad.data[i] += self.grad.data[i] * pb->value.data[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.numel(); ++i)
                pb->grad.data[i] += self.grad.data[i] * pa->value.data[i];
        }
    };
    return n;
}

// --------------------------------------------------------------------- relu

template <typename T>
VarT<T> relu(const VarT<T>& x) {
    TensorT<T> out(x->value.shape);
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] = x->value.data[i] > T(0) ? x->value.data[i] : T(0);
    auto n = detail::make_node(std::move(out), {x}, "relu");
    n->backprop = [](NodeT<T>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.numel(); ++i)
            if (p->value.data[i] > T(0)) p->grad.data[i] += self.grad.data[i];
    };
    return n;
}

// ------------------------------------------------------------------ flatten

// [N, ...] -> [N, prod(...)]
template <typename T>
VarT<T> flatten(const VarT<T>& x) {
    if (x->value.ndim() < 1) throw ShapeError("flatten: input has no dimensions");
    const size_t n0 = x->value.dim(0);
    const size_t rest = x->value.numel() / std::max<size_t>(n0, 1);
    TensorT<T> out = x->value.reshaped({n0, rest});
    auto n = detail::make_node(std::move(out), {x}, "flatten");
    n->backprop = [](NodeT<T>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.numel(); ++i) p->grad.data[i] += self.grad.data[i];
    };
    return n;
}

// ------------------------------------------------------------------- matmul

// [M,K] x [K,N] -> [M,N]
template <typename T>
VarT<T> matmul(const VarT<T>& a, const VarT<T>& b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a->value.shape) + " and " +
                         shape_str(b->value.shape));
    const size_t M = a->value.dim(0), K = a->value.dim(1), N = b->value.dim(1);
    TensorT<T> out({M, N});
    {
        detail::ECMap<T> A(a->value.ptr(), M, K);
        detail::ECMap<T> B(b->value.ptr(), K, N);
        detail::EMap<T> C(out.ptr(), M, N);
        C.noalias() = A * B;
    }
    auto n = detail::make_node(std::move(out), {a, b}, "matmul");
    n->backprop = [M, K, N](NodeT<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        detail::ECMap<T> G(self.grad.ptr(), M, N);
        if (pa->requires_grad) {
            pa->ensure_grad();
            detail::ECMap<T> B(pb->value.ptr(), K, N);
            detail::EMap<T> dA(pa->grad.ptr(), M, K);
            dA.noalias() += G * B.transpose();
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            detail::ECMap<T> A(pa->value.ptr(), M, K);
            detail::EMap<T> dB(pb->grad.ptr(), K, N);
            dB.noalias() += A.transpose() * G;
        }
    };
    return n;
}

// ------------------------------------------------------------------- conv2d

namespace detail {

// col is [N*OH*OW, Ci*kh*kw] row-major.
template <typename T>
void im2col(const TensorT<T>& x, size_t kh, size_t kw, size_t stride, size_t pad, size_t oh,
            size_t ow, std::vector<T>& col) {
    const size_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t K = Ci * kh * kw;
    col.assign(N * oh * ow * K, T(0));
    for (size_t b = 0; b < N; ++b) {
        for (size_t y = 0; y < oh; ++y) {
            for (size_t xo = 0; xo < ow; ++xo) {
                T* row = col.data() + ((b * oh + y) * ow + xo) * K;
                for (size_t ci = 0; ci < Ci; ++ci) {
                    const T* plane = x.ptr() + (b * Ci + ci) * H * W;
                    for (size_t ky = 0; ky < kh; ++ky) {
                        const ptrdiff_t iy =
                            static_cast<ptrdiff_t>(y * stride + ky) - static_cast<ptrdiff_t>(pad);
                        if (iy < 0 || iy >= static_cast<ptrdiff_t>(H)) continue;
                        for (size_t kx = 0; kx < kw; ++kx) {
                            const ptrdiff_t ix = static_cast<ptrdiff_t>(xo * stride + kx) -
                                                 static_cast<ptrdiff_t>(pad);
                            if (ix < 0 || ix >= static_cast<ptrdiff_t>(W)) continue;
                            row[(ci * kh + ky) * kw + kx] = plane[iy * W + ix];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const std::vector<T>& col, size_t kh, size_t kw, size_t stride, size_t pad,
                size_t oh, size_t ow, TensorT<T>& dx) {
    const size_t N = dx.dim(0), Ci = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
    const size_t K = Ci * kh * kw;
    for (size_t b = 0; b < N; ++b) {
        for (size_t y = 0; y < oh; ++y) {
            for (size_t xo = 0; xo < ow; ++xo) {
                const T* row = col.data() + ((b * oh + y) * ow + xo) * K;
                for (size_t ci = 0; ci < Ci; ++ci) {
                    T* plane = dx.ptr() + (b * Ci + ci) * H * W;
                    for (size_t ky = 0; ky < kh; ++ky) {
                        const ptrdiff_t iy =
                            static_cast<ptrdiff_t>(y * stride + ky) - static_cast<ptrdiff_t>(pad);
                        if (iy < 0 || iy >= static_cast<ptrdiff_t>(H)) continue;
                        for (size_t kx = 0; kx < kw; ++kx) {
                            const ptrdiff_t ix = static_cast<ptrdiff_t>(xo * stride + kx) -
                                                 static_cast<ptrdiff_t>(pad);
                            if (ix < 0 || ix >= static_cast<ptrdiff_t>(W)) continue;
                            plane[iy * W + ix] += row[(ci * kh + ky) * kw + kx];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

// x [N,Ci,H,W], w [Co,Ci,kh,kw], optional bias [Co]. Zero padding.
template <typename T>
VarT<T> conv2d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& bias, size_t stride, size_t pad) {
    if (x->value.ndim() != 4 || w->value.ndim() != 4)
        throw ShapeError("conv2d: expected 4-d input and kernel, got " + shape_str(x->value.shape) +
                         " and " + shape_str(w->value.shape));
    if (x->value.dim(1) != w->value.dim(1))
        throw ShapeError("conv2d: input channels " + shape_str(x->value.shape) +
                         " do not match kernel " + shape_str(w->value.shape));
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    const size_t N = x->value.dim(0), Ci = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    const size_t Co = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
    if (H + 2 * pad < kh || W + 2 * pad < kw)
        throw ShapeError("conv2d: kernel " + shape_str(w->value.shape) + " larger than padded input " +
                         shape_str(x->value.shape));
    const size_t OH = (H + 2 * pad - kh) / stride + 1;
    const size_t OW = (W + 2 * pad - kw) / stride + 1;
    const size_t K = Ci * kh * kw;
    if (bias && bias->value.shape != Shape{Co})
        throw ShapeError("conv2d: bias " + shape_str(bias->value.shape) + " does not match " +
                         std::to_string(Co) + " output channels");

    std::vector<T> col;
    detail::im2col(x->value, kh, kw, stride, pad, OH, OW, col);
    std::vector<T> out_rm(N * OH * OW * Co);
    {
        detail::ECMap<T> C(col.data(), N * OH * OW, K);
        detail::ECMap<T> Wm(w->value.ptr(), Co, K);
        detail::EMap<T> O(out_rm.data(), N * OH * OW, Co);
        O.noalias() = C * Wm.transpose();
    }
    TensorT<T> out({N, Co, OH, OW});
    for (size_t b = 0; b < N; ++b)
        for (size_t co = 0; co < Co; ++co) {
            T* dst = out.ptr() + (b * Co + co) * OH * OW;
            const T* src = out_rm.data() + b * OH * OW * Co + co;
            const T add_b = bias ? bias->value.data[co] : T(0);
            for (size_t i = 0; i < OH * OW; ++i) dst[i] = src[i * Co] + add_b;
        }

    std::vector<VarT<T>> parents = bias ? std::vector<VarT<T>>{x, w, bias} : std::vector<VarT<T>>{x, w};
    auto n = detail::make_node(std::move(out), std::move(parents), "conv2d");
    n->backprop = [stride, pad, N, Ci, Co, kh, kw, OH, OW, K](NodeT<T>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        VarT<T> pb = self.parents.size() > 2 ? self.parents[2] : nullptr;
        // Gather dOut into row-major [N*OH*OW, Co].
        std::vector<T> g_rm(N * OH * OW * Co);
        for (size_t b = 0; b < N; ++b)
            for (size_t co = 0; co < Co; ++co) {
                const T* src = self.grad.ptr() + (b * Co + co) * OH * OW;
                T* dst = g_rm.data() + b * OH * OW * Co + co;
                for (size_t i = 0; i < OH * OW; ++i) dst[i * Co] = src[i];
            }
        detail::ECMap<T> G(g_rm.data(), N * OH * OW, Co);
        if (pw->requires_grad) {
            std::vector<T> col;
            detail::im2col(px->value, kh, kw, stride, pad, OH, OW, col);
            detail::ECMap<T> C(col.data(), N * OH * OW, K);
            pw->ensure_grad();
            detail::EMap<T> dW(pw->grad.ptr(), Co, K);
            dW.noalias() += G.transpose() * C;
        }
        if (pb && pb->requires_grad) {
            pb->ensure_grad();
            for (size_t r = 0; r < N * OH * OW; ++r)
                for (size_t co = 0; co < Co; ++co) pb->grad.data[co] += g_rm[r * Co + co];
        }
        if (px->requires_grad) {
            std::vector<T> dcol(N * OH * OW * K);
            {
                detail::ECMap<T> Wm(pw->value.ptr(), Co, K);
                detail::EMap<T> D(dcol.data(), N * OH * OW, K);
                D.noalias() = G * Wm;
            }
            px->ensure_grad();
            detail::col2im_add(dcol, kh, kw, stride, pad, OH, OW, px->grad);
        }
    };
    return n;
}

template <typename T>
VarT<T> conv2d(const VarT<T>& x, const VarT<T>& w, size_t stride, size_t pad) {
    return conv2d(x, w, VarT<T>{}, stride, pad);
}

// -------------------------------------------------------------- average pool

// Non-padded pooling with window (wh,ww) and stride (sh,sw).
template <typename T>
VarT<T> avg_pool2d(const VarT<T>& x, size_t wh, size_t ww, size_t sh, size_t sw) {
    if (x->value.ndim() != 4)
        throw ShapeError("avg_pool2d: expected 4-d input, got " + shape_str(x->value.shape));
    const size_t N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    if (wh == 0 || ww == 0 || sh == 0 || sw == 0 || wh > H || ww > W)
        throw ShapeError("avg_pool2d: window " + std::to_string(wh) + "x" + std::to_string(ww) +
                         " invalid for input " + shape_str(x->value.shape));
    const size_t OH = (H - wh) / sh + 1;
    const size_t OW = (W - ww) / sw + 1;
    const T inv = T(1) / static_cast<T>(wh * ww);
    TensorT<T> out({N, C, OH, OW});
    for (size_t b = 0; b < N; ++b)
        for (size_t c = 0; c < C; ++c) {
            const T* plane = x->value.ptr() + (b * C + c) * H * W;
            T* dst = out.ptr() + (b * C + c) * OH * OW;
            for (size_t y = 0; y < OH; ++y)
                for (size_t xo = 0; xo < OW; ++xo) {
                    T s = 0;
                    for (size_t ky = 0; ky < wh; ++ky)
                        for (size_t kx = 0; kx < ww; ++kx)
                            s += plane[(y * sh + ky) * W + (xo * sw + kx)];
                    dst[y * OW + xo] = s * inv;
                }
        }
    auto n = detail::make_node(std::move(out), {x}, "avg_pool2d");
    n->backprop = [wh, ww, sh, sw, N, C, H, W, OH, OW, inv](NodeT<T>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t b = 0; b < N; ++b)
            for (size_t c = 0; c < C; ++c) {
                T* dplane = p->grad.ptr() + (b * C + c) * H * W;
                const T* g = self.grad.ptr() + (b * C + c) * OH * OW;
                for (size_t y = 0; y < OH; ++y)
                    for (size_t xo = 0; xo < OW; ++xo) {
                        const T gv = g[y * OW + xo] * inv;
                        for (size_t ky = 0; ky < wh; ++ky)
                            for (size_t kx = 0; kx < ww; ++kx)
                                dplane[(y * sh + ky) * W + (xo * sw + kx)] += gv;
                    }
            }
    };
    return n;
}

// Global average pool: [N,C,H,W] -> [N,C,1,1].
template <typename T>
VarT<T> global_avg_pool(const VarT<T>& x) {
    return avg_pool2d(x, x->value.dim(2), x->value.dim(3), 1, 1);
}

// ----------------------------------------------------------- batch normalization

inline constexpr double kBatchNormEps = 1e-5;

// Per-channel normalization over (N,H,W). In training mode the running
// statistics are updated in place with EMA decay `decay`.
template <typename T>
VarT<T> batch_norm(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta,
                   std::type_identity_t<TensorT<T>>* running_mean,
                   std::type_identity_t<TensorT<T>>* running_var, bool training,
                   std::type_identity_t<T> decay) {
    if (x->value.ndim() != 4)
        throw ShapeError("batch_norm: expected 4-d input, got " + shape_str(x->value.shape));
    const size_t N = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    if (gamma->value.shape != Shape{C} || beta->value.shape != Shape{C})
        throw ShapeError("batch_norm: scale/shift " + shape_str(gamma->value.shape) +
                         " do not match " + std::to_string(C) + " channels");
    const size_t m = N * H * W;
    const size_t plane = H * W;

    std::vector<T> mean(C), inv_std(C);
    if (training) {
        for (size_t c = 0; c < C; ++c) {
            double s = 0;
            for (size_t b = 0; b < N; ++b) {
                const T* p = x->value.ptr() + (b * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) s += p[i];
            }
            const double mu = s / static_cast<double>(m);
            double v = 0;
            for (size_t b = 0; b < N; ++b) {
                const T* p = x->value.ptr() + (b * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mu;
                    v += d * d;
                }
            }
            const double var = v / static_cast<double>(m);
            mean[c] = static_cast<T>(mu);
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
            if (running_mean && running_var) {
                running_mean->data[c] =
                    static_cast<T>(decay * running_mean->data[c] + (T(1) - decay) * static_cast<T>(mu));
                running_var->data[c] =
                    static_cast<T>(decay * running_var->data[c] + (T(1) - decay) * static_cast<T>(var));
            }
        }
    } else {
        if (!running_mean || !running_var)
            throw Error("batch_norm: inference mode requires running statistics");
        for (size_t c = 0; c < C; ++c) {
            mean[c] = running_mean->data[c];
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var->data[c]) +
                                                        kBatchNormEps));
        }
    }

    TensorT<T> out({N, C, H, W});
    auto xhat = std::make_shared<std::vector<T>>(x->value.numel());
    for (size_t b = 0; b < N; ++b)
        for (size_t c = 0; c < C; ++c) {
            const T* p = x->value.ptr() + (b * C + c) * plane;
            T* o = out.ptr() + (b * C + c) * plane;
            T* xh = xhat->data() + (b * C + c) * plane;
            const T mu = mean[c], is = inv_std[c], g = gamma->value.data[c], bb = beta->value.data[c];
            for (size_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mu) * is;
                o[i] = g * xh[i] + bb;
            }
        }

    auto n = detail::make_node(std::move(out), {x, gamma, beta}, "batch_norm");
    n->backprop = [N, C, plane, m, training, xhat, inv_std](NodeT<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        // dgamma, dbeta
        std::vector<double> dg(C, 0.0), db(C, 0.0);
        for (size_t b = 0; b < N; ++b)
            for (size_t c = 0; c < C; ++c) {
                const T* g = self.grad.ptr() + (b * C + c) * plane;
                const T* xh = xhat->data() + (b * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    dg[c] += static_cast<double>(g[i]) * xh[i];
                    db[c] += g[i];
                }
            }
        if (pg->requires_grad) {
            pg->ensure_grad();
            for (size_t c = 0; c < C; ++c) pg->grad.data[c] += static_cast<T>(dg[c]);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t c = 0; c < C; ++c) pb->grad.data[c] += static_cast<T>(db[c]);
        }
        if (!px->requires_grad) return;
        px->ensure_grad();
        if (training) {
            // dx = (gamma*inv_std/m) * (m*dy - sum(dy) - xhat*sum(dy*xhat))
            const double invm = 1.0 / static_cast<double>(m);
            for (size_t b = 0; b < N; ++b)
                for (size_t c = 0; c < C; ++c) {
                    const T* g = self.grad.ptr() + (b * C + c) * plane;
                    const T* xh = xhat->data() + (b * C + c) * plane;
                    T* dx = px->grad.ptr() + (b * C + c) * plane;
                    const double k = static_cast<double>(pg->value.data[c]) * inv_std[c];
                    for (size_t i = 0; i < plane; ++i)
                        dx[i] += static_cast<T>(k * (g[i] - invm * db[c] - invm * xh[i] * dg[c]));
                }
        } else {
            for (size_t b = 0; b < N; ++b)
                for (size_t c = 0; c < C; ++c) {
                    const T* g = self.grad.ptr() + (b * C + c) * plane;
                    T* dx = px->grad.ptr() + (b * C + c) * plane;
                    const T k = pg->value.data[c] * inv_std[c];
                    for (size_t i = 0; i < plane; ++i) dx[i] += k * g[i];
                }
        }
    };
    return n;
}

// ---------------------------------------------------------------- reductions

template <typename T>
VarT<T> sum_all(const VarT<T>& x) {
    double s = 0;
    for (const T& v : x->value.data) s += v;
    TensorT<T> out({1});
    out.data[0] = static_cast<T>(s);
    auto n = detail::make_node(std::move(out), {x}, "sum");
    n->backprop = [](NodeT<T>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        const T g = self.grad.data[0];
        for (size_t i = 0; i < p->grad.numel(); ++i) p->grad.data[i] += g;
    };
    return n;
}

// Mean cross-entropy between softmax(logits) and integer labels.
template <typename T>
VarT<T> softmax_cross_entropy(const VarT<T>& logits, const std::vector<int32_t>& labels) {
    if (logits->value.ndim() != 2)
        throw ShapeError("softmax_cross_entropy: expected [batch, classes], got " +
                         shape_str(logits->value.shape));
    const size_t B = logits->value.dim(0), C = logits->value.dim(1);
    if (labels.size() != B)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(B) + " rows");
    for (int32_t l : labels)
        if (l < 0 || static_cast<size_t>(l) >= C)
            throw DataError(DataError::Kind::LabelOutOfRange,
                            "label " + std::to_string(l) + " out of range [0, " + std::to_string(C) + ")");
    auto probs = std::make_shared<std::vector<T>>(B * C);
    double loss = 0;
    for (size_t b = 0; b < B; ++b) {
        const T* row = logits->value.ptr() + b * C;
        T mx = row[0];
        for (size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double se = 0;
        for (size_t c = 0; c < C; ++c) se += std::exp(static_cast<double>(row[c] - mx));
        const double lse = std::log(se);
        for (size_t c = 0; c < C; ++c)
            (*probs)[b * C + c] = static_cast<T>(std::exp(static_cast<double>(row[c] - mx) - lse));
        loss -= static_cast<double>(row[labels[b]] - mx) - lse;
    }
    loss /= static_cast<double>(B);
    TensorT<T> out({1});
    out.data[0] = static_cast<T>(loss);
    auto labels_copy = std::make_shared<std::vector<int32_t>>(labels);
    auto n = detail::make_node(std::move(out), {logits}, "softmax_cross_entropy");
    n->backprop = [B, C, probs, labels_copy](NodeT<T>& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        const T g = self.grad.data[0] / static_cast<T>(B);
        for (size_t b = 0; b < B; ++b) {
            T* dst = p->grad.ptr() + b * C;
            const T* pr = probs->data() + b * C;
            for (size_t c = 0; c < C; ++c) dst[c] += g * pr[c];
            dst[(*labels_copy)[b]] -= g;
        }
    };
    return n;
}

// ----------------------------------------------------------------- backward

// Populates gradients of every parameter reachable from `root`. Accumulates
// into ParameterT::grad; callers zero grads between steps.
template <typename T>
void backward(const VarT<T>& root) {
    if (root->value.numel() != 1)
        throw Error("backward: root must be scalar, got shape " + shape_str(root->value.shape));
    if (root->backward_done)
        throw Error("backward: already called on this graph; run forward again first");
    root->backward_done = true;

    // Reverse post-order: every node before its parents.
    std::vector<NodeT<T>*> order;
    std::unordered_set<NodeT<T>*> seen;
    std::vector<std::pair<NodeT<T>*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            NodeT<T>* parent = node->parents[idx].get();
            ++idx;
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    std::reverse(order.begin(), order.end());

    root->ensure_grad();
    root->grad.fill(T(1));
    for (NodeT<T>* node : order) {
        if (node->backprop && node->grad.numel() == node->value.numel()) node->backprop(*node);
    }
    for (NodeT<T>* node : order) {
        if (node->param && node->grad.numel() == node->value.numel()) {
            for (size_t i = 0; i < node->grad.numel(); ++i)
                node->param->grad.data[i] += node->grad.data[i];
        }
    }
}

}  // namespace ticketlab
