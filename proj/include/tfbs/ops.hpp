#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "tfbs/autograd.hpp"

// Differentiable operations over Var<T>. Every op computes its forward value
// eagerly and, when any input is tracked, records a closure that maps the
// output gradient back onto its inputs.
namespace tfbs::ops {

namespace detail {

struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> stride_a;
    std::vector<std::size_t> stride_b;
};

inline std::vector<std::size_t> contiguous_strides(const Shape& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

// Numpy-style broadcasting: shapes are right-aligned, size-1 axes stretch.
inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape pa(rank - a.size(), 1), pb(rank - b.size(), 1);
    pa.insert(pa.end(), a.begin(), a.end());
    pb.insert(pb.end(), b.begin(), b.end());
    BroadcastPlan plan;
    plan.out.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        plan.out[i] = std::max(pa[i], pb[i]);
    }
    auto sa = contiguous_strides(pa), sb = contiguous_strides(pb);
    for (std::size_t i = 0; i < rank; ++i) {
        if (pa[i] == 1) sa[i] = 0;
        if (pb[i] == 1) sb[i] = 0;
    }
    plan.stride_a = std::move(sa);
    plan.stride_b = std::move(sb);
    return plan;
}

// Calls f(out_index, a_offset, b_offset) for every output element in order.
template <typename F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
    const std::size_t rank = plan.out.size();
    const std::size_t n = shape_size(plan.out);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            ia += plan.stride_a[d];
            ib += plan.stride_b[d];
            if (idx[d] < plan.out[d]) break;
            ia -= plan.stride_a[d] * plan.out[d];
            ib -= plan.stride_b[d] * plan.out[d];
            idx[d] = 0;
        }
    }
}

template <typename T>
T gaussian_cdf(T x) {
    return T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gaussian_pdf(T x) {
    return std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
}

inline void require_rank(const Shape& s, std::size_t rank, const char* what) {
    if (s.size() != rank)
        throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                         shape_str(s));
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (a.shape() == b.shape()) {
        Tensor<T> out = a.value();
        const T* pb = b.value().data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
        return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
            for (std::size_t k = 0; k < 2; ++k)
                if (auto* g = input_grad(self, k))
                    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        });
    }
    auto plan = detail::broadcast_plan(a.shape(), b.shape());
    Tensor<T> out(plan.out);
    const T* pa = a.value().data();
    const T* pb = b.value().data();
    detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        out[i] = pa[ia] + pb[ib];
    });
    return make_result<T>(std::move(out), {a, b}, [plan](Node<T>& self) {
        auto* ga = input_grad(self, 0);
        auto* gb = input_grad(self, 1);
        detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            if (ga) (*ga)[ia] += self.grad[i];
            if (gb) (*gb)[ib] += self.grad[i];
        });
    });
}

// Elementwise product with broadcasting (the gating operator).
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    auto plan = detail::broadcast_plan(a.shape(), b.shape());
    Tensor<T> out(plan.out);
    const T* pa = a.value().data();
    const T* pb = b.value().data();
    detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        out[i] = pa[ia] * pb[ib];
    });
    return make_result<T>(std::move(out), {a, b}, [plan](Node<T>& self) {
        auto* ga = input_grad(self, 0);
        auto* gb = input_grad(self, 1);
        const T* va = input_value(self, 0).data();
        const T* vb = input_value(self, 1).data();
        detail::for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            if (ga) (*ga)[ia] += self.grad[i] * vb[ib];
            if (gb) (*gb)[ib] += self.grad[i] * va[ia];
        });
    });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
    Tensor<T> out = x.value();
    for (auto& v : out.storage()) v *= factor;
    return make_result<T>(std::move(out), {x}, [factor](Node<T>& self) {
        if (auto* g = input_grad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += factor * self.grad[i];
    });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        if (auto* g = input_grad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    });
}

// Collapses every axis after the first: (n, ...) -> (n, prod(...)).
template <typename T>
Var<T> flatten(const Var<T>& x) {
    if (x.shape().empty()) throw ShapeError("flatten of a scalar");
    const std::size_t n = x.dim(0);
    return reshape(x, {n, n ? x.size() / n : 0});
}

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm) {
    const Shape& in = x.shape();
    if (perm.size() != in.size()) throw ShapeError("permute rank mismatch");
    const std::size_t rank = in.size();
    Shape out_shape(rank);
    auto in_strides = detail::contiguous_strides(in);
    std::vector<std::size_t> src_strides(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        if (perm[i] >= rank) throw ShapeError("permute axis out of range");
        out_shape[i] = in[perm[i]];
        src_strides[i] = in_strides[perm[i]];
    }
    // Maps each output position to its source offset.
    std::vector<std::size_t> src(x.size());
    {
        std::vector<std::size_t> idx(rank, 0);
        std::size_t off = 0;
        for (std::size_t i = 0; i < src.size(); ++i) {
            src[i] = off;
            for (std::size_t d = rank; d-- > 0;) {
                ++idx[d];
                off += src_strides[d];
                if (idx[d] < out_shape[d]) break;
                off -= src_strides[d] * out_shape[d];
                idx[d] = 0;
            }
        }
    }
    Tensor<T> out(out_shape);
    const T* px = x.value().data();
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = px[src[i]];
    return make_result<T>(std::move(out), {x}, [src = std::move(src)](Node<T>& self) {
        if (auto* g = input_grad(self, 0))
            for (std::size_t i = 0; i < src.size(); ++i) (*g)[src[i]] += self.grad[i];
    });
}

// x (..., in) times w (in, out) plus optional bias (out).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias = {}) {
    detail::require_rank(w.shape(), 2, "linear weight");
    const std::size_t in = w.dim(0), outn = w.dim(1);
    if (x.shape().empty() || x.shape().back() != in)
        throw ShapeError("linear input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
    if (bias.defined() && (bias.shape() != Shape{outn}))
        throw ShapeError("linear bias shape " + shape_str(bias.shape()));
    const std::size_t rows = x.size() / in;
    Shape out_shape = x.shape();
    out_shape.back() = outn;
    Tensor<T> out(out_shape);
    const T* px = x.value().data();
    const T* pw = w.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        T* o = out.data() + r * outn;
        if (bias.defined()) std::copy_n(bias.value().data(), outn, o);
        for (std::size_t k = 0; k < in; ++k) {
            const T xv = px[r * in + k];
            const T* wr = pw + k * outn;
            for (std::size_t j = 0; j < outn; ++j) o[j] += xv * wr[j];
        }
    }
    std::vector<Var<T>> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    return make_result<T>(std::move(out), std::move(inputs), [rows, in, outn](Node<T>& self) {
        const T* g = self.grad.data();
        const T* px = input_value(self, 0).data();
        const T* pw = input_value(self, 1).data();
        if (auto* gx = input_grad(self, 0))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t k = 0; k < in; ++k) {
                    T acc = 0;
                    const T* wr = pw + k * outn;
                    const T* gr = g + r * outn;
                    for (std::size_t j = 0; j < outn; ++j) acc += gr[j] * wr[j];
                    (*gx)[r * in + k] += acc;
                }
        if (auto* gw = input_grad(self, 1))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t k = 0; k < in; ++k) {
                    const T xv = px[r * in + k];
                    T* gwr = gw->data() + k * outn;
                    const T* gr = g + r * outn;
                    for (std::size_t j = 0; j < outn; ++j) gwr[j] += xv * gr[j];
                }
        if (self.inputs.size() > 2)
            if (auto* gb = input_grad(self, 2))
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < outn; ++j) (*gb)[j] += g[r * outn + j];
    });
}

// Batched product over leading axes: a (..., m, k) times b (..., k, n), or
// b (..., n, k) when transpose_b is set.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool transpose_b = false) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sa.size() != sb.size())
        throw ShapeError("matmul rank mismatch " + shape_str(sa) + " x " + shape_str(sb));
    for (std::size_t i = 0; i + 2 < sa.size(); ++i)
        if (sa[i] != sb[i]) throw ShapeError("matmul batch mismatch");
    const std::size_t r = sa.size();
    const std::size_t m = sa[r - 2], k = sa[r - 1];
    const std::size_t n = transpose_b ? sb[r - 2] : sb[r - 1];
    if ((transpose_b ? sb[r - 1] : sb[r - 2]) != k)
        throw ShapeError("matmul inner mismatch " + shape_str(sa) + " x " + shape_str(sb));
    const std::size_t batch = a.size() / (m * k);
    Shape out_shape = sa;
    out_shape[r - 1] = n;
    Tensor<T> out(out_shape);
    const T* pa = a.value().data();
    const T* pb = b.value().data();
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const T* A = pa + bi * m * k;
        const T* B = pb + bi * k * n;
        T* O = out.data() + bi * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            if (transpose_b) {
                for (std::size_t j = 0; j < n; ++j) {
                    T acc = 0;
                    for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
                    O[i * n + j] = acc;
                }
            } else {
                for (std::size_t p = 0; p < k; ++p) {
                    const T av = A[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) O[i * n + j] += av * B[p * n + j];
                }
            }
        }
    }
    return make_result<T>(std::move(out), {a, b}, [=](Node<T>& self) {
        const T* pa = input_value(self, 0).data();
        const T* pb = input_value(self, 1).data();
        auto* ga = input_grad(self, 0);
        auto* gb = input_grad(self, 1);
        for (std::size_t bi = 0; bi < batch; ++bi) {
            const T* A = pa + bi * m * k;
            const T* B = pb + bi * k * n;
            const T* G = self.grad.data() + bi * m * n;
            if (ga) {
                T* GA = ga->data() + bi * m * k;
                for (std::size_t i = 0; i < m; ++i) {
                    if (transpose_b) {
                        for (std::size_t j = 0; j < n; ++j) {
                            const T gv = G[i * n + j];
                            for (std::size_t p = 0; p < k; ++p) GA[i * k + p] += gv * B[j * k + p];
                        }
                    } else {
                        for (std::size_t p = 0; p < k; ++p) {
                            T acc = 0;
                            for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
                            GA[i * k + p] += acc;
                        }
                    }
                }
            }
            if (gb) {
                T* GB = gb->data() + bi * k * n;
                for (std::size_t i = 0; i < m; ++i) {
                    if (transpose_b) {
                        for (std::size_t j = 0; j < n; ++j) {
                            const T gv = G[i * n + j];
                            for (std::size_t p = 0; p < k; ++p) GB[j * k + p] += gv * A[i * k + p];
                        }
                    } else {
                        for (std::size_t p = 0; p < k; ++p) {
                            const T av = A[i * k + p];
                            for (std::size_t j = 0; j < n; ++j) GB[p * n + j] += av * G[i * n + j];
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
    const auto s = split_axis(x.shape(), axis);
    Tensor<T> out(x.shape());
    const T* px = x.value().data();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t a = 0; a < s.extent; ++a) mx = std::max(mx, px[base + a * s.inner]);
            T total = 0;
            for (std::size_t a = 0; a < s.extent; ++a) {
                const T e = std::exp(px[base + a * s.inner] - mx);
                out[base + a * s.inner] = e;
                total += e;
            }
            for (std::size_t a = 0; a < s.extent; ++a) out[base + a * s.inner] /= total;
        }
    Tensor<T> y = out;
    return make_result<T>(std::move(out), {x}, [s, y = std::move(y)](Node<T>& self) {
        auto* g = input_grad(self, 0);
        if (!g) return;
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t base = o * s.extent * s.inner + i;
                T dot = 0;
                for (std::size_t a = 0; a < s.extent; ++a) {
                    const std::size_t at = base + a * s.inner;
                    dot += self.grad[at] * y[at];
                }
                for (std::size_t a = 0; a < s.extent; ++a) {
                    const std::size_t at = base + a * s.inner;
                    (*g)[at] += y[at] * (self.grad[at] - dot);
                }
            }
    });
}

// Exact GELU, x * Phi(x).
template <typename T>
Var<T> gelu(const Var<T>& x) {
    Tensor<T> out(x.shape());
    const T* px = x.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] * detail::gaussian_cdf(px[i]);
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        auto* g = input_grad(self, 0);
        if (!g) return;
        const T* px = input_value(self, 0).data();
        for (std::size_t i = 0; i < g->size(); ++i) {
            const T v = px[i];
            (*g)[i] += self.grad[i] * (detail::gaussian_cdf(v) + v * detail::gaussian_pdf(v));
        }
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor<T> out(x.shape());
    const T* px = x.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = px[i];
        // Split by sign so exp never overflows.
        out[i] = v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    }
    Tensor<T> y = out;
    return make_result<T>(std::move(out), {x}, [y = std::move(y)](Node<T>& self) {
        if (auto* g = input_grad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i)
                (*g)[i] += self.grad[i] * y[i] * (T(1) - y[i]);
    });
}

// Normalizes over the last axis.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
    const std::size_t width = x.shape().empty() ? 0 : x.shape().back();
    if (gamma.shape() != Shape{width} || beta.shape() != Shape{width})
        throw ShapeError("layer_norm gain/bias must have shape (" + std::to_string(width) + ")");
    const std::size_t rows = width ? x.size() / width : 0;
    Tensor<T> out(x.shape());
    Tensor<T> xhat(x.shape());
    std::vector<T> inv_std(rows);
    const T* px = x.value().data();
    const T* pg = gamma.value().data();
    const T* pb = beta.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = px + r * width;
        T mean = 0;
        for (std::size_t j = 0; j < width; ++j) mean += row[j];
        mean /= T(width);
        T var = 0;
        for (std::size_t j = 0; j < width; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= T(width);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < width; ++j) {
            const T h = (row[j] - mean) * is;
            xhat[r * width + j] = h;
            out[r * width + j] = pg[j] * h + pb[j];
        }
    }
    return make_result<T>(
        std::move(out), {x, gamma, beta},
        [rows, width, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
            const T* g = self.grad.data();
            const T* pg = input_value(self, 1).data();
            auto* gx = input_grad(self, 0);
            auto* gg = input_grad(self, 1);
            auto* gb = input_grad(self, 2);
            std::vector<T> gh(width);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* gr = g + r * width;
                const T* hr = xhat.data() + r * width;
                if (gg)
                    for (std::size_t j = 0; j < width; ++j) (*gg)[j] += gr[j] * hr[j];
                if (gb)
                    for (std::size_t j = 0; j < width; ++j) (*gb)[j] += gr[j];
                if (!gx) continue;
                T mean_gh = 0, mean_ghh = 0;
                for (std::size_t j = 0; j < width; ++j) {
                    gh[j] = gr[j] * pg[j];
                    mean_gh += gh[j];
                    mean_ghh += gh[j] * hr[j];
                }
                mean_gh /= T(width);
                mean_ghh /= T(width);
                for (std::size_t j = 0; j < width; ++j)
                    (*gx)[r * width + j] += inv_std[r] * (gh[j] - mean_gh - hr[j] * mean_ghh);
            }
        });
}

enum class Mode { train, eval };

// Per-channel normalization of x (n, C) or (n, C, L) over the batch and
// length axes. Train mode normalizes with batch statistics and updates the
// running estimates (unbiased variance); eval mode uses the running ones.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode, T eps = T(1e-5), T momentum = T(0.1)) {
    const Shape& s = x.shape();
    if (s.size() != 2 && s.size() != 3)
        throw ShapeError("batch_norm expects (n,C) or (n,C,L), got " + shape_str(s));
    const std::size_t n = s[0], c = s[1], len = s.size() == 3 ? s[2] : 1;
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
        throw ShapeError("batch_norm channel count " + std::to_string(c) +
                         " does not match gamma/beta " + shape_str(gamma.shape()));
    if (running_mean.shape() != Shape{c} || running_var.shape() != Shape{c})
        throw ShapeError("batch_norm running statistics have wrong shape");
    const std::size_t count = n * len;
    const T* px = x.value().data();
    const T* pg = gamma.value().data();
    const T* pb = beta.value().data();
    Tensor<T> out(s);
    Tensor<T> xhat(s);
    std::vector<T> inv_std(c);
    auto at = [&](std::size_t b, std::size_t ch, std::size_t l) { return (b * c + ch) * len + l; };
    for (std::size_t ch = 0; ch < c; ++ch) {
        T mean, var;
        if (mode == Mode::train) {
            mean = 0;
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t l = 0; l < len; ++l) mean += px[at(b, ch, l)];
            mean /= T(count);
            var = 0;
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t l = 0; l < len; ++l) {
                    const T dv = px[at(b, ch, l)] - mean;
                    var += dv * dv;
                }
            var /= T(count);
            const T unbiased = count > 1 ? var * T(count) / T(count - 1) : var;
            running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * mean;
            running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * unbiased;
        } else {
            mean = running_mean[ch];
            var = running_var[ch];
        }
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[ch] = is;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t l = 0; l < len; ++l) {
                const std::size_t i = at(b, ch, l);
                const T h = (px[i] - mean) * is;
                xhat[i] = h;
                out[i] = pg[ch] * h + pb[ch];
            }
    }
    const bool batch_stats = mode == Mode::train;
    return make_result<T>(
        std::move(out), {x, gamma, beta},
        [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
            const T* g = self.grad.data();
            const T* pg = input_value(self, 1).data();
            auto* gx = input_grad(self, 0);
            auto* gg = input_grad(self, 1);
            auto* gb = input_grad(self, 2);
            auto at = [&](std::size_t b, std::size_t ch, std::size_t l) {
                return (b * c + ch) * len + l;
            };
            for (std::size_t ch = 0; ch < c; ++ch) {
                T sum_g = 0, sum_gh = 0;
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t l = 0; l < len; ++l) {
                        const std::size_t i = at(b, ch, l);
                        sum_g += g[i];
                        sum_gh += g[i] * xhat[i];
                    }
                if (gg) (*gg)[ch] += sum_gh;
                if (gb) (*gb)[ch] += sum_g;
                if (!gx) continue;
                const T k = pg[ch] * inv_std[ch];
                const T mean_g = sum_g / T(count), mean_gh = sum_gh / T(count);
                for (std::size_t b = 0; b < n; ++b)
                    for (std::size_t l = 0; l < len; ++l) {
                        const std::size_t i = at(b, ch, l);
                        (*gx)[i] += batch_stats ? k * (g[i] - mean_g - xhat[i] * mean_gh)
                                                : k * g[i];
                    }
            }
        });
}

struct ConvGeometry {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;
};

inline std::size_t conv_output_length(std::size_t len, std::size_t kernel, ConvGeometry g) {
    const std::ptrdiff_t span = std::ptrdiff_t(g.dilation * (kernel - 1) + 1);
    const std::ptrdiff_t room = std::ptrdiff_t(len + 2 * g.padding) - span;
    if (room < 0 || g.stride == 0) return 0;
    return std::size_t(room) / g.stride + 1;
}

// Cross-correlation of x (n, C_in, L) with w (C_out, C_in, K), zero padding.
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& bias = {}, ConvGeometry geo = {}) {
    detail::require_rank(x.shape(), 3, "conv1d input");
    detail::require_rank(w.shape(), 3, "conv1d weight");
    const std::size_t n = x.dim(0), cin = x.dim(1), len = x.dim(2);
    const std::size_t cout = w.dim(0), ks = w.dim(2);
    if (w.dim(1) != cin)
        throw ShapeError("conv1d weight " + shape_str(w.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
    if (bias.defined() && bias.shape() != Shape{cout}) throw ShapeError("conv1d bias shape");
    const std::size_t lout = conv_output_length(len, ks, geo);
    if (lout == 0) throw ShapeError("conv1d output length would be < 1");
    const std::size_t stride = geo.stride, dil = geo.dilation;
    const std::ptrdiff_t pad = std::ptrdiff_t(geo.padding);

    // Range of output positions whose tap at offset `off` falls inside [0, len).
    auto valid = [=](std::ptrdiff_t off, std::size_t& lo, std::size_t& hi) {
        std::ptrdiff_t first = off >= 0 ? 0 : (-off + std::ptrdiff_t(stride) - 1) / std::ptrdiff_t(stride);
        std::ptrdiff_t last = (std::ptrdiff_t(len) - 1 - off);
        last = last < 0 ? -1 : last / std::ptrdiff_t(stride);
        lo = std::size_t(std::max<std::ptrdiff_t>(first, 0));
        hi = std::size_t(std::min<std::ptrdiff_t>(last + 1, std::ptrdiff_t(lout)));
        if (hi < lo) hi = lo;
    };

    Tensor<T> out({n, cout, lout});
    const T* px = x.value().data();
    const T* pw = w.value().data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t co = 0; co < cout; ++co) {
            T* o = out.data() + (b * cout + co) * lout;
            if (bias.defined()) std::fill_n(o, lout, bias.value()[co]);
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const T* xr = px + (b * cin + ci) * len;
                for (std::size_t k = 0; k < ks; ++k) {
                    const T wv = pw[(co * cin + ci) * ks + k];
                    const std::ptrdiff_t off = std::ptrdiff_t(k * dil) - pad;
                    std::size_t lo, hi;
                    valid(off, lo, hi);
                    if (stride == 1) {
                        for (std::size_t l = lo; l < hi; ++l) o[l] += wv * xr[std::ptrdiff_t(l) + off];
                    } else {
                        for (std::size_t l = lo; l < hi; ++l) o[l] += wv * xr[std::ptrdiff_t(l * stride) + off];
                    }
                }
            }
        }
    std::vector<Var<T>> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    return make_result<T>(std::move(out), std::move(inputs), [=](Node<T>& self) {
        const T* px = input_value(self, 0).data();
        const T* pw = input_value(self, 1).data();
        auto* gx = input_grad(self, 0);
        auto* gw = input_grad(self, 1);
        auto* gb = self.inputs.size() > 2 ? input_grad(self, 2) : nullptr;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t co = 0; co < cout; ++co) {
                const T* g = self.grad.data() + (b * cout + co) * lout;
                if (gb) {
                    T acc = 0;
                    for (std::size_t l = 0; l < lout; ++l) acc += g[l];
                    (*gb)[co] += acc;
                }
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const T* xr = px + (b * cin + ci) * len;
                    T* gxr = gx ? gx->data() + (b * cin + ci) * len : nullptr;
                    for (std::size_t k = 0; k < ks; ++k) {
                        const std::size_t wi = (co * cin + ci) * ks + k;
                        const std::ptrdiff_t off = std::ptrdiff_t(k * dil) - pad;
                        std::size_t lo, hi;
                        valid(off, lo, hi);
                        if (gw) {
                            T acc = 0;
                            for (std::size_t l = lo; l < hi; ++l)
                                acc += g[l] * xr[std::ptrdiff_t(l * stride) + off];
                            (*gw)[wi] += acc;
                        }
                        if (gxr) {
                            const T wv = pw[wi];
                            for (std::size_t l = lo; l < hi; ++l)
                                gxr[std::ptrdiff_t(l * stride) + off] += wv * g[l];
                        }
                    }
                }
            }
    });
}

enum class PoolKind { max, avg };

// Global pooling that reduces `axis` to extent 1 (kept as a unit axis).
// Max pooling routes the gradient to the lowest index among ties.
template <typename T>
Var<T> global_pool(const Var<T>& x, PoolKind kind, std::size_t axis) {
    const auto s = split_axis(x.shape(), axis);
    if (s.extent == 0) throw ShapeError("global_pool over an empty axis");
    Shape out_shape = x.shape();
    out_shape[axis] = 1;
    Tensor<T> out(out_shape);
    std::vector<std::size_t> argmax;
    if (kind == PoolKind::max) argmax.resize(out.size());
    const T* px = x.value().data();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            const std::size_t oi = o * s.inner + i;
            if (kind == PoolKind::max) {
                std::size_t best = base;
                for (std::size_t a = 1; a < s.extent; ++a) {
                    const std::size_t at = base + a * s.inner;
                    if (px[at] > px[best]) best = at;
                }
                out[oi] = px[best];
                argmax[oi] = best;
            } else {
                T acc = 0;
                for (std::size_t a = 0; a < s.extent; ++a) acc += px[base + a * s.inner];
                out[oi] = acc / T(s.extent);
            }
        }
    return make_result<T>(std::move(out), {x}, [s, kind, argmax = std::move(argmax)](Node<T>& self) {
        auto* g = input_grad(self, 0);
        if (!g) return;
        if (kind == PoolKind::max) {
            for (std::size_t oi = 0; oi < argmax.size(); ++oi) (*g)[argmax[oi]] += self.grad[oi];
            return;
        }
        const T inv = T(1) / T(s.extent);
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t i = 0; i < s.inner; ++i) {
                const T gv = self.grad[o * s.inner + i] * inv;
                const std::size_t base = o * s.extent * s.inner + i;
                for (std::size_t a = 0; a < s.extent; ++a) (*g)[base + a * s.inner] += gv;
            }
    });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of nothing");
    Shape out_shape = parts.front().shape();
    if (axis >= out_shape.size()) throw ShapeError("concat axis out of range");
    out_shape[axis] = 0;
    std::vector<std::size_t> extents;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != out_shape.size()) throw ShapeError("concat rank mismatch");
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != out_shape[d])
                throw ShapeError("concat shape mismatch " + shape_str(s) + " vs " +
                                 shape_str(parts.front().shape()));
        extents.push_back(s[axis]);
        out_shape[axis] += s[axis];
    }
    const auto so = split_axis(out_shape, axis);
    Tensor<T> out(out_shape);
    std::size_t start = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const T* src = parts[k].value().data();
        const std::size_t block = extents[k] * so.inner;
        for (std::size_t o = 0; o < so.outer; ++o)
            std::copy_n(src + o * block, block, out.data() + (o * so.extent + start) * so.inner);
        start += extents[k];
    }
    return make_result<T>(std::move(out), parts, [so, extents](Node<T>& self) {
        std::size_t start = 0;
        for (std::size_t k = 0; k < extents.size(); ++k) {
            const std::size_t block = extents[k] * so.inner;
            if (auto* g = input_grad(self, k))
                for (std::size_t o = 0; o < so.outer; ++o) {
                    const T* src = self.grad.data() + (o * so.extent + start) * so.inner;
                    T* dst = g->data() + o * block;
                    for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                }
            start += extents[k];
        }
    });
}

// Inverted dropout. Identity in eval mode or when p == 0; otherwise each
// element survives with probability 1-p and is scaled by 1/(1-p). The mask is
// a pure function of `seed`.
template <typename T>
Var<T> dropout(const Var<T>& x, double p, Mode mode, std::uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0,1)");
    if (mode == Mode::eval || p == 0.0) return x;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const T keep_scale = T(1.0 / (1.0 - p));
    Tensor<T> mask(x.shape());
    for (auto& m : mask.storage()) m = uni(rng) < p ? T(0) : keep_scale;
    Tensor<T> out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return make_result<T>(std::move(out), {x}, [mask = std::move(mask)](Node<T>& self) {
        if (auto* g = input_grad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * mask[i];
    });
}

// Row gather: ids (rows, cols) into table (V, D) giving (rows, cols, D).
template <typename T>
Var<T> embedding(std::span<const std::int32_t> ids, std::size_t rows, std::size_t cols,
                 const Var<T>& table) {
    detail::require_rank(table.shape(), 2, "embedding table");
    if (ids.size() != rows * cols) throw ShapeError("embedding id count mismatch");
    const std::size_t vocab = table.dim(0), width = table.dim(1);
    std::vector<std::int32_t> idv(ids.begin(), ids.end());
    for (auto id : idv)
        if (id < 0 || std::size_t(id) >= vocab)
            throw ShapeError("token id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(vocab));
    Tensor<T> out({rows, cols, width});
    const T* pt = table.value().data();
    for (std::size_t i = 0; i < idv.size(); ++i)
        std::copy_n(pt + std::size_t(idv[i]) * width, width, out.data() + i * width);
    return make_result<T>(std::move(out), {table}, [idv = std::move(idv), width](Node<T>& self) {
        auto* g = input_grad(self, 0);
        if (!g) return;
        for (std::size_t i = 0; i < idv.size(); ++i) {
            T* dst = g->data() + std::size_t(idv[i]) * width;
            const T* src = self.grad.data() + i * width;
            for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
        }
    });
}

// First `count` rows of a (R, D) table.
template <typename T>
Var<T> leading_rows(const Var<T>& table, std::size_t count) {
    detail::require_rank(table.shape(), 2, "leading_rows");
    if (count > table.dim(0))
        throw ShapeError("requested " + std::to_string(count) + " rows of a table with " +
                         std::to_string(table.dim(0)));
    const std::size_t width = table.dim(1);
    Tensor<T> out({count, width},
                  std::vector<T>(table.value().data(), table.value().data() + count * width));
    return make_result<T>(std::move(out), {table}, [](Node<T>& self) {
        if (auto* g = input_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    });
}

// Column j of a (n, K) matrix as a length-n vector.
template <typename T>
Var<T> column(const Var<T>& x, std::size_t j) {
    detail::require_rank(x.shape(), 2, "column");
    const std::size_t n = x.dim(0), k = x.dim(1);
    if (j >= k) throw ShapeError("column index out of range");
    Tensor<T> out({n});
    for (std::size_t i = 0; i < n; ++i) out[i] = x.value()[i * k + j];
    return make_result<T>(std::move(out), {x}, [n, k, j](Node<T>& self) {
        if (auto* g = input_grad(self, 0))
            for (std::size_t i = 0; i < n; ++i) (*g)[i * k + j] += self.grad[i];
    });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
    T acc = 0;
    for (T v : x.value().values()) acc += v;
    return make_result<T>(Tensor<T>({1}, {acc}), {x}, [](Node<T>& self) {
        if (auto* g = input_grad(self, 0))
            for (auto& v : g->storage()) v += self.grad[0];
    });
}

// sum(x * weights) for a constant weight tensor of the same shape.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
    if (weights.shape() != x.shape()) throw ShapeError("weighted_sum shape mismatch");
    T acc = 0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x.value()[i] * weights[i];
    return make_result<T>(Tensor<T>({1}, {acc}), {x}, [weights](Node<T>& self) {
        if (auto* g = input_grad(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[0] * weights[i];
    });
}

// Binary cross-entropy averaged over the batch. `prob` holds the predicted
// class-1 probability; the probability of the true class is clamped to
// [clamp, 1] before the log, and clamped entries pass no gradient.
template <typename T>
Var<T> binary_cross_entropy(const Var<T>& prob, std::span<const int> labels, T clamp = T(1e-12)) {
    detail::require_rank(prob.shape(), 1, "binary_cross_entropy");
    const std::size_t n = prob.dim(0);
    if (labels.size() != n)
        throw ShapeError("label count " + std::to_string(labels.size()) +
                         " does not match prediction count " + std::to_string(n));
    if (n == 0) throw ShapeError("cross-entropy of an empty batch");
    std::vector<int> y(labels.begin(), labels.end());
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T p = prob.value()[i];
        const T q = y[i] ? p : T(1) - p;
        total += std::log(std::max(q, clamp));
    }
    const T loss = -total / T(n);
    return make_result<T>(Tensor<T>({1}, {loss}), {prob}, [y = std::move(y), clamp](Node<T>& self) {
        auto* g = input_grad(self, 0);
        if (!g) return;
        const std::size_t n = y.size();
        const T* pp = input_value(self, 0).data();
        for (std::size_t i = 0; i < n; ++i) {
            const T q = y[i] ? pp[i] : T(1) - pp[i];
            if (q < clamp) continue;
            const T dq = -self.grad[0] / (T(n) * q);
            (*g)[i] += y[i] ? dq : -dq;
        }
    });
}

}  // namespace tfbs::ops
