#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "wetsam/errors.hpp"
#include "wetsam/tensor.hpp"

// Primitive differentiable operations. Every op computes its forward values
// eagerly and registers a closure that maps the output gradient back onto
// the inputs that require it.

namespace wetsam::ops {

namespace detail {

inline std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `in` aligned to `out`, zero along broadcast axes.
inline std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> s(out.size(), 0);
    const auto in_strides = strides_of(in);
    const std::size_t off = out.size() - in.size();
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i] != 1) s[i + off] = in_strides[i];
    }
    return s;
}

// Calls f(out_index, a_index, b_index) for every output element in row-major order.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
    const std::size_t n = shape_numel(out);
    if (n == 0) return;
    if (out.empty()) {
        f(0, 0, 0);
        return;
    }
    const std::size_t r = out.size();
    const std::size_t inner = out[r - 1];
    const std::size_t ia_step = sa[r - 1], ib_step = sb[r - 1];
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t base = 0; base < n; base += inner) {
        for (std::size_t j = 0; j < inner; ++j) f(base + j, ia + j * ia_step, ib + j * ib_step);
        // advance the outer multi-index
        for (std::size_t d = r - 1; d-- > 0;) {
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

template <class Real>
void check_finite_output(const std::vector<Real>& v, const char* op) {
#if !defined(NDEBUG) || defined(WETSAM_CHECK_FINITE)
    for (Real x : v) {
        if (!std::isfinite(x)) throw EvaluationError(std::string("non-finite output in ") + op);
    }
#else
    (void)v;
    (void)op;
#endif
}

template <class Real>
bool inputs_finite(std::initializer_list<const Tensor<Real>*> ts) {
#if !defined(NDEBUG) || defined(WETSAM_CHECK_FINITE)
    for (auto* t : ts) {
        if (!all_finite<Real>(t->values())) return false;
    }
    return true;
#else
    (void)ts;
    return false;  // output checks are compiled out
#endif
}

template <class Real, class Fwd, class Dab>
Tensor<Real> binary_broadcast(const Tensor<Real>& a, const Tensor<Real>& b, Fwd fwd, Dab dab,
                              const char* name) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const auto sa = aligned_strides(a.shape(), out_shape);
    const auto sb = aligned_strides(b.shape(), out_shape);
    std::vector<Real> out(shape_numel(out_shape));
    const auto av = a.values();
    const auto bv = b.values();
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    } else {
        for_each_broadcast(out_shape, sa, sb,
                           [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(av[ia], bv[ib]); });
    }
    if (inputs_finite<Real>({&a, &b})) check_finite_output(out, name);
    return Tensor<Real>::make_result(
        out_shape, std::move(out), {a, b}, [a, b, out_shape, sa, sb, dab](const auto& node) {
            auto ga = a.grad_if_tracked();
            auto gb = b.grad_if_tracked();
            const auto av = a.values();
            const auto bv = b.values();
            const auto& g = node.grad;
            for_each_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                Real da, db;
                dab(av[ia], bv[ib], da, db);
                if (!ga.empty()) ga[ia] += g[i] * da;
                if (!gb.empty()) gb[ib] += g[i] * db;
            });
        });
}

template <class Real, class Fwd, class Deriv>
Tensor<Real> unary(const Tensor<Real>& x, Fwd fwd, Deriv deriv, const char* name) {
    std::vector<Real> out(x.numel());
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
    if (inputs_finite<Real>({&x})) check_finite_output(out, name);
    return Tensor<Real>::make_result(x.shape(), out, {x}, [x, out, deriv](const auto& node) {
        auto gx = x.grad_if_tracked();
        const auto xv = x.values();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i] * deriv(xv[i], out[i]);
    });
}

inline std::size_t normalize_axis(long axis, std::size_t rank) {
    const long r = static_cast<long>(rank);
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    }
    return static_cast<std::size_t>(axis);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (NumPy-style broadcasting)
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary_broadcast(
        a, b, [](Real x, Real y) { return x + y; },
        [](Real, Real, Real& da, Real& db) { da = 1; db = 1; }, "add");
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary_broadcast(
        a, b, [](Real x, Real y) { return x - y; },
        [](Real, Real, Real& da, Real& db) { da = 1; db = -1; }, "sub");
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary_broadcast(
        a, b, [](Real x, Real y) { return x * y; },
        [](Real x, Real y, Real& da, Real& db) { da = y; db = x; }, "mul");
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& x, Real s) {
    return detail::unary(
        x, [s](Real v) { return v * s; }, [s](Real, Real) { return s; }, "scale");
}

template <class Real>
Tensor<Real> add_scalar(const Tensor<Real>& x, Real s) {
    return detail::unary(
        x, [s](Real v) { return v + s; }, [](Real, Real) { return Real(1); }, "add_scalar");
}

template <class Real>
Tensor<Real> square(const Tensor<Real>& x) {
    return detail::unary(
        x, [](Real v) { return v * v; }, [](Real v, Real) { return 2 * v; }, "square");
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
    return detail::unary(
        x,
        [](Real v) {
            if (v >= 0) return Real(1) / (Real(1) + std::exp(-v));
            const Real e = std::exp(v);
            return e / (Real(1) + e);
        },
        [](Real, Real y) { return y * (Real(1) - y); }, "sigmoid");
}

template <class Real>
Tensor<Real> tanh(const Tensor<Real>& x) {
    return detail::unary(
        x, [](Real v) { return std::tanh(v); }, [](Real, Real y) { return Real(1) - y * y; }, "tanh");
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& x) {
    return detail::unary(
        x, [](Real v) { return v > 0 ? v : Real(0); }, [](Real v, Real) { return v > 0 ? Real(1) : Real(0); },
        "relu");
}

/// tanh approximation of GELU; smooth everywhere, which keeps finite-difference checks clean.
template <class Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
    constexpr Real k = Real(0.7978845608028654);  // sqrt(2/pi)
    constexpr Real c = Real(0.044715);
    return detail::unary(
        x,
        [](Real v) { return Real(0.5) * v * (Real(1) + std::tanh(k * (v + c * v * v * v))); },
        [](Real v, Real) {
            const Real u = k * (v + c * v * v * v);
            const Real t = std::tanh(u);
            const Real du = k * (Real(1) + 3 * c * v * v);
            return Real(0.5) * (Real(1) + t) + Real(0.5) * v * (Real(1) - t * t) * du;
        },
        "gelu");
}

template <class Real>
Tensor<Real> exp(const Tensor<Real>& x) {
    return detail::unary(
        x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; }, "exp");
}

/// log(max(x, floor)); the clamped region has zero derivative.
template <class Real>
Tensor<Real> log_clamped(const Tensor<Real>& x, Real floor) {
    return detail::unary(
        x, [floor](Real v) { return std::log(std::max(v, floor)); },
        [floor](Real v, Real) { return v > floor ? Real(1) / v : Real(0); }, "log");
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> sum(const Tensor<Real>& x) {
    Real s = 0;
    for (Real v : x.values()) s += v;
    return Tensor<Real>::make_result(Shape{}, {s}, {x}, [x](const auto& node) {
        auto gx = x.grad_if_tracked();
        const Real g = node.grad[0];
        for (auto& v : gx) v += g;
    });
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& x) {
    if (x.numel() == 0) throw DimensionError("mean of empty tensor");
    return scale(sum(x), Real(1) / static_cast<Real>(x.numel()));
}

/// Sum over one axis; the axis is removed from the result shape.
template <class Real>
Tensor<Real> sum_axis(const Tensor<Real>& x, long axis_in) {
    const std::size_t axis = detail::normalize_axis(axis_in, x.rank());
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) out_shape.push_back(s[i]);
    std::vector<Real> out(outer * inner, Real(0));
    const auto xv = x.values();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l) {
            const Real* src = xv.data() + (o * len + l) * inner;
            Real* dst = out.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    return Tensor<Real>::make_result(out_shape, std::move(out), {x}, [x, outer, inner, len](const auto& node) {
        auto gx = x.grad_if_tracked();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t l = 0; l < len; ++l) {
                Real* dst = gx.data() + (o * len + l) * inner;
                const Real* g = node.grad.data() + o * inner;
                for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
            }
    });
}

template <class Real>
Tensor<Real> mean_axis(const Tensor<Real>& x, long axis_in) {
    const std::size_t axis = detail::normalize_axis(axis_in, x.rank());
    return scale(sum_axis(x, static_cast<long>(axis)), Real(1) / static_cast<Real>(x.dim(axis)));
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    return Tensor<Real>::make_result(std::move(shape), x.data(), {x}, [x](const auto& node) {
        auto gx = x.grad_if_tracked();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i];
    });
}

/// General axis permutation: result axis i is input axis perm[i].
template <class Real>
Tensor<Real> permute(const Tensor<Real>& x, const std::vector<std::size_t>& perm) {
    const auto& s = x.shape();
    if (perm.size() != s.size()) throw DimensionError("permutation rank mismatch for " + shape_str(s));
    Shape out_shape(s.size());
    const auto in_strides = detail::strides_of(s);
    std::vector<std::size_t> src_strides(s.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        if (perm[i] >= s.size()) throw DimensionError("invalid permutation");
        out_shape[i] = s[perm[i]];
        src_strides[i] = in_strides[perm[i]];
    }
    std::vector<std::size_t> zero(s.size(), 0);
    std::vector<std::size_t> map(x.numel());
    detail::for_each_broadcast(out_shape, src_strides, zero,
                               [&](std::size_t i, std::size_t is, std::size_t) { map[i] = is; });
    std::vector<Real> out(x.numel());
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[map[i]];
    return Tensor<Real>::make_result(out_shape, std::move(out), {x}, [x, map](const auto& node) {
        auto gx = x.grad_if_tracked();
        for (std::size_t i = 0; i < map.size(); ++i) gx[map[i]] += node.grad[i];
    });
}

/// Swaps the last two axes.
template <class Real>
Tensor<Real> transpose_last2(const Tensor<Real>& x) {
    if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2");
    std::vector<std::size_t> perm(x.rank());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::swap(perm[x.rank() - 1], perm[x.rank() - 2]);
    return permute(x, perm);
}

/// Contiguous slice [start, start+length) along one axis.
template <class Real>
Tensor<Real> slice(const Tensor<Real>& x, long axis_in, std::size_t start, std::size_t length) {
    const std::size_t axis = detail::normalize_axis(axis_in, x.rank());
    const auto& s = x.shape();
    if (start + length > s[axis]) {
        throw DimensionError("slice [" + std::to_string(start) + "," + std::to_string(start + length) +
                             ") out of range for axis of size " + std::to_string(s[axis]));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    Shape out_shape = s;
    out_shape[axis] = length;
    std::vector<Real> out(outer * length * inner);
    const auto xv = x.values();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(xv.data() + (o * len + start) * inner, length * inner, out.data() + o * length * inner);
    return Tensor<Real>::make_result(out_shape, std::move(out), {x},
                                     [x, outer, inner, len, start, length](const auto& node) {
                                         auto gx = x.grad_if_tracked();
                                         for (std::size_t o = 0; o < outer; ++o) {
                                             Real* dst = gx.data() + (o * len + start) * inner;
                                             const Real* g = node.grad.data() + o * length * inner;
                                             for (std::size_t i = 0; i < length * inner; ++i) dst[i] += g[i];
                                         }
                                     });
}

template <class Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, long axis_in) {
    if (parts.empty()) throw DimensionError("concat of zero tensors");
    const std::size_t axis = detail::normalize_axis(axis_in, parts[0].rank());
    Shape out_shape = parts[0].shape();
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        if (p.rank() != out_shape.size()) throw DimensionError("concat rank mismatch");
        for (std::size_t i = 0; i < p.rank(); ++i) {
            if (i != axis && p.dim(i) != out_shape[i]) {
                throw DimensionError("concat shape mismatch: " + shape_str(parts[0].shape()) + " vs " +
                                     shape_str(p.shape()));
            }
        }
        out_shape[axis] += p.dim(axis);
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= out_shape[i];
    for (std::size_t i = axis + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
    const std::size_t total = out_shape[axis];
    std::vector<Real> out(shape_numel(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t len = p.dim(axis);
        const auto pv = p.values();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(pv.data() + o * len * inner, len * inner, out.data() + (o * total + off) * inner);
        off += len;
    }
    return Tensor<Real>::make_result(out_shape, std::move(out), parts,
                                     [parts, offsets, outer, inner, total, axis](const auto& node) {
                                         for (std::size_t k = 0; k < parts.size(); ++k) {
                                             auto gp = parts[k].grad_if_tracked();
                                             if (gp.empty()) continue;
                                             const std::size_t len = parts[k].dim(axis);
                                             for (std::size_t o = 0; o < outer; ++o) {
                                                 const Real* g = node.grad.data() + (o * total + offsets[k]) * inner;
                                                 Real* dst = gp.data() + o * len * inner;
                                                 for (std::size_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                                             }
                                         }
                                     });
}

template <class Real>
Tensor<Real> broadcast_to(const Tensor<Real>& x, const Shape& shape) {
    const Shape out = detail::broadcast_shape(x.shape(), shape);
    if (out != shape) throw DimensionError("cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
    return add(x, Tensor<Real>::zeros(shape));
}

/// Picks flat elements; result has shape [indices.size()].
template <class Real>
Tensor<Real> gather(const Tensor<Real>& x, const std::vector<std::size_t>& indices) {
    std::vector<Real> out(indices.size());
    const auto xv = x.values();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= xv.size()) throw DimensionError("gather index out of range");
        out[i] = xv[indices[i]];
    }
    return Tensor<Real>::make_result(Shape{indices.size()}, std::move(out), {x}, [x, indices](const auto& node) {
        auto gx = x.grad_if_tracked();
        for (std::size_t i = 0; i < indices.size(); ++i) gx[indices[i]] += node.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// x[..., k] @ w[k, m] -> [..., m]
template <class Real>
Tensor<Real> matmul(const Tensor<Real>& x, const Tensor<Real>& w) {
    if (x.rank() < 1 || w.rank() != 2 || x.shape().back() != w.dim(0)) {
        throw DimensionError("matmul: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(w.shape()));
    }
    const std::size_t k = w.dim(0), m = w.dim(1);
    const std::size_t rows = x.numel() / k;
    Shape out_shape = x.shape();
    out_shape.back() = m;
    std::vector<Real> out(rows * m, Real(0));
    const Real* xv = x.values().data();
    const Real* wv = w.values().data();
    for (std::size_t i = 0; i < rows; ++i) {
        Real* o = out.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const Real a = xv[i * k + p];
            if (a == Real(0)) continue;
            const Real* wr = wv + p * m;
            for (std::size_t j = 0; j < m; ++j) o[j] += a * wr[j];
        }
    }
    if (detail::inputs_finite<Real>({&x, &w})) detail::check_finite_output(out, "matmul");
    return Tensor<Real>::make_result(out_shape, std::move(out), {x, w}, [x, w, rows, k, m](const auto& node) {
        auto gx = x.grad_if_tracked();
        auto gw = w.grad_if_tracked();
        const Real* g = node.grad.data();
        const Real* xv = x.values().data();
        const Real* wv = w.values().data();
        if (!gx.empty()) {
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const Real* wr = wv + p * m;
                    const Real* gr = g + i * m;
                    Real acc = 0;
                    for (std::size_t j = 0; j < m; ++j) acc += gr[j] * wr[j];
                    gx[i * k + p] += acc;
                }
        }
        if (!gw.empty()) {
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const Real a = xv[i * k + p];
                    if (a == Real(0)) continue;
                    Real* gwr = gw.data() + p * m;
                    const Real* gr = g + i * m;
                    for (std::size_t j = 0; j < m; ++j) gwr[j] += a * gr[j];
                }
        }
    });
}

/// Affine map over the last axis: x[..., in] @ w[in, out] + b[out].
template <class Real>
Tensor<Real> dense(const Tensor<Real>& x, const Tensor<Real>& w, const std::optional<std::type_identity_t<Tensor<Real>>>& b) {
    if (x.rank() < 1 || w.rank() != 2 || x.shape().back() != w.dim(0)) {
        throw DimensionError("dense: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(w.shape()));
    }
    auto y = matmul(x, w);
    if (!b) return y;
    if (b->rank() != 1 || b->dim(0) != w.dim(1)) {
        throw DimensionError("dense: bias " + shape_str(b->shape()) + " incompatible with weight " +
                             shape_str(w.shape()));
    }
    return add(y, *b);
}

/// Batched product a[B, n, k] @ b[B, k, m] -> [B, n, m].
template <class Real>
Tensor<Real> bmm(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
        throw DimensionError("bmm: " + shape_str(a.shape()) + " incompatible with " + shape_str(b.shape()));
    }
    const std::size_t B = a.dim(0), n = a.dim(1), k = a.dim(2), m = b.dim(2);
    std::vector<Real> out(B * n * m, Real(0));
    const Real* av = a.values().data();
    const Real* bv = b.values().data();
    for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t i = 0; i < n; ++i) {
            Real* o = out.data() + (bi * n + i) * m;
            for (std::size_t p = 0; p < k; ++p) {
                const Real x = av[(bi * n + i) * k + p];
                const Real* br = bv + (bi * k + p) * m;
                for (std::size_t j = 0; j < m; ++j) o[j] += x * br[j];
            }
        }
    if (detail::inputs_finite<Real>({&a, &b})) detail::check_finite_output(out, "bmm");
    return Tensor<Real>::make_result(Shape{B, n, m}, std::move(out), {a, b}, [a, b, B, n, k, m](const auto& node) {
        auto ga = a.grad_if_tracked();
        auto gb = b.grad_if_tracked();
        const Real* g = node.grad.data();
        const Real* av = a.values().data();
        const Real* bv = b.values().data();
        for (std::size_t bi = 0; bi < B; ++bi)
            for (std::size_t i = 0; i < n; ++i) {
                const Real* gr = g + (bi * n + i) * m;
                for (std::size_t p = 0; p < k; ++p) {
                    const Real* br = bv + (bi * k + p) * m;
                    if (!ga.empty()) {
                        Real acc = 0;
                        for (std::size_t j = 0; j < m; ++j) acc += gr[j] * br[j];
                        ga[(bi * n + i) * k + p] += acc;
                    }
                    if (!gb.empty()) {
                        const Real x = av[(bi * n + i) * k + p];
                        Real* gbr = gb.data() + (bi * k + p) * m;
                        for (std::size_t j = 0; j < m; ++j) gbr[j] += x * gr[j];
                    }
                }
            }
    });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Softmax along `axis`, computed with max subtraction.
template <class Real>
Tensor<Real> softmax(const Tensor<Real>& x, long axis_in = -1) {
    const std::size_t axis = detail::normalize_axis(axis_in, x.rank());
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    std::vector<Real> out(x.numel());
    const auto xv = x.values();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            Real mx = xv[base];
            for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, xv[base + l * inner]);
            Real z = 0;
            for (std::size_t l = 0; l < len; ++l) {
                const Real e = std::exp(xv[base + l * inner] - mx);
                out[base + l * inner] = e;
                z += e;
            }
            for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= z;
        }
    return Tensor<Real>::make_result(s, out, {x}, [x, out, outer, inner, len](const auto& node) {
        auto gx = x.grad_if_tracked();
        const auto& g = node.grad;
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                Real dot = 0;
                for (std::size_t l = 0; l < len; ++l) dot += g[base + l * inner] * out[base + l * inner];
                for (std::size_t l = 0; l < len; ++l) {
                    const std::size_t i = base + l * inner;
                    gx[i] += out[i] * (g[i] - dot);
                }
            }
    });
}

inline constexpr double kLayerNormEpsilon = 1e-5;

/// Normalizes the last axis to zero mean / unit variance, then applies gain and offset.
/// Zero-variance rows map to `offset`.
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& offset) {
    if (x.rank() < 1) throw DimensionError("layer_norm on scalar");
    const std::size_t d = x.shape().back();
    if (gain.numel() != d || offset.numel() != d) {
        throw DimensionError("layer_norm: gain/offset " + shape_str(gain.shape()) + " vs row width " +
                             std::to_string(d));
    }
    const std::size_t rows = x.numel() / d;
    std::vector<Real> xhat(x.numel()), rstd(rows), out(x.numel());
    const auto xv = x.values();
    const auto gv = gain.values();
    const auto bv = offset.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = xv.data() + r * d;
        Real mu = 0;
        for (std::size_t i = 0; i < d; ++i) mu += row[i];
        mu /= static_cast<Real>(d);
        Real var = 0;
        for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= static_cast<Real>(d);
        rstd[r] = Real(1) / std::sqrt(var + static_cast<Real>(kLayerNormEpsilon));
        for (std::size_t i = 0; i < d; ++i) {
            xhat[r * d + i] = (row[i] - mu) * rstd[r];
            out[r * d + i] = xhat[r * d + i] * gv[i] + bv[i];
        }
    }
    return Tensor<Real>::make_result(
        x.shape(), std::move(out), {x, gain, offset}, [x, gain, offset, xhat, rstd, rows, d](const auto& node) {
            auto gx = x.grad_if_tracked();
            auto gg = gain.grad_if_tracked();
            auto gb = offset.grad_if_tracked();
            const auto gv = gain.values();
            const auto& g = node.grad;
            std::vector<Real> dxhat(d);
            for (std::size_t r = 0; r < rows; ++r) {
                Real m1 = 0, m2 = 0;
                for (std::size_t i = 0; i < d; ++i) {
                    const std::size_t k = r * d + i;
                    if (!gg.empty()) gg[i] += g[k] * xhat[k];
                    if (!gb.empty()) gb[i] += g[k];
                    dxhat[i] = g[k] * gv[i];
                    m1 += dxhat[i];
                    m2 += dxhat[i] * xhat[k];
                }
                if (gx.empty()) continue;
                m1 /= static_cast<Real>(d);
                m2 /= static_cast<Real>(d);
                for (std::size_t i = 0; i < d; ++i) {
                    const std::size_t k = r * d + i;
                    gx[k] += rstd[r] * (dxhat[i] - m1 - xhat[k] * m2);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Convolutions and resampling
// ---------------------------------------------------------------------------

/// 2-D convolution over NHWC input with kernel [k, k, Cin, Cout], zero "same" padding (k/2).
/// Supported kernel sizes: 1, 3, 5.
template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& kernel, const std::optional<std::type_identity_t<Tensor<Real>>>& bias,
                    std::size_t stride = 1) {
    if (kernel.rank() != 4 || kernel.dim(0) != kernel.dim(1)) {
        throw DimensionError("conv2d kernel must be [k,k,Cin,Cout], got " + shape_str(kernel.shape()));
    }
    const std::size_t k = kernel.dim(0);
    if (k != 1 && k != 3 && k != 5) throw ConfigError("conv2d: unsupported kernel size " + std::to_string(k));
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    Tensor<Real> in = x;
    const bool unbatched = x.rank() == 3;
    if (unbatched) in = reshape(x, Shape{1, x.dim(0), x.dim(1), x.dim(2)});
    if (in.rank() != 4 || in.dim(3) != kernel.dim(2)) {
        throw DimensionError("conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                             shape_str(kernel.shape()));
    }
    const std::size_t N = in.dim(0), H = in.dim(1), W = in.dim(2), Ci = in.dim(3), Co = kernel.dim(3);
    const long pad = static_cast<long>(k / 2);
    const std::size_t Ho = (H + 2 * pad - k) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - k) / stride + 1;
    std::vector<Real> out(N * Ho * Wo * Co, Real(0));
    const Real* xv = in.values().data();
    const Real* kv = kernel.values().data();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                Real* o = out.data() + ((n * Ho + oy) * Wo + ox) * Co;
                if (bias) {
                    const auto bv = bias->values();
                    for (std::size_t c = 0; c < Co; ++c) o[c] = bv[c];
                }
                for (std::size_t ky = 0; ky < k; ++ky) {
                    const long iy = static_cast<long>(oy * stride + ky) - pad;
                    if (iy < 0 || iy >= static_cast<long>(H)) continue;
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const long ix = static_cast<long>(ox * stride + kx) - pad;
                        if (ix < 0 || ix >= static_cast<long>(W)) continue;
                        const Real* xp = xv + ((n * H + iy) * W + ix) * Ci;
                        const Real* kp = kv + (ky * k + kx) * Ci * Co;
                        for (std::size_t ci = 0; ci < Ci; ++ci) {
                            const Real a = xp[ci];
                            const Real* kr = kp + ci * Co;
                            for (std::size_t c = 0; c < Co; ++c) o[c] += a * kr[c];
                        }
                    }
                }
            }
    if (detail::inputs_finite<Real>({&in, &kernel})) detail::check_finite_output(out, "conv2d");
    std::vector<Tensor<Real>> parents{in, kernel};
    if (bias) parents.push_back(*bias);
    auto result = Tensor<Real>::make_result(
        Shape{N, Ho, Wo, Co}, std::move(out), parents,
        [in, kernel, bias, N, H, W, Ci, Co, Ho, Wo, k, pad, stride](const auto& node) {
            auto gx = in.grad_if_tracked();
            auto gk = kernel.grad_if_tracked();
            std::span<Real> gb;
            if (bias) gb = bias->grad_if_tracked();
            const Real* g = node.grad.data();
            const Real* xv = in.values().data();
            const Real* kv = kernel.values().data();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t oy = 0; oy < Ho; ++oy)
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const Real* go = g + ((n * Ho + oy) * Wo + ox) * Co;
                        if (!gb.empty())
                            for (std::size_t c = 0; c < Co; ++c) gb[c] += go[c];
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            const long iy = static_cast<long>(oy * stride + ky) - pad;
                            if (iy < 0 || iy >= static_cast<long>(H)) continue;
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long ix = static_cast<long>(ox * stride + kx) - pad;
                                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                const std::size_t xoff = ((n * H + iy) * W + ix) * Ci;
                                const std::size_t koff = (ky * k + kx) * Ci * Co;
                                for (std::size_t ci = 0; ci < Ci; ++ci) {
                                    const Real* kr = kv + koff + ci * Co;
                                    if (!gx.empty()) {
                                        Real acc = 0;
                                        for (std::size_t c = 0; c < Co; ++c) acc += go[c] * kr[c];
                                        gx[xoff + ci] += acc;
                                    }
                                    if (!gk.empty()) {
                                        const Real a = xv[xoff + ci];
                                        Real* gkr = gk.data() + koff + ci * Co;
                                        for (std::size_t c = 0; c < Co; ++c) gkr[c] += a * go[c];
                                    }
                                }
                            }
                        }
                    }
        });
    if (unbatched) return reshape(result, Shape{Ho, Wo, Co});
    return result;
}

/// Per-channel temporal filter over x[B, T, D] with kernel [ks, D]; replicate padding at both ends.
template <class Real>
Tensor<Real> depthwise_conv1d(const Tensor<Real>& x, const Tensor<Real>& kernel) {
    Tensor<Real> in = x;
    const bool unbatched = x.rank() == 2;
    if (unbatched) in = reshape(x, Shape{1, x.dim(0), x.dim(1)});
    if (in.rank() != 3 || kernel.rank() != 2 || kernel.dim(1) != in.dim(2)) {
        throw DimensionError("depthwise_conv1d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                             shape_str(kernel.shape()));
    }
    const std::size_t B = in.dim(0), T = in.dim(1), D = in.dim(2), ks = kernel.dim(0);
    if (ks % 2 == 0) throw ConfigError("depthwise_conv1d: kernel size must be odd, got " + std::to_string(ks));
    if (ks > T) {
        throw ConfigError("depthwise_conv1d: kernel size " + std::to_string(ks) + " exceeds sequence length " +
                          std::to_string(T));
    }
    const long half = static_cast<long>(ks / 2);
    auto src = [T](long t) { return static_cast<std::size_t>(std::clamp<long>(t, 0, static_cast<long>(T) - 1)); };
    std::vector<Real> out(B * T * D, Real(0));
    const Real* xv = in.values().data();
    const Real* kv = kernel.values().data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t) {
            Real* o = out.data() + (b * T + t) * D;
            for (std::size_t j = 0; j < ks; ++j) {
                const Real* xr = xv + (b * T + src(static_cast<long>(t) + static_cast<long>(j) - half)) * D;
                const Real* kr = kv + j * D;
                for (std::size_t d = 0; d < D; ++d) o[d] += kr[d] * xr[d];
            }
        }
    auto result = Tensor<Real>::make_result(
        Shape{B, T, D}, std::move(out), {in, kernel}, [in, kernel, B, T, D, ks, half, src](const auto& node) {
            auto gx = in.grad_if_tracked();
            auto gk = kernel.grad_if_tracked();
            const Real* g = node.grad.data();
            const Real* xv = in.values().data();
            const Real* kv = kernel.values().data();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t t = 0; t < T; ++t) {
                    const Real* go = g + (b * T + t) * D;
                    for (std::size_t j = 0; j < ks; ++j) {
                        const std::size_t s = (b * T + src(static_cast<long>(t) + static_cast<long>(j) - half)) * D;
                        for (std::size_t d = 0; d < D; ++d) {
                            if (!gx.empty()) gx[s + d] += go[d] * kv[j * D + d];
                            if (!gk.empty()) gk[j * D + d] += go[d] * xv[s + d];
                        }
                    }
                }
        });
    if (unbatched) return reshape(result, Shape{T, D});
    return result;
}

namespace detail {
struct LerpTap {
    std::size_t i0, i1;
    double w1;
};

// Half-pixel-centred source taps for resizing `in` samples to `out` samples.
inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
    std::vector<LerpTap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(in - 1));
        const auto i0 = static_cast<std::size_t>(std::floor(s));
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        taps[o] = {i0, i1, s - static_cast<double>(i0)};
    }
    return taps;
}
} // namespace detail

/// Bilinear resize of x[N, h, w, C] to [N, H, W, C] (half-pixel centres, edge clamped).
template <class Real>
Tensor<Real> upsample_bilinear(const Tensor<Real>& x, std::size_t H, std::size_t W) {
    if (x.rank() != 4) throw DimensionError("upsample_bilinear expects NHWC, got " + shape_str(x.shape()));
    const std::size_t N = x.dim(0), h = x.dim(1), w = x.dim(2), C = x.dim(3);
    const auto ty = detail::lerp_taps(h, H);
    const auto tx = detail::lerp_taps(w, W);
    std::vector<Real> out(N * H * W * C);
    const Real* xv = x.values().data();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t oy = 0; oy < H; ++oy)
            for (std::size_t ox = 0; ox < W; ++ox) {
                const auto& a = ty[oy];
                const auto& b = tx[ox];
                const Real wy1 = static_cast<Real>(a.w1), wy0 = Real(1) - wy1;
                const Real wx1 = static_cast<Real>(b.w1), wx0 = Real(1) - wx1;
                const Real* p00 = xv + ((n * h + a.i0) * w + b.i0) * C;
                const Real* p01 = xv + ((n * h + a.i0) * w + b.i1) * C;
                const Real* p10 = xv + ((n * h + a.i1) * w + b.i0) * C;
                const Real* p11 = xv + ((n * h + a.i1) * w + b.i1) * C;
                Real* o = out.data() + ((n * H + oy) * W + ox) * C;
                for (std::size_t c = 0; c < C; ++c)
                    o[c] = wy0 * (wx0 * p00[c] + wx1 * p01[c]) + wy1 * (wx0 * p10[c] + wx1 * p11[c]);
            }
    return Tensor<Real>::make_result(Shape{N, H, W, C}, std::move(out), {x},
                                     [x, ty, tx, N, h, w, C, H, W](const auto& node) {
                                         auto gx = x.grad_if_tracked();
                                         const Real* g = node.grad.data();
                                         for (std::size_t n = 0; n < N; ++n)
                                             for (std::size_t oy = 0; oy < H; ++oy)
                                                 for (std::size_t ox = 0; ox < W; ++ox) {
                                                     const auto& a = ty[oy];
                                                     const auto& b = tx[ox];
                                                     const Real wy1 = static_cast<Real>(a.w1), wy0 = Real(1) - wy1;
                                                     const Real wx1 = static_cast<Real>(b.w1), wx0 = Real(1) - wx1;
                                                     const Real* go = g + ((n * H + oy) * W + ox) * C;
                                                     Real* q00 = gx.data() + ((n * h + a.i0) * w + b.i0) * C;
                                                     Real* q01 = gx.data() + ((n * h + a.i0) * w + b.i1) * C;
                                                     Real* q10 = gx.data() + ((n * h + a.i1) * w + b.i0) * C;
                                                     Real* q11 = gx.data() + ((n * h + a.i1) * w + b.i1) * C;
                                                     for (std::size_t c = 0; c < C; ++c) {
                                                         q00[c] += go[c] * wy0 * wx0;
                                                         q01[c] += go[c] * wy0 * wx1;
                                                         q10[c] += go[c] * wy1 * wx0;
                                                         q11[c] += go[c] * wy1 * wx1;
                                                     }
                                                 }
                                     });
}

} // namespace wetsam::ops
