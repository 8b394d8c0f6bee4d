#pragma once

#include <cmath>
#include <cstring>

#include "btk/tensor.hpp"

namespace btk {

// ---------------------------------------------------------------------------
// broadcasting helpers
// ---------------------------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (size_t i = 0; i < rank; ++i) {
        int64_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        int64_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        check<ShapeError>(ea == eb || ea == 1 || eb == 1, op, ": cannot broadcast axis ", i,
                          " (", ea, " vs ", eb, ") of shapes ", shape_str(a), " and ",
                          shape_str(b));
        out[i] = std::max(ea, eb);
    }
    return out;
}

// Row-major strides of `shape`, with zeros where the (right-aligned) input
// extent is 1, so broadcast dimensions do not advance the input offset.
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<int64_t> strides(out.size(), 0);
    int64_t s = 1;
    for (size_t i = in.size(); i-- > 0;) {
        size_t oi = i + (out.size() - in.size());
        strides[oi] = (in[i] == 1 && out[oi] != 1) ? 0 : s;
        s *= in[i];
    }
    return strides;
}

namespace detail {

// Branch-free single-precision exp (Cody-Waite reduction, degree-5 minimax),
// relative error ~4e-6. The attention softmax is exp-bound; the 64-bit
// instantiation keeps std::exp so reference checks are bit-faithful.
inline float fast_expf(float x) {
    x = std::min(87.0f, std::max(-87.0f, x));
    float n = std::floor(x * 1.44269504088896341f + 0.5f);
    float r = x - n * 0.693359375f;
    r -= n * -2.12194440e-4f;
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    p = p * r * r + r + 1.0f;
    int32_t ni = int32_t(n);
    uint32_t bits = uint32_t(127 + ni) << 23;
    float two_n;
    std::memcpy(&two_n, &bits, 4);
    return p * two_n;
}

inline float softmax_exp(float x) { return fast_expf(x); }
inline double softmax_exp(double x) { return std::exp(x); }

// Applies fn(out_index, a_offset, b_offset) over every element of `out` in
// row-major order. Deterministic accumulation order everywhere.
template <class Fn>
void for_each_broadcast(const Shape& out, const std::vector<int64_t>& sa,
                        const std::vector<int64_t>& sb, Fn&& fn) {
    size_t rank = out.size();
    int64_t total = shape_numel(out);
    std::vector<int64_t> idx(rank, 0);
    int64_t offa = 0, offb = 0;
    for (int64_t flat = 0; flat < total; ++flat) {
        fn(flat, offa, offb);
        for (size_t d = rank; d-- > 0;) {
            ++idx[d];
            offa += sa[d];
            offb += sb[d];
            if (idx[d] < out[d]) break;
            idx[d] = 0;
            offa -= sa[d] * out[d];
            offb -= sb[d] * out[d];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary kernels (numpy-style broadcasting)
// ---------------------------------------------------------------------------

// fwd(x, y) -> value; dfda(g, x, y) and dfdb(g, x, y) -> partials
template <class T, class Fwd, class Dfa, class Dfb>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, Dfa dfa,
                    Dfb dfb) {
    if (a.shape() == b.shape()) {
        // same-shape fast path: flat loops, parallel over disjoint ranges
        int64_t n = a.numel();
        Tensor<T> out = Tensor<T>::zeros(a.shape());
        {
            const T* av = a.value().data();
            const T* bv = b.value().data();
            T* ov = out.value().data();
            parallel_chunks(n, [&](int64_t lo, int64_t hi, int64_t) {
                for (int64_t i = lo; i < hi; ++i) ov[i] = fwd(av[i], bv[i]);
            });
        }
        if (tracked(a, b)) {
            auto ad = a.ptr();
            auto bd = b.ptr();
            auto od = out.ptr();
            Tape<T>::current()->record(od, [ad, bd, od, n, dfa, dfb]() {
                const T* av = ad->value.data();
                const T* bv = bd->value.data();
                const T* g = od->grad.data();
                bool ga = wants_grad(ad), gb = wants_grad(bd);
                T* da = ga ? ad->grad.data() : nullptr;
                T* db = gb ? bd->grad.data() : nullptr;
                parallel_chunks(n, [&](int64_t lo, int64_t hi, int64_t) {
                    if (da)
                        for (int64_t i = lo; i < hi; ++i) da[i] += dfa(g[i], av[i], bv[i]);
                    if (db)
                        for (int64_t i = lo; i < hi; ++i) db[i] += dfb(g[i], av[i], bv[i]);
                });
            });
        }
        return out;
    }
    Shape os = broadcast_shape(a.shape(), b.shape(), name);
    auto sa = broadcast_strides(a.shape(), os);
    auto sb = broadcast_strides(b.shape(), os);
    Tensor<T> out = Tensor<T>::zeros(os);
    {
        const T* av = a.value().data();
        const T* bv = b.value().data();
        T* ov = out.value().data();
        detail::for_each_broadcast(os, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
            ov[i] = fwd(av[ia], bv[ib]);
        });
    }
    if (tracked(a, b)) {
        auto ad = a.ptr();
        auto bd = b.ptr();
        auto od = out.ptr();
        Tape<T>::current()->record(od, [ad, bd, od, os, sa, sb, dfa, dfb]() {
            const T* av = ad->value.data();
            const T* bv = bd->value.data();
            const T* g = od->grad.data();
            bool ga = wants_grad(ad), gb = wants_grad(bd);
            detail::for_each_broadcast(os, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
                if (ga) ad->grad[size_t(ia)] += dfa(g[i], av[ia], bv[ib]);
                if (gb) bd->grad[size_t(ib)] += dfb(g[i], av[ia], bv[ib]);
            });
        });
    }
    return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "add", [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return g; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return -g; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
        [](T g, T x, T) { return g * x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "div", [](T x, T y) { return x / y; }, [](T g, T, T y) { return g / y; },
        [](T g, T x, T y) { return -g * x / (y * y); });
}

// ---------------------------------------------------------------------------
// elementwise unary kernels
// ---------------------------------------------------------------------------

template <class T, class Fwd, class Bwd>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Bwd bwd) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.value().data();
    T* ov = out.value().data();
    int64_t n = x.numel();
    parallel_chunks(n, [&](int64_t lo, int64_t hi, int64_t) {
        for (int64_t i = lo; i < hi; ++i) ov[i] = fwd(xv[i]);
    });
    if (tracked(x)) {
        auto xd = x.ptr();
        auto od = out.ptr();
        Tape<T>::current()->record(od, [xd, od, bwd, n]() {
            if (!wants_grad(xd)) return;
            const T* xv = xd->value.data();
            const T* yv = od->value.data();
            const T* g = od->grad.data();
            T* dx = xd->grad.data();
            parallel_chunks(n, [&](int64_t lo, int64_t hi, int64_t) {
                for (int64_t i = lo; i < hi; ++i) dx[i] += bwd(g[i], xv[i], yv[i]);
            });
        });
    }
    return out;
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return -v; }, [](T g, T, T) { return -g; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    return unary_op(
        x, [c](T v) { return c * v; }, [c](T g, T, T) { return c * g; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    return unary_op(
        x, [c](T v) { return v + c; }, [](T g, T, T) { return g; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); },
        [](T g, T v, T) { return v > T(0) ? g : T(0); });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    const T inv_sqrt2 = T(0.7071067811865475244);
    const T inv_sqrt2pi = T(0.3989422804014326779);
    return unary_op(
        x,
        [=](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
        [=](T g, T v, T) {
            T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
            T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
            return g * (cdf + v * pdf);
        });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return std::exp(v); }, [](T g, T, T y) { return g * y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return std::log(v); }, [](T g, T v, T) { return g / v; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return std::sqrt(v); }, [](T g, T, T y) { return g / (T(2) * y); });
}

template <class T>
Tensor<T> rsqrt(const Tensor<T>& x) {
    return unary_op(
        x, [](T v) { return T(1) / std::sqrt(v); },
        [](T g, T v, T y) { return g * (T(-0.5) * y / v); });
}

// Subgradient convention: gradient passes only where x > c.
template <class T>
Tensor<T> clamp_min(const Tensor<T>& x, T c) {
    return unary_op(
        x, [c](T v) { return v > c ? v : c; }, [c](T g, T v, T) { return v > c ? g : T(0); });
}

// ---------------------------------------------------------------------------
// view kernels
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    int64_t unknown = -1;
    int64_t prod = 1;
    for (size_t i = 0; i < new_shape.size(); ++i) {
        if (new_shape[i] == -1) {
            check<ShapeError>(unknown < 0, "reshape: multiple -1 extents");
            unknown = int64_t(i);
        } else {
            prod *= new_shape[i];
        }
    }
    if (unknown >= 0) {
        check<ShapeError>(prod != 0 && x.numel() % prod == 0, "reshape: cannot infer axis ",
                          unknown, " for ", x.numel(), " elements");
        new_shape[size_t(unknown)] = x.numel() / prod;
        prod *= new_shape[size_t(unknown)];
    }
    check<ShapeError>(prod == x.numel(), "reshape: ", shape_str(x.shape()), " (", x.numel(),
                      " elements) to ", shape_str(new_shape), " (", prod, " elements)");
    Tensor<T> out = Tensor<T>::from(std::move(new_shape), x.value());
    if (tracked(x)) {
        auto xd = x.ptr();
        auto od = out.ptr();
        Tape<T>::current()->record(od, [xd, od]() {
            if (!wants_grad(xd)) return;
            for (size_t i = 0; i < od->grad.size(); ++i) xd->grad[i] += od->grad[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int64_t>& axes) {
    size_t rank = x.shape().size();
    check<ShapeError>(axes.size() == rank, "permute: axes length ", axes.size(), " != rank ",
                      rank);
    std::vector<bool> seen(rank, false);
    Shape os(rank);
    for (size_t i = 0; i < rank; ++i) {
        int64_t a = axes[i];
        check<ShapeError>(a >= 0 && size_t(a) < rank && !seen[size_t(a)],
                          "permute: invalid axes permutation");
        seen[size_t(a)] = true;
        os[i] = x.shape()[size_t(a)];
    }
    // in_strides in output-axis order
    std::vector<int64_t> xs(rank, 1);
    for (size_t i = rank - 1; i-- > 0;) xs[i] = xs[i + 1] * x.shape()[i + 1];
    std::vector<int64_t> stride(rank);
    for (size_t i = 0; i < rank; ++i) stride[i] = xs[size_t(axes[i])];

    Tensor<T> out = Tensor<T>::zeros(os);
    const T* xv = x.value().data();
    T* ov = out.value().data();
    std::vector<int64_t> idx(rank, 0);
    int64_t off = 0;
    int64_t total = x.numel();
    for (int64_t flat = 0; flat < total; ++flat) {
        ov[flat] = xv[off];
        for (size_t d = rank; d-- > 0;) {
            ++idx[d];
            off += stride[d];
            if (idx[d] < os[d]) break;
            idx[d] = 0;
            off -= stride[d] * os[d];
        }
    }
    if (tracked(x)) {
        auto xd = x.ptr();
        auto od = out.ptr();
        Tape<T>::current()->record(od, [xd, od, os, stride, rank, total]() {
            if (!wants_grad(xd)) return;
            const T* g = od->grad.data();
            std::vector<int64_t> idx(rank, 0);
            int64_t off = 0;
            for (int64_t flat = 0; flat < total; ++flat) {
                xd->grad[size_t(off)] += g[flat];
                for (size_t d = rank; d-- > 0;) {
                    ++idx[d];
                    off += stride[d];
                    if (idx[d] < os[d]) break;
                    idx[d] = 0;
                    off -= stride[d] * os[d];
                }
            }
        });
    }
    return out;
}

// x[i0, i1, ...] for the first two axes fixed; returns the remaining-axes slice.
template <class T>
Tensor<T> slice_front2(const Tensor<T>& x, int64_t i0, int64_t i1) {
    check<ShapeError>(x.rank() >= 2, "slice_front2: rank must be >= 2");
    check<ShapeError>(i0 >= 0 && i0 < x.dim(0) && i1 >= 0 && i1 < x.dim(1),
                      "slice_front2: index (", i0, ",", i1, ") out of bounds for ",
                      shape_str(x.shape()));
    Shape os(x.shape().begin() + 2, x.shape().end());
    if (os.empty()) os = {1};
    int64_t block = shape_numel(os);
    int64_t base = (i0 * x.dim(1) + i1) * block;
    Tensor<T> out = Tensor<T>::zeros(os);
    std::copy(x.value().begin() + base, x.value().begin() + base + block, out.value().begin());
    if (tracked(x)) {
        auto xd = x.ptr();
        auto od = out.ptr();
        Tape<T>::current()->record(od, [xd, od, base, block]() {
            if (!wants_grad(xd)) return;
            for (int64_t i = 0; i < block; ++i) xd->grad[size_t(base + i)] += od->grad[size_t(i)];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.value()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (tracked(x)) {
        auto xd = x.ptr();
        auto od = out.ptr();
        Tape<T>::current()->record(od, [xd, od]() {
            if (!wants_grad(xd)) return;
            T g = od->grad[0];
            for (auto& gv : xd->grad) gv += g;
        });
    }
    return out;
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
    return scale(sum_all(x), T(1) / T(x.numel()));
}

namespace detail {
// Decomposes a shape around `axis` into (outer, n, inner) extents.
inline void axis_split(const Shape& s, int64_t axis, int64_t& outer, int64_t& n, int64_t& inner) {
    outer = 1;
    inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= s[size_t(i)];
    n = s[size_t(axis)];
    for (size_t i = size_t(axis) + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, int64_t axis, bool keepdim = false) {
    check<ShapeError>(axis >= 0 && axis < x.rank(), "sum_axis: axis ", axis,
                      " out of range for rank ", x.rank());
    int64_t outer, n, inner;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    Shape os = x.shape();
    if (keepdim)
        os[size_t(axis)] = 1;
    else
        os.erase(os.begin() + axis);
    if (os.empty()) os = {1};
    Tensor<T> out = Tensor<T>::zeros(os);
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t k = 0; k < n; ++k)
            for (int64_t i = 0; i < inner; ++i) ov[o * inner + i] += xv[(o * n + k) * inner + i];
    if (tracked(x)) {
        auto xd = x.ptr();
        auto od = out.ptr();
        Tape<T>::current()->record(od, [xd, od, outer, n, inner]() {
            if (!wants_grad(xd)) return;
            const T* g = od->grad.data();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t k = 0; k < n; ++k)
                    for (int64_t i = 0; i < inner; ++i)
                        xd->grad[size_t((o * n + k) * inner + i)] += g[o * inner + i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax / logsumexp / layer_norm
// ---------------------------------------------------------------------------

// Numerically stabilized softmax along `axis` (subtract-max is mandatory).
template <class T>
Tensor<T> softmax(const Tensor<T>& x, int64_t axis) {
    check<ShapeError>(axis >= 0 && axis < x.rank(), "softmax: axis ", axis,
                      " out of range for rank ", x.rank());
    int64_t outer, n, inner;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.value().data();
    T* ov = out.value().data();
    parallel_chunks(outer, [&](int64_t olo, int64_t ohi, int64_t) {
        for (int64_t o = olo; o < ohi; ++o)
            for (int64_t i = 0; i < inner; ++i) {
                int64_t base = o * n * inner + i;
                T m = xv[base];
                for (int64_t k = 1; k < n; ++k) m = std::max(m, xv[base + k * inner]);
                T s = T(0);
                for (int64_t k = 0; k < n; ++k) {
                    T e = detail::softmax_exp(xv[base + k * inner] - m);
                    ov[base + k * inner] = e;
                    s += e;
                }
                T invs = T(1) / s;
                for (int64_t k = 0; k < n; ++k) ov[base + k * inner] *= invs;
            }
    });
    if (tracked(x)) {
        auto xd = x.ptr();
        auto od = out.ptr();
        Tape<T>::current()->record(od, [xd, od, outer, n, inner]() {
            if (!wants_grad(xd)) return;
            const T* y = od->value.data();
            const T* g = od->grad.data();
            T* dx = xd->grad.data();
            parallel_chunks(outer, [&](int64_t olo, int64_t ohi, int64_t) {
                for (int64_t o = olo; o < ohi; ++o)
                    for (int64_t i = 0; i < inner; ++i) {
                        int64_t base = o * n * inner + i;
                        T dot = T(0);
                        for (int64_t k = 0; k < n; ++k)
                            dot += g[base + k * inner] * y[base + k * inner];
                        for (int64_t k = 0; k < n; ++k)
                            dx[base + k * inner] +=
                                y[base + k * inner] * (g[base + k * inner] - dot);
                    }
            });
        });
    }
    return out;
}

template <class T>
Tensor<T> logsumexp(const Tensor<T>& x, int64_t axis) {
    check<ShapeError>(axis >= 0 && axis < x.rank(), "logsumexp: axis ", axis,
                      " out of range for rank ", x.rank());
    int64_t outer, n, inner;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    Shape os = x.shape();
    os.erase(os.begin() + axis);
    if (os.empty()) os = {1};
    Tensor<T> out = Tensor<T>::zeros(os);
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            int64_t base = o * n * inner + i;
            T m = xv[base];
            for (int64_t k = 1; k < n; ++k) m = std::max(m, xv[base + k * inner]);
            T s = T(0);
            for (int64_t k = 0; k < n; ++k) s += detail::softmax_exp(xv[base + k * inner] - m);
            ov[o * inner + i] = m + std::log(s);
        }
    if (tracked(x)) {
        auto xd = x.ptr();
        auto od = out.ptr();
        Tape<T>::current()->record(od, [xd, od, outer, n, inner]() {
            if (!wants_grad(xd)) return;
            const T* xv = xd->value.data();
            const T* lse = od->value.data();
            const T* g = od->grad.data();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < inner; ++i) {
                    int64_t base = o * n * inner + i;
                    T gv = g[o * inner + i];
                    T l = lse[o * inner + i];
                    for (int64_t k = 0; k < n; ++k)
                        xd->grad[size_t(base + k * inner)] +=
                            gv * detail::softmax_exp(xv[base + k * inner] - l);
                }
        });
    }
    return out;
}

// Normalizes the last axis to zero mean / unit variance, then applies the
// gamma/beta affine. gamma and beta have the last-axis extent.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    int64_t n = x.shape().back();
    check<ShapeError>(gamma.numel() == n, "layer_norm: gamma length ", gamma.numel(),
                      " != normalized extent ", n);
    check<ShapeError>(beta.numel() == n, "layer_norm: beta length ", beta.numel(),
                      " != normalized extent ", n);
    int64_t rows = x.numel() / n;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    auto xhat = std::make_shared<std::vector<T>>(size_t(x.numel()));
    auto inv_std = std::make_shared<std::vector<T>>(size_t(rows));
    const T* xv = x.value().data();
    const T* gv = gamma.value().data();
    const T* bv = beta.value().data();
    T* ov = out.value().data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = xv + r * n;
        T mean = T(0);
        for (int64_t k = 0; k < n; ++k) mean += row[k];
        mean /= T(n);
        T var = T(0);
        for (int64_t k = 0; k < n; ++k) var += (row[k] - mean) * (row[k] - mean);
        var /= T(n);
        T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[size_t(r)] = is;
        for (int64_t k = 0; k < n; ++k) {
            T xh = (row[k] - mean) * is;
            (*xhat)[size_t(r * n + k)] = xh;
            ov[r * n + k] = gv[k] * xh + bv[k];
        }
    }
    if (tracked(x, gamma, beta)) {
        auto xd = x.ptr();
        auto gd = gamma.ptr();
        auto bd = beta.ptr();
        auto od = out.ptr();
        Tape<T>::current()->record(od, [xd, gd, bd, od, xhat, inv_std, rows, n]() {
            const T* g = od->grad.data();
            const T* gv = gd->value.data();
            for (int64_t r = 0; r < rows; ++r) {
                const T* xh = xhat->data() + r * n;
                const T* gr = g + r * n;
                if (wants_grad(gd) || wants_grad(bd)) {
                    for (int64_t k = 0; k < n; ++k) {
                        if (wants_grad(gd)) gd->grad[size_t(k)] += gr[k] * xh[k];
                        if (wants_grad(bd)) bd->grad[size_t(k)] += gr[k];
                    }
                }
                if (wants_grad(xd)) {
                    T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                    for (int64_t k = 0; k < n; ++k) {
                        T dxh = gr[k] * gv[k];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xh[k];
                    }
                    T is = (*inv_std)[size_t(r)];
                    for (int64_t k = 0; k < n; ++k) {
                        T dxh = gr[k] * gv[k];
                        xd->grad[size_t(r * n + k)] +=
                            is * (dxh - (sum_dxhat + xh[k] * sum_dxhat_xhat) / T(n));
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul (batched, broadcastable batch dims)
// ---------------------------------------------------------------------------

namespace detail {

// C[m][n] += sum_k A[m][k] * B[k][n]
template <class T>
void gemm_accum(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N) {
    for (int64_t m = 0; m < M; ++m) {
        const T* a = A + m * K;
        T* c = C + m * N;
        for (int64_t k = 0; k < K; ++k) {
            T av = a[k];
            const T* b = B + k * N;
            for (int64_t n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

// dA[m][k] += sum_n G[m][n] * B[k][n]
template <class T>
void gemm_dA(const T* G, const T* B, T* dA, int64_t M, int64_t K, int64_t N) {
    for (int64_t m = 0; m < M; ++m) {
        const T* g = G + m * N;
        T* da = dA + m * K;
        for (int64_t k = 0; k < K; ++k) {
            const T* b = B + k * N;
            T acc = T(0);
            for (int64_t n = 0; n < N; ++n) acc += g[n] * b[n];
            da[k] += acc;
        }
    }
}

// dB[k][n] += sum_m A[m][k] * G[m][n]
template <class T>
void gemm_dB(const T* A, const T* G, T* dB, int64_t M, int64_t K, int64_t N) {
    for (int64_t m = 0; m < M; ++m) {
        const T* a = A + m * K;
        const T* g = G + m * N;
        for (int64_t k = 0; k < K; ++k) {
            T av = a[k];
            T* db = dB + k * N;
            for (int64_t n = 0; n < N; ++n) db[n] += av * g[n];
        }
    }
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    check<ShapeError>(a.rank() >= 2 && b.rank() >= 2, "matmul: operands must have rank >= 2, got ",
                      shape_str(a.shape()), " and ", shape_str(b.shape()));
    int64_t M = a.dim(a.rank() - 2), K = a.dim(a.rank() - 1);
    int64_t Kb = b.dim(b.rank() - 2), N = b.dim(b.rank() - 1);
    check<ShapeError>(K == Kb, "matmul: inner extents differ (", K, " vs ", Kb, ") for ",
                      shape_str(a.shape()), " x ", shape_str(b.shape()));
    Shape ba(a.shape().begin(), a.shape().end() - 2);
    Shape bb(b.shape().begin(), b.shape().end() - 2);
    Shape batch = broadcast_shape(ba, bb, "matmul");
    auto sa = broadcast_strides(ba, batch);
    auto sb = broadcast_strides(bb, batch);
    // convert per-axis element strides into per-axis matrix strides
    int64_t nbatch = shape_numel(batch);

    Shape os = batch;
    os.push_back(M);
    os.push_back(N);
    Tensor<T> out = Tensor<T>::zeros(os);

    // enumerate batch offsets once; reused by forward and backward
    auto offsets = std::make_shared<std::vector<std::pair<int64_t, int64_t>>>();
    offsets->reserve(size_t(nbatch));
    {
        size_t rank = batch.size();
        std::vector<int64_t> idx(rank, 0);
        int64_t offa = 0, offb = 0;
        for (int64_t flat = 0; flat < nbatch; ++flat) {
            offsets->push_back({offa, offb});
            for (size_t d = rank; d-- > 0;) {
                ++idx[d];
                offa += sa[d];
                offb += sb[d];
                if (idx[d] < batch[d]) break;
                idx[d] = 0;
                offa -= sa[d] * batch[d];
                offb -= sb[d] * batch[d];
            }
        }
    }
    const T* av = a.value().data();
    const T* bv = b.value().data();
    T* ov = out.value().data();
    parallel_chunks(nbatch, [&](int64_t lo, int64_t hi, int64_t) {
        for (int64_t i = lo; i < hi; ++i) {
            auto [oa, ob] = (*offsets)[size_t(i)];
            detail::gemm_accum(av + oa * M * K, bv + ob * K * N, ov + i * M * N, M, K, N);
        }
    });
    if (tracked(a, b)) {
        // an operand whose matrix repeats across the batch (broadcast) needs
        // per-chunk gradient buffers reduced in fixed chunk order
        bool a_shared = false, b_shared = false;
        for (size_t d = 0; d < batch.size(); ++d) {
            if (batch[d] > 1 && sa[d] == 0) a_shared = true;
            if (batch[d] > 1 && sb[d] == 0) b_shared = true;
        }
        auto ad = a.ptr();
        auto bd = b.ptr();
        auto od = out.ptr();
        Tape<T>::current()->record(od, [ad, bd, od, offsets, nbatch, M, K, N, a_shared,
                                        b_shared]() {
            const T* g = od->grad.data();
            bool ga = wants_grad(ad), gb = wants_grad(bd);
            int64_t chunks = parallel_chunk_count(nbatch);
            std::vector<std::vector<T>> pa, pb;
            if (ga && a_shared && chunks > 1)
                pa.assign(size_t(chunks), std::vector<T>(ad->grad.size(), T(0)));
            if (gb && b_shared && chunks > 1)
                pb.assign(size_t(chunks), std::vector<T>(bd->grad.size(), T(0)));
            parallel_chunks(nbatch, [&](int64_t lo, int64_t hi, int64_t chunk) {
                T* da = ga ? (pa.empty() ? ad->grad.data() : pa[size_t(chunk)].data()) : nullptr;
                T* db = gb ? (pb.empty() ? bd->grad.data() : pb[size_t(chunk)].data()) : nullptr;
                for (int64_t i = lo; i < hi; ++i) {
                    auto [oa, ob] = (*offsets)[size_t(i)];
                    if (da)
                        detail::gemm_dA(g + i * M * N, bd->value.data() + ob * K * N,
                                        da + oa * M * K, M, K, N);
                    if (db)
                        detail::gemm_dB(ad->value.data() + oa * M * K, g + i * M * N,
                                        db + ob * K * N, M, K, N);
                }
            });
            for (auto& part : pa)
                for (size_t e = 0; e < part.size(); ++e) ad->grad[e] += part[e];
            for (auto& part : pb)
                for (size_t e = 0; e < part.size(); ++e) bd->grad[e] += part[e];
        });
    }
    return out;
}

}  // namespace btk
