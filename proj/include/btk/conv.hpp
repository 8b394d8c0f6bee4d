#pragma once

#include <optional>

#include "btk/ops.hpp"

namespace btk {

namespace detail {

// cols has layout [C*kh*kw][Hout*Wout]; out-of-bounds taps read as zero.
template <class T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t Hout, int64_t Wout, T* cols) {
    for (int64_t c = 0; c < C; ++c) {
        const T* xc = x + c * H * W;
        for (int64_t ki = 0; ki < kh; ++ki)
            for (int64_t kj = 0; kj < kw; ++kj) {
                T* row = cols + ((c * kh + ki) * kw + kj) * Hout * Wout;
                for (int64_t oh = 0; oh < Hout; ++oh) {
                    int64_t ih = oh * stride - pad + ki;
                    T* dst = row + oh * Wout;
                    if (ih < 0 || ih >= H) {
                        for (int64_t ow = 0; ow < Wout; ++ow) dst[ow] = T(0);
                        continue;
                    }
                    const T* src = xc + ih * W;
                    for (int64_t ow = 0; ow < Wout; ++ow) {
                        int64_t iw = ow * stride - pad + kj;
                        dst[ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
                    }
                }
            }
    }
}

// adjoint of im2col: scatter-adds cols back into the image
template <class T>
void col2im_add(const T* cols, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t Hout, int64_t Wout, T* x) {
    for (int64_t c = 0; c < C; ++c) {
        T* xc = x + c * H * W;
        for (int64_t ki = 0; ki < kh; ++ki)
            for (int64_t kj = 0; kj < kw; ++kj) {
                const T* row = cols + ((c * kh + ki) * kw + kj) * Hout * Wout;
                for (int64_t oh = 0; oh < Hout; ++oh) {
                    int64_t ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= H) continue;
                    const T* src = row + oh * Wout;
                    T* dst = xc + ih * W;
                    for (int64_t ow = 0; ow < Wout; ++ow) {
                        int64_t iw = ow * stride - pad + kj;
                        if (iw >= 0 && iw < W) dst[iw] += src[ow];
                    }
                }
            }
    }
}

}  // namespace detail

// 2D cross-correlation. x: [N,C,H,W], w: [O,I,kh,kw], bias: [O] (optional).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::optional<Tensor<T>>& bias,
                 int64_t stride, int64_t padding);

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int64_t stride, int64_t padding) {
    return conv2d(x, w, std::optional<Tensor<T>>{}, stride, padding);
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::optional<Tensor<T>>& bias,
                 int64_t stride, int64_t padding) {
    check<ShapeError>(x.rank() == 4, "conv2d: input must be NCHW, got ", shape_str(x.shape()));
    check<ShapeError>(w.rank() == 4, "conv2d: weight must be OIHW, got ", shape_str(w.shape()));
    check<ValueError>(stride >= 1, "conv2d: stride must be >= 1, got ", stride);
    check<ValueError>(padding >= 0, "conv2d: padding must be >= 0, got ", padding);
    int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t O = w.dim(0), I = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    check<ShapeError>(C == I, "conv2d: input channels (", C, ") != weight input channels (", I,
                      ")");
    check<ShapeError>(H + 2 * padding >= kh && W + 2 * padding >= kw,
                      "conv2d: kernel ", kh, "x", kw, " does not fit padded input ",
                      H + 2 * padding, "x", W + 2 * padding);
    if (bias) check<ShapeError>(bias->numel() == O, "conv2d: bias length ", bias->numel(),
                                " != output channels ", O);
    int64_t Hout = (H + 2 * padding - kh) / stride + 1;
    int64_t Wout = (W + 2 * padding - kw) / stride + 1;
    int64_t K = C * kh * kw, P = Hout * Wout;

    Tensor<T> out = Tensor<T>::zeros({N, O, Hout, Wout});
    {
        const T* xv = x.value().data();
        const T* wv = w.value().data();
        const T* bv = bias ? bias->value().data() : nullptr;
        T* ov = out.value().data();
        parallel_chunks(N, [&](int64_t nlo, int64_t nhi, int64_t) {
            std::vector<T> cols(size_t(K * P));
            for (int64_t n = nlo; n < nhi; ++n) {
                detail::im2col(xv + n * C * H * W, C, H, W, kh, kw, stride, padding, Hout, Wout,
                               cols.data());
                detail::gemm_accum(wv, cols.data(), ov + n * O * P, O, K, P);
                if (bv) {
                    T* on = ov + n * O * P;
                    for (int64_t o = 0; o < O; ++o)
                        for (int64_t p = 0; p < P; ++p) on[o * P + p] += bv[o];
                }
            }
        });
    }
    bool rec = bias ? tracked(x, w, *bias) : tracked(x, w);
    if (rec) {
        auto xd = x.ptr();
        auto wd = w.ptr();
        std::shared_ptr<TensorData<T>> bd = bias ? bias->ptr() : nullptr;
        auto od = out.ptr();
        Tape<T>::current()->record(od, [xd, wd, bd, od, N, C, H, W, O, kh, kw, stride, padding,
                                        Hout, Wout, K, P]() {
            const T* g = od->grad.data();
            bool gx = wants_grad(xd), gw = wants_grad(wd), gb = bd && wants_grad(bd);
            int64_t chunks = parallel_chunk_count(N);
            // weight/bias gradients are shared across samples: per-chunk
            // partials, reduced in chunk order
            std::vector<std::vector<T>> pw, pb;
            if (gw) pw.assign(size_t(chunks), std::vector<T>(wd->grad.size(), T(0)));
            if (gb) pb.assign(size_t(chunks), std::vector<T>(bd->grad.size(), T(0)));
            parallel_chunks(N, [&](int64_t nlo, int64_t nhi, int64_t chunk) {
                std::vector<T> cols(size_t(K * P));
                std::vector<T> dcols;
                if (gx) dcols.resize(size_t(K * P));
                for (int64_t n = nlo; n < nhi; ++n) {
                    const T* gn = g + n * O * P;
                    // cols are recomputed instead of saved to keep memory flat
                    if (gw || gx)
                        detail::im2col(xd->value.data() + n * C * H * W, C, H, W, kh, kw, stride,
                                       padding, Hout, Wout, cols.data());
                    if (gw)
                        detail::gemm_dA(gn, cols.data(), pw[size_t(chunk)].data(), O, K, P);
                    if (gb) {
                        for (int64_t o = 0; o < O; ++o) {
                            T acc = T(0);
                            for (int64_t p = 0; p < P; ++p) acc += gn[o * P + p];
                            pb[size_t(chunk)][size_t(o)] += acc;
                        }
                    }
                    if (gx) {
                        std::fill(dcols.begin(), dcols.end(), T(0));
                        detail::gemm_dB(wd->value.data(), gn, dcols.data(), O, K, P);
                        detail::col2im_add(dcols.data(), C, H, W, kh, kw, stride, padding, Hout,
                                           Wout, xd->grad.data() + n * C * H * W);
                    }
                }
            });
            for (auto& part : pw)
                for (size_t e = 0; e < part.size(); ++e) wd->grad[e] += part[e];
            for (auto& part : pb)
                for (size_t e = 0; e < part.size(); ++e) bd->grad[e] += part[e];
        });
    }
    return out;
}

// Transposed convolution. x: [N,C,H,W], w: [I=C, O, kh, kw].
// Output spatial extent: (H-1)*stride - 2*padding + kh.
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, int64_t stride,
                           int64_t padding) {
    check<ShapeError>(x.rank() == 4, "conv_transpose2d: input must be NCHW, got ",
                      shape_str(x.shape()));
    check<ShapeError>(w.rank() == 4, "conv_transpose2d: weight must be IOHW, got ",
                      shape_str(w.shape()));
    check<ValueError>(stride >= 1, "conv_transpose2d: stride must be >= 1, got ", stride);
    int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t I = w.dim(0), O = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    check<ShapeError>(C == I, "conv_transpose2d: input channels (", C,
                      ") != weight input channels (", I, ")");
    int64_t Hout = (H - 1) * stride - 2 * padding + kh;
    int64_t Wout = (W - 1) * stride - 2 * padding + kw;
    check<ShapeError>(Hout >= 1 && Wout >= 1, "conv_transpose2d: computed output extent ", Hout,
                      "x", Wout, " is not positive");
    int64_t K = O * kh * kw, P = H * W;

    Tensor<T> out = Tensor<T>::zeros({N, O, Hout, Wout});
    {
        const T* xv = x.value().data();
        const T* wv = w.value().data();  // [C][K] flat
        T* ov = out.value().data();
        parallel_chunks(N, [&](int64_t nlo, int64_t nhi, int64_t) {
            std::vector<T> cols(size_t(K * P));
            for (int64_t n = nlo; n < nhi; ++n) {
                std::fill(cols.begin(), cols.end(), T(0));
                // cols[k][p] = sum_c w[c][k] * x[c][p]
                detail::gemm_dB(wv, xv + n * C * P, cols.data(), C, K, P);
                detail::col2im_add(cols.data(), O, Hout, Wout, kh, kw, stride, padding, H, W,
                                   ov + n * O * Hout * Wout);
            }
        });
    }
    if (tracked(x, w)) {
        auto xd = x.ptr();
        auto wd = w.ptr();
        auto od = out.ptr();
        Tape<T>::current()->record(od, [xd, wd, od, N, C, H, W, O, kh, kw, stride, padding, Hout,
                                        Wout, K, P]() {
            const T* g = od->grad.data();
            bool gx = wants_grad(xd), gw = wants_grad(wd);
            int64_t chunks = parallel_chunk_count(N);
            std::vector<std::vector<T>> pw;
            if (gw) pw.assign(size_t(chunks), std::vector<T>(wd->grad.size(), T(0)));
            parallel_chunks(N, [&](int64_t nlo, int64_t nhi, int64_t chunk) {
                std::vector<T> gcols(size_t(K * P));
                for (int64_t n = nlo; n < nhi; ++n) {
                    // gcols[k][p] = grad sampled at the taps this cell wrote to
                    detail::im2col(g + n * O * Hout * Wout, O, Hout, Wout, kh, kw, stride,
                                   padding, H, W, gcols.data());
                    // dx[c][p] += sum_k w[c][k] * gcols[k][p]
                    if (gx)
                        detail::gemm_accum(wd->value.data(), gcols.data(),
                                           xd->grad.data() + n * C * P, C, K, P);
                    // dw[c][k] += sum_p x[c][p] * gcols[k][p]
                    if (gw)
                        detail::gemm_dA(xd->value.data() + n * C * P, gcols.data(),
                                        pw[size_t(chunk)].data(), C, K, P);
                }
            });
            for (auto& part : pw)
                for (size_t e = 0; e < part.size(); ++e) wd->grad[e] += part[e];
        });
    }
    return out;
}

// Batch normalization over N,H,W per channel. Training mode normalizes with
// batch statistics (biased variance) and updates running stats in place:
//   running <- (1 - momentum) * running + momentum * batch.
template <class T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                       T eps = T(1e-5), T momentum = T(0.1)) {
    check<ShapeError>(x.rank() == 4, "batch_norm2d: input must be NCHW, got ",
                      shape_str(x.shape()));
    int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    for (const Tensor<T>* t :
         std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var})
        check<ShapeError>(t->numel() == C, "batch_norm2d: parameter length ", t->numel(),
                          " != channel count ", C);
    int64_t HW = H * W;
    int64_t m = N * HW;
    Tensor<T> out = Tensor<T>::zeros(x.shape());

    auto xhat = std::make_shared<std::vector<T>>(size_t(x.numel()));
    auto inv_std = std::make_shared<std::vector<T>>(size_t(C));
    const T* xv = x.value().data();
    const T* gv = gamma.value().data();
    const T* bv = beta.value().data();
    T* ov = out.value().data();

    parallel_chunks(C, [&](int64_t clo, int64_t chi, int64_t) {
        for (int64_t c = clo; c < chi; ++c) {
            T mean, var;
            if (training) {
                T s = T(0);
                for (int64_t n = 0; n < N; ++n) {
                    const T* p = xv + (n * C + c) * HW;
                    for (int64_t i = 0; i < HW; ++i) s += p[i];
                }
                mean = s / T(m);
                T sv = T(0);
                for (int64_t n = 0; n < N; ++n) {
                    const T* p = xv + (n * C + c) * HW;
                    for (int64_t i = 0; i < HW; ++i) sv += (p[i] - mean) * (p[i] - mean);
                }
                var = sv / T(m);
                running_mean.value()[size_t(c)] =
                    (T(1) - momentum) * running_mean.value()[size_t(c)] + momentum * mean;
                running_var.value()[size_t(c)] =
                    (T(1) - momentum) * running_var.value()[size_t(c)] + momentum * var;
            } else {
                mean = running_mean.value()[size_t(c)];
                var = running_var.value()[size_t(c)];
            }
            T is = T(1) / std::sqrt(var + eps);
            (*inv_std)[size_t(c)] = is;
            for (int64_t n = 0; n < N; ++n) {
                const T* p = xv + (n * C + c) * HW;
                T* xh = xhat->data() + (n * C + c) * HW;
                T* po = ov + (n * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) {
                    xh[i] = (p[i] - mean) * is;
                    po[i] = gv[c] * xh[i] + bv[c];
                }
            }
        }
    });
    if (tracked(x, gamma, beta)) {
        auto xd = x.ptr();
        auto gd = gamma.ptr();
        auto bd = beta.ptr();
        auto od = out.ptr();
        Tape<T>::current()->record(od, [xd, gd, bd, od, xhat, inv_std, N, C, HW, m, training]() {
            const T* g = od->grad.data();
            parallel_chunks(C, [&](int64_t clo, int64_t chi, int64_t) {
                for (int64_t c = clo; c < chi; ++c) {
                    T sum_g = T(0), sum_g_xhat = T(0);
                    for (int64_t n = 0; n < N; ++n) {
                        const T* gr = g + (n * C + c) * HW;
                        const T* xh = xhat->data() + (n * C + c) * HW;
                        for (int64_t i = 0; i < HW; ++i) {
                            sum_g += gr[i];
                            sum_g_xhat += gr[i] * xh[i];
                        }
                    }
                    if (wants_grad(gd)) gd->grad[size_t(c)] += sum_g_xhat;
                    if (wants_grad(bd)) bd->grad[size_t(c)] += sum_g;
                    if (wants_grad(xd)) {
                        T gam = gd->value[size_t(c)];
                        T is = (*inv_std)[size_t(c)];
                        for (int64_t n = 0; n < N; ++n) {
                            const T* gr = g + (n * C + c) * HW;
                            const T* xh = xhat->data() + (n * C + c) * HW;
                            T* dx = xd->grad.data() + (n * C + c) * HW;
                            if (training) {
                                for (int64_t i = 0; i < HW; ++i)
                                    dx[i] += gam * is *
                                             (gr[i] - (sum_g + xh[i] * sum_g_xhat) / T(m));
                            } else {
                                for (int64_t i = 0; i < HW; ++i) dx[i] += gam * is * gr[i];
                            }
                        }
                    }
                }
            });
        });
    }
    return out;
}

// Windowed maximum. Backward routes the gradient to the first (row-major)
// maximal element of each window.
template <class T>
Tensor<T> max_pool2d(const Tensor<T>& x, int64_t k, int64_t stride, int64_t padding) {
    check<ShapeError>(x.rank() == 4, "max_pool2d: input must be NCHW, got ",
                      shape_str(x.shape()));
    check<ValueError>(k >= 1, "max_pool2d: kernel must be >= 1, got ", k);
    check<ValueError>(stride >= 1 && padding >= 0 && padding < k,
                      "max_pool2d: invalid stride/padding (", stride, ", ", padding, ")");
    int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t Hout = (H + 2 * padding - k) / stride + 1;
    int64_t Wout = (W + 2 * padding - k) / stride + 1;
    check<ShapeError>(Hout >= 1 && Wout >= 1, "max_pool2d: window does not fit input");

    Tensor<T> out = Tensor<T>::zeros({N, C, Hout, Wout});
    auto argmax = std::make_shared<std::vector<int64_t>>(size_t(N * C * Hout * Wout), -1);
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const T* xc = xv + (n * C + c) * H * W;
            for (int64_t oh = 0; oh < Hout; ++oh)
                for (int64_t ow = 0; ow < Wout; ++ow) {
                    T best = T(0);
                    int64_t best_idx = -1;
                    for (int64_t ki = 0; ki < k; ++ki) {
                        int64_t ih = oh * stride - padding + ki;
                        if (ih < 0 || ih >= H) continue;
                        for (int64_t kj = 0; kj < k; ++kj) {
                            int64_t iw = ow * stride - padding + kj;
                            if (iw < 0 || iw >= W) continue;
                            T v = xc[ih * W + iw];
                            if (best_idx < 0 || v > best) {
                                best = v;
                                best_idx = ih * W + iw;
                            }
                        }
                    }
                    int64_t oidx = ((n * C + c) * Hout + oh) * Wout + ow;
                    ov[oidx] = best_idx >= 0 ? best : T(0);
                    (*argmax)[size_t(oidx)] = best_idx;
                }
        }
    if (tracked(x)) {
        auto xd = x.ptr();
        auto od = out.ptr();
        Tape<T>::current()->record(od, [xd, od, argmax, N, C, H, W, Hout, Wout]() {
            if (!wants_grad(xd)) return;
            const T* g = od->grad.data();
            int64_t per = Hout * Wout;
            for (int64_t nc = 0; nc < N * C; ++nc) {
                T* dx = xd->grad.data() + nc * H * W;
                for (int64_t p = 0; p < per; ++p) {
                    int64_t src = (*argmax)[size_t(nc * per + p)];
                    if (src >= 0) dx[src] += g[nc * per + p];
                }
            }
        });
    }
    return out;
}

}  // namespace btk
