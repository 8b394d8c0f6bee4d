#pragma once

#include "btk/nn.hpp"

namespace btk {

// Retained attention maps from one forward pass (values only, no grad).
template <class T>
struct AttentionRecord {
    struct Map {
        int64_t batch = 0, heads = 0, rows = 0, cols = 0;
        std::vector<T> data;  // [batch][heads][rows][cols]

        T at(int64_t n, int64_t h, int64_t r, int64_t c) const {
            return data[size_t(((n * heads + h) * rows + r) * cols + c)];
        }
    };
    std::vector<Map> mhsa;     // one entry per MHSA block, in forward order
    std::vector<Map> encoder;  // one entry per encoder layer
    int64_t grid_h = 0, grid_w = 0;  // spatial grid the attention tokens cover
};

namespace detail {
template <class T>
void retain_attention(std::vector<typename AttentionRecord<T>::Map>& sink, const Tensor<T>& attn) {
    typename AttentionRecord<T>::Map m;
    m.batch = attn.dim(0);
    m.heads = attn.dim(1);
    m.rows = attn.dim(2);
    m.cols = attn.dim(3);
    m.data = attn.value();
    sink.push_back(std::move(m));
}
}  // namespace detail

// Position term of the attention logits. The height/width tables hold one
// learnable vector per relative offset, so the result depends only on the
// grid offset between the query and key cells:
//   out[b,h,p,p'] = q[b,h,p] . (table_h[di + H - 1] + table_w[dj + W - 1])
// with (di, dj) the offset from cell p to cell p'.
template <class T>
Tensor<T> relative_logits_2d(const Tensor<T>& q, const Tensor<T>& table_h,
                             const Tensor<T>& table_w, int64_t H, int64_t W) {
    check<ShapeError>(q.rank() == 4, "relative_logits_2d: q must be [B,heads,P,d], got ",
                      shape_str(q.shape()));
    int64_t B = q.dim(0), heads = q.dim(1), P = q.dim(2), d = q.dim(3);
    check<ShapeError>(P == H * W, "relative_logits_2d: grid mismatch, P=", P, " but H*W=", H * W);
    check<ShapeError>(table_h.rank() == 2 && table_h.dim(0) == 2 * H - 1 && table_h.dim(1) == d,
                      "relative_logits_2d: table_h must be [", 2 * H - 1, "x", d, "], got ",
                      shape_str(table_h.shape()));
    check<ShapeError>(table_w.rank() == 2 && table_w.dim(0) == 2 * W - 1 && table_w.dim(1) == d,
                      "relative_logits_2d: table_w must be [", 2 * W - 1, "x", d, "], got ",
                      shape_str(table_w.shape()));
    int64_t nh = 2 * H - 1, nw = 2 * W - 1;
    Tensor<T> out = Tensor<T>::zeros({B, heads, P, P});
    {
        const T* qv = q.value().data();
        const T* th = table_h.value().data();
        const T* tw = table_w.value().data();
        T* ov = out.value().data();
        parallel_chunks(B * heads, [&](int64_t lo, int64_t hi, int64_t) {
            std::vector<T> qh(size_t(nh), T(0));
            std::vector<T> qw(size_t(nw), T(0));
            for (int64_t bh = lo; bh < hi; ++bh)
                for (int64_t p = 0; p < P; ++p) {
                    const T* qp = qv + (bh * P + p) * d;
                    for (int64_t r = 0; r < nh; ++r) {
                        T acc = T(0);
                        for (int64_t e = 0; e < d; ++e) acc += qp[e] * th[r * d + e];
                        qh[size_t(r)] = acc;
                    }
                    for (int64_t r = 0; r < nw; ++r) {
                        T acc = T(0);
                        for (int64_t e = 0; e < d; ++e) acc += qp[e] * tw[r * d + e];
                        qw[size_t(r)] = acc;
                    }
                    int64_t i = p / W, j = p % W;
                    T* orow = ov + (bh * P + p) * P;
                    for (int64_t i2 = 0; i2 < H; ++i2) {
                        T hterm = qh[size_t(i2 - i + H - 1)];
                        for (int64_t j2 = 0; j2 < W; ++j2)
                            orow[i2 * W + j2] = hterm + qw[size_t(j2 - j + W - 1)];
                    }
                }
        });
    }
    if (tracked(q, table_h, table_w)) {
        auto qd = q.ptr();
        auto hd = table_h.ptr();
        auto wd = table_w.ptr();
        auto od = out.ptr();
        Tape<T>::current()->record(od, [qd, hd, wd, od, B, heads, P, d, H, W, nh, nw]() {
            const T* g = od->grad.data();
            const T* qv = qd->value.data();
            const T* th = hd->value.data();
            const T* tw = wd->value.data();
            bool gq = wants_grad(qd), gth = wants_grad(hd), gtw = wants_grad(wd);
            int64_t chunks = parallel_chunk_count(B * heads);
            // the offset tables are shared across all query rows
            std::vector<std::vector<T>> ph, pw;
            if (gth) ph.assign(size_t(chunks), std::vector<T>(hd->grad.size(), T(0)));
            if (gtw) pw.assign(size_t(chunks), std::vector<T>(wd->grad.size(), T(0)));
            parallel_chunks(B * heads, [&](int64_t lo, int64_t hi, int64_t chunk) {
                std::vector<T> gh(size_t(nh), T(0));
                std::vector<T> gw(size_t(nw), T(0));
                for (int64_t bh = lo; bh < hi; ++bh)
                    for (int64_t p = 0; p < P; ++p) {
                        std::fill(gh.begin(), gh.end(), T(0));
                        std::fill(gw.begin(), gw.end(), T(0));
                        const T* grow = g + (bh * P + p) * P;
                        int64_t i = p / W, j = p % W;
                        for (int64_t i2 = 0; i2 < H; ++i2)
                            for (int64_t j2 = 0; j2 < W; ++j2) {
                                T gv = grow[i2 * W + j2];
                                gh[size_t(i2 - i + H - 1)] += gv;
                                gw[size_t(j2 - j + W - 1)] += gv;
                            }
                        const T* qp = qv + (bh * P + p) * d;
                        if (gq) {
                            T* dq = qd->grad.data() + (bh * P + p) * d;
                            for (int64_t r = 0; r < nh; ++r) {
                                T gr = gh[size_t(r)];
                                if (gr == T(0)) continue;
                                for (int64_t e = 0; e < d; ++e) dq[e] += gr * th[r * d + e];
                            }
                            for (int64_t r = 0; r < nw; ++r) {
                                T gr = gw[size_t(r)];
                                if (gr == T(0)) continue;
                                for (int64_t e = 0; e < d; ++e) dq[e] += gr * tw[r * d + e];
                            }
                        }
                        if (gth) {
                            T* dst = ph[size_t(chunk)].data();
                            for (int64_t r = 0; r < nh; ++r) {
                                T gr = gh[size_t(r)];
                                if (gr == T(0)) continue;
                                for (int64_t e = 0; e < d; ++e) dst[r * d + e] += gr * qp[e];
                            }
                        }
                        if (gtw) {
                            T* dst = pw[size_t(chunk)].data();
                            for (int64_t r = 0; r < nw; ++r) {
                                T gr = gw[size_t(r)];
                                if (gr == T(0)) continue;
                                for (int64_t e = 0; e < d; ++e) dst[r * d + e] += gr * qp[e];
                            }
                        }
                    }
            });
            for (auto& part : ph)
                for (size_t e = 0; e < part.size(); ++e) hd->grad[e] += part[e];
            for (auto& part : pw)
                for (size_t e = 0; e < part.size(); ++e) wd->grad[e] += part[e];
        });
    }
    return out;
}

// Fused attention probabilities:
//   probs = softmax(scale * (q . kT + rel(q)), last axis)
// One recorded node instead of the matmul/rel/add/softmax chain, which
// keeps the P x P intermediates off the tape. The optional rel tables give
// the 2D relative-position term (grid H x W with P = H * W).
template <class T>
Tensor<T> attention_probs(const Tensor<T>& q, const Tensor<T>& kT, T logit_scale,
                          const Tensor<T>* table_h, const Tensor<T>* table_w, int64_t H,
                          int64_t W) {
    check<ShapeError>(q.rank() == 4 && kT.rank() == 4, "attention_probs: q must be [B,h,P,d], kT "
                      "[B,h,d,P]");
    int64_t B = q.dim(0), heads = q.dim(1), P = q.dim(2), d = q.dim(3);
    check<ShapeError>(kT.dim(0) == B && kT.dim(1) == heads && kT.dim(2) == d && kT.dim(3) == P,
                      "attention_probs: kT shape ", shape_str(kT.shape()), " does not match q ",
                      shape_str(q.shape()));
    bool rel = table_h != nullptr;
    if (rel) {
        check<ShapeError>(P == H * W, "attention_probs: grid mismatch, P=", P, " but H*W=",
                          H * W);
        check<ShapeError>(table_h->rank() == 2 && table_h->dim(0) == 2 * H - 1 &&
                              table_h->dim(1) == d && table_w->rank() == 2 &&
                              table_w->dim(0) == 2 * W - 1 && table_w->dim(1) == d,
                          "attention_probs: bad relative table shapes");
    }
    Tensor<T> out = Tensor<T>::zeros({B, heads, P, P});
    {
        const T* qv = q.value().data();
        const T* kv = kT.value().data();
        const T* th = rel ? table_h->value().data() : nullptr;
        const T* tw = rel ? table_w->value().data() : nullptr;
        T* ov = out.value().data();
        parallel_chunks(B * heads, [&](int64_t lo, int64_t hi, int64_t) {
            std::vector<T> logits(size_t(P * P), T(0));
            std::vector<T> qh(rel ? size_t(2 * H - 1) : 0, T(0));
            std::vector<T> qw(rel ? size_t(2 * W - 1) : 0, T(0));
            for (int64_t bh = lo; bh < hi; ++bh) {
                std::fill(logits.begin(), logits.end(), T(0));
                detail::gemm_accum(qv + bh * P * d, kv + bh * d * P, logits.data(), P, d, P);
                for (int64_t p = 0; p < P; ++p) {
                    T* row = logits.data() + p * P;
                    if (rel) {
                        const T* qp = qv + (bh * P + p) * d;
                        for (int64_t r = 0; r < 2 * H - 1; ++r) {
                            T acc = T(0);
                            for (int64_t e = 0; e < d; ++e) acc += qp[e] * th[r * d + e];
                            qh[size_t(r)] = acc;
                        }
                        for (int64_t r = 0; r < 2 * W - 1; ++r) {
                            T acc = T(0);
                            for (int64_t e = 0; e < d; ++e) acc += qp[e] * tw[r * d + e];
                            qw[size_t(r)] = acc;
                        }
                        int64_t i = p / W, j = p % W;
                        for (int64_t i2 = 0; i2 < H; ++i2) {
                            T hterm = qh[size_t(i2 - i + H - 1)];
                            for (int64_t j2 = 0; j2 < W; ++j2)
                                row[i2 * W + j2] += hterm + qw[size_t(j2 - j + W - 1)];
                        }
                    }
                    // scaled, stabilized softmax row
                    T m = row[0];
                    for (int64_t c = 1; c < P; ++c) m = std::max(m, row[c]);
                    T* orow = ov + (bh * P + p) * P;
                    T s = T(0);
                    for (int64_t c = 0; c < P; ++c) {
                        T e = detail::softmax_exp(logit_scale * (row[c] - m));
                        orow[c] = e;
                        s += e;
                    }
                    T inv = T(1) / s;
                    for (int64_t c = 0; c < P; ++c) orow[c] *= inv;
                }
            }
        });
    }
    bool track = rel ? tracked(q, kT, *table_h, *table_w) : tracked(q, kT);
    if (track) {
        auto qd = q.ptr();
        auto kd = kT.ptr();
        std::shared_ptr<TensorData<T>> hd = rel ? table_h->ptr() : nullptr;
        std::shared_ptr<TensorData<T>> wd = rel ? table_w->ptr() : nullptr;
        auto od = out.ptr();
        Tape<T>::current()->record(od, [qd, kd, hd, wd, od, B, heads, P, d, H, W, logit_scale,
                                        rel]() {
            const T* g = od->grad.data();
            const T* y = od->value.data();
            const T* qv = qd->value.data();
            const T* kv = kd->value.data();
            bool gq = wants_grad(qd), gk = wants_grad(kd);
            bool gth = hd && wants_grad(hd), gtw = wd && wants_grad(wd);
            int64_t chunks = parallel_chunk_count(B * heads);
            std::vector<std::vector<T>> ph, pw;
            if (gth) ph.assign(size_t(chunks), std::vector<T>(hd->grad.size(), T(0)));
            if (gtw) pw.assign(size_t(chunks), std::vector<T>(wd->grad.size(), T(0)));
            parallel_chunks(B * heads, [&](int64_t lo, int64_t hi, int64_t chunk) {
                std::vector<T> dlogits(size_t(P * P), T(0));
                std::vector<T> gh(rel ? size_t(2 * H - 1) : 0, T(0));
                std::vector<T> gw(rel ? size_t(2 * W - 1) : 0, T(0));
                for (int64_t bh = lo; bh < hi; ++bh) {
                    // softmax backward into the logits scratch
                    for (int64_t p = 0; p < P; ++p) {
                        const T* yr = y + (bh * P + p) * P;
                        const T* gr = g + (bh * P + p) * P;
                        T* dl = dlogits.data() + p * P;
                        T dot = T(0);
                        for (int64_t c = 0; c < P; ++c) dot += gr[c] * yr[c];
                        for (int64_t c = 0; c < P; ++c)
                            dl[c] = logit_scale * yr[c] * (gr[c] - dot);
                    }
                    // content term
                    if (gq)
                        detail::gemm_dA(dlogits.data(), kv + bh * d * P,
                                        qd->grad.data() + bh * P * d, P, d, P);
                    if (gk)
                        detail::gemm_dB(qv + bh * P * d, dlogits.data(),
                                        kd->grad.data() + bh * d * P, P, d, P);
                    // relative-position term
                    if (rel && (gq || gth || gtw)) {
                        const T* th = hd->value.data();
                        const T* tw = wd->value.data();
                        for (int64_t p = 0; p < P; ++p) {
                            std::fill(gh.begin(), gh.end(), T(0));
                            std::fill(gw.begin(), gw.end(), T(0));
                            const T* dl = dlogits.data() + p * P;
                            int64_t i = p / W, j = p % W;
                            for (int64_t i2 = 0; i2 < H; ++i2)
                                for (int64_t j2 = 0; j2 < W; ++j2) {
                                    T gv = dl[i2 * W + j2];
                                    gh[size_t(i2 - i + H - 1)] += gv;
                                    gw[size_t(j2 - j + W - 1)] += gv;
                                }
                            const T* qp = qv + (bh * P + p) * d;
                            if (gq) {
                                T* dq = qd->grad.data() + (bh * P + p) * d;
                                for (int64_t r = 0; r < 2 * H - 1; ++r) {
                                    T gr = gh[size_t(r)];
                                    if (gr == T(0)) continue;
                                    for (int64_t e = 0; e < d; ++e) dq[e] += gr * th[r * d + e];
                                }
                                for (int64_t r = 0; r < 2 * W - 1; ++r) {
                                    T gr = gw[size_t(r)];
                                    if (gr == T(0)) continue;
                                    for (int64_t e = 0; e < d; ++e) dq[e] += gr * tw[r * d + e];
                                }
                            }
                            if (gth) {
                                T* dst = ph[size_t(chunk)].data();
                                for (int64_t r = 0; r < 2 * H - 1; ++r) {
                                    T gr = gh[size_t(r)];
                                    if (gr == T(0)) continue;
                                    for (int64_t e = 0; e < d; ++e) dst[r * d + e] += gr * qp[e];
                                }
                            }
                            if (gtw) {
                                T* dst = pw[size_t(chunk)].data();
                                for (int64_t r = 0; r < 2 * W - 1; ++r) {
                                    T gr = gw[size_t(r)];
                                    if (gr == T(0)) continue;
                                    for (int64_t e = 0; e < d; ++e) dst[r * d + e] += gr * qp[e];
                                }
                            }
                        }
                    }
                }
            });
            for (auto& part : ph)
                for (size_t e = 0; e < part.size(); ++e) hd->grad[e] += part[e];
            for (auto& part : pw)
                for (size_t e = 0; e < part.size(); ++e) wd->grad[e] += part[e];
        });
    }
    return out;
}

// All-to-all self-attention over a 2D feature map (the bottleneck MHSA).
// q, k, v come from 1x1 convolutions; both the content and the position
// logits are scaled by 1/sqrt(d_head). No output projection: the following
// 1x1 convolution of the enclosing block plays that role.
template <class T>
struct Mhsa2d {
    Conv2dLayer<T> q_proj, k_proj, v_proj;
    Tensor<T> rel_h, rel_w;  // [(2H-1) x d_head], [(2W-1) x d_head]
    int64_t heads = 1, grid_h = 0, grid_w = 0;

    Mhsa2d() = default;
    Mhsa2d(int64_t channels, int64_t heads_, int64_t H, int64_t W, Rng& rng)
        : q_proj(channels, channels, 1, 1, 0, false, rng),
          k_proj(channels, channels, 1, 1, 0, false, rng),
          v_proj(channels, channels, 1, 1, 0, false, rng),
          heads(heads_),
          grid_h(H),
          grid_w(W) {
        check<ValueError>(channels % heads_ == 0, "mhsa2d: channels ", channels,
                          " not divisible by heads ", heads_);
        int64_t d_head = channels / heads_;
        T std_ = T(1.0 / std::sqrt(double(d_head)));
        rel_h = Tensor<T>::randn({2 * H - 1, d_head}, rng, std_);
        rel_h.set_requires_grad(true);
        rel_w = Tensor<T>::randn({2 * W - 1, d_head}, rng, std_);
        rel_w.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x, AttentionRecord<T>* rec) const {
        int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        check<ShapeError>(H == grid_h && W == grid_w, "mhsa2d: input grid ", H, "x", W,
                          " != configured grid ", grid_h, "x", grid_w);
        check<ShapeError>(C % heads == 0, "mhsa2d: channels ", C, " % heads ", heads, " != 0");
        int64_t d = C / heads, P = H * W;
        Tensor<T> q = permute(reshape(q_proj.forward(x), {N, heads, d, P}), {0, 1, 3, 2});
        Tensor<T> kT = reshape(k_proj.forward(x), {N, heads, d, P});
        Tensor<T> v = permute(reshape(v_proj.forward(x), {N, heads, d, P}), {0, 1, 3, 2});
        Tensor<T> attn =
            attention_probs(q, kT, T(1.0 / std::sqrt(double(d))), &rel_h, &rel_w, H, W);
        if (rec) detail::retain_attention<T>(rec->mhsa, attn);
        Tensor<T> ctx = matmul(attn, v);  // [N, heads, P, d]
        return reshape(permute(ctx, {0, 1, 3, 2}), {N, C, H, W});
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        q_proj.collect(prefix + ".q", out);
        k_proj.collect(prefix + ".k", out);
        v_proj.collect(prefix + ".v", out);
        out.add(prefix + ".rel_h", rel_h);
        out.add(prefix + ".rel_w", rel_w);
    }
};

enum class BlockKind { Conv, Mhsa };

struct BlockGroupSpec {
    BlockKind kind = BlockKind::Conv;
    int64_t width = 64;     // pre-expansion channel count
    int64_t n_blocks = 3;
    int64_t stride = 1;     // applied in the first block of the group
    int64_t heads = 4;      // MHSA groups only
};

// ResNet bottleneck block, optionally with the 3x3 convolution replaced by
// 2D MHSA. Layout: 1x1 -> BN/ReLU -> (3x3 | MHSA) -> BN/ReLU -> 1x1 -> BN,
// residual added before the final ReLU. Expansion factor is 4.
template <class T>
struct BottleneckBlock {
    static constexpr int64_t kExpansion = 4;

    bool use_mhsa = false;
    Conv2dLayer<T> conv1, conv3;
    std::optional<Conv2dLayer<T>> conv2;
    std::optional<Mhsa2d<T>> mhsa;
    BatchNorm2dLayer<T> bn1, bn2, bn3;
    std::optional<Conv2dLayer<T>> proj;
    std::optional<BatchNorm2dLayer<T>> proj_bn;

    BottleneckBlock() = default;
    // grid_h/grid_w: spatial size *after* this block's stride (MHSA grid).
    BottleneckBlock(int64_t in_ch, int64_t width, int64_t stride, BlockKind kind, int64_t heads,
                    int64_t grid_h, int64_t grid_w, Rng& rng)
        : use_mhsa(kind == BlockKind::Mhsa),
          conv1(in_ch, width, 1, 1, 0, false, rng),
          conv3(width, width * kExpansion, 1, 1, 0, false, rng),
          bn1(width),
          bn2(width),
          bn3(width * kExpansion) {
        if (use_mhsa) {
            check<ValueError>(stride == 1, "mhsa block: stride must be 1, got ", stride);
            mhsa.emplace(width, heads, grid_h, grid_w, rng);
        } else {
            conv2.emplace(width, width, 3, stride, 1, false, rng);
        }
        if (stride != 1 || in_ch != width * kExpansion) {
            proj.emplace(in_ch, width * kExpansion, 1, stride, 0, false, rng);
            proj_bn.emplace(width * kExpansion);
        }
    }

    int64_t out_channels() const { return conv3.w.dim(0); }

    Tensor<T> forward(const Tensor<T>& x, bool training, AttentionRecord<T>* rec) {
        Tensor<T> h = relu(bn1.forward(conv1.forward(x), training));
        h = use_mhsa ? mhsa->forward(h, rec) : conv2->forward(h);
        h = relu(bn2.forward(h, training));
        h = bn3.forward(conv3.forward(h), training);
        Tensor<T> r = proj ? proj_bn->forward(proj->forward(x), training) : x;
        return relu(add(h, r));
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        conv1.collect(prefix + ".conv1", out);
        bn1.collect(prefix + ".bn1", out);
        if (use_mhsa)
            mhsa->collect(prefix + ".mhsa", out);
        else
            conv2->collect(prefix + ".conv2", out);
        bn2.collect(prefix + ".bn2", out);
        conv3.collect(prefix + ".conv3", out);
        bn3.collect(prefix + ".bn3", out);
        if (proj) {
            proj->collect(prefix + ".proj", out);
            proj_bn->collect(prefix + ".proj_bn", out);
        }
    }

    void collect_buffers(const std::string& prefix, ParamList<T>& out) const {
        bn1.collect_buffers(prefix + ".bn1", out);
        bn2.collect_buffers(prefix + ".bn2", out);
        bn3.collect_buffers(prefix + ".bn3", out);
        if (proj_bn) proj_bn->collect_buffers(prefix + ".proj_bn", out);
    }
};

template <class T>
struct BlockGroup {
    std::vector<BottleneckBlock<T>> blocks;
    int64_t out_channels = 0;

    BlockGroup() = default;
    BlockGroup(int64_t in_ch, const BlockGroupSpec& spec, int64_t grid_h, int64_t grid_w,
               Rng& rng) {
        int64_t ch = in_ch;
        for (int64_t b = 0; b < spec.n_blocks; ++b) {
            int64_t stride = b == 0 ? spec.stride : 1;
            blocks.emplace_back(ch, spec.width, stride, spec.kind, spec.heads, grid_h, grid_w,
                                rng);
            ch = spec.width * BottleneckBlock<T>::kExpansion;
        }
        out_channels = ch;
    }

    Tensor<T> forward(Tensor<T> x, bool training, AttentionRecord<T>* rec) {
        for (auto& b : blocks) x = b.forward(x, training, rec);
        return x;
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect(prefix + ".block" + std::to_string(i), out);
    }
    void collect_buffers(const std::string& prefix, ParamList<T>& out) const {
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect_buffers(prefix + ".block" + std::to_string(i), out);
    }
};

// Stem + bottleneck block groups. The stem is a 7x7 stride-2 convolution
// (widths[0] maps, padding 3) + BN + ReLU + 3x3 stride-2 max pool, so the
// grid entering group 0 is input/4. Only the group with stride 2 (group 1
// by convention) downsamples further.
template <class T>
struct Backbone {
    Conv2dLayer<T> stem_conv;
    BatchNorm2dLayer<T> stem_bn;
    std::vector<BlockGroup<T>> groups;
    int64_t in_h = 0, in_w = 0;
    int64_t out_channels = 0, out_h = 0, out_w = 0;

    Backbone() = default;
    Backbone(int64_t in_h_, int64_t in_w_, const std::vector<BlockGroupSpec>& specs, Rng& rng)
        : stem_conv(3, specs.at(0).width, 7, 2, 3, false, rng),
          stem_bn(specs.at(0).width),
          in_h(in_h_),
          in_w(in_w_) {
        int64_t h = in_h_ / 4, w = in_w_ / 4;
        int64_t ch = specs[0].width;
        for (const auto& spec : specs) {
            h /= spec.stride;
            w /= spec.stride;
            groups.emplace_back(ch, spec, h, w, rng);
            ch = groups.back().out_channels;
        }
        out_channels = ch;
        out_h = h;
        out_w = w;
    }

    Tensor<T> stem_forward(const Tensor<T>& images, bool training) {
        check<ShapeError>(images.rank() == 4 && images.dim(1) == 3,
                          "stem: input must be Nx3xHxW, got ", shape_str(images.shape()));
        Tensor<T> x = relu(stem_bn.forward(stem_conv.forward(images), training));
        return max_pool2d(x, 3, 2, 1);
    }

    Tensor<T> forward(const Tensor<T>& images, bool training, AttentionRecord<T>* rec) {
        Tensor<T> x = stem_forward(images, training);
        for (auto& g : groups) x = g.forward(x, training, rec);
        return x;
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        stem_conv.collect(prefix + ".stem.conv", out);
        stem_bn.collect(prefix + ".stem.bn", out);
        for (size_t i = 0; i < groups.size(); ++i)
            groups[i].collect(prefix + ".group" + std::to_string(i), out);
    }
    void collect_buffers(const std::string& prefix, ParamList<T>& out) const {
        stem_bn.collect_buffers(prefix + ".stem.bn", out);
        for (size_t i = 0; i < groups.size(); ++i)
            groups[i].collect_buffers(prefix + ".group" + std::to_string(i), out);
    }
};

}  // namespace btk
