#pragma once

#include "btk/checkpoint.hpp"
#include "btk/optimizer.hpp"

namespace btk {

struct DinoConfig {
    int64_t prototypes = 256;  // K
    int64_t bottleneck = 64;
    int64_t hidden = 256;
    double tau_student = 0.1;
    double tau_teacher = 0.04;
    double ema_momentum = 0.996;
    double center_momentum = 0.9;
    bool centering = true;
    bool include_encoder = false;  // pretrain the purple-rectangle scope too
};

struct ViewAugmentConfig {
    double min_scale = 0.4, max_scale = 1.0;  // random-resized-crop area range
    double flip_prob = 0.5;
    double jitter = 0.4;  // brightness/contrast strength
    bool identity = false;
};

// One augmented view of a [3,H,W] image: random resized crop, horizontal
// flip, brightness/contrast jitter, all driven by `rng`.
template <class T>
Tensor<T> augment_view(const Tensor<T>& image, Rng& rng, const ViewAugmentConfig& cfg) {
    check<ShapeError>(image.rank() == 3 && image.dim(0) == 3, "augment_view: expected [3,H,W]");
    if (cfg.identity) return Tensor<T>::from(image.shape(), image.value());
    int64_t H = image.dim(1), W = image.dim(2);
    double area = rng.uniform(cfg.min_scale, cfg.max_scale);
    double side = std::sqrt(area);
    int64_t ch = std::max<int64_t>(1, int64_t(std::lround(double(H) * side)));
    int64_t cw = std::max<int64_t>(1, int64_t(std::lround(double(W) * side)));
    ch = std::min(ch, H);
    cw = std::min(cw, W);
    int64_t top = rng.uniform_int(H - ch + 1);
    int64_t left = rng.uniform_int(W - cw + 1);
    bool flip = rng.bernoulli(cfg.flip_prob);
    double brightness = rng.uniform(-cfg.jitter, cfg.jitter);
    double contrast = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);

    Tensor<T> out = Tensor<T>::zeros(image.shape());
    const T* src = image.value().data();
    T* dst = out.value().data();
    double mean = 0.0;
    // bilinear resize of the crop back to H x W
    for (int64_t c = 0; c < 3; ++c) {
        const T* sc = src + c * H * W;
        T* dc = dst + c * H * W;
        for (int64_t y = 0; y < H; ++y) {
            double sy = double(top) + (ch > 1 ? double(y) * double(ch - 1) / double(H - 1) : 0.0);
            int64_t y0 = int64_t(sy);
            double fy = sy - double(y0);
            int64_t y1 = std::min(y0 + 1, H - 1);
            for (int64_t x = 0; x < W; ++x) {
                int64_t xe = flip ? W - 1 - x : x;
                double sx =
                    double(left) + (cw > 1 ? double(xe) * double(cw - 1) / double(W - 1) : 0.0);
                int64_t x0 = int64_t(sx);
                double fx = sx - double(x0);
                int64_t x1 = std::min(x0 + 1, W - 1);
                double v = (1 - fy) * ((1 - fx) * double(sc[y0 * W + x0]) +
                                       fx * double(sc[y0 * W + x1])) +
                           fy * ((1 - fx) * double(sc[y1 * W + x0]) +
                                 fx * double(sc[y1 * W + x1]));
                dc[y * W + x] = T(v);
                mean += v;
            }
        }
    }
    mean /= double(3 * H * W);
    for (int64_t i = 0; i < 3 * H * W; ++i) {
        double v = (double(dst[i]) - mean) * contrast + mean + brightness;
        dst[i] = T(std::min(1.0, std::max(0.0, v)));
    }
    return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> augment_views(const Tensor<T>& image, Rng& rng,
                                              const ViewAugmentConfig& cfg) {
    Tensor<T> a = augment_view(image, rng, cfg);
    Tensor<T> b = augment_view(image, rng, cfg);
    return {a, b};
}

// Projection head: 3-layer MLP to a bottleneck, L2 normalization, then a
// weight-normalized prototype layer. Output length is cfg.prototypes for
// any input.
template <class T>
struct DinoHead {
    LinearLayer<T> fc1, fc2, fc3;
    Tensor<T> prototypes;  // [K x bottleneck], rows normalized on use

    DinoHead() = default;
    DinoHead(int64_t in_dim, const DinoConfig& cfg, Rng& rng)
        : fc1(in_dim, cfg.hidden, rng),
          fc2(cfg.hidden, cfg.hidden, rng),
          fc3(cfg.hidden, cfg.bottleneck, rng) {
        prototypes = Tensor<T>::randn({cfg.prototypes, cfg.bottleneck}, rng,
                                      T(1.0 / std::sqrt(double(cfg.bottleneck))));
        prototypes.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> h = gelu(fc1.forward(x));
        h = gelu(fc2.forward(h));
        Tensor<T> z = fc3.forward(h);
        Tensor<T> zn =
            mul(z, rsqrt(add_scalar(sum_axis(mul(z, z), 1, true), T(1e-12))));
        Tensor<T> pn = mul(prototypes,
                           rsqrt(add_scalar(sum_axis(mul(prototypes, prototypes), 1, true),
                                            T(1e-12))));
        return matmul(zn, permute(pn, {1, 0}));
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        fc1.collect(prefix + ".fc1", out);
        fc2.collect(prefix + ".fc2", out);
        fc3.collect(prefix + ".fc3", out);
        out.add(prefix + ".prototypes", prototypes);
    }
};

// Backbone trunk + projection head used by both teacher and student. The
// trunk reuses the pose model's module names so emitted checkpoints load
// directly as pretrained init.
template <class T>
struct DinoNet {
    ModelSpec spec;
    DinoConfig cfg;
    Backbone<T> trunk;
    Conv2dLayer<T> proj;           // only active when include_encoder
    TransformerEncoder<T> encoder; // "
    DinoHead<T> head;

    DinoNet() = default;
    DinoNet(const ModelSpec& spec_, const DinoConfig& cfg_, uint64_t seed)
        : spec(spec_), cfg(cfg_) {
        Rng rng(seed);
        trunk = Backbone<T>(spec.input_h, spec.input_w, spec.group_specs(), rng);
        EncoderConfig ec = spec.encoder;
        ec.seq_len = spec.grid_h() * spec.grid_w();
        proj = Conv2dLayer<T>(trunk.out_channels, ec.d_model, 1, 1, 0, true, rng);
        encoder = TransformerEncoder<T>(ec, rng);
        int64_t feat_dim = cfg.include_encoder ? ec.d_model : trunk.out_channels;
        head = DinoHead<T>(feat_dim, cfg, rng);
    }

    // Pooled feature: global average over space (or over tokens when the
    // encoder is in scope).
    Tensor<T> features(const Tensor<T>& images, bool training) {
        Tensor<T> x = trunk.forward(images, training, nullptr);
        if (cfg.include_encoder) {
            Tensor<T> seq = project_and_flatten(x, proj);
            seq = encoder.forward(seq, nullptr);
            return scale(sum_axis(seq, 1), T(1) / T(seq.dim(1)));
        }
        int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
        return scale(sum_axis(reshape(x, {N, C, HW}), 2), T(1) / T(HW));
    }

    Tensor<T> forward(const Tensor<T>& images, bool training) {
        return head.forward(features(images, training));
    }

    // Tensors emitted in the pretraining checkpoint (loadable by the pose
    // model as init).
    ParamList<T> trunk_tensors() const {
        ParamList<T> out;
        trunk.collect("backbone", out);
        if (cfg.include_encoder) {
            proj.collect("proj", out);
            encoder.collect("encoder", out);
        }
        trunk.collect_buffers("backbone", out);
        return out;
    }

    // Learnable parameters only (what the optimizer owns).
    ParamList<T> trainable_tensors() const {
        ParamList<T> out;
        trunk.collect("backbone", out);
        if (cfg.include_encoder) {
            proj.collect("proj", out);
            encoder.collect("encoder", out);
        }
        head.collect("dino_head", out);
        return out;
    }

    // Everything the EMA tracks: parameters plus BN running statistics.
    ParamList<T> all_tensors() const {
        ParamList<T> out = trunk_tensors();
        head.collect("dino_head", out);
        return out;
    }
};

// Cross-entropy between the centered, sharpened teacher distribution and
// the student distribution. Gradient flows into the student side only (the
// teacher logits enter as constants).
template <class T>
Tensor<T> dino_loss(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits,
                    const Tensor<T>& center, T tau_student, T tau_teacher) {
    check<ShapeError>(student_logits.rank() == 2 && teacher_logits.rank() == 2,
                      "dino_loss: logits must be [B,K]");
    check<ShapeError>(student_logits.shape() == teacher_logits.shape(),
                      "dino_loss: student ", shape_str(student_logits.shape()), " != teacher ",
                      shape_str(teacher_logits.shape()));
    int64_t B = student_logits.dim(0);
    Tensor<T> teacher_probs;
    {
        NoGradScope<T> ng;
        teacher_probs = softmax(scale(sub(teacher_logits, center), T(1) / tau_teacher), 1);
    }
    Tensor<T> ss = scale(student_logits, T(1) / tau_student);
    Tensor<T> log_ps = sub(ss, reshape(logsumexp(ss, 1), {B, 1}));
    return scale(sum_all(mul(teacher_probs, log_ps)), T(-1) / T(B));
}

// Teacher/student pair with center state.
template <class T>
struct Dino {
    DinoConfig cfg;
    DinoNet<T> student, teacher;
    Tensor<T> center;

    Dino() = default;
    Dino(const ModelSpec& spec, const DinoConfig& cfg_, uint64_t seed)
        : cfg(cfg_), student(spec, cfg_, seed), teacher(spec, cfg_, seed) {
        center = Tensor<T>::zeros({cfg.prototypes});
    }

    // theta_t <- m * theta_t + (1 - m) * theta_s, elementwise, both the
    // learnable parameters and the BN running statistics.
    void ema_update(T m) {
        ParamList<T> sp = student.all_tensors();
        ParamList<T> tp = teacher.all_tensors();
        check<ShapeError>(sp.items.size() == tp.items.size(), "ema_update: tensor count drift");
        for (size_t i = 0; i < sp.items.size(); ++i) {
            auto& s = sp.items[i].second;
            auto& t = tp.items[i].second;
            check<ShapeError>(s.shape() == t.shape(), "ema_update: shape drift at '",
                              sp.items[i].first, "'");
            T* tv = t.value().data();
            const T* sv = s.value().data();
            for (int64_t e = 0; e < t.numel(); ++e) tv[e] = m * tv[e] + (T(1) - m) * sv[e];
        }
    }

    // c <- momentum * c + (1 - momentum) * batch_mean(teacher outputs)
    void center_update(const Tensor<T>& teacher_batch_logits, T momentum) {
        check<ShapeError>(teacher_batch_logits.rank() == 2 &&
                              teacher_batch_logits.dim(1) == cfg.prototypes,
                          "center_update: expected [B,K]");
        int64_t B = teacher_batch_logits.dim(0), K = cfg.prototypes;
        const T* v = teacher_batch_logits.value().data();
        for (int64_t k = 0; k < K; ++k) {
            T mean = T(0);
            for (int64_t b = 0; b < B; ++b) mean += v[b * K + k];
            mean /= T(B);
            center.value()[size_t(k)] =
                momentum * center.value()[size_t(k)] + (T(1) - momentum) * mean;
        }
    }
};

// Mean over dimensions of the per-dimension standard deviation across the
// batch; the collapse signal tracked during pretraining.
template <class T>
double batch_feature_std(const std::vector<T>& rows, int64_t B, int64_t K) {
    double acc = 0.0;
    for (int64_t k = 0; k < K; ++k) {
        double mean = 0.0;
        for (int64_t b = 0; b < B; ++b) mean += double(rows[size_t(b * K + k)]);
        mean /= double(B);
        double var = 0.0;
        for (int64_t b = 0; b < B; ++b) {
            double d = double(rows[size_t(b * K + k)]) - mean;
            var += d * d;
        }
        acc += std::sqrt(var / double(B));
    }
    return acc / double(K);
}

struct PretrainOptions {
    int64_t steps = 500;
    int64_t batch_size = 16;
    double lr = 1e-3;
    uint64_t seed = 0;
    ViewAugmentConfig augment;
};

template <class T>
struct PretrainTrace {
    std::vector<double> loss;
    std::vector<double> teacher_std;  // post-softmax target spread per step
};

// The self-distillation loop: augment two views, student forward on both,
// teacher forward on both (no grad), symmetric cross-entropy on the crossed
// pairs, student Adam step, teacher EMA, center update.
template <class T>
PretrainTrace<T> dino_pretrain(Dino<T>& dino, const std::vector<Tensor<T>>& images,
                               const PretrainOptions& opts,
                               const std::function<void(int64_t, double, double)>& on_step = {}) {
    check<ValueError>(!images.empty(), "dino_pretrain: dataset is empty");
    Adam<T> opt(dino.student.trainable_tensors(), T(0.9), T(0.99), T(0));
    Rng rng(opts.seed ^ 0x5eed5eedull);
    PretrainTrace<T> trace;
    int64_t H = dino.student.spec.input_h, W = dino.student.spec.input_w;
    int64_t K = dino.cfg.prototypes;

    for (int64_t step = 0; step < opts.steps; ++step) {
        int64_t B = opts.batch_size;
        Tensor<T> va = Tensor<T>::zeros({B, 3, H, W});
        Tensor<T> vb = Tensor<T>::zeros({B, 3, H, W});
        for (int64_t i = 0; i < B; ++i) {
            const Tensor<T>& img = images[size_t(rng.uniform_int(int64_t(images.size())))];
            auto [a, b] = augment_views(img, rng, opts.augment);
            std::copy(a.value().begin(), a.value().end(), va.value().begin() + i * 3 * H * W);
            std::copy(b.value().begin(), b.value().end(), vb.value().begin() + i * 3 * H * W);
        }
        Tensor<T> ta, tb;
        {
            NoGradScope<T> ng;
            ta = dino.teacher.forward(va, true);
            tb = dino.teacher.forward(vb, true);
        }
        Tape<T> tape;
        T loss_value;
        {
            TapeScope<T> scope(tape);
            Tensor<T> sa = dino.student.forward(va, true);
            Tensor<T> sb = dino.student.forward(vb, true);
            Tensor<T> effective_center =
                dino.cfg.centering ? dino.center : Tensor<T>::zeros({K});
            Tensor<T> loss = scale(
                add(dino_loss(sb, ta, effective_center, T(dino.cfg.tau_student),
                              T(dino.cfg.tau_teacher)),
                    dino_loss(sa, tb, effective_center, T(dino.cfg.tau_student),
                              T(dino.cfg.tau_teacher))),
                T(0.5));
            loss_value = loss.item();
            check<ValueError>(std::isfinite(double(loss_value)),
                              "dino_pretrain: non-finite loss at step ", step);
            tape.backward(loss);
        }
        opt.step(T(opts.lr));
        opt.zero_grad();
        dino.ema_update(T(dino.cfg.ema_momentum));
        // center tracks the raw teacher logits over both views
        Tensor<T> t_all = Tensor<T>::zeros({2 * opts.batch_size, K});
        std::copy(ta.value().begin(), ta.value().end(), t_all.value().begin());
        std::copy(tb.value().begin(), tb.value().end(),
                  t_all.value().begin() + opts.batch_size * K);
        dino.center_update(t_all, T(dino.cfg.center_momentum));

        // collapse signal: spread of the teacher's target distributions
        Tensor<T> t_probs;
        {
            NoGradScope<T> ng;
            Tensor<T> effective_center =
                dino.cfg.centering ? dino.center : Tensor<T>::zeros({K});
            t_probs = softmax(
                scale(sub(t_all, effective_center), T(1.0 / dino.cfg.tau_teacher)), 1);
        }
        double tstd = batch_feature_std(t_probs.value(), 2 * opts.batch_size, K);
        trace.loss.push_back(double(loss_value));
        trace.teacher_std.push_back(tstd);
        if (on_step) on_step(step, double(loss_value), tstd);
    }
    return trace;
}

// Emits the student trunk as a backbone-only checkpoint.
template <class T>
void save_pretrain_checkpoint(const Dino<T>& dino, int64_t step, const std::string& path) {
    save_tensors(path, dino.student.spec.to_string(), uint64_t(step), kFlagBackboneOnly,
                 dino.student.trunk_tensors());
}

}  // namespace btk
