#pragma once

#include "btk/checkpoint.hpp"
#include "btk/eval.hpp"
#include "btk/losses.hpp"
#include "btk/optimizer.hpp"
#include "btk/synth.hpp"

namespace btk {

enum class LossKind { L2, Sinkhorn };

struct TrainOptions {
    int64_t steps = 300;
    int64_t batch_size = 16;
    double base_lr = 1e-3;
    std::vector<int64_t> lr_epoch_boundaries = {100, 150, 200, 220};
    double lr_factor = 0.25;
    LossKind loss = LossKind::L2;
    SinkhornParams<float> sinkhorn;
    double beta1 = 0.9, beta2 = 0.99, weight_decay = 0.0;
    uint64_t seed = 0;
    bool augment = false;
    float target_sigma = 2.0f;
    // called after each step with (step, loss, lr); may throw to stop
    std::function<void(int64_t, double, double)> on_step;
};

struct TrainTrace {
    std::vector<double> loss;
    std::vector<double> lr;
};

// Builds [B,3,H,W] images, [B,K,h,w] targets and the visibility mask for the
// given sample indices (optionally augmenting each draw).
inline void make_batch(const std::vector<PoseSample>& samples,
                       const std::vector<int64_t>& indices, bool augment_samples, Rng& rng,
                       float sigma, Tensor<float>& images, Tensor<float>& targets,
                       std::vector<uint8_t>& visible) {
    int64_t B = int64_t(indices.size());
    int64_t H = samples.at(0).image.dim(1), W = samples.at(0).image.dim(2);
    int64_t mh = H / 4, mw = W / 4;
    images = Tensor<float>::zeros({B, 3, H, W});
    targets = Tensor<float>::zeros({B, kNumKeypoints, mh, mw});
    visible.assign(size_t(B * kNumKeypoints), 0);
    for (int64_t i = 0; i < B; ++i) {
        const PoseSample& base = samples[size_t(indices[size_t(i)])];
        PoseSample s = augment_samples ? augment(base, rng.next_u64()) : base;
        TargetHeatmaps t = make_target_heatmaps(s, sigma);
        std::copy(s.image.value().begin(), s.image.value().end(),
                  images.value().begin() + i * 3 * H * W);
        std::copy(t.maps.value().begin(), t.maps.value().end(),
                  targets.value().begin() + i * kNumKeypoints * mh * mw);
        for (int k = 0; k < kNumKeypoints; ++k)
            visible[size_t(i * kNumKeypoints + k)] = t.visible[size_t(k)];
    }
}

// Pose training loop: Adam with epoch-boundary step decay, L2 or Sinkhorn
// heatmap loss. Throws ValueError on a non-finite loss.
inline TrainTrace train_pose_model(PoseModel<float>& model,
                                   const std::vector<PoseSample>& samples,
                                   const TrainOptions& opts) {
    check<ValueError>(!samples.empty(), "train: dataset is empty");
    Adam<float> opt(model.parameters(), float(opts.beta1), float(opts.beta2),
                    float(opts.weight_decay));
    Rng rng(opts.seed ^ 0x7261696eull);
    Tensor<float> cost;
    if (opts.loss == LossKind::Sinkhorn)
        cost = sinkhorn_cost_grid<float>(model.spec.heatmap_h(), model.spec.heatmap_w());

    TrainTrace trace;
    Tensor<float> images, targets;
    std::vector<uint8_t> visible;
    ForwardOptions fwd;
    fwd.training = true;
    for (int64_t step = 0; step < opts.steps; ++step) {
        std::vector<int64_t> indices(size_t(opts.batch_size));
        for (auto& ix : indices) ix = rng.uniform_int(int64_t(samples.size()));
        make_batch(samples, indices, opts.augment, rng, opts.target_sigma, images, targets,
                   visible);
        double epoch =
            double(step) * double(opts.batch_size) / double(samples.size());
        double lr = scheduled_lr(opts.base_lr, opts.lr_factor, opts.lr_epoch_boundaries, epoch);

        Tape<float> tape;
        double loss_value;
        {
            TapeScope<float> scope(tape);
            ForwardResult<float> out = model.forward(images, fwd);
            Tensor<float> loss =
                opts.loss == LossKind::L2
                    ? heatmap_mse(out.heatmaps, targets, visible)
                    : sinkhorn_loss(out.heatmaps, targets, visible, opts.sinkhorn, cost);
            loss_value = double(loss.item());
            check<ValueError>(std::isfinite(loss_value), "train: non-finite loss at step ", step);
            tape.backward(loss);
        }
        opt.step(float(lr));
        opt.zero_grad();
        ++model.train_step;
        trace.loss.push_back(loss_value);
        trace.lr.push_back(lr);
        if (opts.on_step) opts.on_step(step, loss_value, lr);
    }
    return trace;
}

struct EvalReport {
    ApArResult apar;
    std::array<double, kNumKeypoints> mean_pixel_error{};  // over labeled gt joints
    std::vector<PredictionRecord> predictions;
};

// Eval-mode forward over the whole set, heatmap decode, OKS AP/AR.
inline EvalReport evaluate_pose_model(PoseModel<float>& model,
                                      const std::vector<PoseSample>& samples,
                                      int64_t batch_size = 8) {
    check<ValueError>(!samples.empty(), "evaluate: empty eval split");
    EvalReport report;
    std::vector<GroundTruthRecord> gts;
    std::array<int64_t, kNumKeypoints> err_counts{};
    ForwardOptions fwd;  // eval mode, no retention
    for (size_t start = 0; start < samples.size(); start += size_t(batch_size)) {
        size_t count = std::min(size_t(batch_size), samples.size() - start);
        Tensor<float> images = Tensor<float>::zeros(
            {int64_t(count), 3, model.spec.input_h, model.spec.input_w});
        for (size_t i = 0; i < count; ++i)
            std::copy(samples[start + i].image.value().begin(),
                      samples[start + i].image.value().end(),
                      images.value().begin() +
                          int64_t(i) * 3 * model.spec.input_h * model.spec.input_w);
        ForwardResult<float> out = model.forward(images, fwd);
        int64_t mh = out.heatmaps.dim(2), mw = out.heatmaps.dim(3);
        for (size_t i = 0; i < count; ++i) {
            const PoseSample& s = samples[start + i];
            Tensor<float> maps = Tensor<float>::zeros({kNumKeypoints, mh, mw});
            std::copy(out.heatmaps.value().begin() + int64_t(i) * kNumKeypoints * mh * mw,
                      out.heatmaps.value().begin() + int64_t(i + 1) * kNumKeypoints * mh * mw,
                      maps.value().begin());
            KeypointPrediction kp =
                decode_keypoints(maps, model.spec.input_h, model.spec.input_w);
            PredictionRecord rec;
            rec.image_id = s.id;
            rec.keypoints = kp.pts;
            double sc = 0;
            for (const auto& p : kp.pts) sc += double(p[2]);
            rec.score = sc / double(kNumKeypoints);
            report.predictions.push_back(rec);
            GroundTruthRecord gt;
            gt.image_id = s.id;
            gt.keypoints = s.keypoints;
            gt.area = double(s.area);
            gts.push_back(gt);
            for (int k = 0; k < kNumKeypoints; ++k) {
                if (s.keypoints[size_t(k)].v <= 0) continue;
                double dx = double(kp.pts[size_t(k)][0]) - double(s.keypoints[size_t(k)].x);
                double dy = double(kp.pts[size_t(k)][1]) - double(s.keypoints[size_t(k)].y);
                report.mean_pixel_error[size_t(k)] += std::sqrt(dx * dx + dy * dy);
                ++err_counts[size_t(k)];
            }
        }
    }
    for (int k = 0; k < kNumKeypoints; ++k)
        if (err_counts[size_t(k)] > 0)
            report.mean_pixel_error[size_t(k)] /= double(err_counts[size_t(k)]);
    report.apar = ap_ar(report.predictions, gts);
    return report;
}

}  // namespace btk
