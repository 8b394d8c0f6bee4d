#include "btk/eval.hpp"

#include <algorithm>

namespace btk {

KeypointPrediction decode_keypoints(const Tensor<float>& heatmaps, int64_t input_h,
                                    int64_t input_w) {
    check<ShapeError>(heatmaps.rank() == 3 && heatmaps.dim(0) == kNumKeypoints,
                      "decode_keypoints: expected [", kNumKeypoints, ",h,w], got ",
                      shape_str(heatmaps.shape()));
    int64_t h = heatmaps.dim(1), w = heatmaps.dim(2);
    float sx = float(input_w) / float(w), sy = float(input_h) / float(h);
    const float* v = heatmaps.value().data();
    KeypointPrediction pred;
    for (int k = 0; k < kNumKeypoints; ++k) {
        const float* ch = v + k * h * w;
        int64_t best = 0;
        float lo = ch[0], hi = ch[0];
        for (int64_t i = 1; i < h * w; ++i) {
            if (ch[i] > hi) {
                hi = ch[i];
                best = i;
            }
            lo = std::min(lo, ch[i]);
        }
        check<ValueError>(std::isfinite(hi) && std::isfinite(lo),
                          "decode_keypoints: non-finite heatmap for keypoint ", k);
        if (hi == lo) {
            // flat channel: center of grid, zero confidence
            pred.pts[size_t(k)] = {float(w / 2) * sx, float(h / 2) * sy, 0.0f};
            continue;
        }
        int64_t py = best / w, px = best % w;
        float dx = 0.0f, dy = 0.0f;
        if (px > 0 && px < w - 1) {
            float diff = ch[py * w + px + 1] - ch[py * w + px - 1];
            dx = diff > 0 ? 0.25f : (diff < 0 ? -0.25f : 0.0f);
        }
        if (py > 0 && py < h - 1) {
            float diff = ch[(py + 1) * w + px] - ch[(py - 1) * w + px];
            dy = diff > 0 ? 0.25f : (diff < 0 ? -0.25f : 0.0f);
        }
        float score = std::min(1.0f, std::max(0.0f, hi));
        pred.pts[size_t(k)] = {(float(px) + dx) * sx, (float(py) + dy) * sy, score};
    }
    return pred;
}

double oks(const KeypointPrediction& pred, const std::array<Keypoint, kNumKeypoints>& gt,
           double area, const OksParams& params) {
    check<ValueError>(area > 0, "oks: area must be positive, got ", area);
    double acc = 0.0;
    int labeled = 0;
    for (int k = 0; k < kNumKeypoints; ++k) {
        if (gt[size_t(k)].v <= 0) continue;
        double dx = double(pred.pts[size_t(k)][0]) - double(gt[size_t(k)].x);
        double dy = double(pred.pts[size_t(k)][1]) - double(gt[size_t(k)].y);
        double kk = params.k[size_t(k)];
        acc += std::exp(-(dx * dx + dy * dy) / (2.0 * area * kk * kk));
        ++labeled;
    }
    check<ValueError>(labeled > 0, "oks: ground truth has no labeled keypoints");
    return acc / double(labeled);
}

ApArResult ap_ar(const std::vector<PredictionRecord>& predictions,
                 const std::vector<GroundTruthRecord>& ground_truths, const OksParams& params) {
    check<ValueError>(!ground_truths.empty(), "ap_ar: empty ground-truth set");
    // stable, deterministic scoring order
    std::vector<size_t> order(predictions.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (predictions[a].score != predictions[b].score)
            return predictions[a].score > predictions[b].score;
        return predictions[a].image_id < predictions[b].image_id;
    });

    ApArResult result;
    for (size_t t = 0; t < params.thresholds.size(); ++t) {
        double thr = params.thresholds[t];
        std::vector<bool> gt_taken(ground_truths.size(), false);
        int64_t tp = 0;
        for (size_t oi : order) {
            const PredictionRecord& p = predictions[oi];
            // greedy: best unmatched ground truth of the same image
            double best_oks = -1.0;
            int64_t best_gt = -1;
            for (size_t gi = 0; gi < ground_truths.size(); ++gi) {
                if (gt_taken[gi] || ground_truths[gi].image_id != p.image_id) continue;
                double o = oks(to_keypoint_prediction(p), ground_truths[gi].keypoints,
                               ground_truths[gi].area, params);
                if (o > best_oks) {
                    best_oks = o;
                    best_gt = int64_t(gi);
                }
            }
            if (best_gt >= 0 && best_oks >= thr) {
                gt_taken[size_t(best_gt)] = true;
                ++tp;
            }
        }
        result.precision[t] =
            predictions.empty() ? 0.0 : double(tp) / double(predictions.size());
        result.recall[t] = double(tp) / double(ground_truths.size());
    }
    for (size_t t = 0; t < params.thresholds.size(); ++t) {
        result.ap += result.precision[t];
        result.ar += result.recall[t];
    }
    result.ap /= double(params.thresholds.size());
    result.ar /= double(params.thresholds.size());
    return result;
}

}  // namespace btk
