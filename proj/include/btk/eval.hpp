#pragma once

#include "btk/annotations.hpp"

namespace btk {

struct KeypointPrediction {
    // per keypoint: x, y in input-image pixels, score in [0,1]
    std::array<std::array<float, 3>, kNumKeypoints> pts{};
};

struct OksParams {
    // COCO convention: k_i = 2 * sigma_i
    std::array<double, kNumKeypoints> k = {
        2 * .026, 2 * .025, 2 * .025, 2 * .035, 2 * .035, 2 * .079, 2 * .079, 2 * .072, 2 * .072,
        2 * .062, 2 * .062, 2 * .107, 2 * .107, 2 * .087, 2 * .087, 2 * .089, 2 * .089};
    std::array<double, 10> thresholds = {0.50, 0.55, 0.60, 0.65, 0.70,
                                         0.75, 0.80, 0.85, 0.90, 0.95};
};

// Heatmaps [K, h, w] -> keypoints at input scale. Argmax cell, then a
// quarter-cell shift toward the larger axis neighbor, then scale by the
// input/heatmap ratio. A flat channel falls back to the grid center with
// score 0.
KeypointPrediction decode_keypoints(const Tensor<float>& heatmaps, int64_t input_h,
                                    int64_t input_w);

// Object keypoint similarity: mean over labeled keypoints of
// exp(-d^2 / (2 * area * k_i^2)). Throws when no keypoint is labeled.
double oks(const KeypointPrediction& pred, const std::array<Keypoint, kNumKeypoints>& gt,
           double area, const OksParams& params = {});

struct GroundTruthRecord {
    int64_t image_id = 0;
    std::array<Keypoint, kNumKeypoints> keypoints;
    double area = 1.0;
};

struct ApArResult {
    double ap = 0.0, ar = 0.0;
    std::array<double, 10> precision{}, recall{};
};

// Greedy-by-score matching per OKS threshold; precision/recall averaged over
// the 10-rung ladder. Throws on an empty ground-truth set.
ApArResult ap_ar(const std::vector<PredictionRecord>& predictions,
                 const std::vector<GroundTruthRecord>& ground_truths,
                 const OksParams& params = {});

inline KeypointPrediction to_keypoint_prediction(const PredictionRecord& rec) {
    KeypointPrediction kp;
    kp.pts = rec.keypoints;
    return kp;
}

}  // namespace btk
