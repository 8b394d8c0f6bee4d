#pragma once

#include "btk/backbone.hpp"
#include "btk/eval.hpp"

namespace btk {

// Attention-grid token for a keypoint in input-image coordinates: heatmap
// cell (x/4, y/4), halved again onto the grid, clamped, row-major indexed.
int64_t keypoint_to_token(float x, float y, int64_t input_h, int64_t input_w, int64_t grid_h,
                          int64_t grid_w);

inline int64_t keypoint_to_token(const KeypointPrediction& pred, int k, int64_t input_h,
                                 int64_t input_w, int64_t grid_h, int64_t grid_w) {
    return keypoint_to_token(pred.pts[size_t(k)][0], pred.pts[size_t(k)][1], input_h, input_w,
                             grid_h, grid_w);
}

enum class AttentionSource { Mhsa, Encoder };

// Probability distribution over the attention grid: the query token's
// attention row, heads averaged (or one head), reshaped to grid_h x grid_w.
struct DependencyMap {
    int64_t grid_h = 0, grid_w = 0;
    std::vector<float> p;  // sums to 1
    AttentionSource source = AttentionSource::Encoder;
    int64_t layer = 0;  // encoder layer or MHSA block index actually used
    int64_t token = 0;
    int keypoint = -1;
};

// layer < 0 selects the last recorded layer/block; head < 0 averages heads.
DependencyMap dependency_map(const AttentionRecord<float>& record, AttentionSource source,
                             int64_t layer, int64_t token, int head = -1, int64_t batch = 0);

// Bilinear-upsamples the map to the image size, colorizes it with a fixed
// 5-stop ramp (blue, cyan, green, yellow, red), alpha-blends 0.5 over the
// grayscale image, draws a white star at the keypoint and optional skeleton
// edges, and writes a P6 PPM.
void render_overlay(const Tensor<float>& image, const DependencyMap& map, float kp_x, float kp_y,
                    const std::array<Keypoint, kNumKeypoints>* skeleton,
                    const std::string& path);

// Grayscale image with the predicted skeleton and a star per keypoint.
void render_skeleton_panel(const Tensor<float>& image, const KeypointPrediction& pred,
                           const std::string& path);

}  // namespace btk
