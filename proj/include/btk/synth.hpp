#pragma once

#include <array>

#include "btk/tensor.hpp"

namespace btk {

inline constexpr int kNumKeypoints = 17;

// COCO keypoint ordering.
inline const std::array<const char*, kNumKeypoints> kKeypointNames = {
    "nose",           "left_eye",      "right_eye",    "left_ear",    "right_ear",
    "left_shoulder",  "right_shoulder", "left_elbow",  "right_elbow", "left_wrist",
    "right_wrist",    "left_hip",      "right_hip",    "left_knee",   "right_knee",
    "left_ankle",     "right_ankle"};

// left/right swap applied on horizontal flip (an involution)
inline const std::array<int, kNumKeypoints> kFlipIndex = {0, 2,  1,  4,  3,  6,  5, 8, 7,
                                                          10, 9, 12, 11, 14, 13, 16, 15};

// COCO skeleton edges (keypoint index pairs)
inline const std::array<std::pair<int, int>, 19> kSkeletonEdges = {{{15, 13},
                                                                    {13, 11},
                                                                    {16, 14},
                                                                    {14, 12},
                                                                    {11, 12},
                                                                    {5, 11},
                                                                    {6, 12},
                                                                    {5, 6},
                                                                    {5, 7},
                                                                    {6, 8},
                                                                    {7, 9},
                                                                    {8, 10},
                                                                    {1, 2},
                                                                    {0, 1},
                                                                    {0, 2},
                                                                    {1, 3},
                                                                    {2, 4},
                                                                    {3, 5},
                                                                    {4, 6}}};

struct Keypoint {
    float x = 0, y = 0;
    int v = 0;  // 0 = unlabeled, 1 = labeled not visible, 2 = visible
};

struct PoseSample {
    int64_t id = 0;
    Tensor<float> image;  // [3,H,W], values in [0,1]
    std::array<Keypoint, kNumKeypoints> keypoints;
    float area = 1.0f;  // person bounding-box area in pixels
};

// Kinematic stick-figure parameters. Angles are in the body frame: 0 points
// along the body axis (down for limbs, up for the torso), positive rotates
// outward toward the joint's side.
struct FigureParams {
    float cx = 96, cy = 150;  // pelvis, image coordinates
    float scale = 1.0f;
    float lean = 0.0f;  // torso lean, radians
    float torso_len = 62, neck_len = 20, head_radius = 13;
    float shoulder_w = 40, hip_w = 30;
    float upper_arm = 30, forearm = 28, thigh = 36, shin = 34;
    float shoulder_ang_l = 0.15f, shoulder_ang_r = 0.15f;
    float elbow_ang_l = 0.0f, elbow_ang_r = 0.0f;
    float hip_ang_l = 0.12f, hip_ang_r = 0.12f;
    float knee_ang_l = 0.0f, knee_ang_r = 0.0f;
    uint64_t noise_seed = 1;
    int occluded_joint = -1;  // keypoint index rendered as labeled-invisible

    static FigureParams neutral() { return FigureParams{}; }
};

// Joint positions only (no rendering); used by the renderer and by tests.
std::array<Keypoint, kNumKeypoints> figure_keypoints(const FigureParams& p, int64_t img_h,
                                                     int64_t img_w);

// Renders the figure onto a noise background. Visible limbs and joints are
// anti-aliased; left limbs carry a warm tint and right limbs a cool one.
PoseSample render_figure(const FigureParams& p, int64_t img_h = 256, int64_t img_w = 192);

// Deterministic randomized sample: bounded joint angles and limb lengths,
// occasional self-occlusion flag, seeded background noise.
PoseSample generate_sample(uint64_t seed, int64_t img_h = 256, int64_t img_w = 192);

struct TargetHeatmaps {
    Tensor<float> maps;  // [K, H/4, W/4], peak 1 Gaussians
    std::array<uint8_t, kNumKeypoints> visible{};  // 1 where v > 0
};

// Gaussian targets (sigma in heatmap cells) centered at the keypoint's grid
// cell; unlabeled channels are all-zero.
TargetHeatmaps make_target_heatmaps(const PoseSample& sample, float sigma = 2.0f);

struct AffineParams {
    float rotation = 0.0f;  // radians
    float scale = 1.0f;
    bool flip = false;
};

// Row-major 2x3 matrix mapping original pixel coordinates to augmented ones
// (rotation and scale about the image center, then the horizontal flip).
std::array<float, 6> affine_matrix(const AffineParams& p, int64_t img_h, int64_t img_w);

// Applies the affine to image and keypoints; keypoints leaving the image are
// marked unlabeled; flip swaps left/right keypoint indices.
PoseSample affine_sample(const PoseSample& sample, const AffineParams& p);

PoseSample flip_sample(const PoseSample& sample);

// Training augmentation: rotation within +-45 deg, scale within +-35%,
// horizontal flip with probability 1/2.
PoseSample augment(const PoseSample& sample, uint64_t seed);

int keypoint_index(const std::string& name);  // throws listing the 17 names

}  // namespace btk
