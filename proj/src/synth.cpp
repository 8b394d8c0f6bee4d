#include "btk/synth.hpp"

#include <cmath>

namespace btk {

namespace {

struct Vec2 {
    float x = 0, y = 0;
};

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator*(float s, Vec2 a) { return {s * a.x, s * a.y}; }

// direction at angle `ang` from the down-the-body axis, opening toward
// `side` (+1 = the keypoint's own side)
Vec2 limb_dir(Vec2 down, Vec2 side_perp, float ang) {
    return {down.x * std::cos(ang) + side_perp.x * std::sin(ang),
            down.y * std::cos(ang) + side_perp.y * std::sin(ang)};
}

float clampf(float v, float lo, float hi) { return std::min(hi, std::max(lo, v)); }

struct Painter {
    std::vector<float>& px;  // [3][H][W]
    int64_t H, W;

    void blend(int64_t x, int64_t y, float r, float g, float b, float alpha) {
        if (x < 0 || x >= W || y < 0 || y >= H || alpha <= 0) return;
        size_t i = size_t(y * W + x);
        size_t plane = size_t(H * W);
        px[i] = px[i] * (1 - alpha) + r * alpha;
        px[plane + i] = px[plane + i] * (1 - alpha) + g * alpha;
        px[2 * plane + i] = px[2 * plane + i] * (1 - alpha) + b * alpha;
    }

    // anti-aliased thick segment
    void segment(Vec2 a, Vec2 b, float radius, float r, float g, float bl) {
        float x0 = std::min(a.x, b.x) - radius - 1, x1 = std::max(a.x, b.x) + radius + 1;
        float y0 = std::min(a.y, b.y) - radius - 1, y1 = std::max(a.y, b.y) + radius + 1;
        float dx = b.x - a.x, dy = b.y - a.y;
        float len2 = dx * dx + dy * dy;
        for (int64_t y = int64_t(std::floor(y0)); y <= int64_t(std::ceil(y1)); ++y)
            for (int64_t x = int64_t(std::floor(x0)); x <= int64_t(std::ceil(x1)); ++x) {
                float t = len2 > 0 ? clampf(((x - a.x) * dx + (y - a.y) * dy) / len2, 0, 1) : 0;
                float px_ = a.x + t * dx - x, py_ = a.y + t * dy - y;
                float d = std::sqrt(px_ * px_ + py_ * py_);
                blend(x, y, r, g, bl, clampf(radius + 0.5f - d, 0, 1));
            }
    }

    void circle(Vec2 c, float radius, float r, float g, float b) {
        segment(c, c, radius, r, g, b);
    }
};

struct Tint {
    float r, g, b;
};
constexpr Tint kLeftTint{0.95f, 0.72f, 0.50f};   // warm
constexpr Tint kRightTint{0.50f, 0.72f, 0.95f};  // cool
constexpr Tint kBodyTint{0.85f, 0.85f, 0.85f};

bool is_left(int k) {
    return k == 1 || k == 3 || k == 5 || k == 7 || k == 9 || k == 11 || k == 13 || k == 15;
}
bool is_right(int k) {
    return k == 2 || k == 4 || k == 6 || k == 8 || k == 10 || k == 12 || k == 14 || k == 16;
}

Tint tint_for(int k) {
    if (is_left(k)) return kLeftTint;
    if (is_right(k)) return kRightTint;
    return kBodyTint;
}

}  // namespace

std::array<Keypoint, kNumKeypoints> figure_keypoints(const FigureParams& p, int64_t img_h,
                                                     int64_t img_w) {
    float s = p.scale;
    Vec2 up{std::sin(p.lean), -std::cos(p.lean)};
    Vec2 down{-up.x, -up.y};
    Vec2 right_perp{-up.y, up.x};  // image-right when upright
    Vec2 left_perp = -1.0f * right_perp;
    // COCO "left" keypoints sit on the image-right side of a person facing
    // the camera
    Vec2 pelvis{p.cx, p.cy};
    Vec2 shoulder_c = pelvis + (s * p.torso_len) * up;
    Vec2 head_c = shoulder_c + (s * (p.neck_len + p.head_radius)) * up;

    std::array<Vec2, kNumKeypoints> pt;
    pt[0] = head_c;                                                 // nose
    pt[1] = head_c + (s * 0.35f * p.head_radius) * right_perp + (s * 0.18f * p.head_radius) * up;
    pt[2] = head_c + (s * 0.35f * p.head_radius) * left_perp + (s * 0.18f * p.head_radius) * up;
    pt[3] = head_c + (s * 0.85f * p.head_radius) * right_perp;      // left_ear
    pt[4] = head_c + (s * 0.85f * p.head_radius) * left_perp;       // right_ear
    pt[5] = shoulder_c + (s * 0.5f * p.shoulder_w) * right_perp;    // left_shoulder
    pt[6] = shoulder_c + (s * 0.5f * p.shoulder_w) * left_perp;     // right_shoulder
    Vec2 lua = limb_dir(down, right_perp, p.shoulder_ang_l);
    Vec2 rua = limb_dir(down, left_perp, p.shoulder_ang_r);
    pt[7] = pt[5] + (s * p.upper_arm) * lua;                        // left_elbow
    pt[8] = pt[6] + (s * p.upper_arm) * rua;                        // right_elbow
    Vec2 lfa = limb_dir(down, right_perp, p.shoulder_ang_l + p.elbow_ang_l);
    Vec2 rfa = limb_dir(down, left_perp, p.shoulder_ang_r + p.elbow_ang_r);
    pt[9] = pt[7] + (s * p.forearm) * lfa;                          // left_wrist
    pt[10] = pt[8] + (s * p.forearm) * rfa;                         // right_wrist
    pt[11] = pelvis + (s * 0.5f * p.hip_w) * right_perp;            // left_hip
    pt[12] = pelvis + (s * 0.5f * p.hip_w) * left_perp;             // right_hip
    Vec2 lth = limb_dir(down, right_perp, p.hip_ang_l);
    Vec2 rth = limb_dir(down, left_perp, p.hip_ang_r);
    pt[13] = pt[11] + (s * p.thigh) * lth;                          // left_knee
    pt[14] = pt[12] + (s * p.thigh) * rth;                          // right_knee
    Vec2 lsh = limb_dir(down, right_perp, p.hip_ang_l + p.knee_ang_l);
    Vec2 rsh = limb_dir(down, left_perp, p.hip_ang_r + p.knee_ang_r);
    pt[15] = pt[13] + (s * p.shin) * lsh;                           // left_ankle
    pt[16] = pt[14] + (s * p.shin) * rsh;                           // right_ankle

    std::array<Keypoint, kNumKeypoints> kps;
    for (int k = 0; k < kNumKeypoints; ++k) {
        Keypoint kp;
        kp.x = pt[size_t(k)].x;
        kp.y = pt[size_t(k)].y;
        bool inside = kp.x >= 0 && kp.x < float(img_w) && kp.y >= 0 && kp.y < float(img_h);
        kp.v = inside ? 2 : 0;
        if (k == p.occluded_joint && kp.v == 2) kp.v = 1;
        kps[size_t(k)] = kp;
    }
    return kps;
}

PoseSample render_figure(const FigureParams& p, int64_t img_h, int64_t img_w) {
    PoseSample sample;
    sample.keypoints = figure_keypoints(p, img_h, img_w);
    sample.image = Tensor<float>::zeros({3, img_h, img_w});
    auto& px = sample.image.value();

    // muted correlated noise background
    Rng noise(p.noise_seed);
    for (int64_t i = 0; i < img_h * img_w; ++i) {
        float n = 0.18f + 0.14f * float(noise.uniform());
        px[size_t(i)] = n + 0.02f * float(noise.uniform());
        px[size_t(img_h * img_w + i)] = n + 0.02f * float(noise.uniform());
        px[size_t(2 * img_h * img_w + i)] = n + 0.02f * float(noise.uniform());
    }

    Painter paint{px, img_h, img_w};
    const auto& kp = sample.keypoints;
    auto vec = [&](int k) { return Vec2{kp[size_t(k)].x, kp[size_t(k)].y}; };
    auto limb = [&](int a, int b, float radius) {
        if (kp[size_t(a)].v != 2 || kp[size_t(b)].v != 2) return;
        Tint t = is_left(a) && is_left(b) ? kLeftTint
                 : is_right(a) && is_right(b) ? kRightTint
                                              : kBodyTint;
        paint.segment(vec(a), vec(b), radius, t.r, t.g, t.b);
    };

    // torso quad + head
    limb(5, 6, 4.5f);
    limb(11, 12, 4.5f);
    limb(5, 11, 4.0f);
    limb(6, 12, 4.0f);
    if (kp[0].v == 2) {
        Vec2 head{kp[0].x, kp[0].y};
        paint.circle(head, p.scale * p.head_radius, kBodyTint.r, kBodyTint.g, kBodyTint.b);
    }
    // limbs
    limb(5, 7, 3.2f);
    limb(7, 9, 2.8f);
    limb(6, 8, 3.2f);
    limb(8, 10, 2.8f);
    limb(11, 13, 3.6f);
    limb(13, 15, 3.2f);
    limb(12, 14, 3.6f);
    limb(14, 16, 3.2f);
    // joint markers
    for (int k = 0; k < kNumKeypoints; ++k) {
        if (kp[size_t(k)].v != 2) continue;
        Tint t = tint_for(k);
        float r = (k <= 4) ? 1.8f : 2.8f;
        paint.circle(vec(k), r, clampf(t.r * 1.15f, 0, 1), clampf(t.g * 1.15f, 0, 1),
                     clampf(t.b * 1.15f, 0, 1));
    }

    // bounding-box area over labeled keypoints
    float minx = 1e9f, maxx = -1e9f, miny = 1e9f, maxy = -1e9f;
    for (const auto& k : kp)
        if (k.v > 0) {
            minx = std::min(minx, k.x);
            maxx = std::max(maxx, k.x);
            miny = std::min(miny, k.y);
            maxy = std::max(maxy, k.y);
        }
    sample.area = std::max(1.0f, (maxx - minx) * (maxy - miny));
    return sample;
}

PoseSample generate_sample(uint64_t seed, int64_t img_h, int64_t img_w) {
    Rng rng(seed * 0x9e3779b97f4a7c15ull + 0x1234567ull);
    FigureParams p;
    float sx = float(img_w) / 192.0f, sy = float(img_h) / 256.0f;
    p.cx = float(rng.uniform(80, 112)) * sx;
    p.cy = float(rng.uniform(136, 157)) * sy;
    p.scale = float(rng.uniform(0.88, 1.12)) * std::min(sx, sy);
    p.lean = float(rng.uniform(-0.18, 0.18));
    p.torso_len = float(rng.uniform(55, 68));
    p.neck_len = float(rng.uniform(16, 24));
    p.head_radius = float(rng.uniform(11, 15));
    p.shoulder_w = float(rng.uniform(34, 46));
    p.hip_w = float(rng.uniform(26, 36));
    p.upper_arm = float(rng.uniform(26, 34));
    p.forearm = float(rng.uniform(24, 32));
    p.thigh = float(rng.uniform(32, 40));
    p.shin = float(rng.uniform(30, 38));
    p.shoulder_ang_l = float(rng.uniform(-0.25, 2.2));
    p.shoulder_ang_r = float(rng.uniform(-0.25, 2.2));
    p.elbow_ang_l = float(rng.uniform(-0.3, 1.9));
    p.elbow_ang_r = float(rng.uniform(-0.3, 1.9));
    p.hip_ang_l = float(rng.uniform(-0.15, 0.8));
    p.hip_ang_r = float(rng.uniform(-0.15, 0.8));
    p.knee_ang_l = float(rng.uniform(-0.9, 0.25));
    p.knee_ang_r = float(rng.uniform(-0.9, 0.25));
    p.noise_seed = rng.next_u64();
    if (rng.bernoulli(0.08)) {
        static const int occludable[] = {7, 8, 9, 10, 13, 14, 15, 16};
        p.occluded_joint = occludable[rng.uniform_int(8)];
    }
    PoseSample s = render_figure(p, img_h, img_w);
    s.id = int64_t(seed);
    return s;
}

TargetHeatmaps make_target_heatmaps(const PoseSample& sample, float sigma) {
    int64_t img_h = sample.image.dim(1), img_w = sample.image.dim(2);
    int64_t mh = img_h / 4, mw = img_w / 4;
    TargetHeatmaps out;
    out.maps = Tensor<float>::zeros({kNumKeypoints, mh, mw});
    float* mv = out.maps.value().data();
    float inv = 1.0f / (2.0f * sigma * sigma);
    for (int k = 0; k < kNumKeypoints; ++k) {
        const Keypoint& kp = sample.keypoints[size_t(k)];
        out.visible[size_t(k)] = kp.v > 0 ? 1 : 0;
        if (kp.v == 0) continue;
        // continuous center: the peak of the sampled Gaussian lands in the
        // keypoint's (nearest) grid cell, and the quarter-cell decode shift
        // recovers the sub-cell position
        float cx = kp.x / 4.0f, cy = kp.y / 4.0f;
        float* ch = mv + k * mh * mw;
        for (int64_t r = 0; r < mh; ++r)
            for (int64_t c = 0; c < mw; ++c) {
                float dr = float(r) - cy, dc = float(c) - cx;
                ch[r * mw + c] = std::exp(-(dr * dr + dc * dc) * inv);
            }
    }
    return out;
}

std::array<float, 6> affine_matrix(const AffineParams& p, int64_t img_h, int64_t img_w) {
    float cx = float(img_w - 1) / 2.0f, cy = float(img_h - 1) / 2.0f;
    float c = std::cos(p.rotation) * p.scale, s = std::sin(p.rotation) * p.scale;
    // rotate+scale about (cx, cy): out = R (pt - c) + c
    std::array<float, 6> m = {c, -s, cx - c * cx + s * cy, s, c, cy - s * cx - c * cy};
    if (p.flip) {
        // x' -> (W-1) - x'
        m[0] = -m[0];
        m[1] = -m[1];
        m[2] = float(img_w - 1) - m[2];
    }
    return m;
}

PoseSample affine_sample(const PoseSample& sample, const AffineParams& p) {
    int64_t H = sample.image.dim(1), W = sample.image.dim(2);
    std::array<float, 6> m = affine_matrix(p, H, W);
    // invert for image resampling (affine is invertible: det = scale^2 != 0)
    float det = m[0] * m[4] - m[1] * m[3];
    float i0 = m[4] / det, i1 = -m[1] / det, i3 = -m[3] / det, i4 = m[0] / det;
    float i2 = -(i0 * m[2] + i1 * m[5]);
    float i5 = -(i3 * m[2] + i4 * m[5]);

    PoseSample out;
    out.id = sample.id;
    out.image = Tensor<float>::zeros(sample.image.shape());
    const float* src = sample.image.value().data();
    float* dst = out.image.value().data();
    const float fill = 0.18f;
    for (int64_t c = 0; c < 3; ++c) {
        const float* sc = src + c * H * W;
        float* dc = dst + c * H * W;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                float sx = i0 * float(x) + i1 * float(y) + i2;
                float sy = i3 * float(x) + i4 * float(y) + i5;
                float v = fill;
                if (sx >= 0 && sx <= float(W - 1) && sy >= 0 && sy <= float(H - 1)) {
                    int64_t x0 = int64_t(sx), y0 = int64_t(sy);
                    int64_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                    float fx = sx - float(x0), fy = sy - float(y0);
                    v = (1 - fy) * ((1 - fx) * sc[y0 * W + x0] + fx * sc[y0 * W + x1]) +
                        fy * ((1 - fx) * sc[y1 * W + x0] + fx * sc[y1 * W + x1]);
                }
                dc[y * W + x] = v;
            }
    }
    for (int k = 0; k < kNumKeypoints; ++k) {
        const Keypoint& in = sample.keypoints[size_t(p.flip ? kFlipIndex[size_t(k)] : k)];
        Keypoint kp;
        kp.x = m[0] * in.x + m[1] * in.y + m[2];
        kp.y = m[3] * in.x + m[4] * in.y + m[5];
        bool inside = kp.x >= 0 && kp.x < float(W) && kp.y >= 0 && kp.y < float(H);
        kp.v = inside ? in.v : 0;
        out.keypoints[size_t(k)] = kp;
    }
    float minx = 1e9f, maxx = -1e9f, miny = 1e9f, maxy = -1e9f;
    bool any = false;
    for (const auto& k : out.keypoints)
        if (k.v > 0) {
            any = true;
            minx = std::min(minx, k.x);
            maxx = std::max(maxx, k.x);
            miny = std::min(miny, k.y);
            maxy = std::max(maxy, k.y);
        }
    out.area = any ? std::max(1.0f, (maxx - minx) * (maxy - miny)) : 1.0f;
    return out;
}

PoseSample flip_sample(const PoseSample& sample) {
    AffineParams p;
    p.flip = true;
    return affine_sample(sample, p);
}

PoseSample augment(const PoseSample& sample, uint64_t seed) {
    Rng rng(seed ^ 0xa0a0a0a0ull);
    AffineParams p;
    p.rotation = float(rng.uniform(-45.0, 45.0)) * 3.14159265358979323846f / 180.0f;
    p.scale = float(rng.uniform(0.65, 1.35));
    p.flip = rng.bernoulli(0.5);
    return affine_sample(sample, p);
}

int keypoint_index(const std::string& name) {
    for (int k = 0; k < kNumKeypoints; ++k)
        if (name == kKeypointNames[size_t(k)]) return k;
    std::string all;
    for (int k = 0; k < kNumKeypoints; ++k)
        all += std::string(k ? ", " : "") + kKeypointNames[size_t(k)];
    throw ValueError(format("unknown keypoint '", name, "'; valid names: ", all));
}

}  // namespace btk
