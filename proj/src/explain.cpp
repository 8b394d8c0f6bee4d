#include "btk/explain.hpp"

#include "btk/image_io.hpp"
#include "btk/synth.hpp"

namespace btk {

int64_t keypoint_to_token(float x, float y, int64_t input_h, int64_t input_w, int64_t grid_h,
                          int64_t grid_w) {
    float cell_w = float(input_w) / float(grid_w);
    float cell_h = float(input_h) / float(grid_h);
    int64_t col = int64_t(x / cell_w);
    int64_t row = int64_t(y / cell_h);
    col = std::min(grid_w - 1, std::max<int64_t>(0, col));
    row = std::min(grid_h - 1, std::max<int64_t>(0, row));
    return row * grid_w + col;
}

DependencyMap dependency_map(const AttentionRecord<float>& record, AttentionSource source,
                             int64_t layer, int64_t token, int head, int64_t batch) {
    const auto& maps = source == AttentionSource::Mhsa ? record.mhsa : record.encoder;
    check<ValueError>(!maps.empty(), "dependency_map: record has no ",
                      source == AttentionSource::Mhsa ? "MHSA" : "encoder", " attention maps");
    if (layer < 0) layer = int64_t(maps.size()) - 1;
    check<ValueError>(layer < int64_t(maps.size()), "dependency_map: layer ", layer,
                      " out of range (", maps.size(), " recorded)");
    const auto& m = maps[size_t(layer)];
    check<ValueError>(batch >= 0 && batch < m.batch, "dependency_map: batch index out of range");
    check<ValueError>(token >= 0 && token < m.rows, "dependency_map: token ", token,
                      " out of range for ", m.rows, " rows");
    check<ValueError>(m.cols == record.grid_h * record.grid_w,
                      "dependency_map: attention width ", m.cols, " != grid ", record.grid_h, "x",
                      record.grid_w);
    check<ValueError>(head < int(m.heads), "dependency_map: head ", head, " out of range");

    DependencyMap out;
    out.grid_h = record.grid_h;
    out.grid_w = record.grid_w;
    out.source = source;
    out.layer = layer;
    out.token = token;
    out.p.assign(size_t(m.cols), 0.0f);
    if (head < 0) {
        for (int64_t h = 0; h < m.heads; ++h)
            for (int64_t c = 0; c < m.cols; ++c) out.p[size_t(c)] += m.at(batch, h, token, c);
        for (auto& v : out.p) v /= float(m.heads);
    } else {
        for (int64_t c = 0; c < m.cols; ++c) out.p[size_t(c)] = m.at(batch, head, token, c);
    }
    return out;
}

namespace {

struct Rgb {
    float r, g, b;
};

// fixed 5-stop ramp, t in [0,1]
Rgb color_ramp(float t) {
    static const Rgb stops[5] = {{0, 0, 1}, {0, 1, 1}, {0, 1, 0}, {1, 1, 0}, {1, 0, 0}};
    t = std::min(1.0f, std::max(0.0f, t));
    float pos = t * 4.0f;
    int i = std::min(3, int(pos));
    float f = pos - float(i);
    return {stops[i].r + f * (stops[i + 1].r - stops[i].r),
            stops[i].g + f * (stops[i + 1].g - stops[i].g),
            stops[i].b + f * (stops[i + 1].b - stops[i].b)};
}

void put(std::vector<float>& px, int64_t H, int64_t W, int64_t x, int64_t y, Rgb c) {
    if (x < 0 || x >= W || y < 0 || y >= H) return;
    px[size_t(y * W + x)] = c.r;
    px[size_t(H * W + y * W + x)] = c.g;
    px[size_t(2 * H * W + y * W + x)] = c.b;
}

void draw_line(std::vector<float>& px, int64_t H, int64_t W, float x0, float y0, float x1,
               float y1, Rgb c) {
    int64_t steps = int64_t(std::max(std::fabs(x1 - x0), std::fabs(y1 - y0))) + 1;
    for (int64_t s = 0; s <= steps; ++s) {
        float t = float(s) / float(steps);
        put(px, H, W, int64_t(std::lround(x0 + t * (x1 - x0))),
            int64_t(std::lround(y0 + t * (y1 - y0))), c);
    }
}

// 4-pointed star glyph
void draw_star(std::vector<float>& px, int64_t H, int64_t W, int64_t cx, int64_t cy) {
    const Rgb white{1, 1, 1};
    for (int64_t d = -5; d <= 5; ++d) {
        put(px, H, W, cx + d, cy, white);
        put(px, H, W, cx, cy + d, white);
    }
    for (int64_t d = -2; d <= 2; ++d) {
        put(px, H, W, cx + d, cy + d, white);
        put(px, H, W, cx + d, cy - d, white);
    }
}

}  // namespace

void render_overlay(const Tensor<float>& image, const DependencyMap& map, float kp_x, float kp_y,
                    const std::array<Keypoint, kNumKeypoints>* skeleton,
                    const std::string& path) {
    check<ShapeError>(image.rank() == 3 && image.dim(0) == 3, "render_overlay: expected [3,H,W]");
    int64_t H = image.dim(1), W = image.dim(2);
    int64_t gh = map.grid_h, gw = map.grid_w;
    check<ValueError>(int64_t(map.p.size()) == gh * gw, "render_overlay: map size mismatch");

    float peak = 0.0f;
    for (float v : map.p) peak = std::max(peak, v);
    if (peak <= 0.0f) peak = 1.0f;

    const float* src = image.value().data();
    std::vector<float> px(size_t(3 * H * W));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            // bilinear sample of the map at this pixel (cell centers at
            // integer grid coordinates)
            float gx = (float(x) + 0.5f) * float(gw) / float(W) - 0.5f;
            float gy = (float(y) + 0.5f) * float(gh) / float(H) - 0.5f;
            gx = std::min(float(gw - 1), std::max(0.0f, gx));
            gy = std::min(float(gh - 1), std::max(0.0f, gy));
            int64_t x0 = int64_t(gx), y0 = int64_t(gy);
            int64_t x1 = std::min(x0 + 1, gw - 1), y1 = std::min(y0 + 1, gh - 1);
            float fx = gx - float(x0), fy = gy - float(y0);
            float v = (1 - fy) * ((1 - fx) * map.p[size_t(y0 * gw + x0)] +
                                  fx * map.p[size_t(y0 * gw + x1)]) +
                      fy * ((1 - fx) * map.p[size_t(y1 * gw + x0)] +
                            fx * map.p[size_t(y1 * gw + x1)]);
            Rgb c = color_ramp(v / peak);
            float gray = 0.299f * src[y * W + x] + 0.587f * src[H * W + y * W + x] +
                         0.114f * src[2 * H * W + y * W + x];
            px[size_t(y * W + x)] = 0.5f * c.r + 0.5f * gray;
            px[size_t(H * W + y * W + x)] = 0.5f * c.g + 0.5f * gray;
            px[size_t(2 * H * W + y * W + x)] = 0.5f * c.b + 0.5f * gray;
        }

    if (skeleton) {
        const Rgb bone{0.95f, 0.95f, 0.95f};
        for (const auto& [a, b] : kSkeletonEdges) {
            const Keypoint& ka = (*skeleton)[size_t(a)];
            const Keypoint& kb = (*skeleton)[size_t(b)];
            if (ka.v <= 0 || kb.v <= 0) continue;
            draw_line(px, H, W, ka.x, ka.y, kb.x, kb.y, bone);
        }
    }
    draw_star(px, H, W, int64_t(std::lround(kp_x)), int64_t(std::lround(kp_y)));

    write_ppm(Tensor<float>::from({3, H, W}, std::move(px)), path);
}

void render_skeleton_panel(const Tensor<float>& image, const KeypointPrediction& pred,
                           const std::string& path) {
    check<ShapeError>(image.rank() == 3 && image.dim(0) == 3,
                      "render_skeleton_panel: expected [3,H,W]");
    int64_t H = image.dim(1), W = image.dim(2);
    const float* src = image.value().data();
    std::vector<float> px(size_t(3 * H * W));
    for (int64_t i = 0; i < H * W; ++i) {
        float gray = 0.299f * src[i] + 0.587f * src[H * W + i] + 0.114f * src[2 * H * W + i];
        px[size_t(i)] = px[size_t(H * W + i)] = px[size_t(2 * H * W + i)] = gray;
    }
    const Rgb bone{0.2f, 0.9f, 0.4f};
    for (const auto& [a, b] : kSkeletonEdges)
        draw_line(px, H, W, pred.pts[size_t(a)][0], pred.pts[size_t(a)][1],
                  pred.pts[size_t(b)][0], pred.pts[size_t(b)][1], bone);
    for (const auto& p : pred.pts)
        draw_star(px, H, W, int64_t(std::lround(p[0])), int64_t(std::lround(p[1])));
    write_ppm(Tensor<float>::from({3, H, W}, std::move(px)), path);
}

}  // namespace btk
