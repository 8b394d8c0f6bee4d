#include <doctest.h>

#include "btk/backbone.hpp"

using namespace btk;
using Tf = Tensor<float>;
using Td = Tensor<double>;

namespace {

template <class T>
void zero_params(ParamList<T>& params) {
    for (auto& [name, t] : params.items) std::fill(t.value().begin(), t.value().end(), T(0));
}

}  // namespace

TEST_CASE("stem: 1x3x256x192 -> 1x64x64x48") {
    Rng rng(1);
    std::vector<BlockGroupSpec> specs = {{BlockKind::Conv, 64, 1, 1, 4}};
    Backbone<float> bb(256, 192, specs, rng);
    Tf img = Tf::rand_uniform({1, 3, 256, 192}, rng, 0.0f, 1.0f);
    Tf out = bb.stem_forward(img, false);
    CHECK(out.shape() == Shape({1, 64, 64, 48}));
    CHECK_THROWS_AS(bb.stem_forward(Tf::zeros({1, 4, 256, 192}), false), ShapeError);
}

TEST_CASE("stem: zero image with identity BN gives zero output") {
    Rng rng(2);
    std::vector<BlockGroupSpec> specs = {{BlockKind::Conv, 8, 1, 1, 2}};
    Backbone<float> bb(32, 24, specs, rng);
    Tf img = Tf::zeros({1, 3, 32, 24});
    // eval mode, default stats (mean 0, var 1), conv has no bias
    Tf out = bb.stem_forward(img, false);
    for (float v : out.value()) CHECK(v == 0.0f);
}

TEST_CASE("resnet block: group-2 first block 1x256x64x48 -> 1x384x32x24") {
    Rng rng(3);
    BottleneckBlock<float> block(256, 96, 2, BlockKind::Conv, 0, 32, 24, rng);
    Tf x = Tf::randn({1, 256, 64, 48}, rng, 0.1f);
    Tf out = block.forward(x, false, nullptr);
    CHECK(out.shape() == Shape({1, 384, 32, 24}));
}

TEST_CASE("resnet block: zero residual branch passes ReLU(x) through") {
    Rng rng(4);
    // identity-shape case: in == 4*width, stride 1, no projection
    BottleneckBlock<float> block(16, 4, 1, BlockKind::Conv, 0, 8, 8, rng);
    REQUIRE(!block.proj.has_value());
    ParamList<float> params;
    block.collect("b", params);
    zero_params(params);
    Tf x = Tf::randn({1, 16, 8, 8}, rng);
    Tf out = block.forward(x, false, nullptr);
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(out.value()[size_t(i)] == std::max(0.0f, x.value()[size_t(i)]));
}

TEST_CASE("resnet block parameter count matches hand count") {
    Rng rng(5);
    // group-1 style block: in 64, width 64, stride 1 -> has projection (64 != 256)
    BottleneckBlock<float> block(64, 64, 1, BlockKind::Conv, 0, 16, 12, rng);
    ParamList<float> params;
    block.collect("b", params);
    // conv1 64*64 + bn1 128 + conv2 64*64*9 + bn2 128 + conv3 64*256 + bn3 512
    // + proj 64*256 + proj_bn 512
    int64_t expect = 64 * 64 + 128 + 64 * 64 * 9 + 128 + 64 * 256 + 512 + 64 * 256 + 512;
    CHECK(params.total_count() == expect);
}

TEST_CASE("relative_logits: zero q gives zero logits") {
    Rng rng(6);
    Td q = Td::zeros({1, 2, 6, 4});
    Td th = Td::randn({5, 4}, rng);
    Td tw = Td::randn({3, 4}, rng);
    Td out = relative_logits_2d(q, th, tw, 3, 2);
    for (double v : out.value()) CHECK(v == 0.0);
}

TEST_CASE("relative_logits: equal q rows make the logits offset-only") {
    Rng rng(7);
    int64_t H = 4, W = 3, P = H * W, d = 5;
    Td q = Td::zeros({1, 1, P, d});
    std::vector<double> row(size_t(d), 0.0);
    for (auto& v : row) v = rng.normal();
    for (int64_t p = 0; p < P; ++p)
        for (int64_t e = 0; e < d; ++e) q.value()[size_t(p * d + e)] = row[size_t(e)];
    Td th = Td::randn({2 * H - 1, d}, rng);
    Td tw = Td::randn({2 * W - 1, d}, rng);
    Td out = relative_logits_2d(q, th, tw, H, W);
    // logit[p, p'] must depend only on the offset (exact equality)
    for (int64_t p = 0; p < P; ++p)
        for (int64_t p2 = 0; p2 < P; ++p2) {
            int64_t di = p2 / W - p / W, dj = p2 % W - p % W;
            for (int64_t r = 0; r < P; ++r)
                for (int64_t r2 = 0; r2 < P; ++r2) {
                    if (r2 / W - r / W != di || r2 % W - r % W != dj) continue;
                    CHECK(out.value()[size_t(p * P + p2)] == out.value()[size_t(r * P + r2)]);
                }
        }
}

TEST_CASE("relative_logits: random 2x2 grid vs brute-force offset oracle") {
    Rng rng(8);
    int64_t H = 2, W = 2, P = 4, d = 3, heads = 2;
    Td q = Td::randn({1, heads, P, d}, rng);
    Td th = Td::randn({3, d}, rng);
    Td tw = Td::randn({3, d}, rng);
    Td out = relative_logits_2d(q, th, tw, H, W);
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t p = 0; p < P; ++p)
            for (int64_t p2 = 0; p2 < P; ++p2) {
                int64_t di = p2 / W - p / W + H - 1;
                int64_t dj = p2 % W - p % W + W - 1;
                double acc = 0;
                for (int64_t e = 0; e < d; ++e)
                    acc += q.value()[size_t((h * P + p) * d + e)] *
                           (th.value()[size_t(di * d + e)] + tw.value()[size_t(dj * d + e)]);
                CHECK(out.value()[size_t((h * P + p) * P + p2)] ==
                      doctest::Approx(acc).epsilon(1e-6));
            }
}

TEST_CASE("relative_logits grid mismatch raises") {
    Td q = Td::zeros({1, 1, 6, 2});
    Td th = Td::zeros({5, 2});
    Td tw = Td::zeros({3, 2});
    CHECK_THROWS_AS(relative_logits_2d(q, th, tw, 2, 2), ShapeError);
}

TEST_CASE("mhsa2d: paper-size shape and retained attention") {
    Rng rng(9);
    Mhsa2d<float> mhsa(256, 4, 32, 24, rng);
    Tf x = Tf::randn({1, 256, 32, 24}, rng, 0.05f);
    AttentionRecord<float> rec;
    Tf out = mhsa.forward(x, &rec);
    CHECK(out.shape() == Shape({1, 256, 32, 24}));
    REQUIRE(rec.mhsa.size() == 1);
    CHECK(rec.mhsa[0].heads == 4);
    CHECK(rec.mhsa[0].rows == 768);
    CHECK(rec.mhsa[0].cols == 768);
    // attention rows are stochastic
    for (int64_t h = 0; h < 4; ++h)
        for (int64_t r = 0; r < 768; r += 97) {
            double sum = 0;
            for (int64_t c = 0; c < 768; ++c) sum += double(rec.mhsa[0].at(0, h, r, c));
            CHECK(std::fabs(sum - 1.0) < 1e-5);
        }
}

TEST_CASE("mhsa2d: zero value path gives zero output") {
    Rng rng(10);
    Mhsa2d<float> mhsa(8, 2, 3, 2, rng);
    std::fill(mhsa.v_proj.w.value().begin(), mhsa.v_proj.w.value().end(), 0.0f);
    Tf x = Tf::randn({2, 8, 3, 2}, rng);
    Tf out = mhsa.forward(x, nullptr);
    for (float v : out.value()) CHECK(v == 0.0f);
}

TEST_CASE("mhsa2d: channels not divisible by heads raises") {
    Rng rng(11);
    CHECK_THROWS_AS(Mhsa2d<float>(9, 2, 2, 2, rng), ValueError);
}

TEST_CASE("mhsa2d: single-head 2x2 grid vs hand-unrolled attention") {
    Rng rng(12);
    int64_t C = 3, H = 2, W = 2, P = 4;
    Mhsa2d<double> mhsa(C, 1, H, W, rng);
    Td x = Td::randn({1, C, H, W}, rng);
    Td out = mhsa.forward(x, nullptr);

    // hand unroll: q/k/v are 1x1 convs = per-pixel matvecs
    auto proj = [&](const Conv2dLayer<double>& conv, int64_t p, int64_t c) {
        double acc = 0;
        for (int64_t i = 0; i < C; ++i)
            acc += conv.w.value()[size_t(c * C + i)] * x.value()[size_t(i * P + p)];
        return acc;
    };
    double scale_f = 1.0 / std::sqrt(double(C));
    std::vector<double> expect(size_t(C * P), 0.0);
    for (int64_t p = 0; p < P; ++p) {
        std::vector<double> logits(size_t(P), 0.0);
        for (int64_t p2 = 0; p2 < P; ++p2) {
            double content = 0;
            for (int64_t c = 0; c < C; ++c) content += proj(mhsa.q_proj, p, c) * proj(mhsa.k_proj, p2, c);
            double rel = 0;
            int64_t di = p2 / W - p / W + H - 1, dj = p2 % W - p % W + W - 1;
            for (int64_t c = 0; c < C; ++c)
                rel += proj(mhsa.q_proj, p, c) * (mhsa.rel_h.value()[size_t(di * C + c)] +
                                                  mhsa.rel_w.value()[size_t(dj * C + c)]);
            logits[size_t(p2)] = (content + rel) * scale_f;
        }
        double m = *std::max_element(logits.begin(), logits.end());
        double z = 0;
        for (double& l : logits) {
            l = std::exp(l - m);
            z += l;
        }
        for (double& l : logits) l /= z;
        for (int64_t c = 0; c < C; ++c) {
            double acc = 0;
            for (int64_t p2 = 0; p2 < P; ++p2) acc += logits[size_t(p2)] * proj(mhsa.v_proj, p2, c);
            expect[size_t(c * P + p)] = acc;
        }
    }
    for (int64_t i = 0; i < C * P; ++i)
        CHECK(out.value()[size_t(i)] == doctest::Approx(expect[size_t(i)]).epsilon(1e-5));
}

TEST_CASE("mhsa block group: C3A1 group 4 maps 1x512x32x24 -> 1x1024x32x24") {
    Rng rng(13);
    BlockGroupSpec spec{BlockKind::Mhsa, 256, 3, 1, 4};
    BlockGroup<float> group(512, spec, 32, 24, rng);
    Tf x = Tf::randn({1, 512, 32, 24}, rng, 0.05f);
    AttentionRecord<float> rec;
    Tf out = group.forward(x, false, &rec);
    CHECK(out.shape() == Shape({1, 1024, 32, 24}));
    CHECK(rec.mhsa.size() == 3);  // one retained map per MHSA block
}

TEST_CASE("mhsa block: zero MHSA path reduces to ReLU(residual)") {
    Rng rng(14);
    BottleneckBlock<float> block(8, 2, 1, BlockKind::Mhsa, 1, 2, 2, rng);
    REQUIRE(block.use_mhsa);
    ParamList<float> params;
    block.collect("b", params);
    zero_params(params);
    Tf x = Tf::randn({1, 8, 2, 2}, rng);
    Tf out = block.forward(x, false, nullptr);
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(out.value()[size_t(i)] == std::max(0.0f, x.value()[size_t(i)]));
}

TEST_CASE("backbone channel and spatial schedule matches the table") {
    Rng rng(15);
    std::vector<BlockGroupSpec> specs = {{BlockKind::Conv, 64, 3, 1, 0},
                                         {BlockKind::Conv, 96, 4, 2, 0},
                                         {BlockKind::Conv, 128, 6, 1, 0},
                                         {BlockKind::Mhsa, 256, 3, 1, 4}};
    Backbone<float> bb(256, 192, specs, rng);
    CHECK(bb.out_channels == 1024);
    CHECK(bb.out_h == 32);
    CHECK(bb.out_w == 24);
    CHECK(bb.groups[0].out_channels == 256);
    CHECK(bb.groups[1].out_channels == 384);
    CHECK(bb.groups[2].out_channels == 512);
}

TEST_CASE("mhsa strided block is rejected") {
    Rng rng(16);
    CHECK_THROWS_AS(BottleneckBlock<float>(8, 2, 2, BlockKind::Mhsa, 1, 2, 2, rng), ValueError);
}

TEST_CASE("fused attention_probs equals the composed matmul+rel+softmax route") {
    Rng rng(17);
    int64_t B = 2, heads = 2, H = 3, W = 2, P = 6, d = 4;
    Td q = Td::randn({B, heads, P, d}, rng);
    Td kT = Td::randn({B, heads, d, P}, rng);
    Td th = Td::randn({2 * H - 1, d}, rng);
    Td tw = Td::randn({2 * W - 1, d}, rng);
    double sc = 1.0 / std::sqrt(double(d));

    auto run = [&](bool fused, std::vector<double>& grads) {
        Td q2 = Td::from(q.shape(), q.value());
        Td k2 = Td::from(kT.shape(), kT.value());
        Td h2 = Td::from(th.shape(), th.value());
        Td w2 = Td::from(tw.shape(), tw.value());
        for (auto* t : {&q2, &k2, &h2, &w2}) t->set_requires_grad(true);
        Tape<double> tape;
        TapeScope<double> scope(tape);
        Td probs;
        if (fused) {
            probs = attention_probs(q2, k2, sc, &h2, &w2, H, W);
        } else {
            Td qs = scale(q2, sc);
            probs = softmax(add(matmul(qs, k2), relative_logits_2d(qs, h2, w2, H, W)), 3);
        }
        // fixed weighting so both routes propagate the same output gradient
        Rng wr(5);
        Td wts = Td::randn(probs.shape(), wr);
        tape.backward(sum_all(mul(probs, wts)));
        grads.clear();
        for (auto* t : {&q2, &k2, &h2, &w2})
            grads.insert(grads.end(), t->grad().begin(), t->grad().end());
        return probs.value();
    };
    std::vector<double> g_fused, g_composed;
    auto v_fused = run(true, g_fused);
    auto v_composed = run(false, g_composed);
    REQUIRE(v_fused.size() == v_composed.size());
    for (size_t i = 0; i < v_fused.size(); ++i)
        CHECK(v_fused[i] == doctest::Approx(v_composed[i]).epsilon(1e-9));
    REQUIRE(g_fused.size() == g_composed.size());
    for (size_t i = 0; i < g_fused.size(); ++i)
        CHECK(g_fused[i] == doctest::Approx(g_composed[i]).epsilon(1e-8));

    // without rel tables: plain scaled attention
    Td q3 = Td::from(q.shape(), q.value());
    Td k3 = Td::from(kT.shape(), kT.value());
    Td plain = attention_probs<double>(q3, k3, sc, nullptr, nullptr, 0, 0);
    Td ref = softmax(scale(matmul(q3, k3), sc), 3);
    for (int64_t i = 0; i < plain.numel(); ++i)
        CHECK(plain.value()[size_t(i)] ==
              doctest::Approx(ref.value()[size_t(i)]).epsilon(1e-9));
}
