#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "btk/explain.hpp"
#include "btk/synth.hpp"

using namespace btk;
using Tf = Tensor<float>;

namespace {

AttentionRecord<float> make_record(int64_t heads, int64_t gh, int64_t gw,
                                   const std::function<float(int64_t, int64_t, int64_t)>& fill) {
    AttentionRecord<float> rec;
    rec.grid_h = gh;
    rec.grid_w = gw;
    int64_t L = gh * gw;
    AttentionRecord<float>::Map m;
    m.batch = 1;
    m.heads = heads;
    m.rows = L;
    m.cols = L;
    m.data.resize(size_t(heads * L * L));
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t r = 0; r < L; ++r)
            for (int64_t c = 0; c < L; ++c)
                m.data[size_t((h * L + r) * L + c)] = fill(h, r, c);
    rec.encoder.push_back(m);
    rec.mhsa.push_back(std::move(m));
    return rec;
}

}  // namespace

TEST_CASE("keypoint_to_token: corners and the exhaustive inverse map") {
    CHECK(keypoint_to_token(0.0f, 0.0f, 256, 192, 32, 24) == 0);
    // far corner: (188, 252) -> grid col 23, row 31 -> token 767
    CHECK(keypoint_to_token(188.0f, 252.0f, 256, 192, 32, 24) == 767);
    // out-of-range coordinates clamp
    CHECK(keypoint_to_token(-5.0f, -5.0f, 256, 192, 32, 24) == 0);
    CHECK(keypoint_to_token(500.0f, 500.0f, 256, 192, 32, 24) == 767);

    // 100 random keypoints: inverse-mapping the token recovers the cell
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        float x = float(rng.uniform(0, 192));
        float y = float(rng.uniform(0, 256));
        int64_t token = keypoint_to_token(x, y, 256, 192, 32, 24);
        int64_t row = token / 24, col = token % 24;
        CHECK(col == int64_t(x / 8.0f));
        CHECK(row == int64_t(y / 8.0f));
    }
}

TEST_CASE("dependency_map: identity attention gives a one-hot map") {
    auto rec = make_record(2, 4, 3, [](int64_t, int64_t r, int64_t c) {
        return r == c ? 1.0f : 0.0f;
    });
    DependencyMap dep = dependency_map(rec, AttentionSource::Encoder, -1, 7);
    REQUIRE(dep.p.size() == 12);
    for (int64_t i = 0; i < 12; ++i) CHECK(dep.p[size_t(i)] == (i == 7 ? 1.0f : 0.0f));
}

TEST_CASE("dependency_map: uniform attention gives the uniform map") {
    auto rec = make_record(3, 4, 3, [](int64_t, int64_t, int64_t) { return 1.0f / 12.0f; });
    DependencyMap dep = dependency_map(rec, AttentionSource::Mhsa, -1, 5);
    for (float v : dep.p) CHECK(v == doctest::Approx(1.0f / 12.0f));
}

TEST_CASE("dependency_map: row-stochastic input stays a distribution; head mean = mean of rows") {
    Rng rng(2);
    int64_t heads = 3, gh = 4, gw = 3, L = 12;
    // random row-stochastic attention
    auto rec = make_record(heads, gh, gw, [&](int64_t, int64_t, int64_t) {
        return float(rng.uniform(0.0, 1.0));
    });
    auto& m = rec.encoder[0];
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t r = 0; r < L; ++r) {
            float s = 0;
            for (int64_t c = 0; c < L; ++c) s += m.data[size_t((h * L + r) * L + c)];
            for (int64_t c = 0; c < L; ++c) m.data[size_t((h * L + r) * L + c)] /= s;
        }
    int64_t token = 9;
    DependencyMap dep = dependency_map(rec, AttentionSource::Encoder, 0, token);
    double sum = 0;
    for (float v : dep.p) {
        CHECK(v >= 0.0f);
        sum += double(v);
    }
    CHECK(std::fabs(sum - 1.0) < 1e-6);
    // equals the hand-extracted head-averaged row
    for (int64_t c = 0; c < L; ++c) {
        double expect = 0;
        for (int64_t h = 0; h < heads; ++h) expect += double(m.at(0, h, token, c));
        expect /= double(heads);
        CHECK(double(dep.p[size_t(c)]) == doctest::Approx(expect).epsilon(1e-6));
    }
    // single-head extraction
    DependencyMap one = dependency_map(rec, AttentionSource::Encoder, 0, token, 1);
    for (int64_t c = 0; c < L; ++c)
        CHECK(one.p[size_t(c)] == m.at(0, 1, token, c));
}

TEST_CASE("dependency_map: missing record raises") {
    AttentionRecord<float> empty;
    empty.grid_h = 4;
    empty.grid_w = 3;
    CHECK_THROWS_AS(dependency_map(empty, AttentionSource::Mhsa, -1, 0), ValueError);
}

TEST_CASE("render_overlay: deterministic bytes, zero and one-hot maps") {
    PoseSample s = generate_sample(123, 64, 48);  // small image for speed
    AttentionRecord<float> rec;
    rec.grid_h = 8;
    rec.grid_w = 6;

    DependencyMap zero;
    zero.grid_h = 8;
    zero.grid_w = 6;
    zero.p.assign(48, 0.0f);
    render_overlay(s.image, zero, 24.0f, 32.0f, nullptr, "test_overlay_zero.ppm");

    DependencyMap onehot = zero;
    onehot.p[size_t(3 * 6 + 2)] = 1.0f;
    render_overlay(s.image, onehot, 24.0f, 32.0f, nullptr, "test_overlay_onehot.ppm");
    render_overlay(s.image, onehot, 24.0f, 32.0f, nullptr, "test_overlay_onehot2.ppm");

    auto slurp = [](const std::string& p) {
        std::ifstream is(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(is)),
                           std::istreambuf_iterator<char>());
    };
    std::string a = slurp("test_overlay_onehot.ppm");
    std::string b = slurp("test_overlay_onehot2.ppm");
    CHECK(a == b);          // byte-identical rerun
    CHECK(!a.empty());
    CHECK(a != slurp("test_overlay_zero.ppm"));  // the map actually shows up

    std::remove("test_overlay_zero.ppm");
    std::remove("test_overlay_onehot.ppm");
    std::remove("test_overlay_onehot2.ppm");
}

TEST_CASE("render_overlay golden file") {
    // fixed synthetic input -> byte-identical against the captured golden
    PoseSample s = generate_sample(7, 64, 48);
    DependencyMap dep;
    dep.grid_h = 8;
    dep.grid_w = 6;
    dep.p.assign(48, 0.0f);
    for (int i = 0; i < 48; ++i) dep.p[size_t(i)] = float(i) / (47.0f * 24.5f);
    render_overlay(s.image, dep, 20.0f, 30.0f, &s.keypoints, "test_overlay_golden_now.ppm");

    std::string golden_path = std::string(BTK_TEST_DIR) + "/golden/overlay_small.ppm";
    std::ifstream golden(golden_path, std::ios::binary);
    if (!golden.good()) {
        // first verified run captures the golden
        std::ifstream now("test_overlay_golden_now.ppm", std::ios::binary);
        std::ofstream out(golden_path, std::ios::binary);
        out << now.rdbuf();
        MESSAGE("golden captured at ", golden_path);
    } else {
        std::string want((std::istreambuf_iterator<char>(golden)),
                         std::istreambuf_iterator<char>());
        std::ifstream now("test_overlay_golden_now.ppm", std::ios::binary);
        std::string got((std::istreambuf_iterator<char>(now)), std::istreambuf_iterator<char>());
        CHECK(got == want);
    }
    std::remove("test_overlay_golden_now.ppm");
}
