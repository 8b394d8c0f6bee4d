#include <doctest.h>

#include "btk/ops.hpp"

using namespace btk;
using Tf = Tensor<float>;
using Td = Tensor<double>;

TEST_CASE("matmul identity and hand arithmetic") {
    Tf eye = Tf::from({2, 2}, {1, 0, 0, 1});
    Tf a = Tf::from({2, 2}, {3, -1, 2, 5});
    Tf out = matmul(eye, a);
    for (int i = 0; i < 4; ++i) CHECK(out.value()[size_t(i)] == a.value()[size_t(i)]);

    Tf b = matmul(Tf::from({2, 2}, {1, 2, 3, 4}), Tf::from({2, 1}, {5, 6}));
    CHECK(b.value()[0] == doctest::Approx(17));
    CHECK(b.value()[1] == doctest::Approx(39));
}

TEST_CASE("matmul random vs triple-loop oracle") {
    Rng rng(42);
    Tf a = Tf::randn({3, 4}, rng);
    Tf b = Tf::randn({4, 5}, rng);
    Tf out = matmul(a, b);
    for (int m = 0; m < 3; ++m)
        for (int n = 0; n < 5; ++n) {
            double acc = 0;
            for (int k = 0; k < 4; ++k)
                acc += double(a.value()[size_t(m * 4 + k)]) * double(b.value()[size_t(k * 5 + n)]);
            CHECK(double(out.value()[size_t(m * 5 + n)]) == doctest::Approx(acc).epsilon(1e-6));
        }
}

TEST_CASE("matmul batched broadcast vs loop") {
    Rng rng(7);
    Tf a = Tf::randn({2, 3, 2, 4}, rng);
    Tf b = Tf::randn({3, 4, 3}, rng);  // broadcasts over the leading 2
    Tf out = matmul(a, b);
    REQUIRE(out.shape() == Shape({2, 3, 2, 3}));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
            for (int m = 0; m < 2; ++m)
                for (int n = 0; n < 3; ++n) {
                    double acc = 0;
                    for (int k = 0; k < 4; ++k)
                        acc += double(a.value()[size_t(((i * 3 + j) * 2 + m) * 4 + k)]) *
                               double(b.value()[size_t((j * 4 + k) * 3 + n)]);
                    CHECK(double(out.value()[size_t(((i * 3 + j) * 2 + m) * 3 + n)]) ==
                          doctest::Approx(acc).epsilon(1e-6));
                }
}

TEST_CASE("matmul inner mismatch raises") {
    Tf a = Tf::zeros({2, 3});
    Tf b = Tf::zeros({4, 2});
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("softmax uniform, analytic and shift invariance") {
    Tf u = softmax(Tf::zeros({4}), 0);
    for (float v : u.value()) CHECK(v == doctest::Approx(0.25));

    Tf x = Tf::from({2}, {0.0f, float(std::log(2.0))});
    Tf s = softmax(x, 0);
    CHECK(s.value()[0] == doctest::Approx(1.0 / 3).epsilon(1e-6));
    CHECK(s.value()[1] == doctest::Approx(2.0 / 3).epsilon(1e-6));

    // shift invariance in the 64-bit mode (x + 1000 would quantize the
    // inputs themselves in 32-bit)
    Rng rng(3);
    Td r = Td::randn({5, 7}, rng);
    Td shifted = add_scalar(r, 1000.0);
    Td a = softmax(r, 1), b = softmax(shifted, 1);
    for (int64_t i = 0; i < a.numel(); ++i)
        CHECK(a.value()[size_t(i)] ==
              doctest::Approx(b.value()[size_t(i)]).epsilon(1e-6));
    // rows sum to 1
    for (int row = 0; row < 5; ++row) {
        double sum = 0;
        for (int c = 0; c < 7; ++c) sum += a.value()[size_t(row * 7 + c)];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("layer_norm identities and hand formula") {
    Rng rng(9);
    Tf x = Tf::randn({4, 6}, rng);
    Tf gamma = Tf::filled({6}, 1.0f), beta = Tf::zeros({6});
    Tf out = layer_norm(x, gamma, beta);
    for (int r = 0; r < 4; ++r) {
        double mean = 0, var = 0;
        for (int c = 0; c < 6; ++c) mean += double(out.value()[size_t(r * 6 + c)]);
        mean /= 6;
        for (int c = 0; c < 6; ++c) {
            double d = double(out.value()[size_t(r * 6 + c)]) - mean;
            var += d * d;
        }
        var /= 6;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(std::fabs(var - 1.0) < 1e-4);
    }

    Tf cst = layer_norm(Tf::filled({1, 5}, 3.0f), Tf::filled({5}, 1.0f), Tf::filled({5}, 0.7f));
    for (float v : cst.value()) CHECK(v == doctest::Approx(0.7).epsilon(1e-6));

    // hand formula on one row
    Td xr = Td::from({1, 3}, {1.0, 2.0, 4.0});
    Td g1 = Td::from({3}, {1.5, 0.5, -1.0});
    Td b1 = Td::from({3}, {0.1, 0.2, 0.3});
    Td o = layer_norm(xr, g1, b1, 1e-5);
    double mean = 7.0 / 3.0;
    double var = ((1 - mean) * (1 - mean) + (2 - mean) * (2 - mean) + (4 - mean) * (4 - mean)) / 3;
    double is = 1.0 / std::sqrt(var + 1e-5);
    double expect0 = 1.5 * (1 - mean) * is + 0.1;
    double expect1 = 0.5 * (2 - mean) * is + 0.2;
    double expect2 = -1.0 * (4 - mean) * is + 0.3;
    CHECK(o.value()[0] == doctest::Approx(expect0).epsilon(1e-6));
    CHECK(o.value()[1] == doctest::Approx(expect1).epsilon(1e-6));
    CHECK(o.value()[2] == doctest::Approx(expect2).epsilon(1e-6));
}

TEST_CASE("logsumexp vs hand computation") {
    Td x = Td::from({2, 3}, {1, 2, 3, -1, 0, 1});
    Td l = logsumexp(x, 1);
    double e0 = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
    double e1 = std::log(std::exp(-1.0) + std::exp(0.0) + std::exp(1.0));
    CHECK(l.value()[0] == doctest::Approx(e0).epsilon(1e-12));
    CHECK(l.value()[1] == doctest::Approx(e1).epsilon(1e-12));
}

TEST_CASE("broadcast errors name the axis") {
    Tf a = Tf::zeros({2, 3});
    Tf b = Tf::zeros({4, 3});
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("axis 0"), ShapeError);
}

TEST_CASE("reshape and permute round trips") {
    Rng rng(5);
    Tf x = Tf::randn({2, 3, 4}, rng);
    Tf r = reshape(x, {4, -1});
    REQUIRE(r.shape() == Shape({4, 6}));
    Tf back = reshape(r, {2, 3, 4});
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(back.value()[size_t(i)] == x.value()[size_t(i)]);

    Tf p = permute(x, {2, 0, 1});
    REQUIRE(p.shape() == Shape({4, 2, 3}));
    CHECK(p.value()[0] == x.value()[0]);
    // spot check: p[i2][i0][i1] == x[i0][i1][i2]
    CHECK(p.value()[size_t((3 * 2 + 1) * 3 + 2)] == x.value()[size_t((1 * 3 + 2) * 4 + 3)]);
    Tf pp = permute(p, {1, 2, 0});
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(pp.value()[size_t(i)] == x.value()[size_t(i)]);

    CHECK_THROWS_AS(reshape(x, {5, 5}), ShapeError);
    CHECK_THROWS_AS(permute(x, {0, 0, 1}), ShapeError);
}

TEST_CASE("backward: analytic gradients") {
    // loss = sum x^2 -> grad = 2x exactly
    Tape<float> tape;
    TapeScope<float> scope(tape);
    Rng rng(11);
    Tf x = Tf::randn({5}, rng);
    x.set_requires_grad(true);
    Tf loss = sum_all(mul(x, x));
    tape.backward(loss);
    for (int i = 0; i < 5; ++i)
        CHECK(x.grad()[size_t(i)] == doctest::Approx(2.0f * x.value()[size_t(i)]).epsilon(1e-6));
}

TEST_CASE("backward: linear map gradient is column sums") {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    Rng rng(12);
    Tf A = Tf::randn({3, 4}, rng);
    Tf x = Tf::randn({4, 1}, rng);
    x.set_requires_grad(true);
    Tf loss = sum_all(matmul(A, x));
    tape.backward(loss);
    for (int c = 0; c < 4; ++c) {
        double col = 0;
        for (int r = 0; r < 3; ++r) col += double(A.value()[size_t(r * 4 + c)]);
        CHECK(double(x.grad()[size_t(c)]) == doctest::Approx(col).epsilon(1e-5));
    }
}

TEST_CASE("backward: repeated calls accumulate, non-scalar loss rejected") {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    Tf x = Tf::from({2}, {1.0f, 2.0f});
    x.set_requires_grad(true);
    Tf loss = sum_all(mul(x, x));
    tape.backward(loss);
    std::vector<float> g1 = x.grad();
    tape.backward(loss);
    for (int i = 0; i < 2; ++i)
        CHECK(x.grad()[size_t(i)] == doctest::Approx(2 * g1[size_t(i)]));

    Tf vec = mul(x, x);
    CHECK_THROWS_AS(tape.backward(vec), ValueError);
}

TEST_CASE("backward requires the loss to be on the tape") {
    Tape<float> tape;
    Tf x = Tf::from({1}, {2.0f});
    x.set_requires_grad(true);
    Tf y;
    {
        TapeScope<float> scope(tape);
        y = mul(x, x);
    }
    Tape<float> other;
    CHECK_THROWS_AS(other.backward(y), ValueError);
}

TEST_CASE("determinism: identical seeds give bit-identical results") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Tf x = Tf::randn({4, 8}, rng);
        Tf w = Tf::randn({8, 3}, rng);
        Tf y = softmax(matmul(x, w), 1);
        return y.value();
    };
    auto a = run(123), b = run(123);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tf::zeros({0, 2}), ShapeError);
    CHECK_THROWS_AS(Tf::from({2, 2}, {1.0f}), ShapeError);
    Tf t = Tf::zeros({2, 3});
    CHECK(t.numel() == 6);
    t.set_requires_grad(true);
    CHECK(t.grad().size() == 6);
}
