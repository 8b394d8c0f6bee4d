#include <doctest.h>

#include "btk/losses.hpp"

using namespace btk;
using Tf = Tensor<float>;
using Td = Tensor<double>;

namespace {

// Independent log-domain Sinkhorn reference: plain double loops, no tape.
struct SinkhornRef {
    std::vector<double> plan;  // [P*P]
    double cost_dot = 0;
};

SinkhornRef sinkhorn_reference(const std::vector<double>& a, const std::vector<double>& b,
                               const std::vector<double>& cost, double eps, int iters) {
    int P = int(a.size());
    auto lse = [](const std::vector<double>& v) {
        double m = v[0];
        for (double x : v) m = std::max(m, x);
        double s = 0;
        for (double x : v) s += std::exp(x - m);
        return m + std::log(s);
    };
    std::vector<double> la(a.size()), lb(b.size());
    for (int i = 0; i < P; ++i) la[size_t(i)] = std::log(a[size_t(i)]);
    for (int i = 0; i < P; ++i) lb[size_t(i)] = std::log(b[size_t(i)]);
    std::vector<double> lu(a.size(), 0.0), lv(b.size(), 0.0);
    std::vector<double> row(a.size());
    for (int it = 0; it < iters; ++it) {
        for (int i = 0; i < P; ++i) {
            for (int j = 0; j < P; ++j) row[size_t(j)] = -cost[size_t(i * P + j)] / eps + lv[size_t(j)];
            lu[size_t(i)] = la[size_t(i)] - lse(row);
        }
        for (int j = 0; j < P; ++j) {
            for (int i = 0; i < P; ++i) row[size_t(i)] = -cost[size_t(i * P + j)] / eps + lu[size_t(i)];
            lv[size_t(j)] = lb[size_t(j)] - lse(row);
        }
    }
    SinkhornRef ref;
    ref.plan.resize(size_t(P * P));
    for (int i = 0; i < P; ++i)
        for (int j = 0; j < P; ++j) {
            double p = std::exp(lu[size_t(i)] - cost[size_t(i * P + j)] / eps + lv[size_t(j)]);
            ref.plan[size_t(i * P + j)] = p;
            ref.cost_dot += p * cost[size_t(i * P + j)];
        }
    return ref;
}

std::vector<double> normalized_random(Rng& rng, int n) {
    std::vector<double> v(size_t(n), 0.0);
    double s = 0;
    for (auto& x : v) {
        x = rng.uniform(0.05, 1.0);
        s += x;
    }
    for (auto& x : v) x /= s;
    return v;
}

}  // namespace

TEST_CASE("heatmap_mse identities") {
    Rng rng(1);
    Tf pred = Tf::randn({1, 3, 4, 4}, rng);
    std::vector<uint8_t> vis = {1, 1, 1};
    Tf zero = heatmap_mse(pred, pred, vis);
    CHECK(zero.item() == 0.0f);

    // pred = target + c everywhere -> c^2
    Tf target = add_scalar(pred, -0.5f);
    Tf l = heatmap_mse(pred, target, vis);
    CHECK(l.item() == doctest::Approx(0.25).epsilon(1e-5));
}

TEST_CASE("heatmap_mse random vs flat-loop oracle with invisible channels") {
    Rng rng(2);
    Tf pred = Tf::randn({2, 3, 4, 5}, rng);
    Tf target = Tf::randn({2, 3, 4, 5}, rng);
    std::vector<uint8_t> vis = {1, 0, 1, 0, 1, 1};
    Tf loss = heatmap_mse(pred, target, vis);
    double acc = 0;
    int64_t count = 0;
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t k = 0; k < 3; ++k) {
            if (!vis[size_t(n * 3 + k)]) continue;
            for (int64_t i = 0; i < 20; ++i) {
                double d = double(pred.value()[size_t((n * 3 + k) * 20 + i)]) -
                           double(target.value()[size_t((n * 3 + k) * 20 + i)]);
                acc += d * d;
                ++count;
            }
        }
    CHECK(double(loss.item()) == doctest::Approx(acc / double(count)).epsilon(1e-6));
}

TEST_CASE("heatmap_mse all-invisible warns and returns zero") {
    Tf pred = Tf::zeros({1, 2, 3, 3});
    std::vector<uint8_t> vis = {0, 0};
    bool warn = false;
    Tf loss = heatmap_mse(pred, pred, vis, &warn);
    CHECK(warn);
    CHECK(loss.item() == 0.0f);
}

TEST_CASE("heatmap_mse positivity: zero only at equality on visible channels") {
    Rng rng(3);
    Tf pred = Tf::randn({1, 2, 3, 3}, rng);
    Tf target = Tf::from(pred.shape(), pred.value());
    target.value()[0] += 0.1f;  // channel 0 differs
    std::vector<uint8_t> vis_all = {1, 1};
    CHECK(heatmap_mse(pred, target, vis_all).item() > 0.0f);
    std::vector<uint8_t> vis_masked = {0, 1};  // difference masked out
    CHECK(heatmap_mse(pred, target, vis_masked).item() == 0.0f);
}

TEST_CASE("sinkhorn cost grid: symmetric, zero diagonal, normalized") {
    Td cost = sinkhorn_cost_grid<double>(4, 4);
    int P = 16;
    for (int p = 0; p < P; ++p) {
        CHECK(cost.value()[size_t(p * P + p)] == 0.0);
        for (int q = 0; q < P; ++q)
            CHECK(cost.value()[size_t(p * P + q)] == cost.value()[size_t(q * P + p)]);
    }
    // corner to corner = 1 under diagonal normalization
    CHECK(cost.value()[size_t(0 * P + 15)] == doctest::Approx(1.0));
}

TEST_CASE("sinkhorn: identical one-hot maps transport for free") {
    Td pred = Td::filled({1, 1, 4, 4}, 0.0);
    pred.value()[5] = 1.0;
    std::vector<uint8_t> vis = {1};
    SinkhornParams<double> params;  // eps 0.05, n 3
    Td cost = sinkhorn_cost_grid<double>(4, 4);
    Td loss = sinkhorn_loss(pred, pred, vis, params, cost);
    CHECK(std::fabs(loss.item()) < 1e-6);
}

TEST_CASE("sinkhorn: one-cell move converges to the single-move cost") {
    Td pred = Td::filled({1, 1, 4, 4}, 0.0);
    Td target = Td::filled({1, 1, 4, 4}, 0.0);
    pred.value()[5] = 1.0;
    target.value()[6] = 1.0;  // one column apart
    std::vector<uint8_t> vis = {1};
    SinkhornParams<double> params;
    params.n_iters = 50;
    Td cost = sinkhorn_cost_grid<double>(4, 4);
    Td loss = sinkhorn_loss(pred, target, vis, params, cost);
    CHECK(std::fabs(loss.item() - 1.0 / 18.0) < 1e-4);
}

TEST_CASE("sinkhorn: n=50 marginals match inputs within 1e-6 on 4x4 grids") {
    Rng rng(7);
    Td cost = sinkhorn_cost_grid<double>(4, 4);
    int P = 16;
    for (int trial = 0; trial < 3; ++trial) {
        auto av = normalized_random(rng, P);
        auto bv = normalized_random(rng, P);
        Td a = Td::from({P}, std::vector<double>(av));
        Td b = Td::from({P}, std::vector<double>(bv));
        auto res = sinkhorn_transport(a, b, cost, 0.05, 50);
        for (int i = 0; i < P; ++i) {
            double row = 0, col = 0;
            for (int j = 0; j < P; ++j) {
                row += res.plan.value()[size_t(i * P + j)];
                col += res.plan.value()[size_t(j * P + i)];
            }
            CHECK(std::fabs(row - av[size_t(i)]) < 1e-6);
            CHECK(std::fabs(col - bv[size_t(i)]) < 1e-6);
        }
        // plan entries are nonnegative
        for (double v : res.plan.value()) CHECK(v >= 0.0);
    }
}

TEST_CASE("sinkhorn: n=3 trace matches the independent reference to 1e-6") {
    Rng rng(8);
    Td cost = sinkhorn_cost_grid<double>(4, 4);
    int P = 16;
    auto av = normalized_random(rng, P);
    auto bv = normalized_random(rng, P);
    Td a = Td::from({P}, std::vector<double>(av));
    Td b = Td::from({P}, std::vector<double>(bv));
    auto res = sinkhorn_transport(a, b, cost, 0.05, 3);
    auto ref = sinkhorn_reference(av, bv, cost.value(), 0.05, 3);
    CHECK(std::fabs(double(res.cost_dot.item()) - ref.cost_dot) < 1e-6);
    for (int i = 0; i < P * P; ++i)
        CHECK(std::fabs(res.plan.value()[size_t(i)] - ref.plan[size_t(i)]) < 1e-6);
}

TEST_CASE("sinkhorn: converged loss is symmetric under marginal swap") {
    Rng rng(9);
    Td cost = sinkhorn_cost_grid<double>(4, 4);
    int P = 16;
    auto av = normalized_random(rng, P);
    auto bv = normalized_random(rng, P);
    Td a = Td::from({P}, std::vector<double>(av));
    Td b = Td::from({P}, std::vector<double>(bv));
    double lab = sinkhorn_transport(a, b, cost, 0.05, 60).cost_dot.item();
    double lba = sinkhorn_transport(b, a, cost, 0.05, 60).cost_dot.item();
    CHECK(std::fabs(lab - lba) < 1e-6);
}

TEST_CASE("sinkhorn parameter validation") {
    Td cost = sinkhorn_cost_grid<double>(2, 2);
    Td a = Td::filled({4}, 0.25);
    CHECK_THROWS_AS(sinkhorn_transport(a, a, cost, -1.0, 3), ValueError);
    CHECK_THROWS_AS(sinkhorn_transport(a, a, cost, 0.05, 0), ValueError);
}
