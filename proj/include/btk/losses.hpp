#pragma once

#include "btk/ops.hpp"

namespace btk {

// Mean squared error over the cells of visible-keypoint channels. Channels
// with visible[n*K + k] == 0 contribute neither to the numerator nor to the
// element count. All channels invisible yields loss 0 and sets the warning
// flag instead of raising.
template <class T>
Tensor<T> heatmap_mse(const Tensor<T>& pred, const Tensor<T>& target,
                      const std::vector<uint8_t>& visible, bool* all_invisible = nullptr) {
    check<ShapeError>(pred.shape() == target.shape(), "heatmap_mse: pred ",
                      shape_str(pred.shape()), " != target ", shape_str(target.shape()));
    check<ShapeError>(pred.rank() == 4, "heatmap_mse: expected [N,K,H,W], got ",
                      shape_str(pred.shape()));
    int64_t N = pred.dim(0), K = pred.dim(1), cells = pred.dim(2) * pred.dim(3);
    check<ShapeError>(int64_t(visible.size()) == N * K, "heatmap_mse: visibility mask length ",
                      visible.size(), " != N*K = ", N * K);
    Tensor<T> mask = Tensor<T>::zeros({N, K, 1, 1});
    int64_t n_vis = 0;
    for (int64_t i = 0; i < N * K; ++i)
        if (visible[size_t(i)]) {
            mask.value()[size_t(i)] = T(1);
            ++n_vis;
        }
    if (all_invisible) *all_invisible = n_vis == 0;
    Tensor<T> d = sub(pred, target);
    Tensor<T> masked = mul(mul(d, d), mask);
    T denom = T(std::max<int64_t>(n_vis, 1) * cells);
    return scale(sum_all(masked), T(1) / denom);
}

template <class T>
struct SinkhornParams {
    T epsilon = T(0.05);
    int64_t n_iters = 3;
};

// Squared Euclidean distance between grid-cell centers, normalized by the
// squared grid diagonal so the largest move costs 1. Symmetric with a zero
// diagonal.
template <class T>
Tensor<T> sinkhorn_cost_grid(int64_t H, int64_t W) {
    int64_t P = H * W;
    T diag2 = T(std::max<int64_t>((H - 1) * (H - 1) + (W - 1) * (W - 1), 1));
    Tensor<T> cost = Tensor<T>::zeros({P, P});
    T* cv = cost.value().data();
    for (int64_t p = 0; p < P; ++p) {
        int64_t pi = p / W, pj = p % W;
        for (int64_t q = 0; q < P; ++q) {
            int64_t qi = q / W, qj = q % W;
            cv[p * P + q] = T((pi - qi) * (pi - qi) + (pj - qj) * (pj - qj)) / diag2;
        }
    }
    return cost;
}

template <class T>
struct SinkhornTransport {
    Tensor<T> cost_dot;   // scalar <plan, cost>, differentiable
    Tensor<T> plan;       // [P x P], differentiable
};

// Entropic OT between two probability vectors on the cells of a grid, by
// log-domain Sinkhorn scaling on the Gibbs kernel exp(-cost/eps). One
// iteration is a u-update followed by a v-update, starting from v = 1.
template <class T>
SinkhornTransport<T> sinkhorn_transport(const Tensor<T>& a, const Tensor<T>& b,
                                        const Tensor<T>& cost, T eps, int64_t n_iters) {
    check<ValueError>(eps > T(0), "sinkhorn: epsilon must be > 0");
    check<ValueError>(n_iters >= 1, "sinkhorn: n_iters must be >= 1");
    int64_t P = a.numel();
    check<ShapeError>(b.numel() == P, "sinkhorn: marginal lengths differ (", P, " vs ", b.numel(),
                      ")");
    check<ShapeError>(cost.rank() == 2 && cost.dim(0) == P && cost.dim(1) == P,
                      "sinkhorn: cost must be [", P, "x", P, "], got ", shape_str(cost.shape()));
    Tensor<T> log_a = log(a);
    Tensor<T> log_b = log(b);
    Tensor<T> log_kernel = scale(cost, T(-1) / eps);  // cost is a constant
    Tensor<T> log_u, log_v = Tensor<T>::zeros({P});
    for (int64_t it = 0; it < n_iters; ++it) {
        log_u = sub(log_a, logsumexp(add(log_kernel, log_v), 1));
        log_v = sub(log_b, logsumexp(add(log_kernel, reshape(log_u, {P, 1})), 0));
    }
    Tensor<T> log_plan = add(add(log_kernel, reshape(log_u, {P, 1})), log_v);
    SinkhornTransport<T> result;
    result.plan = exp(log_plan);
    result.cost_dot = sum_all(mul(result.plan, cost));
    check<ValueError>(std::isfinite(double(result.cost_dot.item())),
                      "sinkhorn: non-finite transport cost; consider a larger epsilon");
    return result;
}

// Sinkhorn heatmap loss: each visible channel is floored at 1e-8,
// renormalized to a distribution, and transported onto the target channel;
// per-channel costs are summed, then averaged over batch samples.
template <class T>
Tensor<T> sinkhorn_loss(const Tensor<T>& pred, const Tensor<T>& target,
                        const std::vector<uint8_t>& visible, const SinkhornParams<T>& params,
                        const Tensor<T>& cost) {
    check<ShapeError>(pred.shape() == target.shape(), "sinkhorn_loss: pred ",
                      shape_str(pred.shape()), " != target ", shape_str(target.shape()));
    check<ShapeError>(pred.rank() == 4, "sinkhorn_loss: expected [N,K,H,W], got ",
                      shape_str(pred.shape()));
    int64_t N = pred.dim(0), K = pred.dim(1), P = pred.dim(2) * pred.dim(3);
    check<ShapeError>(int64_t(visible.size()) == N * K, "sinkhorn_loss: visibility mask length ",
                      visible.size(), " != N*K = ", N * K);
    auto to_distribution = [&](const Tensor<T>& maps, int64_t n, int64_t k) {
        Tensor<T> flat = reshape(slice_front2(maps, n, k), {P});
        Tensor<T> floored = clamp_min(flat, T(1e-8));
        return div(floored, sum_all(floored));
    };
    Tensor<T> total = Tensor<T>::scalar(T(0));
    for (int64_t n = 0; n < N; ++n)
        for (int64_t k = 0; k < K; ++k) {
            if (!visible[size_t(n * K + k)]) continue;
            Tensor<T> a = to_distribution(pred, n, k);
            Tensor<T> b = to_distribution(target, n, k);
            total = add(total, sinkhorn_transport(a, b, cost, params.epsilon,
                                                  params.n_iters).cost_dot);
        }
    return scale(total, T(1) / T(N));
}

}  // namespace btk
