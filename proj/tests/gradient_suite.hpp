#pragma once

// Finite-difference gradient suite shared by the unit tests and the
// acceptance runner. Every differentiable kernel plus composite paths (MHSA,
// encoder layer, losses, tiny end-to-end model) is probed in 64-bit mode
// with central differences against the tape gradients.

#include <map>

#include "btk/dino.hpp"
#include "btk/gradcheck.hpp"
#include "btk/losses.hpp"
#include "btk/model.hpp"

namespace gradient_suite {

using namespace btk;
using D = double;
using Td = Tensor<double>;

struct SuiteResult {
    bool pass = true;
    double worst = 0.0;
    std::string worst_case;
    std::vector<std::pair<std::string, FdReport>> reports;

    void merge(const std::string& name, const FdReport& r) {
        reports.push_back({name, r});
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            worst_case = name;
        }
        pass = pass && r.pass;
    }
};

using Fn = std::function<Td(std::vector<Td>&)>;

inline void run_case(SuiteResult& out, const std::string& name, int instances, uint64_t seed0,
                     const std::function<std::vector<Td>(Rng&)>& make_inputs, const Fn& f,
                     double tol = 1e-4) {
    for (int inst = 0; inst < instances; ++inst) {
        Rng rng(seed0 + uint64_t(inst) * 7919);
        std::vector<Td> inputs = make_inputs(rng);
        FdReport r = finite_diff_check<double>(f, std::move(inputs), 1e-5, tol, 160,
                                               seed0 * 31 + uint64_t(inst));
        out.merge(format(name, "#", inst), r);
    }
}

inline SuiteResult run(int instances = 10) {
    SuiteResult out;

    auto randn = [](Rng& rng, Shape s, double sd = 1.0) {
        return Td::randn(std::move(s), rng, sd);
    };

    // elementwise unary
    run_case(out, "relu", instances, 11,
             [&](Rng& rng) {
                 // probe away from the kink at 0
                 Td x = randn(rng, {3, 4});
                 for (auto& v : x.value())
                     if (std::fabs(v) < 0.1) v = v < 0 ? v - 0.15 : v + 0.15;
                 return std::vector<Td>{x};
             },
             [](std::vector<Td>& in) { return relu(in[0]); });
    run_case(out, "gelu", instances, 12,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {2, 5})}; },
             [](std::vector<Td>& in) { return gelu(in[0]); });
    run_case(out, "exp", instances, 13,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {6})}; },
             [](std::vector<Td>& in) { return exp(in[0]); });
    run_case(out, "log", instances, 14,
             [&](Rng& rng) {
                 Td x = Td::rand_uniform({6}, rng, 0.2, 3.0);
                 return std::vector<Td>{x};
             },
             [](std::vector<Td>& in) { return log(in[0]); });
    run_case(out, "sqrt", instances, 15,
             [&](Rng& rng) { return std::vector<Td>{Td::rand_uniform({5}, rng, 0.3, 4.0)}; },
             [](std::vector<Td>& in) { return sqrt(in[0]); });
    run_case(out, "rsqrt", instances, 16,
             [&](Rng& rng) { return std::vector<Td>{Td::rand_uniform({5}, rng, 0.3, 4.0)}; },
             [](std::vector<Td>& in) { return rsqrt(in[0]); });
    run_case(out, "neg_scale_addscalar", instances, 17,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {7})}; },
             [](std::vector<Td>& in) { return add_scalar(scale(neg(in[0]), 1.7), 0.3); });
    run_case(out, "clamp_min", instances, 18,
             [&](Rng& rng) {
                 Td x = randn(rng, {8});
                 for (auto& v : x.value())
                     if (std::fabs(v - 0.2) < 0.1) v += 0.25;  // keep away from the hinge
                 return std::vector<Td>{x};
             },
             [](std::vector<Td>& in) { return clamp_min(in[0], 0.2); });

    // broadcast binaries
    run_case(out, "add_broadcast", instances, 21,
             [&](Rng& rng) {
                 return std::vector<Td>{randn(rng, {2, 3, 4}), randn(rng, {3, 1})};
             },
             [](std::vector<Td>& in) { return add(in[0], in[1]); });
    run_case(out, "sub_broadcast", instances, 22,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {4, 5}), randn(rng, {5})}; },
             [](std::vector<Td>& in) { return sub(in[0], in[1]); });
    run_case(out, "mul_broadcast", instances, 23,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {2, 4}), randn(rng, {2, 1})}; },
             [](std::vector<Td>& in) { return mul(in[0], in[1]); });
    run_case(out, "div_broadcast", instances, 24,
             [&](Rng& rng) {
                 Td b = Td::rand_uniform({3}, rng, 0.5, 2.0);
                 return std::vector<Td>{randn(rng, {2, 3}), b};
             },
             [](std::vector<Td>& in) { return div(in[0], in[1]); });

    // views and reductions
    run_case(out, "reshape_permute", instances, 31,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {2, 3, 4})}; },
             [](std::vector<Td>& in) {
                 return reshape(permute(in[0], {2, 0, 1}), {3, 8});
             });
    run_case(out, "slice_front2", instances, 32,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {2, 3, 4})}; },
             [](std::vector<Td>& in) { return slice_front2(in[0], 1, 2); });
    run_case(out, "sum_axis", instances, 33,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {3, 4, 2})}; },
             [](std::vector<Td>& in) { return sum_axis(in[0], 1); });
    run_case(out, "sum_axis_keepdim", instances, 34,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {3, 4})}; },
             [](std::vector<Td>& in) { return sum_axis(in[0], 1, true); });
    run_case(out, "mean_all", instances, 35,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {3, 5})}; },
             [](std::vector<Td>& in) { return mean_all(in[0]); });

    // normalization / softmax family
    run_case(out, "softmax", instances, 41,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {3, 6})}; },
             [](std::vector<Td>& in) { return softmax(in[0], 1); });
    run_case(out, "softmax_axis0", instances, 42,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {4, 3})}; },
             [](std::vector<Td>& in) { return softmax(in[0], 0); });
    run_case(out, "logsumexp", instances, 43,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {4, 5})}; },
             [](std::vector<Td>& in) { return logsumexp(in[0], 1); });
    run_case(out, "layer_norm", instances, 44,
             [&](Rng& rng) {
                 return std::vector<Td>{randn(rng, {3, 6}), randn(rng, {6}, 0.5),
                                        randn(rng, {6}, 0.5)};
             },
             [](std::vector<Td>& in) { return layer_norm(in[0], in[1], in[2]); });

    // matmul
    run_case(out, "matmul", instances, 51,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {3, 4}), randn(rng, {4, 5})}; },
             [](std::vector<Td>& in) { return matmul(in[0], in[1]); });
    run_case(out, "matmul_batched", instances, 52,
             [&](Rng& rng) {
                 return std::vector<Td>{randn(rng, {2, 3, 2, 4}), randn(rng, {3, 4, 3})};
             },
             [](std::vector<Td>& in) { return matmul(in[0], in[1]); });

    // convolution family
    run_case(out, "conv2d", instances, 61,
             [&](Rng& rng) {
                 return std::vector<Td>{randn(rng, {1, 2, 5, 4}), randn(rng, {3, 2, 3, 3}),
                                        randn(rng, {3})};
             },
             [](std::vector<Td>& in) {
                 return conv2d(in[0], in[1], std::optional<Td>(in[2]), 1, 1);
             });
    run_case(out, "conv2d_stride2", instances, 62,
             [&](Rng& rng) {
                 return std::vector<Td>{randn(rng, {2, 3, 6, 5}), randn(rng, {2, 3, 3, 3})};
             },
             [](std::vector<Td>& in) {
                 return conv2d(in[0], in[1], 2, 1);
             });
    run_case(out, "conv_transpose2d", instances, 63,
             [&](Rng& rng) {
                 return std::vector<Td>{randn(rng, {1, 3, 3, 4}), randn(rng, {3, 2, 4, 4})};
             },
             [](std::vector<Td>& in) { return conv_transpose2d(in[0], in[1], 2, 1); });
    run_case(out, "batch_norm_train", instances, 64,
             [&](Rng& rng) {
                 return std::vector<Td>{randn(rng, {2, 3, 4, 3}), randn(rng, {3}, 0.5),
                                        randn(rng, {3}, 0.5)};
             },
             [](std::vector<Td>& in) {
                 // fresh stats per call so repeated FD evaluations see the
                 // same function
                 Td rm = Td::zeros({3});
                 Td rv = Td::filled({3}, 1.0);
                 return batch_norm2d(in[0], in[1], in[2], rm, rv, true);
             });
    run_case(out, "batch_norm_eval", instances, 65,
             [&](Rng& rng) {
                 return std::vector<Td>{randn(rng, {2, 3, 3, 3}), randn(rng, {3}, 0.5),
                                        randn(rng, {3}, 0.5)};
             },
             [](std::vector<Td>& in) {
                 Td rm = Td::filled({3}, 0.2);
                 Td rv = Td::filled({3}, 1.3);
                 return batch_norm2d(in[0], in[1], in[2], rm, rv, false);
             });
    run_case(out, "max_pool2d", instances, 66,
             [&](Rng& rng) {
                 // well-separated values keep the argmax stable under probing
                 Td x = Td::zeros({1, 2, 6, 6});
                 std::vector<int> perm(72);
                 for (int i = 0; i < 72; ++i) perm[size_t(i)] = i;
                 for (int i = 71; i > 0; --i)
                     std::swap(perm[size_t(i)], perm[size_t(rng.uniform_int(i + 1))]);
                 for (int i = 0; i < 72; ++i) x.value()[size_t(i)] = perm[size_t(i)] * 0.05;
                 return std::vector<Td>{x};
             },
             [](std::vector<Td>& in) { return max_pool2d(in[0], 3, 2, 1); });

    // attention-specific kernels
    run_case(out, "relative_logits_2d", instances, 71,
             [&](Rng& rng) {
                 return std::vector<Td>{randn(rng, {1, 2, 6, 3}), randn(rng, {5, 3}),
                                        randn(rng, {3, 3})};
             },
             [](std::vector<Td>& in) {
                 return relative_logits_2d(in[0], in[1], in[2], 3, 2);
             });

    // composites
    run_case(out, "mhsa2d_module", instances, 81,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {1, 4, 3, 2})}; },
             [](std::vector<Td>& in) {
                 Rng wr(99);
                 Mhsa2d<double> mhsa(4, 2, 3, 2, wr);
                 return mhsa.forward(in[0], nullptr);
             });
    run_case(out, "encoder_layer", instances, 82,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {1, 3, 4})}; },
             [](std::vector<Td>& in) {
                 Rng wr(98);
                 EncoderLayer<double> layer(4, 8, 2, wr);
                 return layer.forward(in[0], nullptr);
             });
    run_case(out, "heatmap_mse", instances, 83,
             [&](Rng& rng) {
                 return std::vector<Td>{randn(rng, {1, 3, 4, 4}), randn(rng, {1, 3, 4, 4})};
             },
             [](std::vector<Td>& in) {
                 std::vector<uint8_t> vis = {1, 0, 1};
                 return heatmap_mse(in[0], in[1], vis);
             });
    run_case(out, "sinkhorn_loss", instances, 84,
             [&](Rng& rng) {
                 return std::vector<Td>{Td::rand_uniform({1, 1, 3, 3}, rng, 0.05, 1.0),
                                        Td::rand_uniform({1, 1, 3, 3}, rng, 0.05, 1.0)};
             },
             [](std::vector<Td>& in) {
                 std::vector<uint8_t> vis = {1};
                 SinkhornParams<double> p;
                 p.epsilon = 0.1;
                 p.n_iters = 3;
                 return sinkhorn_loss(in[0], in[1], vis, p, sinkhorn_cost_grid<double>(3, 3));
             });
    run_case(out, "dino_loss", instances, 85,
             [&](Rng& rng) { return std::vector<Td>{randn(rng, {2, 5})}; },
             [](std::vector<Td>& in) {
                 Rng tr(4242);  // teacher logits and center are constants
                 Td teacher = Td::randn({2, 5}, tr);
                 Td center = Td::randn({5}, tr, 0.3);
                 return dino_loss(in[0], teacher, center, 0.1, 0.04);
             });

    return out;
}

// Tiny end-to-end model: FD over the input image and a probe subset of every
// parameter tensor.
inline SuiteResult run_end_to_end(int instances = 2) {
    SuiteResult out;
    for (int inst = 0; inst < instances; ++inst) {
        ModelSpec spec = ModelSpec::tiny();
        if (inst % 2 == 1) {
            // four-group variant: conv, conv, MHSA, MHSA with widths 4/6/8/16
            spec.n_conv_groups = 2;
            spec.n_mhsa_groups = 2;
            spec.widths = {4, 6, 8, 16};
            spec.blocks_per_group = {1, 1, 1, 1};
        }
        PoseModel<double> model(spec, 1234 + uint64_t(inst));
        Rng rng(55 + uint64_t(inst));
        Td img = Td::rand_uniform({1, 3, spec.input_h, spec.input_w}, rng, 0.0, 1.0);

        // inputs: image plus all parameters (finite_diff_check probes a
        // bounded random subset of each)
        std::vector<Td> inputs;
        inputs.push_back(img);
        ParamList<double> params = model.parameters();
        for (auto& [name, t] : params.items) inputs.push_back(t);

        ForwardOptions fwd;
        fwd.training = true;
        auto f = [&model, &fwd](std::vector<Td>& in) {
            // running BN stats are reset so every call sees the same function
            for (auto& [name, t] : model.buffers().items) {
                bool is_var = name.find("running_var") != std::string::npos;
                std::fill(t.value().begin(), t.value().end(), is_var ? 1.0 : 0.0);
            }
            return model.forward(in[0], fwd).heatmaps;
        };
        FdReport r = finite_diff_check<double>(f, std::move(inputs), 1e-5, 1e-4, 6,
                                               777 + uint64_t(inst));
        out.merge(format("tiny_end_to_end#", inst), r);
    }
    return out;
}

}  // namespace gradient_suite
