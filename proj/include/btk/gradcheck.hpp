#pragma once

#include "btk/ops.hpp"

namespace btk {

struct FdReport {
    double max_rel_err = 0.0;
    bool pass = false;
    int64_t probes = 0;
};

// Central-difference gradient check. `f` maps the input list to an output
// tensor; non-scalar outputs are reduced to a scalar with fixed random
// weights so a single backward covers every output element. Inputs up to
// `max_probes_per_input` elements are probed exhaustively, larger ones on a
// deterministic random subset. Intended for the 64-bit instantiation.
template <class T>
FdReport finite_diff_check(const std::function<Tensor<T>(std::vector<Tensor<T>>&)>& f,
                           std::vector<Tensor<T>> inputs, double h = 1e-5, double tol = 1e-4,
                           int64_t max_probes_per_input = 256, uint64_t probe_seed = 17) {
    for (auto& in : inputs) in.set_requires_grad(true);

    Rng wrng(probe_seed);
    std::vector<T> weights;
    auto reduce = [&](const Tensor<T>& y) -> Tensor<T> {
        if (weights.empty()) {
            weights.resize(size_t(y.numel()));
            for (auto& w : weights) w = T(wrng.uniform(-1.0, 1.0));
        }
        Tensor<T> wt = Tensor<T>::from(y.shape(), weights);
        return sum_all(mul(y, wt));
    };

    // analytic gradients
    Tape<T> tape;
    {
        TapeScope<T> scope(tape);
        Tensor<T> loss = reduce(f(inputs));
        tape.backward(loss);
    }

    auto eval_scalar = [&](std::vector<Tensor<T>>& ins) -> double {
        NoGradScope<T> ng;
        return double(reduce(f(ins)).item());
    };

    FdReport report;
    report.pass = true;
    Rng prng(probe_seed ^ 0xabcdef12345ull);
    for (size_t ii = 0; ii < inputs.size(); ++ii) {
        int64_t n = inputs[ii].numel();
        std::vector<int64_t> probes;
        if (n <= max_probes_per_input) {
            probes.resize(size_t(n));
            for (int64_t i = 0; i < n; ++i) probes[size_t(i)] = i;
        } else {
            for (int64_t i = 0; i < max_probes_per_input; ++i)
                probes.push_back(prng.uniform_int(n));
        }
        for (int64_t e : probes) {
            T saved = inputs[ii].value()[size_t(e)];
            inputs[ii].value()[size_t(e)] = saved + T(h);
            double fp = eval_scalar(inputs);
            inputs[ii].value()[size_t(e)] = saved - T(h);
            double fm = eval_scalar(inputs);
            inputs[ii].value()[size_t(e)] = saved;
            double numeric = (fp - fm) / (2.0 * h);
            double analytic = double(inputs[ii].grad()[size_t(e)]);
            double denom = std::max({std::fabs(numeric), std::fabs(analytic), 1.0});
            double rel = std::fabs(numeric - analytic) / denom;
            report.max_rel_err = std::max(report.max_rel_err, rel);
            ++report.probes;
        }
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

}  // namespace btk
