#pragma once

#include "btk/nn.hpp"

namespace btk {

// Adam with bias correction; weight decay is classic L2 (added to the raw
// gradient before the moment updates).
template <class T>
class Adam {
public:
    Adam() = default;
    Adam(std::vector<Tensor<T>> params, T beta1 = T(0.9), T beta2 = T(0.99),
         T weight_decay = T(0), T eps = T(1e-8))
        : params_(std::move(params)), b1_(beta1), b2_(beta2), wd_(weight_decay), eps_(eps) {
        slots_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            check<ValueError>(params_[i].requires_grad(),
                              "Adam: parameter without requires_grad at index ", i);
            slots_[i].m.assign(size_t(params_[i].numel()), T(0));
            slots_[i].v.assign(size_t(params_[i].numel()), T(0));
        }
    }

    explicit Adam(const ParamList<T>& params, T beta1 = T(0.9), T beta2 = T(0.99),
                  T weight_decay = T(0))
        : Adam(values_of(params), beta1, beta2, weight_decay) {}

    void step(T lr) {
        ++t_;
        T bc1 = T(1) - T(std::pow(double(b1_), double(t_)));
        T bc2 = T(1) - T(std::pow(double(b2_), double(t_)));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            auto& s = slots_[i];
            T* w = p.value().data();
            const T* g = p.grad().data();
            for (size_t e = 0; e < p.value().size(); ++e) {
                T grad = g[e] + wd_ * w[e];
                s.m[e] = b1_ * s.m[e] + (T(1) - b1_) * grad;
                s.v[e] = b2_ * s.v[e] + (T(1) - b2_) * grad * grad;
                T mhat = s.m[e] / bc1;
                T vhat = s.v[e] / bc2;
                w[e] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    int64_t step_count() const { return t_; }

private:
    struct Slot {
        std::vector<T> m, v;
    };

    static std::vector<Tensor<T>> values_of(const ParamList<T>& params) {
        std::vector<Tensor<T>> out;
        for (const auto& [name, t] : params.items) out.push_back(t);
        return out;
    }

    std::vector<Tensor<T>> params_;
    std::vector<Slot> slots_;
    T b1_ = T(0.9), b2_ = T(0.99), wd_ = T(0), eps_ = T(1e-8);
    int64_t t_ = 0;
};

// Step-decay schedule: the rate is multiplied by `factor` once per boundary
// the epoch has passed.
inline double scheduled_lr(double base_lr, double factor, const std::vector<int64_t>& boundaries,
                           double epoch) {
    double lr = base_lr;
    for (int64_t b : boundaries)
        if (epoch >= double(b)) lr *= factor;
    return lr;
}

}  // namespace btk
