#pragma once

#include "btk/conv.hpp"

namespace btk {

// Named parameter registry; registration order is the checkpoint order.
template <class T>
struct ParamList {
    std::vector<std::pair<std::string, Tensor<T>>> items;

    void add(const std::string& name, const Tensor<T>& t) { items.push_back({name, t}); }

    int64_t total_count() const {
        int64_t n = 0;
        for (const auto& [name, t] : items) n += t.numel();
        return n;
    }

    Tensor<T>* find(const std::string& name) {
        for (auto& [n, t] : items)
            if (n == name) return &t;
        return nullptr;
    }
};

template <class T>
struct Conv2dLayer {
    Tensor<T> w;  // [O, I, kh, kw]
    std::optional<Tensor<T>> b;
    int64_t stride = 1, padding = 0;

    Conv2dLayer() = default;
    Conv2dLayer(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride_, int64_t padding_,
                bool bias, Rng& rng)
        : stride(stride_), padding(padding_) {
        T std_ = T(std::sqrt(2.0 / double(in_ch * k * k)));
        w = Tensor<T>::randn({out_ch, in_ch, k, k}, rng, std_);
        w.set_requires_grad(true);
        if (bias) {
            b = Tensor<T>::zeros({out_ch});
            b->set_requires_grad(true);
        }
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, w, b, stride, padding); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.add(prefix + ".w", w);
        if (b) out.add(prefix + ".b", *b);
    }
};

template <class T>
struct ConvTranspose2dLayer {
    Tensor<T> w;  // [I, O, kh, kw]
    int64_t stride = 1, padding = 0;

    ConvTranspose2dLayer() = default;
    ConvTranspose2dLayer(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride_,
                         int64_t padding_, Rng& rng)
        : stride(stride_), padding(padding_) {
        T std_ = T(std::sqrt(2.0 / double(in_ch * k * k)));
        w = Tensor<T>::randn({in_ch, out_ch, k, k}, rng, std_);
        w.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv_transpose2d(x, w, stride, padding); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.add(prefix + ".w", w);
    }
};

template <class T>
struct BatchNorm2dLayer {
    Tensor<T> gamma, beta;
    Tensor<T> running_mean, running_var;  // buffers, not trained
    T eps = T(1e-5), momentum = T(0.1);

    BatchNorm2dLayer() = default;
    explicit BatchNorm2dLayer(int64_t channels) {
        gamma = Tensor<T>::filled({channels}, T(1));
        gamma.set_requires_grad(true);
        beta = Tensor<T>::zeros({channels});
        beta.set_requires_grad(true);
        running_mean = Tensor<T>::zeros({channels});
        running_var = Tensor<T>::filled({channels}, T(1));
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        return batch_norm2d(x, gamma, beta, running_mean, running_var, training, eps, momentum);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.add(prefix + ".gamma", gamma);
        out.add(prefix + ".beta", beta);
    }
    // running stats ride along in checkpoints but are not learnable
    void collect_buffers(const std::string& prefix, ParamList<T>& out) const {
        out.add(prefix + ".running_mean", running_mean);
        out.add(prefix + ".running_var", running_var);
    }
};

// y = x @ w + b with w stored [in, out]; applies over the last axis.
template <class T>
struct LinearLayer {
    Tensor<T> w, b;

    LinearLayer() = default;
    LinearLayer(int64_t in_dim, int64_t out_dim, Rng& rng) {
        T bound = T(1.0 / std::sqrt(double(in_dim)));
        w = Tensor<T>::rand_uniform({in_dim, out_dim}, rng, -bound, bound);
        w.set_requires_grad(true);
        b = Tensor<T>::zeros({out_dim});
        b.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return add(matmul(x, w), b); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.add(prefix + ".w", w);
        out.add(prefix + ".b", b);
    }
};

template <class T>
struct LayerNormLayer {
    Tensor<T> gamma, beta;

    LayerNormLayer() = default;
    explicit LayerNormLayer(int64_t dim) {
        gamma = Tensor<T>::filled({dim}, T(1));
        gamma.set_requires_grad(true);
        beta = Tensor<T>::zeros({dim});
        beta.set_requires_grad(true);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.add(prefix + ".gamma", gamma);
        out.add(prefix + ".beta", beta);
    }
};

}  // namespace btk
