#pragma once

#include <algorithm>
#include <functional>
#include <memory>

#include "btk/common.hpp"

namespace btk {

// N-dimensional tensor backing store. `grad` is allocated (zeroed, same
// length as `value`) iff the tensor participates in gradient tracking.
template <class T>
struct TensorData {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    bool leaf = false;  // user-created input/parameter, grads persist across backward calls
    int node_id = -1;   // position on the recording tape, -1 when untracked
};

// Value-semantics handle over shared TensorData. Ops are free functions that
// read inputs and produce fresh outputs; recorded nodes keep inputs alive.
template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorData<T>> d) : d_(std::move(d)) {}

    static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }

    static Tensor filled(Shape shape, T v) {
        auto d = std::make_shared<TensorData<T>>();
        check_extents(shape);
        d->value.assign(size_t(shape_numel(shape)), v);
        d->shape = std::move(shape);
        return Tensor(std::move(d));
    }

    static Tensor from(Shape shape, std::vector<T> values) {
        check_extents(shape);
        check<ShapeError>(int64_t(values.size()) == shape_numel(shape),
                          "tensor: data length ", values.size(),
                          " does not match shape ", shape_str(shape));
        auto d = std::make_shared<TensorData<T>>();
        d->shape = std::move(shape);
        d->value = std::move(values);
        return Tensor(std::move(d));
    }

    static Tensor scalar(T v) { return from({1}, {v}); }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.value()) v = T(rng.normal()) * stddev;
        return t;
    }

    static Tensor rand_uniform(Shape shape, Rng& rng, T lo, T hi) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.value()) v = T(rng.uniform(double(lo), double(hi)));
        return t;
    }

    bool defined() const { return bool(d_); }
    const Shape& shape() const { return d_->shape; }
    int64_t rank() const { return int64_t(d_->shape.size()); }
    int64_t dim(int64_t i) const { return d_->shape[size_t(i)]; }
    int64_t numel() const { return int64_t(d_->value.size()); }

    std::vector<T>& value() { return d_->value; }
    const std::vector<T>& value() const { return d_->value; }
    std::vector<T>& grad() { return d_->grad; }
    const std::vector<T>& grad() const { return d_->grad; }

    bool requires_grad() const { return d_->requires_grad; }
    bool is_leaf() const { return d_->leaf; }

    // Marks a user-created tensor as a differentiable leaf.
    Tensor& set_requires_grad(bool on = true) {
        d_->requires_grad = on;
        d_->leaf = on;
        if (on)
            d_->grad.assign(d_->value.size(), T(0));
        else
            d_->grad.clear();
        return *this;
    }

    void zero_grad() {
        if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), T(0));
    }

    T item() const {
        check<ValueError>(numel() == 1, "item: tensor has ", numel(), " elements, expected 1");
        return d_->value[0];
    }

    const std::shared_ptr<TensorData<T>>& ptr() const { return d_; }

private:
    static void check_extents(const Shape& shape) {
        for (size_t i = 0; i < shape.size(); ++i)
            check<ShapeError>(shape[i] >= 1, "tensor: extent ", shape[i], " at axis ", i,
                              " must be >= 1");
    }

    std::shared_ptr<TensorData<T>> d_;
};

// Recording tape for reverse-mode differentiation. Nodes are appended in
// execution order, which is a valid topological order by construction.
// Single-owner: never share one tape across threads.
template <class T>
class Tape {
public:
    struct Node {
        std::shared_ptr<TensorData<T>> out;
        std::function<void()> backward;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape*& current_slot() {
        thread_local Tape* cur = nullptr;
        return cur;
    }
    static Tape* current() { return current_slot(); }

    // Registers `out` as produced by a recorded op whose backward is `fn`.
    void record(const std::shared_ptr<TensorData<T>>& out, std::function<void()> fn) {
        out->requires_grad = true;
        out->leaf = false;
        out->grad.assign(out->value.size(), T(0));
        out->node_id = int(nodes_.size());
        nodes_.push_back(Node{out, std::move(fn)});
    }

    // Reverse sweep from a scalar loss. Non-leaf gradients are reset each
    // call; leaf gradients accumulate until zeroed by the caller.
    void backward(const Tensor<T>& loss) {
        check<ValueError>(loss.numel() == 1, "backward: loss must be scalar, got shape ",
                          shape_str(loss.shape()));
        const auto& ld = loss.ptr();
        check<ValueError>(ld->requires_grad, "backward: loss does not require grad");
        if (!ld->leaf) {
            check<ValueError>(ld->node_id >= 0 && size_t(ld->node_id) < nodes_.size() &&
                                  nodes_[size_t(ld->node_id)].out == ld,
                              "backward: loss is not recorded on this tape");
        }
        for (auto& n : nodes_)
            if (!n.out->leaf) std::fill(n.out->grad.begin(), n.out->grad.end(), T(0));
        ld->grad[0] += T(1);
        for (size_t i = nodes_.size(); i-- > 0;) nodes_[i].backward();
    }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

// RAII activation of a tape as the thread's current recording target.
template <class T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::current_slot()) {
        Tape<T>::current_slot() = &tape;
    }
    ~TapeScope() { Tape<T>::current_slot() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* prev_;
};

// Temporarily disables recording (used for teacher forwards and eval paths).
template <class T>
class NoGradScope {
public:
    NoGradScope() : prev_(Tape<T>::current_slot()) { Tape<T>::current_slot() = nullptr; }
    ~NoGradScope() { Tape<T>::current_slot() = prev_; }

private:
    Tape<T>* prev_;
};

namespace detail {
template <class T>
inline bool any_requires_grad(const Tensor<T>& t) {
    return t.requires_grad();
}
template <class T, class... Rest>
inline bool any_requires_grad(const Tensor<T>& t, const Rest&... rest) {
    return t.requires_grad() || any_requires_grad(rest...);
}
}  // namespace detail

// True when a tape is active and at least one input participates in autodiff.
template <class T, class... Rest>
inline bool tracked(const Tensor<T>& t, const Rest&... rest) {
    return Tape<T>::current() != nullptr && detail::any_requires_grad(t, rest...);
}

template <class T>
inline bool wants_grad(const std::shared_ptr<TensorData<T>>& d) {
    return d->requires_grad && !d->grad.empty();
}

}  // namespace btk
