// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0
//
// dense row-major tensors with tape-based reverse-mode autodiff.
// float for normal runs, double for gradient-check oracles; both are explicit
// template instantiations of the same code. graphs are built eagerly by the op
// functions below and torn down by backward(), which releases parent edges as
// it walks so a graph can be consumed exactly once.

#pragma once

#include "hass/error.hpp"
#include "hass/mask.hpp"
#include "hass/rng.hpp"

#include <cstdint>
#include <type_traits>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace hass {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape & s) {
    int64_t n = 1;
    for (int d : s) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape & s);

namespace autodiff {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;
    bool requires_grad = false;
    bool consumed = false; // backward already ran through this node
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node &)> backward_fn;

    std::vector<T> & ensure_grad() {
        if (grad.size() != values.size()) {
            grad.assign(values.size(), T(0));
        }
        return grad;
    }
};

// thread-local flag: when false, ops produce plain values with no graph edges
bool & grad_mode();

} // namespace autodiff

struct NoGradGuard {
    NoGradGuard() : prev_(autodiff::grad_mode()) { autodiff::grad_mode() = false; }
    ~NoGradGuard() { autodiff::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard & operator=(const NoGradGuard &) = delete;

  private:
    bool prev_;
};

template <typename T>
class TensorT {
  public:
    using value_type = T;

    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false);
    static TensorT full(Shape shape, T value, bool requires_grad = false);
    static TensorT from_values(Shape shape, std::vector<T> values, bool requires_grad = false);
    static TensorT scalar(T value, bool requires_grad = false);
    static TensorT randn(Shape shape, Rng & rng, T stddev, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape & shape() const { return check_()->shape; }
    int dim(int i) const { return check_()->shape.at(i); }
    int64_t numel() const { return (int64_t) check_()->values.size(); }
    int rows() const;
    int cols() const;
    T item() const;

    std::span<const T> values() const { return {check_()->values.data(), check_()->values.size()}; }
    std::span<const T> row_values(int r) const;
    // in-place access for leaf tensors (parameters, data buffers); interior graph
    // nodes are immutable
    std::span<T> values_mut();

    bool requires_grad() const { return check_()->requires_grad; }
    void set_requires_grad(bool v);
    bool has_grad() const { return defined() && !node_->grad.empty(); }
    std::span<const T> grad() const;
    std::span<T> grad_mut();
    void zero_grad() { if (defined()) node_->grad.clear(); }

    // gradient-isolated copy: same values, fresh leaf, no graph edges
    TensorT detach() const;
    TensorT clone() const { return detach(); }

    template <typename U>
    TensorT<U> cast() const {
        const auto & v = check_()->values;
        std::vector<U> out(v.size());
        for (size_t i = 0; i < v.size(); ++i) {
            out[i] = (U) v[i];
        }
        return TensorT<U>::from_values(check_()->shape, std::move(out));
    }

    std::shared_ptr<autodiff::Node<T>> node() const { return node_; }
    explicit TensorT(std::shared_ptr<autodiff::Node<T>> n) : node_(std::move(n)) {}

  private:
    autodiff::Node<T> * check_() const {
        if (!node_) {
            throw StateError("tensor: use of undefined tensor");
        }
        return node_.get();
    }
    std::shared_ptr<autodiff::Node<T>> node_;
};

using Tensor  = TensorT<float>;
using TensorD = TensorT<double>;

// ---- ops (all differentiable unless noted) ----

template <typename T> TensorT<T> matmul(const TensorT<T> & a, const TensorT<T> & b);
template <typename T> TensorT<T> add(const TensorT<T> & a, const TensorT<T> & b);
template <typename T> TensorT<T> sub(const TensorT<T> & a, const TensorT<T> & b);
template <typename T> TensorT<T> mul(const TensorT<T> & a, const TensorT<T> & b);
template <typename T> TensorT<T> scale(const TensorT<T> & a, std::type_identity_t<T> s);

// row-wise softmax over the last dimension with temperature; temperature must be
// positive (greedy temperature 0 is resolved by callers before reaching here)
template <typename T> TensorT<T> softmax(const TensorT<T> & x, std::type_identity_t<T> temperature = T(1));

template <typename T> TensorT<T> silu(const TensorT<T> & x);
template <typename T> TensorT<T> rms_norm(const TensorT<T> & x, const TensorT<T> & weight, std::type_identity_t<T> eps);

// interleaved-pair rotary embedding applied per head; positions[i] is the
// absolute position of row i
template <typename T> TensorT<T> rope(const TensorT<T> & x, std::span<const int> positions, int n_heads, std::type_identity_t<T> base = T(10000));

template <typename T> TensorT<T> embedding(const TensorT<T> & table, std::span<const int> ids);

// multi-head scaled dot-product attention under an explicit boolean mask.
// q: [Sq×d], k,v: [Sk×d] (already rotated); every mask row must permit at least
// one key
template <typename T> TensorT<T> masked_attention(const TensorT<T> & q, const TensorT<T> & k, const TensorT<T> & v, const Mask & mask, int n_heads);

// same elements under a new shape; gradient passes straight through
template <typename T> TensorT<T> reshape(const TensorT<T> & x, Shape shape);

template <typename T> TensorT<T> concat_rows(const TensorT<T> & a, const TensorT<T> & b);
template <typename T> TensorT<T> concat_cols(const TensorT<T> & a, const TensorT<T> & b);
template <typename T> TensorT<T> slice_rows(const TensorT<T> & x, int start, int len);
template <typename T> TensorT<T> gather_rows(const TensorT<T> & x, std::span<const int> idx);

template <typename T> TensorT<T> sum(const TensorT<T> & x);

// mean of selected entries of a vector tensor [S] -> scalar
template <typename T> TensorT<T> mean_select(const TensorT<T> & x, std::span<const int> idx);

// per-row smooth-l1 between pred and target [S×d] -> [S], mean over the feature dim
template <typename T> TensorT<T> smooth_l1_rows(const TensorT<T> & pred, const TensorT<T> & target, std::type_identity_t<T> beta);

// per-row weighted negative log-likelihood over an index set:
//   out[r] = -sum_t w[r*k+t] * log(max(probs[r, idx[r*k+t]], floor))
// weights are plain data (no gradient flows into them)
template <typename T> TensorT<T> soft_ce_rows(const TensorT<T> & probs, std::span<const int> idx, std::span<const std::type_identity_t<T>> w, int k, std::type_identity_t<T> floor);

// reverse-mode sweep from a scalar loss; populates grads of every tracked tensor
// on the graph, then frees the graph. a second sweep over the same graph throws.
template <typename T> void backward(const TensorT<T> & loss);

} // namespace hass
