#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "plip/tensor.hpp"

// Reverse-mode automatic differentiation over dense double tensors.
//
// Every op below builds a node holding its forward value and a closure that
// pushes the output gradient back into its parents. Parameters are leaf nodes
// that outlive each forward pass; gradients accumulate into them until the
// optimizer clears them.

namespace plip::ag {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& mutable_grad() { return node_->ensure_grad(); }
    const Shape& shape() const { return node_->value.shape(); }
    std::int64_t dim(std::size_t axis) const { return node_->value.dim(axis); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    double item() const { return node_->value.item(); }
    void zero_grad();

    bool valid() const noexcept { return static_cast<bool>(node_); }
    const std::shared_ptr<Node>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Disables graph construction on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled() noexcept;

Var constant(Tensor t);
Var parameter(Tensor t);

/// Runs backpropagation from a scalar root, accumulating into leaf grads.
void backward(const Var& root);

// Elementwise arithmetic. Shapes must match exactly unless stated.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);

/// x[..., n] + b[n]
Var add_bias(const Var& x, const Var& b);

Var silu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var square(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);

/// a[m,k] @ b[k,n]
Var matmul(const Var& a, const Var& b);
/// x[..., in] @ w[in,out] + b[out]; leading dims are flattened. b may be invalid.
Var linear(const Var& x, const Var& w, const Var& b);
/// Batched a[B,m,k] @ b[B,k,n], or b[B,n,k] transposed when trans_b is set.
Var bmm(const Var& a, const Var& b, bool trans_b = false);

Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, const std::vector<std::size_t>& perm);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(const Var& x, std::size_t axis, std::int64_t start, std::int64_t length);
/// out[i, :] = x[index[i], :] for a 2-D x; repeated indices accumulate gradient.
Var gather_rows(const Var& x, std::span<const std::int64_t> index);

Var softmax_last(const Var& x);
Var log_softmax_last(const Var& x);
/// Sum over rows of -log softmax(logits)[target]; rows with target < 0 are skipped.
Var cross_entropy_sum(const Var& logits, std::span<const std::int64_t> targets);
Var layer_norm_last(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Rows of x[n,d] divided by their L2 norm. Throws NumericError on a zero row.
Var normalize_rows(const Var& x);

// Image ops on NCHW tensors.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
/// w is [C_in, C_out, kh, kw]; output side is (in - 1) * stride - 2 * pad + k.
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
/// Bilinear resize with half-pixel centers (align_corners = false).
Var upsample_bilinear(const Var& x, std::int64_t out_h, std::int64_t out_w);
Var global_avg_pool(const Var& x);
/// x[N,C,H,W] * g[N,C] broadcast over space.
Var channel_scale(const Var& x, const Var& g);
Var reflect_pad(const Var& x, std::int64_t top, std::int64_t bottom, std::int64_t left, std::int64_t right);
/// Mean squared difference against a constant target of the same shape.
Var mse(const Var& pred, const Tensor& target);

}  // namespace plip::ag
