#pragma once

// Reverse-mode differentiation over Tensor values.
//
// A Var is a handle to a graph node. Ops build new nodes whose backward rule
// accumulates into the parents' gradients. Nodes are only recorded while
// gradient mode is on and at least one input requires a gradient, so
// evaluation under NoGradGuard allocates no graph.

#include "cafo/tensor.hpp"

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace cafo::ag {

struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    /// Gradient storage, zero-initialised on first use.
    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return node_->has_grad; }

    /// Accumulated gradient; a zero tensor when nothing has flowed in yet.
    const Tensor& grad() const;
    void zero_grad();

    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Propagates d(root)/d(node) into every reachable node that requires a
/// gradient. Root must hold exactly one element. Gradients add onto whatever
/// the leaves already hold.
void backward(const Var& root);

// ---- element-wise -------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// Throws ShapeError on a zero denominator.
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var sigmoid(const Var& a);
Var relu(const Var& a);
/// Subgradient 0 at 0.
Var abs(const Var& a);

// ---- broadcasting helpers -------------------------------------------------

/// x * s where s holds a single element (any rank).
Var scale(const Var& x, const Var& s);
/// x / s where s holds a single element; throws on s == 0.
Var divide(const Var& x, const Var& s);
/// x[n, c, ...] + b[c]
Var bias_add(const Var& x, const Var& b);
/// x[n, c, ...] * s[n, c]
Var scale_channels(const Var& x, const Var& s);

// ---- linear algebra -------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var dot(const Var& u, const Var& v);
Var l2_norm(const Var& v);
/// Column j of a 2-D tensor as a vector.
Var column(const Var& a, std::size_t j);
/// Concatenates single-element Vars into a vector.
Var stack(std::span<const Var> scalars);

// ---- reductions and shape -------------------------------------------------

Var sum(const Var& a);
Var mean(const Var& a);
Var sum_axis(const Var& a, std::size_t axis);
Var mean_axis(const Var& a, std::size_t axis);
Var reshape(const Var& a, Shape shape);

// ---- convolution and pooling (NCHW) ---------------------------------------

/// w: [out, in, k, k], b: [out] or undefined.
Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t pad);
/// w: [multiplier*channels, k, k] with output channel g*channels + c reading input c.
Var depthwise_conv2d(const Var& x, const Var& w, const Var& b, std::size_t multiplier, std::size_t stride,
                     std::size_t pad);
/// Non-overlapping window pooling, window = stride = `window`.
Var avg_pool2d(const Var& x, std::size_t window);
/// Ties route the gradient to the lowest flat index of the window.
Var max_pool2d(const Var& x, std::size_t window);
/// [n, c, h, w] -> [n, c]
Var global_avg_pool(const Var& x);
Var global_max_pool(const Var& x);

// ---- losses ---------------------------------------------------------------

/// Mean over rows of -log softmax(logits)[label]. logits: [n, classes].
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

} // namespace cafo::ag
