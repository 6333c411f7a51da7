#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

// Tensor-level reverse-mode automatic differentiation.
//
// A Var is a handle to a graph node holding a value tensor and, after
// backward(), its gradient. Ops record a closure that pushes the node's
// gradient into its parents; backward() replays them in reverse topological
// order. Parameters are long-lived leaf Vars; everything else is rebuilt per
// step and released with the loss handle.
namespace scribseg::ad {

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> values);
    static Tensor scalar(double v) { return Tensor({1}, v); }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::size_t numel() const { return values_.size(); }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }
    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    /// Value of a single-element tensor.
    double item() const;
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;
    void fill(double v);

    std::string shape_string() const;

private:
    std::vector<int> shape_;
    std::vector<double> values_;
};

struct Node {
    Tensor value;
    Tensor grad;  // empty until something flows into it
    bool requires_grad = false;
    std::string op;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    /// Gradient buffer, zero-initialized on first use.
    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad.numel() != 0; }
    void zero_grad() { node_->grad = Tensor(); }
    bool requires_grad() const { return node_->requires_grad; }
    const std::vector<int>& shape() const { return node_->value.shape(); }
    std::size_t numel() const { return node_->value.numel(); }
    double item() const { return node_->value.item(); }
    const std::string& op() const { return node_->op; }

    explicit operator bool() const { return static_cast<bool>(node_); }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Trainable leaf.
Var parameter(Tensor value);
/// Leaf that never receives a gradient.
Var constant(Tensor value);

/// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every reachable
/// node that requires them. Throws ConfigError for non-scalar losses.
void backward(const Var& loss);

// Elementwise, equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// a * m with m a constant tensor of the same shape.
Var mul_const(const Var& a, const Tensor& m);
/// log(a + eps).
Var log(const Var& a, double eps = 0.0);
Var relu(const Var& a);

// Reductions.
Var sum(const Var& a);
Var dot(const Var& a, const Var& b);
/// Sum over everything but the leading (batch) dim: shape {N}.
Var sum_items(const Var& a);

// Channel plumbing for (N, C, H, W) tensors.
Var channel(const Var& a, int c);
Var concat_channels(const Var& a, const Var& b);
Var softmax_channels(const Var& a);

/// Per batch item: 1 - <a,b> / (|a||b| + eps), shape {N}. An item whose
/// operand norm is zero yields cosine 0 and no gradient through that operand.
Var cosine_distance_items(const Var& a, const Var& b, double eps);

// Network layers. Weights are parameters passed as Vars.
Var conv2d(const Var& x, const Var& weight, const Var& bias);
Var upconv2x2(const Var& x, const Var& weight, const Var& bias);
Var maxpool2(const Var& x);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);

struct BatchNormStats {
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
};
/// Training mode normalizes with batch statistics and updates `stats`;
/// evaluation mode uses the running statistics.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, bool training,
               double eps = 1e-5);

}  // namespace scribseg::ad
