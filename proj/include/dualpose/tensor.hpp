#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

/// Dense tensors with reverse-mode differentiation.
///
/// Every op that touches a tensor with requires_grad records a node holding
/// its parents and a backward closure. backward() walks the recorded graph
/// in reverse creation order and then releases it, so a graph can be
/// differentiated exactly once. Nodes created on different threads never
/// share state except through leaves, which is why workers train on
/// per-thread parameter snapshots (see clone_leaf).
namespace dualpose::ad {

using Shape = std::vector<int>;

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Checked mode turns non-finite results of div/log/sqrt and Sinkhorn
/// scalings into TensorError. Enabled by default.
void set_checked_mode(bool enabled);
bool checked_mode();

struct Node;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable storage. Only meaningful for leaves (parameters, inputs).
  std::span<double> mutable_data();
  /// Empty span until a gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  bool requires_grad() const;
  bool is_leaf() const;
  double item() const;

  /// Keep this non-leaf node's gradient after backward().
  void retain_grad();

  /// New leaf with a copy of the values and no history.
  Tensor detach() const;
  /// New leaf with a copy of the values, same requires_grad flag.
  Tensor clone_leaf() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

/// Gradient callback for custom ops. parent_grads[k] is empty when input k
/// does not require a gradient; otherwise it has input k's size and the
/// callback must accumulate (+=) into it.
using BackwardFn =
    std::function<void(std::span<const double> out_grad, std::vector<std::span<double>>& parent_grads)>;

/// Builds an op result from precomputed values. The node records history
/// only when some input requires a gradient.
Tensor custom_op(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs, BackwardFn backward);

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
/// loss and releases the graph. loss must be a scalar with live history.
void backward(const Tensor& loss);

// ---- shape ops ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // rank 2
Tensor concat(const std::vector<Tensor>& parts, int axis);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K] x [K,P]
/// y[s] = weight * x[s] + bias for x [S, D_in, N], weight [D_out, D_in], bias [D_out] (optional).
Tensor conv1d_pointwise(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

// ---- elementwise, broadcasting over size-1 axes of equal-rank operands ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.2);
Tensor clamp_min(const Tensor& a, double lo);

// ---- reductions (keep the reduced axis with size 1) ----
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a, int axis);
/// sqrt(biased variance + eps) along axis.
Tensor std(const Tensor& a, int axis, double eps);
Tensor logsumexp(const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);

/// Same values. Backward is zero, or identity when straight_through is set.
Tensor stop_gradient(const Tensor& a, bool straight_through = false);
/// Forward takes `values`, backward passes the gradient to `a` unchanged.
Tensor straight_through(const Tensor& a, std::vector<double> values);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

}  // namespace dualpose::ad
