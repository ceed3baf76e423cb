#include "dualpose/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace dualpose::ad {

// Storage starts on an Eigen packet boundary. Eigen peels unaligned heads of
// reductions, so with heap-dependent alignment the summation order, and the
// last bits of results, would change from one process to the next.
using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

struct Node {
  Shape shape;
  Storage value;
  Storage grad;
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  bool retain = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

namespace {

std::atomic<std::uint64_t> g_sequence{0};
std::atomic<bool> g_checked{true};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::shared_ptr<Node> make_leaf(Shape shape, std::span<const double> value, bool requires_grad) {
  if (shape_numel(shape) != value.size()) {
    throw TensorError("shape " + to_string(shape) + " does not match " + std::to_string(value.size()) +
                      " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value.assign(value.begin(), value.end());
  node->requires_grad = requires_grad;
  node->seq = g_sequence.fetch_add(1, std::memory_order_relaxed);
  return node;
}

const Node& node_of(const Tensor& t) {
  if (!t.defined()) throw TensorError("use of an undefined tensor");
  return *t.node();
}

void check_finite(std::span<const double> values, const char* op) {
  if (!g_checked.load(std::memory_order_relaxed)) return;
  for (double v : values) {
    if (!std::isfinite(v)) throw TensorError(std::string(op) + ": non-finite result");
  }
}

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (int d = static_cast<int>(shape.size()) - 2; d >= 0; --d) {
    strides[d] = strides[d + 1] * static_cast<std::size_t>(shape[d + 1]);
  }
  return strides;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw TensorError(std::string(op) + ": rank mismatch " + to_string(a) + " vs " + to_string(b));
  }
  BroadcastPlan plan;
  plan.same = (a == b);
  plan.out.resize(a.size());
  for (std::size_t d = 0; d < a.size(); ++d) {
    if (a[d] == b[d] || b[d] == 1) {
      plan.out[d] = a[d];
    } else if (a[d] == 1) {
      plan.out[d] = b[d];
    } else {
      throw TensorError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
  }
  auto sa = contiguous_strides(a);
  auto sb = contiguous_strides(b);
  for (std::size_t d = 0; d < a.size(); ++d) {
    if (a[d] == 1 && plan.out[d] != 1) sa[d] = 0;
    if (b[d] == 1 && plan.out[d] != 1) sb[d] = 0;
  }
  plan.stride_a = std::move(sa);
  plan.stride_b = std::move(sb);
  return plan;
}

// Calls f(out_index, a_index, b_index) over the broadcast output in order.
template <class F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  const std::size_t total = shape_numel(plan.out);
  if (plan.same) {
    for (std::size_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const int r = static_cast<int>(plan.out.size());
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t inner = static_cast<std::size_t>(plan.out[r - 1]);
  const std::size_t step_a = plan.stride_a[r - 1];
  const std::size_t step_b = plan.stride_b[r - 1];
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  std::size_t o = 0;
  for (std::size_t outer = 0; outer < total / inner; ++outer) {
    std::size_t a0 = 0;
    std::size_t b0 = 0;
    for (int d = 0; d < r - 1; ++d) {
      a0 += static_cast<std::size_t>(idx[d]) * plan.stride_a[d];
      b0 += static_cast<std::size_t>(idx[d]) * plan.stride_b[d];
    }
    for (std::size_t k = 0; k < inner; ++k) f(o++, a0 + k * step_a, b0 + k * step_b);
    for (int d = r - 2; d >= 0; --d) {
      if (++idx[d] < plan.out[d]) break;
      idx[d] = 0;
    }
  }
}

// Generic broadcasting binary op. fwd(a, b) -> y, da(a, b, y), db(a, b, y)
// are the partial derivatives.
template <class Fwd, class Da, class Db>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Da da, Db db, bool check) {
  const Node& na = node_of(a);
  const Node& nb = node_of(b);
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(na.shape, nb.shape, name));
  std::vector<double> out(shape_numel(plan->out));
  const double* pa = na.value.data();
  const double* pb = nb.value.data();
  for_each_broadcast(*plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = fwd(pa[ia], pb[ib]); });
  if (check) check_finite(out, name);
  Shape shape = plan->out;
  return custom_op(std::move(shape), std::move(out), {a, b},
                   [a, b, plan, da, db, fwd](std::span<const double> g, std::vector<std::span<double>>& grads) {
                     const double* xa = a.data().data();
                     const double* xb = b.data().data();
                     std::span<double> ga = grads[0];
                     std::span<double> gb = grads[1];
                     for_each_broadcast(*plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                       const double y = fwd(xa[ia], xb[ib]);
                       if (!ga.empty()) ga[ia] += g[o] * da(xa[ia], xb[ib], y);
                       if (!gb.empty()) gb[ib] += g[o] * db(xa[ia], xb[ib], y);
                     });
                   });
}

// Elementwise unary op. deriv(x, y) is dy/dx.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, const char* name, Fwd fwd, Deriv deriv, bool check) {
  const Node& na = node_of(a);
  std::vector<double> out(na.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(na.value[i]);
  if (check) check_finite(out, name);
  auto result_values = std::make_shared<std::vector<double>>(out);
  return custom_op(na.shape, std::move(out), {a},
                   [a, deriv, result_values](std::span<const double> g, std::vector<std::span<double>>& grads) {
                     const auto x = a.data();
                     for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] * deriv(x[i], (*result_values)[i]);
                   });
}

struct AxisView {
  std::size_t pre = 1;
  std::size_t len = 1;
  std::size_t post = 1;
};

AxisView axis_view(const Shape& shape, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(shape.size())) {
    throw TensorError(std::string(op) + ": invalid axis " + std::to_string(axis) + " for shape " + to_string(shape));
  }
  AxisView v;
  for (int d = 0; d < axis; ++d) v.pre *= static_cast<std::size_t>(shape[d]);
  v.len = static_cast<std::size_t>(shape[axis]);
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < shape.size(); ++d) v.post *= static_cast<std::size_t>(shape[d]);
  if (v.len == 0) throw TensorError(std::string(op) + ": reducing a size-0 axis");
  return v;
}

Shape reduced_shape(Shape shape, int axis) {
  shape[axis] = 1;
  return shape;
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw TensorError("negative dimension in " + to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void set_checked_mode(bool enabled) { g_checked.store(enabled); }
bool checked_mode() { return g_checked.load(); }

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::vector<double> data(shape_numel(shape), value);
  return Tensor(make_leaf(std::move(shape), data, requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), data, requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_of(*this).shape; }

int Tensor::dim(int axis) const {
  const Shape& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) throw TensorError("dim: invalid axis");
  return s[axis];
}

std::size_t Tensor::numel() const { return node_of(*this).value.size(); }

std::span<const double> Tensor::data() const { return node_of(*this).value; }

std::span<double> Tensor::mutable_data() {
  node_of(*this);
  if (!node_->leaf) throw TensorError("mutable_data on a non-leaf tensor");
  return node_->value;
}

std::span<const double> Tensor::grad() const { return node_of(*this).grad; }

std::span<double> Tensor::mutable_grad() {
  node_of(*this);
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_of(*this);
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::requires_grad() const { return node_of(*this).requires_grad; }
bool Tensor::is_leaf() const { return node_of(*this).leaf; }

double Tensor::item() const {
  const Node& n = node_of(*this);
  if (n.value.size() != 1) throw TensorError("item() on a tensor of shape " + to_string(n.shape));
  return n.value[0];
}

void Tensor::retain_grad() {
  node_of(*this);
  node_->retain = true;
}

Tensor Tensor::detach() const {
  const Node& n = node_of(*this);
  return Tensor(make_leaf(n.shape, n.value, false));
}

Tensor Tensor::clone_leaf() const {
  const Node& n = node_of(*this);
  return Tensor(make_leaf(n.shape, n.value, n.requires_grad));
}

Tensor custom_op(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs, BackwardFn backward_fn) {
  auto node = make_leaf(std::move(shape), value, false);
  bool any = false;
  for (const Tensor& t : inputs) any = any || node_of(t).requires_grad;
  if (any) {
    node->requires_grad = true;
    node->leaf = false;
    node->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) {
      if (node_of(t).consumed) throw TensorError("input tensor's graph was already consumed by backward()");
      node->parents.push_back(t.node());
    }
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  const Node& root_const = node_of(loss);
  if (root_const.value.size() != 1) {
    throw TensorError("backward: loss must be a scalar, got shape " + to_string(root_const.shape));
  }
  if (root_const.consumed) throw TensorError("backward: graph already consumed; run the forward pass again");
  Node* root = loss.node().get();
  if (!root->requires_grad) throw TensorError("backward: loss does not require a gradient");

  std::vector<Node*> order;
  std::vector<std::shared_ptr<Node>> keep_alive;  // releasing parents below must not free nodes still in `order`
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (n->leaf) continue;
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) {
        stack.push_back(p.get());
        keep_alive.push_back(p);
      }
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* x, const Node* y) { return x->seq > y->seq; });

  root->ensure_grad();
  root->grad[0] += 1.0;

  std::vector<std::span<double>> parent_grads;
  for (Node* n : order) {
    if (n->grad.empty()) continue;
    parent_grads.clear();
    for (const auto& p : n->parents) {
      if (p->requires_grad) {
        p->ensure_grad();
        parent_grads.emplace_back(p->grad);
      } else {
        parent_grads.emplace_back();
      }
    }
    n->backward(n->grad, parent_grads);
  }
  for (Node* n : order) {
    n->parents.clear();
    n->backward = nullptr;
    n->consumed = true;
    if (!n->retain) Storage().swap(n->grad);
  }
}

// ---- shape ops ----

Tensor reshape(const Tensor& a, Shape shape) {
  const Node& na = node_of(a);
  if (shape_numel(shape) != na.value.size()) {
    throw TensorError("reshape: " + to_string(na.shape) + " -> " + to_string(shape));
  }
  return custom_op(std::move(shape), {na.value.begin(), na.value.end()}, {a}, [](std::span<const double> g, std::vector<std::span<double>>& grads) {
    for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
  });
}

Tensor transpose(const Tensor& a) {
  const Node& na = node_of(a);
  if (na.shape.size() != 2) throw TensorError("transpose: rank-2 tensor required, got " + to_string(na.shape));
  const int m = na.shape[0];
  const int n = na.shape[1];
  std::vector<double> out(na.value.size());
  MutMap(out.data(), n, m) = ConstMap(na.value.data(), m, n).transpose();
  return custom_op({n, m}, std::move(out), {a}, [m, n](std::span<const double> g, std::vector<std::span<double>>& grads) {
    MutMap(grads[0].data(), m, n) += ConstMap(g.data(), n, m).transpose();
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw TensorError("concat: no inputs");
  const Shape& first = node_of(parts[0]).shape;
  if (axis < 0 || axis >= static_cast<int>(first.size())) throw TensorError("concat: invalid axis");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = node_of(p).shape;
    if (s.size() != first.size()) throw TensorError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (static_cast<int>(d) != axis && s[d] != first[d]) {
        throw TensorError("concat: shape mismatch " + to_string(s) + " vs " + to_string(first));
      }
    }
    out_shape[axis] += s[axis];
  }
  const AxisView ov = axis_view(out_shape, axis, "concat");
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> lens;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const Node& np = node_of(p);
    const std::size_t len = static_cast<std::size_t>(np.shape[axis]);
    for (std::size_t i = 0; i < ov.pre; ++i) {
      std::copy_n(np.value.data() + i * len * ov.post, len * ov.post,
                  out.data() + (i * ov.len + offset) * ov.post);
    }
    lens.push_back(len);
    offset += len;
  }
  return custom_op(std::move(out_shape), std::move(out), parts,
                   [ov, lens](std::span<const double> g, std::vector<std::span<double>>& grads) {
                     std::size_t off = 0;
                     for (std::size_t k = 0; k < lens.size(); ++k) {
                       if (!grads[k].empty()) {
                         for (std::size_t i = 0; i < ov.pre; ++i) {
                           const double* src = g.data() + (i * ov.len + off) * ov.post;
                           double* dst = grads[k].data() + i * lens[k] * ov.post;
                           for (std::size_t j = 0; j < lens[k] * ov.post; ++j) dst[j] += src[j];
                         }
                       }
                       off += lens[k];
                     }
                   });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Node& na = node_of(a);
  const Node& nb = node_of(b);
  if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[0]) {
    throw TensorError("matmul: shape mismatch " + to_string(na.shape) + " x " + to_string(nb.shape));
  }
  const int m = na.shape[0];
  const int k = na.shape[1];
  const int p = nb.shape[1];
  std::vector<double> out(static_cast<std::size_t>(m) * p);
  MutMap(out.data(), m, p).noalias() = ConstMap(na.value.data(), m, k) * ConstMap(nb.value.data(), k, p);
  return custom_op({m, p}, std::move(out), {a, b},
                   [a, b, m, k, p](std::span<const double> g, std::vector<std::span<double>>& grads) {
                     ConstMap G(g.data(), m, p);
                     if (!grads[0].empty()) {
                       MutMap(grads[0].data(), m, k).noalias() += G * ConstMap(b.data().data(), k, p).transpose();
                     }
                     if (!grads[1].empty()) {
                       MutMap(grads[1].data(), k, p).noalias() += ConstMap(a.data().data(), m, k).transpose() * G;
                     }
                   });
}

Tensor conv1d_pointwise(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Node& nx = node_of(x);
  const Node& nw = node_of(weight);
  if (nx.shape.size() != 3 || nw.shape.size() != 2 || nw.shape[1] != nx.shape[1]) {
    throw TensorError("conv1d_pointwise: shape mismatch x " + to_string(nx.shape) + ", weight " +
                      to_string(nw.shape));
  }
  const bool has_bias = bias.defined();
  if (has_bias && node_of(bias).shape != Shape{nw.shape[0]}) {
    throw TensorError("conv1d_pointwise: bias shape " + to_string(node_of(bias).shape));
  }
  const int s = nx.shape[0];
  const int din = nx.shape[1];
  const int n = nx.shape[2];
  const int dout = nw.shape[0];
  std::vector<double> out(static_cast<std::size_t>(s) * dout * n);
  ConstMap W(nw.value.data(), dout, din);
  for (int si = 0; si < s; ++si) {
    MutMap Y(out.data() + static_cast<std::size_t>(si) * dout * n, dout, n);
    Y.noalias() = W * ConstMap(nx.value.data() + static_cast<std::size_t>(si) * din * n, din, n);
    if (has_bias) {
      Eigen::Map<const Eigen::VectorXd> bv(node_of(bias).value.data(), dout);
      Y.colwise() += bv;
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return custom_op({s, dout, n}, std::move(out), inputs,
                   [x, weight, s, din, n, dout, has_bias](std::span<const double> g,
                                                          std::vector<std::span<double>>& grads) {
                     ConstMap W(weight.data().data(), dout, din);
                     for (int si = 0; si < s; ++si) {
                       ConstMap G(g.data() + static_cast<std::size_t>(si) * dout * n, dout, n);
                       if (!grads[0].empty()) {
                         MutMap(grads[0].data() + static_cast<std::size_t>(si) * din * n, din, n).noalias() +=
                             W.transpose() * G;
                       }
                       if (!grads[1].empty()) {
                         MutMap(grads[1].data(), dout, din).noalias() +=
                             G * ConstMap(x.data().data() + static_cast<std::size_t>(si) * din * n, din, n).transpose();
                       }
                       if (has_bias && !grads[2].empty()) {
                         Eigen::Map<Eigen::VectorXd>(grads[2].data(), dout) += G.rowwise().sum();
                       }
                     }
                   });
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; }, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; }, false);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; }, false);
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double r) { return -r / y; }, true);
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return factor * x; }, [factor](double, double) { return factor; }, false);
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, "add_scalar", [value](double x) { return x + value; }, [](double, double) { return 1.0; }, false);
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; }, false);
}

Tensor log(const Tensor& a) {
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; }, true);
}

Tensor sqrt(const Tensor& a) {
  return unary(
      a, "sqrt", [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; }, true);
}

Tensor square(const Tensor& a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; }, false);
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); }, false);
}

Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0); }

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary(
      a, "leaky_relu", [slope](double x) { return x >= 0.0 ? x : slope * x; },
      [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; }, false);
}

Tensor clamp_min(const Tensor& a, double lo) {
  return unary(
      a, "clamp_min", [lo](double x) { return x > lo ? x : lo; }, [lo](double x, double) { return x > lo ? 1.0 : 0.0; },
      false);
}

// ---- reductions ----

Tensor sum(const Tensor& a, int axis) {
  const Node& na = node_of(a);
  const AxisView v = axis_view(na.shape, axis, "sum");
  std::vector<double> out(v.pre * v.post, 0.0);
  for (std::size_t i = 0; i < v.pre; ++i)
    for (std::size_t k = 0; k < v.len; ++k)
      for (std::size_t j = 0; j < v.post; ++j) out[i * v.post + j] += na.value[(i * v.len + k) * v.post + j];
  return custom_op(reduced_shape(na.shape, axis), std::move(out), {a},
                   [v](std::span<const double> g, std::vector<std::span<double>>& grads) {
                     for (std::size_t i = 0; i < v.pre; ++i)
                       for (std::size_t k = 0; k < v.len; ++k)
                         for (std::size_t j = 0; j < v.post; ++j)
                           grads[0][(i * v.len + k) * v.post + j] += g[i * v.post + j];
                   });
}

Tensor mean(const Tensor& a, int axis) {
  const AxisView v = axis_view(a.shape(), axis, "mean");
  return scale(sum(a, axis), 1.0 / static_cast<double>(v.len));
}

Tensor std(const Tensor& a, int axis, double eps) {
  const Node& na = node_of(a);
  const AxisView v = axis_view(na.shape, axis, "std");
  const double inv_n = 1.0 / static_cast<double>(v.len);
  auto mu = std::make_shared<std::vector<double>>(v.pre * v.post, 0.0);
  std::vector<double> out(v.pre * v.post, 0.0);
  for (std::size_t i = 0; i < v.pre; ++i) {
    for (std::size_t j = 0; j < v.post; ++j) {
      double m = 0.0;
      for (std::size_t k = 0; k < v.len; ++k) m += na.value[(i * v.len + k) * v.post + j];
      m *= inv_n;
      double var = 0.0;
      for (std::size_t k = 0; k < v.len; ++k) {
        const double d = na.value[(i * v.len + k) * v.post + j] - m;
        var += d * d;
      }
      (*mu)[i * v.post + j] = m;
      out[i * v.post + j] = std::sqrt(var * inv_n + eps);
    }
  }
  check_finite(out, "std");
  auto sigma = std::make_shared<std::vector<double>>(out);
  return custom_op(reduced_shape(na.shape, axis), std::move(out), {a},
                   [a, v, mu, sigma, inv_n](std::span<const double> g, std::vector<std::span<double>>& grads) {
                     const auto x = a.data();
                     for (std::size_t i = 0; i < v.pre; ++i)
                       for (std::size_t j = 0; j < v.post; ++j) {
                         const std::size_t r = i * v.post + j;
                         const double c = g[r] * inv_n / (*sigma)[r];
                         for (std::size_t k = 0; k < v.len; ++k) {
                           const std::size_t idx = (i * v.len + k) * v.post + j;
                           grads[0][idx] += c * (x[idx] - (*mu)[r]);
                         }
                       }
                   });
}

Tensor logsumexp(const Tensor& a, int axis) {
  const Node& na = node_of(a);
  const AxisView v = axis_view(na.shape, axis, "logsumexp");
  std::vector<double> out(v.pre * v.post);
  for (std::size_t i = 0; i < v.pre; ++i) {
    for (std::size_t j = 0; j < v.post; ++j) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < v.len; ++k) m = std::max(m, na.value[(i * v.len + k) * v.post + j]);
      double s = 0.0;
      if (std::isfinite(m)) {
        for (std::size_t k = 0; k < v.len; ++k) s += std::exp(na.value[(i * v.len + k) * v.post + j] - m);
      }
      out[i * v.post + j] = std::isfinite(m) ? m + std::log(s) : m;
    }
  }
  check_finite(out, "logsumexp");
  auto result = std::make_shared<std::vector<double>>(out);
  return custom_op(reduced_shape(na.shape, axis), std::move(out), {a},
                   [a, v, result](std::span<const double> g, std::vector<std::span<double>>& grads) {
                     const auto x = a.data();
                     for (std::size_t i = 0; i < v.pre; ++i)
                       for (std::size_t j = 0; j < v.post; ++j) {
                         const std::size_t r = i * v.post + j;
                         for (std::size_t k = 0; k < v.len; ++k) {
                           const std::size_t idx = (i * v.len + k) * v.post + j;
                           grads[0][idx] += g[r] * std::exp(x[idx] - (*result)[r]);
                         }
                       }
                   });
}

Tensor sum_all(const Tensor& a) {
  const Node& na = node_of(a);
  double s = 0.0;
  for (double x : na.value) s += x;
  return custom_op({1}, {s}, {a}, [](std::span<const double> g, std::vector<std::span<double>>& grads) {
    for (double& x : grads[0]) x += g[0];
  });
}

Tensor stop_gradient(const Tensor& a, bool straight_through_mode) {
  const Node& na = node_of(a);
  if (straight_through_mode) return straight_through(a, {na.value.begin(), na.value.end()});
  // Records a node so the input's gradient materializes as zeros.
  return custom_op(na.shape, {na.value.begin(), na.value.end()}, {a}, [](std::span<const double>, std::vector<std::span<double>>&) {});
}

Tensor straight_through(const Tensor& a, std::vector<double> values) {
  const Node& na = node_of(a);
  if (values.size() != na.value.size()) throw TensorError("straight_through: value count mismatch");
  return custom_op(na.shape, std::move(values), {a}, [](std::span<const double> g, std::vector<std::span<double>>& grads) {
    for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
  });
}

}  // namespace dualpose::ad
