#pragma once

// Dense 64-bit tensors with define-by-run reverse-mode differentiation.
//
// Ops record onto the thread's active Graph (see GraphScope) only when at
// least one input requires a gradient. Outside a GraphScope, or inside a
// NoGradScope, ops are plain forward computations and their outputs never
// require gradients.
//
// Broadcasting is limited to scalar-with-tensor for add/sub/mul. Row-vector
// bias addition is a separate op (add_bias) rather than implicit broadcast.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace xlkd {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class OpKind {
  kAdd,
  kSub,
  kMul,
  kMatMul,
  kRelu,
  kGelu,
  kSoftmaxLastDim,
  kMean,
  kSum,
  kSquare,
  kSqrtScalar,
  kConcat,
  kSlice,
  kEmbeddingLookup,
  kAddBias,
  kScale,
  kReshape,
  kTransposeLast2,
};

std::string_view op_name(OpKind kind);

namespace detail {
struct TensorImpl;
}

class Graph;

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view of a leaf's values (parameters, optimizer updates).
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  void zero_grad();

  // New leaf sharing no storage; never requires grad.
  Tensor detach() const;
  // Deep copy of values into a new leaf with the same requires_grad flag.
  Tensor clone() const;

  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Graph;
  friend struct OpAccess;
  friend void backward(Graph& graph, const Tensor& loss);
};

// Topologically ordered op records for one define-by-run pass.
class Graph {
 public:
  struct Node {
    OpKind kind;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }
  void record(Node node) { nodes_.push_back(std::move(node)); }

 private:
  std::vector<Node> nodes_;
};

// Makes `graph` the active graph of the calling thread for its lifetime.
class GraphScope {
 public:
  explicit GraphScope(Graph& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
  bool previous_no_grad_;
};

// Suspends recording on the calling thread; outputs are detached values.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool previous_;
};

// Accumulates d(loss)/d(leaf) into every requires_grad leaf reached from
// `loss`. Intermediate gradients are reset on each call, leaf gradients are
// not, so repeated calls accumulate.
void backward(Graph& graph, const Tensor& loss);

// ---- forward ops ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// [m,k]x[k,n]; [b,m,k]x[b,k,n] batched; [...,k]x[k,n] applies the map to
// every row of the leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);
Tensor softmax_lastdim(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt_scalar(const Tensor& x);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
// Rows of `table` ([V,D]) selected by `ids`; output [ids.size(), D].
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids);
// x[...,n] + bias[n] on every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose_last2(const Tensor& x);

// Mean over elements of (a - b)^2.
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace xlkd
