#include "xlkd/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace xlkd {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

namespace {
thread_local Graph* active_graph = nullptr;
thread_local bool no_grad = false;
}  // namespace

}  // namespace detail

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kRelu: return "relu";
    case OpKind::kGelu: return "gelu";
    case OpKind::kSoftmaxLastDim: return "softmax_lastdim";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kSquare: return "square";
    case OpKind::kSqrtScalar: return "sqrt_scalar";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kEmbeddingLookup: return "embedding_lookup";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kScale: return "scale";
    case OpKind::kReshape: return "reshape";
    case OpKind::kTransposeLast2: return "transpose_last2";
  }
  return "unknown";
}

// ---- Tensor --------------------------------------------------------------

namespace {

void check_shape(const Shape& shape) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

ImplPtr make_impl(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (data.size() != xlkd::numel(shape)) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  impl_ = make_impl(std::move(shape), std::move(data));
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = xlkd::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::numel() const { return impl_->data.size(); }
std::span<const double> Tensor::data() const { return impl_->data; }

std::span<double> Tensor::mutable_data() {
  if (!impl_->leaf) throw std::logic_error("mutable_data() on a non-leaf tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (impl_->data.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(impl_->shape));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!impl_->leaf) throw std::logic_error("set_requires_grad() on a non-leaf tensor");
  impl_->requires_grad = on;
  if (!on) impl_->grad.clear();
}

bool Tensor::is_leaf() const { return impl_->leaf; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(make_impl(impl_->shape, impl_->data)); }

Tensor Tensor::clone() const {
  auto impl = make_impl(impl_->shape, impl_->data);
  impl->requires_grad = impl_->requires_grad;
  return Tensor(impl);
}

// ---- graph scopes --------------------------------------------------------

GraphScope::GraphScope(Graph& graph)
    : previous_(detail::active_graph), previous_no_grad_(detail::no_grad) {
  detail::active_graph = &graph;
  detail::no_grad = false;
}

GraphScope::~GraphScope() {
  detail::active_graph = previous_;
  detail::no_grad = previous_no_grad_;
}

NoGradScope::NoGradScope() : previous_(detail::no_grad) { detail::no_grad = true; }
NoGradScope::~NoGradScope() { detail::no_grad = previous_; }

// ---- op plumbing ---------------------------------------------------------

struct OpAccess {
  static const ImplPtr& impl(const Tensor& t) { return t.impl_; }
  static Tensor wrap(ImplPtr p) { return Tensor(std::move(p)); }
};

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

const ImplPtr& I(const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("operation on an undefined tensor");
  return OpAccess::impl(t);
}

bool recording() { return detail::active_graph != nullptr && !detail::no_grad; }

// Builds the output tensor; when recording and an input needs a gradient the
// op is appended to the active graph with the supplied backward closure.
// make_backward receives (output impl) and returns the closure.
template <typename MakeBackward>
Tensor finish(OpKind kind, std::vector<Tensor> inputs, Shape shape, std::vector<double> data,
              MakeBackward&& make_backward) {
  auto out = make_impl(std::move(shape), std::move(data));
  bool needs = false;
  if (recording()) {
    for (const auto& in : inputs) needs = needs || I(in)->requires_grad;
  }
  if (needs) {
    out->requires_grad = true;
    out->leaf = false;
    TensorImpl* raw_out = out.get();
    Graph::Node node{kind, inputs, OpAccess::wrap(out), make_backward(raw_out)};
    detail::active_graph->record(std::move(node));
  }
  return OpAccess::wrap(out);
}

[[noreturn]] void shape_fail(OpKind kind, const std::string& detail_msg) {
  throw ShapeError(std::string(op_name(kind)) + ": " + detail_msg);
}

bool is_scalar(const Tensor& t) { return t.numel() == 1; }

enum class Binary { kAdd, kSub, kMul };

Tensor binary(Binary which, OpKind kind, const Tensor& a, const Tensor& b) {
  const auto& ia = I(a);
  const auto& ib = I(b);
  const bool same = ia->shape == ib->shape;
  const bool a_scalar = !same && is_scalar(a);
  const bool b_scalar = !same && is_scalar(b);
  if (!same && !a_scalar && !b_scalar) {
    shape_fail(kind, "shapes " + shape_str(ia->shape) + " and " + shape_str(ib->shape) +
                         " are incompatible");
  }
  const Shape out_shape = a_scalar ? ib->shape : ia->shape;
  const std::size_t n = numel(out_shape);
  std::vector<double> out(n);
  auto av = [&](std::size_t i) { return a_scalar ? ia->data[0] : ia->data[i]; };
  auto bv = [&](std::size_t i) { return b_scalar ? ib->data[0] : ib->data[i]; };
  for (std::size_t i = 0; i < n; ++i) {
    switch (which) {
      case Binary::kAdd: out[i] = av(i) + bv(i); break;
      case Binary::kSub: out[i] = av(i) - bv(i); break;
      case Binary::kMul: out[i] = av(i) * bv(i); break;
    }
  }
  ImplPtr pa = ia, pb = ib;
  return finish(kind, {a, b}, out_shape, std::move(out), [=](TensorImpl* o) {
    return [=]() {
      const auto& g = o->grad;
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          double d = which == Binary::kMul ? g[i] * (b_scalar ? pb->data[0] : pb->data[i]) : g[i];
          pa->grad[a_scalar ? 0 : i] += d;
        }
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          double d = g[i];
          if (which == Binary::kSub) d = -d;
          if (which == Binary::kMul) d *= a_scalar ? pa->data[0] : pa->data[i];
          pb->grad[b_scalar ? 0 : i] += d;
        }
      }
    };
  });
}

template <typename F, typename DF>
Tensor unary(OpKind kind, const Tensor& x, F f, DF df) {
  const auto& ix = I(x);
  std::vector<double> out(ix->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ix->data[i]);
  ImplPtr px = ix;
  return finish(kind, {x}, ix->shape, std::move(out), [=](TensorImpl* o) {
    return [=]() {
      px->ensure_grad();
      for (std::size_t i = 0; i < o->grad.size(); ++i) px->grad[i] += o->grad[i] * df(px->data[i], o->data[i]);
    };
  });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(Binary::kAdd, OpKind::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(Binary::kSub, OpKind::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(Binary::kMul, OpKind::kMul, a, b); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& ia = I(a);
  const auto& ib = I(b);
  const Shape& sa = ia->shape;
  const Shape& sb = ib->shape;
  auto mismatch = [&] {
    shape_fail(OpKind::kMatMul, "cannot multiply " + shape_str(sa) + " by " + shape_str(sb));
  };
  if (sa.size() < 2 && !(sa.size() >= 1 && sb.size() == 2)) mismatch();

  if (sb.size() == 2) {
    // Row map: every row of `a` (leading dims flattened) times b.
    const std::size_t k = sa.back();
    if (k != sb[0]) mismatch();
    const std::size_t n = sb[1];
    const std::size_t rows = ia->data.size() / k;
    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);
    std::vector<double> out(rows * n);
    MutMap(out.data(), rows, n).noalias() = ConstMap(ia->data.data(), rows, k) * ConstMap(ib->data.data(), k, n);
    ImplPtr pa = ia, pb = ib;
    return finish(OpKind::kMatMul, {a, b}, out_shape, std::move(out), [=](TensorImpl* o) {
      return [=]() {
        ConstMap g(o->grad.data(), rows, n);
        if (pa->requires_grad) {
          pa->ensure_grad();
          MutMap(pa->grad.data(), rows, k).noalias() += g * ConstMap(pb->data.data(), k, n).transpose();
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          MutMap(pb->grad.data(), k, n).noalias() += ConstMap(pa->data.data(), rows, k).transpose() * g;
        }
      };
    });
  }

  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1]) mismatch();
  const std::size_t batch = sa[0], m = sa[1], k = sa[2], n = sb[2];
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    MutMap(out.data() + i * m * n, m, n).noalias() =
        ConstMap(ia->data.data() + i * m * k, m, k) * ConstMap(ib->data.data() + i * k * n, k, n);
  }
  ImplPtr pa = ia, pb = ib;
  return finish(OpKind::kMatMul, {a, b}, {batch, m, n}, std::move(out), [=](TensorImpl* o) {
    return [=]() {
      if (pa->requires_grad) pa->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      for (std::size_t i = 0; i < batch; ++i) {
        ConstMap g(o->grad.data() + i * m * n, m, n);
        if (pa->requires_grad) {
          MutMap(pa->grad.data() + i * m * k, m, k).noalias() +=
              g * ConstMap(pb->data.data() + i * k * n, k, n).transpose();
        }
        if (pb->requires_grad) {
          MutMap(pb->grad.data() + i * k * n, k, n).noalias() +=
              ConstMap(pa->data.data() + i * m * k, m, k).transpose() * g;
        }
      }
    };
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      OpKind::kRelu, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      OpKind::kGelu, x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); },
      [](double v, double) {
        const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      });
}

Tensor square(const Tensor& x) {
  return unary(
      OpKind::kSquare, x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt_scalar(const Tensor& x) {
  if (!is_scalar(x)) shape_fail(OpKind::kSqrtScalar, "expects a scalar, got " + shape_str(x.shape()));
  if (x.item() < 0.0) throw std::domain_error("sqrt_scalar: negative input");
  return unary(
      OpKind::kSqrtScalar, x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      OpKind::kScale, x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor softmax_lastdim(const Tensor& x) {
  const auto& ix = I(x);
  const std::size_t n = ix->shape.back();
  const std::size_t rows = ix->data.size() / n;
  std::vector<double> out(ix->data.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = ix->data.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  ImplPtr px = ix;
  return finish(OpKind::kSoftmaxLastDim, {x}, ix->shape, std::move(out), [=](TensorImpl* o) {
    return [=]() {
      px->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = o->data.data() + r * n;
        const double* g = o->grad.data() + r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) px->grad[r * n + j] += y[j] * (g[j] - dot);
      }
    };
  });
}

Tensor sum(const Tensor& x) {
  const auto& ix = I(x);
  double s = 0.0;
  for (double v : ix->data) s += v;
  ImplPtr px = ix;
  return finish(OpKind::kSum, {x}, {1}, {s}, [=](TensorImpl* o) {
    return [=]() {
      px->ensure_grad();
      for (auto& g : px->grad) g += o->grad[0];
    };
  });
}

Tensor mean(const Tensor& x) {
  const auto& ix = I(x);
  const double n = static_cast<double>(ix->data.size());
  double s = 0.0;
  for (double v : ix->data) s += v;
  ImplPtr px = ix;
  return finish(OpKind::kMean, {x}, {1}, {s / n}, [=](TensorImpl* o) {
    return [=]() {
      px->ensure_grad();
      const double g = o->grad[0] / n;
      for (auto& v : px->grad) v += g;
    };
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) shape_fail(OpKind::kConcat, "no inputs");
  const Shape& first = I(parts[0])->shape;
  if (axis >= first.size()) shape_fail(OpKind::kConcat, "axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = I(p)->shape;
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) shape_fail(OpKind::kConcat, "shapes " + shape_str(first) + " and " + shape_str(s) + " differ off-axis");
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_stride = out_shape[axis] * inner;

  std::vector<double> out(numel(out_shape));
  std::vector<ImplPtr> impls;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& ip = I(p);
    const std::size_t block = ip->shape[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(ip->data.data() + o * block, block, out.data() + o * out_stride + offset);
    }
    impls.push_back(ip);
    offsets.push_back(offset);
    offset += block;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return finish(OpKind::kConcat, std::move(inputs), out_shape, std::move(out), [=](TensorImpl* o) {
    return [=]() {
      for (std::size_t p = 0; p < impls.size(); ++p) {
        const auto& ip = impls[p];
        if (!ip->requires_grad) continue;
        ip->ensure_grad();
        const std::size_t block = ip->shape[axis] * inner;
        for (std::size_t r = 0; r < outer; ++r) {
          const double* src = o->grad.data() + r * out_stride + offsets[p];
          double* dst = ip->grad.data() + r * block;
          for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
        }
      }
    };
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto& ix = I(x);
  const Shape& s = ix->shape;
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    shape_fail(OpKind::kSlice, "range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                                   std::to_string(axis) + " invalid for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t in_stride = s[axis] * inner;
  const std::size_t block = (end - begin) * inner;
  std::vector<double> out(outer * block);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(ix->data.data() + o * in_stride + begin * inner, block, out.data() + o * block);
  }
  ImplPtr px = ix;
  return finish(OpKind::kSlice, {x}, out_shape, std::move(out), [=](TensorImpl* o) {
    return [=]() {
      px->ensure_grad();
      for (std::size_t r = 0; r < outer; ++r) {
        double* dst = px->grad.data() + r * in_stride + begin * inner;
        const double* src = o->grad.data() + r * block;
        for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
      }
    };
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids) {
  const auto& it = I(table);
  if (it->shape.size() != 2) shape_fail(OpKind::kEmbeddingLookup, "table must be 2-D, got " + shape_str(it->shape));
  if (ids.empty()) shape_fail(OpKind::kEmbeddingLookup, "empty id list");
  const std::size_t vocab = it->shape[0], dim = it->shape[1];
  std::vector<double> out(ids.size() * dim);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[r]) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
    std::copy_n(it->data.data() + ids[r] * dim, dim, out.data() + r * dim);
  }
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  ImplPtr pt = it;
  return finish(OpKind::kEmbeddingLookup, {table}, {ids.size(), dim}, std::move(out), [=](TensorImpl* o) {
    return [=]() {
      pt->ensure_grad();
      for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t j = 0; j < dim; ++j) pt->grad[rows[r] * dim + j] += o->grad[r * dim + j];
      }
    };
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const auto& ix = I(x);
  const auto& ib = I(bias);
  const std::size_t n = ix->shape.back();
  if (ib->shape.size() != 1 || ib->shape[0] != n) {
    shape_fail(OpKind::kAddBias, "bias " + shape_str(ib->shape) + " does not match rows of " + shape_str(ix->shape));
  }
  const std::size_t rows = ix->data.size() / n;
  std::vector<double> out(ix->data);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += ib->data[j];
  }
  ImplPtr px = ix, pb = ib;
  return finish(OpKind::kAddBias, {x, bias}, ix->shape, std::move(out), [=](TensorImpl* o) {
    return [=]() {
      if (px->requires_grad) {
        px->ensure_grad();
        for (std::size_t i = 0; i < o->grad.size(); ++i) px->grad[i] += o->grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) pb->grad[j] += o->grad[r * n + j];
        }
      }
    };
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  const auto& ix = I(x);
  check_shape(shape);
  if (numel(shape) != ix->data.size()) {
    shape_fail(OpKind::kReshape, "cannot view " + shape_str(ix->shape) + " as " + shape_str(shape));
  }
  ImplPtr px = ix;
  return finish(OpKind::kReshape, {x}, std::move(shape), ix->data, [=](TensorImpl* o) {
    return [=]() {
      px->ensure_grad();
      for (std::size_t i = 0; i < o->grad.size(); ++i) px->grad[i] += o->grad[i];
    };
  });
}

Tensor transpose_last2(const Tensor& x) {
  const auto& ix = I(x);
  const Shape& s = ix->shape;
  if (s.size() < 2) shape_fail(OpKind::kTransposeLast2, "needs rank >= 2, got " + shape_str(s));
  const std::size_t m = s[s.size() - 2], n = s.back();
  const std::size_t batch = ix->data.size() / (m * n);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape.back());
  std::vector<double> out(ix->data.size());
  for (std::size_t b = 0; b < batch; ++b) {
    MutMap(out.data() + b * m * n, n, m) = ConstMap(ix->data.data() + b * m * n, m, n).transpose();
  }
  ImplPtr px = ix;
  return finish(OpKind::kTransposeLast2, {x}, out_shape, std::move(out), [=](TensorImpl* o) {
    return [=]() {
      px->ensure_grad();
      for (std::size_t b = 0; b < batch; ++b) {
        MutMap(px->grad.data() + b * m * n, m, n) += ConstMap(o->grad.data() + b * m * n, n, m).transpose();
      }
    };
  });
}

Tensor mse(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }

// ---- backward ------------------------------------------------------------

void backward(Graph& graph, const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  const auto& nodes = graph.nodes();
  std::size_t end = nodes.size();
  while (end > 0 && !nodes[end - 1].output.same_as(loss)) --end;
  if (end == 0) throw std::invalid_argument("backward: loss is not an output of this graph");

  for (std::size_t i = 0; i < end; ++i) OpAccess::impl(nodes[i].output)->grad.clear();
  auto& lg = OpAccess::impl(loss)->grad;
  lg.assign(1, 1.0);
  for (std::size_t i = end; i-- > 0;) {
    const auto& out = OpAccess::impl(nodes[i].output);
    if (!out->grad.empty()) nodes[i].backward();
  }
}

}  // namespace xlkd
