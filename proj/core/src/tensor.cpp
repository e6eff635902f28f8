#include "jmt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace jmt {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  // Persistent accumulator on leaves; traversal-local buffer on interior
  // nodes (cleared at the start of every backward pass).
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = nullptr;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void()> backward_fn;

  bool is_leaf() const { return parents.empty(); }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

namespace {

thread_local int g_no_grad_depth = 0;

ImplPtr make_impl(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (int64_t d : shape) {
    if (d <= 0)
      throw ShapeError("tensor dimensions must be positive, got " +
                       shape_to_string(shape));
  }
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_to_string(shape));
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

bool wants_graph(std::initializer_list<ImplPtr> parents) {
  if (g_no_grad_depth > 0) return false;
  for (const auto& p : parents)
    if (p->requires_grad) return true;
  return false;
}

void attach(const ImplPtr& out, const char* op, std::vector<ImplPtr> parents,
            std::function<void()> fn) {
  out->requires_grad = true;
  out->op = op;
  out->parents = std::move(parents);
  out->backward_fn = std::move(fn);
}

// Decomposes a shape around an axis into (outer, n, inner) strides so axis
// ops can be written once for any rank.
struct AxisView {
  int64_t outer, n, inner;
};

AxisView axis_view(const Shape& s, int axis) {
  int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw ShapeError("axis out of range for shape " + shape_to_string(s));
  AxisView v{1, s[axis], 1};
  for (int i = 0; i < axis; ++i) v.outer *= s[i];
  for (int i = axis + 1; i < r; ++i) v.inner *= s[i];
  return v;
}

int normalize_axis(const Shape& s, int axis) {
  int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw ShapeError("axis out of range for shape " + shape_to_string(s));
  return axis;
}

void require_same_shape(const char* op, const ImplPtr& a, const ImplPtr& b) {
  if (a->shape != b->shape)
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_to_string(a->shape) + " vs " +
                     shape_to_string(b->shape));
}

}  // namespace

// ---- Tensor handle ---------------------------------------------------------

static ImplPtr get(const Tensor& t) {
  auto impl = t.impl();
  if (!impl) throw ShapeError("operation on undefined tensor");
  return impl;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  int64_t n = shape_numel(shape);
  auto impl = make_impl(std::move(shape), std::vector<double>(n, value));
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  auto impl = make_impl(std::move(shape), std::move(data));
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng,
                       bool requires_grad) {
  int64_t n = shape_numel(shape);
  std::vector<double> data(n);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : data) v = dist(rng);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::normal(Shape shape, double mean, double stddev, Rng& rng,
                      bool requires_grad) {
  int64_t n = shape_numel(shape);
  std::vector<double> data(n);
  std::normal_distribution<double> dist(mean, stddev);
  for (auto& v : data) v = dist(rng);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

const Shape& Tensor::shape() const { return get(*this)->shape; }
int Tensor::rank() const { return static_cast<int>(get(*this)->shape.size()); }
int64_t Tensor::numel() const { return get(*this)->numel(); }

const std::vector<double>& Tensor::data() const { return get(*this)->data; }
std::vector<double>& Tensor::data() { return get(*this)->data; }

double Tensor::at(int64_t i) const { return get(*this)->data.at(i); }
double& Tensor::at(int64_t i) { return get(*this)->data.at(i); }

double Tensor::at(int64_t i, int64_t j) const {
  const auto& impl = get(*this);
  if (impl->shape.size() != 2) throw ShapeError("at(i,j) requires rank 2");
  return impl->data.at(i * impl->shape[1] + j);
}

double& Tensor::at(int64_t i, int64_t j) {
  const auto& impl = get(*this);
  if (impl->shape.size() != 2) throw ShapeError("at(i,j) requires rank 2");
  return impl->data.at(i * impl->shape[1] + j);
}

double Tensor::item() const {
  const auto& impl = get(*this);
  if (impl->numel() != 1)
    throw ShapeError("item() requires a single-element tensor, got " +
                     shape_to_string(impl->shape));
  return impl->data[0];
}

bool Tensor::requires_grad() const { return get(*this)->requires_grad; }

bool Tensor::has_grad() const {
  const auto& impl = get(*this);
  return impl->grad.size() == impl->data.size();
}

const std::vector<double>& Tensor::grad() const {
  const auto& impl = get(*this);
  if (impl->grad.size() != impl->data.size())
    throw ConfigError("tensor has no gradient; call backward() first");
  return impl->grad;
}

void Tensor::zero_grad() {
  auto impl = get(*this);
  impl->grad.assign(impl->data.size(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& impl = get(*this);
  return from_data(impl->shape, impl->data, false);
}

void Tensor::backward() const {
  auto root = get(*this);
  if (root->numel() != 1)
    throw ConfigError("backward() requires a scalar loss, got shape " +
                      shape_to_string(root->shape));
  if (!root->requires_grad) return;  // nothing reachable wants gradients

  // Topological order over the requires_grad subgraph, parents first.
  std::vector<TensorImpl*> topo;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  // Leaves keep accumulating across calls; interior buffers start fresh.
  for (TensorImpl* node : topo) {
    if (node->is_leaf())
      node->ensure_grad();
    else
      node->grad.assign(node->data.size(), 0.0);
  }
  root->grad[0] += 1.0;

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn();
  }
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

// ---- elementwise -----------------------------------------------------------

namespace {

// Shared scaffolding for binary same-shape ops.
template <typename Fwd, typename Bwd>
Tensor binary_op(const char* name, const Tensor& ta, const Tensor& tb, Fwd fwd,
                 Bwd bwd) {
  auto a = get(ta), b = get(tb);
  require_same_shape(name, a, b);
  int64_t n = a->numel();
  std::vector<double> out(n);
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(a->data[i], b->data[i]);
  auto o = make_impl(a->shape, std::move(out));
  if (wants_graph({a, b}))
    attach(o, name, {a, b}, [o = o.get(), a, b, bwd]() {
      const auto& g = o->grad;
      for (int64_t i = 0; i < static_cast<int64_t>(g.size()); ++i)
        bwd(g[i], a->data[i], b->data[i],
            a->requires_grad ? &a->grad[i] : nullptr,
            b->requires_grad ? &b->grad[i] : nullptr);
    });
  return Tensor(o);
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* name, const Tensor& ta, Fwd fwd, Bwd bwd) {
  auto a = get(ta);
  int64_t n = a->numel();
  std::vector<double> out(n);
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(a->data[i]);
  auto o = make_impl(a->shape, std::move(out));
  if (wants_graph({a}))
    attach(o, name, {a}, [o = o.get(), a, bwd]() {
      for (int64_t i = 0; i < static_cast<int64_t>(o->grad.size()); ++i)
        a->grad[i] += bwd(o->grad[i], a->data[i], o->data[i]);
    });
  return Tensor(o);
}

}  // namespace

Tensor add(const Tensor& ta, const Tensor& tb) {
  return binary_op(
      "add", ta, tb, [](double a, double b) { return a + b; },
      [](double g, double, double, double* da, double* db) {
        if (da) *da += g;
        if (db) *db += g;
      });
}

Tensor sub(const Tensor& ta, const Tensor& tb) {
  return binary_op(
      "sub", ta, tb, [](double a, double b) { return a - b; },
      [](double g, double, double, double* da, double* db) {
        if (da) *da += g;
        if (db) *db -= g;
      });
}

Tensor mul(const Tensor& ta, const Tensor& tb) {
  return binary_op(
      "mul", ta, tb, [](double a, double b) { return a * b; },
      [](double g, double a, double b, double* da, double* db) {
        if (da) *da += g * b;
        if (db) *db += g * a;
      });
}

Tensor div(const Tensor& ta, const Tensor& tb) {
  return binary_op(
      "div", ta, tb, [](double a, double b) { return a / b; },
      [](double g, double a, double b, double* da, double* db) {
        if (da) *da += g / b;
        if (db) *db -= g * a / (b * b);
      });
}

Tensor add_scalar(const Tensor& ta, double s) {
  return unary_op(
      "add_scalar", ta, [s](double a) { return a + s; },
      [](double g, double, double) { return g; });
}

Tensor mul_scalar(const Tensor& ta, double s) {
  return unary_op(
      "mul_scalar", ta, [s](double a) { return a * s; },
      [s](double g, double, double) { return g * s; });
}

Tensor relu(const Tensor& ta) {
  return unary_op(
      "relu", ta, [](double a) { return a > 0.0 ? a : 0.0; },
      [](double g, double a, double) { return a > 0.0 ? g : 0.0; });
}

Tensor exp(const Tensor& ta) {
  return unary_op(
      "exp", ta, [](double a) { return std::exp(a); },
      [](double g, double, double y) { return g * y; });
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& ta, const Tensor& tb) {
  auto a = get(ta), b = get(tb);
  if (a->shape.size() != 2 || b->shape.size() != 2)
    throw ShapeError("matmul requires rank-2 operands, got " +
                     shape_to_string(a->shape) + " and " +
                     shape_to_string(b->shape));
  int64_t m = a->shape[0], k = a->shape[1];
  int64_t k2 = b->shape[0], n = b->shape[1];
  if (k != k2)
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_to_string(a->shape) + " @ " +
                     shape_to_string(b->shape));
  std::vector<double> out(m * n, 0.0);
  const double* A = a->data.data();
  const double* B = b->data.data();
  for (int64_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    const double* arow = A + i * k;
    for (int64_t p = 0; p < k; ++p) {
      double aip = arow[p];
      const double* brow = B + p * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  auto o = make_impl({m, n}, std::move(out));
  if (wants_graph({a, b}))
    attach(o, "matmul", {a, b}, [o = o.get(), a, b, m, k, n]() {
      const double* G = o->grad.data();
      if (a->requires_grad) {
        double* dA = a->grad.data();
        const double* B = b->data.data();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t p = 0; p < k; ++p) {
            double s = 0.0;
            const double* grow = G + i * n;
            const double* brow = B + p * n;
            for (int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            dA[i * k + p] += s;
          }
      }
      if (b->requires_grad) {
        double* dB = b->grad.data();
        const double* A = a->data.data();
        for (int64_t i = 0; i < m; ++i) {
          const double* grow = G + i * n;
          for (int64_t p = 0; p < k; ++p) {
            double aip = A[i * k + p];
            double* brow = dB + p * n;
            for (int64_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
          }
        }
      }
    });
  return Tensor(o);
}

Tensor transpose(const Tensor& ta) {
  auto a = get(ta);
  if (a->shape.size() != 2)
    throw ShapeError("transpose requires rank 2, got " +
                     shape_to_string(a->shape));
  int64_t m = a->shape[0], n = a->shape[1];
  std::vector<double> out(m * n);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = a->data[i * n + j];
  auto o = make_impl({n, m}, std::move(out));
  if (wants_graph({a}))
    attach(o, "transpose", {a}, [o = o.get(), a, m, n]() {
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
          a->grad[i * n + j] += o->grad[j * m + i];
    });
  return Tensor(o);
}

Tensor reshape(const Tensor& ta, Shape shape) {
  auto a = get(ta);
  if (shape_numel(shape) != a->numel())
    throw ShapeError("reshape from " + shape_to_string(a->shape) + " to " +
                     shape_to_string(shape) + " changes element count");
  auto o = make_impl(std::move(shape), a->data);
  if (wants_graph({a}))
    attach(o, "reshape", {a}, [o = o.get(), a]() {
      for (size_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i];
    });
  return Tensor(o);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  std::vector<ImplPtr> impls;
  impls.reserve(parts.size());
  for (const auto& p : parts) impls.push_back(get(p));
  const Shape& first = impls[0]->shape;
  int ax = normalize_axis(first, axis);
  int64_t axis_total = 0;
  for (const auto& impl : impls) {
    if (impl->shape.size() != first.size())
      throw ShapeError("concat: rank mismatch " + shape_to_string(first) +
                       " vs " + shape_to_string(impl->shape));
    for (size_t d = 0; d < first.size(); ++d)
      if (static_cast<int>(d) != ax && impl->shape[d] != first[d])
        throw ShapeError("concat: shapes differ off-axis, " +
                         shape_to_string(first) + " vs " +
                         shape_to_string(impl->shape));
    axis_total += impl->shape[ax];
  }
  Shape out_shape = first;
  out_shape[ax] = axis_total;
  AxisView v = axis_view(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  int64_t offset = 0;  // running offset along the axis
  for (const auto& impl : impls) {
    int64_t len = impl->shape[ax] * v.inner;
    for (int64_t o = 0; o < v.outer; ++o) {
      const double* src = impl->data.data() + o * len;
      double* dst = out.data() + o * v.n * v.inner + offset * v.inner;
      std::copy(src, src + len, dst);
    }
    offset += impl->shape[ax];
  }
  auto o = make_impl(std::move(out_shape), std::move(out));
  bool track = false;
  if (g_no_grad_depth == 0)
    for (const auto& impl : impls)
      if (impl->requires_grad) track = true;
  if (track) {
    std::vector<ImplPtr> parents(impls.begin(), impls.end());
    attach(o, "concat", parents, [o = o.get(), impls, v, ax]() {
      int64_t offset = 0;
      for (const auto& impl : impls) {
        int64_t len = impl->shape[ax] * v.inner;
        if (impl->requires_grad) {
          for (int64_t ou = 0; ou < v.outer; ++ou) {
            const double* src =
                o->grad.data() + ou * v.n * v.inner + offset * v.inner;
            double* dst = impl->grad.data() + ou * len;
            for (int64_t i = 0; i < len; ++i) dst[i] += src[i];
          }
        }
        offset += impl->shape[ax];
      }
    });
  }
  return Tensor(o);
}

Tensor slice(const Tensor& ta, int axis, int64_t start, int64_t stop) {
  auto a = get(ta);
  int ax = normalize_axis(a->shape, axis);
  int64_t dim = a->shape[ax];
  if (start < 0 || stop > dim || start >= stop)
    throw ShapeError("slice [" + std::to_string(start) + "," +
                     std::to_string(stop) + ") out of range for axis " +
                     std::to_string(ax) + " of " + shape_to_string(a->shape));
  AxisView v = axis_view(a->shape, ax);
  Shape out_shape = a->shape;
  out_shape[ax] = stop - start;
  std::vector<double> out(shape_numel(out_shape));
  int64_t out_len = (stop - start) * v.inner;
  for (int64_t o = 0; o < v.outer; ++o) {
    const double* src = a->data.data() + o * v.n * v.inner + start * v.inner;
    std::copy(src, src + out_len, out.data() + o * out_len);
  }
  auto o = make_impl(std::move(out_shape), std::move(out));
  if (wants_graph({a}))
    attach(o, "slice", {a}, [o = o.get(), a, v, start, out_len]() {
      for (int64_t ou = 0; ou < v.outer; ++ou) {
        const double* src = o->grad.data() + ou * out_len;
        double* dst = a->grad.data() + ou * v.n * v.inner + start * v.inner;
        for (int64_t i = 0; i < out_len; ++i) dst[i] += src[i];
      }
    });
  return Tensor(o);
}

// ---- reductions and normalization -------------------------------------------

Tensor softmax(const Tensor& ta, int axis) {
  auto a = get(ta);
  for (double x : a->data)
    if (!std::isfinite(x))
      throw NumericError("softmax: non-finite input value");
  AxisView v = axis_view(a->shape, normalize_axis(a->shape, axis));
  std::vector<double> out(a->numel());
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t in = 0; in < v.inner; ++in) {
      const int64_t base = o * v.n * v.inner + in;
      double mx = a->data[base];
      for (int64_t i = 1; i < v.n; ++i)
        mx = std::max(mx, a->data[base + i * v.inner]);
      double sum = 0.0;
      for (int64_t i = 0; i < v.n; ++i) {
        double e = std::exp(a->data[base + i * v.inner] - mx);
        out[base + i * v.inner] = e;
        sum += e;
      }
      for (int64_t i = 0; i < v.n; ++i) out[base + i * v.inner] /= sum;
    }
  auto o = make_impl(a->shape, std::move(out));
  if (wants_graph({a}))
    attach(o, "softmax", {a}, [o = o.get(), a, v]() {
      // dx_i = y_i * (g_i - sum_j g_j y_j) per slice
      for (int64_t ou = 0; ou < v.outer; ++ou)
        for (int64_t in = 0; in < v.inner; ++in) {
          const int64_t base = ou * v.n * v.inner + in;
          double dot = 0.0;
          for (int64_t i = 0; i < v.n; ++i) {
            int64_t idx = base + i * v.inner;
            dot += o->grad[idx] * o->data[idx];
          }
          for (int64_t i = 0; i < v.n; ++i) {
            int64_t idx = base + i * v.inner;
            a->grad[idx] += o->data[idx] * (o->grad[idx] - dot);
          }
        }
    });
  return Tensor(o);
}

Tensor sum_all(const Tensor& ta) {
  auto a = get(ta);
  double s = std::accumulate(a->data.begin(), a->data.end(), 0.0);
  auto o = make_impl({1}, {s});
  if (wants_graph({a}))
    attach(o, "sum_all", {a}, [o = o.get(), a]() {
      double g = o->grad[0];
      for (auto& d : a->grad) d += g;
    });
  return Tensor(o);
}

Tensor mean_all(const Tensor& ta) {
  auto a = get(ta);
  double inv = 1.0 / static_cast<double>(a->numel());
  double s = std::accumulate(a->data.begin(), a->data.end(), 0.0) * inv;
  auto o = make_impl({1}, {s});
  if (wants_graph({a}))
    attach(o, "mean_all", {a}, [o = o.get(), a, inv]() {
      double g = o->grad[0] * inv;
      for (auto& d : a->grad) d += g;
    });
  return Tensor(o);
}

namespace {

Shape drop_axis(const Shape& s, int ax) {
  Shape out;
  for (size_t i = 0; i < s.size(); ++i)
    if (static_cast<int>(i) != ax) out.push_back(s[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

Tensor mean_axis(const Tensor& ta, int axis) {
  auto a = get(ta);
  int ax = normalize_axis(a->shape, axis);
  AxisView v = axis_view(a->shape, ax);
  double inv = 1.0 / static_cast<double>(v.n);
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t i = 0; i < v.n; ++i)
      for (int64_t in = 0; in < v.inner; ++in)
        out[o * v.inner + in] += a->data[(o * v.n + i) * v.inner + in];
  for (auto& x : out) x *= inv;
  auto o = make_impl(drop_axis(a->shape, ax), std::move(out));
  if (wants_graph({a}))
    attach(o, "mean_axis", {a}, [o = o.get(), a, v, inv]() {
      for (int64_t ou = 0; ou < v.outer; ++ou)
        for (int64_t i = 0; i < v.n; ++i)
          for (int64_t in = 0; in < v.inner; ++in)
            a->grad[(ou * v.n + i) * v.inner + in] +=
                o->grad[ou * v.inner + in] * inv;
    });
  return Tensor(o);
}

Tensor variance_axis(const Tensor& ta, int axis) {
  auto a = get(ta);
  int ax = normalize_axis(a->shape, axis);
  AxisView v = axis_view(a->shape, ax);
  double inv = 1.0 / static_cast<double>(v.n);
  std::vector<double> mean(v.outer * v.inner, 0.0);
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t i = 0; i < v.n; ++i)
      for (int64_t in = 0; in < v.inner; ++in)
        mean[o * v.inner + in] += a->data[(o * v.n + i) * v.inner + in];
  for (auto& m : mean) m *= inv;
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t i = 0; i < v.n; ++i)
      for (int64_t in = 0; in < v.inner; ++in) {
        double d = a->data[(o * v.n + i) * v.inner + in] - mean[o * v.inner + in];
        out[o * v.inner + in] += d * d;
      }
  for (auto& x : out) x *= inv;
  auto o = make_impl(drop_axis(a->shape, ax), std::move(out));
  if (wants_graph({a}))
    attach(o, "variance_axis", {a}, [o = o.get(), a, v, inv,
                                     mean = std::move(mean)]() {
      // d var/d x_i = 2 (x_i - mu) / n
      for (int64_t ou = 0; ou < v.outer; ++ou)
        for (int64_t i = 0; i < v.n; ++i)
          for (int64_t in = 0; in < v.inner; ++in) {
            int64_t idx = (ou * v.n + i) * v.inner + in;
            a->grad[idx] += o->grad[ou * v.inner + in] * 2.0 * inv *
                            (a->data[idx] - mean[ou * v.inner + in]);
          }
    });
  return Tensor(o);
}

Tensor add_bias(const Tensor& tx, const Tensor& tb) {
  auto x = get(tx), b = get(tb);
  if (x->shape.size() != 2 || b->shape.size() != 1 ||
      x->shape[1] != b->shape[0])
    throw ShapeError("add_bias: expected [T x D] and [D], got " +
                     shape_to_string(x->shape) + " and " +
                     shape_to_string(b->shape));
  int64_t t = x->shape[0], d = x->shape[1];
  std::vector<double> out(x->data);
  for (int64_t i = 0; i < t; ++i)
    for (int64_t j = 0; j < d; ++j) out[i * d + j] += b->data[j];
  auto o = make_impl(x->shape, std::move(out));
  if (wants_graph({x, b}))
    attach(o, "add_bias", {x, b}, [o = o.get(), x, b, t, d]() {
      if (x->requires_grad)
        for (size_t i = 0; i < o->grad.size(); ++i) x->grad[i] += o->grad[i];
      if (b->requires_grad)
        for (int64_t i = 0; i < t; ++i)
          for (int64_t j = 0; j < d; ++j) b->grad[j] += o->grad[i * d + j];
    });
  return Tensor(o);
}

Tensor dropout(const Tensor& ta, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout rate must be in [0, 1), got " +
                      std::to_string(rate));
  if (!training || rate == 0.0) return ta;
  auto a = get(ta);
  double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> mask(a->numel());
  std::vector<double> out(a->numel());
  for (int64_t i = 0; i < a->numel(); ++i) {
    mask[i] = dist(rng) < rate ? 0.0 : keep_scale;
    out[i] = a->data[i] * mask[i];
  }
  auto o = make_impl(a->shape, std::move(out));
  if (wants_graph({a}))
    attach(o, "dropout", {a}, [o = o.get(), a, mask = std::move(mask)]() {
      for (size_t i = 0; i < o->grad.size(); ++i)
        a->grad[i] += o->grad[i] * mask[i];
    });
  return Tensor(o);
}

Tensor im2col1d(const Tensor& tx, int64_t kernel, int64_t stride) {
  auto x = get(tx);
  if (x->shape.size() != 2)
    throw ShapeError("im2col1d requires [L x C], got " +
                     shape_to_string(x->shape));
  int64_t L = x->shape[0], C = x->shape[1];
  if (kernel <= 0 || stride <= 0)
    throw ConfigError("im2col1d: kernel and stride must be positive");
  if (L < kernel)
    throw ShapeError("im2col1d: input length " + std::to_string(L) +
                     " shorter than kernel " + std::to_string(kernel));
  int64_t lout = (L - kernel) / stride + 1;
  std::vector<double> out(lout * C * kernel);
  for (int64_t t = 0; t < lout; ++t)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t j = 0; j < kernel; ++j)
        out[t * C * kernel + c * kernel + j] = x->data[(t * stride + j) * C + c];
  auto o = make_impl({lout, C * kernel}, std::move(out));
  if (wants_graph({x}))
    attach(o, "im2col1d", {x}, [o = o.get(), x, lout, C, kernel, stride]() {
      for (int64_t t = 0; t < lout; ++t)
        for (int64_t c = 0; c < C; ++c)
          for (int64_t j = 0; j < kernel; ++j)
            x->grad[(t * stride + j) * C + c] +=
                o->grad[t * C * kernel + c * kernel + j];
    });
  return Tensor(o);
}

Tensor maxpool1d(const Tensor& tx, int64_t kernel, int64_t stride) {
  auto x = get(tx);
  if (x->shape.size() != 2)
    throw ShapeError("maxpool1d requires [L x C], got " +
                     shape_to_string(x->shape));
  int64_t L = x->shape[0], C = x->shape[1];
  if (kernel <= 0 || stride <= 0)
    throw ConfigError("maxpool1d: kernel and stride must be positive");
  if (L < kernel)
    throw ShapeError("maxpool1d: input length " + std::to_string(L) +
                     " shorter than kernel " + std::to_string(kernel));
  int64_t lout = (L - kernel) / stride + 1;
  std::vector<double> out(lout * C);
  std::vector<int64_t> argmax(lout * C);
  for (int64_t t = 0; t < lout; ++t)
    for (int64_t c = 0; c < C; ++c) {
      int64_t best = (t * stride) * C + c;
      double bv = x->data[best];
      for (int64_t j = 1; j < kernel; ++j) {
        int64_t idx = (t * stride + j) * C + c;
        if (x->data[idx] > bv) {
          bv = x->data[idx];
          best = idx;
        }
      }
      out[t * C + c] = bv;
      argmax[t * C + c] = best;
    }
  auto o = make_impl({lout, C}, std::move(out));
  if (wants_graph({x}))
    attach(o, "maxpool1d", {x}, [o = o.get(), x, argmax = std::move(argmax)]() {
      for (size_t i = 0; i < o->grad.size(); ++i)
        x->grad[argmax[i]] += o->grad[i];
    });
  return Tensor(o);
}

Tensor layer_norm(const Tensor& tx, const Tensor& tgain, const Tensor& tshift,
                  double epsilon) {
  auto x = get(tx);
  auto gain = get(tgain);
  auto shift = get(tshift);
  if (x->shape.empty() || gain->shape.size() != 1 || shift->shape.size() != 1)
    throw ShapeError("layer_norm: bad parameter shapes");
  int64_t d = x->shape.back();
  if (gain->shape[0] != d || shift->shape[0] != d)
    throw ShapeError("layer_norm: feature dim " + std::to_string(d) +
                     " does not match parameters " +
                     shape_to_string(gain->shape));
  int64_t rows = x->numel() / d;
  std::vector<double> xhat(x->numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x->numel());
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = x->data.data() + r * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + epsilon);
    inv_std[r] = is;
    for (int64_t j = 0; j < d; ++j) {
      double xh = (row[j] - mu) * is;
      xhat[r * d + j] = xh;
      out[r * d + j] = gain->data[j] * xh + shift->data[j];
    }
  }
  auto o = make_impl(x->shape, std::move(out));
  if (wants_graph({x, gain, shift}))
    attach(o, "layer_norm", {x, gain, shift},
           [o = o.get(), x, gain, shift, rows, d, xhat = std::move(xhat),
            inv_std = std::move(inv_std)]() {
             for (int64_t r = 0; r < rows; ++r) {
               const double* g = o->grad.data() + r * d;
               const double* xh = xhat.data() + r * d;
               if (gain->requires_grad)
                 for (int64_t j = 0; j < d; ++j)
                   gain->grad[j] += g[j] * xh[j];
               if (shift->requires_grad)
                 for (int64_t j = 0; j < d; ++j) shift->grad[j] += g[j];
               if (x->requires_grad) {
                 // dx = inv_std * (h - mean(h) - xhat * mean(h*xhat)),
                 // h = g * gain
                 double mean_h = 0.0, mean_hx = 0.0;
                 for (int64_t j = 0; j < d; ++j) {
                   double h = g[j] * gain->data[j];
                   mean_h += h;
                   mean_hx += h * xh[j];
                 }
                 mean_h /= static_cast<double>(d);
                 mean_hx /= static_cast<double>(d);
                 for (int64_t j = 0; j < d; ++j) {
                   double h = g[j] * gain->data[j];
                   x->grad[r * d + j] +=
                       inv_std[r] * (h - mean_h - xh[j] * mean_hx);
                 }
               }
             }
           });
  return Tensor(o);
}

Tensor cross_entropy(const Tensor& tlogits, const std::vector<int>& labels) {
  auto logits = get(tlogits);
  if (logits->shape.size() != 2)
    throw ShapeError("cross_entropy requires [N x C] logits, got " +
                     shape_to_string(logits->shape));
  int64_t n = logits->shape[0], c = logits->shape[1];
  if (static_cast<int64_t>(labels.size()) != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  for (int y : labels)
    if (y < 0 || y >= c)
      throw DataError("cross_entropy: label " + std::to_string(y) +
                      " out of range [0, " + std::to_string(c) + ")");
  std::vector<double> probs(n * c);
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = logits->data.data() + i * c;
    double mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      sum += probs[i * c + j];
    }
    for (int64_t j = 0; j < c; ++j) probs[i * c + j] /= sum;
    loss += mx + std::log(sum) - row[labels[i]];
  }
  loss /= static_cast<double>(n);
  auto o = make_impl({1}, {loss});
  if (wants_graph({logits}))
    attach(o, "cross_entropy", {logits},
           [o = o.get(), logits, labels, n, c, probs = std::move(probs)]() {
             double g = o->grad[0] / static_cast<double>(n);
             for (int64_t i = 0; i < n; ++i)
               for (int64_t j = 0; j < c; ++j)
                 logits->grad[i * c + j] +=
                     g * (probs[i * c + j] - (labels[i] == j ? 1.0 : 0.0));
           });
  return Tensor(o);
}

// ---- gradient checking -------------------------------------------------------

double check_gradients(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                       double epsilon, int64_t max_coords, uint64_t coord_seed) {
  if (!x.requires_grad())
    throw ConfigError("check_gradients: x must have requires_grad");
  if (epsilon <= 0.0) throw ConfigError("check_gradients: epsilon must be > 0");

  x.zero_grad();
  Tensor loss = f(x);
  if (loss.numel() != 1)
    throw ConfigError("check_gradients: f must return a scalar");
  loss.backward();
  std::vector<double> analytic = x.grad();

  std::vector<int64_t> coords;
  int64_t n = x.numel();
  if (max_coords > 0 && max_coords < n) {
    Rng rng(coord_seed);
    std::vector<int64_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    coords.assign(all.begin(), all.begin() + max_coords);
  } else {
    coords.resize(n);
    std::iota(coords.begin(), coords.end(), 0);
  }

  NoGradGuard ng;
  auto& xs = x.data();
  double max_err = 0.0;
  for (int64_t idx : coords) {
    double orig = xs[idx];
    xs[idx] = orig + epsilon;
    double fp = f(x).item();
    xs[idx] = orig - epsilon;
    double fm = f(x).item();
    xs[idx] = orig;
    double numeric = (fp - fm) / (2.0 * epsilon);
    double denom = std::max({std::fabs(analytic[idx]), std::fabs(numeric), 1e-8});
    max_err = std::max(max_err, std::fabs(analytic[idx] - numeric) / denom);
  }
  return max_err;
}

}  // namespace jmt
