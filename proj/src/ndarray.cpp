#include "agentpose/ndarray.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "agentpose/error.hpp"
#include "agentpose/kernels.hpp"

namespace agentpose {

using detail::Node;

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

using GradBuffers = std::vector<std::vector<double>*>;
using BackwardFn = std::function<void(std::span<const double>, GradBuffers&)>;

void check_finite(std::span<const double> v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size())
    throw InvalidArgument("shape " + shape_str(shape) + " does not match " +
                          std::to_string(values.size()) + " values");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::make_shared<std::vector<double>>(std::move(values));
  n->requires_grad = requires_grad;
  return n;
}

// Builds an op result; records history only if some input needs gradient.
NdArray make_result(Shape shape, std::vector<double> values, std::vector<NdArray> inputs,
                    BackwardFn fn, const char* op) {
  check_finite(values, op);
  auto n = make_leaf(std::move(shape), std::move(values), false);
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const NdArray& a) { return a.requires_grad(); });
  if (needs) {
    n->requires_grad = true;
    for (auto& in : inputs) n->parents.push_back(in.node());
    n->backward = std::move(fn);
  }
  return NdArray(std::move(n));
}

void require_same_shape(const NdArray& a, const NdArray& b, const char* op) {
  if (a.shape() != b.shape())
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

void require_matrix(const NdArray& a, const char* op) {
  if (a.ndim() != 2) throw InvalidArgument(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

template <class F>
NdArray unary(const NdArray& a, F&& f, const char* op,
              std::function<double(double, double)> dfdx) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  auto xs = a.node()->values;
  auto ys = std::make_shared<std::vector<double>>(out);
  return make_result(
      a.shape(), std::move(out), {a},
      [xs, ys, dfdx](std::span<const double> g, GradBuffers& pg) {
        if (!pg[0]) return;
        auto& ga = *pg[0];
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx((*xs)[i], (*ys)[i]);
      },
      op);
}

}  // namespace

// ---- NdArray ------------------------------------------------------------

NdArray NdArray::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

NdArray NdArray::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_size(shape);
  return NdArray(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

NdArray NdArray::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_finite(values, "NdArray::from");
  return NdArray(make_leaf(std::move(shape), std::move(values), requires_grad));
}

NdArray NdArray::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& NdArray::shape() const { return node_->shape; }
std::size_t NdArray::size() const { return node_->values->size(); }
std::size_t NdArray::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) throw InvalidArgument("axis out of range");
  return node_->shape[axis];
}
std::span<const double> NdArray::data() const { return *node_->values; }
std::span<double> NdArray::mutable_data() { return *node_->values; }

double NdArray::item() const {
  if (size() != 1) throw InvalidArgument("item() on non-scalar array " + shape_str(shape()));
  return (*node_->values)[0];
}

bool NdArray::requires_grad() const { return node_ && node_->requires_grad; }
bool NdArray::has_grad() const { return node_ && node_->has_grad; }

std::span<const double> NdArray::grad() const {
  if (!has_grad()) throw InvalidArgument("array has no gradient buffer");
  return node_->grad;
}

NdArray NdArray::grad_array() const { return NdArray::from(shape(), std::vector<double>(grad().begin(), grad().end())); }

void NdArray::zero_grad() {
  node_->grad.clear();
  node_->has_grad = false;
}

NdArray NdArray::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->values = node_->values;
  return NdArray(std::move(n));
}

NdArray NdArray::clone(bool requires_grad) const {
  return NdArray(make_leaf(shape(), *node_->values, requires_grad));
}

// ---- reverse pass -------------------------------------------------------

void backward(const NdArray& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw InvalidArgument("backward: loss must be a scalar");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_map<Node*, bool> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited[loss.node().get()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited[p]) {
        visited[p] = true;
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<Node*, std::vector<double>> transient;
  auto buffer_for = [&](Node* n) -> std::vector<double>* {
    if (!n->requires_grad) return nullptr;
    if (!n->backward) {  // leaf: persistent, accumulating
      if (!n->has_grad) {
        n->grad.assign(n->values->size(), 0.0);
        n->has_grad = true;
      }
      return &n->grad;
    }
    auto& buf = transient[n];
    if (buf.empty()) buf.assign(n->values->size(), 0.0);
    return &buf;
  };

  buffer_for(loss.node().get())->at(0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    auto found = transient.find(n);
    if (found == transient.end()) continue;
    GradBuffers pg;
    pg.reserve(n->parents.size());
    for (auto& p : n->parents) pg.push_back(buffer_for(p.get()));
    n->backward(found->second, pg);
    transient.erase(found);
  }
}

NdArray sample_standard_normal(const Shape& shape, Rng& rng) {
  if (shape.empty() || std::any_of(shape.begin(), shape.end(), [](std::size_t e) { return e == 0; }))
    throw InvalidArgument("sample_standard_normal: zero-sized shape " + shape_str(shape));
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.normal();
  return NdArray::from(shape, std::move(v));
}

NdArray finite_difference_grad(const std::function<double(const NdArray&)>& f, const NdArray& x,
                               double eps) {
  if (!(eps > 0.0)) throw InvalidArgument("finite_difference_grad: eps must be positive");
  std::vector<double> base(x.data().begin(), x.data().end());
  std::vector<double> g(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto probe = base;
    probe[i] = base[i] + eps;
    const double fp = f(NdArray::from(x.shape(), probe));
    probe[i] = base[i] - eps;
    const double fm = f(NdArray::from(x.shape(), probe));
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_difference_grad: non-finite function value");
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return NdArray::from(x.shape(), std::move(g));
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw InvalidArgument("relative_error: size mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

// ---- elementwise ----------------------------------------------------------

NdArray add(const NdArray& a, const NdArray& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, GradBuffers& pg) {
                       for (auto* buf : pg)
                         if (buf)
                           for (std::size_t i = 0; i < g.size(); ++i) (*buf)[i] += g[i];
                     },
                     "add");
}

NdArray sub(const NdArray& a, const NdArray& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, GradBuffers& pg) {
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                       if (pg[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] -= g[i];
                     },
                     "sub");
}

NdArray mul(const NdArray& a, const NdArray& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto av = a.node()->values;
  auto bv = b.node()->values;
  return make_result(a.shape(), std::move(out), {a, b},
                     [av, bv](std::span<const double> g, GradBuffers& pg) {
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * (*bv)[i];
                       if (pg[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] += g[i] * (*av)[i];
                     },
                     "mul");
}

NdArray scale(const NdArray& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a[i];
  return make_result(a.shape(), std::move(out), {a},
                     [c](std::span<const double> g, GradBuffers& pg) {
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += c * g[i];
                     },
                     "scale");
}

NdArray add_scalar(const NdArray& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + c;
  return make_result(a.shape(), std::move(out), {a},
                     [](std::span<const double> g, GradBuffers& pg) {
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                     },
                     "add_scalar");
}

NdArray square(const NdArray& a) {
  return unary(a, [](double x) { return x * x; }, "square",
               [](double x, double) { return 2.0 * x; });
}

NdArray gelu(const NdArray& a) {
  // Exact erf form: x * Phi(x).
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      a, [&](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }, "gelu",
      [inv_sqrt_2pi](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        return cdf + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

NdArray tanh(const NdArray& a) {
  return unary(a, [](double x) { return std::tanh(x); }, "tanh",
               [](double, double y) { return 1.0 - y * y; });
}

// ---- linear algebra -------------------------------------------------------

NdArray matmul(const NdArray& a, const NdArray& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw InvalidArgument("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(m * n);
  kernels::gemm({m, n, k}, a.data(), b.data(), out);
  auto av = a.node()->values;
  auto bv = b.node()->values;
  return make_result({m, n}, std::move(out), {a, b},
                     [=](std::span<const double> g, GradBuffers& pg) {
                       // dA = G B^T, dB = A^T G
                       if (pg[0]) kernels::gemm({m, k, n, false, true}, g, *bv, *pg[0], 1.0);
                       if (pg[1]) kernels::gemm({k, n, m, true, false}, *av, g, *pg[1], 1.0);
                     },
                     "matmul");
}

NdArray linear(const NdArray& x, const NdArray& w, const NdArray& bias) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  const std::size_t m = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  if (w.dim(1) != in)
    throw InvalidArgument("linear: input width " + std::to_string(in) + " vs weight " + shape_str(w.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != out_f) throw InvalidArgument("linear: bias size mismatch");
  std::vector<double> out(m * out_f);
  if (has_bias) {
    for (std::size_t r = 0; r < m; ++r)
      std::copy(bias.data().begin(), bias.data().end(), out.begin() + static_cast<std::ptrdiff_t>(r * out_f));
  }
  kernels::gemm({m, out_f, in, false, true}, x.data(), w.data(), out, has_bias ? 1.0 : 0.0);
  auto xv = x.node()->values;
  auto wv = w.node()->values;
  std::vector<NdArray> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_result({m, out_f}, std::move(out), std::move(inputs),
                     [=](std::span<const double> g, GradBuffers& pg) {
                       // y = x W^T + b: dx = G W, dW = G^T x, db = column sums of G
                       if (pg[0]) kernels::gemm({m, in, out_f}, g, *wv, *pg[0], 1.0);
                       if (pg[1]) kernels::gemm({out_f, in, m, true, false}, g, *xv, *pg[1], 1.0);
                       if (has_bias && pg[2]) {
                         auto& gb = *pg[2];
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t j = 0; j < out_f; ++j) gb[j] += g[r * out_f + j];
                       }
                     },
                     "linear");
}

NdArray add_row_vector(const NdArray& x, const NdArray& bias) {
  require_matrix(x, "add_row_vector");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.size() != n) throw InvalidArgument("add_row_vector: bias size mismatch");
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] + bias[j];
  return make_result({m, n}, std::move(out), {x, bias},
                     [=](std::span<const double> g, GradBuffers& pg) {
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                       if (pg[1])
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t j = 0; j < n; ++j) (*pg[1])[j] += g[r * n + j];
                     },
                     "add_row_vector");
}

NdArray scale_rows(const NdArray& x, std::span<const double> factors) {
  require_matrix(x, "scale_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (factors.size() != m) throw InvalidArgument("scale_rows: need one factor per row");
  auto f = std::make_shared<std::vector<double>>(factors.begin(), factors.end());
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = (*f)[r] * x[r * n + j];
  return make_result({m, n}, std::move(out), {x},
                     [=](std::span<const double> g, GradBuffers& pg) {
                       if (!pg[0]) return;
                       for (std::size_t r = 0; r < m; ++r)
                         for (std::size_t j = 0; j < n; ++j) (*pg[0])[r * n + j] += (*f)[r] * g[r * n + j];
                     },
                     "scale_rows");
}

NdArray repeat_rows(const NdArray& x, std::size_t times) {
  require_matrix(x, "repeat_rows");
  if (times == 0) throw InvalidArgument("repeat_rows: times must be positive");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * times * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t t = 0; t < times; ++t)
      std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(r * n), n,
                  out.begin() + static_cast<std::ptrdiff_t>((r * times + t) * n));
  return make_result({m * times, n}, std::move(out), {x},
                     [=](std::span<const double> g, GradBuffers& pg) {
                       if (!pg[0]) return;
                       for (std::size_t r = 0; r < m; ++r)
                         for (std::size_t t = 0; t < times; ++t)
                           for (std::size_t j = 0; j < n; ++j) (*pg[0])[r * n + j] += g[(r * times + t) * n + j];
                     },
                     "repeat_rows");
}

// ---- reductions -----------------------------------------------------------

NdArray sum(const NdArray& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  const std::size_t n = a.size();
  return make_result({1}, {s}, {a},
                     [n](std::span<const double> g, GradBuffers& pg) {
                       if (pg[0])
                         for (std::size_t i = 0; i < n; ++i) (*pg[0])[i] += g[0];
                     },
                     "sum");
}

NdArray mean(const NdArray& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

NdArray log_softmax(const NdArray& a) {
  if (a.ndim() == 0) throw InvalidArgument("log_softmax: empty shape");
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.size() / cols;
  std::vector<double> out(a.size());
  kernels::log_softmax_rows(rows, cols, a.data(), out);
  auto ys = std::make_shared<std::vector<double>>(out);
  return make_result(a.shape(), std::move(out), {a},
                     [=](std::span<const double> g, GradBuffers& pg) {
                       if (!pg[0]) return;
                       // d/dx_j = g_j - softmax_j * sum_l g_l
                       for (std::size_t r = 0; r < rows; ++r) {
                         double gs = 0.0;
                         for (std::size_t j = 0; j < cols; ++j) gs += g[r * cols + j];
                         for (std::size_t j = 0; j < cols; ++j)
                           (*pg[0])[r * cols + j] += g[r * cols + j] - std::exp((*ys)[r * cols + j]) * gs;
                       }
                     },
                     "log_softmax");
}

// ---- layout ---------------------------------------------------------------

NdArray reshape(const NdArray& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw InvalidArgument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a},
                     [](std::span<const double> g, GradBuffers& pg) {
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                     },
                     "reshape");
}

NdArray nchw_to_rows(const NdArray& a) {
  if (a.ndim() != 4) throw InvalidArgument("nchw_to_rows: expected B x C x H x W, got " + shape_str(a.shape()));
  const std::size_t b = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  if (hw == 1) return reshape(a, {b, c});
  std::vector<double> out(a.size());
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) out[(n * hw + p) * c + ch] = a[(n * c + ch) * hw + p];
  return make_result({b * hw, c}, std::move(out), {a},
                     [=](std::span<const double> g, GradBuffers& pg) {
                       if (!pg[0]) return;
                       for (std::size_t n = 0; n < b; ++n)
                         for (std::size_t ch = 0; ch < c; ++ch)
                           for (std::size_t p = 0; p < hw; ++p)
                             (*pg[0])[(n * c + ch) * hw + p] += g[(n * hw + p) * c + ch];
                     },
                     "nchw_to_rows");
}

NdArray im2col_rows(const NdArray& rows, std::size_t b, std::size_t h, std::size_t w, std::size_t k) {
  require_matrix(rows, "im2col_rows");
  if (k % 2 == 0) throw InvalidArgument("im2col_rows: kernel size must be odd");
  if (rows.dim(0) != b * h * w) throw InvalidArgument("im2col_rows: row count does not match B*H*W");
  const std::size_t c = rows.dim(1), kk = k * k, cols = kk * c;
  const long r = static_cast<long>(k / 2);
  // src[p * kk + j]: source row of tap j at output row p, or npos for padding.
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  auto src = std::make_shared<std::vector<std::size_t>>(b * h * w * kk, npos);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t p = (n * h + y) * w + x;
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx) {
            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
            const std::size_t j = static_cast<std::size_t>((dy + r) * static_cast<long>(k) + dx + r);
            (*src)[p * kk + j] = (n * h + static_cast<std::size_t>(yy)) * w + static_cast<std::size_t>(xx);
          }
      }
  std::vector<double> out(b * h * w * cols, 0.0);
  const auto in = rows.data();
  for (std::size_t q = 0; q < src->size(); ++q)
    if ((*src)[q] != npos) std::copy_n(in.begin() + static_cast<std::ptrdiff_t>((*src)[q] * c), c,
                                       out.begin() + static_cast<std::ptrdiff_t>(q * c));
  return make_result({b * h * w, cols}, std::move(out), {rows},
                     [src, c](std::span<const double> g, GradBuffers& pg) {
                       if (!pg[0]) return;
                       auto& dst = *pg[0];
                       for (std::size_t q = 0; q < src->size(); ++q) {
                         const std::size_t s = (*src)[q];
                         if (s == npos) continue;
                         for (std::size_t ch = 0; ch < c; ++ch) dst[s * c + ch] += g[q * c + ch];
                       }
                     },
                     "im2col_rows");
}

NdArray axis_profiles_rows(const NdArray& rows, std::size_t b, std::size_t h, std::size_t w) {
  require_matrix(rows, "axis_profiles_rows");
  if (rows.dim(0) != b * h * w) throw InvalidArgument("axis_profiles_rows: row count does not match B*H*W");
  const std::size_t c = rows.dim(1), per = (w + h) * c;
  const double inv_h = 1.0 / static_cast<double>(h), inv_w = 1.0 / static_cast<double>(w);
  std::vector<double> out(b * per, 0.0);
  const auto in = rows.data();
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double v = in[((n * h + y) * w + x) * c + ch];
          out[n * per + x * c + ch] += v * inv_h;
          out[n * per + (w + y) * c + ch] += v * inv_w;
        }
  return make_result({b, per}, std::move(out), {rows},
                     [=](std::span<const double> g, GradBuffers& pg) {
                       if (!pg[0]) return;
                       auto& dst = *pg[0];
                       for (std::size_t n = 0; n < b; ++n)
                         for (std::size_t y = 0; y < h; ++y)
                           for (std::size_t x = 0; x < w; ++x)
                             for (std::size_t ch = 0; ch < c; ++ch)
                               dst[((n * h + y) * w + x) * c + ch] +=
                                   g[n * per + x * c + ch] * inv_h + g[n * per + (w + y) * c + ch] * inv_w;
                     },
                     "axis_profiles_rows");
}

NdArray rows_to_nchw(const NdArray& a, std::size_t b, std::size_t h, std::size_t w) {
  require_matrix(a, "rows_to_nchw");
  const std::size_t hw = h * w, c = a.dim(1);
  if (a.dim(0) != b * hw) throw InvalidArgument("rows_to_nchw: row count does not match B*H*W");
  if (hw == 1) return reshape(a, {b, c, h, w});
  std::vector<double> out(a.size());
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) out[(n * c + ch) * hw + p] = a[(n * hw + p) * c + ch];
  return make_result({b, c, h, w}, std::move(out), {a},
                     [=](std::span<const double> g, GradBuffers& pg) {
                       if (!pg[0]) return;
                       for (std::size_t n = 0; n < b; ++n)
                         for (std::size_t ch = 0; ch < c; ++ch)
                           for (std::size_t p = 0; p < hw; ++p)
                             (*pg[0])[(n * hw + p) * c + ch] += g[(n * c + ch) * hw + p];
                     },
                     "rows_to_nchw");
}

}  // namespace agentpose
