#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "agentpose/rng.hpp"

namespace agentpose {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

/// Dense row-major float64 array with optional reverse-mode gradient tracking.
///
/// Copies are shallow handles onto the same node; the values of a produced
/// array never change except through `mutable_data()`, which only optimizers
/// use. Every op records a backward closure when any input requires grad.
class NdArray {
 public:
  NdArray() = default;

  static NdArray zeros(Shape shape, bool requires_grad = false);
  static NdArray full(Shape shape, double value, bool requires_grad = false);
  static NdArray from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static NdArray scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t ndim() const { return shape().size(); }

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  NdArray grad_array() const;
  void zero_grad();

  /// Same values, no history, never receives gradient.
  NdArray detach() const;
  /// Deep copy of the values (no history).
  NdArray clone(bool requires_grad = false) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit NdArray(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

struct Node {
  Shape shape;
  std::shared_ptr<std::vector<double>> values;
  std::vector<double> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Receives d(loss)/d(this) and accumulates into parent gradients.
  std::function<void(std::span<const double>, std::vector<std::vector<double>*>&)> backward;
};

}  // namespace detail

/// Reverse pass from a scalar. Leaves that require grad accumulate into
/// their grad buffer; interior gradients are transient.
void backward(const NdArray& loss);

/// i.i.d. N(0, 1) entries drawn sequentially from `rng`.
NdArray sample_standard_normal(const Shape& shape, Rng& rng);

/// Central-difference gradient estimate of a scalar function.
NdArray finite_difference_grad(const std::function<double(const NdArray&)>& f, const NdArray& x,
                               double eps);

/// ||a - b|| / max(||a||, ||b||, floor).
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

// ---- differentiable ops -------------------------------------------------

NdArray add(const NdArray& a, const NdArray& b);
NdArray sub(const NdArray& a, const NdArray& b);
NdArray mul(const NdArray& a, const NdArray& b);
NdArray scale(const NdArray& a, double c);
NdArray add_scalar(const NdArray& a, double c);
NdArray square(const NdArray& a);
NdArray gelu(const NdArray& a);
NdArray tanh(const NdArray& a);

/// (m x k) * (k x n).
NdArray matmul(const NdArray& a, const NdArray& b);
/// Dense layer on rows: x (m x in), w (out x in), optional bias (out).
NdArray linear(const NdArray& x, const NdArray& w, const NdArray& bias = {});
/// x (m x n) plus bias (n) broadcast over rows.
NdArray add_row_vector(const NdArray& x, const NdArray& bias);
/// Row r of x (m x n) scaled by factors[r].
NdArray scale_rows(const NdArray& x, std::span<const double> factors);
/// Each row of x (m x n) repeated `times` times consecutively.
NdArray repeat_rows(const NdArray& x, std::size_t times);

NdArray sum(const NdArray& a);
NdArray mean(const NdArray& a);
/// Log-softmax over the last axis.
NdArray log_softmax(const NdArray& a);

NdArray reshape(const NdArray& a, Shape shape);
/// B x C x H x W -> (B*H*W) x C.
NdArray nchw_to_rows(const NdArray& a);
/// (B*H*W) x C -> B x C x H x W.
NdArray rows_to_nchw(const NdArray& a, std::size_t b, std::size_t h, std::size_t w);
/// k x k zero-padded neighbourhoods of an image in row layout:
/// (B*H*W) x C -> (B*H*W) x (k*k*C), columns ordered (dy, dx, c).
NdArray im2col_rows(const NdArray& rows, std::size_t b, std::size_t h, std::size_t w, std::size_t k);
/// Per-channel column and row means in row layout: (B*H*W) x C ->
/// B x ((W + H) * C), the W column means first, each block ordered by channel.
NdArray axis_profiles_rows(const NdArray& rows, std::size_t b, std::size_t h, std::size_t w);

// Operator sugar for readability inside model code.
inline NdArray operator+(const NdArray& a, const NdArray& b) { return add(a, b); }
inline NdArray operator-(const NdArray& a, const NdArray& b) { return sub(a, b); }
inline NdArray operator*(const NdArray& a, const NdArray& b) { return mul(a, b); }
inline NdArray operator*(double c, const NdArray& a) { return scale(a, c); }

}  // namespace agentpose
