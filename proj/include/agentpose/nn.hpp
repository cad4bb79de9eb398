#pragma once

#include <map>
#include <string>
#include <vector>

#include "agentpose/ndarray.hpp"
#include "agentpose/rng.hpp"

namespace agentpose::nn {

/// Named, ordered collection of trainable leaves (keyed by parameter path).
class ParameterSet {
 public:
  NdArray& add(const std::string& name, NdArray value);
  const NdArray& at(const std::string& name) const;
  NdArray& at(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<NdArray> arrays() const;
  const std::vector<std::string>& names() const { return names_; }
  std::size_t count() const;  // total scalar parameters
  bool empty() const { return names_.empty(); }
  void zero_grad();

  /// Copies values from another set with identical names and shapes.
  void assign_values(const ParameterSet& other);

 private:
  std::vector<std::string> names_;
  std::map<std::string, NdArray> index_;
};

/// Dense map on rows (equivalently a 1x1 convolution on NCHW maps).
struct Linear {
  NdArray weight;  // out x in
  NdArray bias;    // out, or undefined when bias-free

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  /// `frozen` routes gradient to the input only, never to the weights.
  NdArray forward(const NdArray& rows, bool frozen = false) const;
  /// B x C x H x W -> B x out x H x W.
  NdArray forward_nchw(const NdArray& x, bool frozen = false) const;

  void register_in(ParameterSet& set, const std::string& prefix);
};

Linear make_linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
Linear make_zero_linear(std::size_t in, std::size_t out, bool with_bias = true);
/// Rows (or columns, when out > in) are orthonormal; bias-free.
Linear make_orthogonal_linear(std::size_t in, std::size_t out, Rng& rng);
/// Identity on the first min(in, out) channels; bias-free.
Linear make_identity_linear(std::size_t in, std::size_t out);

/// Gaussian matrix orthonormalised by modified Gram-Schmidt (rows x cols).
std::vector<double> orthogonal_matrix(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace agentpose::nn
