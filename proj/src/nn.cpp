#include "agentpose/nn.hpp"

#include <cmath>

#include "agentpose/error.hpp"

namespace agentpose::nn {

NdArray& ParameterSet::add(const std::string& name, NdArray value) {
  if (index_.count(name)) throw InvalidArgument("duplicate parameter " + name);
  names_.push_back(name);
  return index_[name] = std::move(value);
}

const NdArray& ParameterSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("unknown parameter " + name);
  return it->second;
}

NdArray& ParameterSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("unknown parameter " + name);
  return it->second;
}

std::vector<NdArray> ParameterSet::arrays() const {
  std::vector<NdArray> out;
  out.reserve(names_.size());
  for (const auto& n : names_) out.push_back(index_.at(n));
  return out;
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& [_, a] : index_) n += a.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [_, a] : index_) a.zero_grad();
}

void ParameterSet::assign_values(const ParameterSet& other) {
  for (const auto& n : names_) {
    auto dst = at(n).mutable_data();
    const auto src = other.at(n).data();
    if (src.size() != dst.size()) throw InvalidArgument("parameter " + n + " has a different size");
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

NdArray Linear::forward(const NdArray& rows, bool frozen) const {
  if (frozen) return linear(rows, weight.detach(), bias.defined() ? bias.detach() : NdArray{});
  return linear(rows, weight, bias);
}

NdArray Linear::forward_nchw(const NdArray& x, bool frozen) const {
  if (x.ndim() != 4) throw InvalidArgument("forward_nchw: expected B x C x H x W");
  if (x.dim(1) != in_features())
    throw InvalidArgument("1x1 projection expects " + std::to_string(in_features()) + " channels, got " +
                          std::to_string(x.dim(1)));
  return rows_to_nchw(forward(nchw_to_rows(x), frozen), x.dim(0), x.dim(2), x.dim(3));
}

void Linear::register_in(ParameterSet& set, const std::string& prefix) {
  set.add(prefix + ".weight", weight);
  if (bias.defined()) set.add(prefix + ".bias", bias);
}

Linear make_linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  const double std_dev = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out);
  for (auto& v : w) v = std_dev * rng.normal();
  Linear l;
  l.weight = NdArray::from({out, in}, std::move(w), true);
  if (with_bias) l.bias = NdArray::zeros({out}, true);
  return l;
}

Linear make_zero_linear(std::size_t in, std::size_t out, bool with_bias) {
  Linear l;
  l.weight = NdArray::zeros({out, in}, true);
  if (with_bias) l.bias = NdArray::zeros({out}, true);
  return l;
}

std::vector<double> orthogonal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  // Orthonormalise along the shorter dimension, then lay out as rows x cols.
  const bool tall = rows > cols;
  const std::size_t nvec = tall ? cols : rows;
  const std::size_t len = tall ? rows : cols;
  std::vector<std::vector<double>> v(nvec, std::vector<double>(len));
  for (auto& vec : v)
    for (auto& x : vec) x = rng.normal();
  for (std::size_t i = 0; i < nvec; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t q = 0; q < len; ++q) dot += v[i][q] * v[j][q];
      for (std::size_t q = 0; q < len; ++q) v[i][q] -= dot * v[j][q];
    }
    double norm = 0.0;
    for (double x : v[i]) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericError("orthogonal_matrix: degenerate draw");
    for (auto& x : v[i]) x /= norm;
  }
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = tall ? v[c][r] : v[r][c];
  return out;
}

Linear make_orthogonal_linear(std::size_t in, std::size_t out, Rng& rng) {
  Linear l;
  l.weight = NdArray::from({out, in}, orthogonal_matrix(out, in, rng), true);
  return l;
}

Linear make_identity_linear(std::size_t in, std::size_t out) {
  std::vector<double> w(in * out, 0.0);
  for (std::size_t i = 0; i < std::min(in, out); ++i) w[i * in + i] = 1.0;
  Linear l;
  l.weight = NdArray::from({out, in}, std::move(w), true);
  return l;
}

}  // namespace agentpose::nn
