#include "protoassign/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "protoassign/util.hpp"

namespace protoassign {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_rank2(const char* op, const std::vector<std::size_t>& shape) {
  if (shape.size() != 2) {
    throw ValidationError(std::string(op) + ": expected a rank-2 tensor, got " +
                          shape_string(shape));
  }
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void require_same_shape(const char* op, const std::vector<std::size_t>& a,
                        const std::vector<std::size_t>& b) {
  if (a != b) {
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                          shape_string(b));
  }
}

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> shape, T fill) : shape_(std::move(shape)) {
  const std::size_t n =
      std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  values_.assign(n, fill);
}

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> shape, std::vector<T> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  const std::size_t n =
      std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  if (n != values_.size()) {
    throw ValidationError("tensor: shape " + protoassign::shape_string(shape_) + " needs " + std::to_string(n) +
                          " values, got " + std::to_string(values_.size()));
  }
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  if (shape_.empty()) return 1;
  return shape_.size() == 1 ? 1 : shape_[0];
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return shape_[0];
  std::size_t c = 1;
  for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
  return c;
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(values_.begin(), values_.end(), v);
}

template <typename T>
std::string Tensor<T>::shape_string() const {
  return protoassign::shape_string(shape_);
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2("matmul", a.shape());
  require_rank2("matmul", b.shape());
  if (a.shape()[1] != b.shape()[0]) {
    throw ValidationError("matmul: shape mismatch " + a.shape_string() + " vs " +
                          b.shape_string());
  }
  const auto n = static_cast<Eigen::Index>(a.shape()[0]);
  const auto k = static_cast<Eigen::Index>(a.shape()[1]);
  const auto m = static_cast<Eigen::Index>(b.shape()[1]);
  Tensor<T> out({a.shape()[0], b.shape()[1]});
  Eigen::Map<const RowMat<T>> ma(a.data(), n, k);
  Eigen::Map<const RowMat<T>> mb(b.data(), k, m);
  Eigen::Map<RowMat<T>> mo(out.data(), n, m);
  mo.noalias() = ma * mb;
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a.shape(), b.shape());
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank2("transpose", a.shape());
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  Tensor<T> out = a;
  const std::size_t r = a.rows(), c = a.cols();
  for (std::size_t i = 0; i < r; ++i) {
    T* row = out.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) row[j] /= sum;
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.size() != c || bias.size() != c) {
    throw ValidationError("layer_norm: shape mismatch " + x.shape_string() + " vs " +
                          gain.shape_string());
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = x.data() + i * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(c);
    const T rstd = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = (row[j] - mean) * rstd * gain[j] + bias[j];
    }
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out = x;
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (auto& v : out.values()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, std::span<const std::uint8_t> keep, T rate) {
  if (keep.size() != x.size()) {
    throw ValidationError("dropout: mask has " + std::to_string(keep.size()) +
                          " entries for tensor " + x.shape_string());
  }
  if (!(rate >= T(0) && rate < T(1))) throw ValidationError("dropout: rate must be in [0,1)");
  Tensor<T> out = x;
  const T scale = T(1) / (T(1) - rate);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep[i] ? out[i] * scale : T(0);
  return out;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<int> out(r, 0);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (a[i * c + j] > a[i * c + best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

template <typename T, typename U>
Tensor<U> cast(const Tensor<T>& a) {
  std::vector<U> v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = static_cast<U>(a[i]);
  return Tensor<U>(a.shape(), std::move(v));
}

#define PROTOASSIGN_INSTANTIATE(T)                                                        \
  template class Tensor<T>;                                                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> transpose(const Tensor<T>&);                                         \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                      \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T); \
  template Tensor<T> gelu(const Tensor<T>&);                                              \
  template Tensor<T> dropout(const Tensor<T>&, std::span<const std::uint8_t>, T);         \
  template std::vector<int> argmax_rows(const Tensor<T>&);

PROTOASSIGN_INSTANTIATE(float)
PROTOASSIGN_INSTANTIATE(double)
#undef PROTOASSIGN_INSTANTIATE

template Tensor<double> cast<float, double>(const Tensor<float>&);
template Tensor<float> cast<double, float>(const Tensor<double>&);
template Tensor<float> cast<float, float>(const Tensor<float>&);
template Tensor<double> cast<double, double>(const Tensor<double>&);

}  // namespace protoassign
