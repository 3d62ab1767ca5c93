#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace protoassign {

/// Dense row-major array. Most of the model works on rank-2 tensors
/// (rows = tokens or batch items); rank 1 is used for biases and gains.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0));
  Tensor(std::vector<std::size_t> shape, std::vector<T> values);

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  /// shape[0] for rank >= 1.
  std::size_t rows() const;
  /// Product of the trailing dimensions (rank-1 tensors are a single row).
  std::size_t cols() const;

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::vector<T>& storage() { return values_; }
  const std::vector<T>& storage() const { return values_; }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }
  T& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  void fill(T v);
  std::string shape_string() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> values_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Throws ValidationError "<op>: shape mismatch <a> vs <b>".
void require_same_shape(const char* op, const std::vector<std::size_t>& a,
                        const std::vector<std::size_t>& b);

// Plain (non-differentiable) primitives. All rank-2 unless noted.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
/// Row-wise softmax with max subtraction.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& a);
/// Row-wise (x - mean) / sqrt(var + eps) * gain + bias; gain/bias have cols()
/// entries. Variance is the population variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);
/// Exact GELU: 0.5 x (1 + erf(x / sqrt 2)).
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
/// Inverted dropout: x * keep / (1 - rate); `keep` holds one 0/1 per element.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, std::span<const std::uint8_t> keep, T rate);

/// Index of the largest entry in each row; ties go to the lowest index.
template <typename T> std::vector<int> argmax_rows(const Tensor<T>& a);

template <typename T, typename U> Tensor<U> cast(const Tensor<T>& a);

}  // namespace protoassign
