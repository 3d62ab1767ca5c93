#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "protoassign/tensor.hpp"

namespace protoassign::ad {

/// One value in a recorded computation. Children own their parents, so a
/// graph lives exactly as long as its root; parameters are long-lived leaves.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  /// Reads `self.grad` and accumulates into parents that require grad.
  std::function<void(Node& self)> backward_fn;

  Tensor<T>& grad_buffer();
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T> Var<T> constant(Tensor<T> value);
template <typename T> Var<T> parameter(Tensor<T> value);

/// Seeds d(root)/d(root) = 1 and propagates in reverse topological order.
/// Throws ValidationError when root is not a single-element tensor.
template <typename T> void backward(const Var<T>& root);

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
/// a[n,m] + bias[m] broadcast over rows.
template <typename T> Var<T> add_bias(const Var<T>& a, const Var<T>& bias);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> transpose(const Var<T>& a);
template <typename T> Var<T> softmax_rows(const Var<T>& a);
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps);
template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T>
Var<T> dropout(const Var<T>& x, std::vector<std::uint8_t> keep, T rate);

/// Rows of `table` selected by `ids`.
template <typename T> Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> ids);
template <typename T> Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> rows);

/// Multi-head scaled dot-product self-attention over packed sequences.
///
/// `qkv` is [T, 3d] holding Q | K | V for every token of every sequence,
/// sequences stored back to back with lengths `lengths`. Attention never
/// crosses a sequence boundary, which is the same as masking padded keys.
/// Output is [T, d].
template <typename T>
Var<T> packed_self_attention(const Var<T>& qkv, std::span<const std::size_t> lengths,
                             std::size_t n_heads);

/// Mean over rows of -log softmax(logits)[label].
template <typename T> Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels);
/// Mean over all elements of (a - b)^2.
template <typename T> Var<T> mse(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sum(const Var<T>& a);

}  // namespace protoassign::ad
