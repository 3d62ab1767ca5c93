#include "protoassign/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "protoassign/util.hpp"

namespace protoassign::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;
template <typename T>
using StridedConst = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using StridedMut = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  for (const auto& p : parents) node->requires_grad = node->requires_grad || p->requires_grad;
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return node;
}

template <typename T>
void accumulate(Node<T>& target, const Tensor<T>& delta) {
  if (!target.requires_grad) return;
  auto& g = target.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

void require_rank2(const char* op, const std::vector<std::size_t>& shape) {
  if (shape.size() != 2) {
    throw ValidationError(std::string(op) + ": expected a rank-2 tensor, got " +
                          shape_string(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.size() != value.size()) grad = Tensor<T>(value.shape(), T(0));
  return grad;
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return node;
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  return node;
}

template <typename T>
void backward(const Var<T>& root) {
  if (root->value.size() != 1) {
    throw ValidationError("backward: loss must be a scalar, got shape " +
                          root->value.shape_string());
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  return make_node<T>(protoassign::matmul(a->value, b->value), {a, b}, [](Node<T>& self) {
    auto& A = *self.parents[0];
    auto& B = *self.parents[1];
    const auto n = static_cast<Eigen::Index>(A.value.shape()[0]);
    const auto k = static_cast<Eigen::Index>(A.value.shape()[1]);
    const auto m = static_cast<Eigen::Index>(B.value.shape()[1]);
    ConstMap<T> g(self.grad.data(), n, m);
    if (A.requires_grad) {
      MutMap<T> ga(A.grad_buffer().data(), n, k);
      ga.noalias() += g * ConstMap<T>(B.value.data(), k, m).transpose();
    }
    if (B.requires_grad) {
      MutMap<T> gb(B.grad_buffer().data(), k, m);
      gb.noalias() += ConstMap<T>(A.value.data(), n, k).transpose() * g;
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return make_node<T>(protoassign::add(a->value, b->value), {a, b}, [](Node<T>& self) {
    accumulate(*self.parents[0], self.grad);
    accumulate(*self.parents[1], self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape("sub", a->value.shape(), b->value.shape());
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
    accumulate(*self.parents[0], self.grad);
    auto& B = *self.parents[1];
    if (B.requires_grad) {
      auto& g = B.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& a, const Var<T>& bias) {
  const std::size_t r = a->value.rows(), c = a->value.cols();
  if (bias->value.size() != c) {
    throw ValidationError("add_bias: shape mismatch " + a->value.shape_string() + " vs " +
                          bias->value.shape_string());
  }
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias->value[j];
  return make_node<T>(std::move(out), {a, bias}, [r, c](Node<T>& self) {
    accumulate(*self.parents[0], self.grad);
    auto& B = *self.parents[1];
    if (B.requires_grad) {
      auto& g = B.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a->value;
  for (auto& v : out.values()) v *= factor;
  return make_node<T>(std::move(out), {a}, [factor](Node<T>& self) {
    auto& A = *self.parents[0];
    if (!A.requires_grad) return;
    auto& g = A.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape("mul", a->value.shape(), b->value.shape());
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& A = *self.parents[0];
    auto& B = *self.parents[1];
    if (A.requires_grad) {
      auto& g = A.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto& g = B.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  return make_node<T>(protoassign::transpose(a->value), {a}, [](Node<T>& self) {
    accumulate(*self.parents[0], protoassign::transpose(self.grad));
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  Tensor<T> out = protoassign::softmax_rows(a->value);
  return make_node<T>(out, {a}, [out](Node<T>& self) {
    auto& A = *self.parents[0];
    if (!A.requires_grad) return;
    auto& g = A.grad_buffer();
    const std::size_t r = out.rows(), c = out.cols();
    for (std::size_t i = 0; i < r; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * out[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        g[i * c + j] += out[i * c + j] * (self.grad[i * c + j] - dot);
      }
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  const std::size_t r = x->value.rows(), c = x->value.cols();
  if (gain->value.size() != c || bias->value.size() != c) {
    throw ValidationError("layer_norm: shape mismatch " + x->value.shape_string() + " vs " +
                          gain->value.shape_string());
  }
  Tensor<T> xhat(x->value.shape());
  std::vector<T> rstd(r);
  Tensor<T> out(x->value.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = x->value.data() + i * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(c);
    rstd[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (row[j] - mean) * rstd[i];
      xhat[i * c + j] = h;
      out[i * c + j] = h * gain->value[j] + bias->value[j];
    }
  }
  return make_node<T>(std::move(out), {x, gain, bias},
                      [xhat = std::move(xhat), rstd = std::move(rstd), r, c](Node<T>& self) {
                        auto& X = *self.parents[0];
                        auto& G = *self.parents[1];
                        auto& B = *self.parents[2];
                        const T* dy = self.grad.data();
                        if (G.requires_grad || B.requires_grad) {
                          auto& gg = G.grad_buffer();
                          auto& gb = B.grad_buffer();
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j) {
                              gg[j] += dy[i * c + j] * xhat[i * c + j];
                              gb[j] += dy[i * c + j];
                            }
                        }
                        if (!X.requires_grad) return;
                        auto& gx = X.grad_buffer();
                        const T inv_c = T(1) / static_cast<T>(c);
                        for (std::size_t i = 0; i < r; ++i) {
                          T sum_d = 0, sum_dx = 0;
                          for (std::size_t j = 0; j < c; ++j) {
                            const T d = dy[i * c + j] * G.value[j];
                            sum_d += d;
                            sum_dx += d * xhat[i * c + j];
                          }
                          for (std::size_t j = 0; j < c; ++j) {
                            const T d = dy[i * c + j] * G.value[j];
                            gx[i * c + j] += rstd[i] * (d - inv_c * sum_d -
                                                        xhat[i * c + j] * inv_c * sum_dx);
                          }
                        }
                      });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  return make_node<T>(protoassign::gelu(x->value), {x}, [](Node<T>& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    auto& g = X.grad_buffer();
    const T inv_sqrt2 = T(1) / std::sqrt(T(2));
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = X.value[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Var<T> dropout(const Var<T>& x, std::vector<std::uint8_t> keep, T rate) {
  Tensor<T> out = protoassign::dropout(x->value, std::span<const std::uint8_t>(keep), rate);
  const T factor = T(1) / (T(1) - rate);
  return make_node<T>(std::move(out), {x}, [keep = std::move(keep), factor](Node<T>& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    auto& g = X.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (keep[i]) g[i] += self.grad[i] * factor;
    }
  });
}

template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> ids) {
  require_rank2("embedding", table->value.shape());
  const std::size_t v = table->value.shape()[0], d = table->value.shape()[1];
  Tensor<T> out({ids.size(), d});
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= v) {
      throw ValidationError("embedding: id " + std::to_string(idx[i]) + " outside table of " +
                            std::to_string(v) + " rows");
    }
    std::copy_n(table->value.data() + static_cast<std::size_t>(idx[i]) * d, d,
                out.data() + i * d);
  }
  return make_node<T>(std::move(out), {table}, [idx = std::move(idx), d](Node<T>& self) {
    auto& W = *self.parents[0];
    if (!W.requires_grad) return;
    auto& g = W.grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      T* dst = g.data() + static_cast<std::size_t>(idx[i]) * d;
      const T* src = self.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const std::size_t> rows) {
  const std::size_t n = x->value.rows(), c = x->value.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor<T> out({idx.size(), c});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) {
      throw ValidationError("gather_rows: row " + std::to_string(idx[i]) + " outside " +
                            x->value.shape_string());
    }
    std::copy_n(x->value.data() + idx[i] * c, c, out.data() + i * c);
  }
  return make_node<T>(std::move(out), {x}, [idx = std::move(idx), c](Node<T>& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    auto& g = X.grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
    }
  });
}

template <typename T>
Var<T> packed_self_attention(const Var<T>& qkv, std::span<const std::size_t> lengths,
                             std::size_t n_heads) {
  require_rank2("packed_self_attention", qkv->value.shape());
  const std::size_t total = qkv->value.shape()[0];
  const std::size_t width = qkv->value.shape()[1];
  if (n_heads == 0 || width % (3 * n_heads) != 0) {
    throw ValidationError("packed_self_attention: width " + std::to_string(width) +
                          " not divisible into Q|K|V for " + std::to_string(n_heads) + " heads");
  }
  std::size_t sum_len = 0;
  for (auto l : lengths) sum_len += l;
  if (sum_len != total) {
    throw ValidationError("packed_self_attention: sequence lengths sum to " +
                          std::to_string(sum_len) + " but qkv has " + std::to_string(total) +
                          " rows");
  }
  const std::size_t d = width / 3;
  const std::size_t dh = d / n_heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  const auto stride = static_cast<Eigen::Index>(width);
  const auto out_stride = static_cast<Eigen::Index>(d);
  const auto edh = static_cast<Eigen::Index>(dh);

  Tensor<T> out({total, d});
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  // Attention probabilities per (sequence, head), kept for the backward pass.
  std::vector<RowMat<T>> probs;
  probs.reserve(lens.size() * n_heads);
  std::size_t offset = 0;
  for (std::size_t s = 0; s < lens.size(); ++s) {
    const auto L = static_cast<Eigen::Index>(lens[s]);
    for (std::size_t h = 0; h < n_heads; ++h) {
      const T* base = qkv->value.data() + offset * width + h * dh;
      StridedConst<T> q(base, L, edh, Eigen::OuterStride<>(stride));
      StridedConst<T> k(base + d, L, edh, Eigen::OuterStride<>(stride));
      StridedConst<T> v(base + 2 * d, L, edh, Eigen::OuterStride<>(stride));
      RowMat<T> p = (q * k.transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < L; ++i) {
        const T mx = p.row(i).maxCoeff();
        p.row(i) = (p.row(i).array() - mx).exp();
        p.row(i) /= p.row(i).sum();
      }
      StridedMut<T> o(out.data() + offset * d + h * dh, L, edh, Eigen::OuterStride<>(out_stride));
      o.noalias() = p * v;
      probs.push_back(std::move(p));
    }
    offset += lens[s];
  }

  return make_node<T>(
      std::move(out), {qkv},
      [lens = std::move(lens), probs = std::move(probs), n_heads, d, dh, width, inv_sqrt](
          Node<T>& self) {
        auto& QKV = *self.parents[0];
        if (!QKV.requires_grad) return;
        auto& g = QKV.grad_buffer();
        const auto stride = static_cast<Eigen::Index>(width);
        const auto out_stride = static_cast<Eigen::Index>(d);
        const auto edh = static_cast<Eigen::Index>(dh);
        std::size_t offset = 0;
        std::size_t pi = 0;
        for (std::size_t s = 0; s < lens.size(); ++s) {
          const auto L = static_cast<Eigen::Index>(lens[s]);
          for (std::size_t h = 0; h < n_heads; ++h, ++pi) {
            const RowMat<T>& p = probs[pi];
            const T* base = QKV.value.data() + offset * width + h * dh;
            T* gbase = g.data() + offset * width + h * dh;
            StridedConst<T> q(base, L, edh, Eigen::OuterStride<>(stride));
            StridedConst<T> k(base + d, L, edh, Eigen::OuterStride<>(stride));
            StridedConst<T> v(base + 2 * d, L, edh, Eigen::OuterStride<>(stride));
            StridedConst<T> dout(self.grad.data() + offset * d + h * dh, L, edh,
                                 Eigen::OuterStride<>(out_stride));
            StridedMut<T> dq(gbase, L, edh, Eigen::OuterStride<>(stride));
            StridedMut<T> dk(gbase + d, L, edh, Eigen::OuterStride<>(stride));
            StridedMut<T> dv(gbase + 2 * d, L, edh, Eigen::OuterStride<>(stride));
            dv.noalias() += p.transpose() * dout;
            RowMat<T> dp = dout * v.transpose();
            for (Eigen::Index i = 0; i < L; ++i) {
              const T dot = (dp.row(i).array() * p.row(i).array()).sum();
              dp.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
            }
            dp *= inv_sqrt;
            dq.noalias() += dp * k;
            dk.noalias() += dp.transpose() * q;
          }
          offset += lens[s];
        }
      });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  require_rank2("cross_entropy", logits->value.shape());
  const std::size_t b = logits->value.shape()[0], k = logits->value.shape()[1];
  if (labels.size() != b) {
    throw ValidationError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(b) + " rows");
  }
  if (b == 0) throw ValidationError("cross_entropy: empty batch");
  std::vector<int> gold(labels.begin(), labels.end());
  for (int y : gold) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ValidationError("cross_entropy: label " + std::to_string(y) + " outside [0," +
                            std::to_string(k) + ")");
    }
  }
  Tensor<T> probs = protoassign::softmax_rows(logits->value);
  T loss = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = logits->value.data() + i * k;
    const T mx = *std::max_element(row, row + k);
    T sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    loss += (mx + std::log(sum)) - row[gold[i]];
  }
  loss /= static_cast<T>(b);
  return make_node<T>(Tensor<T>::scalar(loss), {logits},
                      [probs = std::move(probs), gold = std::move(gold), b, k](Node<T>& self) {
                        auto& X = *self.parents[0];
                        if (!X.requires_grad) return;
                        auto& g = X.grad_buffer();
                        const T scale = self.grad[0] / static_cast<T>(b);
                        for (std::size_t i = 0; i < b; ++i)
                          for (std::size_t j = 0; j < k; ++j) {
                            const T target = static_cast<int>(j) == gold[i] ? T(1) : T(0);
                            g[i * k + j] += scale * (probs[i * k + j] - target);
                          }
                      });
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  require_same_shape("mse", a->value.shape(), b->value.shape());
  const std::size_t n = a->value.size();
  if (n == 0) throw ValidationError("mse: empty tensors");
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T diff = a->value[i] - b->value[i];
    loss += diff * diff;
  }
  loss /= static_cast<T>(n);
  return make_node<T>(Tensor<T>::scalar(loss), {a, b}, [n](Node<T>& self) {
    auto& A = *self.parents[0];
    auto& B = *self.parents[1];
    const T scale = T(2) * self.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T diff = A.value[i] - B.value[i];
      if (A.requires_grad) A.grad_buffer()[i] += scale * diff;
      if (B.requires_grad) B.grad_buffer()[i] -= scale * diff;
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total = 0;
  for (auto v : a->value.values()) total += v;
  return make_node<T>(Tensor<T>::scalar(total), {a}, [](Node<T>& self) {
    auto& A = *self.parents[0];
    if (!A.requires_grad) return;
    auto& g = A.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

#define PROTOASSIGN_INSTANTIATE(T)                                                            \
  template struct Node<T>;                                                                    \
  template Var<T> constant(Tensor<T>);                                                        \
  template Var<T> parameter(Tensor<T>);                                                       \
  template void backward(const Var<T>&);                                                      \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                       \
  template Var<T> add(const Var<T>&, const Var<T>&);                                          \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                          \
  template Var<T> add_bias(const Var<T>&, const Var<T>&);                                     \
  template Var<T> scale(const Var<T>&, T);                                                    \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                          \
  template Var<T> transpose(const Var<T>&);                                                   \
  template Var<T> softmax_rows(const Var<T>&);                                                \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                 \
  template Var<T> gelu(const Var<T>&);                                                        \
  template Var<T> dropout(const Var<T>&, std::vector<std::uint8_t>, T);                       \
  template Var<T> embedding(const Var<T>&, std::span<const std::int32_t>);                    \
  template Var<T> gather_rows(const Var<T>&, std::span<const std::size_t>);                   \
  template Var<T> packed_self_attention(const Var<T>&, std::span<const std::size_t>,          \
                                        std::size_t);                                         \
  template Var<T> cross_entropy(const Var<T>&, std::span<const int>);                         \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                          \
  template Var<T> sum(const Var<T>&);

PROTOASSIGN_INSTANTIATE(float)
PROTOASSIGN_INSTANTIATE(double)
#undef PROTOASSIGN_INSTANTIATE

}  // namespace protoassign::ad
