#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "protoassign/autodiff.hpp"

namespace protoassign {

/// Ordered, named collection of trainable leaves.
template <typename T>
class ParamSet {
 public:
  ad::Var<T> add(const std::string& name, Tensor<T> value);
  const ad::Var<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  /// Replaces the value of an existing parameter (shape must match).
  void set(const std::string& name, Tensor<T> value);

  const std::vector<std::pair<std::string, ad::Var<T>>>& entries() const { return entries_; }
  std::size_t scalar_count() const;
  void zero_grad();

  /// Deep copy (fresh leaves, same values, no grads).
  ParamSet clone() const;

 private:
  std::vector<std::pair<std::string, ad::Var<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam update of one tensor. `step` is the 1-based index of
/// this update.
template <typename T>
void adam_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                 std::size_t step, const AdamConfig& config);

template <typename T>
class AdamState {
 public:
  explicit AdamState(AdamConfig config = {}) : config_(config) {}

  /// Applies one update to every parameter using its accumulated gradient
  /// (missing gradients count as zero) and increments the step.
  void step(ParamSet<T>& params);

  std::size_t step_count() const { return step_; }
  const AdamConfig& config() const { return config_; }
  const Tensor<T>& first_moment(const std::string& name) const { return moments_.at(name).first; }
  const Tensor<T>& second_moment(const std::string& name) const {
    return moments_.at(name).second;
  }

 private:
  AdamConfig config_;
  std::size_t step_ = 0;
  std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> moments_;
};

}  // namespace protoassign
