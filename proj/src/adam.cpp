#include "protoassign/adam.hpp"

#include <cmath>

#include "protoassign/util.hpp"

namespace protoassign {

template <typename T>
ad::Var<T> ParamSet<T>::add(const std::string& name, Tensor<T> value) {
  if (index_.count(name)) throw ValidationError("param set: duplicate parameter '" + name + "'");
  index_[name] = entries_.size();
  entries_.emplace_back(name, ad::parameter(std::move(value)));
  return entries_.back().second;
}

template <typename T>
const ad::Var<T>& ParamSet<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("param set: no parameter '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
bool ParamSet<T>::contains(const std::string& name) const {
  return index_.count(name) > 0;
}

template <typename T>
void ParamSet<T>::set(const std::string& name, Tensor<T> value) {
  const auto& p = get(name);
  require_same_shape("param set", p->value.shape(), value.shape());
  p->value = std::move(value);
}

template <typename T>
std::size_t ParamSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : entries_) n += p->value.size();
  return n;
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& [name, p] : entries_) p->grad = Tensor<T>();
}

template <typename T>
ParamSet<T> ParamSet<T>::clone() const {
  ParamSet<T> out;
  for (const auto& [name, p] : entries_) out.add(name, p->value);
  return out;
}

template <typename T>
void adam_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                 std::size_t step, const AdamConfig& config) {
  require_same_shape("adam_update", param.shape(), grad.shape());
  require_same_shape("adam_update", param.shape(), m.shape());
  require_same_shape("adam_update", param.shape(), v.shape());
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  const double lr = config.learning_rate, eps = config.epsilon;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = b1 * m[i] + (1.0 - b1) * g;
    const double vi = b2 * v[i] + (1.0 - b2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / c1;
    const double vhat = vi / c2;
    param[i] = static_cast<T>(param[i] - lr * mhat / (std::sqrt(vhat) + eps));
  }
}

template <typename T>
void AdamState<T>::step(ParamSet<T>& params) {
  ++step_;
  for (auto& [name, p] : params.entries()) {
    auto it = moments_.find(name);
    if (it == moments_.end()) {
      it = moments_
               .emplace(name, std::make_pair(Tensor<T>(p->value.shape()),
                                             Tensor<T>(p->value.shape())))
               .first;
    }
    const Tensor<T> zero = p->grad.size() == p->value.size() ? Tensor<T>() : Tensor<T>(p->value.shape());
    const Tensor<T>& g = p->grad.size() == p->value.size() ? p->grad : zero;
    adam_update(p->value, g, it->second.first, it->second.second, step_, config_);
  }
}

template class ParamSet<float>;
template class ParamSet<double>;
template class AdamState<float>;
template class AdamState<double>;
template void adam_update(Tensor<float>&, const Tensor<float>&, Tensor<float>&, Tensor<float>&,
                          std::size_t, const AdamConfig&);
template void adam_update(Tensor<double>&, const Tensor<double>&, Tensor<double>&,
                          Tensor<double>&, std::size_t, const AdamConfig&);

}  // namespace protoassign
