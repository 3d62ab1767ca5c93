#include <cmath>
#include <functional>

#include "doctest.h"
#include "gradcheck.hpp"
#include "protoassign/adam.hpp"
#include "protoassign/autodiff.hpp"
#include "protoassign/checkpoint.hpp"
#include "protoassign/tensor.hpp"
#include "protoassign/util.hpp"
#include "support.hpp"

using namespace protoassign;
using testsupport::random_tensor;

TEST_CASE("matmul with the identity and shape errors") {
  Rng rng(1);
  const auto a = random_tensor(rng, {4, 3});
  Tensor<double> eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  CHECK(matmul(a, eye) == a);
  try {
    matmul(a, random_tensor(rng, {4, 2}));
    FAIL("expected a shape error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[4x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, random_tensor(rng, {3, 4})), ValidationError);
  CHECK(transpose(transpose(a)) == a);
}

TEST_CASE("softmax rows: symmetry, normalization, shift invariance") {
  const auto s = softmax_rows(Tensor<double>({1, 2}, {0.0, 0.0}));
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(0.5));
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor(rng, {3, 7}, 20.0);
    const auto p = softmax_rows(x);
    auto shifted = x;
    for (std::size_t r = 0; r < 3; ++r) {
      const double c = rng.normal(0.0, 100.0);
      for (std::size_t j = 0; j < 7; ++j) shifted.at(r, j) += c;
    }
    const auto q = softmax_rows(shifted);
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        sum += p.at(r, j);
        CHECK(std::abs(p.at(r, j) - q.at(r, j)) < 1e-9);
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
    CHECK(argmax_rows(x) == argmax_rows(shifted));
  }
  const auto big = softmax_rows(Tensor<float>({1, 2}, {1000.0f, 0.0f}));
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == doctest::Approx(1.0));
}

TEST_CASE("layer_norm matches a two-pass oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(30);
    const auto x = random_tensor(rng, {2, n}, 5.0);
    const Tensor<double> gain({n}, 1.0);
    const Tensor<double> bias({n}, 0.0);
    const auto y = layer_norm(x, gain, bias, 1e-12);
    for (std::size_t r = 0; r < 2; ++r) {
      double mean = 0.0;
      for (std::size_t j = 0; j < n; ++j) mean += x.at(r, j);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t j = 0; j < n; ++j) var += (x.at(r, j) - mean) * (x.at(r, j) - mean);
      var /= static_cast<double>(n);
      double ym = 0.0, yv = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(y.at(r, j) == doctest::Approx((x.at(r, j) - mean) / std::sqrt(var + 1e-12)).epsilon(1e-9));
        ym += y.at(r, j);
      }
      ym /= static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j) yv += (y.at(r, j) - ym) * (y.at(r, j) - ym);
      yv /= static_cast<double>(n);
      CHECK(std::abs(ym) < 1e-6);
      CHECK(std::abs(yv - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("gelu and dropout") {
  const auto g = gelu(Tensor<double>({3}, {0.0, 1.0, -1.0}));
  CHECK(g[0] == 0.0);
  CHECK(g[1] == doctest::Approx(0.8413447460685429));
  CHECK(g[2] == doctest::Approx(-0.15865525393145707));
  const std::vector<std::uint8_t> keep = {1, 0, 1, 1};
  const auto d = dropout(Tensor<double>({4}, {1.0, 2.0, 3.0, 4.0}), keep, 0.5);
  CHECK(d.storage() == std::vector<double>{2.0, 0.0, 6.0, 8.0});
}

TEST_CASE("cross_entropy: uniform logits, large margin, elementwise oracle") {
  const std::vector<int> gold = {3, 0, 24};
  const auto uni = ad::cross_entropy(ad::constant(Tensor<double>({3, 25}, 0.7)), std::span<const int>(gold));
  CHECK(std::abs(uni->value[0] - std::log(25.0)) < 1e-9);
  CHECK(std::abs(uni->value[0] - 3.2189) < 1e-4);

  Tensor<double> margin({1, 4}, 0.0);
  margin.at(0, 2) = 1000.0;
  const std::vector<int> two = {2};
  CHECK(ad::cross_entropy(ad::constant(margin), std::span<const int>(two))->value[0] < 1e-12);

  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_tensor(rng, {4, 3}, 3.0);
    std::vector<int> labels(4);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_int(3));
    double want = 0.0;
    for (std::size_t r = 0; r < 4; ++r) {
      double z = 0.0;
      for (std::size_t j = 0; j < 3; ++j) z += std::exp(x.at(r, j));
      want += -std::log(std::exp(x.at(r, labels[r])) / z);
    }
    want /= 4.0;
    const auto got = ad::cross_entropy(ad::constant(x), std::span<const int>(labels))->value[0];
    CHECK(std::abs(got - want) < 1e-10);
  }
  const std::vector<int> bad = {0, 0, 3, 0};
  CHECK_THROWS_AS(ad::cross_entropy(ad::constant(random_tensor(rng, {4, 3})), std::span<const int>(bad)),
                  ValidationError);
}

TEST_CASE("mse: identity, single element, elementwise oracle") {
  Rng rng(5);
  const auto x = random_tensor(rng, {3, 4});
  CHECK(ad::mse(ad::constant(x), ad::constant(x))->value[0] == 0.0);
  CHECK(ad::mse(ad::constant(Tensor<double>({1}, {0.0})), ad::constant(Tensor<double>({1}, {2.0})))->value[0] == 4.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_tensor(rng, {5, 6});
    const auto b = random_tensor(rng, {5, 6});
    double want = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) want += (a[i] - b[i]) * (a[i] - b[i]);
    want /= static_cast<double>(a.size());
    CHECK(std::abs(ad::mse(ad::constant(a), ad::constant(b))->value[0] - want) < 1e-12);
  }
  CHECK_THROWS_AS(ad::mse(ad::constant(x), ad::constant(random_tensor(rng, {4, 3}))), ValidationError);
}

TEST_CASE("backward: analytic derivative, constants, non-scalar root") {
  auto x = ad::parameter(Tensor<double>::scalar(3.0));
  auto y = ad::mul(x, x);
  ad::backward(y);
  CHECK(x->grad[0] == 6.0);

  auto p = ad::parameter(Tensor<double>({2}, {1.0, 2.0}));
  auto c = ad::constant(Tensor<double>({2}, {5.0, 5.0}));
  auto loss = ad::add(ad::sum(c), ad::scale(ad::sum(p), 0.0));
  ad::backward(loss);
  CHECK(p->grad.storage() == std::vector<double>{0.0, 0.0});
  CHECK(c->grad.empty());

  CHECK_THROWS_AS(ad::backward(ad::mul(p, p)), ValidationError);
}

TEST_CASE("every primitive passes a finite-difference check at f64") {
  Rng rng(6);
  using V = ad::Var<double>;
  // weights against which non-scalar outputs are reduced
  auto reduce = [w = random_tensor(rng, {64, 64})](const V& out) {
    Tensor<double> mask(out->value.shape());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = w[i % w.size()];
    return ad::sum(ad::mul(out, ad::constant(mask)));
  };
  const std::vector<std::pair<std::string, std::function<V(const std::vector<V>&)>>> cases = {
      {"matmul", [&](const auto& p) { return reduce(ad::matmul(p[0], p[1])); }},
      {"add", [&](const auto& p) { return reduce(ad::add(p[0], p[2])); }},
      {"sub", [&](const auto& p) { return reduce(ad::sub(p[0], p[2])); }},
      {"mul", [&](const auto& p) { return reduce(ad::mul(p[0], p[2])); }},
      {"add_bias", [&](const auto& p) { return reduce(ad::add_bias(p[0], p[3])); }},
      {"scale", [&](const auto& p) { return reduce(ad::scale(p[0], 1.7)); }},
      {"transpose", [&](const auto& p) { return reduce(ad::transpose(p[0])); }},
      {"softmax", [&](const auto& p) { return reduce(ad::softmax_rows(p[0])); }},
      {"layer_norm", [&](const auto& p) { return reduce(ad::layer_norm(p[0], p[3], p[4], 1e-12)); }},
      {"gelu", [&](const auto& p) { return reduce(ad::gelu(p[0])); }},
      {"dropout",
       [&](const auto& p) {
         std::vector<std::uint8_t> keep(p[0]->value.size());
         for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i % 3 != 0;
         return reduce(ad::dropout(p[0], keep, 0.3));
       }},
      {"gather_rows",
       [&](const auto& p) {
         const std::vector<std::size_t> rows = {2, 0, 2};
         return reduce(ad::gather_rows(p[0], std::span<const std::size_t>(rows)));
       }},
      {"embedding",
       [&](const auto& p) {
         const std::vector<std::int32_t> ids = {1, 3, 1, 0};
         return reduce(ad::embedding(p[1], std::span<const std::int32_t>(ids)));
       }},
      {"cross_entropy",
       [&](const auto& p) {
         const std::vector<int> labels = {0, 3, 1};
         return ad::cross_entropy(p[0], std::span<const int>(labels));
       }},
      {"mse", [&](const auto& p) { return ad::mse(p[0], p[2]); }},
      {"attention",
       [&](const auto& p) {
         const std::vector<std::size_t> lengths = {2, 3, 1};
         return reduce(ad::packed_self_attention(p[5], std::span<const std::size_t>(lengths), 2));
       }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    std::vector<Tensor<double>> values = {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 5}),
                                          random_tensor(rng, {3, 4}), random_tensor(rng, {4}),
                                          random_tensor(rng, {4}), random_tensor(rng, {6, 12})};
    CHECK(testsupport::max_gradient_error(values, fn) < 1e-6);
  }
}

TEST_CASE("adam: zero gradient, hand-executed step, convergence") {
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  Tensor<double> p({1}, {1.0});
  Tensor<double> m({1}, {0.5});
  Tensor<double> v({1}, {0.25});
  adam_update(p, Tensor<double>({1}, {0.0}), m, v, 3, cfg);
  CHECK(m[0] == doctest::Approx(0.45));
  CHECK(v[0] == doctest::Approx(0.24975));
  // moments carry momentum, so p still moves; with fresh moments it would not
  Tensor<double> p0({1}, {1.0}), m0({1}), v0({1});
  adam_update(p0, Tensor<double>({1}, {0.0}), m0, v0, 1, cfg);
  CHECK(p0[0] == 1.0);

  Tensor<double> q({1}, {1.0}), mq({1}), vq({1});
  adam_update(q, Tensor<double>({1}, {1.0}), mq, vq, 1, cfg);
  const double m_hat = (0.1 * 1.0) / (1.0 - 0.9);
  const double v_hat = (0.001 * 1.0) / (1.0 - 0.999);
  CHECK(std::abs(q[0] - (1.0 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8))) < 1e-12);
  CHECK(q[0] == doctest::Approx(0.9));

  ParamSet<double> ps;
  auto x = ps.add("x", Tensor<double>::scalar(0.0));
  AdamConfig c2;
  c2.learning_rate = 0.05;
  AdamState<double> state(c2);
  for (int i = 0; i < 1000; ++i) {
    ps.zero_grad();
    auto d = ad::sub(x, ad::constant(Tensor<double>::scalar(2.0)));
    ad::backward(ad::mul(d, d));
    state.step(ps);
  }
  CHECK(state.step_count() == 1000);
  CHECK(std::abs(x->value[0] - 2.0) < 0.01);
  CHECK(state.first_moment("x").shape() == x->value.shape());
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Rng rng(7);
  ParamSet<float> ps;
  ps.add("a.weight", cast<double, float>(random_tensor(rng, {3, 5})));
  ps.add("a.bias", cast<double, float>(random_tensor(rng, {5})));
  ParamSet<double> pd;
  pd.add("w", random_tensor(rng, {2, 2}));
  const auto ck = make_checkpoint(ps, R"({"kind":"test"})");
  const auto bytes = serialize_checkpoint(ck);
  CHECK(bytes.rfind(std::string("PACKPT\0\0", 8), 0) == 0);
  const auto back = parse_checkpoint(bytes);
  CHECK(back == ck);
  CHECK(serialize_checkpoint(back) == bytes);
  const auto restored = params_from_checkpoint<float>(back);
  for (const auto& [name, var] : ps.entries()) CHECK(restored.get(name)->value == var->value);

  const auto dk = make_checkpoint(pd, "{}");
  CHECK(params_from_checkpoint<double>(parse_checkpoint(serialize_checkpoint(dk))).get("w")->value ==
        pd.get("w")->value);

  const auto dir = testsupport::temp_dir("ckpt");
  save_checkpoint(dir + "/x.ckpt", ck);
  CHECK(load_checkpoint(dir + "/x.ckpt") == ck);
  CHECK_THROWS_AS(parse_checkpoint("garbage"), ValidationError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), ValidationError);
}
