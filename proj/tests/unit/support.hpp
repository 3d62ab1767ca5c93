#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "protoassign/core_data.hpp"
#include "protoassign/tensor.hpp"
#include "protoassign/util.hpp"

namespace testsupport {

inline std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("protoassign_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

inline std::string random_word(protoassign::Rng& rng, std::size_t max_len = 8) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyzABCDE0123456789";
  const std::size_t n = 1 + rng.uniform_int(max_len);
  std::string w;
  for (std::size_t i = 0; i < n; ++i) w += alphabet[rng.uniform_int(alphabet.size())];
  return w;
}

inline std::string random_text(protoassign::Rng& rng, std::size_t max_words) {
  const std::size_t n = rng.uniform_int(max_words + 1);
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += random_word(rng);
    if (rng.bernoulli(0.15)) s += ',';
  }
  return s;
}

inline protoassign::ExamRecord random_record(protoassign::Rng& rng, std::size_t n_groups = 4) {
  protoassign::ExamRecord r;
  r.exam_code = "C" + std::to_string(rng.uniform_int(6));
  r.exam_name = "name " + r.exam_code;
  r.sex = rng.bernoulli(0.5) ? "1" : "2";
  r.age = static_cast<int>(rng.uniform_int(100));
  r.history = rng.bernoulli(0.2) ? "" : random_text(rng, 10);
  r.diagnosis = random_text(rng, 12);
  r.protocol_group = "G" + std::to_string(rng.uniform_int(n_groups));
  return r;
}

inline protoassign::Tensor<double> random_tensor(protoassign::Rng& rng, std::vector<std::size_t> shape,
                                               double sd = 1.0) {
  protoassign::Tensor<double> t(std::move(shape));
  for (auto& x : t.storage()) x = rng.normal(0.0, sd);
  return t;
}

}  // namespace testsupport
