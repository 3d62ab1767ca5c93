#pragma once

#include <vector>

#include "protoassign/core_data.hpp"
#include "protoassign/encoder.hpp"
#include "protoassign/synthgen.hpp"
#include "protoassign/text.hpp"

namespace testsupport {

// Small labelled corpus drawn from the first `n_classes` uw-ct-body classes,
// tokenized with a vocabulary trained on its own text.
struct ToyTask {
  std::vector<protoassign::ExamRecord> records;
  std::vector<protoassign::TemplatedSequence> texts;
  protoassign::Vocab vocab;
  std::vector<protoassign::TokenSequence> inputs;
  std::vector<int> labels;
  std::size_t n_classes = 0;
};

inline ToyTask toy_task(std::size_t n_classes, std::size_t per_class, double marker_strength,
                        std::uint64_t seed, std::size_t max_len = 64, std::size_t vocab_size = 300) {
  using namespace protoassign;
  auto cfg = uw_ct_body_config(1.0, 0, seed);
  cfg.classes.resize(n_classes);
  cfg.explicit_counts.assign(n_classes, per_class);
  cfg.marker_strength = marker_strength;
  ToyTask t;
  t.records = consolidate_labels(generate_dataset(cfg), 0).records;
  t.n_classes = n_classes;
  for (std::size_t i = 0; i < t.records.size(); ++i) t.texts.push_back(render_template(t.records[i], i));
  t.vocab = train_vocab(t.texts, vocab_size);
  for (std::size_t i = 0; i < t.records.size(); ++i) {
    t.inputs.push_back(encode_text(t.texts[i].text, t.vocab, max_len));
    t.labels.push_back(*t.records[i].label);
  }
  return t;
}

inline protoassign::EncoderConfig tiny_encoder(std::size_t vocab_size, std::size_t n_classes,
                                               std::size_t max_len = 64) {
  protoassign::EncoderConfig c;
  c.vocab_size = vocab_size;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.d_ff = 32;
  c.max_len = max_len;
  c.n_classes = n_classes;
  c.dropout = 0.1;
  return c;
}

}  // namespace testsupport
