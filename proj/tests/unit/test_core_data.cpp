#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "doctest.h"
#include "protoassign/core_data.hpp"
#include "protoassign/synthgen.hpp"
#include "support.hpp"

using namespace protoassign;

namespace {

ExamRecord table1_record() {
  ExamRecord r;
  r.exam_code = "CABDWC";
  r.exam_name = "CT ABDOMEN WITH CONTRAST";
  r.sex = "2";
  r.age = 67;
  r.history = "heart failure, hepatic vein";
  r.diagnosis = "concern for liver laceration post procedure, post biopsy, on apixaban";
  return r;
}

std::vector<ExamRecord> with_groups(const std::map<std::string, std::size_t>& counts) {
  std::vector<ExamRecord> out;
  for (const auto& [g, n] : counts) {
    for (std::size_t i = 0; i < n; ++i) {
      ExamRecord r;
      r.exam_code = "X";
      r.age = 40;
      r.protocol_group = g;
      out.push_back(r);
    }
  }
  return out;
}

// whitespace word count by scanning transitions
std::size_t count_words(const std::string& s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

struct OracleStats {
  double min, max, mean, median, sd, empty;
};

OracleStats oracle_stats(std::vector<std::size_t> v) {
  OracleStats o{};
  std::sort(v.begin(), v.end());
  o.min = static_cast<double>(v.front());
  o.max = static_cast<double>(v.back());
  double sum = 0.0;
  for (auto x : v) sum += static_cast<double>(x);
  o.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (auto x : v) ss += (static_cast<double>(x) - o.mean) * (static_cast<double>(x) - o.mean);
  o.sd = std::sqrt(ss / static_cast<double>(v.size()));
  const std::size_t n = v.size();
  o.median = n % 2 ? static_cast<double>(v[n / 2])
                   : 0.5 * (static_cast<double>(v[n / 2 - 1]) + static_cast<double>(v[n / 2]));
  o.empty = static_cast<double>(std::count(v.begin(), v.end(), std::size_t{0})) /
            static_cast<double>(n);
  return o;
}

void check_field(const FieldStats& got, const OracleStats& want) {
  CHECK(static_cast<double>(got.min) == want.min);
  CHECK(static_cast<double>(got.max) == want.max);
  CHECK(got.mean == doctest::Approx(want.mean).epsilon(1e-12));
  CHECK(got.median == want.median);
  CHECK(got.sd == doctest::Approx(want.sd).epsilon(1e-12));
  CHECK(got.empty_fraction == want.empty);
}

}  // namespace

TEST_CASE("render_template reproduces the example exam byte for byte") {
  const auto t = render_template(table1_record(), 5);
  CHECK(t.text ==
        "Exam is CABDWC. Sex is 2. Age at Exam 67. History: heart failure, hepatic vein. "
        "Diagnosis: concern for liver laceration post procedure, post biopsy, on apixaban");
  CHECK(t.source_id == 5);
}

TEST_CASE("render_template keeps the field label for an empty history") {
  auto r = table1_record();
  r.history = "";
  CHECK(render_template(r).text ==
        "Exam is CABDWC. Sex is 2. Age at Exam 67. History: . Diagnosis: concern for liver "
        "laceration post procedure, post biopsy, on apixaban");
  CHECK(template_prefix(r) == "Exam is CABDWC. Sex is 2. Age at Exam 67. ");
}

TEST_CASE("render_template is injective on random records") {
  Rng rng(11);
  std::map<std::string, ExamRecord> seen;
  for (int i = 0; i < 2000; ++i) {
    auto r = testsupport::random_record(rng);
    r.exam_name.clear();
    r.protocol_group.reset();
    const auto text = render_template(r).text;
    auto [it, inserted] = seen.emplace(text, r);
    if (!inserted) CHECK(it->second == r);
  }
}

TEST_CASE("validate_record rejects negative age and empty exam code") {
  auto r = table1_record();
  CHECK_NOTHROW(validate_record(r));
  r.age = -1;
  CHECK_THROWS_AS(validate_record(r), ValidationError);
  r = table1_record();
  r.exam_code = "";
  CHECK_THROWS_AS(validate_record(r), ValidationError);
}

TEST_CASE("consolidate_labels drops the two small published groups") {
  std::map<std::string, std::size_t> counts;
  for (const auto& [name, n] : uw_ct_body_groups()) counts[name] = n;
  REQUIRE(counts.size() == 27);
  const auto records = with_groups(counts);
  const auto out = consolidate_labels(records, 20);
  CHECK(out.label_set.size() == 25);
  CHECK_FALSE(out.label_set.id_of("CT CA Oral Only").has_value());
  CHECK_FALSE(out.label_set.id_of("CT Abdomen IV Only").has_value());
  CHECK(out.records.size() == records.size() - 15 - 8);
  CHECK(out.label_set.groups()[0].name == "CT CAP IV and Oral");
  CHECK(out.label_set.groups()[0].support == 11911);
  CHECK(out.label_set.groups()[24].support == 42);
}

TEST_CASE("consolidate_labels with threshold 0 only assigns ids") {
  const auto records = with_groups({{"a", 3}, {"b", 7}, {"c", 5}});
  const auto out = consolidate_labels(records, 0);
  CHECK(out.records.size() == records.size());
  CHECK(out.label_set.name_of(0) == "b");
  CHECK(out.label_set.name_of(1) == "c");
  CHECK(out.label_set.name_of(2) == "a");
  for (const auto& r : out.records) CHECK(out.label_set.name_of(*r.label) == *r.protocol_group);
}

TEST_CASE("consolidate_labels keeps only groups at the threshold") {
  const auto out = consolidate_labels(with_groups({{"A", 5}, {"B", 50}, {"C", 19}}), 20);
  REQUIRE(out.label_set.size() == 1);
  CHECK(out.label_set.name_of(0) == "B");
  CHECK(*out.label_set.id_of("B") == 0);
  CHECK(out.records.size() == 50);
  CHECK_THROWS_WITH_AS(consolidate_labels(with_groups({{"A", 5}}), 20), "empty label set",
                       ValidationError);
}

TEST_CASE("consolidate_labels: supports add up, ids dense, supports non-increasing") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ExamRecord> records;
    const std::size_t n = 50 + rng.uniform_int(200);
    for (std::size_t i = 0; i < n; ++i) records.push_back(testsupport::random_record(rng, 12));
    const std::size_t threshold = rng.uniform_int(25);
    std::map<std::string, std::size_t> counts;
    for (const auto& r : records) ++counts[*r.protocol_group];
    std::size_t dropped = 0;
    for (const auto& [g, c] : counts) dropped += c < threshold ? c : 0;
    if (dropped == n) continue;
    const auto out = consolidate_labels(records, threshold);
    std::size_t total = 0;
    for (std::size_t i = 0; i < out.label_set.size(); ++i) {
      const auto& g = out.label_set.groups()[i];
      CHECK(g.id == static_cast<int>(i));
      CHECK(g.support >= threshold);
      CHECK(g.support == counts[g.name]);
      if (i > 0) CHECK(g.support <= out.label_set.groups()[i - 1].support);
      total += g.support;
    }
    CHECK(total == n - dropped);
    CHECK(out.records.size() == n - dropped);
  }
}

TEST_CASE("label set json round trip") {
  const auto out = consolidate_labels(with_groups({{"x", 4}, {"y", 9}}), 2);
  CHECK(ProtocolLabelSet::from_json(out.label_set.to_json()) == out.label_set);
}

TEST_CASE("apply_label_set rejects unknown groups") {
  const auto ls = consolidate_labels(with_groups({{"x", 4}}), 0).label_set;
  auto ok = with_groups({{"x", 1}});
  CHECK(*apply_label_set(ok, ls)[0].label == 0);
  CHECK_THROWS_AS(apply_label_set(with_groups({{"z", 1}}), ls), ValidationError);
}

TEST_CASE("load_dataset reads a three row file") {
  const auto dir = testsupport::temp_dir("core3");
  const std::string path = dir + "/three.tsv";
  write_file(path,
             "exam_code\texam_name\tsex\tage\thistory\tdiagnosis\tprotocol_group\n"
             "A\tn\t1\t30\th one\td one\tG1\n"
             "B\tn\t2\t40\t\td two\tG2\n"
             "C\tn\t1\t50\th three\t\t\n");
  const auto records = load_dataset(path, DatasetFormat::Tsv);
  REQUIRE(records.size() == 3);
  CHECK(records[1].history.empty());
  CHECK(records[2].diagnosis.empty());
  CHECK(records[0].protocol_group == "G1");
  CHECK_FALSE(records[2].protocol_group.has_value());
}

TEST_CASE("load_dataset names the row and field of a bad age") {
  const auto dir = testsupport::temp_dir("corebad");
  const std::string path = dir + "/bad.tsv";
  write_file(path,
             "exam_code\texam_name\tsex\tage\thistory\tdiagnosis\n"
             "A\tn\t1\t30\th\td\n"
             "B\tn\t2\tabc\th\td\n");
  try {
    load_dataset(path, DatasetFormat::Tsv);
    FAIL("expected a parse error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 2") != std::string::npos);
    CHECK(msg.find("age") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_dataset_format("csv"), ValidationError);
}

TEST_CASE("load_dataset rejects unknown columns") {
  const std::string text = "exam_code\texam_name\tsex\tage\thistory\tdiagnosis\tcolor\nA\tn\t1\t3\th\td\tred\n";
  CHECK_THROWS_AS(parse_dataset(text, DatasetFormat::Tsv, {}), ValidationError);
  CHECK(parse_dataset(text, DatasetFormat::Tsv, {"color"}).extras[0][0] == "red");
}

TEST_CASE("synthetic dataset of 500 records round trips through both formats") {
  auto cfg = uw_ct_body_config(1.0, 0, 5);
  cfg.explicit_counts.assign(cfg.classes.size(), 20);
  auto records = generate_dataset(cfg);
  records.resize(500);
  // awkward characters survive too
  records[3].history = "tab\there\\ and\nnewline";
  const auto dir = testsupport::temp_dir("coreround");
  for (auto fmt : {DatasetFormat::Tsv, DatasetFormat::Jsonl}) {
    const std::string path = dir + "/d." + std::string(dataset_format_id(fmt));
    save_dataset(path, records, fmt);
    const auto back = load_dataset(path, fmt);
    REQUIRE(back.size() == 500);
    CHECK(back == records);
    save_dataset(path + ".2", back, fmt);
    CHECK(read_file(path) == read_file(path + ".2"));
  }
}

TEST_CASE("random datasets round trip field for field") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ExamRecord> records;
    for (int i = 0; i < 30; ++i) records.push_back(testsupport::random_record(rng));
    for (auto fmt : {DatasetFormat::Tsv, DatasetFormat::Jsonl}) {
      const auto text = serialize_dataset(DatasetTable{records, {}, {}}, fmt);
      CHECK(parse_dataset(text, fmt, {}).records == records);
    }
  }
}

TEST_CASE("compute_stats on a single record") {
  ExamRecord r = table1_record();
  r.history = "a b c";
  const auto s = compute_stats({r});
  CHECK(s.history.min == 3);
  CHECK(s.history.max == 3);
  CHECK(s.history.mean == 3.0);
  CHECK(s.history.median == 3.0);
  CHECK(s.history.sd == 0.0);
  CHECK_THROWS_AS(compute_stats({}), ValidationError);
}

TEST_CASE("compute_stats matches a brute-force recomputation") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<ExamRecord> records;
    for (int i = 0; i < 100; ++i) records.push_back(testsupport::random_record(rng));
    const auto s = compute_stats(records);
    std::vector<std::size_t> h, d;
    for (const auto& r : records) {
      h.push_back(count_words(r.history));
      d.push_back(count_words(r.diagnosis));
    }
    check_field(s.history, oracle_stats(h));
    check_field(s.diagnosis, oracle_stats(d));
    CHECK(s.history.min <= s.history.median);
    CHECK(s.history.median <= s.history.max);
  }
}

TEST_CASE("template character statistics match a string-length oracle") {
  auto cfg = uw_ct_body_config(1.0, 0, 9);
  cfg.explicit_counts.assign(cfg.classes.size(), 40);
  auto records = generate_dataset(cfg);
  records.resize(1000);
  std::vector<double> lens;
  double sum = 0.0;
  for (const auto& r : records) {
    // ASCII corpus: bytes are characters
    const double n = static_cast<double>(render_template(r).text.size());
    lens.push_back(n);
    sum += n;
  }
  std::sort(lens.begin(), lens.end());
  const auto s = compute_stats(records);
  CHECK(s.template_chars_mean == doctest::Approx(sum / 1000.0).epsilon(1e-12));
  CHECK(s.template_chars_median == 0.5 * (lens[499] + lens[500]));
}
