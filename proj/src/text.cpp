#include "protoassign/text.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "protoassign/util.hpp"

namespace protoassign {

namespace {

const std::vector<std::string> kSpecials = {std::string(kPadToken), std::string(kUnkToken),
                                            std::string(kClsToken), std::string(kSepToken),
                                            std::string(kMaskToken)};

constexpr std::string_view kVocabHeader = "# protoassign-vocab v1";
constexpr std::size_t kMaxWordChars = 100;

bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;  // stray continuation byte: treat as its own unit
}

std::string strip_prefix(const std::string& s) {
  if (s.rfind(kContinuationPrefix, 0) == 0) return s.substr(kContinuationPrefix.size());
  return s;
}

std::vector<std::string> word_symbols(const std::string& word) {
  auto cps = code_points(word);
  for (std::size_t i = 1; i < cps.size(); ++i) cps[i] = std::string(kContinuationPrefix) + cps[i];
  return cps;
}

std::map<std::string, std::size_t> word_frequencies(const std::vector<TemplatedSequence>& corpus) {
  std::map<std::string, std::size_t> freq;
  for (const auto& seq : corpus) {
    for (auto& w : pre_split(seq.text)) {
      if (!is_special_token(w)) ++freq[w];
    }
  }
  return freq;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() : Vocab(kSpecials) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kNumSpecials ||
      !std::equal(kSpecials.begin(), kSpecials.end(), tokens_.begin())) {
    throw ValidationError("vocab: the five special tokens must occupy ids 0-4");
  }
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto& t = tokens_[i];
    if (t.empty()) throw ValidationError("vocab: empty token at id " + std::to_string(i));
    for (unsigned char c : t) {
      if (std::isspace(c)) throw ValidationError("vocab: token contains whitespace: '" + t + "'");
    }
    if (!index_.emplace(t, static_cast<std::int32_t>(i)).second) {
      throw ValidationError("vocab: duplicate token '" + t + "'");
    }
  }
}

std::optional<std::int32_t> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ValidationError("vocab: id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocab::serialize() const {
  std::string out(kVocabHeader);
  out += '\n';
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

Vocab Vocab::parse(std::string_view text) {
  auto lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty() || lines.front() != kVocabHeader) {
    throw ValidationError("vocab: missing or unsupported header (expected '" +
                          std::string(kVocabHeader) + "')");
  }
  return Vocab(std::vector<std::string>(lines.begin() + 1, lines.end()));
}

std::uint64_t Vocab::fingerprint() const { return fnv1a64(serialize()); }

bool is_special_token(std::string_view word) {
  return std::find(kSpecials.begin(), kSpecials.end(), word) != kSpecials.end();
}

// ---------------------------------------------------------------------------
// Pre-splitting

std::vector<std::string> code_points(std::string_view word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const std::size_t len =
        std::min(utf8_length(static_cast<unsigned char>(word[i])), word.size() - i);
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<std::string> pre_split(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& chunk : split_whitespace(text)) {
    std::size_t i = 0;
    std::string current;
    auto flush = [&] {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    };
    while (i < chunk.size()) {
      if (chunk[i] == '[') {
        bool matched = false;
        for (const auto& sp : kSpecials) {
          if (chunk.compare(i, sp.size(), sp) == 0) {
            flush();
            out.push_back(sp);
            i += sp.size();
            matched = true;
            break;
          }
        }
        if (matched) continue;
      }
      const auto c = static_cast<unsigned char>(chunk[i]);
      if (is_ascii_punct(c)) {
        flush();
        out.emplace_back(1, chunk[i]);
        ++i;
      } else {
        current.push_back(chunk[i]);
        ++i;
      }
    }
    flush();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary induction

std::size_t vocab_alphabet_size(const std::vector<TemplatedSequence>& corpus) {
  std::set<std::string> alphabet;
  for (const auto& [word, count] : word_frequencies(corpus)) {
    for (auto& s : word_symbols(word)) alphabet.insert(std::move(s));
  }
  return alphabet.size();
}

Vocab train_vocab(const std::vector<TemplatedSequence>& corpus, std::size_t target_size) {
  if (corpus.empty()) throw ValidationError("train_vocab: empty corpus");
  const auto freq = word_frequencies(corpus);

  struct Entry {
    std::vector<std::string> symbols;
    std::size_t count;
  };
  std::vector<Entry> words;
  std::set<std::string> alphabet;
  for (const auto& [word, count] : freq) {
    Entry e{word_symbols(word), count};
    for (const auto& s : e.symbols) alphabet.insert(s);
    words.push_back(std::move(e));
  }
  const std::size_t minimum = kNumSpecials + alphabet.size();
  if (target_size < minimum) {
    throw ValidationError("train_vocab: target_size " + std::to_string(target_size) +
                          " below minimum " + std::to_string(minimum) +
                          " (5 specials + alphabet)");
  }

  std::vector<std::string> tokens = kSpecials;
  std::set<std::string> known(alphabet.begin(), alphabet.end());
  tokens.insert(tokens.end(), alphabet.begin(), alphabet.end());

  while (tokens.size() < target_size) {
    std::map<std::pair<std::string, std::string>, std::size_t> pairs;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        pairs[{w.symbols[i], w.symbols[i + 1]}] += w.count;
      }
    }
    if (pairs.empty()) break;
    // std::map iterates in lexicographic order, so the first maximum wins ties.
    auto best = pairs.begin();
    for (auto it = pairs.begin(); it != pairs.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const auto [left, right] = best->first;
    const std::string merged = left + strip_prefix(right);
    for (auto& w : words) {
      std::vector<std::string> next;
      next.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == left && w.symbols[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(w.symbols[i]);
        }
      }
      w.symbols = std::move(next);
    }
    if (known.insert(merged).second) tokens.push_back(merged);
  }
  return Vocab(std::move(tokens));
}

// ---------------------------------------------------------------------------
// Tokenization

Tokenized tokenize(std::string_view text, const Vocab& vocab) {
  Tokenized out;
  out.words = pre_split(text);
  for (std::size_t w = 0; w < out.words.size(); ++w) {
    const auto& word = out.words[w];
    if (is_special_token(word)) {
      out.pieces.push_back(word);
      out.piece_word.push_back(w);
      continue;
    }
    const auto cps = code_points(word);
    std::vector<std::string> pieces;
    bool bad = cps.size() > kMaxWordChars;
    std::size_t start = 0;
    while (!bad && start < cps.size()) {
      std::size_t end = cps.size();
      std::string found;
      while (end > start) {
        std::string sub = start > 0 ? std::string(kContinuationPrefix) : std::string();
        for (std::size_t k = start; k < end; ++k) sub += cps[k];
        if (vocab.contains(sub)) {
          found = std::move(sub);
          break;
        }
        --end;
      }
      if (found.empty()) {
        bad = true;
        break;
      }
      pieces.push_back(std::move(found));
      start = end;
    }
    if (bad) pieces = {std::string(kUnkToken)};
    for (auto& p : pieces) {
      out.pieces.push_back(std::move(p));
      out.piece_word.push_back(w);
    }
  }
  return out;
}

TokenSequence encode(const Tokenized& tokens, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 2) throw ValidationError("encode: max_len must be >= 2");
  TokenSequence seq;
  seq.ids.reserve(max_len);
  seq.ids.push_back(kClsId);
  const std::size_t room = max_len - 2;
  for (std::size_t i = 0; i < tokens.pieces.size() && i < room; ++i) {
    seq.ids.push_back(vocab.find(tokens.pieces[i]).value_or(kUnkId));
  }
  seq.ids.push_back(kSepId);
  seq.attention_length = seq.ids.size();
  seq.ids.resize(max_len, kPadId);
  return seq;
}

TokenSequence encode_text(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  return encode(tokenize(text, vocab), vocab, max_len);
}

std::string check_token_sequence(const TokenSequence& seq) {
  const std::size_t n = seq.ids.size();
  if (seq.attention_length < 2 || seq.attention_length > n) return "attention_length out of range";
  if (seq.ids[0] != kClsId) return "first id is not [CLS]";
  if (seq.ids[seq.attention_length - 1] != kSepId) return "last non-pad id is not [SEP]";
  for (std::size_t i = 0; i < seq.attention_length; ++i) {
    if (seq.ids[i] == kPadId) return "[PAD] before a non-pad token at " + std::to_string(i);
  }
  for (std::size_t i = seq.attention_length; i < n; ++i) {
    if (seq.ids[i] != kPadId) return "non-pad id after padding at " + std::to_string(i);
  }
  return {};
}

std::string decode(const TokenSequence& seq, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < seq.attention_length; ++i) {
    const auto id = seq.ids[i];
    if (id == kClsId || id == kSepId || id == kPadId) continue;
    const auto& tok = vocab.token(id);
    if (tok.rfind(kContinuationPrefix, 0) == 0 && !out.empty()) {
      out += tok.substr(kContinuationPrefix.size());
    } else {
      if (!out.empty()) out += ' ';
      out += tok;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// POS

std::string_view pos_tag_name(PosTag tag) {
  switch (tag) {
    case PosTag::Noun: return "NOUN";
    case PosTag::Verb: return "VERB";
    case PosTag::Adj: return "ADJ";
    case PosTag::Num: return "NUM";
    case PosTag::Punct: return "PUNCT";
    case PosTag::Other: return "OTHER";
  }
  return "OTHER";
}

namespace {

const std::map<std::string, PosTag, std::less<>>& lexicon() {
  static const std::map<std::string, PosTag, std::less<>> lex = [] {
    std::map<std::string, PosTag, std::less<>> m;
    for (const char* w : {"of", "with", "and", "for", "the", "in", "on", "to", "a", "an", "at",
                          "or", "no", "not", "from", "by", "since", "after", "before", "s/p",
                          "r/o", "w/", "w/o", "vs", "per", "as", "is", "was", "be"}) {
      m[w] = PosTag::Other;
    }
    for (const char* w : {"evaluate", "eval", "assess", "rule", "follow", "presents", "concern",
                          "rule-out", "exclude", "repeat", "noted", "seen", "recommended"}) {
      m[w] = PosTag::Verb;
    }
    for (const char* w : {"acute", "chronic", "elevated", "abnormal", "new", "recent", "prior",
                          "known", "small", "large", "left", "right", "lower", "upper", "severe",
                          "stable", "normal", "possible", "suspected", "free", "persistent",
                          "intermittent", "recurrent", "metastatic", "old"}) {
      m[w] = PosTag::Adj;
    }
    for (const char* w : {"biopsy", "laceration", "hernia", "pain", "mass", "lesion", "history",
                          "failure", "vein", "liver", "kidney", "fever", "surveillance",
                          "transplant", "procedure", "abdomen", "pelvis", "contrast"}) {
      m[w] = PosTag::Noun;
    }
    return m;
  }();
  return lex;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() > suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::optional<PosTag> LexiconTagger::lexicon_lookup(std::string_view word) {
  const auto& lex = lexicon();
  auto it = lex.find(lower_ascii(word));
  if (it == lex.end()) return std::nullopt;
  return it->second;
}

PosTag LexiconTagger::heuristic(std::string_view word) {
  if (word.empty()) return PosTag::Other;
  bool any_digit = false, all_punct = true, numeric_shape = true;
  for (unsigned char c : word) {
    if (std::isdigit(c)) any_digit = true;
    if (!is_ascii_punct(c)) all_punct = false;
    if (!(std::isdigit(c) || c == '.' || c == ',' || c == '/' || c == '-' || c == '%' ||
          c == ':' || c == '+' || c == '<' || c == '>')) {
      numeric_shape = false;
    }
  }
  if (all_punct) return PosTag::Punct;
  if (any_digit && numeric_shape) return PosTag::Num;
  // Judge suffixes on the word stripped of surrounding punctuation.
  std::size_t b = 0, e = word.size();
  while (b < e && is_ascii_punct(static_cast<unsigned char>(word[b]))) ++b;
  while (e > b && is_ascii_punct(static_cast<unsigned char>(word[e - 1]))) --e;
  const std::string core = lower_ascii(word.substr(b, e - b));
  if (auto hit = lexicon_lookup(core)) return *hit;
  if (ends_with(core, "ing") || ends_with(core, "ed")) return PosTag::Verb;
  if (ends_with(core, "ous") || ends_with(core, "al") || ends_with(core, "ic")) return PosTag::Adj;
  return PosTag::Noun;
}

PosTag LexiconTagger::tag(std::string_view word) const {
  if (auto hit = lexicon_lookup(word)) return *hit;
  return heuristic(word);
}

PosIndex PosIndex::build(const std::vector<std::string>& words, const PosTagger& tagger) {
  PosIndex index;
  for (const auto& w : words) {
    if (w.empty() || index.word_tag_.count(w)) continue;
    index.word_tag_.emplace(w, tagger.tag(w));
  }
  for (const auto& [w, t] : index.word_tag_) index.tag_words_[t].push_back(w);
  return index;
}

PosIndex PosIndex::from_records(const std::vector<ExamRecord>& records, const PosTagger& tagger) {
  std::vector<std::string> words;
  for (const auto& r : records) {
    for (auto& w : split_whitespace(r.history)) words.push_back(std::move(w));
    for (auto& w : split_whitespace(r.diagnosis)) words.push_back(std::move(w));
  }
  // [MASK] can appear in records produced by augmentation; it is not a word.
  std::erase_if(words, [](const std::string& w) { return is_special_token(w); });
  return build(words, tagger);
}

std::optional<PosTag> PosIndex::lookup(std::string_view word) const {
  auto it = word_tag_.find(word);
  if (it == word_tag_.end()) return std::nullopt;
  return it->second;
}

const std::vector<std::string>& PosIndex::words_with(PosTag tag) const {
  static const std::vector<std::string> empty;
  auto it = tag_words_.find(tag);
  return it == tag_words_.end() ? empty : it->second;
}

PosTag pos_tag(std::string_view word, const PosIndex& index) {
  if (auto t = index.lookup(word)) return *t;
  return LexiconTagger::heuristic(word);
}

}  // namespace protoassign
