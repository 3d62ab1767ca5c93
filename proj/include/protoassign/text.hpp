#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "protoassign/core_data.hpp"

namespace protoassign {

// ---------------------------------------------------------------------------
// Vocabulary

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::int32_t kClsId = 2;
inline constexpr std::int32_t kSepId = 3;
inline constexpr std::int32_t kMaskId = 4;
inline constexpr std::size_t kNumSpecials = 5;
inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kContinuationPrefix = "##";
inline constexpr std::size_t kDefaultMaxLen = 200;

class Vocab {
 public:
  /// Specials only.
  Vocab();
  /// `tokens` must start with the five specials in id order and hold no
  /// duplicates.
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::optional<std::int32_t> find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  const std::string& token(std::int32_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// File format: first line "# protoassign-vocab v1", then one token per
  /// line in id order (specials first). Tokens never contain whitespace.
  std::string serialize() const;
  static Vocab parse(std::string_view text);
  /// Stable fingerprint of the token list, used to detect vocab mismatches.
  std::uint64_t fingerprint() const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

bool is_special_token(std::string_view word);

/// Whitespace split, then special-token literals kept whole and every ASCII
/// punctuation character split into its own word. Case is preserved.
std::vector<std::string> pre_split(std::string_view text);

/// UTF-8 code points of `word` as separate strings.
std::vector<std::string> code_points(std::string_view word);

/// Frequency pair-merge subword induction. Initial symbols are code points,
/// non-initial ones carrying the "##" prefix; the alphabet is that symbol
/// set. Merges the most frequent adjacent pair (ties: lexicographically
/// smallest (left, right)) until `target_size` tokens or no pairs remain.
Vocab train_vocab(const std::vector<TemplatedSequence>& corpus, std::size_t target_size);

/// Number of distinct initial symbols train_vocab would start from.
std::size_t vocab_alphabet_size(const std::vector<TemplatedSequence>& corpus);

struct Tokenized {
  std::vector<std::string> words;  // pre-split words
  std::vector<std::string> pieces;
  std::vector<std::size_t> piece_word;  // index into `words` per piece
};

/// Greedy longest-match subwording per pre-split word; a word that cannot be
/// covered becomes a single [UNK].
Tokenized tokenize(std::string_view text, const Vocab& vocab);

struct TokenSequence {
  std::vector<std::int32_t> ids;
  std::size_t attention_length = 0;

  std::size_t max_len() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

/// [CLS] + ids + [SEP], truncated so [SEP] always survives, padded to max_len.
TokenSequence encode(const Tokenized& tokens, const Vocab& vocab,
                     std::size_t max_len = kDefaultMaxLen);
TokenSequence encode_text(std::string_view text, const Vocab& vocab,
                          std::size_t max_len = kDefaultMaxLen);

/// Empty string when the invariants hold, otherwise a description of the
/// first violation.
std::string check_token_sequence(const TokenSequence& seq);

/// Inverse of encode up to [UNK] substitution and truncation: words joined by
/// single spaces, "##" pieces glued to their predecessor.
std::string decode(const TokenSequence& seq, const Vocab& vocab);

// ---------------------------------------------------------------------------
// Part-of-speech

enum class PosTag { Noun, Verb, Adj, Num, Punct, Other };
std::string_view pos_tag_name(PosTag tag);

class PosTagger {
 public:
  virtual ~PosTagger() = default;
  virtual PosTag tag(std::string_view word) const = 0;
};

/// Small clinical/function-word lexicon backed by shape and suffix rules:
/// digits -> NUM, punctuation -> PUNCT, -ing/-ed -> VERB, -ous/-al/-ic ->
/// ADJ, otherwise NOUN.
class LexiconTagger : public PosTagger {
 public:
  PosTag tag(std::string_view word) const override;
  static std::optional<PosTag> lexicon_lookup(std::string_view word);
  static PosTag heuristic(std::string_view word);
};

class PosIndex {
 public:
  PosIndex() = default;

  /// Tags every distinct word with `tagger`.
  static PosIndex build(const std::vector<std::string>& words, const PosTagger& tagger);
  /// Whitespace words of history and diagnosis.
  static PosIndex from_records(const std::vector<ExamRecord>& records, const PosTagger& tagger);

  std::optional<PosTag> lookup(std::string_view word) const;
  const std::vector<std::string>& words_with(PosTag tag) const;
  const std::map<std::string, PosTag, std::less<>>& word_tags() const { return word_tag_; }
  std::size_t size() const { return word_tag_.size(); }

 private:
  std::map<std::string, PosTag, std::less<>> word_tag_;
  std::map<PosTag, std::vector<std::string>> tag_words_;
};

/// Stored tag for known words, LexiconTagger heuristics otherwise.
PosTag pos_tag(std::string_view word, const PosIndex& index);

}  // namespace protoassign
