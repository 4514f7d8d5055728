#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "charlm/error.hpp"

namespace charlm {

inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kEosToken = "<eos>";

// ---------------------------------------------------------------------------
// UTF-8

/// Decodes UTF-8; malformed sequences become U+FFFD.
std::u32string decode_utf8(std::string_view text);
std::string encode_utf8(char32_t cp);
std::string encode_utf8(std::u32string_view text);

// ---------------------------------------------------------------------------
// tokens

/// Whitespace tokens of a one-sentence-per-line corpus, with `<eos>` appended
/// to every non-blank line.
std::vector<std::string> read_tokens(std::istream& in);
std::vector<std::string> read_tokens_file(const std::string& path);

// ---------------------------------------------------------------------------
// vocabularies

struct VocabOptions {
  std::size_t min_count = 1;
  std::size_t cap = 0;  // 0 keeps every word that survives min_count
};

/// Word vocabulary. Ids are dense; `<unk>` is 0 and `<eos>` is 1, then the
/// retained words in order of first occurrence.
class WordVocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kEos = 1;

  WordVocab();

  std::size_t size() const noexcept { return words_.size(); }
  /// Id of `word`, or kUnk when absent.
  int id(std::string_view word) const;
  std::optional<int> find(std::string_view word) const;
  const std::string& word(int id) const;
  std::int64_t count(int id) const;

  /// Appends a word (no-op plus count increase if present). Returns its id.
  int add(std::string_view word, std::int64_t count = 0);

  /// "token<TAB>count" per line, ordered by id.
  void write(std::ostream& out) const;
  static WordVocab read(std::istream& in);

  bool operator==(const WordVocab& other) const { return words_ == other.words_ && counts_ == other.counts_; }

 private:
  std::vector<std::string> words_;
  std::vector<std::int64_t> counts_;
  std::map<std::string, int, std::less<>> index_;
};

/// Character vocabulary over Unicode code points. Ids 0..3 are reserved for
/// padding, start-of-word, end-of-word and unknown characters.
class CharVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBeginWord = 1;
  static constexpr int kEndWord = 2;
  static constexpr int kUnknownChar = 3;
  static constexpr int kReserved = 4;

  CharVocab() = default;

  std::size_t size() const noexcept { return kReserved + symbols_.size(); }
  int id(char32_t c) const;
  int add(char32_t c);
  /// Code point of a non-reserved id.
  char32_t symbol(int id) const;
  /// Printable form: '{' and '}' for word boundaries, '_' for padding, '?' for unknown.
  std::string display(int id) const;

  const std::u32string& symbols() const noexcept { return symbols_; }
  static CharVocab from_symbols(std::u32string symbols);

  bool operator==(const CharVocab& other) const { return symbols_ == other.symbols_; }

 private:
  std::u32string symbols_;
  std::map<char32_t, int> index_;
};

struct Vocabs {
  WordVocab words;
  CharVocab chars;
};

/// Builds both vocabularies from a token stream (as from read_tokens).
/// Words below min_count or outside the `cap` most frequent become `<unk>`.
Vocabs build_vocabs(std::span<const std::string> tokens, const VocabOptions& options = {});

std::vector<int> encode_tokens(std::span<const std::string> tokens, const WordVocab& vocab);

// ---------------------------------------------------------------------------
// character matrices

/// Char ids of one word: start-of-word, characters, end-of-word, then padding
/// up to the table's max_word_len.
struct CharMatrix {
  int word_id = -1;
  std::vector<int> chars;
  std::size_t true_len = 0;

  std::span<const int> used() const { return {chars.data(), true_len}; }
};

/// Encodes a word; characters beyond max_word_len - 2 are dropped and counted
/// in `truncations` when given.
CharMatrix encode_word_chars(std::string_view word, const CharVocab& chars, std::size_t max_word_len,
                             std::size_t* truncations = nullptr);

/// Recovers the surface string from a CharMatrix (boundaries and padding dropped).
std::string decode_word_chars(const CharMatrix& m, const CharVocab& chars);

/// CharMatrix for every word of a vocabulary, stored contiguously.
class CharTable {
 public:
  CharTable() = default;
  /// max_word_len = 0 uses longest word + 2.
  CharTable(const WordVocab& words, const CharVocab& chars, std::size_t max_word_len = 0);

  std::size_t max_word_len() const noexcept { return max_word_len_; }
  std::size_t size() const noexcept { return lengths_.size(); }
  /// The first true_len ids of the word's row.
  std::span<const int> word(int id) const;
  std::span<const int> padded_row(int id) const;
  std::size_t truncations() const noexcept { return truncations_; }

 private:
  std::size_t max_word_len_ = 0;
  std::vector<int> ids_;
  std::vector<std::size_t> lengths_;
  std::size_t truncations_ = 0;
};

// ---------------------------------------------------------------------------
// batching

/// One truncated-BPTT window. Inputs and targets are time-major:
/// element [t * batch + b] belongs to lane b at step t.
struct Window {
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::vector<int> inputs;
  std::vector<int> targets;

  std::span<const int> inputs_at(std::size_t t) const { return {inputs.data() + t * batch, batch}; }
  std::span<const int> targets_at(std::size_t t) const { return {targets.data() + t * batch, batch}; }
};

/// The corpus cut into `batch` contiguous lanes of equal length; tail tokens
/// that do not fill a lane are dropped. Window w covers lane positions
/// [w*steps, w*steps + steps) and predicts the following position; the last
/// window may be shorter.
class BatchStream {
 public:
  BatchStream() = default;
  BatchStream(std::span<const int> ids, std::size_t batch, std::size_t steps);

  std::size_t batch() const noexcept { return batch_; }
  std::size_t steps() const noexcept { return steps_; }
  std::size_t lane_length() const noexcept { return lane_len_; }
  std::span<const int> lane(std::size_t b) const { return {lanes_.data() + b * lane_len_, lane_len_}; }

  std::size_t num_windows() const noexcept;
  Window window(std::size_t w) const;
  /// Number of predicted tokens over a full pass.
  std::size_t num_targets() const noexcept { return batch_ * (lane_len_ - 1); }

 private:
  std::size_t batch_ = 0;
  std::size_t steps_ = 0;
  std::size_t lane_len_ = 0;
  std::vector<int> lanes_;
};

BatchStream make_batches(std::span<const int> ids, std::size_t batch, std::size_t steps);

// ---------------------------------------------------------------------------
// morphemes

/// Morpheme segmentation for every vocabulary word (possibly empty).
struct MorphTable {
  std::vector<std::vector<int>> word_morphs;
  std::vector<std::string> morphemes;
  std::size_t duplicate_lines = 0;
  std::size_t unknown_words = 0;

  std::size_t num_morphemes() const noexcept { return morphemes.size(); }
  std::span<const int> of(int word_id) const;
  bool empty() const noexcept { return word_morphs.empty(); }
};

/// Parses "word<TAB>m1 m2 ..." lines. Duplicate words keep the last line.
MorphTable load_morph_table(std::istream& in, const WordVocab& words);
MorphTable load_morph_table_file(const std::string& path, const WordVocab& words);

}  // namespace charlm
