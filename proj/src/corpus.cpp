#include "charlm/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace charlm {

// ---------------------------------------------------------------------------
// UTF-8

std::u32string decode_utf8(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  std::size_t i = 0;
  const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
  while (i < text.size()) {
    const unsigned char b0 = byte(i);
    std::size_t len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    }
    bool ok = len > 0 && i + len <= text.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      if ((byte(i + k) & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (byte(i + k) & 0x3F);
    }
    if (!ok) {
      out.push_back(U'�');
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string encode_utf8(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return out;
}

std::string encode_utf8(std::u32string_view text) {
  std::string out;
  for (char32_t c : text) out += encode_utf8(c);
  return out;
}

// ---------------------------------------------------------------------------
// tokens

std::vector<std::string> read_tokens(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    bool any = false;
    while (ls >> tok) {
      tokens.push_back(std::move(tok));
      any = true;
    }
    if (any) tokens.emplace_back(kEosToken);
  }
  return tokens;
}

std::vector<std::string> read_tokens_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("corpus not found: " + path);
  return read_tokens(in);
}

// ---------------------------------------------------------------------------
// WordVocab

WordVocab::WordVocab() {
  add(kUnkToken);
  add(kEosToken);
}

int WordVocab::id(std::string_view word) const {
  return find(word).value_or(kUnk);
}

std::optional<int> WordVocab::find(std::string_view word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& WordVocab::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw LookupError("word id out of range: " + std::to_string(id));
  }
  return words_[static_cast<std::size_t>(id)];
}

std::int64_t WordVocab::count(int id) const {
  word(id);
  return counts_[static_cast<std::size_t>(id)];
}

int WordVocab::add(std::string_view word, std::int64_t count) {
  if (auto found = find(word)) {
    counts_[static_cast<std::size_t>(*found)] += count;
    return *found;
  }
  const int id = static_cast<int>(words_.size());
  words_.emplace_back(word);
  counts_.push_back(count);
  index_.emplace(std::string(word), id);
  return id;
}

void WordVocab::write(std::ostream& out) const {
  for (std::size_t i = 0; i < words_.size(); ++i) out << words_[i] << '\t' << counts_[i] << '\n';
}

WordVocab WordVocab::read(std::istream& in) {
  WordVocab v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw ParseError("vocab line " + std::to_string(lineno) + ": expected token<TAB>count");
    }
    std::int64_t count = 0;
    try {
      count = std::stoll(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw ParseError("vocab line " + std::to_string(lineno) + ": bad count");
    }
    const std::string word = line.substr(0, tab);
    const int expected = static_cast<int>(lineno) - 1;
    if (lineno <= 2) {
      if (word != (lineno == 1 ? kUnkToken : kEosToken)) {
        throw ParseError("vocab line " + std::to_string(lineno) + ": reserved token expected");
      }
      v.counts_[static_cast<std::size_t>(expected)] = count;
      continue;
    }
    if (v.find(word)) throw ParseError("vocab line " + std::to_string(lineno) + ": duplicate token " + word);
    v.add(word, count);
  }
  return v;
}

// ---------------------------------------------------------------------------
// CharVocab

int CharVocab::id(char32_t c) const {
  auto it = index_.find(c);
  return it == index_.end() ? kUnknownChar : it->second;
}

int CharVocab::add(char32_t c) {
  auto it = index_.find(c);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(size());
  symbols_.push_back(c);
  index_.emplace(c, id);
  return id;
}

char32_t CharVocab::symbol(int id) const {
  if (id < kReserved || static_cast<std::size_t>(id) >= size()) {
    throw LookupError("char id has no symbol: " + std::to_string(id));
  }
  return symbols_[static_cast<std::size_t>(id - kReserved)];
}

std::string CharVocab::display(int id) const {
  switch (id) {
    case kPad: return "_";
    case kBeginWord: return "{";
    case kEndWord: return "}";
    case kUnknownChar: return "?";
    default: return encode_utf8(symbol(id));
  }
}

CharVocab CharVocab::from_symbols(std::u32string symbols) {
  CharVocab v;
  for (char32_t c : symbols) {
    if (v.index_.count(c)) throw ParseError("duplicate character in char vocabulary");
    v.add(c);
  }
  return v;
}

// ---------------------------------------------------------------------------
// building

Vocabs build_vocabs(std::span<const std::string> tokens, const VocabOptions& options) {
  if (tokens.empty()) throw CorpusError("empty corpus");

  // distinct words in first-occurrence order, specials excluded
  std::map<std::string_view, std::size_t> slot;
  std::vector<std::string_view> order;
  std::vector<std::int64_t> counts;
  std::int64_t eos = 0, literal_unk = 0;
  for (const std::string& t : tokens) {
    if (t == kEosToken) {
      ++eos;
      continue;
    }
    if (t == kUnkToken) {
      ++literal_unk;
      continue;
    }
    auto [it, inserted] = slot.emplace(t, order.size());
    if (inserted) {
      order.push_back(t);
      counts.push_back(0);
    }
    ++counts[it->second];
  }

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < order.size(); ++i)
    if (counts[i] >= static_cast<std::int64_t>(options.min_count)) candidates.push_back(i);
  if (options.cap > 0 && candidates.size() > options.cap) {
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
    candidates.resize(options.cap);
    std::sort(candidates.begin(), candidates.end());
  }

  Vocabs out;
  std::int64_t retained = 0;
  for (std::size_t i : candidates) {
    out.words.add(order[i], counts[i]);
    retained += counts[i];
  }
  const std::int64_t total_words = std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
  out.words.add(kUnkToken, literal_unk + (total_words - retained));
  out.words.add(kEosToken, eos);

  for (std::size_t id = 0; id < out.words.size(); ++id)
    for (char32_t c : decode_utf8(out.words.word(static_cast<int>(id)))) out.chars.add(c);
  return out;
}

std::vector<int> encode_tokens(std::span<const std::string> tokens, const WordVocab& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(vocab.id(t));
  return ids;
}

// ---------------------------------------------------------------------------
// char matrices

CharMatrix encode_word_chars(std::string_view word, const CharVocab& chars, std::size_t max_word_len,
                             std::size_t* truncations) {
  if (word.empty()) throw ArgumentError("cannot encode an empty word");
  if (max_word_len < 3) throw ArgumentError("max_word_len must leave room for at least one character");
  std::u32string cps = decode_utf8(word);
  if (cps.size() + 2 > max_word_len) {
    cps.resize(max_word_len - 2);
    if (truncations) ++*truncations;
  }
  CharMatrix m;
  m.chars.assign(max_word_len, CharVocab::kPad);
  m.chars[0] = CharVocab::kBeginWord;
  for (std::size_t i = 0; i < cps.size(); ++i) m.chars[i + 1] = chars.id(cps[i]);
  m.chars[cps.size() + 1] = CharVocab::kEndWord;
  m.true_len = cps.size() + 2;
  return m;
}

std::string decode_word_chars(const CharMatrix& m, const CharVocab& chars) {
  std::string out;
  for (std::size_t i = 0; i < m.true_len; ++i) {
    const int c = m.chars[i];
    if (c == CharVocab::kPad || c == CharVocab::kBeginWord || c == CharVocab::kEndWord) continue;
    out += c == CharVocab::kUnknownChar ? std::string("\xEF\xBF\xBD") : encode_utf8(chars.symbol(c));
  }
  return out;
}

CharTable::CharTable(const WordVocab& words, const CharVocab& chars, std::size_t max_word_len) {
  if (max_word_len == 0) {
    std::size_t longest = 0;
    for (std::size_t id = 0; id < words.size(); ++id)
      longest = std::max(longest, decode_utf8(words.word(static_cast<int>(id))).size());
    max_word_len = longest + 2;
  }
  max_word_len_ = max_word_len;
  ids_.reserve(words.size() * max_word_len);
  for (std::size_t id = 0; id < words.size(); ++id) {
    CharMatrix m = encode_word_chars(words.word(static_cast<int>(id)), chars, max_word_len, &truncations_);
    ids_.insert(ids_.end(), m.chars.begin(), m.chars.end());
    lengths_.push_back(m.true_len);
  }
}

std::span<const int> CharTable::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= lengths_.size()) {
    throw LookupError("word id out of range: " + std::to_string(id));
  }
  return {ids_.data() + static_cast<std::size_t>(id) * max_word_len_, lengths_[static_cast<std::size_t>(id)]};
}

std::span<const int> CharTable::padded_row(int id) const {
  word(id);
  return {ids_.data() + static_cast<std::size_t>(id) * max_word_len_, max_word_len_};
}

// ---------------------------------------------------------------------------
// batching

BatchStream::BatchStream(std::span<const int> ids, std::size_t batch, std::size_t steps)
    : batch_(batch), steps_(steps) {
  if (batch == 0 || steps == 0) throw ArgumentError("batch size and bptt steps must be positive");
  if (ids.size() < batch * (steps + 1)) {
    throw CorpusError("corpus too short: " + std::to_string(ids.size()) + " tokens for batch " +
                      std::to_string(batch) + " x steps " + std::to_string(steps));
  }
  lane_len_ = ids.size() / batch;
  lanes_.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(lane_len_ * batch));
}

std::size_t BatchStream::num_windows() const noexcept {
  if (lane_len_ < 2) return 0;
  return (lane_len_ - 1 + steps_ - 1) / steps_;
}

Window BatchStream::window(std::size_t w) const {
  if (w >= num_windows()) throw ArgumentError("window index out of range");
  const std::size_t start = w * steps_;
  Window out;
  out.batch = batch_;
  out.steps = std::min(steps_, lane_len_ - 1 - start);
  out.inputs.resize(out.steps * batch_);
  out.targets.resize(out.steps * batch_);
  for (std::size_t t = 0; t < out.steps; ++t) {
    for (std::size_t b = 0; b < batch_; ++b) {
      out.inputs[t * batch_ + b] = lanes_[b * lane_len_ + start + t];
      out.targets[t * batch_ + b] = lanes_[b * lane_len_ + start + t + 1];
    }
  }
  return out;
}

BatchStream make_batches(std::span<const int> ids, std::size_t batch, std::size_t steps) {
  return BatchStream(ids, batch, steps);
}

// ---------------------------------------------------------------------------
// morphemes

std::span<const int> MorphTable::of(int word_id) const {
  if (word_id < 0 || static_cast<std::size_t>(word_id) >= word_morphs.size()) {
    throw LookupError("word id out of range in morph table: " + std::to_string(word_id));
  }
  return word_morphs[static_cast<std::size_t>(word_id)];
}

MorphTable load_morph_table(std::istream& in, const WordVocab& words) {
  MorphTable table;
  table.word_morphs.resize(words.size());
  std::vector<bool> seen(words.size(), false);
  std::map<std::string, int, std::less<>> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw ParseError("morph table line " + std::to_string(lineno) + ": expected word<TAB>morphemes");
    }
    const std::string word = line.substr(0, tab);
    auto id = words.find(word);
    if (!id) {
      ++table.unknown_words;
      continue;
    }
    std::vector<int> morphs;
    std::istringstream ms(line.substr(tab + 1));
    std::string m;
    while (ms >> m) {
      auto [it, inserted] = index.emplace(m, static_cast<int>(table.morphemes.size()));
      if (inserted) table.morphemes.push_back(m);
      morphs.push_back(it->second);
    }
    const auto slot = static_cast<std::size_t>(*id);
    if (seen[slot]) ++table.duplicate_lines;
    seen[slot] = true;
    table.word_morphs[slot] = std::move(morphs);
  }
  return table;
}

MorphTable load_morph_table_file(const std::string& path, const WordVocab& words) {
  std::ifstream in(path);
  if (!in) throw CorpusError("morph table not found: " + path);
  return load_morph_table(in, words);
}

}  // namespace charlm
