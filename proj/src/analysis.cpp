#include "charlm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>

namespace charlm {

ReprStageName parse_repr_stage(const std::string& s) {
  if (s == "pre_highway" || s == "pre") return ReprStageName::pre_highway;
  if (s == "post_highway" || s == "post") return ReprStageName::post_highway;
  if (s == "word_embedding" || s == "embedding") return ReprStageName::word_embedding;
  throw ArgumentError("unknown representation stage: " + s + " (expected pre_highway, post_highway or word_embedding)");
}

std::string to_string(ReprStageName s) {
  switch (s) {
    case ReprStageName::pre_highway: return "pre_highway";
    case ReprStageName::post_highway: return "post_highway";
    case ReprStageName::word_embedding: return "word_embedding";
  }
  return "?";
}

std::string to_string(NgramClass c) {
  switch (c) {
    case NgramClass::prefix: return "prefix";
    case NgramClass::suffix: return "suffix";
    case NgramClass::hyphenated: return "hyphenated";
    case NgramClass::other: return "other";
  }
  return "?";
}

namespace {

constexpr std::size_t kEncodeBatch = 256;

template <typename T>
ReprStage check_stage(const Model<T>& model, ReprStageName stage) {
  const bool chars = model.config().input == InputMode::chars;
  if (stage == ReprStageName::word_embedding) {
    if (chars) throw ArgumentError("word_embedding stage needs a word or morph input model");
    return ReprStage::post_transform;
  }
  if (!chars) throw ArgumentError(to_string(stage) + " stage needs a char input model");
  return stage == ReprStageName::pre_highway ? ReprStage::pre_transform : ReprStage::post_transform;
}

template <typename T>
void copy_rows(const Tensor<T>& src, Tensor<float>& dst, std::size_t first) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    auto in = src.row(r);
    auto out = dst.row(first + r);
    for (std::size_t k = 0; k < in.size(); ++k) out[k] = static_cast<float>(in[k]);
  }
}

}  // namespace

template <typename T>
ReprTable word_repr_table(const Model<T>& model, ReprStageName stage) {
  const ReprStage s = check_stage(model, stage);
  const std::size_t vocab = model.vocab_size();
  const std::size_t dim = s == ReprStage::pre_transform ? model.cnn_dim() : model.repr_dim();
  ReprTable table;
  table.stage = stage;
  table.matrix = Tensor<float>({vocab, dim});
  table.ids.resize(vocab);
  std::iota(table.ids.begin(), table.ids.end(), 0);
  for (std::size_t first = 0; first < vocab; first += kEncodeBatch) {
    const std::size_t n = std::min(kEncodeBatch, vocab - first);
    copy_rows(model.input_repr({table.ids.data() + first, n}, s), table.matrix, first);
  }
  return table;
}

template <typename T>
std::vector<float> surface_repr(const Model<T>& model, std::string_view word, ReprStageName stage) {
  const ReprStage s = check_stage(model, stage);
  if (model.config().input != InputMode::chars) throw ArgumentError("surface forms need a char input model");
  const CharMatrix m = encode_word_chars(word, model.lexicon().chars, model.char_table().max_word_len());
  const std::span<const int> seq = m.used();
  const Tensor<T> r = model.encode_char_sequences({&seq, 1}, s);
  std::vector<float> out(r.size());
  for (std::size_t k = 0; k < r.size(); ++k) out[k] = static_cast<float>(r[k]);
  return out;
}

NeighborResult nearest_neighbors(const Tensor<float>& table, std::span<const float> query, std::size_t k,
                                 int exclude) {
  if (table.rank() != 2 || table.cols() != query.size()) {
    throw ShapeError("query of size " + std::to_string(query.size()) + " does not match table " +
                     shape_string(table.shape()));
  }
  const std::size_t rows = table.rows();
  const std::size_t candidates = rows - (exclude >= 0 && static_cast<std::size_t>(exclude) < rows ? 1 : 0);
  if (k > candidates) {
    throw ArgumentError("k=" + std::to_string(k) + " exceeds the " + std::to_string(candidates) + " candidates");
  }
  NeighborResult result;
  double qn = 0.0;
  for (float v : query) qn += static_cast<double>(v) * v;
  qn = std::sqrt(qn);
  if (qn == 0.0) ++result.zero_norm_rows;

  std::vector<Neighbor> all;
  all.reserve(candidates);
  for (std::size_t r = 0; r < rows; ++r) {
    if (static_cast<int>(r) == exclude) continue;
    auto row = table.row(r);
    double dot = 0.0, rn = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      dot += static_cast<double>(row[j]) * query[j];
      rn += static_cast<double>(row[j]) * row[j];
    }
    rn = std::sqrt(rn);
    double cos = 0.0;
    if (rn == 0.0) {
      ++result.zero_norm_rows;
    } else if (qn != 0.0) {
      cos = dot / (qn * rn);
    }
    all.push_back({static_cast<int>(r), cos});
  }
  const auto better = [](const Neighbor& a, const Neighbor& b) {
    return a.cosine != b.cosine ? a.cosine > b.cosine : a.id < b.id;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  result.neighbors = std::move(all);
  return result;
}

NeighborResult nearest_neighbors(const ReprTable& table, int word, std::size_t k) {
  if (word < 0 || static_cast<std::size_t>(word) >= table.matrix.rows()) {
    throw LookupError("word id out of range: " + std::to_string(word));
  }
  auto q = table.matrix.row(static_cast<std::size_t>(word));
  return nearest_neighbors(table.matrix, {q.data(), q.size()}, k, word);
}

NgramClass classify_ngram(std::span<const int> chars, int hyphen_id) {
  if (!chars.empty() && chars.front() == CharVocab::kBeginWord) return NgramClass::prefix;
  if (!chars.empty() && chars.back() == CharVocab::kEndWord) return NgramClass::suffix;
  if (hyphen_id >= 0 && std::find(chars.begin(), chars.end(), hyphen_id) != chars.end()) return NgramClass::hyphenated;
  return NgramClass::other;
}

NgramClass classify_ngram(std::string_view display) {
  if (!display.empty() && display.front() == '{') return NgramClass::prefix;
  if (!display.empty() && display.back() == '}') return NgramClass::suffix;
  if (display.find('-') != std::string_view::npos) return NgramClass::hyphenated;
  return NgramClass::other;
}

template <typename T>
std::vector<NgramRepr> ngram_reprs(const Model<T>& model, const NgramOptions& options) {
  if (model.config().input != InputMode::chars) throw ArgumentError("n-gram analysis needs a char input model");
  if (options.min_len == 0 || options.min_len > options.max_len) throw ArgumentError("invalid n-gram length range");
  const CharTable& table = model.char_table();
  const CharVocab& chars = model.lexicon().chars;

  struct Seen {
    int last_word = -1;
    std::size_t support = 0;
  };
  std::map<std::vector<int>, Seen> seen;
  for (std::size_t w = 0; w < table.size(); ++w) {
    const int id = static_cast<int>(w);
    if (id == WordVocab::kUnk || id == WordVocab::kEos) continue;
    const auto word = table.word(id);
    for (std::size_t len = options.min_len; len <= std::min(options.max_len, word.size()); ++len) {
      for (std::size_t start = 0; start + len <= word.size(); ++start) {
        Seen& s = seen[std::vector<int>(word.begin() + start, word.begin() + start + len)];
        if (s.last_word != id) {
          s.last_word = id;
          ++s.support;
        }
      }
    }
  }

  int hyphen = -1;
  for (std::size_t i = 0; i < chars.symbols().size(); ++i) {
    if (chars.symbols()[i] == U'-') hyphen = CharVocab::kReserved + static_cast<int>(i);
  }

  std::vector<NgramRepr> out;
  for (auto& [key, s] : seen) {
    if (s.support < options.min_support) continue;
    NgramRepr n;
    n.chars = key;
    for (int c : key) n.ngram += chars.display(c);
    n.cls = classify_ngram(key, hyphen);
    n.support = s.support;
    out.push_back(std::move(n));
  }
  for (std::size_t first = 0; first < out.size(); first += kEncodeBatch) {
    const std::size_t n = std::min(kEncodeBatch, out.size() - first);
    std::vector<std::span<const int>> seqs;
    for (std::size_t i = 0; i < n; ++i) seqs.emplace_back(out[first + i].chars);
    const Tensor<T> y = model.encode_char_sequences(seqs, ReprStage::pre_transform);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = y.row(i);
      out[first + i].vec.assign(row.begin(), row.end());
    }
  }
  return out;
}

PcaResult pca_project(const Tensor<double>& x, std::size_t dims, double tol, std::size_t max_iter) {
  if (x.rank() != 2) throw ShapeError("pca_project expects a matrix");
  const std::size_t n = x.rows(), d = x.cols();
  if (n <= dims) throw ArgumentError("pca_project needs more rows than output dimensions");

  Tensor<double> xc = x;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x.at(i, j);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) xc.at(i, j) -= mean;
  }
  Tensor<double> cov({d, d});
  matmul_tn_acc<double>(as_matrix(xc), as_matrix(xc), as_matrix(cov));
  for (std::size_t i = 0; i < cov.size(); ++i) cov[i] /= static_cast<double>(n - 1);

  PcaResult result;
  for (std::size_t j = 0; j < d; ++j) result.total_variance += cov.at(j, j);
  result.projection = Tensor<double>({n, dims});
  result.components = Tensor<double>({dims, d});
  result.variances.assign(dims, 0.0);
  const double tiny = 1e-12 * std::max(result.total_variance, 1e-300);

  std::vector<double> v(d), w(d);
  const auto apply = [&](const std::vector<double>& in, std::vector<double>& out) {
    for (std::size_t r = 0; r < d; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += cov.at(r, c) * in[c];
      out[r] = s;
    }
  };
  const auto norm = [](const std::vector<double>& a) {
    double s = 0.0;
    for (double e : a) s += e * e;
    return std::sqrt(s);
  };

  std::size_t found = 0;
  for (std::size_t comp = 0; comp < dims && comp < d; ++comp) {
    // Start from normalized all-ones; fall back to basis vectors if that lies
    // in the null space of what is left.
    bool started = false;
    for (std::size_t attempt = 0; attempt <= d && !started; ++attempt) {
      if (attempt == 0) {
        std::fill(v.begin(), v.end(), 1.0 / std::sqrt(static_cast<double>(d)));
      } else {
        std::fill(v.begin(), v.end(), 0.0);
        v[attempt - 1] = 1.0;
      }
      apply(v, w);
      started = norm(w) > tiny;
    }
    if (!started) break;
    for (std::size_t it = 0; it < max_iter; ++it) {
      apply(v, w);
      const double wn = norm(w);
      if (wn <= tiny) break;
      double diff = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double nv = w[k] / wn;
        diff += (nv - v[k]) * (nv - v[k]);
        v[k] = nv;
      }
      if (std::sqrt(diff) < tol) break;
    }
    apply(v, w);
    double lambda = 0.0;
    for (std::size_t k = 0; k < d; ++k) lambda += v[k] * w[k];
    if (!(lambda > tiny)) break;

    std::size_t big = 0;
    for (std::size_t k = 1; k < d; ++k) {
      if (std::abs(v[k]) > std::abs(v[big])) big = k;
    }
    if (v[big] < 0) {
      for (double& e : v) e = -e;
    }
    for (std::size_t k = 0; k < d; ++k) result.components.at(comp, k) = v[k];
    result.variances[comp] = lambda;
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c < d; ++c) cov.at(r, c) -= lambda * v[r] * v[c];
    }
    ++found;
  }
  result.missing_components = dims - found;

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t comp = 0; comp < found; ++comp) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += xc.at(i, k) * result.components.at(comp, k);
      result.projection.at(i, comp) = s;
    }
  }
  return result;
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_repr_csv(std::ostream& out, const ReprTable& table, const WordVocab& words) {
  out << "word";
  for (std::size_t j = 0; j < table.matrix.cols(); ++j) out << ",dim" << j;
  out << '\n';
  for (std::size_t r = 0; r < table.matrix.rows(); ++r) {
    out << csv_field(words.word(table.ids[r]));
    for (float v : table.matrix.row(r)) out << ',' << num(v);
    out << '\n';
  }
}

void write_ngram_csv(std::ostream& out, std::span<const NgramRepr> ngrams, const Tensor<double>& projection) {
  if (projection.rows() != ngrams.size() || projection.cols() < 2) {
    throw ShapeError("projection must have one row per n-gram and at least two columns");
  }
  out << "ngram,class,support,x,y\n";
  for (std::size_t i = 0; i < ngrams.size(); ++i) {
    out << csv_field(ngrams[i].ngram) << ',' << to_string(ngrams[i].cls) << ',' << ngrams[i].support << ','
        << num(projection.at(i, 0)) << ',' << num(projection.at(i, 1)) << '\n';
  }
}

#define CHARLM_INSTANTIATE(T)                                                                   \
  template ReprTable word_repr_table<T>(const Model<T>&, ReprStageName);                        \
  template std::vector<float> surface_repr<T>(const Model<T>&, std::string_view, ReprStageName); \
  template std::vector<NgramRepr> ngram_reprs<T>(const Model<T>&, const NgramOptions&);
CHARLM_INSTANTIATE(float)
CHARLM_INSTANTIATE(double)
#undef CHARLM_INSTANTIATE

}  // namespace charlm
