#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "charlm/corpus.hpp"
#include "charlm/model.hpp"
#include "charlm/tensor.hpp"

namespace charlm {

enum class ReprStageName { pre_highway, post_highway, word_embedding };

ReprStageName parse_repr_stage(const std::string& s);
std::string to_string(ReprStageName s);

/// One representation per vocabulary word, rows in word-id order.
struct ReprTable {
  ReprStageName stage = ReprStageName::post_highway;
  Tensor<float> matrix;  // [|V| x n]
  std::vector<int> ids;

  bool operator==(const ReprTable&) const = default;
};

/// Encodes every vocabulary word at `stage`. pre_highway and post_highway
/// need a char-input model, word_embedding a word or morph model; otherwise
/// throws ArgumentError. Rows are computed in fixed-size batches and do not
/// depend on the batching.
template <typename T>
ReprTable word_repr_table(const Model<T>& model, ReprStageName stage);

/// Representation of an arbitrary surface form from its characters
/// (char-input models only).
template <typename T>
std::vector<float> surface_repr(const Model<T>& model, std::string_view word, ReprStageName stage);

struct Neighbor {
  int id = -1;
  double cosine = 0.0;

  bool operator==(const Neighbor&) const = default;
};

struct NeighborResult {
  std::vector<Neighbor> neighbors;
  std::size_t zero_norm_rows = 0;  // rows (or the query) with zero norm; cosine taken as 0
};

/// Top-k rows by cosine similarity to `query`, skipping row `exclude`. Ties
/// go to the lower id. Throws ArgumentError when k exceeds the candidates.
NeighborResult nearest_neighbors(const Tensor<float>& table, std::span<const float> query, std::size_t k,
                                 int exclude = -1);
/// Neighbors of a vocabulary word (the word itself excluded).
NeighborResult nearest_neighbors(const ReprTable& table, int word, std::size_t k);

enum class NgramClass { prefix, suffix, hyphenated, other };
std::string to_string(NgramClass c);

/// Starting with the start-of-word character makes a prefix (this takes
/// precedence), ending with end-of-word a suffix; otherwise an n-gram with a
/// hyphen is hyphenated.
NgramClass classify_ngram(std::span<const int> chars, int hyphen_id);
/// Same rule on the display form, where '{' and '}' mark the boundaries.
NgramClass classify_ngram(std::string_view display);

struct NgramOptions {
  std::size_t min_len = 2;
  std::size_t max_len = 7;
  std::size_t min_support = 2;
};

struct NgramRepr {
  std::string ngram;  // display form
  std::vector<int> chars;
  std::vector<float> vec;
  NgramClass cls = NgramClass::other;
  std::size_t support = 0;  // distinct vocabulary words containing it
};

/// Character n-grams of the boundary-augmented vocabulary words (special
/// tokens skipped) with enough support, each run alone through the CharCNN
/// (pre-highway). Ordered by char-id sequence.
template <typename T>
std::vector<NgramRepr> ngram_reprs(const Model<T>& model, const NgramOptions& options = {});

struct PcaResult {
  Tensor<double> projection;  // [N x dims]
  Tensor<double> components;  // [dims x D], unit rows
  std::vector<double> variances;  // eigenvalue per component
  double total_variance = 0.0;
  std::size_t missing_components = 0;  // rank deficiency; rows left zero
};

/// Mean-centers `x` and projects onto its top principal components, found by
/// power iteration with deflation from the normalized all-ones vector. Each
/// component is signed so its largest-magnitude coordinate is positive.
PcaResult pca_project(const Tensor<double>& x, std::size_t dims = 2, double tol = 1e-8,
                      std::size_t max_iter = 100000);

/// "word,dim0,dim1,...".
void write_repr_csv(std::ostream& out, const ReprTable& table, const WordVocab& words);
/// "ngram,class,support,x,y".
void write_ngram_csv(std::ostream& out, std::span<const NgramRepr> ngrams, const Tensor<double>& projection);
/// RFC 4180 field quoting.
std::string csv_field(std::string_view s);

}  // namespace charlm
