#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "charlm/corpus.hpp"
#include "charlm/layers.hpp"
#include "charlm/model.hpp"
#include "charlm/tensor.hpp"

namespace charlm::testing {

/// Relative error between an analytic and a numeric gradient, taken over the
/// whole tensor: |a - n| / max(|a|, |n|). Tensors that are both ~0 count as equal.
inline double relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  if (scale < 1e-10) return std::sqrt(diff);
  return std::sqrt(diff) / scale;
}

/// Numeric gradient of `loss` with respect to a tensor that `loss` reads
/// through the reference.
inline Tensor<double> numeric_grad(Tensor<double>& x, const std::function<double()>& loss, double eps = 1e-5) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = loss();
    x[i] = keep - eps;
    const double down = loss();
    x[i] = keep;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return uniform_init<double>(shape, lo, hi, rng);
}

/// Naive triple loop, the matmul oracle.
template <typename T>
Tensor<T> naive_matmul(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += static_cast<long double>(a.at(i, p)) * b.at(p, j);
      c.at(i, j) = static_cast<T>(s);
    }
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  Tensor<T> t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

/// Two real characters ('a', 'b') plus the four reserved ids: |C| = 6.
/// Eight words: <unk>, <eos> and six surface forms.
inline Lexicon toy_lexicon() {
  Lexicon lex;
  for (const char* w : {"a", "b", "ab", "ba", "aab", "bba"}) lex.words.add(w, 1);
  lex.chars = CharVocab::from_symbols(U"ab");
  return lex;
}

/// d=3, widths [1,2], m=5, two LSTM layers, one highway layer.
inline ModelConfig toy_config(InputMode input = InputMode::chars) {
  ModelConfig c = preset_config(input, "custom");
  c.char_dim = 3;
  c.widths = {1, 2};
  c.filter_counts = {2, 3};
  c.highway_layers = 1;
  c.word_dim = 4;
  c.hidden = 5;
  c.lstm_layers = 2;
  c.dropout = 0.0;
  c.init_range = 0.5;
  return c;
}

/// A window with random ids, time-major.
inline Window random_window(std::size_t batch, std::size_t steps, std::size_t vocab, Rng& rng) {
  Window w;
  w.batch = batch;
  w.steps = steps;
  for (std::size_t i = 0; i < batch * steps; ++i) {
    w.inputs.push_back(static_cast<int>(rng.below(vocab)));
    w.targets.push_back(static_cast<int>(rng.below(vocab)));
  }
  return w;
}

/// Deterministic synthetic corpus of `n` tokens over `types` word types,
/// produced by a fixed random bigram process.
inline std::vector<std::string> synthetic_tokens(std::size_t n, std::size_t types, std::uint64_t seed) {
  static const char* syllables[] = {"ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "po", "ga", "hu"};
  std::vector<std::string> words;
  Rng rng(seed);
  while (words.size() < types) {
    std::string w;
    const std::size_t parts = 1 + rng.below(3);
    for (std::size_t p = 0; p < parts; ++p) w += syllables[rng.below(12)];
    if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
  }
  std::vector<std::size_t> next(types);
  for (auto& v : next) v = rng.below(types);
  std::vector<std::string> out;
  std::size_t cur = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(words[cur]);
    cur = rng.uniform() < 0.8 ? next[cur] : rng.below(types);
  }
  return out;
}

}  // namespace charlm::testing
