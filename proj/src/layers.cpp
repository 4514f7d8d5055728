#include "charlm/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace charlm {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw ArgumentError("unknown activation: " + name);
}

std::string to_string(Activation g) { return g == Activation::relu ? "relu" : "tanh"; }

namespace {

constexpr int kPadChar = 0;

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

template <typename T>
T activate(Activation g, T x) {
  return g == Activation::relu ? std::max(x, T{0}) : std::tanh(x);
}

// derivative expressed through the activation's output
template <typename T>
T activate_grad(Activation g, T out) {
  return g == Activation::relu ? (out > T{0} ? T{1} : T{0}) : T{1} - out * out;
}

template <typename T>
void add_row_bias(Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t n = bias.size();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    T* row = x.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += bias[j];
  }
}

template <typename T>
void accumulate_col_sums(const Tensor<T>& d, Tensor<T>& out) {
  const std::size_t n = out.size();
  for (std::size_t r = 0; r < d.rows(); ++r) {
    const T* row = d.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += row[j];
  }
}

template <typename T>
void require_cols(const Tensor<T>& x, std::size_t cols, const char* who) {
  if (x.rank() != 2 || x.cols() != cols) {
    throw ShapeError(std::string(who) + ": expected [B x " + std::to_string(cols) + "], got " +
                     shape_string(x.shape()));
  }
}

template <typename T>
MatrixRef<const T> row_ref(std::span<const T> row) {
  return {row.data(), 1, row.size()};
}

// log-sum-exp of a row, accumulated in double
template <typename T>
double log_sum_exp(const T* row, std::size_t n) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += std::exp(static_cast<double>(row[j]) - static_cast<double>(mx));
  return static_cast<double>(mx) + std::log(s);
}

// Writes scale * (softmax(row) - onehot(target)) into grad.
template <typename T>
void softmax_grad(const T* row, std::size_t n, double lse, int target, T scale, T* grad) {
  for (std::size_t j = 0; j < n; ++j) {
    const double p = std::exp(static_cast<double>(row[j]) - lse);
    grad[j] = static_cast<T>(static_cast<double>(scale) * (p - (static_cast<int>(j) == target ? 1.0 : 0.0)));
  }
}

// Like log_sum_exp, also keeping exp(row - max) in `e`; returns the lse.
template <typename T>
double log_sum_exp_keep(const T* row, std::size_t n, std::vector<double>& e) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
  e.resize(n);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = std::exp(static_cast<double>(row[j]) - static_cast<double>(mx));
    s += e[j];
  }
  return static_cast<double>(mx) + std::log(s);
}

void check_target(int target, std::size_t vocab) {
  if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
    throw LookupError("target word id out of range: " + std::to_string(target));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// CharCnn

std::size_t CharCnnShape::total_filters() const {
  std::size_t h = 0;
  for (std::size_t c : counts) h += c;
  return h;
}

template <typename T>
CharCnn<T>::CharCnn(CharCnnShape shape) : shape_(std::move(shape)) {
  if (shape_.widths.empty() || shape_.widths.size() != shape_.counts.size()) {
    throw ArgumentError("char CNN needs one filter count per width");
  }
  for (std::size_t i = 0; i < shape_.widths.size(); ++i) {
    if (shape_.widths[i] == 0 || shape_.counts[i] == 0) throw ArgumentError("filter widths and counts must be >= 1");
    if (i > 0 && shape_.widths[i] <= shape_.widths[i - 1]) {
      throw ArgumentError("filter widths must be strictly increasing");
    }
  }
  if (shape_.num_chars <= 1 || shape_.char_dim == 0) throw ArgumentError("char CNN needs characters and d >= 1");
  output_dim_ = shape_.total_filters();

  const std::size_t d = shape_.char_dim;
  embedding = Param<T>("cnn.char_embedding", {shape_.num_chars, d});
  embedding.frozen = d;
  for (std::size_t i = 0; i < shape_.widths.size(); ++i) {
    const std::size_t w = shape_.widths[i];
    filters.emplace_back("cnn.filter.w" + std::to_string(w), Shape{w, d, shape_.counts[i]});
    biases.emplace_back("cnn.bias.w" + std::to_string(w), Shape{shape_.counts[i]});
  }
}

template <typename T>
void CharCnn<T>::init(Rng& rng, double lo, double hi) {
  uniform_fill<T>(embedding.value.values(), lo, hi, rng);
  for (std::size_t k = 0; k < shape_.char_dim; ++k) embedding.value[k] = T{0};
  for (std::size_t i = 0; i < filters.size(); ++i) {
    uniform_fill<T>(filters[i].value.values(), lo, hi, rng);
    uniform_fill<T>(biases[i].value.values(), lo, hi, rng);
  }
}

namespace {

// Flattened windows of every word for one filter width, stacked: word b owns
// rows [first[b], first[b + 1]). Positions past a word's end read the zero
// padding embedding.
template <typename T>
std::vector<T> gather_windows(const std::vector<std::span<const int>>& words, const Tensor<T>& embedding,
                              std::size_t w, std::size_t d, std::vector<std::size_t>& first) {
  first.assign(1, 0);
  for (const auto& word : words) first.push_back(first.back() + std::max(word.size(), w) - w + 1);
  std::vector<T> windows(first.back() * w * d, T{0});
  for (std::size_t b = 0; b < words.size(); ++b) {
    const auto& word = words[b];
    for (std::size_t p = 0; p < first[b + 1] - first[b]; ++p) {
      T* dst = windows.data() + (first[b] + p) * w * d;
      for (std::size_t q = 0; q < w && p + q < word.size(); ++q) {
        const T* e = embedding.data() + static_cast<std::size_t>(word[p + q]) * d;
        std::copy(e, e + d, dst + q * d);
      }
    }
  }
  return windows;
}

}  // namespace

template <typename T>
Tensor<T> CharCnn<T>::forward(std::span<const std::span<const int>> words, Cache* cache) const {
  const std::size_t batch = words.size();
  if (batch == 0) throw ArgumentError("char CNN forward on an empty batch");
  const std::size_t d = shape_.char_dim;
  const std::size_t h = output_dim_;
  for (const auto& word : words) {
    if (word.empty()) throw ArgumentError("char CNN forward on an empty character sequence");
    for (int c : word) {
      if (c < 0 || static_cast<std::size_t>(c) >= shape_.num_chars) {
        throw LookupError("char id out of range: " + std::to_string(c));
      }
    }
  }
  const std::vector<std::span<const int>> list(words.begin(), words.end());
  Tensor<T> y({batch, h});
  std::vector<int> argmax(batch * h, 0);
  std::vector<std::size_t> first;
  std::vector<T> pre;

  std::size_t off = 0;
  for (std::size_t wi = 0; wi < shape_.widths.size(); ++wi) {
    const std::size_t w = shape_.widths[wi];
    const std::size_t count = shape_.counts[wi];
    const std::vector<T> windows = gather_windows(list, embedding.value, w, d, first);
    const std::size_t rows = first.back();
    pre.assign(rows * count, T{0});
    matmul_acc<T>({windows.data(), rows, w * d}, {filters[wi].value.data(), w * d, count}, {pre.data(), rows, count});
    const T* bias = biases[wi].value.data();
    for (std::size_t r = 0; r < rows; ++r) {
      T* row = pre.data() + r * count;
      for (std::size_t j = 0; j < count; ++j) row[j] += bias[j];
    }
    // tanh is increasing, so the max is taken over pre-activations (first
    // position wins ties) and only the winner goes through tanh.
    for (std::size_t b = 0; b < batch; ++b) {
      T* out = y.data() + b * h + off;
      int* arg = argmax.data() + b * h + off;
      const T* row0 = pre.data() + first[b] * count;
      std::copy(row0, row0 + count, out);
      for (std::size_t p = 1; p < first[b + 1] - first[b]; ++p) {
        const T* row = row0 + p * count;
        for (std::size_t j = 0; j < count; ++j) {
          if (row[j] > out[j]) {
            out[j] = row[j];
            arg[j] = static_cast<int>(p);
          }
        }
      }
      for (std::size_t j = 0; j < count; ++j) out[j] = std::tanh(out[j]);
    }
    off += count;
  }
  if (cache) {
    cache->words.clear();
    cache->words.reserve(batch);
    for (auto wspan : words) cache->words.emplace_back(wspan.begin(), wspan.end());
    cache->y = y;
    cache->argmax = std::move(argmax);
  }
  return y;
}

template <typename T>
void CharCnn<T>::backward(const Cache& cache, const Tensor<T>& dy) {
  const std::size_t batch = cache.words.size();
  const std::size_t d = shape_.char_dim;
  const std::size_t h = output_dim_;
  require_cols(dy, h, "char CNN backward");
  const std::vector<std::span<const int>> list(cache.words.begin(), cache.words.end());
  std::vector<std::size_t> first;
  std::size_t off = 0;
  for (std::size_t wi = 0; wi < shape_.widths.size(); ++wi) {
    const std::size_t w = shape_.widths[wi];
    const std::size_t count = shape_.counts[wi];
    const std::vector<T> windows = gather_windows(list, embedding.value, w, d, first);
    const std::size_t rows = first.back();
    // Gradient w.r.t. the pre-activations: nonzero only at each filter's argmax.
    std::vector<T> g(rows * count, T{0});
    T* dbias = biases[wi].grad.data();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < count; ++j) {
        const T out = cache.y.at(b, off + j);
        const T gj = dy.at(b, off + j) * (T{1} - out * out);
        const std::size_t p = static_cast<std::size_t>(cache.argmax[b * h + off + j]);
        g[(first[b] + p) * count + j] = gj;
        dbias[j] += gj;
      }
    }
    matmul_tn_acc<T>({windows.data(), rows, w * d}, {g.data(), rows, count},
                     {filters[wi].grad.data(), w * d, count});
    std::vector<T> dwin(rows * w * d, T{0});
    matmul_nt_acc<T>({g.data(), rows, count}, {filters[wi].value.data(), w * d, count}, {dwin.data(), rows, w * d});
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& word = cache.words[b];
      for (std::size_t p = 0; p < first[b + 1] - first[b]; ++p) {
        const T* src = dwin.data() + (first[b] + p) * w * d;
        for (std::size_t q = 0; q < w && p + q < word.size(); ++q) {
          const int c = word[p + q];
          if (c == kPadChar) continue;  // zero embedding, frozen
          T* de = embedding.grad.data() + static_cast<std::size_t>(c) * d;
          for (std::size_t k = 0; k < d; ++k) de[k] += src[q * d + k];
        }
      }
    }
    off += count;
  }
}

template <typename T>
std::vector<Param<T>*> CharCnn<T>::parameters() {
  std::vector<Param<T>*> out{&embedding};
  for (std::size_t i = 0; i < filters.size(); ++i) {
    out.push_back(&filters[i]);
    out.push_back(&biases[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Highway

template <typename T>
HighwayLayer<T>::HighwayLayer(std::size_t dim, Activation act, const std::string& prefix)
    : w_h(prefix + ".W_H", {dim, dim}),
      b_h(prefix + ".b_H", {dim}),
      w_t(prefix + ".W_T", {dim, dim}),
      b_t(prefix + ".b_T", {dim}),
      g(act),
      dim_(dim) {}

template <typename T>
void HighwayLayer<T>::init(Rng& rng, double lo, double hi, double gate_lo, double gate_hi) {
  uniform_fill<T>(w_h.value.values(), lo, hi, rng);
  uniform_fill<T>(b_h.value.values(), lo, hi, rng);
  uniform_fill<T>(w_t.value.values(), lo, hi, rng);
  uniform_fill<T>(b_t.value.values(), gate_lo, gate_hi, rng);
}

template <typename T>
Tensor<T> HighwayLayer<T>::forward(const Tensor<T>& y, Cache* cache) const {
  require_cols(y, dim_, "highway");
  const std::size_t batch = y.rows();
  Tensor<T> n({batch, dim_});
  Tensor<T> t({batch, dim_});
  matmul_acc<T>(as_matrix(y), as_matrix(w_h.value), as_matrix(n));
  matmul_acc<T>(as_matrix(y), as_matrix(w_t.value), as_matrix(t));
  add_row_bias(n, b_h.value);
  add_row_bias(t, b_t.value);
  Tensor<T> z({batch, dim_});
  for (std::size_t i = 0; i < z.size(); ++i) {
    n[i] = activate(g, n[i]);
    t[i] = sigmoid(t[i]);
    z[i] = t[i] * n[i] + (T{1} - t[i]) * y[i];
  }
  if (cache) {
    cache->y = y;
    cache->n = std::move(n);
    cache->t = std::move(t);
  }
  return z;
}

template <typename T>
Tensor<T> HighwayLayer<T>::backward(const Cache& cache, const Tensor<T>& dz) {
  require_cols(dz, dim_, "highway backward");
  const std::size_t batch = dz.rows();
  Tensor<T> da_h({batch, dim_});
  Tensor<T> da_t({batch, dim_});
  Tensor<T> dy({batch, dim_});
  for (std::size_t i = 0; i < dz.size(); ++i) {
    const T t = cache.t[i];
    const T n = cache.n[i];
    da_h[i] = dz[i] * t * activate_grad(g, n);
    da_t[i] = dz[i] * (n - cache.y[i]) * t * (T{1} - t);
    dy[i] = dz[i] * (T{1} - t);
  }
  matmul_tn_acc<T>(as_matrix(cache.y), as_matrix(da_h), as_matrix(w_h.grad));
  matmul_tn_acc<T>(as_matrix(cache.y), as_matrix(da_t), as_matrix(w_t.grad));
  accumulate_col_sums(da_h, b_h.grad);
  accumulate_col_sums(da_t, b_t.grad);
  matmul_nt_acc<T>(as_matrix(da_h), as_matrix(w_h.value), as_matrix(dy));
  matmul_nt_acc<T>(as_matrix(da_t), as_matrix(w_t.value), as_matrix(dy));
  return dy;
}

template <typename T>
std::vector<Param<T>*> HighwayLayer<T>::parameters() {
  return {&w_h, &b_h, &w_t, &b_t};
}

// ---------------------------------------------------------------------------
// MLP

template <typename T>
MlpLayer<T>::MlpLayer(std::size_t dim, Activation act, const std::string& prefix)
    : w(prefix + ".W", {dim, dim}), b(prefix + ".b", {dim}), g(act), dim_(dim) {}

template <typename T>
void MlpLayer<T>::init(Rng& rng, double lo, double hi) {
  uniform_fill<T>(w.value.values(), lo, hi, rng);
  uniform_fill<T>(b.value.values(), lo, hi, rng);
}

template <typename T>
Tensor<T> MlpLayer<T>::forward(const Tensor<T>& y, Cache* cache) const {
  require_cols(y, dim_, "mlp");
  Tensor<T> z({y.rows(), dim_});
  matmul_acc<T>(as_matrix(y), as_matrix(w.value), as_matrix(z));
  add_row_bias(z, b.value);
  for (T& v : z.values()) v = activate(g, v);
  if (cache) {
    cache->y = y;
    cache->z = z;
  }
  return z;
}

template <typename T>
Tensor<T> MlpLayer<T>::backward(const Cache& cache, const Tensor<T>& dz) {
  require_cols(dz, dim_, "mlp backward");
  Tensor<T> da({dz.rows(), dim_});
  for (std::size_t i = 0; i < dz.size(); ++i) da[i] = dz[i] * activate_grad(g, cache.z[i]);
  matmul_tn_acc<T>(as_matrix(cache.y), as_matrix(da), as_matrix(w.grad));
  accumulate_col_sums(da, b.grad);
  Tensor<T> dy({dz.rows(), dim_});
  matmul_nt_acc<T>(as_matrix(da), as_matrix(w.value), as_matrix(dy));
  return dy;
}

template <typename T>
std::vector<Param<T>*> MlpLayer<T>::parameters() {
  return {&w, &b};
}

// ---------------------------------------------------------------------------
// LSTM

template <typename T>
LstmLayer<T>::LstmLayer(std::size_t input_dim, std::size_t hidden, const std::string& prefix)
    : w(prefix + ".W", {input_dim, 4 * hidden}),
      u(prefix + ".U", {hidden, 4 * hidden}),
      b(prefix + ".b", {4 * hidden}),
      input_dim_(input_dim),
      hidden_(hidden) {}

template <typename T>
void LstmLayer<T>::init(Rng& rng, double lo, double hi) {
  uniform_fill<T>(w.value.values(), lo, hi, rng);
  uniform_fill<T>(u.value.values(), lo, hi, rng);
  uniform_fill<T>(b.value.values(), lo, hi, rng);
}

template <typename T>
LstmState<T> LstmLayer<T>::step(const Tensor<T>& x, const LstmState<T>& prev, Cache* cache) const {
  require_cols(x, input_dim_, "lstm input");
  require_cols(prev.h, hidden_, "lstm h");
  require_cols(prev.c, hidden_, "lstm c");
  const std::size_t batch = x.rows();
  if (prev.h.rows() != batch || prev.c.rows() != batch) {
    throw ShapeError("lstm state batch " + std::to_string(prev.h.rows()) + " does not match input batch " +
                     std::to_string(batch));
  }
  const std::size_t m = hidden_;
  Tensor<T> a({batch, 4 * m});
  matmul_acc<T>(as_matrix(x), as_matrix(w.value), as_matrix(a));
  matmul_acc<T>(as_matrix(prev.h), as_matrix(u.value), as_matrix(a));
  add_row_bias(a, b.value);

  LstmState<T> next = LstmState<T>::zeros(batch, m);
  Tensor<T> tanh_c({batch, m});
  for (std::size_t r = 0; r < batch; ++r) {
    T* ar = a.data() + r * 4 * m;
    for (std::size_t k = 0; k < m; ++k) {
      const T i = sigmoid(ar[k]);
      const T f = sigmoid(ar[m + k]);
      const T o = sigmoid(ar[2 * m + k]);
      const T g = std::tanh(ar[3 * m + k]);
      ar[k] = i;
      ar[m + k] = f;
      ar[2 * m + k] = o;
      ar[3 * m + k] = g;
      const T c = f * prev.c.at(r, k) + i * g;
      const T tc = std::tanh(c);
      next.c.at(r, k) = c;
      next.h.at(r, k) = o * tc;
      tanh_c.at(r, k) = tc;
    }
  }
  if (cache) {
    cache->x = x;
    cache->h_prev = prev.h;
    cache->c_prev = prev.c;
    cache->gates = std::move(a);
    cache->tanh_c = std::move(tanh_c);
  }
  return next;
}

template <typename T>
void LstmLayer<T>::backward(const Cache& cache, const Tensor<T>& dh, const Tensor<T>& dc, Tensor<T>& dx,
                            Tensor<T>& dh_prev, Tensor<T>& dc_prev) {
  const std::size_t batch = cache.x.rows();
  const std::size_t m = hidden_;
  require_cols(dh, m, "lstm backward dh");
  require_cols(dc, m, "lstm backward dc");
  Tensor<T> da({batch, 4 * m});
  dc_prev = Tensor<T>({batch, m});
  for (std::size_t r = 0; r < batch; ++r) {
    const T* gr = cache.gates.data() + r * 4 * m;
    T* dar = da.data() + r * 4 * m;
    for (std::size_t k = 0; k < m; ++k) {
      const T i = gr[k], f = gr[m + k], o = gr[2 * m + k], g = gr[3 * m + k];
      const T tc = cache.tanh_c.at(r, k);
      const T dhk = dh.at(r, k);
      const T dct = dc.at(r, k) + dhk * o * (T{1} - tc * tc);
      dar[k] = dct * g * i * (T{1} - i);
      dar[m + k] = dct * cache.c_prev.at(r, k) * f * (T{1} - f);
      dar[2 * m + k] = dhk * tc * o * (T{1} - o);
      dar[3 * m + k] = dct * i * (T{1} - g * g);
      dc_prev.at(r, k) = dct * f;
    }
  }
  matmul_tn_acc<T>(as_matrix(cache.x), as_matrix(da), as_matrix(w.grad));
  matmul_tn_acc<T>(as_matrix(cache.h_prev), as_matrix(da), as_matrix(u.grad));
  accumulate_col_sums(da, b.grad);
  dx = Tensor<T>({batch, input_dim_});
  dh_prev = Tensor<T>({batch, m});
  matmul_nt_acc<T>(as_matrix(da), as_matrix(w.value), as_matrix(dx));
  matmul_nt_acc<T>(as_matrix(da), as_matrix(u.value), as_matrix(dh_prev));
}

template <typename T>
std::vector<Param<T>*> LstmLayer<T>::parameters() {
  return {&w, &u, &b};
}

// ---------------------------------------------------------------------------
// dropout

template <typename T>
Tensor<T> dropout_apply(const Tensor<T>& x, double p, Mode mode, Rng& rng, Tensor<T>* mask) {
  if (!(p >= 0.0 && p < 1.0)) throw ArgumentError("dropout probability must be in [0, 1)");
  if (mode == Mode::eval || p == 0.0) {
    if (mask) *mask = Tensor<T>(x.shape(), T{1});
    return x;
  }
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> m(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = rng.uniform() < p ? T{0} : keep;
    out[i] = x[i] * m[i];
  }
  if (mask) *mask = std::move(m);
  return out;
}

// ---------------------------------------------------------------------------
// softmax output

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& logits) {
  Tensor<T> out = logits;
  const std::size_t n = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const T* row = logits.data() + r * n;
    const double lse = log_sum_exp(row, n);
    for (std::size_t j = 0; j < n; ++j) out.at(r, j) = static_cast<T>(static_cast<double>(row[j]) - lse);
  }
  return out;
}

template <typename T>
SoftmaxOutput<T>::SoftmaxOutput(std::size_t hidden, std::size_t vocab)
    : p("softmax.P", {hidden, vocab}), q("softmax.q", {vocab}), hidden_(hidden), vocab_(vocab) {}

template <typename T>
void SoftmaxOutput<T>::init(Rng& rng, double lo, double hi) {
  uniform_fill<T>(p.value.values(), lo, hi, rng);
  uniform_fill<T>(q.value.values(), lo, hi, rng);
}

template <typename T>
Tensor<T> SoftmaxOutput<T>::log_probs(const Tensor<T>& h) const {
  require_cols(h, hidden_, "softmax input");
  Tensor<T> logits({h.rows(), vocab_});
  matmul_acc<T>(as_matrix(h), as_matrix(p.value), as_matrix(logits));
  add_row_bias(logits, q.value);
  return log_softmax_rows(logits);
}

template <typename T>
double SoftmaxOutput<T>::loss(const Tensor<T>& h, std::span<const int> targets, T scale, Tensor<T>* dh) {
  require_cols(h, hidden_, "softmax input");
  const std::size_t batch = h.rows();
  if (targets.size() != batch) throw ShapeError("softmax: one target per row required");
  Tensor<T> logits({batch, vocab_});
  matmul_acc<T>(as_matrix(h), as_matrix(p.value), as_matrix(logits));
  add_row_bias(logits, q.value);
  double nll = 0.0;
  std::vector<double> e;
  for (std::size_t r = 0; r < batch; ++r) {
    check_target(targets[r], vocab_);
    T* row = logits.data() + r * vocab_;
    const double lse = log_sum_exp_keep(row, vocab_, e);
    nll += lse - static_cast<double>(row[targets[r]]);
    if (dh) {
      // row now holds dlogits
      double sum = 0.0;
      for (double v : e) sum += v;
      for (std::size_t j = 0; j < vocab_; ++j) {
        const double pj = e[j] / sum - (static_cast<int>(j) == targets[r] ? 1.0 : 0.0);
        row[j] = static_cast<T>(static_cast<double>(scale) * pj);
      }
    }
  }
  if (dh) {
    matmul_tn_acc<T>(as_matrix(h), as_matrix(logits), as_matrix(p.grad));
    accumulate_col_sums(logits, q.grad);
    *dh = Tensor<T>({batch, hidden_});
    matmul_nt_acc<T>(as_matrix(logits), as_matrix(p.value), as_matrix(*dh));
  }
  return nll;
}

template <typename T>
std::vector<Param<T>*> SoftmaxOutput<T>::parameters() {
  return {&p, &q};
}

// ---------------------------------------------------------------------------
// hierarchical softmax

std::size_t default_cluster_count(std::size_t vocab) {
  std::size_t c = static_cast<std::size_t>(std::sqrt(static_cast<double>(vocab)));
  while (c * c < vocab) ++c;
  while (c > 1 && (c - 1) * (c - 1) >= vocab) --c;
  return std::max<std::size_t>(c, 1);
}

ClusterAssignment ClusterAssignment::random(std::size_t vocab, Rng& rng, std::size_t clusters) {
  if (vocab == 0) throw ArgumentError("cannot cluster an empty vocabulary");
  std::size_t c = clusters > 0 ? clusters : default_cluster_count(vocab);
  c = std::min(c, vocab);
  std::vector<int> perm(vocab);
  for (std::size_t i = 0; i < vocab; ++i) perm[i] = static_cast<int>(i);
  for (std::size_t i = vocab - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  std::vector<std::vector<int>> members(c);
  for (std::size_t i = 0; i < vocab; ++i) members[i % c].push_back(perm[i]);
  return from_members(std::move(members), vocab);
}

ClusterAssignment ClusterAssignment::from_members(std::vector<std::vector<int>> members, std::size_t vocab) {
  ClusterAssignment a;
  a.cluster_of.assign(vocab, -1);
  a.slot_of.assign(vocab, -1);
  for (std::size_t r = 0; r < members.size(); ++r) {
    if (members[r].empty()) throw ArgumentError("empty cluster in assignment");
    for (std::size_t s = 0; s < members[r].size(); ++s) {
      const int w = members[r][s];
      if (w < 0 || static_cast<std::size_t>(w) >= vocab || a.cluster_of[static_cast<std::size_t>(w)] != -1) {
        throw ArgumentError("cluster assignment is not a partition of the vocabulary");
      }
      a.cluster_of[static_cast<std::size_t>(w)] = static_cast<int>(r);
      a.slot_of[static_cast<std::size_t>(w)] = static_cast<int>(s);
    }
  }
  for (int c : a.cluster_of)
    if (c < 0) throw ArgumentError("cluster assignment does not cover the vocabulary");
  a.members = std::move(members);
  return a;
}

template <typename T>
HierSoftmaxOutput<T>::HierSoftmaxOutput(std::size_t hidden, ClusterAssignment clusters)
    : s("hsm.S", {hidden, clusters.num_clusters()}),
      t("hsm.t", {clusters.num_clusters()}),
      hidden_(hidden),
      clusters_(std::move(clusters)) {
  for (std::size_t r = 0; r < clusters_.num_clusters(); ++r) {
    p.emplace_back("hsm.P." + std::to_string(r), Shape{hidden, clusters_.members[r].size()});
    q.emplace_back("hsm.q." + std::to_string(r), Shape{clusters_.members[r].size()});
  }
}

template <typename T>
void HierSoftmaxOutput<T>::init(Rng& rng, double lo, double hi) {
  uniform_fill<T>(s.value.values(), lo, hi, rng);
  uniform_fill<T>(t.value.values(), lo, hi, rng);
  for (std::size_t r = 0; r < p.size(); ++r) {
    uniform_fill<T>(p[r].value.values(), lo, hi, rng);
    uniform_fill<T>(q[r].value.values(), lo, hi, rng);
  }
}

template <typename T>
double HierSoftmaxOutput<T>::log_prob(std::span<const T> h, int word) const {
  check_target(word, vocab_size());
  if (h.size() != hidden_) throw ShapeError("hierarchical softmax: hidden size mismatch");
  const std::size_t c = clusters_.num_clusters();
  const auto r = static_cast<std::size_t>(clusters_.cluster_of[static_cast<std::size_t>(word)]);
  const auto slot = static_cast<std::size_t>(clusters_.slot_of[static_cast<std::size_t>(word)]);
  std::vector<T> cl(t.value.values().begin(), t.value.values().end());
  matmul_acc<T>(row_ref(h), as_matrix(s.value), {cl.data(), 1, c});
  const std::size_t n = clusters_.members[r].size();
  std::vector<T> inner(q[r].value.values().begin(), q[r].value.values().end());
  matmul_acc<T>(row_ref(h), as_matrix(p[r].value), {inner.data(), 1, n});
  return (static_cast<double>(cl[r]) - log_sum_exp(cl.data(), c)) +
         (static_cast<double>(inner[slot]) - log_sum_exp(inner.data(), n));
}

template <typename T>
Tensor<T> HierSoftmaxOutput<T>::log_probs(const Tensor<T>& h) const {
  require_cols(h, hidden_, "hierarchical softmax input");
  const std::size_t batch = h.rows();
  const std::size_t c = clusters_.num_clusters();
  Tensor<T> out({batch, vocab_size()});
  std::vector<T> cl(c);
  std::vector<T> inner;
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(t.value.data(), t.value.data() + c, cl.begin());
    matmul_acc<T>(row_ref(h.row(b)), as_matrix(s.value), {cl.data(), 1, c});
    const double lse_c = log_sum_exp(cl.data(), c);
    for (std::size_t r = 0; r < c; ++r) {
      const auto& members = clusters_.members[r];
      inner.assign(q[r].value.values().begin(), q[r].value.values().end());
      matmul_acc<T>(row_ref(h.row(b)), as_matrix(p[r].value), {inner.data(), 1, members.size()});
      const double lse = log_sum_exp(inner.data(), members.size());
      const double lc = static_cast<double>(cl[r]) - lse_c;
      for (std::size_t k = 0; k < members.size(); ++k) {
        out.at(b, static_cast<std::size_t>(members[k])) = static_cast<T>(lc + static_cast<double>(inner[k]) - lse);
      }
    }
  }
  return out;
}

template <typename T>
double HierSoftmaxOutput<T>::loss(const Tensor<T>& h, std::span<const int> targets, T scale, Tensor<T>* dh) {
  require_cols(h, hidden_, "hierarchical softmax input");
  const std::size_t batch = h.rows();
  if (targets.size() != batch) throw ShapeError("hierarchical softmax: one target per row required");
  const std::size_t c = clusters_.num_clusters();
  Tensor<T> cl({batch, c});
  matmul_acc<T>(as_matrix(h), as_matrix(s.value), as_matrix(cl));
  add_row_bias(cl, t.value);
  if (dh) *dh = Tensor<T>({batch, hidden_});
  double nll = 0.0;
  std::vector<T> inner;
  for (std::size_t b = 0; b < batch; ++b) {
    const int target = targets[b];
    check_target(target, vocab_size());
    const auto r = static_cast<std::size_t>(clusters_.cluster_of[static_cast<std::size_t>(target)]);
    const int slot = clusters_.slot_of[static_cast<std::size_t>(target)];
    T* crow = cl.data() + b * c;
    const double lse_c = log_sum_exp(crow, c);
    nll += lse_c - static_cast<double>(crow[r]);

    const std::size_t n = clusters_.members[r].size();
    inner.assign(q[r].value.values().begin(), q[r].value.values().end());
    const MatrixRef<const T> hrow = row_ref(h.row(b));
    matmul_acc<T>(hrow, as_matrix(p[r].value), {inner.data(), 1, n});
    const double lse = log_sum_exp(inner.data(), n);
    nll += lse - static_cast<double>(inner[static_cast<std::size_t>(slot)]);

    if (dh) {
      softmax_grad(crow, c, lse_c, static_cast<int>(r), scale, crow);
      softmax_grad(inner.data(), n, lse, slot, scale, inner.data());
      const MatrixRef<const T> dinner{inner.data(), 1, n};
      matmul_tn_acc<T>(hrow, dinner, as_matrix(p[r].grad));
      for (std::size_t k = 0; k < n; ++k) q[r].grad[k] += inner[k];
      matmul_nt_acc<T>(dinner, as_matrix(p[r].value), {dh->data() + b * hidden_, 1, hidden_});
    }
  }
  if (dh) {
    matmul_tn_acc<T>(as_matrix(h), as_matrix(cl), as_matrix(s.grad));
    accumulate_col_sums(cl, t.grad);
    matmul_nt_acc<T>(as_matrix(cl), as_matrix(s.value), as_matrix(*dh));
  }
  return nll;
}

template <typename T>
std::vector<Param<T>*> HierSoftmaxOutput<T>::parameters() {
  std::vector<Param<T>*> out{&s, &t};
  for (std::size_t r = 0; r < p.size(); ++r) {
    out.push_back(&p[r]);
    out.push_back(&q[r]);
  }
  return out;
}

#define CHARLM_INSTANTIATE(T)                                                                      \
  template class CharCnn<T>;                                                                       \
  template class HighwayLayer<T>;                                                                  \
  template class MlpLayer<T>;                                                                      \
  template class LstmLayer<T>;                                                                     \
  template class SoftmaxOutput<T>;                                                                 \
  template class HierSoftmaxOutput<T>;                                                             \
  template Tensor<T> dropout_apply<T>(const Tensor<T>&, double, Mode, Rng&, Tensor<T>*);           \
  template Tensor<T> log_softmax_rows<T>(const Tensor<T>&);

CHARLM_INSTANTIATE(float)
CHARLM_INSTANTIATE(double)

#undef CHARLM_INSTANTIATE

}  // namespace charlm
