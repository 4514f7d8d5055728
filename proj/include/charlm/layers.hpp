#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "charlm/tensor.hpp"

namespace charlm {

/// A trainable tensor and its gradient buffer. `frozen` counts scalars that
/// never receive gradient (excluded from parameter counts).
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  std::size_t frozen = 0;

  Param() = default;
  Param(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(std::move(shape)) {}
};

enum class Mode { train, eval };
enum class Activation { relu, tanh };

Activation parse_activation(const std::string& name);
std::string to_string(Activation g);

// ---------------------------------------------------------------------------
// character CNN

struct CharCnnShape {
  std::size_t num_chars = 0;
  std::size_t char_dim = 15;
  std::vector<std::size_t> widths;
  std::vector<std::size_t> counts;  // filters per width

  std::size_t total_filters() const;
};

/// Character embeddings, narrow convolutions and max-over-time pooling.
///
/// Embeddings are stored one row per character ([|C| x d]); row 0 is the
/// padding character, fixed at zero. Filters of width w are stored as
/// [w x d x count_w], i.e. a (w*d) x count_w matrix applied to flattened
/// windows. Output features are ordered by ascending width, then filter.
///
/// Only positions whose window lies inside the word's true length take part
/// in the max, so trailing padding never changes the result. A word shorter
/// than a filter is extended with padding characters to give exactly one
/// position for that filter.
template <typename T>
class CharCnn {
 public:
  struct Cache {
    std::vector<std::vector<int>> words;
    Tensor<T> y;                // pooled features [B x h]
    std::vector<int> argmax;    // [B x h] window start per feature
  };

  CharCnn() = default;
  explicit CharCnn(CharCnnShape shape);

  void init(Rng& rng, double lo, double hi);

  const CharCnnShape& shape() const noexcept { return shape_; }
  std::size_t output_dim() const noexcept { return output_dim_; }

  /// `words` holds the char ids of each word (its true length, boundaries
  /// included).
  Tensor<T> forward(std::span<const std::span<const int>> words, Cache* cache = nullptr) const;
  void backward(const Cache& cache, const Tensor<T>& dy);

  std::vector<Param<T>*> parameters();

  Param<T> embedding;
  std::vector<Param<T>> filters;
  std::vector<Param<T>> biases;

 private:
  CharCnnShape shape_;
  std::size_t output_dim_ = 0;
};

// ---------------------------------------------------------------------------
// highway and MLP

/// z = t * g(y W_H + b_H) + (1 - t) * y,  t = sigmoid(y W_T + b_T)
template <typename T>
class HighwayLayer {
 public:
  struct Cache {
    Tensor<T> y, n, t;
  };

  HighwayLayer() = default;
  HighwayLayer(std::size_t dim, Activation g, const std::string& prefix);

  void init(Rng& rng, double lo, double hi, double gate_lo, double gate_hi);
  std::size_t dim() const noexcept { return dim_; }
  Tensor<T> forward(const Tensor<T>& y, Cache* cache = nullptr) const;
  Tensor<T> backward(const Cache& cache, const Tensor<T>& dz);
  std::vector<Param<T>*> parameters();

  Param<T> w_h, b_h, w_t, b_t;
  Activation g = Activation::relu;

 private:
  std::size_t dim_ = 0;
};

/// z = g(y W + b), square W.
template <typename T>
class MlpLayer {
 public:
  struct Cache {
    Tensor<T> y, z;
  };

  MlpLayer() = default;
  MlpLayer(std::size_t dim, Activation g, const std::string& prefix);

  void init(Rng& rng, double lo, double hi);
  std::size_t dim() const noexcept { return dim_; }
  Tensor<T> forward(const Tensor<T>& y, Cache* cache = nullptr) const;
  Tensor<T> backward(const Cache& cache, const Tensor<T>& dz);
  std::vector<Param<T>*> parameters();

  Param<T> w, b;
  Activation g = Activation::relu;

 private:
  std::size_t dim_ = 0;
};

// ---------------------------------------------------------------------------
// LSTM

template <typename T>
struct LstmState {
  Tensor<T> h;  // [B x m]
  Tensor<T> c;  // [B x m]

  static LstmState zeros(std::size_t batch, std::size_t hidden) {
    return {Tensor<T>({batch, hidden}), Tensor<T>({batch, hidden})};
  }
};

/// One LSTM layer. The four gates are stored fused, in the order input,
/// forget, output, candidate: W [n_in x 4m], U [m x 4m], b [4m].
template <typename T>
class LstmLayer {
 public:
  struct Cache {
    Tensor<T> x, h_prev, c_prev;
    Tensor<T> gates;   // activated i, f, o, g  [B x 4m]
    Tensor<T> tanh_c;  // [B x m]
  };

  LstmLayer() = default;
  LstmLayer(std::size_t input_dim, std::size_t hidden, const std::string& prefix);

  void init(Rng& rng, double lo, double hi);
  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t hidden() const noexcept { return hidden_; }

  LstmState<T> step(const Tensor<T>& x, const LstmState<T>& prev, Cache* cache = nullptr) const;

  /// Backpropagates one step. `dh` and `dc` are the gradients reaching h_t and
  /// c_t; outputs the gradients for x_t, h_{t-1} and c_{t-1}.
  void backward(const Cache& cache, const Tensor<T>& dh, const Tensor<T>& dc, Tensor<T>& dx,
                Tensor<T>& dh_prev, Tensor<T>& dc_prev);

  std::vector<Param<T>*> parameters();

  Param<T> w, u, b;

 private:
  std::size_t input_dim_ = 0;
  std::size_t hidden_ = 0;
};

// ---------------------------------------------------------------------------
// dropout

/// Inverted dropout: in train mode each element is zeroed with probability p
/// and survivors are scaled by 1/(1-p); eval mode is the identity. When `mask`
/// is given it receives the per-element multipliers (for backward).
template <typename T>
Tensor<T> dropout_apply(const Tensor<T>& x, double p, Mode mode, Rng& rng, Tensor<T>* mask = nullptr);

// ---------------------------------------------------------------------------
// output layers

/// Row-wise numerically stable log-softmax.
template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& logits);

/// Full softmax over the word vocabulary: P [m x |V|], q [|V|].
template <typename T>
class SoftmaxOutput {
 public:
  SoftmaxOutput() = default;
  SoftmaxOutput(std::size_t hidden, std::size_t vocab);

  void init(Rng& rng, double lo, double hi);
  std::size_t vocab_size() const noexcept { return vocab_; }

  Tensor<T> log_probs(const Tensor<T>& h) const;

  /// Sum over rows of -log Pr(target). With `dh` non-null, also accumulates
  /// parameter gradients of `scale` * loss and writes dLoss/dh (scaled).
  double loss(const Tensor<T>& h, std::span<const int> targets, T scale = T{1}, Tensor<T>* dh = nullptr);

  std::vector<Param<T>*> parameters();

  Param<T> p, q;

 private:
  std::size_t hidden_ = 0;
  std::size_t vocab_ = 0;
};

/// Random partition of the vocabulary into clusters of near-equal size.
struct ClusterAssignment {
  std::vector<int> cluster_of;                // word -> cluster
  std::vector<int> slot_of;                   // word -> index within its cluster
  std::vector<std::vector<int>> members;      // cluster -> words

  std::size_t num_clusters() const noexcept { return members.size(); }

  /// ceil(sqrt(vocab)) clusters unless `clusters` > 0.
  static ClusterAssignment random(std::size_t vocab, Rng& rng, std::size_t clusters = 0);
  static ClusterAssignment from_members(std::vector<std::vector<int>> members, std::size_t vocab);
};

std::size_t default_cluster_count(std::size_t vocab);

/// Two-level softmax: Pr(w) = Pr(cluster r(w)) * Pr(w | r(w)). Cluster scores
/// use S [m x c], t [c]; cluster r has its own P_r [m x |V_r|], q_r [|V_r|].
template <typename T>
class HierSoftmaxOutput {
 public:
  HierSoftmaxOutput() = default;
  HierSoftmaxOutput(std::size_t hidden, ClusterAssignment clusters);

  void init(Rng& rng, double lo, double hi);
  std::size_t vocab_size() const noexcept { return clusters_.cluster_of.size(); }
  const ClusterAssignment& clusters() const noexcept { return clusters_; }

  /// log Pr(word) for one hidden row; evaluates only the word's own cluster.
  double log_prob(std::span<const T> h, int word) const;
  /// Full distribution [B x |V|].
  Tensor<T> log_probs(const Tensor<T>& h) const;
  double loss(const Tensor<T>& h, std::span<const int> targets, T scale = T{1}, Tensor<T>* dh = nullptr);

  std::vector<Param<T>*> parameters();

  Param<T> s, t;
  std::vector<Param<T>> p, q;

 private:
  std::size_t hidden_ = 0;
  ClusterAssignment clusters_;
};

}  // namespace charlm
