#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "charlm/corpus.hpp"
#include "charlm/layers.hpp"
#include "charlm/tensor.hpp"

namespace charlm {

enum class InputMode { chars, words, morphs };
enum class FeatureTransform { highway, mlp, none };
enum class OutputKind { softmax, hierarchical };

InputMode parse_input_mode(const std::string& s);
std::string to_string(InputMode m);
FeatureTransform parse_transform(const std::string& s);
std::string to_string(FeatureTransform f);
OutputKind parse_output(const std::string& s);
std::string to_string(OutputKind o);

struct ModelConfig {
  InputMode input = InputMode::chars;
  std::string preset = "small";  // small | large | custom

  // character model
  std::size_t char_dim = 15;
  std::vector<std::size_t> widths{1, 2, 3, 4, 5, 6};
  std::vector<std::size_t> filter_counts{25, 50, 75, 100, 125, 150};
  FeatureTransform transform = FeatureTransform::highway;
  std::size_t highway_layers = 1;
  Activation transform_activation = Activation::relu;
  std::size_t max_word_len = 0;  // 0: longest vocabulary word + 2

  // word and morpheme models
  std::size_t word_dim = 200;

  std::size_t lstm_layers = 2;
  std::size_t hidden = 300;
  OutputKind output = OutputKind::softmax;
  std::size_t clusters = 0;  // 0: ceil(sqrt(|V|))
  double dropout = 0.5;
  std::uint64_t seed = 1;

  double init_range = 0.05;
  double gate_bias_lo = -2.25;
  double gate_bias_hi = -1.75;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Architecture presets. Character models: d=15, small uses widths 1..6 with
/// 25*w filters, one highway layer and m=300; large uses widths 1..7 with
/// min(200, 50*w) filters, two highway layers and m=650. Word and morpheme
/// models use embeddings and hidden size 200 (small) or 650 (large). All use
/// two LSTM layers.
ModelConfig preset_config(InputMode input, const std::string& preset);

/// Everything the model needs from the corpus side.
struct Lexicon {
  WordVocab words;
  CharVocab chars;
  MorphTable morphs;  // morph mode only
};

/// Which representation input_repr returns: the CharCNN output, or the value
/// fed to the first LSTM layer (after highway / MLP).
enum class ReprStage { pre_transform, post_transform };

struct WindowResult {
  double nll = 0.0;
  std::size_t tokens = 0;
};

/// Word-level LSTM language model with a character, word or morpheme input
/// representation.
template <typename T>
class Model {
 public:
  using State = std::vector<LstmState<T>>;

  struct InputCache {
    std::vector<int> ids;
    typename CharCnn<T>::Cache cnn;
    std::vector<typename HighwayLayer<T>::Cache> highway;
    typename MlpLayer<T>::Cache mlp;
  };

  /// Allocates zeroed parameters. Most callers want create().
  Model(ModelConfig config, Lexicon lexicon, std::optional<ClusterAssignment> clusters = std::nullopt);

  /// Builds and randomly initializes a model. Draws the hierarchical-softmax
  /// clusters first, then every parameter uniform in [-init_range,
  /// init_range), except highway transform-gate biases which are drawn from
  /// [gate_bias_lo, gate_bias_hi).
  static Model create(ModelConfig config, Lexicon lexicon);

  const ModelConfig& config() const noexcept { return config_; }
  const Lexicon& lexicon() const noexcept { return lexicon_; }
  const CharTable& char_table() const noexcept { return char_table_; }
  std::size_t vocab_size() const noexcept { return lexicon_.words.size(); }
  /// Dimension of the LSTM input.
  std::size_t repr_dim() const noexcept;
  std::size_t cnn_dim() const noexcept { return cnn.output_dim(); }

  State initial_state(std::size_t batch) const;

  Tensor<T> input_repr(std::span<const int> ids, ReprStage stage = ReprStage::post_transform) const;
  /// Runs raw char-id sequences (boundaries included where wanted) through
  /// the character encoder.
  Tensor<T> encode_char_sequences(std::span<const std::span<const int>> seqs,
                                  ReprStage stage = ReprStage::post_transform) const;
  Tensor<T> transform(const Tensor<T>& y) const;

  /// One time step: log-distribution over the next word [B x |V|].
  Tensor<T> forward_step(std::span<const int> ids, State& state, Mode mode);

  /// NLL summed over the window. With `backprop`, accumulates gradients of
  /// (NLL / batch) into the parameter registry.
  WindowResult run_window(const Window& window, State& state, Mode mode, bool backprop);

  /// Ordered registry of every trainable tensor.
  std::vector<Param<T>*> parameters();
  std::vector<const Param<T>*> parameters() const;
  std::size_t param_count() const;
  void zero_grads();

  Rng& rng() noexcept { return rng_; }
  const Rng& rng() const noexcept { return rng_; }

  /// Replaces the character encoder by a precomputed [|V| x repr_dim] table.
  void set_repr_lookup(Tensor<T> table);
  void clear_repr_lookup() { repr_lookup_.reset(); }
  bool has_repr_lookup() const noexcept { return repr_lookup_.has_value(); }

  const std::optional<ClusterAssignment>& clusters() const noexcept { return clusters_; }

  CharCnn<T> cnn;
  std::vector<HighwayLayer<T>> highways;
  std::vector<MlpLayer<T>> mlps;
  Param<T> word_embedding;   // [|V| x n], word and morph modes
  Param<T> morph_embedding;  // [|M| x n], morph mode
  std::vector<LstmLayer<T>> lstm;
  std::optional<SoftmaxOutput<T>> softmax;
  std::optional<HierSoftmaxOutput<T>> hier;

 private:
  Tensor<T> input_forward(std::span<const int> ids, InputCache* cache) const;
  void input_backward(const InputCache& cache, const Tensor<T>& dx);
  void init_parameters();

  ModelConfig config_;
  Lexicon lexicon_;
  CharTable char_table_;
  std::optional<ClusterAssignment> clusters_;
  std::optional<Tensor<T>> repr_lookup_;
  Rng rng_;
};

/// NLL of a window without gradients (eval mode unless given).
template <typename T>
WindowResult sequence_nll(Model<T>& model, const Window& window, typename Model<T>::State& state,
                          Mode mode = Mode::eval);

/// Closed-form trainable-scalar count for a configuration.
std::size_t analytic_param_count(const ModelConfig& config, std::size_t vocab, std::size_t num_chars,
                                 std::size_t num_morphemes = 0);

}  // namespace charlm
