#include "charlm/model.hpp"

#include <algorithm>
#include <cmath>

namespace charlm {

InputMode parse_input_mode(const std::string& s) {
  if (s == "char") return InputMode::chars;
  if (s == "word") return InputMode::words;
  if (s == "morph") return InputMode::morphs;
  throw ConfigError("unknown input mode: " + s + " (expected char, word or morph)");
}

std::string to_string(InputMode m) {
  switch (m) {
    case InputMode::chars: return "char";
    case InputMode::words: return "word";
    case InputMode::morphs: return "morph";
  }
  return "?";
}

FeatureTransform parse_transform(const std::string& s) {
  if (s == "highway") return FeatureTransform::highway;
  if (s == "mlp") return FeatureTransform::mlp;
  if (s == "none") return FeatureTransform::none;
  throw ConfigError("unknown feature transform: " + s);
}

std::string to_string(FeatureTransform f) {
  switch (f) {
    case FeatureTransform::highway: return "highway";
    case FeatureTransform::mlp: return "mlp";
    case FeatureTransform::none: return "none";
  }
  return "?";
}

OutputKind parse_output(const std::string& s) {
  if (s == "softmax") return OutputKind::softmax;
  if (s == "hierarchical") return OutputKind::hierarchical;
  throw ConfigError("unknown output layer: " + s);
}

std::string to_string(OutputKind o) { return o == OutputKind::softmax ? "softmax" : "hierarchical"; }

void ModelConfig::validate() const {
  if (lstm_layers == 0 || hidden == 0) throw ConfigError("LSTM needs at least one layer and one hidden unit");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (!(init_range > 0.0)) throw ConfigError("init_range must be positive");
  if (!(gate_bias_lo < gate_bias_hi)) throw ConfigError("gate bias interval is empty");
  if (input == InputMode::chars) {
    if (char_dim == 0) throw ConfigError("char_dim must be positive");
    if (widths.empty() || widths.size() != filter_counts.size()) {
      throw ConfigError("filter widths and filter counts must have the same, non-zero length");
    }
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (widths[i] == 0 || filter_counts[i] == 0) throw ConfigError("filter widths and counts must be >= 1");
      if (i > 0 && widths[i] <= widths[i - 1]) throw ConfigError("filter widths must be strictly increasing");
    }
    if (transform == FeatureTransform::highway && highway_layers == 0) {
      throw ConfigError("highway transform needs at least one layer (use transform none)");
    }
    if (max_word_len != 0 && max_word_len < 3) throw ConfigError("max_word_len must be >= 3");
  } else if (word_dim == 0) {
    throw ConfigError("word_dim must be positive");
  }
}

ModelConfig preset_config(InputMode input, const std::string& preset) {
  ModelConfig c;
  c.input = input;
  c.preset = preset;
  if (preset == "small") {
    c.widths = {1, 2, 3, 4, 5, 6};
    c.filter_counts.clear();
    for (std::size_t w : c.widths) c.filter_counts.push_back(25 * w);
    c.highway_layers = 1;
    c.hidden = input == InputMode::chars ? 300 : 200;
    c.word_dim = 200;
  } else if (preset == "large") {
    c.widths = {1, 2, 3, 4, 5, 6, 7};
    c.filter_counts.clear();
    for (std::size_t w : c.widths) c.filter_counts.push_back(std::min<std::size_t>(200, 50 * w));
    c.highway_layers = 2;
    c.hidden = 650;
    c.word_dim = 650;
  } else if (preset != "custom") {
    throw ConfigError("unknown preset: " + preset + " (expected small, large or custom)");
  }
  c.char_dim = 15;
  c.lstm_layers = 2;
  c.transform = FeatureTransform::highway;
  c.transform_activation = Activation::relu;
  return c;
}

std::size_t analytic_param_count(const ModelConfig& c, std::size_t vocab, std::size_t num_chars,
                                 std::size_t num_morphemes) {
  std::size_t total = 0;
  std::size_t repr = 0;
  if (c.input == InputMode::chars) {
    total += (num_chars - 1) * c.char_dim;  // padding row is frozen
    std::size_t h = 0;
    for (std::size_t i = 0; i < c.widths.size(); ++i) {
      total += c.widths[i] * c.char_dim * c.filter_counts[i] + c.filter_counts[i];
      h += c.filter_counts[i];
    }
    if (c.transform == FeatureTransform::highway) total += c.highway_layers * 2 * (h * h + h);
    if (c.transform == FeatureTransform::mlp) total += h * h + h;
    repr = h;
  } else {
    total += vocab * c.word_dim;
    if (c.input == InputMode::morphs) total += num_morphemes * c.word_dim;
    repr = c.word_dim;
  }
  const std::size_t m = c.hidden;
  for (std::size_t l = 0; l < c.lstm_layers; ++l) {
    const std::size_t n_in = l == 0 ? repr : m;
    total += 4 * (m * n_in + m * m + m);
  }
  if (c.output == OutputKind::softmax) {
    total += m * vocab + vocab;
  } else {
    const std::size_t clusters = std::min(vocab, c.clusters > 0 ? c.clusters : default_cluster_count(vocab));
    total += m * clusters + clusters + m * vocab + vocab;
  }
  return total;
}

// ---------------------------------------------------------------------------

template <typename T>
Model<T>::Model(ModelConfig config, Lexicon lexicon, std::optional<ClusterAssignment> clusters)
    : config_(std::move(config)), lexicon_(std::move(lexicon)), rng_(config_.seed) {
  config_.validate();
  const std::size_t vocab = lexicon_.words.size();
  std::size_t repr = 0;
  if (config_.input == InputMode::chars) {
    char_table_ = CharTable(lexicon_.words, lexicon_.chars, config_.max_word_len);
    config_.max_word_len = char_table_.max_word_len();
    cnn = CharCnn<T>(CharCnnShape{lexicon_.chars.size(), config_.char_dim, config_.widths, config_.filter_counts});
    repr = cnn.output_dim();
    if (config_.transform == FeatureTransform::highway) {
      for (std::size_t l = 0; l < config_.highway_layers; ++l)
        highways.emplace_back(repr, config_.transform_activation, "highway." + std::to_string(l));
    } else if (config_.transform == FeatureTransform::mlp) {
      mlps.emplace_back(repr, config_.transform_activation, "mlp.0");
    }
  } else {
    repr = config_.word_dim;
    word_embedding = Param<T>("input.word_embedding", {vocab, repr});
    if (config_.input == InputMode::morphs) {
      if (lexicon_.morphs.word_morphs.size() != vocab) {
        throw ConfigError("morph input mode requires a morph table covering the vocabulary");
      }
      const std::size_t nm = std::max<std::size_t>(lexicon_.morphs.num_morphemes(), 1);
      morph_embedding = Param<T>("input.morph_embedding", {nm, repr});
      if (lexicon_.morphs.num_morphemes() == 0) morph_embedding.frozen = repr;
    }
  }
  for (std::size_t l = 0; l < config_.lstm_layers; ++l)
    lstm.emplace_back(l == 0 ? repr : config_.hidden, config_.hidden, "lstm." + std::to_string(l));

  if (config_.output == OutputKind::softmax) {
    softmax.emplace(config_.hidden, vocab);
  } else {
    if (!clusters) clusters = ClusterAssignment::random(vocab, rng_, config_.clusters);
    if (clusters->cluster_of.size() != vocab) throw ConfigError("cluster assignment does not match vocabulary");
    clusters_ = clusters;
    hier.emplace(config_.hidden, *clusters);
  }
}

template <typename T>
Model<T> Model<T>::create(ModelConfig config, Lexicon lexicon) {
  Model model(std::move(config), std::move(lexicon));
  model.init_parameters();
  return model;
}

template <typename T>
void Model<T>::init_parameters() {
  const double r = config_.init_range;
  if (config_.input == InputMode::chars) {
    cnn.init(rng_, -r, r);
    for (auto& hw : highways) hw.init(rng_, -r, r, config_.gate_bias_lo, config_.gate_bias_hi);
    for (auto& mlp : mlps) mlp.init(rng_, -r, r);
  } else {
    uniform_fill<T>(word_embedding.value.values(), -r, r, rng_);
    if (config_.input == InputMode::morphs) {
      uniform_fill<T>(morph_embedding.value.values(), -r, r, rng_);
      if (morph_embedding.frozen) morph_embedding.value.zero();
    }
  }
  for (auto& layer : lstm) layer.init(rng_, -r, r);
  if (softmax) softmax->init(rng_, -r, r);
  if (hier) hier->init(rng_, -r, r);
}

template <typename T>
std::size_t Model<T>::repr_dim() const noexcept {
  return config_.input == InputMode::chars ? cnn.output_dim() : config_.word_dim;
}

template <typename T>
typename Model<T>::State Model<T>::initial_state(std::size_t batch) const {
  State s;
  for (std::size_t l = 0; l < lstm.size(); ++l) s.push_back(LstmState<T>::zeros(batch, config_.hidden));
  return s;
}

template <typename T>
Tensor<T> Model<T>::transform(const Tensor<T>& y) const {
  Tensor<T> x = y;
  for (const auto& hw : highways) x = hw.forward(x);
  for (const auto& mlp : mlps) x = mlp.forward(x);
  return x;
}

template <typename T>
Tensor<T> Model<T>::encode_char_sequences(std::span<const std::span<const int>> seqs, ReprStage stage) const {
  if (config_.input != InputMode::chars) throw ArgumentError("character encoding requires a char-input model");
  Tensor<T> y = cnn.forward(seqs);
  return stage == ReprStage::pre_transform ? y : transform(y);
}

template <typename T>
Tensor<T> Model<T>::input_repr(std::span<const int> ids, ReprStage stage) const {
  if (stage == ReprStage::pre_transform && config_.input == InputMode::chars) {
    std::vector<std::span<const int>> seqs;
    for (int id : ids) seqs.push_back(char_table_.word(id));
    return cnn.forward(seqs);
  }
  return input_forward(ids, nullptr);
}

template <typename T>
Tensor<T> Model<T>::input_forward(std::span<const int> ids, InputCache* cache) const {
  const std::size_t batch = ids.size();
  const std::size_t vocab = vocab_size();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) throw LookupError("word id out of range: " + std::to_string(id));
  }
  if (cache) cache->ids.assign(ids.begin(), ids.end());

  if (config_.input == InputMode::chars) {
    if (repr_lookup_) {
      Tensor<T> x({batch, repr_dim()});
      for (std::size_t b = 0; b < batch; ++b) {
        auto src = repr_lookup_->row(static_cast<std::size_t>(ids[b]));
        std::copy(src.begin(), src.end(), x.row(b).begin());
      }
      return x;
    }
    std::vector<std::span<const int>> seqs;
    seqs.reserve(batch);
    for (int id : ids) seqs.push_back(char_table_.word(id));
    Tensor<T> x = cnn.forward(seqs, cache ? &cache->cnn : nullptr);
    if (cache) cache->highway.resize(highways.size());
    for (std::size_t l = 0; l < highways.size(); ++l) x = highways[l].forward(x, cache ? &cache->highway[l] : nullptr);
    for (const auto& mlp : mlps) x = mlp.forward(x, cache ? &cache->mlp : nullptr);
    return x;
  }

  const std::size_t n = config_.word_dim;
  Tensor<T> x({batch, n});
  for (std::size_t b = 0; b < batch; ++b) {
    auto dst = x.row(b);
    auto src = word_embedding.value.row(static_cast<std::size_t>(ids[b]));
    std::copy(src.begin(), src.end(), dst.begin());
    if (config_.input == InputMode::morphs) {
      for (int m : lexicon_.morphs.of(ids[b])) {
        auto me = morph_embedding.value.row(static_cast<std::size_t>(m));
        for (std::size_t k = 0; k < n; ++k) dst[k] += me[k];
      }
    }
  }
  return x;
}

template <typename T>
void Model<T>::input_backward(const InputCache& cache, const Tensor<T>& dx) {
  if (config_.input == InputMode::chars) {
    if (repr_lookup_) return;
    Tensor<T> d = dx;
    if (!mlps.empty()) d = mlps.front().backward(cache.mlp, d);
    for (std::size_t l = highways.size(); l-- > 0;) d = highways[l].backward(cache.highway[l], d);
    cnn.backward(cache.cnn, d);
    return;
  }
  const std::size_t n = config_.word_dim;
  for (std::size_t b = 0; b < cache.ids.size(); ++b) {
    const auto src = dx.row(b);
    auto dst = word_embedding.grad.row(static_cast<std::size_t>(cache.ids[b]));
    for (std::size_t k = 0; k < n; ++k) dst[k] += src[k];
    if (config_.input == InputMode::morphs) {
      for (int m : lexicon_.morphs.of(cache.ids[b])) {
        auto dm = morph_embedding.grad.row(static_cast<std::size_t>(m));
        for (std::size_t k = 0; k < n; ++k) dm[k] += src[k];
      }
    }
  }
}

template <typename T>
Tensor<T> Model<T>::forward_step(std::span<const int> ids, State& state, Mode mode) {
  if (state.size() != lstm.size()) throw ShapeError("state has wrong number of layers");
  Tensor<T> x = input_forward(ids, nullptr);
  for (std::size_t l = 0; l < lstm.size(); ++l) {
    if (l > 0) x = dropout_apply(x, config_.dropout, mode, rng_);
    state[l] = lstm[l].step(x, state[l]);
    x = state[l].h;
  }
  x = dropout_apply(x, config_.dropout, mode, rng_);
  return softmax ? softmax->log_probs(x) : hier->log_probs(x);
}

template <typename T>
WindowResult Model<T>::run_window(const Window& window, State& state, Mode mode, bool backprop) {
  if (state.size() != lstm.size()) throw ShapeError("state has wrong number of layers");
  const std::size_t steps = window.steps;
  const std::size_t layers = lstm.size();
  const T scale = T{1} / static_cast<T>(window.batch);

  std::vector<InputCache> input_caches(backprop ? steps : 0);
  std::vector<std::vector<typename LstmLayer<T>::Cache>> lstm_caches(backprop ? steps : 0);
  std::vector<std::vector<Tensor<T>>> masks(backprop ? steps : 0);
  std::vector<Tensor<T>> dtop(backprop ? steps : 0);

  WindowResult result;
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor<T> x = input_forward(window.inputs_at(t), backprop ? &input_caches[t] : nullptr);
    if (backprop) {
      lstm_caches[t].resize(layers);
      masks[t].resize(layers + 1);
    }
    for (std::size_t l = 0; l < layers; ++l) {
      if (l > 0) x = dropout_apply(x, config_.dropout, mode, rng_, backprop ? &masks[t][l] : nullptr);
      state[l] = lstm[l].step(x, state[l], backprop ? &lstm_caches[t][l] : nullptr);
      x = state[l].h;
    }
    x = dropout_apply(x, config_.dropout, mode, rng_, backprop ? &masks[t][layers] : nullptr);
    Tensor<T>* dh = backprop ? &dtop[t] : nullptr;
    result.nll += softmax ? softmax->loss(x, window.targets_at(t), scale, dh)
                          : hier->loss(x, window.targets_at(t), scale, dh);
    result.tokens += window.batch;
    if (backprop) {
      const Tensor<T>& mask = masks[t][layers];
      for (std::size_t i = 0; i < dtop[t].size(); ++i) dtop[t][i] *= mask[i];
    }
  }
  if (!backprop) return result;

  const std::size_t batch = window.batch;
  std::vector<Tensor<T>> dh_next(layers, Tensor<T>({batch, config_.hidden}));
  std::vector<Tensor<T>> dc_next(layers, Tensor<T>({batch, config_.hidden}));
  Tensor<T> dx, dh_prev, dc_prev;
  for (std::size_t t = steps; t-- > 0;) {
    Tensor<T> above = std::move(dtop[t]);
    for (std::size_t l = layers; l-- > 0;) {
      for (std::size_t i = 0; i < above.size(); ++i) above[i] += dh_next[l][i];
      lstm[l].backward(lstm_caches[t][l], above, dc_next[l], dx, dh_prev, dc_prev);
      dh_next[l] = std::move(dh_prev);
      dc_next[l] = std::move(dc_prev);
      if (l > 0) {
        const Tensor<T>& mask = masks[t][l];
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask[i];
      }
      above = std::move(dx);
    }
    input_backward(input_caches[t], above);
  }
  return result;
}

template <typename T>
std::vector<Param<T>*> Model<T>::parameters() {
  std::vector<Param<T>*> out;
  const auto append = [&out](std::vector<Param<T>*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
  if (config_.input == InputMode::chars) {
    append(cnn.parameters());
    for (auto& hw : highways) append(hw.parameters());
    for (auto& mlp : mlps) append(mlp.parameters());
  } else {
    out.push_back(&word_embedding);
    if (config_.input == InputMode::morphs) out.push_back(&morph_embedding);
  }
  for (auto& layer : lstm) append(layer.parameters());
  if (softmax) append(softmax->parameters());
  if (hier) append(hier->parameters());
  return out;
}

template <typename T>
std::vector<const Param<T>*> Model<T>::parameters() const {
  auto mut = const_cast<Model*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename T>
std::size_t Model<T>::param_count() const {
  std::size_t n = 0;
  for (const Param<T>* p : parameters()) n += p->value.size() - p->frozen;
  return n;
}

template <typename T>
void Model<T>::zero_grads() {
  for (Param<T>* p : parameters()) p->grad.zero();
}

template <typename T>
void Model<T>::set_repr_lookup(Tensor<T> table) {
  if (config_.input != InputMode::chars) throw ArgumentError("representation lookup requires a char-input model");
  if (table.rank() != 2 || table.rows() != vocab_size() || table.cols() != repr_dim()) {
    throw ShapeError("representation table must be [|V| x " + std::to_string(repr_dim()) + "], got " +
                     shape_string(table.shape()));
  }
  repr_lookup_ = std::move(table);
}

template <typename T>
WindowResult sequence_nll(Model<T>& model, const Window& window, typename Model<T>::State& state, Mode mode) {
  return model.run_window(window, state, mode, false);
}

template class Model<float>;
template class Model<double>;
template WindowResult sequence_nll<float>(Model<float>&, const Window&, Model<float>::State&, Mode);
template WindowResult sequence_nll<double>(Model<double>&, const Window&, Model<double>::State&, Mode);

}  // namespace charlm
