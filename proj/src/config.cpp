#include "charlm/config.hpp"

#include <cstdint>
#include <fstream>
#include <functional>
#include <vector>

namespace charlm {

using nlohmann::json;

namespace {

std::size_t as_count(const std::string& key, const json& v) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) throw ConfigError("key '" + key + "' expects a non-negative integer");
  return v.get<std::size_t>();
}

double as_number(const std::string& key, const json& v) {
  if (!v.is_number()) throw ConfigError("key '" + key + "' expects a number");
  return v.get<double>();
}

std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) throw ConfigError("key '" + key + "' expects a string");
  return v.get<std::string>();
}

std::vector<std::size_t> as_counts(const std::string& key, const json& v) {
  if (!v.is_array()) throw ConfigError("key '" + key + "' expects a list of non-negative integers");
  std::vector<std::size_t> out;
  for (const json& e : v) out.push_back(as_count(key, e));
  return out;
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

#define COUNT_KEY(name, field) \
  Key{name, [](RunConfig& c, const json& v) { c.field = as_count(name, v); }, [](const RunConfig& c) { return json(c.field); }}
#define NUMBER_KEY(name, field) \
  Key{name, [](RunConfig& c, const json& v) { c.field = as_number(name, v); }, [](const RunConfig& c) { return json(c.field); }}
#define STRING_KEY(name, field) \
  Key{name, [](RunConfig& c, const json& v) { c.field = as_string(name, v); }, [](const RunConfig& c) { return json(c.field); }}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"input", [](RunConfig& c, const json& v) { c.model.input = parse_input_mode(as_string("input", v)); },
          [](const RunConfig& c) { return json(to_string(c.model.input)); }},
      STRING_KEY("preset", model.preset),
      COUNT_KEY("char_dim", model.char_dim),
      Key{"widths", [](RunConfig& c, const json& v) { c.model.widths = as_counts("widths", v); },
          [](const RunConfig& c) { return json(c.model.widths); }},
      Key{"filter_counts", [](RunConfig& c, const json& v) { c.model.filter_counts = as_counts("filter_counts", v); },
          [](const RunConfig& c) { return json(c.model.filter_counts); }},
      Key{"transform", [](RunConfig& c, const json& v) { c.model.transform = parse_transform(as_string("transform", v)); },
          [](const RunConfig& c) { return json(to_string(c.model.transform)); }},
      COUNT_KEY("highway_layers", model.highway_layers),
      Key{"activation",
          [](RunConfig& c, const json& v) {
            try {
              c.model.transform_activation = parse_activation(as_string("activation", v));
            } catch (const ArgumentError& e) {
              throw ConfigError(e.what());
            }
          },
          [](const RunConfig& c) { return json(to_string(c.model.transform_activation)); }},
      COUNT_KEY("max_word_len", model.max_word_len),
      COUNT_KEY("word_dim", model.word_dim),
      COUNT_KEY("lstm_layers", model.lstm_layers),
      COUNT_KEY("hidden", model.hidden),
      Key{"output", [](RunConfig& c, const json& v) { c.model.output = parse_output(as_string("output", v)); },
          [](const RunConfig& c) { return json(to_string(c.model.output)); }},
      COUNT_KEY("clusters", model.clusters),
      NUMBER_KEY("dropout", model.dropout),
      Key{"seed", [](RunConfig& c, const json& v) { c.model.seed = as_count("seed", v); },
          [](const RunConfig& c) { return json(c.model.seed); }},
      NUMBER_KEY("init_range", model.init_range),
      NUMBER_KEY("gate_bias_lo", model.gate_bias_lo),
      NUMBER_KEY("gate_bias_hi", model.gate_bias_hi),

      NUMBER_KEY("lr", train.initial_lr),
      NUMBER_KEY("halve_threshold", train.halve_threshold),
      NUMBER_KEY("clip", train.clip),
      COUNT_KEY("bptt_steps", train.bptt_steps),
      COUNT_KEY("batch_size", train.batch_size),
      COUNT_KEY("epochs", train.epochs),
      STRING_KEY("checkpoint_dir", train.checkpoint_dir),

      STRING_KEY("train", data.train),
      STRING_KEY("valid", data.valid),
      STRING_KEY("test", data.test),
      STRING_KEY("morph_table", data.morph_table),
      COUNT_KEY("vocab_cap", data.vocab_cap),
      COUNT_KEY("min_count", data.min_count),

      COUNT_KEY("ngram_min_len", analysis.ngram_min_len),
      COUNT_KEY("ngram_max_len", analysis.ngram_max_len),
      COUNT_KEY("ngram_min_support", analysis.ngram_min_support),
      COUNT_KEY("neighbors", analysis.neighbors),

      STRING_KEY("checkpoint", checkpoint),
      STRING_KEY("log", log),
  };
  return table;
}

#undef COUNT_KEY
#undef NUMBER_KEY
#undef STRING_KEY

const Key& find_key(const std::string& name) {
  for (const Key& k : keys()) {
    if (name == k.name) return k;
  }
  throw ConfigError("unknown configuration key: " + name);
}

void check_object(const json& j, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (const auto& [name, value] : j.items()) find_key(name);
}

void apply(RunConfig& c, const json& j) {
  for (const auto& [name, value] : j.items()) {
    if (name == "input" || name == "preset") continue;
    find_key(name).set(c, value);
  }
}

}  // namespace

RunConfig resolve_config(const json& file, const json& overrides) {
  check_object(file, "configuration file");
  check_object(overrides, "overrides");
  const auto pick = [&](const char* key, const char* fallback) {
    if (overrides.contains(key)) return as_string(key, overrides[key]);
    if (file.contains(key)) return as_string(key, file[key]);
    return std::string(fallback);
  };
  RunConfig c;
  c.model = preset_config(parse_input_mode(pick("input", "char")), pick("preset", "small"));
  apply(c, file);
  apply(c, overrides);
  c.model.validate();
  c.train.validate();
  if (c.analysis.ngram_min_len == 0 || c.analysis.ngram_min_len > c.analysis.ngram_max_len) {
    throw ConfigError("invalid n-gram length range");
  }
  return c;
}

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed config file " + path + ": " + e.what());
  }
}

json config_to_json(const RunConfig& config) {
  json j = json::object();
  for (const Key& k : keys()) j[k.name] = k.get(config);
  return j;
}

namespace {

constexpr const char* kModelKeys[] = {"input",     "preset",       "char_dim",    "widths",       "filter_counts",
                                      "transform", "highway_layers", "activation", "max_word_len", "word_dim",
                                      "lstm_layers", "hidden",      "output",      "clusters",     "dropout",
                                      "seed",      "init_range",   "gate_bias_lo", "gate_bias_hi"};
constexpr const char* kTrainKeys[] = {"lr", "halve_threshold", "clip", "bptt_steps", "batch_size", "epochs",
                                      "checkpoint_dir"};

template <std::size_t N>
json select(const RunConfig& c, const char* const (&names)[N]) {
  json j = json::object();
  for (const char* n : names) j[n] = find_key(n).get(c);
  return j;
}

template <std::size_t N>
RunConfig restore(const json& j, const char* const (&names)[N]) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  RunConfig c;
  for (const char* n : names) {
    if (!j.contains(n)) throw ConfigError(std::string("missing configuration key: ") + n);
  }
  for (const auto& [name, value] : j.items()) {
    bool known = false;
    for (const char* n : names) known = known || name == n;
    if (!known) throw ConfigError("unknown configuration key: " + name);
    find_key(name).set(c, value);
  }
  return c;
}

}  // namespace

json model_config_to_json(const ModelConfig& config) {
  RunConfig c;
  c.model = config;
  return select(c, kModelKeys);
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m = restore(j, kModelKeys).model;
  m.validate();
  return m;
}

json train_config_to_json(const TrainConfig& config) {
  RunConfig c;
  c.train = config;
  return select(c, kTrainKeys);
}

TrainConfig train_config_from_json(const json& j) { return restore(j, kTrainKeys).train; }

}  // namespace charlm
