#include "charlm/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>

#include "charlm/config.hpp"

namespace charlm {

using nlohmann::json;

namespace {

constexpr std::string_view kCheckpointMagic = "CHLMCKPT";
constexpr std::string_view kReprMagic = "CHLMREPR";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view s) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
  return v;
}

void put_f32(std::string& out, float f) {
  const auto v = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

float get_f32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return std::bit_cast<float>(v);
}

json tensor_entry(const std::string& name, const Tensor<float>& t, std::string& blobs) {
  json e = {{"name", name}, {"shape", t.shape()}, {"offset", blobs.size()}};
  for (float v : t.values()) put_f32(blobs, v);
  return e;
}

Tensor<float> read_tensor(const json& entry, const std::string& blobs) {
  try {
    const Shape shape = entry.at("shape").get<Shape>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (shape.empty() || n == 0 || offset > blobs.size() || (blobs.size() - offset) / 4 < n) {
      throw CheckpointError("tensor '" + entry.at("name").get<std::string>() + "' lies outside the data section");
    }
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = get_f32(blobs.data() + offset + 4 * i);
    return Tensor<float>(shape, std::move(values));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed tensor entry: ") + e.what());
  }
}

void check_version(const json& header, std::string_view format) {
  if (!header.is_object() || header.value("format", std::string()) != format) {
    throw CheckpointError("not a " + std::string(format) + " file");
  }
  const json& v = header.contains("version") ? header["version"] : json();
  if (!v.is_number_unsigned() || v.get<std::uint64_t>() != kCheckpointVersion) {
    throw CheckpointError("unsupported " + std::string(format) + " version " + v.dump() + " (this build reads version " +
                          std::to_string(kCheckpointVersion) + ")");
  }
}

json ppl_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double ppl_value(const json& j) { return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>(); }

json state_json(const TrainState& s) {
  json history = json::array();
  for (const EpochRecord& r : s.history) {
    history.push_back({r.epoch, r.train_nll, r.val_ppl, r.lr, r.max_preclip, r.max_postclip});
  }
  return {{"epoch", s.epoch}, {"lr", s.lr}, {"best_val_ppl", ppl_json(s.best_val_ppl)},
          {"best_epoch", s.best_epoch}, {"history", history}};
}

TrainState state_from_json(const json& j) {
  TrainState s;
  s.epoch = j.at("epoch").get<std::size_t>();
  s.lr = j.at("lr").get<double>();
  s.best_val_ppl = ppl_value(j.at("best_val_ppl"));
  s.best_epoch = j.at("best_epoch").get<std::size_t>();
  for (const json& r : j.at("history")) {
    s.history.push_back({r.at(0).get<std::size_t>(), r.at(1).get<double>(), r.at(2).get<double>(),
                         r.at(3).get<double>(), r.at(4).get<double>(), r.at(5).get<double>()});
  }
  return s;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string encode_container(std::string_view magic, const Container& c) {
  const std::string header = c.header.dump();
  std::string out(magic);
  put_u64(out, header.size());
  out += header;
  out += c.blobs;
  put_u64(out, fnv1a64(out));
  return out;
}

Container decode_container(std::string_view magic, std::string_view bytes) {
  if (bytes.size() < magic.size() + 16 || bytes.substr(0, magic.size()) != magic) {
    throw CheckpointError(bytes.size() < magic.size() + 16 ? "file is truncated" : "bad magic number");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  if (get_u64(bytes.substr(bytes.size() - 8)) != fnv1a64(body)) {
    throw CheckpointError("checksum mismatch (file truncated or corrupted)");
  }
  const std::uint64_t header_len = get_u64(body.substr(magic.size(), 8));
  const std::size_t header_start = magic.size() + 8;
  if (header_len > body.size() - header_start) throw CheckpointError("header length exceeds file size");
  Container c;
  try {
    c.header = json::parse(body.substr(header_start, header_len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed header: ") + e.what());
  }
  c.blobs = std::string(body.substr(header_start + header_len));
  return c;
}

std::string serialize_checkpoint(const Model<float>& model, const TrainState& state, const TrainConfig& train_config) {
  Container c;
  const Lexicon& lex = model.lexicon();
  json words = json::array();
  for (std::size_t i = 0; i < lex.words.size(); ++i) {
    words.push_back({lex.words.word(static_cast<int>(i)), lex.words.count(static_cast<int>(i))});
  }
  json chars = json::array();
  for (char32_t s : lex.chars.symbols()) chars.push_back(static_cast<std::uint32_t>(s));
  json morphs = nullptr;
  if (!lex.morphs.empty()) {
    morphs = {{"morphemes", lex.morphs.morphemes},
              {"word_morphs", lex.morphs.word_morphs},
              {"duplicate_lines", lex.morphs.duplicate_lines},
              {"unknown_words", lex.morphs.unknown_words}};
  }
  json clusters = nullptr;
  if (model.clusters()) clusters = model.clusters()->members;

  json tensors = json::array();
  for (const Param<float>* p : model.parameters()) tensors.push_back(tensor_entry(p->name, p->value, c.blobs));

  c.header = {{"format", "charlm-checkpoint"},
              {"version", kCheckpointVersion},
              {"config", model_config_to_json(model.config())},
              {"train_config", train_config_to_json(train_config)},
              {"train_state", state_json(state)},
              {"words", words},
              {"chars", chars},
              {"morphs", morphs},
              {"clusters", clusters},
              {"rng", model.rng().state()},
              {"tensors", tensors}};
  return encode_container(kCheckpointMagic, c);
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  const Container c = decode_container(kCheckpointMagic, bytes);
  const json& h = c.header;
  check_version(h, "charlm-checkpoint");
  try {
    Lexicon lex;
    for (const json& w : h.at("words")) lex.words.add(w.at(0).get<std::string>(), w.at(1).get<std::int64_t>());
    std::u32string symbols;
    for (const json& s : h.at("chars")) symbols.push_back(static_cast<char32_t>(s.get<std::uint32_t>()));
    lex.chars = CharVocab::from_symbols(std::move(symbols));
    if (!h.at("morphs").is_null()) {
      const json& m = h.at("morphs");
      lex.morphs.morphemes = m.at("morphemes").get<std::vector<std::string>>();
      lex.morphs.word_morphs = m.at("word_morphs").get<std::vector<std::vector<int>>>();
      lex.morphs.duplicate_lines = m.at("duplicate_lines").get<std::size_t>();
      lex.morphs.unknown_words = m.at("unknown_words").get<std::size_t>();
    }
    std::optional<ClusterAssignment> clusters;
    if (!h.at("clusters").is_null()) {
      clusters = ClusterAssignment::from_members(h.at("clusters").get<std::vector<std::vector<int>>>(),
                                                 lex.words.size());
    }
    const ModelConfig config = model_config_from_json(h.at("config"));
    Checkpoint ck{Model<float>(config, std::move(lex), std::move(clusters)), state_from_json(h.at("train_state")),
                  train_config_from_json(h.at("train_config"))};
    auto params = ck.model.parameters();
    const json& tensors = h.at("tensors");
    if (tensors.size() != params.size()) {
      throw CheckpointError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                            std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::string name = tensors[i].at("name").get<std::string>();
      if (name != params[i]->name) throw CheckpointError("unexpected tensor '" + name + "', expected '" + params[i]->name + "'");
      Tensor<float> t = read_tensor(tensors[i], c.blobs);
      if (t.shape() != params[i]->value.shape()) {
        throw CheckpointError("tensor '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                              shape_string(params[i]->value.shape()));
      }
      params[i]->value = std::move(t);
    }
    ck.model.rng().set_state(h.at("rng").get<std::string>());
    return ck;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(std::string("invalid checkpoint contents: ") + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::string& path, std::string_view bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw CheckpointError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move " + tmp + " to " + path + ": " + ec.message());
}

void save_checkpoint(const std::string& path, const Model<float>& model, const TrainState& state,
                     const TrainConfig& train_config) {
  write_file_atomic(path, serialize_checkpoint(model, state, train_config));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

std::string serialize_repr_table(const ReprTable& table) {
  Container c;
  json tensors = json::array({tensor_entry("matrix", table.matrix, c.blobs)});
  c.header = {{"format", "charlm-repr-table"},
              {"version", kCheckpointVersion},
              {"stage", to_string(table.stage)},
              {"ids", table.ids},
              {"tensors", tensors}};
  return encode_container(kReprMagic, c);
}

ReprTable deserialize_repr_table(std::string_view bytes) {
  const Container c = decode_container(kReprMagic, bytes);
  check_version(c.header, "charlm-repr-table");
  try {
    ReprTable t;
    t.stage = parse_repr_stage(c.header.at("stage").get<std::string>());
    t.ids = c.header.at("ids").get<std::vector<int>>();
    t.matrix = read_tensor(c.header.at("tensors").at(0), c.blobs);
    if (t.matrix.rank() != 2 || t.matrix.rows() != t.ids.size()) throw CheckpointError("table rows do not match ids");
    return t;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed table header: ") + e.what());
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(std::string("invalid table contents: ") + e.what());
  }
}

void save_repr_table(const std::string& path, const ReprTable& table) {
  write_file_atomic(path, serialize_repr_table(table));
}

ReprTable load_repr_table(const std::string& path) { return deserialize_repr_table(read_file(path)); }

}  // namespace charlm
