// Command-line front end: train, eval, neighbors, ngrams, precompute,
// print-config.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "charlm/analysis.hpp"
#include "charlm/checkpoint.hpp"
#include "charlm/config.hpp"
#include "charlm/corpus.hpp"
#include "charlm/model.hpp"
#include "charlm/training.hpp"

using namespace charlm;
using nlohmann::json;

namespace {

struct ConfigFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset, input, train, valid, test, morph_table, checkpoint, log, activation;
  std::optional<std::size_t> highway_layers, vocab_cap, min_count, epochs, batch_size, bptt, hidden, word_dim,
      clusters, max_word_len;
  std::optional<double> dropout, lr;
  bool mlp = false, no_highway = false, hsm = false;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "JSON configuration file");
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--preset", preset, "Architecture preset")->check(CLI::IsMember({"small", "large", "custom"}));
    app->add_option("--input", input, "Input representation")->check(CLI::IsMember({"char", "word", "morph"}));
    app->add_option("--highway-layers", highway_layers, "Number of highway layers (0 disables them)");
    app->add_flag("--mlp", mlp, "Replace the highway layers by one MLP layer");
    app->add_flag("--no-highway", no_highway, "Feed the CharCNN output straight to the LSTM");
    app->add_flag("--hsm", hsm, "Use the hierarchical softmax");
    app->add_option("--vocab-cap", vocab_cap, "Keep only the K most frequent words");
    app->add_option("--min-count", min_count, "Minimum training count for a vocabulary word");
    app->add_option("--morph-table", morph_table, "Morpheme segmentation file (word<TAB>morphemes)");
    app->add_option("--checkpoint", checkpoint, "Checkpoint path");
    app->add_option("--log", log, "Training log path");
    app->add_option("--train", train, "Training corpus");
    app->add_option("--valid", valid, "Validation corpus");
    app->add_option("--test", test, "Test corpus");
    app->add_option("--epochs", epochs, "Number of epochs");
    app->add_option("--batch-size", batch_size, "Sequences per batch");
    app->add_option("--bptt", bptt, "Truncated BPTT steps");
    app->add_option("--hidden", hidden, "LSTM hidden units");
    app->add_option("--word-dim", word_dim, "Word / morpheme embedding size");
    app->add_option("--clusters", clusters, "Hierarchical softmax clusters (0: ceil(sqrt(|V|)))");
    app->add_option("--max-word-len", max_word_len, "Character slots per word, boundaries included");
    app->add_option("--dropout", dropout, "Dropout probability");
    app->add_option("--lr", lr, "Initial learning rate");
    app->add_option("--activation", activation, "Highway / MLP nonlinearity")->check(CLI::IsMember({"relu", "tanh"}));
  }

  json overrides() const {
    json j = json::object();
    const auto put = [&j](const char* key, const auto& opt) {
      if (opt) j[key] = *opt;
    };
    put("seed", seed);
    put("preset", preset);
    put("input", input);
    put("train", train);
    put("valid", valid);
    put("test", test);
    put("morph_table", morph_table);
    put("checkpoint", checkpoint);
    put("log", log);
    put("activation", activation);
    put("vocab_cap", vocab_cap);
    put("min_count", min_count);
    put("epochs", epochs);
    put("batch_size", batch_size);
    put("bptt_steps", bptt);
    put("hidden", hidden);
    put("word_dim", word_dim);
    put("clusters", clusters);
    put("max_word_len", max_word_len);
    put("dropout", dropout);
    put("lr", lr);
    if (highway_layers) {
      j["highway_layers"] = *highway_layers;
      if (*highway_layers == 0) j["transform"] = "none";
      else if (!mlp) j["transform"] = "highway";
    }
    if (no_highway) j["transform"] = "none";
    if (mlp) j["transform"] = "mlp";
    if (hsm) j["output"] = "hierarchical";
    return j;
  }

  RunConfig resolve() const {
    return resolve_config(config.empty() ? json::object() : load_config_file(config), overrides());
  }
};

std::vector<std::string> read_corpus(const std::string& path, const char* role) {
  if (path.empty()) throw ConfigError(std::string("no ") + role + " corpus given");
  return read_tokens_file(path);
}

int cmd_print_config(const ConfigFlags& flags) {
  std::cout << config_to_json(flags.resolve()).dump(2) << '\n';
  return 0;
}

int cmd_train(const ConfigFlags& flags) {
  const RunConfig cfg = flags.resolve();
  const auto train_tokens = read_corpus(cfg.data.train, "training");
  const auto valid_tokens = read_corpus(cfg.data.valid, "validation");

  Vocabs vocabs = build_vocabs(train_tokens, {cfg.data.min_count, cfg.data.vocab_cap});
  Lexicon lex{std::move(vocabs.words), std::move(vocabs.chars), {}};
  if (cfg.model.input == InputMode::morphs) {
    if (cfg.data.morph_table.empty()) throw ConfigError("morph input needs --morph-table");
    lex.morphs = load_morph_table_file(cfg.data.morph_table, lex.words);
  }
  auto model = Model<float>::create(cfg.model, std::move(lex));
  std::cerr << "vocabulary " << model.vocab_size() << " words, " << model.lexicon().chars.size() << " chars; "
            << model.param_count() << " parameters\n";

  const auto train_ids = encode_tokens(train_tokens, model.lexicon().words);
  const auto valid_ids = encode_tokens(valid_tokens, model.lexicon().words);
  const BatchStream train_stream(train_ids, cfg.train.batch_size, cfg.train.bptt_steps);
  const BatchStream valid_stream(valid_ids, cfg.train.batch_size, cfg.train.bptt_steps);

  const std::string log_path = cfg.log.empty() ? cfg.checkpoint + ".log" : cfg.log;
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw ConfigError("cannot write log file: " + log_path);

  TrainHooks hooks;
  hooks.log = &log;
  hooks.on_epoch = [&](const EpochRecord& r, const TrainState& s) {
    std::fprintf(stderr, "epoch %zu  train_nll %.4f  val_ppl %.3f  lr %g  max_grad_norm %.3f\n", r.epoch,
                 r.train_nll, r.val_ppl, r.lr, r.max_preclip);
    if (!cfg.train.checkpoint_dir.empty()) {
      save_checkpoint(cfg.train.checkpoint_dir + "/epoch-" + std::to_string(r.epoch) + ".ckpt", model, s, cfg.train);
    }
    return true;
  };
  const TrainState state = train(model, train_stream, valid_stream, cfg.train, {}, hooks);
  save_checkpoint(cfg.checkpoint, model, state, cfg.train);
  std::fprintf(stderr, "best epoch %zu, val_ppl %.4f; wrote %s\n", state.best_epoch, state.best_val_ppl,
               cfg.checkpoint.c_str());
  if (!cfg.data.test.empty()) {
    const auto test_ids = encode_tokens(read_corpus(cfg.data.test, "test"), model.lexicon().words);
    const BatchStream test_stream(test_ids, cfg.train.batch_size, cfg.train.bptt_steps);
    std::printf("test_ppl=%.4f\n", evaluate_ppl(model, test_stream));
  }
  return 0;
}

struct EvalFlags {
  std::string checkpoint, corpus, repr_table;
  std::optional<std::size_t> batch_size, bptt;
};

int cmd_eval(const EvalFlags& f) {
  Checkpoint ck = load_checkpoint(f.checkpoint);
  const auto ids = encode_tokens(read_corpus(f.corpus, "evaluation"), ck.model.lexicon().words);
  if (!f.repr_table.empty()) {
    ReprTable table = load_repr_table(f.repr_table);
    if (table.stage != ReprStageName::post_highway) {
      throw ArgumentError("lookup scoring needs a post_highway table, got " + to_string(table.stage));
    }
    ck.model.set_repr_lookup(std::move(table.matrix));
  }
  const BatchStream stream(ids, f.batch_size.value_or(ck.train_config.batch_size),
                           f.bptt.value_or(ck.train_config.bptt_steps));
  std::printf("ppl=%.4f\n", evaluate_ppl(ck.model, stream));
  return 0;
}

ReprStageName default_stage(const Model<float>& model) {
  return model.config().input == InputMode::chars ? ReprStageName::post_highway : ReprStageName::word_embedding;
}

struct NeighborFlags {
  std::string checkpoint, word, stage;
  std::size_t k = 5;
};

int cmd_neighbors(const NeighborFlags& f) {
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  const Model<float>& model = ck.model;
  const ReprStageName stage = f.stage.empty() ? default_stage(model) : parse_repr_stage(f.stage);
  if (f.k == 0) return 0;
  const ReprTable table = word_repr_table(model, stage);
  const auto id = model.lexicon().words.find(f.word);
  NeighborResult result;
  if (id && *id != WordVocab::kUnk) {
    result = nearest_neighbors(table, *id, f.k);
  } else {
    if (model.config().input != InputMode::chars) {
      throw LookupError("'" + f.word + "' is not in the vocabulary (out-of-vocabulary queries need a char model)");
    }
    const std::vector<float> q = surface_repr(model, f.word, stage);
    result = nearest_neighbors(table.matrix, q, f.k);
    std::printf("# OOV\t%s\n", f.word.c_str());
  }
  if (result.zero_norm_rows > 0) {
    std::fprintf(stderr, "warning: %zu zero-norm vectors (cosine taken as 0)\n", result.zero_norm_rows);
  }
  for (const Neighbor& n : result.neighbors) {
    std::printf("%s\t%.6f\n", model.lexicon().words.word(n.id).c_str(), n.cosine);
  }
  return 0;
}

struct NgramFlags {
  std::string checkpoint, out;
  std::size_t min_len = 2, max_len = 7, min_support = 2;
};

int cmd_ngrams(const NgramFlags& f) {
  if (f.out.empty()) throw ConfigError("ngrams needs --out");
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  const auto ngrams = ngram_reprs(ck.model, {f.min_len, f.max_len, f.min_support});
  if (ngrams.size() < 3) throw ArgumentError("too few n-grams for a projection");
  Tensor<double> x({ngrams.size(), ngrams.front().vec.size()});
  for (std::size_t i = 0; i < ngrams.size(); ++i) {
    for (std::size_t j = 0; j < ngrams[i].vec.size(); ++j) x.at(i, j) = ngrams[i].vec[j];
  }
  const PcaResult pca = pca_project(x, 2);
  if (pca.missing_components > 0) {
    std::fprintf(stderr, "warning: data has rank < 2; %zu component(s) set to zero\n", pca.missing_components);
  }
  std::ofstream out(f.out, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + f.out);
  write_ngram_csv(out, ngrams, pca.projection);
  std::fprintf(stderr, "wrote %zu n-grams to %s\n", ngrams.size(), f.out.c_str());
  return 0;
}

struct PrecomputeFlags {
  std::string checkpoint, out, csv, stage;
};

int cmd_precompute(const PrecomputeFlags& f) {
  if (f.out.empty()) throw ConfigError("precompute needs --out");
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  const ReprStageName stage = f.stage.empty() ? default_stage(ck.model) : parse_repr_stage(f.stage);
  const ReprTable table = word_repr_table(ck.model, stage);
  save_repr_table(f.out, table);
  if (!f.csv.empty()) {
    std::ofstream csv(f.csv, std::ios::trunc);
    if (!csv) throw ConfigError("cannot write " + f.csv);
    write_repr_csv(csv, table, ck.model.lexicon().words);
  }
  return 0;
}

int exit_code(const Error& e) {
  if (dynamic_cast<const CheckpointError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Character-aware neural language model"};
  app.require_subcommand(1);

  ConfigFlags train_flags, print_flags;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write the best checkpoint");
  train_flags.add_to(train_cmd);
  auto* print_cmd = app.add_subcommand("print-config", "Print the effective configuration");
  print_flags.add_to(print_cmd);

  EvalFlags eval_flags;
  auto* eval_cmd = app.add_subcommand("eval", "Perplexity of a corpus");
  eval_cmd->add_option("--checkpoint", eval_flags.checkpoint)->required();
  eval_cmd->add_option("--corpus,corpus", eval_flags.corpus, "Corpus to score")->required();
  eval_cmd->add_option("--repr-table", eval_flags.repr_table, "Precomputed post-highway table for lookup scoring");
  eval_cmd->add_option("--batch-size", eval_flags.batch_size);
  eval_cmd->add_option("--bptt", eval_flags.bptt);

  NeighborFlags nb;
  auto* nb_cmd = app.add_subcommand("neighbors", "Nearest neighbors of a word by cosine similarity");
  nb_cmd->add_option("--checkpoint", nb.checkpoint)->required();
  nb_cmd->add_option("--word,word", nb.word)->required();
  nb_cmd->add_option("-k,--k", nb.k, "Number of neighbors");
  nb_cmd->add_option("--stage", nb.stage, "pre_highway, post_highway or word_embedding");

  NgramFlags ng;
  auto* ng_cmd = app.add_subcommand("ngrams", "Export PCA-projected character n-gram representations");
  ng_cmd->add_option("--checkpoint", ng.checkpoint)->required();
  ng_cmd->add_option("--out", ng.out, "CSV output")->required();
  ng_cmd->add_option("--min-len", ng.min_len);
  ng_cmd->add_option("--max-len", ng.max_len);
  ng_cmd->add_option("--min-support", ng.min_support);

  PrecomputeFlags pc;
  auto* pc_cmd = app.add_subcommand("precompute", "Encode the whole vocabulary into a lookup table");
  pc_cmd->add_option("--checkpoint", pc.checkpoint)->required();
  pc_cmd->add_option("--out", pc.out, "Binary table output")->required();
  pc_cmd->add_option("--csv", pc.csv, "Optional CSV copy");
  pc_cmd->add_option("--stage", pc.stage);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) return cmd_train(train_flags);
    if (*print_cmd) return cmd_print_config(print_flags);
    if (*eval_cmd) return cmd_eval(eval_flags);
    if (*nb_cmd) return cmd_neighbors(nb);
    if (*ng_cmd) return cmd_ngrams(ng);
    if (*pc_cmd) return cmd_precompute(pc);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
