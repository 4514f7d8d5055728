#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "charlm/corpus.hpp"
#include "charlm/model.hpp"

namespace charlm {

struct TrainConfig {
  double initial_lr = 1.0;
  double halve_threshold = 1.0;  // minimum validation PPL improvement to keep the lr
  double clip = 5.0;             // global gradient norm bound
  std::size_t bptt_steps = 35;
  std::size_t batch_size = 20;
  std::size_t epochs = 25;
  std::string checkpoint_dir;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_nll = 0.0;  // per token
  double val_ppl = 0.0;
  double lr = 0.0;         // learning rate used during the epoch
  double max_preclip = 0.0;
  double max_postclip = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  double lr = 1.0;        // learning rate for the next epoch
  double best_val_ppl = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;

  bool operator==(const TrainState&) const = default;
};

/// lr / 2 when prev - next <= threshold (including any increase), else lr.
double lr_schedule_update(double prev_val_ppl, double new_val_ppl, double lr, double threshold = 1.0);

/// theta -= lr * grad for every parameter, then zeroes the gradients.
template <typename T>
void sgd_step(std::span<Param<T>* const> params, double lr);

/// Perplexity over one full pass in eval mode, starting from a zero state.
template <typename T>
double evaluate_ppl(Model<T>& model, const BatchStream& stream);

/// Total NLL and target count of one eval pass.
template <typename T>
WindowResult evaluate_nll(Model<T>& model, const BatchStream& stream);

struct TrainHooks {
  /// Called after every epoch; return false to stop early.
  std::function<bool(const EpochRecord&, const TrainState&)> on_epoch;
  /// Called after every update with the window index and pre/post-clip norms.
  std::function<void(std::size_t, double, double)> on_update;
  /// Receives one log line per epoch.
  std::ostream* log = nullptr;
};

/// Truncated-BPTT SGD. Continues from `state` (fresh runs pass a default
/// state; its lr is replaced by cfg.initial_lr when no epoch has run). On
/// return the model holds the parameters of the best validation epoch.
/// Throws NumericError on a non-finite loss or gradient.
template <typename T>
TrainState train(Model<T>& model, const BatchStream& train_stream, const BatchStream& val_stream,
                 const TrainConfig& cfg, TrainState state = {}, const TrainHooks& hooks = {});

/// Tab-separated: epoch, train_nll, val_ppl, lr, max_preclip, max_postclip.
std::string format_log_line(const EpochRecord& r);
std::string log_header();
/// Parses a training log, skipping '#' comment lines. Throws ParseError.
std::vector<EpochRecord> parse_log(std::istream& in);

}  // namespace charlm
