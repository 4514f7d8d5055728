#include "charlm/training.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace charlm {

void TrainConfig::validate() const {
  if (!(initial_lr > 0.0)) throw ConfigError("initial_lr must be positive");
  if (!(halve_threshold > 0.0)) throw ConfigError("halve_threshold must be positive");
  if (!(clip > 0.0)) throw ConfigError("clip must be positive");
  if (bptt_steps == 0) throw ConfigError("bptt_steps must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
}

double lr_schedule_update(double prev_val_ppl, double new_val_ppl, double lr, double threshold) {
  return prev_val_ppl - new_val_ppl <= threshold ? lr / 2.0 : lr;
}

template <typename T>
void sgd_step(std::span<Param<T>* const> params, double lr) {
  const T step = static_cast<T>(lr);
  for (Param<T>* p : params) {
    T* v = p->value.data();
    const T* g = p->grad.data();
    for (std::size_t i = 0; i < p->value.size(); ++i) v[i] -= step * g[i];
    p->grad.zero();
  }
}

template <typename T>
WindowResult evaluate_nll(Model<T>& model, const BatchStream& stream) {
  if (stream.batch() == 0 || stream.num_targets() == 0) throw CorpusError("cannot evaluate an empty stream");
  auto state = model.initial_state(stream.batch());
  WindowResult total;
  for (std::size_t w = 0; w < stream.num_windows(); ++w) {
    const WindowResult r = model.run_window(stream.window(w), state, Mode::eval, false);
    total.nll += r.nll;
    total.tokens += r.tokens;
  }
  return total;
}

template <typename T>
double evaluate_ppl(Model<T>& model, const BatchStream& stream) {
  const WindowResult r = evaluate_nll(model, stream);
  return std::exp(r.nll / static_cast<double>(r.tokens));
}

namespace {

template <typename T>
std::vector<Tensor<T>> snapshot(Model<T>& model) {
  std::vector<Tensor<T>> out;
  for (Param<T>* p : model.parameters()) out.push_back(p->value);
  return out;
}

template <typename T>
void restore(Model<T>& model, const std::vector<Tensor<T>>& values) {
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

template <typename T>
TrainState train(Model<T>& model, const BatchStream& train_stream, const BatchStream& val_stream,
                 const TrainConfig& cfg, TrainState state, const TrainHooks& hooks) {
  cfg.validate();
  if (state.epoch == 0 && state.history.empty()) state.lr = cfg.initial_lr;
  if (hooks.log && state.epoch == 0) *hooks.log << log_header() << '\n';

  auto params = model.parameters();
  std::vector<Tensor<T>*> grads;
  for (Param<T>* p : params) grads.push_back(&p->grad);
  model.zero_grads();

  std::vector<Tensor<T>> best;
  if (state.best_epoch > 0) best = snapshot(model);

  while (state.epoch < cfg.epochs) {
    EpochRecord rec;
    rec.epoch = state.epoch + 1;
    rec.lr = state.lr;
    auto lstm_state = model.initial_state(train_stream.batch());
    double nll = 0.0;
    std::size_t tokens = 0;
    for (std::size_t w = 0; w < train_stream.num_windows(); ++w) {
      // Carry the state values into the window; gradients stop at its start.
      const WindowResult r = model.run_window(train_stream.window(w), lstm_state, Mode::train, true);
      if (!std::isfinite(r.nll)) {
        throw NumericError("non-finite training loss in epoch " + std::to_string(rec.epoch) + ", window " +
                           std::to_string(w) + " (max grad norm so far " + fmt(rec.max_preclip) + ")");
      }
      const double pre = clip_global_norm<T>(grads, cfg.clip);
      if (!std::isfinite(pre)) {
        throw NumericError("non-finite gradient norm in epoch " + std::to_string(rec.epoch) + ", window " +
                           std::to_string(w));
      }
      const double post = global_norm<T>(grads);
      rec.max_preclip = std::max(rec.max_preclip, pre);
      rec.max_postclip = std::max(rec.max_postclip, post);
      if (hooks.on_update) hooks.on_update(w, pre, post);
      sgd_step<T>(params, state.lr);
      nll += r.nll;
      tokens += r.tokens;
    }
    rec.train_nll = tokens ? nll / static_cast<double>(tokens) : 0.0;
    rec.val_ppl = evaluate_ppl(model, val_stream);
    if (!std::isfinite(rec.val_ppl)) {
      throw NumericError("non-finite validation perplexity after epoch " + std::to_string(rec.epoch));
    }

    if (!state.history.empty()) {
      state.lr = lr_schedule_update(state.history.back().val_ppl, rec.val_ppl, state.lr, cfg.halve_threshold);
    }
    if (rec.val_ppl < state.best_val_ppl) {
      state.best_val_ppl = rec.val_ppl;
      state.best_epoch = rec.epoch;
      best = snapshot(model);
    }
    state.history.push_back(rec);
    state.epoch = rec.epoch;
    if (hooks.log) *hooks.log << format_log_line(rec) << '\n' << std::flush;
    if (hooks.on_epoch && !hooks.on_epoch(rec, state)) break;
  }
  if (!best.empty()) restore(model, best);
  return state;
}

std::string log_header() { return "# epoch\ttrain_nll\tval_ppl\tlr\tmax_preclip_grad_norm\tmax_postclip_grad_norm"; }

std::string format_log_line(const EpochRecord& r) {
  return std::to_string(r.epoch) + '\t' + fmt(r.train_nll) + '\t' + fmt(r.val_ppl) + '\t' + fmt(r.lr) + '\t' +
         fmt(r.max_preclip) + '\t' + fmt(r.max_postclip);
}

std::vector<EpochRecord> parse_log(std::istream& in) {
  std::vector<EpochRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    EpochRecord r;
    if (!(ss >> r.epoch >> r.train_nll >> r.val_ppl >> r.lr >> r.max_preclip >> r.max_postclip)) {
      throw ParseError("malformed training log line " + std::to_string(lineno));
    }
    out.push_back(r);
  }
  return out;
}

#define CHARLM_INSTANTIATE(T)                                                                             \
  template void sgd_step<T>(std::span<Param<T>* const>, double);                                          \
  template WindowResult evaluate_nll<T>(Model<T>&, const BatchStream&);                                   \
  template double evaluate_ppl<T>(Model<T>&, const BatchStream&);                                         \
  template TrainState train<T>(Model<T>&, const BatchStream&, const BatchStream&, const TrainConfig&,     \
                               TrainState, const TrainHooks&);
CHARLM_INSTANTIATE(float)
CHARLM_INSTANTIATE(double)
#undef CHARLM_INSTANTIATE

}  // namespace charlm
