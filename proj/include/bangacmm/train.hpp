#pragma once

// Adam with decoupled weight decay, linear warmup, early stopping on
// validation macro-F1, plus dataset preparation and evaluation.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "config.hpp"
#include "data.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace bangacmm {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t patience = 10;
  std::size_t batch_size = 16;
  double peak_lr = 2e-5;
  long warmup_steps = -1;  // negative: warmup_fraction of all optimizer steps
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double min_improvement = 1e-4;
  std::uint64_t seed = 0;

  void validate() const {
    std::vector<std::string> errors;
    if (epochs < 1) errors.push_back("train.epochs must be at least 1");
    if (batch_size < 1) errors.push_back("train.batch_size must be at least 1");
    if (!(peak_lr > 0)) errors.push_back("train.lr must be positive");
    if (!(weight_decay >= 0)) errors.push_back("train.weight_decay must be non-negative");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) errors.push_back("train.beta1/beta2 must be in [0, 1)");
    if (!(eps > 0)) errors.push_back("train.eps must be positive");
    if (!(warmup_fraction >= 0 && warmup_fraction <= 1)) errors.push_back("train.warmup_fraction must be in [0, 1]");
    if (!(min_improvement >= 0)) errors.push_back("train.min_improvement must be non-negative");
    if (!errors.empty()) {
      std::string msg = "training configuration errors:";
      for (const auto& e : errors) msg += "\n  " + e;
      throw ConfigError(msg);
    }
  }

  std::size_t resolved_warmup(std::size_t total_steps) const {
    if (warmup_steps >= 0) return static_cast<std::size_t>(warmup_steps);
    return static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
  }

  void read(ConfigReader& r) {
    r.size("train.epochs", epochs, 1);
    r.size("train.patience", patience);
    r.size("train.batch_size", batch_size, 1);
    r.real("train.lr", peak_lr);
    std::size_t w = 0;
    bool has_w = false;
    r.choice("train.warmup_steps", w, [&](const std::string& v) {
      std::size_t used = 0;
      long x = -1;
      try {
        x = std::stol(v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != v.size() || x < 0) throw ConfigError("expected a non-negative integer, got '" + v + "'");
      has_w = true;
      return static_cast<std::size_t>(x);
    });
    if (has_w) warmup_steps = static_cast<long>(w);
    r.real("train.warmup_fraction", warmup_fraction);
    r.real("train.weight_decay", weight_decay);
    r.real("train.beta1", beta1);
    r.real("train.beta2", beta2);
    r.real("train.eps", eps);
    r.real("train.min_improvement", min_improvement);
  }
};

// Linear 0 -> peak over the warmup steps, constant afterwards.
inline double lr_schedule(std::size_t step, const TrainConfig& cfg, std::size_t total_steps) {
  const std::size_t warmup = cfg.resolved_warmup(total_steps);
  if (warmup == 0 || step >= warmup) return cfg.peak_lr;
  return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
}

struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m, v;
};

// One bias-corrected Adam update. Weight decay is decoupled: parameters
// flagged for decay also shrink by lr * weight_decay * value.
inline void adam_step(std::vector<Parameter>& params, AdamState& state, double lr, const TrainConfig& cfg) {
  for (const auto& p : params) {
    if (!p.value.has_grad()) continue;
    const auto g = p.value.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericError("non-finite gradient in parameter '" + p.name + "' at element " + std::to_string(i) +
                           " (value " + std::to_string(g[i]) + ") at optimizer step " +
                           std::to_string(state.step + 1));
      }
    }
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t k = 0; k < params.size(); ++k) {
      state.m[k].assign(params[k].value.numel(), 0.0);
      state.v[k].assign(params[k].value.numel(), 0.0);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto w = p.value.data();
    const bool has = p.value.has_grad();
    const auto g = has ? p.value.grad() : std::span<double>{};
    auto& m = state.m[k];
    auto& v = state.v[k];
    const double decay = p.decay ? lr * cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
      w[i] -= decay * w[i] + lr * update;
    }
  }
}

// Early stopping over a validation-F1 sequence. An epoch improves when it
// beats the best so far by more than min_improvement, so ties keep the
// earliest epoch. Epochs are 1-based.
struct StopDecision {
  std::size_t best_epoch = 0;
  double best_f1 = 0;
  std::size_t stop_epoch = 0;  // last epoch run
  bool stopped_early = false;
};

class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double min_improvement) : patience_(patience), min_improvement_(min_improvement) {}

  // Returns true when this epoch is the new best.
  bool observe(double f1) {
    ++epoch_;
    bool improved = false;
    if (epoch_ == 1 || f1 > best_ + min_improvement_) {
      best_ = f1;
      best_epoch_ = epoch_;
      since_ = 0;
      improved = true;
    } else {
      ++since_;
    }
    return improved;
  }

  bool should_stop() const { return since_ >= patience_ && epoch_ > 0 && best_epoch_ < epoch_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }
  std::size_t epochs_since_improvement() const { return since_; }

 private:
  std::size_t patience_;
  double min_improvement_;
  std::size_t epoch_ = 0, best_epoch_ = 0, since_ = 0;
  double best_ = 0;
};

inline StopDecision early_stopping(const std::vector<double>& val_f1, std::size_t patience, std::size_t max_epochs,
                                   double min_improvement = 1e-4) {
  EarlyStopping es(patience, min_improvement);
  StopDecision d;
  for (std::size_t e = 0; e < std::min(val_f1.size(), max_epochs); ++e) {
    es.observe(val_f1[e]);
    d.stop_epoch = e + 1;
    if (es.should_stop()) {
      d.stopped_early = d.stop_epoch < max_epochs;
      break;
    }
  }
  d.best_epoch = es.best_epoch();
  d.best_f1 = es.best();
  return d;
}

// ---------------------------------------------------------------------------
// History file

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0, train_acc = 0, train_f1 = 0;
  double val_loss = 0, val_acc = 0, val_f1 = 0;
  double lr = 0;

  bool operator==(const EpochRecord&) const = default;
};

inline constexpr const char* kHistoryHeader = "epoch\ttrain_loss\ttrain_acc\ttrain_f1\tval_loss\tval_acc\tval_f1\tlr";

inline void write_history(std::ostream& os, const std::vector<EpochRecord>& h) {
  os << kHistoryHeader << '\n';
  for (const auto& r : h) {
    os << r.epoch << '\t' << format_real(r.train_loss) << '\t' << format_real(r.train_acc) << '\t'
       << format_real(r.train_f1) << '\t' << format_real(r.val_loss) << '\t' << format_real(r.val_acc) << '\t'
       << format_real(r.val_f1) << '\t' << format_real(r.lr) << '\n';
  }
}

inline void write_history(const std::string& path, const std::vector<EpochRecord>& h) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot write history file '" + path + "'");
  write_history(os, h);
}

inline std::vector<EpochRecord> read_history(std::istream& is, const std::string& source = "<history>") {
  std::string line;
  if (!std::getline(is, line) || line != kHistoryHeader) throw ParseError(source + ": missing history header");
  std::vector<EpochRecord> out;
  for (std::size_t lineno = 2; std::getline(is, line); ++lineno) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    EpochRecord r;
    if (!(ls >> r.epoch >> r.train_loss >> r.train_acc >> r.train_f1 >> r.val_loss >> r.val_acc >> r.val_f1 >> r.lr)) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": malformed history record");
    }
    out.push_back(r);
  }
  return out;
}

inline std::vector<EpochRecord> read_history(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot read history file '" + path + "'");
  return read_history(is, path);
}

// ---------------------------------------------------------------------------
// Datasets

struct Example {
  std::string id;
  int label = 0;
  std::vector<int> ids;  // CLS-prefixed
  Image raw;             // kept for per-epoch augmentation
  Tensor patches;        // preprocessed without augmentation
};

struct Dataset {
  std::vector<Example> examples;
  bool empty() const { return examples.empty(); }
  std::size_t size() const { return examples.size(); }
};

inline Vocabulary vocab_from(const std::vector<Sample>& train, std::size_t max_size) {
  std::vector<std::string> corpus;
  for (const auto& s : train) corpus.push_back(normalize_text(s.text));
  return build_vocab(corpus, max_size);
}

inline Tensor prepare_patches(const Image& img, const ModelConfig& cfg, bool train, std::mt19937_64& rng,
                              const std::string& id, PipelineTrace* trace) {
  return patchify(preprocess(img, cfg.preprocess, train, rng, id, trace), cfg.vision.patch_size);
}

// Tokenizes and preprocesses samples. Images are always read and normalized
// once without augmentation; training-time augmentation happens per epoch.
inline Dataset prepare_dataset(const Manifest& m, const std::vector<Sample>& samples, const ModelConfig& cfg,
                               const Vocabulary& vocab, PipelineTrace* trace = nullptr) {
  Dataset d;
  std::mt19937_64 unused(0);
  for (const auto& s : samples) {
    Example e;
    e.id = s.id;
    e.label = static_cast<int>(s.label);
    if (cfg.uses_text()) e.ids = tokenize(normalize_text(s.text), vocab, cfg.text.max_len).ids;
    if (cfg.uses_image()) {
      e.raw = read_ppm(m.image_file(s).string());
      e.patches = prepare_patches(e.raw, cfg, false, unused, s.id, trace);
    }
    d.examples.push_back(std::move(e));
  }
  return d;
}

inline ModelInput input_of(const Example& e) { return {e.ids, e.patches}; }

inline EvalReport evaluate(const MultimodalModel& model, const Dataset& data, const std::string& model_id = "") {
  if (data.empty()) throw ContractError("evaluate: empty dataset");
  std::vector<int> preds, truths;
  double loss = 0;
  for (const auto& e : data.examples) {
    Tape tape(false);
    Tensor z = model.logits(tape, input_of(e), false);
    const int y = e.label;
    loss += cross_entropy(tape, stack_rows(tape, {z}), std::span<const int>(&y, 1)).item();
    preds.push_back(static_cast<int>(std::max_element(z.data().begin(), z.data().end()) - z.data().begin()));
    truths.push_back(e.label);
  }
  EvalReport r = metrics(confusion(preds, truths));
  r.loss = loss / static_cast<double>(data.size());
  r.model_id = model_id;
  r.strategy = model.config().group();
  return r;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainResult {
  std::vector<EpochRecord> history;
  StopDecision stop;
  std::vector<NamedTensor> best_params;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  PipelineTrace* trace = nullptr;
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Trains in place and leaves the model holding the best-validation weights.
inline TrainResult train(MultimodalModel& model, const Dataset& train_set, const Dataset& val_set,
                         const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train_set.empty()) throw ContractError("train: empty training split");
  if (val_set.empty()) throw ContractError("train: empty validation split");
  const std::size_t n = train_set.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches * cfg.epochs;
  const bool augment = model.config().uses_image() && model.config().preprocess.augment.any();

  auto& params = model.params().params();
  AdamState adam;
  EarlyStopping stopper(cfg.patience, cfg.min_improvement);
  TrainResult result;
  std::mt19937_64 order_rng(mix_seed(cfg.seed, 1));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    std::mt19937_64 aug_rng(mix_seed(cfg.seed, 1000 + epoch));
    double loss_sum = 0, lr = 0;
    std::vector<int> preds, truths;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      model.params().zero_grad();
      Tape tape(true, mix_seed(cfg.seed, 1000000 + adam.step));
      std::vector<Tensor> rows;
      std::vector<int> labels;
      for (std::size_t k = lo; k < hi; ++k) {
        const Example& e = train_set.examples[order[k]];
        ModelInput in = input_of(e);
        if (augment) in.patches = prepare_patches(e.raw, model.config(), true, aug_rng, e.id, hooks.trace);
        Tensor z = model.logits(tape, in, true);
        preds.push_back(static_cast<int>(std::max_element(z.data().begin(), z.data().end()) - z.data().begin()));
        truths.push_back(e.label);
        rows.push_back(z);
        labels.push_back(e.label);
      }
      Tensor loss = cross_entropy(tape, stack_rows(tape, rows), labels);
      if (!std::isfinite(loss.item())) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b + 1));
      }
      loss_sum += loss.item() * static_cast<double>(hi - lo);
      backward(loss, tape);
      lr = lr_schedule(adam.step + 1, cfg, total_steps);
      adam_step(params, adam, lr, cfg);
    }
    const EvalReport tr = metrics(confusion(preds, truths));
    const EvalReport va = evaluate(model, val_set);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(n), tr.accuracy, tr.macro_f1,
                    va.loss, va.accuracy, va.macro_f1, lr};
    result.history.push_back(rec);
    if (stopper.observe(va.macro_f1)) result.best_params = model.params().entries();
    if (hooks.on_epoch) hooks.on_epoch(rec);
    result.stop.stop_epoch = epoch;
    if (stopper.should_stop()) {
      result.stop.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  result.stop.best_epoch = stopper.best_epoch();
  result.stop.best_f1 = stopper.best();
  model.params().load(result.best_params);
  return result;
}

}  // namespace bangacmm
